//! Explore the zero-truncated Poisson hurdle distribution: pmf values,
//! normalization, and expected counts over a range of linear predictors.
//!
//! Run with: cargo run --example hurdle_pmf

use spatial_hurdle::hurdle_model::{expected_count, hurdle_pmf, link_lambda, link_pi};

fn main() {
    let eta0 = 0.4; // occurrence predictor
    let eta_plus = 1.1; // count predictor

    let pi = link_pi(eta0);
    let lambda = link_lambda(eta_plus);
    println!("eta0 = {eta0} -> occurrence probability pi = {pi:.4}");
    println!("eta_plus = {eta_plus} -> intensity lambda = {lambda:.4}");

    println!("\npmf (y = 0..9):");
    let mut total = 0.0;
    for y in 0..10 {
        let p = hurdle_pmf(y, eta0, eta_plus);
        total += p;
        let bar = "#".repeat((p * 120.0).round() as usize);
        println!("  y={y}: {p:.6} {bar}");
    }
    // The tail beyond y=9 accounts for the rest; summing far enough hits 1.
    let full: f64 = (0..200).map(|y| hurdle_pmf(y, eta0, eta_plus)).sum();
    println!("partial sum through y=9: {total:.6}");
    println!("sum through y=199:       {full:.12} (should be 1)");

    println!("\nexpected count surface (rows eta0, columns eta_plus):");
    print!("        ");
    for ep in [-1.0f64, 0.0, 1.0, 2.0] {
        print!("{ep:>8.1}");
    }
    println!();
    for e0 in [-2.0f64, -1.0, 0.0, 1.0, 2.0] {
        print!("  {e0:>4.1} |");
        for ep in [-1.0f64, 0.0, 1.0, 2.0] {
            print!("{:>8.3}", expected_count(e0, ep));
        }
        println!();
    }
}
