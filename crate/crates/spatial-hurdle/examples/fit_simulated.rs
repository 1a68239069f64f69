//! Simulate a dataset with known ground truth, fit it, and compare.
//!
//! Run with: cargo run --release --example fit_simulated

use spatial_hurdle::gmrf::Hyperparams;
use spatial_hurdle::inference::{coefficient_table, maximize_marginal, NelderMeadSettings};
use spatial_hurdle::simulate::{simulate_dataset, CovariateSpec, SimConfig};

fn main() -> spatial_hurdle::Result<()> {
    let truth_beta0 = vec![0.5, 1.0];
    let truth_beta_plus = vec![0.8, 0.4];
    let truth_theta = Hyperparams::new(0.7, 0.5, 1.0, 0.5)?;
    let config = SimConfig {
        n_rows: 10,
        n_cols: 10,
        beta0: truth_beta0.clone(),
        beta_plus: truth_beta_plus.clone(),
        theta: truth_theta,
        covariates: vec![(
            "z".to_string(),
            CovariateSpec::Uniform {
                low: -1.0,
                high: 1.0,
            },
        )],
        seed: 2024,
    };
    let (data, _truth_fields) = simulate_dataset(&config)?;
    let positives = data.counts().iter().filter(|&&y| y > 0).count();
    println!(
        "simulated {} cells, {positives} with at least one event",
        data.n()
    );

    let init = Hyperparams::new(1.0, 1.0, 1.0, 1.0)?;
    let fit = maximize_marginal(&data, &init, &NelderMeadSettings::default())?;
    println!(
        "converged: {} after {} simplex iterations ({} evaluations)",
        fit.convergence_report.converged,
        fit.convergence_report.nm_iterations,
        fit.convergence_report.nm_evaluations
    );
    println!(
        "log marginal posterior at the maximum: {:.4}",
        fit.log_marginal_posterior
    );

    let t = fit.theta_hat;
    println!("\nhyperparameters (true -> estimated):");
    println!("  kappa0     {:>7.3} -> {:>8.4}", 0.7, t.kappa0());
    println!("  tau0       {:>7.3} -> {:>8.4}", 0.5, t.tau0());
    println!("  kappa_plus {:>7.3} -> {:>8.4}", 1.0, t.kappa_plus());
    println!("  tau_plus   {:>7.3} -> {:>8.4}", 0.5, t.tau_plus());

    println!("\ncoefficients (true value, estimate, 95% interval):");
    let truth = [
        truth_beta0[0],
        truth_beta0[1],
        truth_beta_plus[0],
        truth_beta_plus[1],
    ];
    for (row, true_value) in coefficient_table(&fit, 0.05)?.iter().zip(truth) {
        println!(
            "  {:<22} {:>6.2}  {:>8.4}  ({:>8.4}, {:>8.4}){}",
            row.name,
            true_value,
            row.estimate,
            row.lower,
            row.upper,
            if row.significant { "  *" } else { "" }
        );
    }
    Ok(())
}
