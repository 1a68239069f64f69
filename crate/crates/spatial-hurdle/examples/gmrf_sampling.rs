//! Sample latent fields from the CAR prior and check the advertised
//! conditional moments empirically.
//!
//! Run with: cargo run --release --example gmrf_sampling

use spatial_hurdle::gmrf::conditional_moments;
use spatial_hurdle::grid::GridSpec;
use spatial_hurdle::simulate::sample_gmrf;

fn main() -> spatial_hurdle::Result<()> {
    let grid = GridSpec::full(6, 6)?;
    let (kappa, tau) = (0.8, 1.5);

    // One draw, printed as a field.
    let field = sample_gmrf(kappa, tau, &grid, 7, 1)?;
    println!("one GMRF draw (kappa = {kappa}, tau = {tau}):");
    for r in 0..6 {
        let row: Vec<String> = (0..6)
            .map(|c| format!("{:>6.2}", field[r * 6 + c]))
            .collect();
        println!("  {}", row.join(" "));
    }

    // The conditional mean of an interior cell is the neighbour average
    // scaled by kappa^2 + degree; verify against a long-run average of
    // conditional residuals.
    let cell = 2 * 6 + 3; // interior, degree 4
    let (cond_mean, cond_var) = conditional_moments(cell, &field, kappa, tau, &grid)?;
    println!(
        "\ncell {cell}: conditional mean {cond_mean:.4}, conditional variance {cond_var:.4}"
    );

    // Monte Carlo: across many draws, the regression of u_i on its
    // conditional mean has slope 1, and the residual variance matches.
    let reps = 4000;
    let mut sum_sq_err = 0.0;
    for rep in 0..reps {
        let draw = sample_gmrf(kappa, tau, &grid, 1000 + rep, 1)?;
        let (m, _) = conditional_moments(cell, &draw, kappa, tau, &grid)?;
        let err = draw[cell] - m;
        sum_sq_err += err * err;
    }
    let empirical_var = sum_sq_err / reps as f64;
    println!(
        "empirical conditional variance over {reps} draws: {empirical_var:.4} \
         (theory {cond_var:.4})"
    );
    Ok(())
}
