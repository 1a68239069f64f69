//! Fit a model and inspect its diagnostics: ROC discrimination of the
//! occurrence part and Pearson residuals for the count part.
//!
//! Run with: cargo run --release --example diagnose_fit

use spatial_hurdle::diagnostics::{pearson_residuals, prediction_surfaces, roc_curve};
use spatial_hurdle::gmrf::Hyperparams;
use spatial_hurdle::inference::{maximize_marginal, NelderMeadSettings};
use spatial_hurdle::simulate::{simulate_dataset, CovariateSpec, SimConfig};

fn main() -> spatial_hurdle::Result<()> {
    let config = SimConfig {
        n_rows: 7,
        n_cols: 7,
        beta0: vec![0.2, 1.2],
        beta_plus: vec![0.9, 0.5],
        theta: Hyperparams::new(0.8, 0.6, 1.0, 0.6)?,
        covariates: vec![(
            "z".to_string(),
            CovariateSpec::Uniform {
                low: -1.0,
                high: 1.0,
            },
        )],
        seed: 99,
    };
    let (data, _) = simulate_dataset(&config)?;
    let init = Hyperparams::new(1.0, 1.0, 1.0, 1.0)?;
    let fit = maximize_marginal(&data, &init, &NelderMeadSettings::default())?;
    println!("fit converged: {}", fit.convergence_report.converged);

    let surfaces = prediction_surfaces(&fit, &data)?;
    let roc = roc_curve(&surfaces.pi, data.counts())?;
    println!(
        "\noccurrence ROC over {} thresholds, AUC = {:.3}",
        roc.thresholds.len(),
        roc.auc
    );
    println!("  threshold    FPR    TPR");
    let step = (roc.thresholds.len() / 8).max(1);
    for i in (0..roc.thresholds.len()).step_by(step) {
        println!(
            "  {:>9.3} {:>6.3} {:>6.3}",
            roc.thresholds[i], roc.fpr[i], roc.tpr[i]
        );
    }

    let residuals = pearson_residuals(&fit, &data)?;
    println!(
        "\nPearson residuals: {} undefined of {}",
        residuals.undefined_count,
        data.n()
    );
    if let Some(mean) = residuals.mean_over_positive {
        println!("mean residual over cells with observed events: {mean:.4}");
    }
    let mut extremes: Vec<(usize, f64)> = residuals
        .values
        .iter()
        .enumerate()
        .filter_map(|(i, r)| r.map(|v| (i, v)))
        .collect();
    extremes.sort_by(|a, b| b.1.abs().partial_cmp(&a.1.abs()).unwrap());
    println!("largest residuals (cell: observed, expected, residual):");
    for (cell, r) in extremes.iter().take(5) {
        println!(
            "  {cell:>3}: y = {}, yhat = {:>6.3}, r = {r:>7.3}",
            data.counts()[*cell],
            surfaces.expected[*cell]
        );
    }
    Ok(())
}
