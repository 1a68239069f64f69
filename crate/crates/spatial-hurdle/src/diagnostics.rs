//! In-sample model checking: ROC/AUC for the occurrence part, Pearson
//! residuals for the count part, and per-cell prediction surfaces.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::hurdle_model::{
    expected_count, linear_predictors, link_lambda, link_pi, Dataset, LatentState,
};
use crate::inference::FitResult;

/// ROC curve of the predicted occurrence probabilities against the observed
/// zero/positive split. Thresholds descend from 1 to 0; a cell counts as a
/// predicted positive when its probability strictly exceeds the threshold.
/// The final row is the all-positive corner at threshold 0, so the curve
/// always ends at (1,1); when an exact-zero probability occurs, threshold 0
/// appears twice (strict row, then corner).
#[derive(Debug, Clone)]
pub struct RocCurve {
    pub thresholds: Vec<f64>,
    pub fpr: Vec<f64>,
    pub tpr: Vec<f64>,
    pub auc: f64,
}

pub fn roc_curve(prob_positive: &[f64], counts: &[u64]) -> Result<RocCurve> {
    if prob_positive.len() != counts.len() {
        return Err(Error::Dimension {
            context: "roc probabilities",
            expected: counts.len(),
            got: prob_positive.len(),
        });
    }
    if prob_positive.is_empty() {
        return Err(Error::Invalid("roc needs at least one cell".into()));
    }
    for (i, p) in prob_positive.iter().enumerate() {
        if !(0.0..=1.0).contains(p) {
            return Err(Error::Invalid(format!(
                "probability {p} at cell {i} is outside [0, 1]"
            )));
        }
    }
    let n_pos = counts.iter().filter(|&&y| y > 0).count();
    let n_neg = counts.len() - n_pos;
    if n_pos == 0 {
        return Err(Error::DegenerateLabels(
            "every cell has a zero count; the occurrence split is one-sided".into(),
        ));
    }
    if n_neg == 0 {
        return Err(Error::DegenerateLabels(
            "every cell has a positive count; the occurrence split is one-sided".into(),
        ));
    }

    let mut thresholds: Vec<f64> = prob_positive.to_vec();
    thresholds.push(1.0);
    thresholds.sort_by(|a, b| b.partial_cmp(a).unwrap());
    thresholds.dedup();

    let mut fpr = Vec::with_capacity(thresholds.len() + 1);
    let mut tpr = Vec::with_capacity(thresholds.len() + 1);
    for &t in &thresholds {
        let mut tp = 0usize;
        let mut fp = 0usize;
        for (p, y) in prob_positive.iter().zip(counts) {
            if *p > t {
                if *y > 0 {
                    tp += 1;
                } else {
                    fp += 1;
                }
            }
        }
        tpr.push(tp as f64 / n_pos as f64);
        fpr.push(fp as f64 / n_neg as f64);
    }
    // The all-positive corner closes the curve at (1,1). When an exact-zero
    // probability exists this duplicates threshold 0 — the strict row above
    // it excludes the zero-probability group, and this row sweeps it in — so
    // that group gets its own diagonal segment like every other tied group.
    thresholds.push(0.0);
    fpr.push(1.0);
    tpr.push(1.0);

    let mut auc = 0.0;
    for i in 1..thresholds.len() {
        auc += (fpr[i] - fpr[i - 1]) * 0.5 * (tpr[i] + tpr[i - 1]);
    }

    Ok(RocCurve {
        thresholds,
        fpr,
        tpr,
        auc,
    })
}

/// One Pearson residual: (y − ŷ) / sqrt(ŷ·(1 − ŷ·e^{−λ})) with λ = exp(η₊)
/// and ŷ the expected hurdle count. The radicand is positive for all finite
/// predictors in exact arithmetic (it is the zero-truncated Poisson variance
/// when π = 1), but can round to ≤ 0 in the λ → 0, π → 1 corner; those cells
/// come back as `None` rather than NaN.
pub fn pearson_residual(y: u64, eta0: f64, eta_p: f64) -> Option<f64> {
    let yhat = expected_count(eta0, eta_p);
    let lambda = link_lambda(eta_p);
    let radicand = yhat * (1.0 - yhat * (-lambda).exp());
    if radicand <= 0.0 || !radicand.is_finite() {
        return None;
    }
    Some((y as f64 - yhat) / radicand.sqrt())
}

/// Residuals for every active cell, with the undefined count and the mean
/// residual over positive-count cells for the summary line.
#[derive(Debug, Clone)]
pub struct Residuals {
    /// Per-cell residual in grid order; `None` marks an undefined radicand.
    pub values: Vec<Option<f64>>,
    /// Expected counts ŷ in the same order.
    pub expected: Vec<f64>,
    pub undefined_count: usize,
    /// Mean residual over cells with y > 0 (None when no positives or all
    /// their residuals are undefined).
    pub mean_over_positive: Option<f64>,
}

pub fn pearson_residuals_state(x: &LatentState, data: &Dataset) -> Result<Residuals> {
    let (eta0, eta_p) = linear_predictors(x, data)?;
    let mut values = Vec::with_capacity(data.n());
    let mut expected = Vec::with_capacity(data.n());
    let mut undefined_count = 0usize;
    let mut pos_sum = 0.0;
    let mut pos_n = 0usize;
    for i in 0..data.n() {
        let y = data.counts()[i];
        expected.push(expected_count(eta0[i], eta_p[i]));
        let r = pearson_residual(y, eta0[i], eta_p[i]);
        match r {
            Some(v) if y > 0 => {
                pos_sum += v;
                pos_n += 1;
            }
            None => undefined_count += 1,
            _ => {}
        }
        values.push(r);
    }
    Ok(Residuals {
        values,
        expected,
        undefined_count,
        mean_over_positive: (pos_n > 0).then(|| pos_sum / pos_n as f64),
    })
}

pub fn pearson_residuals(fit: &FitResult, data: &Dataset) -> Result<Residuals> {
    pearson_residuals_state(&fit.x_hat, data)
}

/// Per-cell prediction surfaces: occurrence probability π, Poisson rate λ,
/// and the expected hurdle count.
#[derive(Debug, Clone)]
pub struct Surfaces {
    pub pi: Vec<f64>,
    pub lambda: Vec<f64>,
    pub expected: Vec<f64>,
}

pub fn prediction_surfaces_state(x: &LatentState, data: &Dataset) -> Result<Surfaces> {
    let (eta0, eta_p) = linear_predictors(x, data)?;
    let n = data.n();
    let mut pi = Vec::with_capacity(n);
    let mut lambda = Vec::with_capacity(n);
    let mut expected = Vec::with_capacity(n);
    for i in 0..n {
        pi.push(link_pi(eta0[i]));
        lambda.push(link_lambda(eta_p[i]));
        expected.push(expected_count(eta0[i], eta_p[i]));
    }
    Ok(Surfaces {
        pi,
        lambda,
        expected,
    })
}

pub fn prediction_surfaces(fit: &FitResult, data: &Dataset) -> Result<Surfaces> {
    prediction_surfaces_state(&fit.x_hat, data)
}

fn fmt_full(v: f64) -> String {
    format!("{v:.16e}")
}

/// roc.csv: threshold, fpr, tpr (descending thresholds).
pub fn write_roc_csv(roc: &RocCurve, path: &Path) -> Result<()> {
    let mut s = String::from("threshold,fpr,tpr\n");
    for i in 0..roc.thresholds.len() {
        let _ = writeln!(
            s,
            "{},{},{}",
            fmt_full(roc.thresholds[i]),
            fmt_full(roc.fpr[i]),
            fmt_full(roc.tpr[i])
        );
    }
    std::fs::write(path, s)?;
    Ok(())
}

/// residuals.csv: row, col, y, yhat, pearson — "NA" where the residual is
/// undefined.
pub fn write_residuals_csv(residuals: &Residuals, data: &Dataset, path: &Path) -> Result<()> {
    let mut s = String::from("row,col,y,yhat,pearson\n");
    for i in 0..data.n() {
        let (r, c) = data.grid().coords(i);
        let pearson = match residuals.values[i] {
            Some(v) => fmt_full(v),
            None => "NA".to_string(),
        };
        let _ = writeln!(
            s,
            "{r},{c},{},{},{pearson}",
            data.counts()[i],
            fmt_full(residuals.expected[i])
        );
    }
    std::fs::write(path, s)?;
    Ok(())
}

/// surfaces.csv: row, col, pi, lambda, expected.
pub fn write_surfaces_csv(surfaces: &Surfaces, data: &Dataset, path: &Path) -> Result<()> {
    let mut s = String::from("row,col,pi,lambda,expected\n");
    for i in 0..data.n() {
        let (r, c) = data.grid().coords(i);
        let _ = writeln!(
            s,
            "{r},{c},{},{},{}",
            fmt_full(surfaces.pi[i]),
            fmt_full(surfaces.lambda[i]),
            fmt_full(surfaces.expected[i])
        );
    }
    std::fs::write(path, s)?;
    Ok(())
}
