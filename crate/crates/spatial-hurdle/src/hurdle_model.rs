//! The spatial Poisson hurdle likelihood and its derivatives.
//!
//! Each active cell i contributes a two-part term: a Bernoulli "hurdle" on
//! whether any count occurs, with success probability π(η₀ᵢ) on the logistic
//! scale, and a zero-truncated Poisson for the positive counts, with rate
//! λ(η₊ᵢ) on the log scale:
//!
//! ```text
//! Pr(Yᵢ = 0)      = 1 − π(η₀ᵢ)
//! Pr(Yᵢ = y ≥ 1)  = π(η₀ᵢ) · e^{−λᵢ} λᵢ^y / (y! (1 − e^{−λᵢ}))
//! ```
//!
//! with η₀ᵢ = zᵢᵀβ₀ + U₀ᵢ and η₊ᵢ = zᵢᵀβ₊ + U₊ᵢ. The log-likelihood, its
//! gradient, and its Hessian in the stacked vector x = (β₀, β₊, U₀, U₊) are
//! evaluated here in closed form. The zero part and the count part share no
//! parameters, so all cross second-derivatives between them vanish and the
//! U-U curvature blocks are diagonal — the sparsity the Newton solver leans
//! on.
//!
//! Everything is written against the stable primitives at the bottom of the
//! file: logistic terms via softplus, `log(1 − e^{−λ})` via `expm1`/`log1p`
//! branches, and series fallbacks for the zero-truncated moments at tiny
//! rates, so no intermediate quantity overflows or loses precision for
//! |η| up to about 700.

use crate::error::{Error, Result};
use crate::grid::GridSpec;

/// Dense row-major design matrix with a leading intercept column.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    n_rows: usize,
    n_cols: usize,
    data: Vec<f64>,
}

impl DesignMatrix {
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let n_rows = rows.len();
        let n_cols = rows.first().map(|r| r.len()).unwrap_or(0);
        if n_cols == 0 {
            return Err(Error::Invalid("design matrix needs at least one column".into()));
        }
        let mut data = Vec::with_capacity(n_rows * n_cols);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != n_cols {
                return Err(Error::Dimension {
                    context: "design matrix row",
                    expected: n_cols,
                    got: row.len(),
                });
            }
            for &v in row {
                if !v.is_finite() {
                    return Err(Error::Invalid(format!(
                        "non-finite design entry in row {i}"
                    )));
                }
                data.push(v);
            }
        }
        Ok(Self {
            n_rows,
            n_cols,
            data,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n_cols..(i + 1) * self.n_cols]
    }
}

/// Per-cell counts and covariates on a grid. The design matrix includes the
/// intercept column, so its width is k+1 for k named covariates.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    grid: GridSpec,
    counts: Vec<u64>,
    design: DesignMatrix,
    covariate_names: Vec<String>,
    /// Cached ln(yᵢ!) so the likelihood's factorial sum is O(n) per call.
    ln_factorials: Vec<f64>,
}

impl Dataset {
    pub fn new(
        grid: GridSpec,
        counts: Vec<u64>,
        design: DesignMatrix,
        covariate_names: Vec<String>,
    ) -> Result<Self> {
        let n = grid.n_cells();
        if counts.len() != n {
            return Err(Error::Dimension {
                context: "dataset counts",
                expected: n,
                got: counts.len(),
            });
        }
        if design.n_rows() != n {
            return Err(Error::Dimension {
                context: "dataset design rows",
                expected: n,
                got: design.n_rows(),
            });
        }
        if covariate_names.len() + 1 != design.n_cols() {
            return Err(Error::Dimension {
                context: "covariate names",
                expected: design.n_cols() - 1,
                got: covariate_names.len(),
            });
        }
        let ln_factorials = counts.iter().map(|&y| ln_factorial(y)).collect();
        Ok(Self {
            grid,
            counts,
            design,
            covariate_names,
            ln_factorials,
        })
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn design(&self) -> &DesignMatrix {
        &self.design
    }

    pub fn covariate_names(&self) -> &[String] {
        &self.covariate_names
    }

    /// Number of active cells.
    pub fn n(&self) -> usize {
        self.grid.n_cells()
    }

    /// Number of covariates excluding the intercept.
    pub fn k(&self) -> usize {
        self.design.n_cols() - 1
    }

    /// Layout of the stacked latent vector for this dataset.
    pub fn layout(&self) -> StateLayout {
        StateLayout {
            n: self.n(),
            k: self.k(),
        }
    }
}

/// Index layout of the stacked vector x = (β₀, β₊, U₀, U₊); p = 2(n+k+1).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StateLayout {
    pub n: usize,
    pub k: usize,
}

impl StateLayout {
    pub fn dim(&self) -> usize {
        2 * (self.n + self.k + 1)
    }

    pub fn beta0(&self) -> std::ops::Range<usize> {
        0..self.k + 1
    }

    pub fn beta_plus(&self) -> std::ops::Range<usize> {
        self.k + 1..2 * (self.k + 1)
    }

    pub fn u0(&self) -> std::ops::Range<usize> {
        2 * (self.k + 1)..2 * (self.k + 1) + self.n
    }

    pub fn u_plus(&self) -> std::ops::Range<usize> {
        2 * (self.k + 1) + self.n..self.dim()
    }
}

/// The latent vector split into its four blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentState {
    pub beta0: Vec<f64>,
    pub beta_plus: Vec<f64>,
    pub u0: Vec<f64>,
    pub u_plus: Vec<f64>,
}

impl LatentState {
    pub fn zeros(n: usize, k: usize) -> Self {
        Self {
            beta0: vec![0.0; k + 1],
            beta_plus: vec![0.0; k + 1],
            u0: vec![0.0; n],
            u_plus: vec![0.0; n],
        }
    }

    pub fn from_stacked(x: &[f64], layout: StateLayout) -> Result<Self> {
        if x.len() != layout.dim() {
            return Err(Error::Dimension {
                context: "stacked latent vector",
                expected: layout.dim(),
                got: x.len(),
            });
        }
        Ok(Self {
            beta0: x[layout.beta0()].to_vec(),
            beta_plus: x[layout.beta_plus()].to_vec(),
            u0: x[layout.u0()].to_vec(),
            u_plus: x[layout.u_plus()].to_vec(),
        })
    }

    pub fn to_stacked(&self) -> Vec<f64> {
        let mut x = Vec::with_capacity(self.dim());
        x.extend_from_slice(&self.beta0);
        x.extend_from_slice(&self.beta_plus);
        x.extend_from_slice(&self.u0);
        x.extend_from_slice(&self.u_plus);
        x
    }

    pub fn dim(&self) -> usize {
        self.beta0.len() + self.beta_plus.len() + self.u0.len() + self.u_plus.len()
    }

    pub fn layout(&self) -> StateLayout {
        StateLayout {
            n: self.u0.len(),
            k: self.beta0.len() - 1,
        }
    }
}

/// Logistic link for the hurdle part: π(η) = 1/(1+e^{-η}).
pub fn link_pi(eta: f64) -> f64 {
    sigmoid(eta)
}

/// Log link for the count part: λ(η) = e^η.
pub fn link_lambda(eta: f64) -> f64 {
    eta.exp()
}

/// Hurdle probability mass function at count `y` for linear predictors
/// (η₀, η₊). Evaluated in log space so extreme predictors degrade gracefully.
pub fn hurdle_pmf(y: u64, eta0: f64, eta_p: f64) -> f64 {
    if y == 0 {
        // 1 − π(η₀) = π(−η₀)
        sigmoid(-eta0)
    } else {
        let lambda = link_lambda(eta_p);
        let log_pmf = -softplus(-eta0) - lambda + y as f64 * eta_p
            - ln_factorial(y)
            - log1m_exp_neg(lambda);
        log_pmf.exp()
    }
}

/// Linear predictors (η₀ᵢ, η₊ᵢ) for every cell.
pub fn linear_predictors(x: &LatentState, data: &Dataset) -> Result<(Vec<f64>, Vec<f64>)> {
    let stacked = x.to_stacked();
    check_dim(&stacked, data)?;
    Ok(predictors_from_stacked(&stacked, data))
}

fn predictors_from_stacked(x: &[f64], data: &Dataset) -> (Vec<f64>, Vec<f64>) {
    let layout = data.layout();
    let beta0 = &x[layout.beta0()];
    let beta_p = &x[layout.beta_plus()];
    let u0 = &x[layout.u0()];
    let u_p = &x[layout.u_plus()];
    let mut eta0 = Vec::with_capacity(data.n());
    let mut eta_p = Vec::with_capacity(data.n());
    for i in 0..data.n() {
        let z = data.design().row(i);
        let mut a = u0[i];
        let mut b = u_p[i];
        for (j, &zj) in z.iter().enumerate() {
            a += zj * beta0[j];
            b += zj * beta_p[j];
        }
        eta0.push(a);
        eta_p.push(b);
    }
    (eta0, eta_p)
}

fn check_dim(x: &[f64], data: &Dataset) -> Result<()> {
    let expected = data.layout().dim();
    if x.len() != expected {
        return Err(Error::Dimension {
            context: "latent state",
            expected,
            got: x.len(),
        });
    }
    Ok(())
}

/// Log-likelihood ℓ(x) of the full dataset.
///
/// Written as the sum over cells of the zero-part term
/// log(1−π) or log π and, for positive counts, the zero-truncated Poisson
/// term −λ + yη₊ − ln y! − log(1−e^{−λ}).
pub fn log_likelihood(x: &LatentState, data: &Dataset) -> Result<f64> {
    log_likelihood_stacked(&x.to_stacked(), data)
}

/// [`log_likelihood`] on the stacked vector; used by the inference loop.
pub fn log_likelihood_stacked(x: &[f64], data: &Dataset) -> Result<f64> {
    check_dim(x, data)?;
    let (eta0, eta_p) = predictors_from_stacked(x, data);
    let mut acc = 0.0;
    for i in 0..data.n() {
        let y = data.counts()[i];
        if y == 0 {
            // log(1 − π(η₀)) = −softplus(η₀)
            acc -= softplus(eta0[i]);
        } else {
            let lambda = link_lambda(eta_p[i]);
            acc += -softplus(-eta0[i]) // log π(η₀)
                - lambda
                + y as f64 * eta_p[i]
                - data.ln_factorials[i]
                - log1m_exp_neg(lambda);
        }
    }
    Ok(acc)
}

/// Gradient ∇ℓ(x), stacked as (β₀, β₊, U₀, U₊).
///
/// The zero-part score per cell is 1{y>0} − π(η₀); the count-part score is
/// 1{y>0}(y − m(λ)) with m the zero-truncated Poisson mean. β entries
/// accumulate the per-cell scores against the design row.
pub fn log_likelihood_grad(x: &LatentState, data: &Dataset) -> Result<Vec<f64>> {
    grad_stacked(&x.to_stacked(), data)
}

/// [`log_likelihood_grad`] on the stacked vector.
pub fn grad_stacked(x: &[f64], data: &Dataset) -> Result<Vec<f64>> {
    check_dim(x, data)?;
    let layout = data.layout();
    let (eta0, eta_p) = predictors_from_stacked(x, data);
    let mut grad = vec![0.0; layout.dim()];
    let (b0, bp, u0, up) = (
        layout.beta0(),
        layout.beta_plus(),
        layout.u0(),
        layout.u_plus(),
    );
    for i in 0..data.n() {
        let y = data.counts()[i];
        let positive = y > 0;
        let score0 = if positive { 1.0 } else { 0.0 } - sigmoid(eta0[i]);
        let score_p = if positive {
            y as f64 - ztp_mean(link_lambda(eta_p[i]))
        } else {
            0.0
        };
        let z = data.design().row(i);
        for (j, &zj) in z.iter().enumerate() {
            grad[b0.start + j] += zj * score0;
            grad[bp.start + j] += zj * score_p;
        }
        grad[u0.start + i] = score0;
        grad[up.start + i] = score_p;
    }
    Ok(grad)
}

/// Hessian ∇∇ᵀℓ(x) as a sparse symmetric matrix.
///
/// Nonzero blocks: β₀β₀ and its U₀ cross terms weighted by −π(1−π); β₊β₊ and
/// its U₊ cross terms weighted by the (nonpositive) zero-truncated curvature;
/// diagonal U₀U₀ and U₊U₊. All blocks mixing the zero part with the count
/// part are identically zero, as are off-diagonal U-U entries.
pub fn log_likelihood_hess(
    x: &LatentState,
    data: &Dataset,
) -> Result<crate::sparse::SparseSymmetric> {
    let stacked = x.to_stacked();
    let trips = neg_hessian_triplets(&stacked, data)?;
    let flipped: Vec<(usize, usize, f64)> =
        trips.into_iter().map(|(i, j, v)| (i, j, -v)).collect();
    crate::sparse::SparseSymmetric::from_triplets(data.layout().dim(), &flipped)
}

/// Upper-triangle triplets of the *negated* Hessian −∇∇ᵀℓ(x), which is
/// positive semidefinite; the Newton solver adds these to the prior precision.
pub fn neg_hessian_triplets(x: &[f64], data: &Dataset) -> Result<Vec<(usize, usize, f64)>> {
    check_dim(x, data)?;
    let layout = data.layout();
    let (eta0, eta_p) = predictors_from_stacked(x, data);
    let width = data.design().n_cols();
    let (b0, bp, u0, up) = (
        layout.beta0(),
        layout.beta_plus(),
        layout.u0(),
        layout.u_plus(),
    );

    // Dense (k+1)x(k+1) accumulators for the two β blocks.
    let mut h00 = vec![0.0; width * width];
    let mut hpp = vec![0.0; width * width];
    let mut trips = Vec::with_capacity(width * width + 2 * data.n() * (width + 1));
    for i in 0..data.n() {
        let y = data.counts()[i];
        // Zero-part weight π(1−π): the score 1{y>0} − π has the same
        // curvature whichever branch the observation took.
        let w0 = sigmoid(eta0[i]) * sigmoid(-eta0[i]);
        // Count-part weight: −∂²/∂η₊² of the truncated-Poisson term, zero for
        // cells with no positive count.
        let wp = if y > 0 {
            -ztp_curvature(link_lambda(eta_p[i]))
        } else {
            0.0
        };
        let z = data.design().row(i);
        for a in 0..width {
            for b in a..width {
                h00[a * width + b] += z[a] * z[b] * w0;
                hpp[a * width + b] += z[a] * z[b] * wp;
            }
            if w0 != 0.0 {
                trips.push((b0.start + a, u0.start + i, z[a] * w0));
            }
            if wp != 0.0 {
                trips.push((bp.start + a, up.start + i, z[a] * wp));
            }
        }
        trips.push((u0.start + i, u0.start + i, w0));
        trips.push((up.start + i, up.start + i, wp));
    }
    for a in 0..width {
        for b in a..width {
            trips.push((b0.start + a, b0.start + b, h00[a * width + b]));
            trips.push((bp.start + a, bp.start + b, hpp[a * width + b]));
        }
    }
    Ok(trips)
}

/// Expected count of the hurdle distribution:
/// ŷ = π(η₀) · λ/(1 − e^{−λ}) with λ = λ(η₊).
pub fn expected_count(eta0: f64, eta_p: f64) -> f64 {
    let pi = link_pi(eta0);
    if pi == 0.0 {
        return 0.0;
    }
    pi * ztp_mean(link_lambda(eta_p))
}

/// Multiplicative effect on the odds (hurdle part) or the rate (count part)
/// of a `delta`-unit change in a covariate with coefficient `coef`:
/// exp(coef · delta).
///
/// Covariates are used in their natural units; when relative humidity enters
/// as a fraction, a one-percentage-point change is `delta = 0.01`.
pub fn effect_multiplier(coef: f64, delta: f64) -> f64 {
    (coef * delta).exp()
}

/// Fractional decrease implied by [`effect_multiplier`]: 1 − exp(coef·delta).
/// Positive values are decreases (e.g. 0.55 → a 55% drop in the odds or
/// rate); negative values are increases.
pub fn effect_decrease_fraction(coef: f64, delta: f64) -> f64 {
    -(coef * delta).exp_m1()
}

// ---------------------------------------------------------------------------
// Stable numeric primitives.

/// Logistic function without overflow on either tail.
pub(crate) fn sigmoid(eta: f64) -> f64 {
    if eta >= 0.0 {
        1.0 / (1.0 + (-eta).exp())
    } else {
        let e = eta.exp();
        e / (1.0 + e)
    }
}

/// softplus(η) = log(1 + e^η), linear for large η instead of overflowing.
pub(crate) fn softplus(eta: f64) -> f64 {
    if eta > 30.0 {
        // e^{-η} < 1e-13: log1p term is below f64 resolution of η itself.
        eta + (-eta).exp()
    } else {
        eta.exp().ln_1p()
    }
}

/// log(1 − e^{−λ}) for λ > 0, branching at log 2 between the `log1p(−e^{−λ})`
/// and `log(−expm1(−λ))` forms so neither argument loses precision.
pub(crate) fn log1m_exp_neg(lambda: f64) -> f64 {
    if lambda > std::f64::consts::LN_2 {
        (-(-lambda).exp()).ln_1p()
    } else {
        (-(-lambda).exp_m1()).ln()
    }
}

/// Mean of the zero-truncated Poisson: m(λ) = λ/(1 − e^{−λ}) → 1 as λ → 0.
pub(crate) fn ztp_mean(lambda: f64) -> f64 {
    if lambda == 0.0 {
        return 1.0;
    }
    lambda / -(-lambda).exp_m1()
}

/// Second derivative of the truncated-Poisson log-likelihood term with
/// respect to η₊ (per positive-count cell): −λ e^λ (e^λ − 1 − λ)/(e^λ − 1)².
/// Always in [−λ, 0]. Series for tiny λ avoids the (e^λ−1−λ) cancellation;
/// an asymptotic form for large λ avoids overflowing e^λ.
pub(crate) fn ztp_curvature(lambda: f64) -> f64 {
    if lambda < 1e-4 {
        // −λ(1/2 + λ/6 + O(λ³))
        -lambda * (0.5 + lambda / 6.0)
    } else if lambda > 30.0 {
        // e^{-λ} < 1e-13: f = 1 + (1−λ)e^{−λ} + O(e^{−2λ})
        -lambda * (1.0 + (1.0 - lambda) * (-lambda).exp())
    } else {
        let em = lambda.exp_m1();
        -(lambda * (em + 1.0) * (em - lambda)) / (em * em)
    }
}

/// ln(y!) by direct summation — exact log-gamma at integer arguments, and
/// counts here are small enough that the O(y) cost never matters.
pub fn ln_factorial(y: u64) -> f64 {
    (2..=y).map(|j| (j as f64).ln()).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::GridSpec;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn toy_dataset(counts: Vec<u64>, k: usize, rng: &mut StdRng) -> Dataset {
        let n = counts.len();
        // Lay the cells out on a 1 x n strip.
        let grid = GridSpec::full(1, n).unwrap();
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| {
                let mut row = vec![1.0];
                for _ in 0..k {
                    row.push(rng.gen_range(-1.5..1.5));
                }
                row
            })
            .collect();
        let design = DesignMatrix::from_rows(rows).unwrap();
        let names = (0..k).map(|j| format!("z{j}")).collect();
        Dataset::new(grid, counts, design, names).unwrap()
    }

    fn random_state(layout: StateLayout, rng: &mut StdRng) -> LatentState {
        let x: Vec<f64> = (0..layout.dim()).map(|_| rng.gen_range(-2.0..2.0)).collect();
        LatentState::from_stacked(&x, layout).unwrap()
    }

    #[test]
    fn links_at_zero() {
        assert_eq!(link_pi(0.0), 0.5);
        assert_eq!(link_lambda(0.0), 1.0);
    }

    #[test]
    fn links_stable_at_extremes() {
        let p = link_pi(-40.0);
        assert!(p > 0.0 && p < 1e-17 && p.is_finite());
        assert!(link_pi(700.0).is_finite());
        assert!(link_pi(-700.0) >= 0.0);
        assert!(softplus(700.0).is_finite());
        assert!(hurdle_pmf(0, 700.0, 0.0) >= 0.0);
        assert!(hurdle_pmf(3, -700.0, 2.0).is_finite());
        // π strictly increasing on a coarse grid.
        let mut last = link_pi(-20.0);
        for i in 1..=40 {
            let p = link_pi(-20.0 + i as f64);
            assert!(p > last);
            last = p;
        }
    }

    #[test]
    fn pmf_matches_closed_forms() {
        assert_eq!(hurdle_pmf(0, 0.0, 5.0), 0.5);
        // π ≈ 1, λ = 1, y = 1: e⁻¹/(1−e⁻¹)
        let p = hurdle_pmf(1, 60.0, 0.0);
        assert!((p - 0.5819767068693265).abs() < 1e-14, "{p}");
    }

    #[test]
    fn pmf_normalizes_over_eta_grid() {
        for i in 0..13 {
            for j in 0..13 {
                let eta0 = -3.0 + 6.0 * i as f64 / 12.0;
                let eta_p = -3.0 + 6.0 * j as f64 / 12.0;
                let total: f64 = (0..=200).map(|y| hurdle_pmf(y, eta0, eta_p)).sum();
                assert!(
                    (total - 1.0).abs() <= 1e-10,
                    "pmf sum {total} at ({eta0}, {eta_p})"
                );
            }
        }
    }

    #[test]
    fn log_likelihood_trivial_cases() {
        let mut rng = StdRng::seed_from_u64(1);
        let data = toy_dataset(vec![0], 0, &mut rng);
        let x = LatentState::zeros(1, 0);
        let ll = log_likelihood(&x, &data).unwrap();
        assert!((ll - 0.5f64.ln()).abs() < 1e-15);

        // y = 2, intercept-only, β₊ = 0, U = 0, β₀ huge: the zero part
        // contributes ~0 and the count part is the ZTP(1) mass at 2.
        let data = toy_dataset(vec![2], 0, &mut rng);
        let mut x = LatentState::zeros(1, 0);
        x.beta0[0] = 500.0;
        let ll = log_likelihood(&x, &data).unwrap();
        assert!((ll - (-1.2344720351728633)).abs() < 1e-12, "{ll}");
    }

    #[test]
    fn log_likelihood_equals_pmf_sum() {
        let mut rng = StdRng::seed_from_u64(2);
        for _ in 0..30 {
            let n = rng.gen_range(1..7);
            let k = rng.gen_range(0..3);
            let counts: Vec<u64> = (0..n).map(|_| rng.gen_range(0..6)).collect();
            let data = toy_dataset(counts.clone(), k, &mut rng);
            let x = random_state(data.layout(), &mut rng);
            let (eta0, eta_p) = linear_predictors(&x, &data).unwrap();
            let want: f64 = (0..n)
                .map(|i| hurdle_pmf(counts[i], eta0[i], eta_p[i]).ln())
                .sum();
            let got = log_likelihood(&x, &data).unwrap();
            assert!((got - want).abs() < 1e-12 * (1.0 + want.abs()), "{got} vs {want}");
        }
    }

    #[test]
    fn log_likelihood_invariant_under_cell_permutation() {
        let mut rng = StdRng::seed_from_u64(3);
        let n = 6;
        let counts: Vec<u64> = (0..n).map(|_| rng.gen_range(0..5)).collect();
        let data = toy_dataset(counts.clone(), 1, &mut rng);
        let x = random_state(data.layout(), &mut rng);

        // Reverse the cell order together with all per-cell quantities.
        let rev_counts: Vec<u64> = counts.iter().rev().copied().collect();
        let rev_rows: Vec<Vec<f64>> = (0..n)
            .rev()
            .map(|i| data.design().row(i).to_vec())
            .collect();
        let rev_data = Dataset::new(
            GridSpec::full(1, n).unwrap(),
            rev_counts,
            DesignMatrix::from_rows(rev_rows).unwrap(),
            data.covariate_names().to_vec(),
        )
        .unwrap();
        let rev_x = LatentState {
            beta0: x.beta0.clone(),
            beta_plus: x.beta_plus.clone(),
            u0: x.u0.iter().rev().copied().collect(),
            u_plus: x.u_plus.iter().rev().copied().collect(),
        };
        let a = log_likelihood(&x, &data).unwrap();
        let b = log_likelihood(&rev_x, &rev_data).unwrap();
        assert!((a - b).abs() < 1e-12 * (1.0 + a.abs()));
    }

    fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / 1f64.max(a.abs()).max(b.abs())
    }

    #[test]
    fn gradient_matches_central_differences() {
        let mut rng = StdRng::seed_from_u64(4);
        let h = 1e-6;
        for _ in 0..40 {
            let n = rng.gen_range(1..7);
            let k = rng.gen_range(0..3);
            let counts: Vec<u64> = (0..n).map(|_| rng.gen_range(0..8)).collect();
            let data = toy_dataset(counts, k, &mut rng);
            let x = random_state(data.layout(), &mut rng).to_stacked();
            let grad = grad_stacked(&x, &data).unwrap();
            for j in 0..x.len() {
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[j] += h;
                xm[j] -= h;
                let fd = (log_likelihood_stacked(&xp, &data).unwrap()
                    - log_likelihood_stacked(&xm, &data).unwrap())
                    / (2.0 * h);
                assert!(
                    rel_err(grad[j], fd) < 1e-5,
                    "coordinate {j}: analytic {} vs fd {fd}",
                    grad[j]
                );
            }
        }
    }

    #[test]
    fn gradient_count_block_vanishes_for_all_zero_counts() {
        let mut rng = StdRng::seed_from_u64(5);
        let data = toy_dataset(vec![0; 5], 2, &mut rng);
        let x = random_state(data.layout(), &mut rng);
        let grad = log_likelihood_grad(&x, &data).unwrap();
        let layout = data.layout();
        for j in layout.beta_plus() {
            assert_eq!(grad[j], 0.0);
        }
        for j in layout.u_plus() {
            assert_eq!(grad[j], 0.0);
        }
    }

    #[test]
    fn gradient_balance_at_symmetric_data() {
        // Intercept-only, half zeros and half positives, η₀ = 0: the
        // zero-part intercept score is (1/2)·(+1/2 ... −1/2) summing to 0.
        let mut rng = StdRng::seed_from_u64(6);
        let data = toy_dataset(vec![0, 1, 0, 1], 0, &mut rng);
        let x = LatentState::zeros(4, 0);
        let grad = log_likelihood_grad(&x, &data).unwrap();
        assert!(grad[0].abs() < 1e-15);
    }

    #[test]
    fn hessian_matches_finite_differences_of_gradient() {
        let mut rng = StdRng::seed_from_u64(7);
        let h = 1e-5;
        for _ in 0..25 {
            let n = rng.gen_range(1..6);
            let k = rng.gen_range(0..3);
            let counts: Vec<u64> = (0..n).map(|_| rng.gen_range(0..6)).collect();
            let data = toy_dataset(counts, k, &mut rng);
            let layout = data.layout();
            let x = random_state(layout, &mut rng).to_stacked();
            let hess = log_likelihood_hess(
                &LatentState::from_stacked(&x, layout).unwrap(),
                &data,
            )
            .unwrap()
            .to_dense();
            for j in 0..x.len() {
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[j] += h;
                xm[j] -= h;
                let gp = grad_stacked(&xp, &data).unwrap();
                let gm = grad_stacked(&xm, &data).unwrap();
                for i in 0..x.len() {
                    let fd = (gp[i] - gm[i]) / (2.0 * h);
                    assert!(
                        rel_err(hess[i][j], fd) < 1e-4,
                        "entry ({i},{j}): analytic {} vs fd {fd}",
                        hess[i][j]
                    );
                }
            }
        }
    }

    #[test]
    fn hessian_beta0_entry_at_origin() {
        let mut rng = StdRng::seed_from_u64(8);
        let data = toy_dataset(vec![1], 0, &mut rng);
        let x = LatentState::zeros(1, 0);
        let hess = log_likelihood_hess(&x, &data).unwrap().to_dense();
        // −1/(η′₀ + 1/η′₀ + 2) at η₀ = 0 is −1/4.
        assert!((hess[0][0] - (-0.25)).abs() < 1e-15);
    }

    #[test]
    fn hessian_cross_blocks_are_zero_and_u_blocks_diagonal() {
        let mut rng = StdRng::seed_from_u64(9);
        let n = 5;
        let counts: Vec<u64> = (0..n).map(|_| rng.gen_range(0..4)).collect();
        let data = toy_dataset(counts, 2, &mut rng);
        let layout = data.layout();
        let x = random_state(layout, &mut rng);
        let hess = log_likelihood_hess(&x, &data).unwrap().to_dense();
        for a in layout.beta0() {
            for b in layout.beta_plus().chain(layout.u_plus()) {
                assert_eq!(hess[a][b], 0.0, "zero-part vs count-part ({a},{b})");
            }
        }
        for a in layout.beta_plus() {
            for b in layout.u0() {
                assert_eq!(hess[a][b], 0.0);
            }
        }
        for a in layout.u0() {
            for b in layout.u0().chain(layout.u_plus()) {
                if a != b {
                    assert_eq!(hess[a][b], 0.0, "U-U off-diagonal ({a},{b})");
                }
            }
        }
    }

    #[test]
    fn expected_count_matches_series_and_limits() {
        // π ≈ 1, λ = 1: truncated mean 1/(1−e⁻¹).
        let got = expected_count(500.0, 0.0);
        assert!((got - 1.5819767068693265).abs() < 1e-14);
        assert_eq!(expected_count(-800.0, 0.3), 0.0);

        let mut rng = StdRng::seed_from_u64(10);
        for _ in 0..50 {
            let eta0 = rng.gen_range(-3.0..3.0);
            let eta_p = rng.gen_range(-3.0..3.0);
            let series: f64 = (1..=500)
                .map(|y| y as f64 * hurdle_pmf(y, eta0, eta_p))
                .sum();
            let direct = expected_count(eta0, eta_p);
            assert!((series - direct).abs() < 1e-8, "{series} vs {direct}");
        }
    }

    #[test]
    fn effect_helpers_reproduce_reference_arithmetic() {
        assert!((effect_decrease_fraction(-0.789, 1.0) - 0.5457011329243044).abs() < 1e-15);
        assert!((effect_decrease_fraction(-0.353, 1.0) - 0.29742280662275844).abs() < 1e-15);
        // A '1% RH' change with RH as a fraction is delta = 0.01.
        assert!((effect_multiplier(-78.9, 0.01) - (-0.789f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn stable_primitives_agree_across_branch_boundaries() {
        // ztp_curvature: series vs exact around λ = 1e-4, asymptotic vs exact
        // around λ = 30.
        let exact = |lambda: f64| {
            let em = lambda.exp_m1();
            -(lambda * (em + 1.0) * (em - lambda)) / (em * em)
        };
        for &l in &[0.9e-4, 1.1e-4] {
            assert!(rel_err(ztp_curvature(l), exact(l)) < 1e-9);
        }
        for &l in &[29.9, 30.1] {
            assert!(rel_err(ztp_curvature(l), exact(l)) < 1e-12);
        }
        // log1m_exp_neg branches agree near log 2.
        for &l in &[0.69, 0.70] {
            let a = (-(-l as f64).exp()).ln_1p();
            let b = (-(-l as f64).exp_m1()).ln();
            assert!(rel_err(log1m_exp_neg(l), a) < 1e-13);
            assert!(rel_err(a, b) < 1e-13);
        }
        // ztp_mean limits: 1 at 0, ≈ λ for large λ.
        assert_eq!(ztp_mean(0.0), 1.0);
        assert!((ztp_mean(1e-13) - 1.0).abs() < 1e-12);
        assert!(rel_err(ztp_mean(800.0), 800.0) < 1e-12);
        // ln_factorial anchors.
        assert_eq!(ln_factorial(0), 0.0);
        assert_eq!(ln_factorial(1), 0.0);
        assert!((ln_factorial(5) - 120f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn state_round_trips_through_stacked_form() {
        let mut rng = StdRng::seed_from_u64(11);
        let layout = StateLayout { n: 7, k: 2 };
        let x = random_state(layout, &mut rng);
        let stacked = x.to_stacked();
        assert_eq!(stacked.len(), layout.dim());
        let back = LatentState::from_stacked(&stacked, layout).unwrap();
        assert_eq!(x, back);
        assert!(LatentState::from_stacked(&stacked[1..], layout).is_err());
    }
}
