//! Gaussian Markov random field priors on the grid.
//!
//! Each latent field gets a conditional-autoregressive precision built from
//! the grid Laplacian G:
//!
//! ```text
//! Q(κ, τ) = τ (κ² I + G)
//! ```
//!
//! τ scales the overall precision and κ² > 0 shifts the Laplacian's zero
//! eigenvalue away from the origin, making the prior proper. Conditionally on
//! its neighbors, cell i is Gaussian with mean Σ_{j∈N(i)} u_j/(κ² + d_i) and
//! variance 1/((κ² + d_i)τ) — the classic CAR local characterization, exposed
//! here both for interpretation and as an independently checkable identity.
//!
//! The joint prior over the stacked vector x = (β₀, β₊, U₀, U₊) is block
//! diagonal: a vague Gaussian on each β block (precision 10⁻⁶, i.e. variance
//! 10⁶) and one CAR block per field.

use crate::error::{Error, Result};
use crate::grid::GridSpec;
use crate::hurdle_model::{LatentState, StateLayout};
use crate::sparse::{FillOrdering, SparseCholesky, SparseSymmetric};

/// Default precision of the vague Gaussian prior on regression coefficients.
pub const DEFAULT_BETA_PRIOR_PRECISION: f64 = 1e-6;

/// θ = (κ₀, τ₀, κ₊, τ₊); all strictly positive and finite.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hyperparams {
    kappa0: f64,
    tau0: f64,
    kappa_plus: f64,
    tau_plus: f64,
}

impl Hyperparams {
    pub fn new(kappa0: f64, tau0: f64, kappa_plus: f64, tau_plus: f64) -> Result<Self> {
        for (name, v) in [
            ("kappa0", kappa0),
            ("tau0", tau0),
            ("kappa_plus", kappa_plus),
            ("tau_plus", tau_plus),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::Hyperparams(format!(
                    "{name} must be strictly positive and finite, got {v}"
                )));
            }
        }
        Ok(Self {
            kappa0,
            tau0,
            kappa_plus,
            tau_plus,
        })
    }

    pub fn kappa0(&self) -> f64 {
        self.kappa0
    }

    pub fn tau0(&self) -> f64 {
        self.tau0
    }

    pub fn kappa_plus(&self) -> f64 {
        self.kappa_plus
    }

    pub fn tau_plus(&self) -> f64 {
        self.tau_plus
    }

    /// Log-space coordinates (ln κ₀, ln τ₀, ln κ₊, ln τ₊) — the optimizer
    /// works here so positivity is structural.
    pub fn to_log(&self) -> [f64; 4] {
        [
            self.kappa0.ln(),
            self.tau0.ln(),
            self.kappa_plus.ln(),
            self.tau_plus.ln(),
        ]
    }

    /// Inverse of [`to_log`]. Errors if any coordinate exponentiates to zero
    /// or infinity.
    pub fn from_log(log_theta: [f64; 4]) -> Result<Self> {
        Self::new(
            log_theta[0].exp(),
            log_theta[1].exp(),
            log_theta[2].exp(),
            log_theta[3].exp(),
        )
    }
}

/// One CAR precision block τ(κ²I + G).
pub fn build_q_block(kappa: f64, tau: f64, laplacian: &SparseSymmetric) -> Result<SparseSymmetric> {
    if !(kappa > 0.0) || !kappa.is_finite() || !(tau > 0.0) || !tau.is_finite() {
        return Err(Error::Hyperparams(format!(
            "CAR block needs kappa, tau > 0; got kappa = {kappa}, tau = {tau}"
        )));
    }
    let n = laplacian.n();
    let kappa2 = kappa * kappa;
    let mut trips = Vec::with_capacity(laplacian.nnz_upper());
    for (r, c, g) in laplacian.iter_upper() {
        let v = if r == c { tau * (kappa2 + g) } else { tau * g };
        trips.push((r, c, v));
    }
    SparseSymmetric::from_triplets(n, &trips)
}

/// The joint prior precision Q(θ) over x = (β₀, β₊, U₀, U₊):
/// block-diag(b·I, b·I, Q₀(θ₀), Q₊(θ₊)) with b the β prior precision.
#[derive(Debug, Clone)]
pub struct JointPrecision {
    layout: StateLayout,
    matrix: SparseSymmetric,
    log_det: f64,
    beta_prior_precision: f64,
}

impl JointPrecision {
    /// Build with the default vague β prior.
    pub fn build(theta: &Hyperparams, laplacian: &SparseSymmetric, k: usize) -> Result<Self> {
        Self::build_with_beta_precision(theta, laplacian, k, DEFAULT_BETA_PRIOR_PRECISION)
    }

    /// Build with an explicit β-block precision (sensitivity checks).
    pub fn build_with_beta_precision(
        theta: &Hyperparams,
        laplacian: &SparseSymmetric,
        k: usize,
        beta_prior_precision: f64,
    ) -> Result<Self> {
        if !(beta_prior_precision > 0.0) || !beta_prior_precision.is_finite() {
            return Err(Error::Hyperparams(format!(
                "beta prior precision must be positive, got {beta_prior_precision}"
            )));
        }
        let n = laplacian.n();
        let layout = StateLayout { n, k };
        let mut trips: Vec<(usize, usize, f64)> = Vec::new();
        for j in 0..2 * (k + 1) {
            trips.push((j, j, beta_prior_precision));
        }
        let q0 = build_q_block(theta.kappa0, theta.tau0, laplacian)?;
        let qp = build_q_block(theta.kappa_plus, theta.tau_plus, laplacian)?;
        let off0 = layout.u0().start;
        let offp = layout.u_plus().start;
        for (r, c, v) in q0.iter_upper() {
            trips.push((off0 + r, off0 + c, v));
        }
        for (r, c, v) in qp.iter_upper() {
            trips.push((offp + r, offp + c, v));
        }
        let matrix = SparseSymmetric::from_triplets(layout.dim(), &trips)?;
        // One factorization up front caches the log-determinant; failure here
        // is a hyperparameter problem by construction (the blocks are SPD for
        // any valid θ).
        let chol = SparseCholesky::factor(&matrix, FillOrdering::ReverseCuthillMcKee)
            .map_err(|e| Error::Hyperparams(format!("prior precision not SPD: {e}")))?;
        let log_det = chol.log_det();
        Ok(Self {
            layout,
            matrix,
            log_det,
            beta_prior_precision,
        })
    }

    pub fn layout(&self) -> StateLayout {
        self.layout
    }

    pub fn dim(&self) -> usize {
        self.layout.dim()
    }

    pub fn matrix(&self) -> &SparseSymmetric {
        &self.matrix
    }

    pub fn log_det(&self) -> f64 {
        self.log_det
    }

    pub fn beta_prior_precision(&self) -> f64 {
        self.beta_prior_precision
    }
}

/// Zero-mean Gaussian log-density with an arbitrary SPD precision matrix:
/// ½ logdet Q − (p/2) log 2π − ½ xᵀQx. Factors the precision internally.
pub fn log_gaussian_density(x: &[f64], precision: &SparseSymmetric) -> Result<f64> {
    if x.len() != precision.n() {
        return Err(Error::Dimension {
            context: "gaussian density state",
            expected: precision.n(),
            got: x.len(),
        });
    }
    let chol = SparseCholesky::factor(precision, FillOrdering::ReverseCuthillMcKee)?;
    let p = x.len() as f64;
    Ok(0.5 * chol.log_det()
        - 0.5 * p * (2.0 * std::f64::consts::PI).ln()
        - 0.5 * precision.quadratic_form(x))
}

/// Log prior density of the stacked latent state under Q(θ), using the
/// precision's cached log-determinant.
pub fn log_prior_density(x: &LatentState, q: &JointPrecision) -> Result<f64> {
    let stacked = x.to_stacked();
    if stacked.len() != q.dim() {
        return Err(Error::Dimension {
            context: "prior density state",
            expected: q.dim(),
            got: stacked.len(),
        });
    }
    let p = q.dim() as f64;
    Ok(0.5 * q.log_det()
        - 0.5 * p * (2.0 * std::f64::consts::PI).ln()
        - 0.5 * q.matrix().quadratic_form(&stacked))
}

/// Gradient and Hessian of the log prior in x: (−Qx, −Q). The Hessian is
/// constant; a negated copy of the precision is returned.
pub fn prior_grad_hess(x: &LatentState, q: &JointPrecision) -> Result<(Vec<f64>, SparseSymmetric)> {
    let stacked = x.to_stacked();
    if stacked.len() != q.dim() {
        return Err(Error::Dimension {
            context: "prior gradient state",
            expected: q.dim(),
            got: stacked.len(),
        });
    }
    let grad: Vec<f64> = q.matrix().mul_vec(&stacked).iter().map(|v| -v).collect();
    let neg_trips: Vec<(usize, usize, f64)> = q
        .matrix()
        .iter_upper()
        .map(|(r, c, v)| (r, c, -v))
        .collect();
    let hess = SparseSymmetric::from_triplets(q.dim(), &neg_trips)?;
    Ok((grad, hess))
}

/// Conditional mean and variance of field value i given the rest of the
/// field: mean = Σ_{j∈N(i)} u_j/(κ² + d_i), variance = 1/((κ² + d_i)·τ).
pub fn conditional_moments(
    i: usize,
    u: &[f64],
    kappa: f64,
    tau: f64,
    grid: &GridSpec,
) -> Result<(f64, f64)> {
    if !(kappa > 0.0) || !(tau > 0.0) {
        return Err(Error::Hyperparams(format!(
            "conditional moments need kappa, tau > 0; got {kappa}, {tau}"
        )));
    }
    let n = grid.n_cells();
    if u.len() != n {
        return Err(Error::Dimension {
            context: "field values",
            expected: n,
            got: u.len(),
        });
    }
    if i >= n {
        return Err(Error::Invalid(format!(
            "cell index {i} out of range for {n} active cells"
        )));
    }
    if u.iter().any(|v| !v.is_finite()) {
        return Err(Error::Invalid("field contains non-finite values".into()));
    }
    let denom = kappa * kappa + grid.degree(i) as f64;
    let mean = grid.neighbors(i).iter().map(|&j| u[j]).sum::<f64>() / denom;
    let variance = 1.0 / (denom * tau);
    Ok((mean, variance))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{build_laplacian, GridSpec};
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn dense(m: &SparseSymmetric) -> nalgebra::DMatrix<f64> {
        let d = m.to_dense();
        nalgebra::DMatrix::from_fn(m.n(), m.n(), |i, j| d[i][j])
    }

    #[test]
    fn hyperparams_validate_positivity() {
        assert!(Hyperparams::new(0.390, 0.518, 2.565, 0.369).is_ok());
        assert!(Hyperparams::new(0.0, 1.0, 1.0, 1.0).is_err());
        assert!(Hyperparams::new(1.0, -2.0, 1.0, 1.0).is_err());
        assert!(Hyperparams::new(1.0, 1.0, f64::NAN, 1.0).is_err());
        assert!(Hyperparams::new(1.0, 1.0, 1.0, f64::INFINITY).is_err());
    }

    #[test]
    fn log_round_trip() {
        let theta = Hyperparams::new(0.7, 0.5, 1.2, 0.45).unwrap();
        let back = Hyperparams::from_log(theta.to_log()).unwrap();
        assert!((back.kappa0() - 0.7).abs() < 1e-15);
        assert!((back.tau_plus() - 0.45).abs() < 1e-15);
    }

    #[test]
    fn q_block_single_cell() {
        let grid = GridSpec::full(1, 1).unwrap();
        let g = build_laplacian(&grid);
        let q = build_q_block(1.0, 1.0, &g).unwrap();
        assert_eq!(q.to_dense(), vec![vec![1.0]]);
    }

    #[test]
    fn q_block_2x2_hand_computation() {
        // τ(κ²I + G) with κ=2, τ=3 on the 2×2 grid: diagonal 3(4+2) = 18,
        // off-diagonal 3·(−1) = −3 on the four adjacent pairs.
        let grid = GridSpec::full(2, 2).unwrap();
        let g = build_laplacian(&grid);
        let q = build_q_block(2.0, 3.0, &g).unwrap().to_dense();
        for i in 0..4 {
            assert_eq!(q[i][i], 18.0);
        }
        let adjacent = [(0, 1), (0, 2), (1, 3), (2, 3)];
        for (i, j) in adjacent {
            assert_eq!(q[i][j], -3.0);
            assert_eq!(q[j][i], -3.0);
        }
        assert_eq!(q[0][3], 0.0);
        assert_eq!(q[1][2], 0.0);
    }

    #[test]
    fn q_block_rejects_bad_hyperparams() {
        let grid = GridSpec::full(2, 2).unwrap();
        let g = build_laplacian(&grid);
        assert!(build_q_block(0.0, 1.0, &g).is_err());
        assert!(build_q_block(1.0, 0.0, &g).is_err());
    }

    #[test]
    fn joint_precision_is_spd_and_block_structured() {
        let mut rng = StdRng::seed_from_u64(21);
        for _ in 0..10 {
            let rows = rng.gen_range(1..=4);
            let cols = rng.gen_range(1..=4);
            let k = rng.gen_range(0..3);
            let grid = GridSpec::full(rows, cols).unwrap();
            let g = build_laplacian(&grid);
            let theta = Hyperparams::new(
                rng.gen_range(0.2..3.0),
                rng.gen_range(0.2..3.0),
                rng.gen_range(0.2..3.0),
                rng.gen_range(0.2..3.0),
            )
            .unwrap();
            let q = JointPrecision::build(&theta, &g, k).unwrap();
            assert_eq!(q.dim(), 2 * (grid.n_cells() + k + 1));

            // SPD on a dense eigenvalue check.
            let eig = dense(q.matrix()).symmetric_eigen();
            for v in eig.eigenvalues.iter() {
                assert!(*v > 0.0, "eigenvalue {v} not positive");
            }

            // Off-diagonal blocks identically zero: any stored off-block
            // entry must vanish.
            let layout = q.layout();
            let block = |idx: usize| -> usize {
                if layout.beta0().contains(&idx) {
                    0
                } else if layout.beta_plus().contains(&idx) {
                    1
                } else if layout.u0().contains(&idx) {
                    2
                } else {
                    3
                }
            };
            for (r, c, v) in q.matrix().iter_upper() {
                if block(r) != block(c) {
                    assert_eq!(v, 0.0, "cross-block entry at ({r},{c})");
                }
            }
        }
    }

    #[test]
    fn log_gaussian_density_standard_normal() {
        let q = SparseSymmetric::from_triplets(1, &[(0, 0, 1.0)]).unwrap();
        let got = log_gaussian_density(&[1.0], &q).unwrap();
        let want = -0.5 - 0.5 * (2.0 * std::f64::consts::PI).ln();
        assert!((got - want).abs() < 1e-15);
    }

    #[test]
    fn log_prior_matches_dense_oracle() {
        let mut rng = StdRng::seed_from_u64(22);
        for _ in 0..10 {
            let grid = GridSpec::full(2, 2).unwrap();
            let g = build_laplacian(&grid);
            let k = rng.gen_range(0..2);
            let theta = Hyperparams::new(
                rng.gen_range(0.3..2.0),
                rng.gen_range(0.3..2.0),
                rng.gen_range(0.3..2.0),
                rng.gen_range(0.3..2.0),
            )
            .unwrap();
            let q = JointPrecision::build(&theta, &g, k).unwrap();
            let p = q.dim();
            let x: Vec<f64> = (0..p).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let state =
                crate::hurdle_model::LatentState::from_stacked(&x, q.layout()).unwrap();
            let got = log_prior_density(&state, &q).unwrap();

            let dq = dense(q.matrix());
            let chol = dq.clone().cholesky().unwrap();
            let logdet: f64 = chol.l_dirty().diagonal().iter().map(|v| 2.0 * v.ln()).sum();
            let xv = nalgebra::DVector::from_column_slice(&x);
            let quad = (xv.transpose() * &dq * &xv)[(0, 0)];
            let want =
                0.5 * logdet - 0.5 * p as f64 * (2.0 * std::f64::consts::PI).ln() - 0.5 * quad;
            assert!((got - want).abs() < 1e-10 * (1.0 + want.abs()), "{got} vs {want}");
        }
    }

    #[test]
    fn prior_grad_hess_matches_dense_multiply() {
        let mut rng = StdRng::seed_from_u64(23);
        let grid = GridSpec::full(3, 2).unwrap();
        let g = build_laplacian(&grid);
        let theta = Hyperparams::new(0.8, 1.3, 1.1, 0.6).unwrap();
        let q = JointPrecision::build(&theta, &g, 1).unwrap();
        let p = q.dim();

        // x = 0 → gradient 0.
        let zero = crate::hurdle_model::LatentState::zeros(6, 1);
        let (grad0, _) = prior_grad_hess(&zero, &q).unwrap();
        assert!(grad0.iter().all(|&v| v == 0.0));

        let x: Vec<f64> = (0..p).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let state = crate::hurdle_model::LatentState::from_stacked(&x, q.layout()).unwrap();
        let (grad, hess) = prior_grad_hess(&state, &q).unwrap();
        let want = dense(q.matrix()) * nalgebra::DVector::from_column_slice(&x);
        for i in 0..p {
            assert!((grad[i] + want[i]).abs() < 1e-12 * (1.0 + want[i].abs()));
        }
        // Hessian is −Q.
        let hd = hess.to_dense();
        let qd = q.matrix().to_dense();
        for i in 0..p {
            for j in 0..p {
                assert_eq!(hd[i][j], -qd[i][j]);
            }
        }
    }

    #[test]
    fn conditional_moments_closed_cases() {
        // Isolated cell: no neighbors, unit variance at κ = τ = 1.
        let grid = GridSpec::full(1, 1).unwrap();
        let (mean, var) = conditional_moments(0, &[0.3], 1.0, 1.0, &grid).unwrap();
        assert_eq!(mean, 0.0);
        assert_eq!(var, 1.0);

        // 2×2 grid, κ=1, τ=2, both neighbors of cell 0 equal to 3.
        let grid = GridSpec::full(2, 2).unwrap();
        let u = [9.0, 3.0, 3.0, -7.0];
        let (mean, var) = conditional_moments(0, &u, 1.0, 2.0, &grid).unwrap();
        assert!((mean - 2.0).abs() < 1e-15);
        assert!((var - 1.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn conditional_moments_match_dense_conditioning() {
        // Schur-complement oracle: partition the covariance Σ = Q⁻¹ and use
        // mean = Σ_{i,-i} Σ_{-i,-i}⁻¹ u_{-i}, var = Σ_ii − Σ_{i,-i} Σ_{-i,-i}⁻¹ Σ_{-i,i}.
        let mut rng = StdRng::seed_from_u64(24);
        for rows in 1..=3usize {
            for cols in 1..=3usize {
                for masked in [false, true] {
                    let grid = if masked && rows * cols > 1 {
                        let mut mask = vec![true; rows * cols];
                        mask[rng.gen_range(0..rows * cols)] = false;
                        if !mask.iter().any(|&m| m) {
                            continue;
                        }
                        match GridSpec::with_mask(rows, cols, mask) {
                            Ok(g) => g,
                            Err(_) => continue,
                        }
                    } else {
                        GridSpec::full(rows, cols).unwrap()
                    };
                    let n = grid.n_cells();
                    let kappa = rng.gen_range(0.3..2.5);
                    let tau = rng.gen_range(0.3..2.5);
                    let g = build_laplacian(&grid);
                    let q = build_q_block(kappa, tau, &g).unwrap();
                    let sigma = dense(&q).try_inverse().unwrap();
                    let u: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
                    for i in 0..n {
                        let (mean, var) = conditional_moments(i, &u, kappa, tau, &grid).unwrap();
                        if n == 1 {
                            assert_eq!(mean, 0.0);
                            assert!((var - sigma[(0, 0)]).abs() < 1e-10);
                            continue;
                        }
                        let rest: Vec<usize> = (0..n).filter(|&j| j != i).collect();
                        let s_rest = nalgebra::DMatrix::from_fn(n - 1, n - 1, |a, b| {
                            sigma[(rest[a], rest[b])]
                        });
                        let s_cross =
                            nalgebra::DVector::from_fn(n - 1, |a, _| sigma[(i, rest[a])]);
                        let u_rest = nalgebra::DVector::from_fn(n - 1, |a, _| u[rest[a]]);
                        let solve = s_rest.clone().lu();
                        let w = solve.solve(&u_rest).unwrap();
                        let want_mean = s_cross.dot(&w);
                        let v = solve.solve(&s_cross).unwrap();
                        let want_var = sigma[(i, i)] - s_cross.dot(&v);
                        assert!(
                            (mean - want_mean).abs() < 1e-10,
                            "mean at cell {i}: {mean} vs {want_mean}"
                        );
                        assert!(
                            (var - want_var).abs() < 1e-10,
                            "variance at cell {i}: {var} vs {want_var}"
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn conditional_moments_reject_bad_input() {
        let grid = GridSpec::full(2, 2).unwrap();
        assert!(conditional_moments(4, &[0.0; 4], 1.0, 1.0, &grid).is_err());
        assert!(conditional_moments(0, &[0.0; 3], 1.0, 1.0, &grid).is_err());
        assert!(conditional_moments(0, &[f64::NAN; 4], 1.0, 1.0, &grid).is_err());
        assert!(conditional_moments(0, &[0.0; 4], -1.0, 1.0, &grid).is_err());
    }

    #[test]
    fn tau_scaling_shifts_log_density_by_half_n_log_c() {
        let grid = GridSpec::full(3, 3).unwrap();
        let g = build_laplacian(&grid);
        let n = grid.n_cells();
        let theta = Hyperparams::new(0.9, 0.7, 1.4, 0.5).unwrap();
        let c = 3.7;
        let scaled = Hyperparams::new(0.9, 0.7 * c, 1.4, 0.5).unwrap();
        let q = JointPrecision::build(&theta, &g, 0).unwrap();
        let qc = JointPrecision::build(&scaled, &g, 0).unwrap();
        let zero = crate::hurdle_model::LatentState::zeros(n, 0);
        let a = log_prior_density(&zero, &q).unwrap();
        let b = log_prior_density(&zero, &qc).unwrap();
        let want = 0.5 * n as f64 * c.ln();
        assert!(
            ((b - a) - want).abs() < 1e-9,
            "shift {} vs {want}",
            b - a
        );
    }
}
