//! Empirical Bayes fitting: inner damped Newton for the conditional mode
//! x̂(θ), a Laplace approximation to the marginal posterior of the
//! hyperparameters, and an outer Nelder–Mead search over log θ.
//!
//! The inner objective is the unnormalized log posterior of the latent state,
//!
//! ```text
//! log f(x | θ, y) = ℓ(x) − ½ xᵀ Q(θ) x  (+ terms constant in x)
//! ```
//!
//! which is strictly concave, so Newton with step halving converges globally.
//! With x̂ the maximizer and Ĥ = Q − ∇∇ℓ(x̂) the negated curvature there, the
//! Laplace-approximate log marginal posterior under a flat hyperprior is
//!
//! ```text
//! log f̃(θ | y) = ½ logdet Q(θ) − ½ x̂ᵀQx̂ + ℓ(x̂) − ½ logdet Ĥ(θ).
//! ```
//!
//! Bookkeeping of constants: the full derivation contains −(p/2)log 2π from
//! the prior normalization and +(p/2)log 2π from the Gaussian volume of the
//! Laplace integral; they cancel exactly and are omitted rather than computed.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::gmrf::{Hyperparams, JointPrecision, DEFAULT_BETA_PRIOR_PRECISION};
use crate::grid::build_laplacian;
use crate::hurdle_model::{self, Dataset, LatentState, StateLayout};
use crate::sparse::{FillOrdering, SparseCholesky, SparseSymmetric};

/// Controls for the inner Newton mode search.
#[derive(Debug, Clone)]
pub struct NewtonSettings {
    /// Convergence threshold ε on | ‖x⁽ᵗ⁺¹⁾‖ − ‖x⁽ᵗ⁾‖ |.
    pub tolerance: f64,
    pub max_iterations: usize,
    /// Step-halving floor; once α drops below this the step is abandoned.
    pub min_step: f64,
    /// Stacked starting point; `None` starts from zero.
    pub initial_point: Option<Vec<f64>>,
    /// Extra requirement ‖∇‖∞ below this at convergence. The norm-difference
    /// test alone can fire spuriously on near-orthogonal steps; `None`
    /// reproduces the bare criterion.
    pub gradient_supplement: Option<f64>,
    /// Fill-reducing ordering for the per-iteration factorizations.
    pub ordering: FillOrdering,
}

impl Default for NewtonSettings {
    fn default() -> Self {
        Self {
            tolerance: 1e-7,
            max_iterations: 100,
            min_step: 2f64.powi(-9),
            initial_point: None,
            gradient_supplement: Some(1e-4),
            ordering: FillOrdering::ReverseCuthillMcKee,
        }
    }
}

/// A smooth concave function to be maximized by [`newton_maximize`].
pub trait Objective {
    fn dim(&self) -> usize;
    fn value(&self, x: &[f64]) -> f64;
    fn gradient(&self, x: &[f64]) -> Vec<f64>;
    /// The negated Hessian −∇∇f(x), positive definite wherever f is strictly
    /// concave.
    fn neg_hessian(&self, x: &[f64]) -> Result<SparseSymmetric>;
}

/// What the Newton loop did: counts, flags, and the objective trace
/// (non-decreasing by construction).
#[derive(Debug, Clone)]
pub struct NewtonReport {
    pub iterations: usize,
    pub converged: bool,
    pub hit_step_floor: bool,
    pub final_objective: f64,
    pub final_gradient_norm: f64,
    pub objective_trace: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct NewtonOutcome {
    pub x: Vec<f64>,
    pub report: NewtonReport,
}

fn norm2(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn inf_norm(x: &[f64]) -> f64 {
    x.iter().fold(0.0, |m, v| m.max(v.abs()))
}

/// Factor a nominally-SPD matrix, escalating a diagonal jitter ×10 from 1e-8
/// (at most 6 attempts) if the factorization reports indefiniteness. The
/// posterior curvature is SPD in exact arithmetic, but far from the mode a
/// nearly singular iterate can lose definiteness to roundoff.
fn factor_with_jitter(h: &SparseSymmetric, ordering: FillOrdering) -> Result<SparseCholesky> {
    match SparseCholesky::factor(h, ordering) {
        Ok(c) => Ok(c),
        Err(first) => {
            let mut jitter = 1e-8;
            for _ in 0..6 {
                let trips: Vec<(usize, usize, f64)> = h
                    .iter_upper()
                    .map(|(r, c, v)| if r == c { (r, c, v + jitter) } else { (r, c, v) })
                    .collect();
                let bumped = SparseSymmetric::from_triplets(h.n(), &trips)?;
                if let Ok(c) = SparseCholesky::factor(&bumped, ordering) {
                    return Ok(c);
                }
                jitter *= 10.0;
            }
            Err(Error::Newton(format!(
                "Hessian not positive definite and jitter escalation to {:.0e} exhausted ({first})",
                jitter / 10.0
            )))
        }
    }
}

/// Damped Newton ascent: x ← x + α·H⁻¹∇ with H = −∇∇f, halving α while the
/// objective would decrease. α re-arms to 1 at every iteration; if halving
/// crosses `min_step` the step is reverted and iteration stops with
/// `hit_step_floor` set. Convergence requires the norm-difference criterion
/// and, when configured, a small gradient infinity norm.
///
/// A floor hit at an iterate that already satisfies the gradient criterion
/// is reported as convergence: near the mode the remaining improvement can
/// sit below the rounding noise of the objective, so the line search has
/// nothing left to measure. Without a gradient supplement there is no way
/// to tell that stall from a cliff, and the floor stays a failure.
pub fn newton_maximize<O: Objective>(obj: &O, settings: &NewtonSettings) -> Result<NewtonOutcome> {
    let p = obj.dim();
    let mut x = match &settings.initial_point {
        Some(x0) => {
            if x0.len() != p {
                return Err(Error::Dimension {
                    context: "Newton initial point",
                    expected: p,
                    got: x0.len(),
                });
            }
            x0.clone()
        }
        None => vec![0.0; p],
    };
    let mut f = obj.value(&x);
    if !f.is_finite() {
        return Err(Error::Newton(format!(
            "objective is {f} at the starting point"
        )));
    }
    let mut trace = vec![f];
    let mut converged = false;
    let mut hit_step_floor = false;
    let mut iterations = 0;
    let mut grad_norm = f64::INFINITY;

    while iterations < settings.max_iterations {
        iterations += 1;
        let g = obj.gradient(&x);
        grad_norm = inf_norm(&g);
        let h = obj.neg_hessian(&x)?;
        let chol = factor_with_jitter(&h, settings.ordering)?;
        let direction = chol.solve(&g);

        let mut alpha = 1.0;
        let (x_new, f_new) = loop {
            let candidate: Vec<f64> = x
                .iter()
                .zip(&direction)
                .map(|(xi, di)| xi + alpha * di)
                .collect();
            let fc = obj.value(&candidate);
            if fc.is_finite() && fc >= f {
                break (candidate, fc);
            }
            alpha *= 0.5;
            if alpha < settings.min_step {
                hit_step_floor = true;
                break (x.clone(), f);
            }
        };
        if hit_step_floor {
            if let Some(gtol) = settings.gradient_supplement {
                grad_norm = inf_norm(&obj.gradient(&x));
                if grad_norm < gtol {
                    converged = true;
                }
            }
            break;
        }
        debug_assert!(f_new >= f, "accepted Newton step decreased the objective");
        let norm_change = (norm2(&x_new) - norm2(&x)).abs();
        x = x_new;
        f = f_new;
        trace.push(f);
        if norm_change < settings.tolerance {
            match settings.gradient_supplement {
                None => converged = true,
                Some(gtol) => {
                    grad_norm = inf_norm(&obj.gradient(&x));
                    if grad_norm < gtol {
                        converged = true;
                    }
                }
            }
            if converged {
                break;
            }
        }
    }

    Ok(NewtonOutcome {
        x,
        report: NewtonReport {
            iterations,
            converged,
            hit_step_floor,
            final_objective: f,
            final_gradient_norm: grad_norm,
            objective_trace: trace,
        },
    })
}

/// A log-likelihood term ℓ(x) over the stacked state, abstracted so the
/// marginal-posterior machinery can be exercised with substitute likelihoods
/// (e.g. a Gaussian, for which the Laplace approximation is exact).
pub trait Likelihood {
    fn dim(&self) -> usize;
    fn value(&self, x: &[f64]) -> Result<f64>;
    fn gradient(&self, x: &[f64]) -> Result<Vec<f64>>;
    /// Upper triangle of −∇∇ℓ(x) as triplets.
    fn neg_hessian_triplets(&self, x: &[f64]) -> Result<Vec<(usize, usize, f64)>>;
}

/// The spatial hurdle log-likelihood over a dataset.
pub struct HurdleLikelihood<'a> {
    data: &'a Dataset,
}

impl<'a> HurdleLikelihood<'a> {
    pub fn new(data: &'a Dataset) -> Self {
        Self { data }
    }
}

impl Likelihood for HurdleLikelihood<'_> {
    fn dim(&self) -> usize {
        self.data.layout().dim()
    }

    fn value(&self, x: &[f64]) -> Result<f64> {
        hurdle_model::log_likelihood_stacked(x, self.data)
    }

    fn gradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        hurdle_model::grad_stacked(x, self.data)
    }

    fn neg_hessian_triplets(&self, x: &[f64]) -> Result<Vec<(usize, usize, f64)>> {
        hurdle_model::neg_hessian_triplets(x, self.data)
    }
}

/// ℓ(x) − ½xᵀQx as a Newton objective.
struct PosteriorObjective<'a, L: Likelihood> {
    lik: &'a L,
    q: &'a JointPrecision,
}

impl<L: Likelihood> Objective for PosteriorObjective<'_, L> {
    fn dim(&self) -> usize {
        self.q.dim()
    }

    fn value(&self, x: &[f64]) -> f64 {
        let ell = match self.lik.value(x) {
            Ok(v) => v,
            Err(_) => return f64::NEG_INFINITY,
        };
        ell - 0.5 * self.q.matrix().quadratic_form(x)
    }

    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let mut g = self.lik.gradient(x).expect("gradient at a feasible point");
        let qx = self.q.matrix().mul_vec(x);
        for (gi, qi) in g.iter_mut().zip(&qx) {
            *gi -= qi;
        }
        g
    }

    fn neg_hessian(&self, x: &[f64]) -> Result<SparseSymmetric> {
        // Ĥ(x) = Q + (−∇∇ℓ); duplicate triplets sum on assembly.
        let mut trips = self.lik.neg_hessian_triplets(x)?;
        trips.extend(self.q.matrix().iter_upper());
        SparseSymmetric::from_triplets(self.q.dim(), &trips)
    }
}

/// Mode search output: x̂, the curvature Ĥ = Q − ∇∇ℓ(x̂) there, and the
/// Newton trace.
#[derive(Debug, Clone)]
pub struct ModeResult {
    pub x_hat: Vec<f64>,
    pub hessian_at_mode: SparseSymmetric,
    pub newton: NewtonReport,
}

/// Find x̂(θ) for an arbitrary likelihood against the prior precision `q`.
pub fn find_mode_generic<L: Likelihood>(
    lik: &L,
    q: &JointPrecision,
    settings: &NewtonSettings,
) -> Result<ModeResult> {
    if lik.dim() != q.dim() {
        return Err(Error::Dimension {
            context: "likelihood dimension",
            expected: q.dim(),
            got: lik.dim(),
        });
    }
    let obj = PosteriorObjective { lik, q };
    let outcome = newton_maximize(&obj, settings)?;
    if !outcome.report.converged {
        return Err(Error::Newton(format!(
            "mode search did not converge: {} iterations, step floor hit: {}, |grad| = {:.3e}",
            outcome.report.iterations,
            outcome.report.hit_step_floor,
            outcome.report.final_gradient_norm
        )));
    }
    let hessian_at_mode = obj.neg_hessian(&outcome.x)?;
    Ok(ModeResult {
        x_hat: outcome.x,
        hessian_at_mode,
        newton: outcome.report,
    })
}

/// Laplace-approximate log marginal posterior for an arbitrary likelihood;
/// returns the mode alongside so callers can reuse it.
pub fn laplace_log_marginal<L: Likelihood>(
    lik: &L,
    q: &JointPrecision,
    settings: &NewtonSettings,
) -> Result<(f64, ModeResult)> {
    let mode = find_mode_generic(lik, q, settings)?;
    let chol = factor_with_jitter(&mode.hessian_at_mode, settings.ordering)?;
    let quad = q.matrix().quadratic_form(&mode.x_hat);
    let ell = lik.value(&mode.x_hat)?;
    // Flat hyperprior: log f(θ) = 0. The ±(p/2)log 2π pair cancels (see
    // module docs), leaving the four terms below.
    let value = 0.5 * q.log_det() - 0.5 * quad + ell - 0.5 * chol.log_det();
    Ok((value, mode))
}

/// Conditional mode of the latent state at fixed hyperparameters.
pub fn find_mode(
    theta: &Hyperparams,
    data: &Dataset,
    settings: &NewtonSettings,
) -> Result<(LatentState, SparseSymmetric)> {
    let laplacian = build_laplacian(data.grid());
    let q = JointPrecision::build(theta, &laplacian, data.k())?;
    let lik = HurdleLikelihood::new(data);
    let mode = find_mode_generic(&lik, &q, settings)?;
    let state = LatentState::from_stacked(&mode.x_hat, data.layout())?;
    Ok((state, mode.hessian_at_mode))
}

/// Laplace-approximate log marginal posterior of θ given the data, with
/// default Newton settings (deterministic: zero start, fixed ordering).
pub fn log_marginal_posterior(theta: &Hyperparams, data: &Dataset) -> Result<f64> {
    let laplacian = build_laplacian(data.grid());
    let q = JointPrecision::build(theta, &laplacian, data.k())?;
    let lik = HurdleLikelihood::new(data);
    let (value, _) = laplace_log_marginal(&lik, &q, &NewtonSettings::default())?;
    Ok(value)
}

/// Controls for the outer Nelder–Mead search over log θ.
#[derive(Debug, Clone)]
pub struct NelderMeadSettings {
    /// Terminate when the objective spread across the simplex drops below
    /// this (1e-7 default; 1e-3 reproduces the looser continental setting).
    pub spread_tolerance: f64,
    pub max_iterations: usize,
    pub newton: NewtonSettings,
    /// Start each inner mode search from the most recent solved mode instead
    /// of zero. Cuts fit time several-fold; disable to reproduce the bare
    /// algorithm exactly.
    pub warm_start: bool,
    pub beta_prior_precision: f64,
}

impl Default for NelderMeadSettings {
    fn default() -> Self {
        Self {
            spread_tolerance: 1e-7,
            max_iterations: 400,
            newton: NewtonSettings::default(),
            warm_start: true,
            beta_prior_precision: DEFAULT_BETA_PRIOR_PRECISION,
        }
    }
}

/// How the outer optimization ended.
#[derive(Debug, Clone)]
pub struct ConvergenceReport {
    pub converged: bool,
    pub nm_iterations: usize,
    pub nm_evaluations: usize,
    pub final_objective_spread: f64,
    /// Max pairwise distance between simplex vertices in log θ.
    pub final_simplex_diameter: f64,
    pub newton_iterations_at_mode: usize,
}

/// A completed empirical Bayes fit.
#[derive(Debug, Clone)]
pub struct FitResult {
    pub theta_hat: Hyperparams,
    pub x_hat: LatentState,
    pub hessian_at_mode: SparseSymmetric,
    pub log_marginal_posterior: f64,
    /// sqrt of the diagonal of Ĥ(θ̂)⁻¹, length p, ordered as the stacked
    /// state.
    pub std_errors: Vec<f64>,
    pub convergence_report: ConvergenceReport,
    pub covariate_names: Vec<String>,
}

impl FitResult {
    pub fn layout(&self) -> StateLayout {
        self.x_hat.layout()
    }
}

struct Vertex {
    v: [f64; 4],
    f: f64,
    mode: Option<ModeResult>,
}

fn add4(a: [f64; 4], b: [f64; 4], scale: f64) -> [f64; 4] {
    [
        a[0] + scale * b[0],
        a[1] + scale * b[1],
        a[2] + scale * b[2],
        a[3] + scale * b[3],
    ]
}

fn sub4(a: [f64; 4], b: [f64; 4]) -> [f64; 4] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2], a[3] - b[3]]
}

/// Maximize the Laplace marginal posterior over θ by Nelder–Mead in log θ
/// (reflection 1, expansion 2, contraction ½, shrink ½). The initial simplex
/// is the init point plus four vertices perturbing one log-coordinate each by
/// +0.5. Hitting the iteration cap returns a result flagged non-converged
/// rather than an error, so partial output remains available.
pub fn maximize_marginal(
    data: &Dataset,
    init: &Hyperparams,
    settings: &NelderMeadSettings,
) -> Result<FitResult> {
    let laplacian = build_laplacian(data.grid());
    let lik = HurdleLikelihood::new(data);
    let mut warm: Option<Vec<f64>> = None;
    let mut evaluations = 0usize;

    let evaluate = |v: [f64; 4], warm: &mut Option<Vec<f64>>, evals: &mut usize| -> Result<(f64, Option<ModeResult>)> {
        *evals += 1;
        let theta = Hyperparams::from_log(v)?;
        let q = JointPrecision::build_with_beta_precision(
            &theta,
            &laplacian,
            data.k(),
            settings.beta_prior_precision,
        )?;
        let mut newton = settings.newton.clone();
        if settings.warm_start {
            newton.initial_point = warm.clone();
        }
        let (value, mode) = laplace_log_marginal(&lik, &q, &newton)?;
        if settings.warm_start {
            *warm = Some(mode.x_hat.clone());
        }
        Ok((value, Some(mode)))
    };

    // The initial vertex must evaluate; later failures demote a vertex to
    // −∞ and the simplex contracts away from it.
    let v0 = init.to_log();
    let (f0, m0) = evaluate(v0, &mut warm, &mut evaluations)?;
    if !f0.is_finite() {
        return Err(Error::Optimizer(format!(
            "marginal posterior is {f0} at the initial hyperparameters"
        )));
    }
    let mut simplex: Vec<Vertex> = vec![Vertex {
        v: v0,
        f: f0,
        mode: m0,
    }];
    for i in 0..4 {
        let mut v = v0;
        v[i] += 0.5;
        let (f, mode) = match evaluate(v, &mut warm, &mut evaluations) {
            Ok(r) => r,
            Err(_) => (f64::NEG_INFINITY, None),
        };
        simplex.push(Vertex { v, f, mode });
    }

    let mut iterations = 0usize;
    let mut converged = false;
    let try_eval = |v: [f64; 4], warm: &mut Option<Vec<f64>>, evals: &mut usize| -> (f64, Option<ModeResult>) {
        match evaluate(v, warm, evals) {
            Ok(r) => r,
            Err(_) => (f64::NEG_INFINITY, None),
        }
    };

    while iterations < settings.max_iterations {
        // Best first (maximization).
        simplex.sort_by(|a, b| b.f.partial_cmp(&a.f).unwrap_or(std::cmp::Ordering::Equal));
        let spread = simplex[0].f - simplex[4].f;
        if spread.is_finite() && spread < settings.spread_tolerance {
            converged = true;
            break;
        }
        iterations += 1;

        let mut centroid = [0.0; 4];
        for vert in &simplex[0..4] {
            for j in 0..4 {
                centroid[j] += vert.v[j] / 4.0;
            }
        }
        let worst = simplex[4].v;
        let reflected = add4(centroid, sub4(centroid, worst), 1.0);
        let (fr, mr) = try_eval(reflected, &mut warm, &mut evaluations);

        if fr > simplex[0].f {
            // Try to expand past the reflection.
            let expanded = add4(centroid, sub4(centroid, worst), 2.0);
            let (fe, me) = try_eval(expanded, &mut warm, &mut evaluations);
            simplex[4] = if fe > fr {
                Vertex { v: expanded, f: fe, mode: me }
            } else {
                Vertex { v: reflected, f: fr, mode: mr }
            };
        } else if fr > simplex[3].f {
            simplex[4] = Vertex { v: reflected, f: fr, mode: mr };
        } else {
            let (contracted, better_than) = if fr > simplex[4].f {
                // Outside contraction, halfway toward the reflection.
                (add4(centroid, sub4(reflected, centroid), 0.5), fr)
            } else {
                // Inside contraction, halfway toward the worst vertex.
                (add4(centroid, sub4(worst, centroid), 0.5), simplex[4].f)
            };
            let (fc, mc) = try_eval(contracted, &mut warm, &mut evaluations);
            if fc >= better_than {
                simplex[4] = Vertex { v: contracted, f: fc, mode: mc };
            } else {
                // Shrink everything toward the best vertex.
                let best = simplex[0].v;
                for vert in simplex.iter_mut().skip(1) {
                    vert.v = add4(best, sub4(vert.v, best), 0.5);
                    let (f, m) = try_eval(vert.v, &mut warm, &mut evaluations);
                    vert.f = f;
                    vert.mode = m;
                }
            }
        }
    }

    simplex.sort_by(|a, b| b.f.partial_cmp(&a.f).unwrap_or(std::cmp::Ordering::Equal));
    let spread = simplex[0].f - simplex[4].f;
    let mut diameter = 0.0f64;
    for i in 0..5 {
        for j in i + 1..5 {
            let d = sub4(simplex[i].v, simplex[j].v);
            diameter = diameter.max(norm2(&d));
        }
    }
    let best = &simplex[0];
    let mode = best.mode.as_ref().ok_or_else(|| {
        Error::Optimizer("no simplex vertex produced a finite marginal posterior".into())
    })?;
    let theta_hat = Hyperparams::from_log(best.v)?;
    let chol = factor_with_jitter(&mode.hessian_at_mode, settings.newton.ordering)?;
    let variances = chol.diag_inverse();
    let mut std_errors = Vec::with_capacity(variances.len());
    for (j, v) in variances.iter().enumerate() {
        if !(*v > 0.0) || !v.is_finite() {
            return Err(Error::NotPositiveDefinite(format!(
                "posterior variance {v} at coordinate {j}"
            )));
        }
        std_errors.push(v.sqrt());
    }
    let x_hat = LatentState::from_stacked(&mode.x_hat, data.layout())?;

    Ok(FitResult {
        theta_hat,
        x_hat,
        hessian_at_mode: mode.hessian_at_mode.clone(),
        log_marginal_posterior: best.f,
        std_errors,
        convergence_report: ConvergenceReport {
            converged,
            nm_iterations: iterations,
            nm_evaluations: evaluations,
            final_objective_spread: spread,
            final_simplex_diameter: diameter,
            newton_iterations_at_mode: mode.newton.iterations,
        },
        covariate_names: data.covariate_names().to_vec(),
    })
}

/// Inverse standard normal CDF (Acklam's rational approximation, relative
/// error below 1.2e-9 across (0, 1)).
pub fn inverse_normal_cdf(prob: f64) -> Result<f64> {
    if !(prob > 0.0 && prob < 1.0) {
        return Err(Error::Invalid(format!(
            "normal quantile needs a probability in (0, 1), got {prob}"
        )));
    }
    const A: [f64; 6] = [
        -3.969683028665376e+01,
        2.209460984245205e+02,
        -2.759285104469687e+02,
        1.383577518672690e+02,
        -3.066479806614716e+01,
        2.506628277459239e+00,
    ];
    const B: [f64; 5] = [
        -5.447609879822406e+01,
        1.615858368580409e+02,
        -1.556989798598866e+02,
        6.680131188771972e+01,
        -1.328068155288572e+01,
    ];
    const C: [f64; 6] = [
        -7.784894002430293e-03,
        -3.223964580411365e-01,
        -2.400758277161838e+00,
        -2.549732539343734e+00,
        4.374664141464968e+00,
        2.938163982698783e+00,
    ];
    const D: [f64; 4] = [
        7.784695709041462e-03,
        3.224671290700398e-01,
        2.445134137142996e+00,
        3.754408661907416e+00,
    ];
    const P_LOW: f64 = 0.02425;

    let tail = |p: f64| -> f64 {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    };

    Ok(if prob < P_LOW {
        tail(prob)
    } else if prob <= 1.0 - P_LOW {
        let q = prob - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        -tail(1.0 - prob)
    })
}

/// Symmetric normal interval: estimate ± z_{1−α/2} · std_error.
pub fn normal_interval(estimate: f64, std_error: f64, alpha: f64) -> Result<(f64, f64)> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Invalid(format!("alpha must be in (0, 1), got {alpha}")));
    }
    let z = inverse_normal_cdf(1.0 - alpha / 2.0)?;
    Ok((estimate - z * std_error, estimate + z * std_error))
}

/// Posterior covariance of the 2(k+1) regression coefficients: the leading
/// block of Ĥ(θ̂)⁻¹, extracted by solving Ĥ e_j for each coefficient column.
/// Unlike the marginal variances in `std_errors`, this includes the
/// cross-coefficient terms needed to propagate uncertainty through linear
/// reparameterizations of the design.
pub fn beta_covariance(fit: &FitResult) -> Result<Vec<Vec<f64>>> {
    let layout = fit.layout();
    let p = layout.dim();
    let m = 2 * (layout.beta0().len());
    let chol = SparseCholesky::factor(&fit.hessian_at_mode, FillOrdering::ReverseCuthillMcKee)?;
    let mut cov = vec![vec![0.0; m]; m];
    for j in 0..m {
        let mut e = vec![0.0; p];
        e[j] = 1.0;
        let col = chol.solve(&e);
        for i in 0..m {
            cov[i][j] = col[i];
        }
    }
    Ok(cov)
}

/// Per-coordinate (lower, upper) intervals over the whole stacked state.
pub fn confidence_intervals(fit: &FitResult, alpha: f64) -> Result<Vec<(f64, f64)>> {
    let x = fit.x_hat.to_stacked();
    x.iter()
        .zip(&fit.std_errors)
        .map(|(est, se)| normal_interval(*est, *se, alpha))
        .collect()
}

/// One labeled regression coefficient with its interval.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientInterval {
    pub name: String,
    pub estimate: f64,
    pub lower: f64,
    pub upper: f64,
    pub significant: bool,
}

fn is_significant(lower: f64, upper: f64) -> bool {
    !(lower <= 0.0 && 0.0 <= upper)
}

/// The 2(k+1) regression coefficients with intervals and significance flags
/// (zero outside the interval), labeled `beta0_*` / `beta_plus_*`.
pub fn coefficient_table(fit: &FitResult, alpha: f64) -> Result<Vec<CoefficientInterval>> {
    let layout = fit.layout();
    let x = fit.x_hat.to_stacked();
    let intervals = confidence_intervals(fit, alpha)?;
    let mut names = vec!["intercept".to_string()];
    names.extend(fit.covariate_names.iter().cloned());
    let mut out = Vec::with_capacity(2 * (layout.k + 1));
    for (prefix, range) in [("beta0", layout.beta0()), ("beta_plus", layout.beta_plus())] {
        for (slot, j) in range.enumerate() {
            let (lower, upper) = intervals[j];
            out.push(CoefficientInterval {
                name: format!("{prefix}_{}", names[slot]),
                estimate: x[j],
                lower,
                upper,
                significant: is_significant(lower, upper),
            });
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Fit bundle serialization
// ---------------------------------------------------------------------------

/// The on-disk fit bundle reduced to what downstream prediction and
/// diagnostics need.
#[derive(Debug, Clone)]
pub struct FitBundle {
    pub theta: Hyperparams,
    pub state: LatentState,
    pub covariate_names: Vec<String>,
}

fn fmt_full(v: f64) -> String {
    format!("{v:.16e}")
}

/// Write theta.csv, coefficients.csv, latent_fields.csv, and report.txt into
/// `dir` (created if absent). Machine files carry 17 significant digits; the
/// report rounds to 4 and contains no paths or timestamps, so reruns are
/// byte-identical.
pub fn write_fit_bundle(fit: &FitResult, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let table = coefficient_table(fit, 0.05)?;

    let mut theta = String::from("parameter,estimate\n");
    for (name, value) in [
        ("kappa0", fit.theta_hat.kappa0()),
        ("tau0", fit.theta_hat.tau0()),
        ("kappa_plus", fit.theta_hat.kappa_plus()),
        ("tau_plus", fit.theta_hat.tau_plus()),
    ] {
        let _ = writeln!(theta, "{name},{}", fmt_full(value));
    }
    std::fs::write(dir.join("theta.csv"), theta)?;

    let mut coef = String::from("parameter,estimate,lower,upper,significant\n");
    for row in &table {
        let _ = writeln!(
            coef,
            "{},{},{},{},{}",
            row.name,
            fmt_full(row.estimate),
            fmt_full(row.lower),
            fmt_full(row.upper),
            row.significant
        );
    }
    std::fs::write(dir.join("coefficients.csv"), coef)?;

    let mut fields = String::from("cell,u0,up\n");
    for (i, (u0, up)) in fit.x_hat.u0.iter().zip(&fit.x_hat.u_plus).enumerate() {
        let _ = writeln!(fields, "{i},{},{}", fmt_full(*u0), fmt_full(*up));
    }
    std::fs::write(dir.join("latent_fields.csv"), fields)?;

    let report = render_report(fit, &table);
    std::fs::write(dir.join("report.txt"), report)?;
    Ok(())
}

fn render_report(fit: &FitResult, table: &[CoefficientInterval]) -> String {
    let cr = &fit.convergence_report;
    let mut s = String::new();
    let _ = writeln!(s, "spatial-hurdle {}", env!("CARGO_PKG_VERSION"));
    let _ = writeln!(
        s,
        "converged: {}",
        if cr.converged { "yes" } else { "no" }
    );
    let _ = writeln!(
        s,
        "log marginal posterior: {:.4}",
        fit.log_marginal_posterior
    );
    let _ = writeln!(
        s,
        "theta_hat: kappa0={:.4} tau0={:.4} kappa_plus={:.4} tau_plus={:.4}",
        fit.theta_hat.kappa0(),
        fit.theta_hat.tau0(),
        fit.theta_hat.kappa_plus(),
        fit.theta_hat.tau_plus()
    );
    let _ = writeln!(
        s,
        "nelder-mead: {} iterations, {} evaluations, objective spread {:.3e}, simplex diameter {:.3e}",
        cr.nm_iterations, cr.nm_evaluations, cr.final_objective_spread, cr.final_simplex_diameter
    );
    let _ = writeln!(
        s,
        "newton iterations at final mode: {}",
        cr.newton_iterations_at_mode
    );
    let _ = writeln!(s, "coefficients (95% intervals):");
    for row in table {
        let _ = writeln!(
            s,
            "  {:<24} {:>12.4}  [{:.4}, {:.4}]{}",
            row.name,
            row.estimate,
            row.lower,
            row.upper,
            if row.significant { "  significant" } else { "" }
        );
    }
    let n = fit.x_hat.u0.len() as f64;
    let sd = |u: &[f64]| -> f64 {
        let mean = u.iter().sum::<f64>() / n;
        (u.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt()
    };
    let _ = writeln!(
        s,
        "latent field sd: u0={:.4} u_plus={:.4}",
        sd(&fit.x_hat.u0),
        sd(&fit.x_hat.u_plus)
    );
    s
}

fn read_csv_rows(path: &Path) -> Result<Vec<Vec<String>>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| Error::from_csv(e, path))?;
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::from_csv(e, path))?;
        rows.push(record.iter().map(|s| s.to_string()).collect());
    }
    Ok(rows)
}

fn parse_bundle_float(path: &Path, line: usize, field: &str) -> Result<f64> {
    field.trim().parse::<f64>().map_err(|_| Error::Record {
        path: path.to_path_buf(),
        line: line as u64 + 2,
        message: format!("expected a number, got {field:?}"),
    })
}

/// Read back a bundle written by [`write_fit_bundle`]. The latent dimensions
/// are recovered from the file shapes; the caller supplies the matching
/// dataset separately.
pub fn read_fit_bundle(dir: &Path) -> Result<FitBundle> {
    let theta_path = dir.join("theta.csv");
    let mut theta_vals = std::collections::HashMap::new();
    for (i, row) in read_csv_rows(&theta_path)?.iter().enumerate() {
        if row.len() != 2 {
            return Err(Error::Record {
                path: theta_path.clone(),
                line: i as u64 + 2,
                message: format!("expected 2 fields, got {}", row.len()),
            });
        }
        theta_vals.insert(row[0].clone(), parse_bundle_float(&theta_path, i, &row[1])?);
    }
    let lookup = |key: &str| -> Result<f64> {
        theta_vals.get(key).copied().ok_or_else(|| Error::FileFormat {
            path: theta_path.clone(),
            message: format!("missing hyperparameter row {key:?}"),
        })
    };
    let theta = Hyperparams::new(
        lookup("kappa0")?,
        lookup("tau0")?,
        lookup("kappa_plus")?,
        lookup("tau_plus")?,
    )?;

    let coef_path = dir.join("coefficients.csv");
    let mut beta0 = Vec::new();
    let mut beta_plus = Vec::new();
    let mut covariate_names = Vec::new();
    for (i, row) in read_csv_rows(&coef_path)?.iter().enumerate() {
        if row.len() != 5 {
            return Err(Error::Record {
                path: coef_path.clone(),
                line: i as u64 + 2,
                message: format!("expected 5 fields, got {}", row.len()),
            });
        }
        let estimate = parse_bundle_float(&coef_path, i, &row[1])?;
        if let Some(name) = row[0].strip_prefix("beta0_") {
            if name != "intercept" {
                covariate_names.push(name.to_string());
            }
            beta0.push(estimate);
        } else if row[0].starts_with("beta_plus_") {
            beta_plus.push(estimate);
        } else {
            return Err(Error::FileFormat {
                path: coef_path.clone(),
                message: format!("unrecognized coefficient name {:?}", row[0]),
            });
        }
    }
    if beta0.is_empty() || beta0.len() != beta_plus.len() {
        return Err(Error::FileFormat {
            path: coef_path.clone(),
            message: format!(
                "coefficient blocks disagree: {} zero-part vs {} count-part rows",
                beta0.len(),
                beta_plus.len()
            ),
        });
    }

    let fields_path = dir.join("latent_fields.csv");
    let mut u0 = Vec::new();
    let mut u_plus = Vec::new();
    for (i, row) in read_csv_rows(&fields_path)?.iter().enumerate() {
        if row.len() != 3 {
            return Err(Error::Record {
                path: fields_path.clone(),
                line: i as u64 + 2,
                message: format!("expected 3 fields, got {}", row.len()),
            });
        }
        u0.push(parse_bundle_float(&fields_path, i, &row[1])?);
        u_plus.push(parse_bundle_float(&fields_path, i, &row[2])?);
    }
    if u0.is_empty() {
        return Err(Error::FileFormat {
            path: fields_path,
            message: "no latent field rows".into(),
        });
    }

    let state = LatentState {
        beta0,
        beta_plus,
        u0,
        u_plus,
    };
    Ok(FitBundle {
        theta,
        state,
        covariate_names,
    })
}
