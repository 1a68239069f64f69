//! Synthetic data from the full generative model: GMRF fields by sparse
//! Cholesky transform, then hurdle counts cell by cell.
//!
//! All randomness flows through a counter-style keyed generator: each
//! (seed, stream, cell) triple deterministically keys its own ChaCha stream,
//! so generation order — or parallel generation — cannot change the output.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};

use crate::error::{Error, Result};
use crate::gmrf::{build_q_block, Hyperparams};
use crate::grid::{build_laplacian, GridSpec};
use crate::hurdle_model::{link_lambda, link_pi, Dataset, DesignMatrix, LatentState};
use crate::sparse::{FillOrdering, SparseCholesky};

/// Stream tags separating the independent random sources of one simulation.
const STREAM_FIELD0: u64 = 0x01;
const STREAM_FIELD_PLUS: u64 = 0x02;
const STREAM_OCCURRENCE: u64 = 0x03;
const STREAM_COUNT: u64 = 0x04;
const STREAM_COVARIATE: u64 = 0x10;

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// A generator keyed by (seed, stream, index): mixing the triple through
/// splitmix64 yields the key of an independent ChaCha stream. ChaCha8 is
/// pinned explicitly (rather than the library default generator) so streams
/// stay stable across dependency upgrades.
pub fn keyed_rng(seed: u64, stream: u64, index: u64) -> ChaCha8Rng {
    let mut state = seed;
    let a = splitmix64(&mut state);
    state ^= stream;
    let b = splitmix64(&mut state);
    state ^= index;
    let c = splitmix64(&mut state);
    let mut key = [0u8; 32];
    key[0..8].copy_from_slice(&a.to_le_bytes());
    key[8..16].copy_from_slice(&b.to_le_bytes());
    key[16..24].copy_from_slice(&c.to_le_bytes());
    key[24..32].copy_from_slice(&splitmix64(&mut state).to_le_bytes());
    ChaCha8Rng::from_seed(key)
}

fn standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    rand_distr::StandardNormal.sample(rng)
}

/// One draw U ~ MVN(0, Q(κ,τ)⁻¹) over the grid's active cells: draw
/// z ~ N(0, I) with one keyed stream per cell, then apply the inverse
/// square-root transform from the sparse factorization of Q. `stream`
/// separates independent draws under the same seed.
pub fn sample_gmrf(
    kappa: f64,
    tau: f64,
    grid: &GridSpec,
    seed: u64,
    stream: u64,
) -> Result<Vec<f64>> {
    let laplacian = build_laplacian(grid);
    let q = build_q_block(kappa, tau, &laplacian)?;
    let chol = SparseCholesky::factor(&q, FillOrdering::ReverseCuthillMcKee)?;
    let z: Vec<f64> = (0..grid.n_cells())
        .map(|i| standard_normal(&mut keyed_rng(seed, stream, i as u64)))
        .collect();
    Ok(chol.sample_transform(&z))
}

/// Zero-truncated Poisson draw. Rejection of zeros is cheap for moderate λ;
/// below 1e-4 the acceptance rate collapses, so small λ switches to direct
/// CDF inversion (which also covers the λ → 0 point mass at 1).
fn sample_ztp<R: Rng>(rng: &mut R, lambda: f64) -> u64 {
    if lambda <= 0.0 {
        return 1;
    }
    if lambda < 1e-4 {
        let u: f64 = rng.gen();
        let denom = -(-lambda).exp_m1();
        let mut y = 1u64;
        let mut term = lambda * (-lambda).exp() / denom;
        let mut cum = term;
        while u > cum && y < 500 {
            y += 1;
            term *= lambda / y as f64;
            cum += term;
        }
        return y;
    }
    let poisson = Poisson::new(lambda).expect("positive finite rate");
    loop {
        let draw: f64 = poisson.sample(rng);
        if draw >= 1.0 {
            return draw as u64;
        }
    }
}

/// One hurdle count: Bernoulli(π(η₀)), then zero-truncated Poisson(λ(η₊))
/// on success.
pub fn sample_count<R: Rng>(rng: &mut R, eta0: f64, eta_p: f64) -> u64 {
    let pi = link_pi(eta0);
    let u: f64 = rng.gen();
    if u < pi {
        sample_ztp(rng, link_lambda(eta_p))
    } else {
        0
    }
}

/// Counts for every active cell given the latent state and design, streams
/// keyed per cell.
pub fn sample_counts(
    x: &LatentState,
    grid: &GridSpec,
    design: &DesignMatrix,
    seed: u64,
) -> Result<Vec<u64>> {
    let n = grid.n_cells();
    if design.n_rows() != n || x.u0.len() != n {
        return Err(Error::Dimension {
            context: "simulation design rows",
            expected: n,
            got: design.n_rows(),
        });
    }
    if design.n_cols() != x.beta0.len() || x.beta0.len() != x.beta_plus.len() {
        return Err(Error::Dimension {
            context: "simulation coefficients",
            expected: design.n_cols(),
            got: x.beta0.len(),
        });
    }
    let mut counts = Vec::with_capacity(n);
    for i in 0..n {
        let z = design.row(i);
        let eta0: f64 = z.iter().zip(&x.beta0).map(|(a, b)| a * b).sum::<f64>() + x.u0[i];
        let eta_p: f64 =
            z.iter().zip(&x.beta_plus).map(|(a, b)| a * b).sum::<f64>() + x.u_plus[i];
        let mut rng = keyed_rng(seed, STREAM_OCCURRENCE, i as u64);
        let pi = link_pi(eta0);
        let u: f64 = rng.gen();
        if u < pi {
            let mut crng = keyed_rng(seed, STREAM_COUNT, i as u64);
            counts.push(sample_ztp(&mut crng, link_lambda(eta_p)));
        } else {
            counts.push(0);
        }
    }
    Ok(counts)
}

/// How one covariate column is generated.
#[derive(Debug, Clone, PartialEq)]
pub enum CovariateSpec {
    Constant(f64),
    Uniform { low: f64, high: f64 },
    /// One value per active cell, in grid order.
    Supplied(Vec<f64>),
}

/// Full generative configuration. A fixed seed pins every random choice, so
/// equal configs produce byte-identical datasets.
#[derive(Debug, Clone)]
pub struct SimConfig {
    pub n_rows: usize,
    pub n_cols: usize,
    /// Zero-part coefficients (intercept first), length k+1.
    pub beta0: Vec<f64>,
    /// Count-part coefficients, same length.
    pub beta_plus: Vec<f64>,
    pub theta: Hyperparams,
    pub covariates: Vec<(String, CovariateSpec)>,
    pub seed: u64,
}

impl SimConfig {
    fn validate(&self) -> Result<()> {
        if self.beta0.len() != self.covariates.len() + 1
            || self.beta_plus.len() != self.beta0.len()
        {
            return Err(Error::Invalid(format!(
                "coefficient vectors must have length {} (intercept + one per covariate); got {} and {}",
                self.covariates.len() + 1,
                self.beta0.len(),
                self.beta_plus.len()
            )));
        }
        Ok(())
    }
}

/// Simulate a dataset and return it with the latent truth that generated it.
pub fn simulate_dataset(config: &SimConfig) -> Result<(Dataset, LatentState)> {
    config.validate()?;
    let grid = GridSpec::full(config.n_rows, config.n_cols)?;
    let n = grid.n_cells();
    let k = config.covariates.len();

    let mut names = Vec::with_capacity(k);
    let mut columns: Vec<Vec<f64>> = Vec::with_capacity(k);
    for (j, (name, spec)) in config.covariates.iter().enumerate() {
        let column = match spec {
            CovariateSpec::Constant(v) => vec![*v; n],
            CovariateSpec::Uniform { low, high } => {
                if !(low < high) {
                    return Err(Error::Invalid(format!(
                        "uniform covariate {name:?} needs low < high, got [{low}, {high})"
                    )));
                }
                (0..n)
                    .map(|i| {
                        keyed_rng(config.seed, STREAM_COVARIATE + j as u64, i as u64)
                            .gen_range(*low..*high)
                    })
                    .collect()
            }
            CovariateSpec::Supplied(values) => {
                if values.len() != n {
                    return Err(Error::Dimension {
                        context: "supplied covariate",
                        expected: n,
                        got: values.len(),
                    });
                }
                values.clone()
            }
        };
        names.push(name.clone());
        columns.push(column);
    }

    let mut rows = Vec::with_capacity(n);
    for i in 0..n {
        let mut row = Vec::with_capacity(k + 1);
        row.push(1.0);
        for column in &columns {
            row.push(column[i]);
        }
        rows.push(row);
    }
    let design = DesignMatrix::from_rows(rows)?;

    let u0 = sample_gmrf(
        config.theta.kappa0(),
        config.theta.tau0(),
        &grid,
        config.seed,
        STREAM_FIELD0,
    )?;
    let u_plus = sample_gmrf(
        config.theta.kappa_plus(),
        config.theta.tau_plus(),
        &grid,
        config.seed,
        STREAM_FIELD_PLUS,
    )?;
    let truth = LatentState {
        beta0: config.beta0.clone(),
        beta_plus: config.beta_plus.clone(),
        u0,
        u_plus,
    };

    let counts = sample_counts(&truth, &grid, &design, config.seed)?;
    let data = Dataset::new(grid, counts, design, names)?;
    Ok((data, truth))
}
