//! Spatial Poisson hurdle models with latent Gaussian Markov random field
//! (GMRF) effects, fit by empirical Bayes.
//!
//! The model treats monthly presence/absence and positive counts on a raster
//! grid as two coupled processes: a Bernoulli hurdle for whether any event
//! occurs in a cell, and a zero-truncated Poisson for how many occur given at
//! least one. Each process carries its own regression coefficients and its own
//! spatially correlated latent field with a conditional autoregressive prior
//! built from the grid's 4-neighbour graph Laplacian.
//!
//! Hyperparameters (one precision scale and one range parameter per field) are
//! chosen by maximizing a Laplace approximation to the marginal posterior: an
//! inner damped Newton solve locates the conditional mode of the latent
//! vector, and a derivative-free Nelder-Mead search moves the hyperparameters
//! in log space. See [`inference`] for the estimation machinery, and
//! [`simulate`] for generating synthetic data with known ground truth.
//!
//! A thin command-line binary wraps the library: `fit`, `predict`, `diagnose`,
//! `simulate`, `aggregate`, and `derive-rh` subcommands cover the end-to-end
//! pipeline from daily rasters to fitted-model diagnostics. The `examples/`
//! directory shows the same flows through the library API.

pub mod cli;
pub mod climate;
pub mod diagnostics;
pub mod error;
pub mod gmrf;
pub mod grid;
pub mod hurdle_model;
pub mod inference;
pub mod simulate;
pub mod sparse;

pub use error::{Error, Result};
