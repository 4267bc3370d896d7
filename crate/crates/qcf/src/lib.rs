//! Characteristics-augmented quantile factor (QCF) models.
//!
//! The conditional τ-quantile of a panel outcome is modeled as
//!
//! ```text
//! Q_{y_it}(τ | x_it, f_t) = Σ_{k=1}^r f_{t(k)} λ_k(x_it'θ_k),
//! ```
//!
//! with latent factors `f_t`, unknown loading functions `λ_k` and unit-norm
//! index parameters `θ_k` over observed characteristics `x_it`. Estimation is
//! a three-step procedure: (1) per-period ridge-penalized quantile regression
//! on a Hermite tensor sieve, (2) eigen-decomposition of the stacked
//! coefficients into factors and intermediate loading coefficients, and
//! (3) closed-form recovery of each index parameter followed by a joint
//! quantile refit of the sieve coefficients.
//!
//! The crate ships the estimator ([`pipeline`]), plug-in inference for the
//! index parameters ([`inference`]), data-driven hyperparameter selection
//! ([`select`]), quantile fit metrics and a rolling out-of-sample harness
//! ([`metrics`]), and a simulation/benchmark suite ([`sim`]). The `qcf`
//! binary exposes `fit`, `simulate`, `evaluate`, `infer` and `select`
//! subcommands over long-format CSV panels.

pub mod artifacts;
pub mod error;
pub mod factors;
pub mod inference;
pub mod metrics;
pub mod panel;
pub mod pipeline;
pub mod qr;
pub mod recovery;
pub mod select;
pub mod sieve;
pub mod sim;

pub use error::{Error, Result};
pub use factors::{extract_factors, normalize_signs, FactorEstimate};
pub use panel::Panel;
pub use pipeline::{fit_qcf, FitConfig, QcfFit};
pub use qr::{quantile_loss, solve_penalized, solve_plain, QrProblem, QrSolution};
pub use sieve::{hermite, GammaVector, MultiIndex, SieveBasis};
