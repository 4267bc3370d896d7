//! Three-step estimation pipeline.
//!
//! 1. Per-period ridge-penalized quantile regression of `y_it` on the sieve
//!    `H_m(x_it)` gives `Ψ̂` (the per-period objectives share the panel-wide
//!    normalizer `Σ_t n_t`, so the separable global objective is minimized
//!    exactly).
//! 2. Eigen-decomposition of `T^{−1}Ψ̂Ψ̂'` gives `F̂`, `Γ̂` and `V̂`.
//! 3. Closed-form inversion of each `γ̂_k` recovers `θ̂_k` (after resolving
//!    column signs), then one joint unpenalized quantile regression refits
//!    all sieve coefficients `b̂_{k,ℓ}` on the constructed regressors
//!    `f̂_{t(k)} h_ℓ(x_it'θ̂_k)`.
//!
//! A fit with truncation `m = 1` has constant loadings; its index parameters
//! are unidentifiable and flagged rather than guessed.

use ndarray::{Array1, Array2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::factors::{extract_factors, normalize_signs, FactorEstimate};
use crate::panel::Panel;
use crate::qr::{solve_plain, solve_penalized, QrProblem};
use crate::recovery::{
    loading_matrix, provisional_first_element, recover_theta, refit_loadings,
};
use crate::sieve::{GammaVector, SieveBasis};

/// Hyperparameters of one fit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub tau: f64,
    /// Number of latent factors.
    pub r: usize,
    /// Sieve truncation order (`ℓ = 0..m−1`).
    pub m: usize,
    /// Ridge weight `a` of the step-1 penalty.
    pub ridge: f64,
}

/// Diagnostic flags accumulated across the three steps.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct FitFlags {
    /// Step-1 periods whose solver failed the stationarity certificate.
    pub step1_nonconverged: usize,
    /// Requested factor count exceeds the numerical rank of `Ψ̂`.
    pub rank_deficient: bool,
    /// Retained eigenvalues nearly tied: the distinct-entries
    /// identification condition is empirically violated.
    pub near_tied: bool,
    /// Per-factor: index parameter not identifiable from `γ̂_k` (constant
    /// loading or empty higher-degree blocks); `θ̂_k` is a placeholder.
    pub theta_unidentified: Vec<bool>,
    /// Per-factor: column sign left unresolved.
    pub sign_unidentified: Vec<bool>,
    /// Per-factor: recovered index norm was far from 1 before projection.
    pub norm_flagged: Vec<bool>,
    /// The joint refit hit a rank-deficient constructed design.
    pub refit_nonunique: bool,
}

impl FitFlags {
    /// Hard degeneracy: the estimate should not be consumed silently.
    pub fn is_degenerate(&self) -> bool {
        self.rank_deficient || self.theta_unidentified.iter().any(|&b| b)
    }
}

/// Fitted QCF model.
#[derive(Debug, Clone)]
pub struct QcfFit {
    pub config: FitConfig,
    pub basis: SieveBasis,
    /// Step-1 coefficients, `T × M`.
    pub psi: Array2<f64>,
    pub factors: FactorEstimate,
    /// Index parameters, `d × r`, unit columns.
    pub thetas: Array2<f64>,
    /// Refitted sieve coefficients, `m × r`.
    pub b: Array2<f64>,
    /// Per-factor `b̂_ℓ` recovered at the inversion degree (enters the
    /// plug-in covariance); zero for unidentified factors.
    pub b_recovered: Vec<f64>,
    /// Per-factor inversion degree; zero for unidentified factors.
    pub recovery_degree: Vec<usize>,
    /// Period keys of the fitted panel, in order.
    pub period_keys: Vec<String>,
    pub flags: FitFlags,
}

/// Run the three-step estimation on `panel`.
pub fn fit_qcf(panel: &Panel, config: &FitConfig) -> Result<QcfFit> {
    let basis = check_config(panel, config)?;
    let (psi, step1_nonconverged) = step1_coefficients(panel, &basis, config.tau, config.ridge)?;
    fit_from_psi(panel, basis, psi, step1_nonconverged, config)
}

fn check_config(panel: &Panel, config: &FitConfig) -> Result<SieveBasis> {
    if !(config.tau > 0.0 && config.tau < 1.0) {
        return Err(Error::InvalidInput(format!(
            "tau must lie strictly inside (0,1), got {}",
            config.tau
        )));
    }
    if !config.ridge.is_finite() || config.ridge < 0.0 {
        return Err(Error::InvalidInput("ridge weight must be >= 0".into()));
    }
    let t_len = panel.n_periods();
    let basis = SieveBasis::new(config.m, panel.dim())?;
    let m_len = basis.len();
    if config.r < 1 || config.r > t_len.min(m_len) {
        return Err(Error::InvalidInput(format!(
            "factor count r={} must satisfy 1 <= r <= min(T={t_len}, M={m_len})",
            config.r
        )));
    }
    Ok(basis)
}

/// Step 1 alone: per-period penalized quantile regressions, all sharing the
/// panel-wide loss normalizer. Returns `Ψ̂` (`T × M`) and the count of
/// periods whose solver missed the stationarity certificate. Exposed
/// separately because the result depends only on `(m, ridge, tau)` and can
/// be reused across factor-count candidates during selection.
pub fn step1_coefficients(
    panel: &Panel,
    basis: &SieveBasis,
    tau: f64,
    ridge: f64,
) -> Result<(Array2<f64>, usize)> {
    let t_len = panel.n_periods();
    let m_len = basis.len();
    let loss_norm = panel.n_total() as f64;
    let per_period: Vec<Result<(Vec<f64>, bool)>> = (0..t_len)
        .into_par_iter()
        .map(|t| {
            let rows = panel.rows(t);
            let n_t = rows.len();
            if n_t == 0 {
                return Err(Error::Degenerate(format!(
                    "period {} has no observations",
                    panel.period_key(t)
                )));
            }
            let mut design = Array2::zeros((n_t, m_len));
            let mut response = Array1::zeros(n_t);
            for (local, row) in rows.enumerate() {
                let mut buf = vec![0.0; m_len];
                basis.eval_into(panel.x_row(row), &mut buf);
                design.row_mut(local).assign(&Array1::from_vec(buf));
                response[local] = panel.y_row(row);
            }
            let problem = QrProblem::new(design, response, tau)?
                .with_ridge(ridge)
                .with_loss_norm(loss_norm);
            let solution = solve_penalized(&problem)?;
            Ok((solution.coefficients.to_vec(), solution.converged))
        })
        .collect();

    let mut psi = Array2::zeros((t_len, m_len));
    let mut nonconverged = 0usize;
    for (t, res) in per_period.into_iter().enumerate() {
        let (coeffs, converged) = res?;
        if !converged {
            nonconverged += 1;
        }
        psi.row_mut(t).assign(&Array1::from_vec(coeffs));
    }
    Ok((psi, nonconverged))
}

/// Steps 2 and 3 given precomputed step-1 coefficients.
pub fn fit_from_psi(
    panel: &Panel,
    basis: SieveBasis,
    psi: Array2<f64>,
    step1_nonconverged: usize,
    config: &FitConfig,
) -> Result<QcfFit> {
    let d = panel.dim();
    check_config(panel, config)?;
    if psi.dim() != (panel.n_periods(), basis.len()) {
        return Err(Error::Dimension(format!(
            "psi has shape {:?}, expected ({}, {})",
            psi.dim(),
            panel.n_periods(),
            basis.len()
        )));
    }

    // Step 2: eigen-decomposition.
    let mut factors = extract_factors(psi.view(), config.r)?;

    // Step 3: sign normalization, index recovery, joint refit.
    let r = config.r;
    let mut theta_unidentified = vec![false; r];
    let mut norm_flagged = vec![false; r];
    let mut recovery_degree = vec![0usize; r];
    let mut b_recovered = vec![0.0f64; r];
    let mut thetas = Array2::zeros((d, r));

    if config.m >= 2 {
        let mut provisional = vec![0.0f64; r];
        for k in 0..r {
            let gamma = GammaVector(factors.gamma.column(k).to_vec());
            match provisional_first_element(&gamma, &basis) {
                Ok((_, first)) => provisional[k] = first,
                Err(_) => {
                    theta_unidentified[k] = true;
                    // Leave the provisional element positive so the column
                    // is not flipped.
                    provisional[k] = 1.0;
                }
            }
        }
        factors = normalize_signs(factors, &provisional)?;
        for k in 0..r {
            if theta_unidentified[k] {
                thetas[[0, k]] = 1.0;
                continue;
            }
            let gamma = GammaVector(factors.gamma.column(k).to_vec());
            match provisional_first_element(&gamma, &basis)
                .and_then(|(ell, _)| recover_theta(&gamma, ell, &basis))
            {
                Ok(idx) => {
                    for j in 0..d {
                        thetas[[j, k]] = idx.theta[j];
                    }
                    recovery_degree[k] = idx.recovery_degree;
                    b_recovered[k] = idx.b_recovered;
                    norm_flagged[k] = idx.norm_flagged;
                    if idx.first_element_flagged {
                        factors.sign_unidentified[k] = true;
                    }
                }
                Err(_) => {
                    theta_unidentified[k] = true;
                    thetas[[0, k]] = 1.0;
                }
            }
        }
    } else {
        // Constant loadings: no index information at all.
        for k in 0..r {
            theta_unidentified[k] = true;
            thetas[[0, k]] = 1.0;
        }
    }

    let (b, refit_solution) = refit_loadings(
        panel,
        factors.factors.view(),
        thetas.view(),
        config.m,
        config.tau,
    )?;

    let flags = FitFlags {
        step1_nonconverged,
        rank_deficient: factors.rank_deficient,
        near_tied: factors.near_tied,
        theta_unidentified,
        sign_unidentified: factors.sign_unidentified.clone(),
        norm_flagged,
        refit_nonunique: refit_solution.non_unique,
    };

    Ok(QcfFit {
        config: *config,
        basis,
        psi,
        factors,
        thetas,
        b,
        b_recovered,
        recovery_degree,
        period_keys: panel.period_keys().to_vec(),
        flags,
    })
}

impl QcfFit {
    pub fn n_periods(&self) -> usize {
        self.factors.factors.nrows()
    }

    pub fn dim(&self) -> usize {
        self.thetas.nrows()
    }

    /// Loading function value `λ̂_k(x'θ̂_k)`.
    pub fn loading(&self, k: usize, x: &[f64]) -> f64 {
        let theta: Vec<f64> = (0..self.dim()).map(|j| self.thetas[[j, k]]).collect();
        let b: Vec<f64> = (0..self.config.m).map(|ell| self.b[[ell, k]]).collect();
        crate::recovery::eval_loading(&b, &theta, x)
    }

    /// Fitted conditional quantiles for `panel`, whose period keys must all
    /// appear among the fitted periods. Returns values aligned to the
    /// panel's row order.
    pub fn fitted_on(&self, panel: &Panel) -> Result<Array1<f64>> {
        if panel.dim() != self.dim() {
            return Err(Error::Dimension(format!(
                "panel has d={}, fit has d={}",
                panel.dim(),
                self.dim()
            )));
        }
        let lambda = loading_matrix(panel, self.thetas.view(), self.b.view());
        let r = self.config.r;
        let mut out = Array1::zeros(panel.n_total());
        for (t, key) in panel.period_keys().iter().enumerate() {
            let ft = self
                .period_keys
                .iter()
                .position(|k| k == key)
                .ok_or_else(|| {
                    Error::InvalidInput(format!("period {key} was not part of the fit"))
                })?;
            for row in panel.rows(t) {
                let mut q = 0.0;
                for k in 0..r {
                    q += self.factors.factors[[ft, k]] * lambda[[row, k]];
                }
                out[row] = q;
            }
        }
        Ok(out)
    }

    /// Post-hoc factor realization on a held-out period: cross-sectional
    /// unpenalized quantile regression of that period's outcomes on the
    /// loadings implied by its own characteristics. Returns the realized
    /// factor vector and the fitted quantiles for the period's rows.
    pub fn realize_factors(
        &self,
        panel: &Panel,
        t: usize,
    ) -> Result<(Array1<f64>, Array1<f64>)> {
        if panel.dim() != self.dim() {
            return Err(Error::Dimension(format!(
                "panel has d={}, fit has d={}",
                panel.dim(),
                self.dim()
            )));
        }
        let rows = panel.rows(t);
        let n = rows.len();
        let r = self.config.r;
        if n == 0 {
            return Err(Error::Degenerate(format!(
                "period {} has no observations to realize factors on",
                panel.period_key(t)
            )));
        }
        let mut design = Array2::zeros((n, r));
        let mut response = Array1::zeros(n);
        for (local, row) in rows.enumerate() {
            let x = panel.x_row(row);
            for k in 0..r {
                design[[local, k]] = self.loading(k, x);
            }
            response[local] = panel.y_row(row);
        }
        let solution = solve_plain(design.view(), response.view(), self.config.tau)?;
        let fitted = design.dot(&solution.coefficients);
        Ok((solution.coefficients, fitted))
    }
}
