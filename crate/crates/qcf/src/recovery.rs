//! Closed-form recovery of index parameters from intermediate loading
//! coefficients, and the joint quantile refit of the sieve coefficients.
//!
//! For a factor's coefficient vector `γ` aligned to a [`SieveBasis`], the
//! degree-`ℓ` pure-power entries satisfy `γ_{ℓ_j} = b_ℓ θ_j^ℓ`, so with the
//! unit-norm convention `Σ_j θ_j² = 1`,
//!
//! ```text
//! b̂_ℓ = sgn(γ_{ℓ₁}) (Σ_j |γ_{ℓ_j}|^{2/ℓ})^{ℓ/2},
//! θ̂   = D̂_ℓ Q_ℓ γ,    D̂_ℓ = diag(1/(b̂_ℓ θ̂₁^{ℓ−1}), 1/(√ℓ b̂_ℓ θ̂₁^{ℓ−1}), …),
//! θ̂₁  = (γ_{ℓ₁}/b̂_ℓ)^{1/ℓ},
//! ```
//!
//! where `Q_ℓ` selects the first `d` entries of the degree-`ℓ` block.
//! Fractional powers of negative entries are read as `|γ|^{2/ℓ}` with the
//! sign carried entirely by `sgn(γ_{ℓ₁})`; the column-sign ambiguity of the
//! eigen-decomposition therefore lands in the sign of `b̂_ℓ`, never in `θ̂`.

use ndarray::{Array1, Array2, ArrayView2};

use crate::error::{Error, Result};
use crate::panel::Panel;
use crate::qr::{solve_plain, QrSolution};
use crate::sieve::{hermite_sequence, GammaVector, SieveBasis};

/// Block mass below this fraction of the overall coefficient scale is
/// treated as numerically empty.
const DEGENERATE_TOL: f64 = 1e-12;

/// Per-factor index recovery output.
#[derive(Debug, Clone)]
pub struct FactorIndex {
    /// Unit-norm index parameter with nonnegative first element.
    pub theta: Array1<f64>,
    /// The `b̂_ℓ` recovered at the inversion degree (enters `D̂` in
    /// inference); not the refitted sieve coefficient.
    pub b_recovered: f64,
    /// Degree `ℓ` used for the inversion.
    pub recovery_degree: usize,
    /// The recovered norm was more than 1e−3 away from 1 before projection.
    pub norm_flagged: bool,
    /// First element numerically zero: scale/sign at this degree is weakly
    /// identified.
    pub first_element_flagged: bool,
}

/// `b̂_ℓ` from the pure-power entries of the degree-`ell` block.
///
/// Returns `(0.0, true)` when every pure-power entry vanishes.
pub fn recover_b(gamma: &GammaVector, ell: usize, basis: &SieveBasis) -> Result<(f64, bool)> {
    check_gamma(gamma, basis)?;
    if ell < 1 || ell >= basis.truncation() {
        return Err(Error::InvalidInput(format!(
            "recovery degree ell={ell} must satisfy 1 <= ell < m={}",
            basis.truncation()
        )));
    }
    let d = basis.dim();
    let first = gamma[basis.pure_power_position(ell, 0)];
    let mut acc = 0.0;
    for j in 0..d {
        let g = gamma[basis.pure_power_position(ell, j)];
        acc += g.abs().powf(2.0 / ell as f64);
    }
    if acc == 0.0 {
        return Ok((0.0, true));
    }
    let magnitude = acc.powf(ell as f64 / 2.0);
    let sign = if first < 0.0 { -1.0 } else { 1.0 };
    Ok((sign * magnitude, false))
}

/// `θ̂ = D̂_ℓ Q_ℓ γ`, renormalized to the unit sphere.
pub fn recover_theta(gamma: &GammaVector, ell: usize, basis: &SieveBasis) -> Result<FactorIndex> {
    let (b, degenerate) = recover_b(gamma, ell, basis)?;
    if degenerate || b == 0.0 {
        return Err(Error::Degenerate(format!(
            "cannot invert index at degree {ell}: recovered b is zero"
        )));
    }
    let d = basis.dim();
    let first = gamma[basis.pure_power_position(ell, 0)];
    // sgn(b) = sgn(γ_{ℓ₁}) by construction, so the ratio is nonnegative.
    let ratio = first / b;
    let theta_first = ratio.max(0.0).powf(1.0 / ell as f64);
    let mut first_element_flagged = false;
    let mut theta = Array1::zeros(d);
    if ell == 1 {
        let sel = basis.selection_positions(1);
        for (j, pos) in sel.enumerate() {
            theta[j] = gamma[pos] / b;
        }
    } else {
        let denom_first = b * theta_first.powi(ell as i32 - 1);
        if denom_first.abs() < 1e-300 || theta_first < 1e-8 {
            first_element_flagged = true;
        }
        let sel: Vec<usize> = basis.selection_positions(ell).collect();
        theta[0] = theta_first;
        if !first_element_flagged {
            let scale = (ell as f64).sqrt() * denom_first;
            for j in 1..d {
                theta[j] = gamma[sel[j]] / scale;
            }
        }
    }
    let norm = theta.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 || !norm.is_finite() {
        return Err(Error::Degenerate(format!(
            "index recovery at degree {ell} produced a zero/non-finite vector"
        )));
    }
    let norm_flagged = (norm - 1.0).abs() > 1e-3;
    theta.mapv_inplace(|v| v / norm);
    Ok(FactorIndex {
        theta,
        b_recovered: b,
        recovery_degree: ell,
        norm_flagged,
        first_element_flagged,
    })
}

/// Pick the inversion degree by signal strength: maximize
/// `|b̂_ℓ| · ‖γ restricted to the degree-ℓ block‖` over `ℓ = 1..m−1`,
/// breaking ties toward the smaller degree.
pub fn choose_recovery_degree(gamma: &GammaVector, basis: &SieveBasis) -> Result<usize> {
    check_gamma(gamma, basis)?;
    if basis.truncation() < 2 {
        return Err(Error::Degenerate(
            "truncation m=1 has no degree >= 1 block; index unidentifiable".into(),
        ));
    }
    let overall = gamma.as_slice().iter().map(|g| g * g).sum::<f64>().sqrt();
    let floor = DEGENERATE_TOL * overall.max(f64::MIN_POSITIVE);
    let mut best: Option<(usize, f64)> = None;
    for ell in 1..basis.truncation() {
        let block_norm = basis
            .block_range(ell)
            .map(|i| gamma[i] * gamma[i])
            .sum::<f64>()
            .sqrt();
        if block_norm <= floor {
            continue;
        }
        let (b, degenerate) = recover_b(gamma, ell, basis)?;
        if degenerate || b.abs() <= floor {
            continue;
        }
        let score = b.abs() * block_norm;
        if best.is_none_or(|(_, s)| score > s) {
            best = Some((ell, score));
        }
    }
    best.map(|(ell, _)| ell).ok_or_else(|| {
        Error::Degenerate("all degrees degenerate: index unidentifiable from gamma".into())
    })
}

/// Signed provisional first element used for column-sign normalization:
/// `sgn(γ_{ℓ₁}) · θ̂₁` at the strongest degree, i.e. the first element the
/// recovery would report if the factor column were oriented so `b̂_ℓ > 0`.
pub fn provisional_first_element(gamma: &GammaVector, basis: &SieveBasis) -> Result<(usize, f64)> {
    let ell = choose_recovery_degree(gamma, basis)?;
    let (b, _) = recover_b(gamma, ell, basis)?;
    let first = gamma[basis.pure_power_position(ell, 0)];
    let magnitude = (first / b).max(0.0).powf(1.0 / ell as f64);
    let sign = if first < 0.0 { -1.0 } else { 1.0 };
    Ok((ell, sign * magnitude))
}

/// Loading function value `Σ_ℓ b_ℓ h_ℓ(x'θ)`.
pub fn eval_loading(b: &[f64], theta: &[f64], x: &[f64]) -> f64 {
    debug_assert_eq!(theta.len(), x.len());
    let w: f64 = theta.iter().zip(x).map(|(t, v)| t * v).sum();
    eval_loading_at_index(b, w)
}

/// Loading function value at an already-computed index `w = x'θ`.
pub fn eval_loading_at_index(b: &[f64], w: f64) -> f64 {
    if b.is_empty() {
        return 0.0;
    }
    let h = hermite_sequence(b.len() - 1, w);
    b.iter().zip(&h).map(|(c, v)| c * v).sum()
}

/// Joint quantile refit of all sieve coefficients given estimated factors
/// and indices: regress `y_it` on the `m·r` constructed regressors
/// `f̂_{t(k)} h_ℓ(x_it'θ̂_k)`. Returns the `m × r` coefficient matrix and the
/// underlying solver report.
pub fn refit_loadings(
    panel: &Panel,
    factors: ArrayView2<'_, f64>,
    thetas: ArrayView2<'_, f64>,
    m: usize,
    tau: f64,
) -> Result<(Array2<f64>, QrSolution)> {
    let t_len = panel.n_periods();
    let r = factors.ncols();
    let d = panel.dim();
    if factors.nrows() != t_len {
        return Err(Error::Dimension(format!(
            "refit: factors have {} rows for {} panel periods",
            factors.nrows(),
            t_len
        )));
    }
    if thetas.dim() != (d, r) {
        return Err(Error::Dimension(format!(
            "refit: thetas are {:?}, expected ({d}, {r})",
            thetas.dim()
        )));
    }
    if m < 1 {
        return Err(Error::InvalidInput("refit: m must be at least 1".into()));
    }
    let n_total = panel.n_total();
    let p = m * r;
    let mut design = Array2::zeros((n_total, p));
    let mut response = Array1::zeros(n_total);
    for t in 0..t_len {
        for row in panel.rows(t) {
            response[row] = panel.y_row(row);
            let x = panel.x_row(row);
            for k in 0..r {
                let w: f64 = (0..d).map(|j| thetas[[j, k]] * x[j]).sum();
                let h = hermite_sequence(m - 1, w);
                let f = factors[[t, k]];
                for (ell, hv) in h.iter().enumerate() {
                    design[[row, k * m + ell]] = f * hv;
                }
            }
        }
    }
    let solution = solve_plain(design.view(), response.view(), tau)?;
    let mut b = Array2::zeros((m, r));
    for k in 0..r {
        for ell in 0..m {
            b[[ell, k]] = solution.coefficients[k * m + ell];
        }
    }
    Ok((b, solution))
}

/// Per-observation loading vectors `λ̂_it = (λ̂_1(x_it'θ̂_1), …)` aligned to
/// the panel's row order; `n_total × r`.
pub fn loading_matrix(
    panel: &Panel,
    thetas: ArrayView2<'_, f64>,
    b: ArrayView2<'_, f64>,
) -> Array2<f64> {
    let r = thetas.ncols();
    let m = b.nrows();
    let d = panel.dim();
    let mut out = Array2::zeros((panel.n_total(), r));
    for row in 0..panel.n_total() {
        let x = panel.x_row(row);
        for k in 0..r {
            let w: f64 = (0..d).map(|j| thetas[[j, k]] * x[j]).sum();
            let h = hermite_sequence(m - 1, w);
            out[[row, k]] = (0..m).map(|ell| b[[ell, k]] * h[ell]).sum();
        }
    }
    out
}

fn check_gamma(gamma: &GammaVector, basis: &SieveBasis) -> Result<()> {
    if gamma.len() != basis.len() {
        return Err(Error::Dimension(format!(
            "gamma length {} does not match basis size {}",
            gamma.len(),
            basis.len()
        )));
    }
    Ok(())
}
