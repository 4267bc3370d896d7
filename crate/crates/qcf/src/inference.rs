//! Plug-in asymptotic inference for the index parameters.
//!
//! The asymptotic covariance of `√(NT)(θ̂_k − θ_k⁰)` is estimated by
//!
//! ```text
//! Ξ̂ = τ(1−τ)/NT Σ_it  D̂Q_ℓ {Σ̂_t⁻¹ H_it f̂_t' + ½ Γ̂(ζ̂_it + ζ̂_it')} u_k
//!                    · u_k' {f̂_t H_it' Σ̂_t⁻¹ + ½ (ζ̂_it + ζ̂_it')Γ̂'} Q_ℓ'D̂',
//! ζ̂_it = (Γ̂'Γ̂)⁻¹ (f̂_t H_it'Σ̂_t⁻¹Γ̂ + Γ̂'Σ̂_t⁻¹H_it f̂_t'),
//! ```
//!
//! where `Σ̂_t` is Powell's kernel estimator of the density-weighted design
//! matrix with the halved uniform kernel `K(u) = ½·1{|u| ≤ 1}`:
//! `Σ̂_t = n_t⁻¹ Σ_i H_it H_it' K((y_it − f̂_t'Γ̂'H_it)/h)`.
//!
//! The default bandwidth is `h = c·σ̂_res·(Σ_t n_t)^{−1/5}` with `c = 1.06`;
//! the rate theory pins only how fast `h` may shrink, so the constant is a
//! configuration knob.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::panel::Panel;
use crate::pipeline::QcfFit;

/// Powell kernel estimate for one period.
#[derive(Debug, Clone)]
pub struct SigmaEpsH {
    /// `M × M`, symmetric PSD.
    pub matrix: Array2<f64>,
    pub bandwidth: f64,
    /// Number of residuals inside the kernel window.
    pub kernel_mass: usize,
    /// No residual fell inside the window; the matrix is zero.
    pub singular: bool,
}

/// `Σ̂ = n⁻¹ Σ_i H_i H_i' K(res_i/h)` with the halved uniform kernel.
pub fn powell_sigma(
    h_rows: ArrayView2<'_, f64>,
    residuals: &[f64],
    bandwidth: f64,
) -> Result<SigmaEpsH> {
    let (n, m) = h_rows.dim();
    if residuals.len() != n {
        return Err(Error::Dimension(format!(
            "powell_sigma: {} residuals for {n} design rows",
            residuals.len()
        )));
    }
    if !(bandwidth > 0.0 && bandwidth.is_finite()) {
        return Err(Error::InvalidInput(
            "powell_sigma: bandwidth must be positive".into(),
        ));
    }
    let mut matrix = Array2::zeros((m, m));
    let mut mass = 0usize;
    for i in 0..n {
        if residuals[i].abs() > bandwidth {
            continue;
        }
        mass += 1;
        for a in 0..m {
            let ha = h_rows[[i, a]];
            if ha == 0.0 {
                continue;
            }
            for b in a..m {
                matrix[[a, b]] += 0.5 * ha * h_rows[[i, b]];
            }
        }
    }
    for a in 0..m {
        for b in 0..a {
            matrix[[a, b]] = matrix[[b, a]];
        }
    }
    matrix.mapv_inplace(|v| v / n as f64);
    Ok(SigmaEpsH {
        matrix,
        bandwidth,
        kernel_mass: mass,
        singular: mass == 0,
    })
}

/// Inference configuration.
#[derive(Debug, Clone, Copy)]
pub struct InferenceConfig {
    /// Rule-of-thumb constant `c` in `h = c·σ̂·(Σn_t)^{−1/5}`.
    pub bandwidth_const: f64,
    /// Explicit bandwidth override.
    pub bandwidth: Option<f64>,
}

impl Default for InferenceConfig {
    fn default() -> Self {
        InferenceConfig {
            bandwidth_const: 1.06,
            bandwidth: None,
        }
    }
}

/// Plug-in covariance for one factor's index parameter.
#[derive(Debug, Clone)]
pub struct ThetaCovariance {
    /// `d × d`, symmetric PSD: covariance of `√(NT)(θ̂_k − θ_k⁰)`.
    pub matrix: Array2<f64>,
    /// Effective observation count `Σ_t n_t` over the retained periods.
    pub nt_effective: f64,
    pub bandwidth: f64,
    /// Periods whose `Σ̂_t` needed a ridge to invert.
    pub regularized_periods: usize,
    /// Periods whose window was widened to reach full kernel rank.
    pub widened_periods: usize,
    /// Periods dropped for zero kernel mass or an irreparably singular
    /// kernel matrix.
    pub excluded_periods: usize,
}

/// Per-observation accumulation vector `v_it = D̂Q_ℓ{Σ̂⁻¹H f̂' + ½Γ̂(ζ̂+ζ̂')}u_k`;
/// the covariance is `τ(1−τ)/NT Σ v v'`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn plugin_term(
    gamma: ArrayView2<'_, f64>,
    gamma_gram_inv: ArrayView2<'_, f64>,
    factor_row: ArrayView1<'_, f64>,
    sigma_inv_h: &[f64],
    k: usize,
    selection: &[usize],
    d_diag: &[f64],
) -> Array1<f64> {
    let m = gamma.nrows();
    let r = gamma.ncols();
    // w = Γ'(Σ̂⁻¹H) ∈ ℝ^r.
    let mut w = vec![0.0f64; r];
    for a in 0..r {
        let mut acc = 0.0;
        for j in 0..m {
            acc += gamma[[j, a]] * sigma_inv_h[j];
        }
        w[a] = acc;
    }
    // ζ = G(f w' + w f'), A = ζ + ζ' = G(fw' + wf') + (fw' + wf')G.
    let mut outer = Array2::zeros((r, r));
    for a in 0..r {
        for b in 0..r {
            outer[[a, b]] = factor_row[a] * w[b] + w[a] * factor_row[b];
        }
    }
    let mut a_mat = Array2::zeros((r, r));
    for a in 0..r {
        for b in 0..r {
            let mut acc = 0.0;
            for c in 0..r {
                acc += gamma_gram_inv[[a, c]] * outer[[c, b]]
                    + outer[[a, c]] * gamma_gram_inv[[c, b]];
            }
            a_mat[[a, b]] = acc;
        }
    }
    // c = Σ̂⁻¹H f̂_{t(k)} + ½ Γ (A u_k) ∈ ℝ^M.
    let mut au_k = vec![0.0f64; r];
    for a in 0..r {
        au_k[a] = a_mat[[a, k]];
    }
    let fk = factor_row[k];
    let mut c = vec![0.0f64; m];
    for j in 0..m {
        let mut acc = sigma_inv_h[j] * fk;
        for a in 0..r {
            acc += 0.5 * gamma[[j, a]] * au_k[a];
        }
        c[j] = acc;
    }
    // v = D̂ (c at the selection positions).
    let d = selection.len();
    let mut v = Array1::zeros(d);
    for j in 0..d {
        v[j] = d_diag[j] * c[selection[j]];
    }
    v
}

fn invert_spd(matrix: &Array2<f64>, what: &str) -> Result<Array2<f64>> {
    invert_spd_strict(matrix).map_err(|_| Error::Singular(format!("{what} is not invertible")))
}

/// Cholesky-only inverse; errors instead of returning an ill-conditioned
/// general inverse.
fn invert_spd_strict(matrix: &Array2<f64>) -> Result<Array2<f64>> {
    let n = matrix.nrows();
    let na = nalgebra::DMatrix::from_fn(n, n, |i, j| matrix[[i, j]]);
    match na.cholesky() {
        Some(chol) => {
            let inv = chol.inverse();
            Ok(Array2::from_shape_fn((n, n), |(i, j)| inv[(i, j)]))
        }
        None => Err(Error::Singular("matrix is not positive definite".into())),
    }
}

/// Plug-in covariance `Ξ̂_{θ,τ}` for factor `k` of a fitted model on the
/// panel it was fitted to.
pub fn theta_covariance(
    panel: &Panel,
    fit: &QcfFit,
    k: usize,
    config: &InferenceConfig,
) -> Result<ThetaCovariance> {
    let r = fit.config.r;
    let d = panel.dim();
    if k >= r {
        return Err(Error::InvalidInput(format!(
            "factor index k={k} out of range for r={r}"
        )));
    }
    if fit.flags.theta_unidentified[k] {
        return Err(Error::Degenerate(format!(
            "factor {k} has no identified index parameter"
        )));
    }
    if panel.n_periods() != fit.n_periods() || panel.period_keys() != &fit.period_keys[..] {
        return Err(Error::InvalidInput(
            "inference panel must match the fitted panel's periods".into(),
        ));
    }
    let ell = fit.recovery_degree[k];
    let b = fit.b_recovered[k];
    let theta_first = fit.thetas[[0, k]];
    if ell < 1 || b == 0.0 || theta_first <= 0.0 {
        return Err(Error::Degenerate(format!(
            "factor {k} recovery state does not support inference"
        )));
    }
    let tau = fit.config.tau;
    let basis = &fit.basis;
    let m_len = basis.len();

    // D̂ diagonal.
    let base = b * theta_first.powi(ell as i32 - 1);
    let mut d_diag = vec![1.0 / ((ell as f64).sqrt() * base); d];
    d_diag[0] = 1.0 / base;
    let selection: Vec<usize> = basis.selection_positions(ell).collect();

    // Γ̂'Γ̂ inverse.
    let gamma = &fit.factors.gamma;
    let gram = gamma.t().dot(gamma);
    let gram_inv = invert_spd(&gram, "gamma gram (identification)")?;

    // Residuals from the step-2 representation, pooled for the bandwidth.
    let t_len = panel.n_periods();
    let mut h_store: Vec<Array2<f64>> = Vec::with_capacity(t_len);
    let mut residual_store: Vec<Vec<f64>> = Vec::with_capacity(t_len);
    let mut pooled_sq = 0.0f64;
    let mut pooled_n = 0usize;
    for t in 0..t_len {
        let rows: Vec<usize> = panel.rows(t).collect();
        let n_t = rows.len();
        let mut h_rows = Array2::zeros((n_t, m_len));
        let mut residuals = vec![0.0f64; n_t];
        let mut buf = vec![0.0f64; m_len];
        for (local, &row) in rows.iter().enumerate() {
            basis.eval_into(panel.x_row(row), &mut buf);
            for j in 0..m_len {
                h_rows[[local, j]] = buf[j];
            }
            let mut fitted = 0.0;
            for a in 0..r {
                let mut gh = 0.0;
                for j in 0..m_len {
                    gh += gamma[[j, a]] * buf[j];
                }
                fitted += fit.factors.factors[[t, a]] * gh;
            }
            let res = panel.y_row(row) - fitted;
            residuals[local] = res;
            pooled_sq += res * res;
            pooled_n += 1;
        }
        h_store.push(h_rows);
        residual_store.push(residuals);
    }
    let sigma_res = (pooled_sq / pooled_n as f64).sqrt();
    let bandwidth = config.bandwidth.unwrap_or_else(|| {
        let h = config.bandwidth_const * sigma_res * (pooled_n as f64).powf(-0.2);
        if h > 0.0 {
            h
        } else {
            1e-8
        }
    });

    let mut xi = Array2::zeros((d, d));
    let mut nt_effective = 0usize;
    let mut regularized = 0usize;
    let mut widened = 0usize;
    let mut excluded = 0usize;
    for t in 0..t_len {
        let h_rows = &h_store[t];
        let residuals = &residual_store[t];
        // A kernel window holding fewer points than the basis dimension
        // makes Σ̂_t structurally rank-deficient, and near-M counts leave it
        // too ill-conditioned to invert stably; widen this period's
        // bandwidth to the smallest window with a comfortable margin.
        let n_t = residuals.len();
        let mut h_t = bandwidth;
        let need = (2 * m_len).max(m_len + 8).min(n_t);
        let inside = residuals.iter().filter(|r| r.abs() <= h_t).count();
        if inside < need {
            let mut abs: Vec<f64> = residuals.iter().map(|r| r.abs()).collect();
            abs.sort_by(f64::total_cmp);
            let wider = abs[need - 1].max(h_t) * (1.0 + 1e-12) + f64::MIN_POSITIVE;
            if wider > h_t {
                h_t = wider;
                widened += 1;
            }
        }
        let sigma = powell_sigma(h_rows.view(), residuals, h_t)?;
        if sigma.singular {
            excluded += 1;
            continue;
        }
        // The kernel-weighted Gram estimates h·Σ_{εH_t}; rescale by 1/h so
        // the plug-in consumes the density-weighted design matrix itself
        // (otherwise the covariance inflates like h⁻²).
        let mut matrix = sigma.matrix;
        matrix.mapv_inplace(|v| v / h_t);
        let trace: f64 = (0..m_len).map(|j| matrix[[j, j]]).sum();
        let sigma_inv = match invert_spd_strict(&matrix) {
            Ok(inv) => inv,
            Err(_) => {
                regularized += 1;
                let eps = 1e-8 * trace / m_len as f64;
                for j in 0..m_len {
                    matrix[[j, j]] += eps;
                }
                match invert_spd_strict(&matrix) {
                    Ok(inv) => inv,
                    Err(_) => {
                        excluded += 1;
                        continue;
                    }
                }
            }
        };
        let n_t = h_rows.nrows();
        nt_effective += n_t;
        let factor_row = fit.factors.factors.row(t);
        let mut sig_h = vec![0.0f64; m_len];
        for local in 0..n_t {
            for j in 0..m_len {
                let mut acc = 0.0;
                for l in 0..m_len {
                    acc += sigma_inv[[j, l]] * h_rows[[local, l]];
                }
                sig_h[j] = acc;
            }
            let v = plugin_term(
                gamma.view(),
                gram_inv.view(),
                factor_row,
                &sig_h,
                k,
                &selection,
                &d_diag,
            );
            for a in 0..d {
                for b2 in 0..d {
                    xi[[a, b2]] += v[a] * v[b2];
                }
            }
        }
    }
    if nt_effective == 0 {
        return Err(Error::Degenerate(
            "every period was excluded; covariance undefined".into(),
        ));
    }
    let scale = tau * (1.0 - tau) / nt_effective as f64;
    xi.mapv_inplace(|v| v * scale);
    // The reported θ̂ is projected to the unit sphere, so its asymptotic
    // covariance is the tangential part P Ξ P with P = I − θ̂θ̂' (delta
    // method through x ↦ x/‖x‖). The raw sum carries a large radial
    // component that the renormalization removes.
    let theta_k = fit.thetas.column(k);
    let mut projector = Array2::from_shape_fn((d, d), |(a, b)| {
        -theta_k[a] * theta_k[b]
    });
    for a in 0..d {
        projector[[a, a]] += 1.0;
    }
    xi = projector.dot(&xi).dot(&projector);
    // Symmetrize against accumulation roundoff.
    for a in 0..d {
        for b2 in (a + 1)..d {
            let avg = 0.5 * (xi[[a, b2]] + xi[[b2, a]]);
            xi[[a, b2]] = avg;
            xi[[b2, a]] = avg;
        }
    }
    Ok(ThetaCovariance {
        matrix: xi,
        nt_effective: nt_effective as f64,
        bandwidth,
        regularized_periods: regularized,
        widened_periods: widened,
        excluded_periods: excluded,
    })
}

/// Two-sided confidence intervals for every component of `θ̂_k`.
pub fn theta_confidence_intervals(
    theta: ArrayView1<'_, f64>,
    covariance: &ThetaCovariance,
    level: f64,
) -> Result<Vec<(f64, f64)>> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidInput("confidence level must be in (0,1)".into()));
    }
    let z = Normal::new(0.0, 1.0)
        .expect("unit normal")
        .inverse_cdf(0.5 + level / 2.0);
    let mut out = Vec::with_capacity(theta.len());
    for j in 0..theta.len() {
        let se = (covariance.matrix[[j, j]] / covariance.nt_effective)
            .max(0.0)
            .sqrt();
        out.push((theta[j] - z * se, theta[j] + z * se));
    }
    Ok(out)
}

/// Wald test of `H₀: Sθ_k = 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WaldResult {
    pub statistic: f64,
    pub dof: usize,
    pub p_value: f64,
}

/// `selection` lists the component indices the (unit-row) selection matrix
/// `S` picks; `nt` is the effective observation count `NT`.
pub fn wald_test(
    theta: ArrayView1<'_, f64>,
    covariance: ArrayView2<'_, f64>,
    selection: &[usize],
    nt: f64,
) -> Result<WaldResult> {
    let d = theta.len();
    if selection.is_empty() {
        return Err(Error::InvalidInput("empty selection".into()));
    }
    let mut seen = vec![false; d];
    for &j in selection {
        if j >= d {
            return Err(Error::InvalidInput(format!(
                "selection index {j} out of range for d={d}"
            )));
        }
        if seen[j] {
            return Err(Error::InvalidInput(
                "selection rows must pick distinct components".into(),
            ));
        }
        seen[j] = true;
    }
    let d1 = selection.len();
    let sub_theta = Array1::from_iter(selection.iter().map(|&j| theta[j]));
    let sub_cov =
        Array2::from_shape_fn((d1, d1), |(a, b)| covariance[[selection[a], selection[b]]]);
    let inv = invert_spd(&sub_cov, "S Ξ S'")?;
    let mut statistic = 0.0;
    for a in 0..d1 {
        for b in 0..d1 {
            statistic += sub_theta[a] * inv[[a, b]] * sub_theta[b];
        }
    }
    statistic *= nt;
    if statistic < 0.0 {
        statistic = 0.0;
    }
    let p_value = if statistic == 0.0 {
        1.0
    } else {
        1.0 - ChiSquared::new(d1 as f64)
            .expect("valid dof")
            .cdf(statistic)
    };
    Ok(WaldResult {
        statistic,
        dof: d1,
        p_value,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{arr1, arr2};
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn powell_all_zero_residuals() {
        let h = arr2(&[[1.0, 0.5], [2.0, -1.0], [0.0, 1.0]]);
        let sigma = powell_sigma(h.view(), &[0.0, 0.0, 0.0], 1.0).unwrap();
        // ½·(1/n)·Σ H H'.
        let mut want = Array2::<f64>::zeros((2, 2));
        for i in 0..3 {
            for a in 0..2 {
                for b in 0..2 {
                    want[[a, b]] += 0.5 * h[[i, a]] * h[[i, b]] / 3.0;
                }
            }
        }
        for a in 0..2 {
            for b in 0..2 {
                assert!((sigma.matrix[[a, b]] - want[[a, b]]).abs() < 1e-15);
            }
        }
        assert!(!sigma.singular);
    }

    #[test]
    fn powell_all_outside_window() {
        let h = arr2(&[[1.0], [2.0]]);
        let sigma = powell_sigma(h.view(), &[5.0, -7.0], 1.0).unwrap();
        assert!(sigma.singular);
        assert_eq!(sigma.kernel_mass, 0);
        assert_eq!(sigma.matrix[[0, 0]], 0.0);
    }

    #[test]
    fn powell_hand_instance() {
        // Four observations, two inside the window.
        let h = arr2(&[[1.0, 0.0], [0.0, 2.0], [1.0, 1.0], [3.0, -1.0]]);
        let residuals = [0.3, -0.9, 2.0, -1.5];
        let sigma = powell_sigma(h.view(), &residuals, 1.0).unwrap();
        assert_eq!(sigma.kernel_mass, 2);
        // Rows 0 and 1 contribute: ½/4 (H₀H₀' + H₁H₁').
        let want = arr2(&[[0.125, 0.0], [0.0, 0.5]]);
        for a in 0..2 {
            for b in 0..2 {
                assert!((sigma.matrix[[a, b]] - want[[a, b]]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn plugin_term_matches_scalar_hand_computation() {
        // r = 1, d = 2, M = 2.
        let g1 = 0.8;
        let g2 = -0.4;
        let gamma = arr2(&[[g1], [g2]]);
        let gram_inv = arr2(&[[1.0 / (g1 * g1 + g2 * g2)]]);
        let f = 1.3;
        let factor_row = arr1(&[f]);
        let (s1, s2) = (2.0, 0.5); // diagonal Σ̂⁻¹
        let (h1, h2) = (0.6, -1.1);
        let sig_h = [s1 * h1, s2 * h2];
        let d_diag = [0.7, 0.2];
        let v = plugin_term(
            gamma.view(),
            gram_inv.view(),
            factor_row.view(),
            &sig_h,
            0,
            &[0, 1],
            &d_diag,
        );
        let gg = 1.0 / (g1 * g1 + g2 * g2);
        let w = g1 * s1 * h1 + g2 * s2 * h2;
        let a = 4.0 * gg * f * w; // (ζ + ζ') for scalars
        let c1 = s1 * h1 * f + 0.5 * g1 * a;
        let c2 = s2 * h2 * f + 0.5 * g2 * a;
        assert!((v[0] - d_diag[0] * c1).abs() < 1e-14);
        assert!((v[1] - d_diag[1] * c2).abs() < 1e-14);
    }

    #[test]
    fn plugin_accumulation_is_psd_on_random_inputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let (m, r, d) = (6, 2, 3);
        let gamma = Array2::from_shape_fn((m, r), |_| rng.random_range(-1.0_f64..1.0));
        let gram = gamma.t().dot(&gamma);
        let gram_inv = invert_spd(&gram, "gram").unwrap();
        let mut xi = Array2::<f64>::zeros((d, d));
        for _ in 0..40 {
            let factor_row = Array1::from_shape_fn(r, |_| rng.random_range(-1.0..1.0));
            let sig_h: Vec<f64> = (0..m).map(|_| rng.random_range(-1.0..1.0)).collect();
            let d_diag: Vec<f64> = (0..d).map(|_| rng.random_range(0.2..1.5)).collect();
            let v = plugin_term(
                gamma.view(),
                gram_inv.view(),
                factor_row.view(),
                &sig_h,
                1,
                &[0, 2, 4],
                &d_diag,
            );
            for a in 0..d {
                for b in 0..d {
                    xi[[a, b]] += v[a] * v[b];
                }
            }
        }
        // Quadratic-form accumulations are PSD by construction.
        let na = nalgebra::DMatrix::from_fn(d, d, |i, j| xi[[i, j]]);
        let eigs = na.symmetric_eigen().eigenvalues;
        for e in eigs.iter() {
            assert!(*e >= -1e-10, "eigenvalue {e}");
        }
    }

    #[test]
    fn powell_monotone_in_bandwidth() {
        // Nested windows only add PSD terms, so Σ̂(h₁) ⪯ Σ̂(h₂) for h₁ ≤ h₂.
        let mut rng = ChaCha8Rng::seed_from_u64(78);
        let n = 30;
        let h = Array2::from_shape_fn((n, 3), |_| rng.random_range(-1.0_f64..1.0));
        let residuals: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        let mut prev = powell_sigma(h.view(), &residuals, 0.1).unwrap().matrix;
        for bw in [0.3, 0.8, 1.5, 2.5] {
            let next = powell_sigma(h.view(), &residuals, bw).unwrap().matrix;
            let diff = &next - &prev;
            let na = nalgebra::DMatrix::from_fn(3, 3, |i, j| diff[[i, j]]);
            for e in na.symmetric_eigen().eigenvalues.iter() {
                assert!(*e >= -1e-12, "Loewner order violated at h={bw}: {e}");
            }
            prev = next;
        }
    }

    #[test]
    fn wald_zero_vector_gives_unit_p() {
        let theta = arr1(&[0.0, 0.5, 0.0]);
        let cov = arr2(&[[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]);
        let res = wald_test(theta.view(), cov.view(), &[0, 2], 100.0).unwrap();
        assert_eq!(res.statistic, 0.0);
        assert_eq!(res.p_value, 1.0);
        assert_eq!(res.dof, 2);
    }

    #[test]
    fn wald_scalar_arithmetic() {
        let theta = arr1(&[0.3, 0.1]);
        let cov = arr2(&[[0.5, 0.0], [0.0, 0.01]]);
        let res = wald_test(theta.view(), cov.view(), &[1], 100.0).unwrap();
        assert!((res.statistic - 100.0).abs() < 1e-10);
        assert_eq!(res.dof, 1);
        assert!(res.p_value < 1e-10);
    }

    #[test]
    fn wald_p_value_monotone_in_statistic() {
        let cov = arr2(&[[1.0]]);
        let mut prev = 1.0;
        for i in 1..20 {
            let theta = arr1(&[0.05 * i as f64]);
            let res = wald_test(theta.view(), cov.view(), &[0], 50.0).unwrap();
            assert!(res.p_value <= prev + 1e-15);
            prev = res.p_value;
        }
    }

    #[test]
    fn wald_rejects_bad_selection() {
        let theta = arr1(&[0.1, 0.2]);
        let cov = arr2(&[[1.0, 0.0], [0.0, 1.0]]);
        assert!(wald_test(theta.view(), cov.view(), &[], 10.0).is_err());
        assert!(wald_test(theta.view(), cov.view(), &[0, 0], 10.0).is_err());
        assert!(wald_test(theta.view(), cov.view(), &[5], 10.0).is_err());
    }
}
