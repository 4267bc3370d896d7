//! Factor extraction from stacked per-period quantile coefficients.
//!
//! Given `Ψ̂` (`T × M`, one row per period), the factors solve the
//! eigenproblem `T^{−1}Ψ̂Ψ̂'F̂ = F̂V̂` with `F̂` equal to `√T` times the top-`r`
//! eigenvectors and `V̂` the corresponding eigenvalues in descending order;
//! the intermediate loading coefficients follow as `Γ̂ = Ψ̂'F̂/T`. The
//! decomposition runs on whichever Gram side (`T×T` or `M×M`) is smaller,
//! which is algebraically equivalent.
//!
//! Identification requires `Γ'Γ` diagonal with distinct entries; near-tied
//! sample eigenvalues are therefore flagged rather than resolved. Column
//! signs stay ambiguous until [`normalize_signs`] flips them against the
//! provisionally recovered first index elements.

use nalgebra::DMatrix;
use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};

/// Eigenvalue-gap threshold (relative to the largest) below which the
/// distinct-entries identification condition is flagged as violated.
const TIE_TOL: f64 = 1e-10;

/// Result of the eigen-decomposition step.
#[derive(Debug, Clone)]
pub struct FactorEstimate {
    /// `T × r`, normalized so `F'F/T = I_r`.
    pub factors: Array2<f64>,
    /// `M × r` intermediate loading coefficients, `Γ̂ = Ψ̂'F̂/T`.
    pub gamma: Array2<f64>,
    /// Top-`r` eigenvalues of `T^{−1}Ψ̂Ψ̂'`, descending.
    pub eigenvalues: Vec<f64>,
    /// Requested factor count exceeds the numerical rank of `Ψ̂`.
    pub rank_deficient: bool,
    /// Some adjacent retained eigenvalues are numerically tied.
    pub near_tied: bool,
    /// Per-factor: sign left unresolved by [`normalize_signs`].
    pub sign_unidentified: Vec<bool>,
}

impl FactorEstimate {
    pub fn n_periods(&self) -> usize {
        self.factors.nrows()
    }

    pub fn n_factors(&self) -> usize {
        self.factors.ncols()
    }
}

/// Symmetric eigen-decomposition with eigenvalues sorted descending.
fn symmetric_eigen_desc(a: DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let eig = a.symmetric_eigen();
    let n = eig.eigenvalues.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]).then(i.cmp(&j)));
    let values: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut vectors = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    (values, vectors)
}

/// Algorithm step: extract `r` factors from the stacked coefficients.
pub fn extract_factors(psi: ArrayView2<'_, f64>, r: usize) -> Result<FactorEstimate> {
    let (t, m) = psi.dim();
    if t == 0 || m == 0 {
        return Err(Error::InvalidInput("psi must be non-empty".into()));
    }
    if r < 1 || r > t.min(m) {
        return Err(Error::InvalidInput(format!(
            "factor count r={r} must satisfy 1 <= r <= min(T={t}, M={m})"
        )));
    }
    if psi.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("psi contains non-finite entries".into()));
    }
    let tf = t as f64;

    let (values, factors, gamma) = if t <= m {
        // T×T Gram: ΨΨ'/T.
        let mut gram = DMatrix::zeros(t, t);
        for i in 0..t {
            for j in i..t {
                let mut acc = 0.0;
                for k in 0..m {
                    acc += psi[[i, k]] * psi[[j, k]];
                }
                gram[(i, j)] = acc / tf;
                gram[(j, i)] = gram[(i, j)];
            }
        }
        let (values, vectors) = symmetric_eigen_desc(gram);
        let mut factors = Array2::zeros((t, r));
        for k in 0..r {
            for i in 0..t {
                factors[[i, k]] = tf.sqrt() * vectors[(i, k)];
            }
        }
        // Γ = Ψ'F/T.
        let mut gamma = Array2::zeros((m, r));
        for j in 0..m {
            for k in 0..r {
                let mut acc = 0.0;
                for i in 0..t {
                    acc += psi[[i, j]] * factors[[i, k]];
                }
                gamma[[j, k]] = acc / tf;
            }
        }
        (values, factors, gamma)
    } else {
        // M×M Gram: Ψ'Ψ/T shares the nonzero spectrum; columns convert via
        // f_k = Ψ w_k / √v_k and γ_k = √v_k w_k.
        let mut gram = DMatrix::zeros(m, m);
        for i in 0..m {
            for j in i..m {
                let mut acc = 0.0;
                for k in 0..t {
                    acc += psi[[k, i]] * psi[[k, j]];
                }
                gram[(i, j)] = acc / tf;
                gram[(j, i)] = gram[(i, j)];
            }
        }
        let (values, vectors) = symmetric_eigen_desc(gram);
        let mut factors = Array2::zeros((t, r));
        let mut gamma = Array2::zeros((m, r));
        for k in 0..r {
            let v = values[k].max(0.0);
            let scale = if v > 0.0 { 1.0 / v.sqrt() } else { 0.0 };
            for i in 0..t {
                let mut acc = 0.0;
                for j in 0..m {
                    acc += psi[[i, j]] * vectors[(j, k)];
                }
                factors[[i, k]] = acc * scale;
            }
            for j in 0..m {
                gamma[[j, k]] = v.sqrt() * vectors[(j, k)];
            }
        }
        (values, factors, gamma)
    };

    let v_max = values.first().copied().unwrap_or(0.0).max(0.0);
    let rank_deficient = values[r - 1] <= 1e-12 * v_max.max(f64::MIN_POSITIVE);
    let mut near_tied = false;
    for k in 0..r {
        let next = values.get(k + 1).copied().unwrap_or(f64::NEG_INFINITY);
        if k + 1 < values.len() && (values[k] - next).abs() < TIE_TOL * v_max {
            near_tied = true;
        }
    }

    Ok(FactorEstimate {
        factors,
        gamma,
        eigenvalues: values[..r].to_vec(),
        rank_deficient,
        near_tied,
        sign_unidentified: vec![false; r],
    })
}

/// Resolve column signs against provisionally recovered first index
/// elements: any column whose `θ̂_{k(1)}` came out negative is negated in
/// both `F̂` and `Γ̂` (their product, hence the fit, is unchanged). Entries
/// numerically at zero are flagged sign-unidentified and left alone.
pub fn normalize_signs(mut est: FactorEstimate, theta_first: &[f64]) -> Result<FactorEstimate> {
    let r = est.n_factors();
    if theta_first.len() != r {
        return Err(Error::Dimension(format!(
            "normalize_signs: got {} provisional first elements for {} factors",
            theta_first.len(),
            r
        )));
    }
    for (k, &tf) in theta_first.iter().enumerate() {
        if tf.abs() < 1e-8 {
            est.sign_unidentified[k] = true;
            continue;
        }
        if tf < 0.0 {
            est.factors.column_mut(k).mapv_inplace(|v| -v);
            est.gamma.column_mut(k).mapv_inplace(|v| -v);
        }
    }
    Ok(est)
}
