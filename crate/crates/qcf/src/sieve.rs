//! Hermite tensor-product sieve basis.
//!
//! Loading functions live in `L²(ℝ, e^{−w²/2})` and are expanded in the
//! normalized probabilists' Hermite sequence
//!
//! ```text
//! h_ℓ(w) = (−1)^ℓ/√(ℓ!) · e^{w²/2} · dℓ/dwℓ e^{−w²/2},
//! ```
//!
//! evaluated here through the stable three-term recurrence
//! `h_{ℓ+1}(w) = (w·h_ℓ(w) − √ℓ·h_{ℓ−1}(w)) / √(ℓ+1)`.
//!
//! A single-index term `b_ℓ h_ℓ(x'θ)` factorizes into tensor products over
//! multi-indices `p` of total degree `ℓ`:
//!
//! ```text
//! b_ℓ h_ℓ(x'θ) = Σ_{|p|=ℓ} γ_p H_p(x),
//! γ_p = √(ℓ!/(p_1!…p_d!)) · b_ℓ · ∏_j θ_j^{p_j},
//! H_p(x) = ∏_j h_{p_j}(x_j).
//! ```
//!
//! The basis is graded: all degree-0 indices precede degree-1 and so on. The
//! first `d` slots of every degree-`ℓ` block are pinned to
//! `(ℓ,0,…,0), (ℓ−1,1,0,…), …, (ℓ−1,0,…,1)` and the pure powers `ℓ·e_j` sit
//! at the positions the closed-form recovery of the index parameter expects.
//! Within a block we order multi-indices by descending lexicographic
//! comparison of `(p_1,…,p_d)`, which satisfies both constraints at once.

use crate::error::{Error, Result};

/// Largest basis size we are willing to enumerate.
const MAX_BASIS_LEN: u128 = 50_000_000;

/// Normalized probabilists' Hermite polynomial `h_ℓ(w)`.
pub fn hermite(ell: usize, w: f64) -> f64 {
    let mut prev = 1.0; // h_0
    if ell == 0 {
        return prev;
    }
    let mut cur = w; // h_1
    for l in 1..ell {
        let next = (w * cur - (l as f64).sqrt() * prev) / ((l + 1) as f64).sqrt();
        prev = cur;
        cur = next;
    }
    cur
}

/// All of `h_0(w), …, h_{max_ell}(w)` in one recurrence sweep.
pub fn hermite_sequence(max_ell: usize, w: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(max_ell + 1);
    out.push(1.0);
    if max_ell == 0 {
        return out;
    }
    out.push(w);
    for l in 1..max_ell {
        let next = (w * out[l] - (l as f64).sqrt() * out[l - 1]) / ((l + 1) as f64).sqrt();
        out.push(next);
    }
    out
}

/// Multi-index `p = (p_1,…,p_d)` of per-coordinate polynomial degrees.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct MultiIndex {
    powers: Vec<u32>,
}

impl MultiIndex {
    pub fn new(powers: Vec<u32>) -> Self {
        assert!(!powers.is_empty(), "multi-index needs d >= 1");
        MultiIndex { powers }
    }

    pub fn powers(&self) -> &[u32] {
        &self.powers
    }

    /// Total degree `|p| = Σ_j p_j`.
    pub fn degree(&self) -> u32 {
        self.powers.iter().sum()
    }
}

/// Per-factor coefficient vector aligned to [`SieveBasis::indices`].
#[derive(Debug, Clone, PartialEq)]
pub struct GammaVector(pub Vec<f64>);

impl GammaVector {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

impl std::ops::Index<usize> for GammaVector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

/// Graded tensor-product Hermite basis of truncation order `m` in dimension `d`.
///
/// Holds the ordered multi-index set (length `M = C(m+d−1, d)`) together with
/// the block offsets and the pure-power positions used by index recovery.
#[derive(Debug, Clone)]
pub struct SieveBasis {
    m: usize,
    d: usize,
    indices: Vec<MultiIndex>,
    /// `block_start[ℓ]` is the offset of the degree-`ℓ` block; has `m+1`
    /// entries so `block_start[m] == M`.
    block_start: Vec<usize>,
    /// `pure_power_pos[ℓ][j]` is the position of `ℓ·e_{j+1}` for `ℓ ≥ 1`.
    pure_power_pos: Vec<Vec<usize>>,
}

fn binomial_u128(n: u128, k: u128) -> Option<u128> {
    let k = k.min(n - k.min(n));
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc.checked_mul(n - i)?;
        acc /= i + 1;
    }
    Some(acc)
}

/// `C(n, k)` as f64; exact for the basis sizes we allow.
pub fn binomial(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    binomial_u128(n as u128, k as u128).map_or(f64::INFINITY, |v| v as f64)
}

/// Multinomial coefficient `ℓ!/(p_1!…p_d!)` as f64.
fn multinomial(powers: &[u32]) -> f64 {
    let mut acc: u128 = 1;
    let mut seen: u128 = 0;
    let mut overflowed = false;
    for &p in powers {
        seen += p as u128;
        match binomial_u128(seen, p as u128).and_then(|c| acc.checked_mul(c)) {
            Some(v) => acc = v,
            None => {
                overflowed = true;
                break;
            }
        }
    }
    if !overflowed {
        return acc as f64;
    }
    // Fall back to log space for degrees far beyond any practical truncation.
    let ln_fact = |n: u32| -> f64 { (1..=n as u64).map(|i| (i as f64).ln()).sum() };
    let total: u32 = powers.iter().sum();
    (ln_fact(total) - powers.iter().map(|&p| ln_fact(p)).sum::<f64>()).exp()
}

/// Enumerate all multi-indices of total degree `degree` in dimension `d`,
/// in descending lexicographic order of `(p_1,…,p_d)`.
fn enumerate_degree(d: usize, degree: u32, prefix: &mut Vec<u32>, out: &mut Vec<MultiIndex>) {
    if d == 1 {
        prefix.push(degree);
        out.push(MultiIndex::new(prefix.clone()));
        prefix.pop();
        return;
    }
    for p1 in (0..=degree).rev() {
        prefix.push(p1);
        enumerate_degree(d - 1, degree - p1, prefix, out);
        prefix.pop();
    }
}

impl SieveBasis {
    /// Build the ordered basis for truncation order `m ≥ 1` and covariate
    /// dimension `d ≥ 1`.
    pub fn new(m: usize, d: usize) -> Result<Self> {
        if m < 1 || d < 1 {
            return Err(Error::InvalidInput(format!(
                "sieve basis needs m >= 1 and d >= 1, got m={m}, d={d}"
            )));
        }
        let total = binomial_u128((m + d - 1) as u128, d as u128)
            .filter(|&v| v <= MAX_BASIS_LEN)
            .ok_or(Error::BasisOverflow {
                m,
                d,
                max: MAX_BASIS_LEN as usize,
            })?;

        let mut indices = Vec::with_capacity(total as usize);
        let mut block_start = Vec::with_capacity(m + 1);
        let mut prefix = Vec::with_capacity(d);
        for ell in 0..m as u32 {
            block_start.push(indices.len());
            enumerate_degree(d, ell, &mut prefix, &mut indices);
        }
        block_start.push(indices.len());
        debug_assert_eq!(indices.len(), total as usize);

        let mut pure_power_pos = vec![Vec::new(); m];
        for (pos, idx) in indices.iter().enumerate() {
            let ell = idx.degree() as usize;
            if ell == 0 {
                continue;
            }
            if let Some(j) = pure_power_coord(idx) {
                if pure_power_pos[ell].is_empty() {
                    pure_power_pos[ell] = vec![usize::MAX; d];
                }
                pure_power_pos[ell][j] = pos;
            }
        }

        Ok(SieveBasis {
            m,
            d,
            indices,
            block_start,
            pure_power_pos,
        })
    }

    pub fn truncation(&self) -> usize {
        self.m
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    /// Basis size `M = C(m+d−1, d)`.
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn indices(&self) -> &[MultiIndex] {
        &self.indices
    }

    /// Positions of the degree-`ell` block, `0 ≤ ell < m`.
    pub fn block_range(&self, ell: usize) -> std::ops::Range<usize> {
        self.block_start[ell]..self.block_start[ell + 1]
    }

    /// Position of the pure power `ℓ·e_j` (zero-based coordinate `j`).
    pub fn pure_power_position(&self, ell: usize, j: usize) -> usize {
        self.pure_power_pos[ell][j]
    }

    /// The first `d` positions of the degree-`ell` block: `(ℓ,0,…,0)` followed
    /// by `(ℓ−1,1,0,…), …, (ℓ−1,0,…,1)`. These are the rows the recovery
    /// selection matrix picks.
    pub fn selection_positions(&self, ell: usize) -> std::ops::Range<usize> {
        let start = self.block_start[ell];
        start..start + self.d.min(self.block_range(ell).len())
    }

    /// Evaluate `H_m(x) ∈ ℝ^M`: component `p` equals `∏_j h_{p_j}(x_j)`.
    pub fn eval(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.d {
            return Err(Error::Dimension(format!(
                "basis eval: x has length {}, expected d={}",
                x.len(),
                self.d
            )));
        }
        let mut out = vec![0.0; self.indices.len()];
        self.eval_into(x, &mut out);
        Ok(out)
    }

    /// As [`SieveBasis::eval`] but writing into a caller-owned buffer of
    /// length `M`; used by the hot per-period design loops.
    pub fn eval_into(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.d);
        debug_assert_eq!(out.len(), self.indices.len());
        // Per-coordinate Hermite tables h_0..h_{m−1}(x_j).
        let tables: Vec<Vec<f64>> = x.iter().map(|&xj| hermite_sequence(self.m - 1, xj)).collect();
        for (slot, idx) in out.iter_mut().zip(&self.indices) {
            let mut prod = 1.0;
            for (j, &p) in idx.powers.iter().enumerate() {
                if p > 0 {
                    prod *= tables[j][p as usize];
                }
            }
            *slot = prod;
        }
    }

    /// Forward factorization map `(b, θ) → γ`.
    ///
    /// `b` has length `m` (sieve coefficients `b_0..b_{m−1}`), `theta` must be
    /// unit norm. The output satisfies
    /// `Σ_p γ_p H_p(x) = Σ_ℓ b_ℓ h_ℓ(x'θ)` for every `x`.
    pub fn gamma_from_index(&self, b: &[f64], theta: &[f64]) -> Result<GammaVector> {
        if b.len() != self.m {
            return Err(Error::Dimension(format!(
                "gamma_from_index: b has length {}, expected m={}",
                b.len(),
                self.m
            )));
        }
        if theta.len() != self.d {
            return Err(Error::Dimension(format!(
                "gamma_from_index: theta has length {}, expected d={}",
                theta.len(),
                self.d
            )));
        }
        let norm = theta.iter().map(|t| t * t).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > 1e-10 {
            return Err(Error::InvalidInput(format!(
                "gamma_from_index: theta must be unit norm, got ||theta|| = {norm:.12}"
            )));
        }
        let mut gamma = Vec::with_capacity(self.indices.len());
        for idx in &self.indices {
            let ell = idx.degree() as usize;
            let b_ell = b[ell];
            if b_ell == 0.0 {
                gamma.push(0.0);
                continue;
            }
            let mut theta_prod = 1.0;
            for (j, &p) in idx.powers.iter().enumerate() {
                theta_prod *= theta[j].powi(p as i32);
            }
            gamma.push(multinomial(&idx.powers).sqrt() * b_ell * theta_prod);
        }
        Ok(GammaVector(gamma))
    }
}

/// If `idx` is a pure power `ℓ·e_j`, return `j` (zero-based).
fn pure_power_coord(idx: &MultiIndex) -> Option<usize> {
    let mut coord = None;
    for (j, &p) in idx.powers.iter().enumerate() {
        if p > 0 {
            if coord.is_some() {
                return None;
            }
            coord = Some(j);
        }
    }
    coord
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn hermite_degree_zero_is_one() {
        assert_eq!(hermite(0, 3.7), 1.0);
    }

    #[test]
    fn hermite_degree_two_vanishes_at_one() {
        assert_abs_diff_eq!(hermite(2, 1.0), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn hermite_degree_three_at_two() {
        // h_3(w) = (w³ − 3w)/√6
        assert_abs_diff_eq!(hermite(3, 2.0), 2.0 / 6.0_f64.sqrt(), epsilon = 1e-14);
    }

    /// Exact integer-coefficient expansion of the unnormalized He_ℓ, evaluated
    /// by Horner and rescaled by √(ℓ!); independent of the recurrence path.
    fn hermite_by_expansion(ell: usize, w: f64) -> f64 {
        // He_{ℓ+1} = w·He_ℓ − ℓ·He_{ℓ−1} on integer coefficient vectors.
        let mut coeffs: Vec<Vec<i128>> = vec![vec![1], vec![0, 1]];
        for l in 1..=ell.max(1) {
            let prev = &coeffs[l - 1];
            let cur = &coeffs[l];
            let mut next = vec![0i128; l + 2];
            for (k, &c) in cur.iter().enumerate() {
                next[k + 1] += c;
            }
            for (k, &c) in prev.iter().enumerate() {
                next[k] -= l as i128 * c;
            }
            coeffs.push(next);
        }
        let val: f64 = coeffs[ell]
            .iter()
            .rev()
            .fold(0.0, |acc, &c| acc * w + c as f64);
        let fact: f64 = (1..=ell as u64).map(|i| i as f64).product();
        val / fact.sqrt()
    }

    #[test]
    fn recurrence_matches_explicit_expansion() {
        for ell in 0..=10 {
            for i in 0..=100 {
                let w = -5.0 + 0.1 * i as f64;
                let a = hermite(ell, w);
                let b = hermite_by_expansion(ell, w);
                let scale = 1.0_f64.max(b.abs());
                assert!(
                    (a - b).abs() <= 1e-10 * scale,
                    "ell={ell}, w={w}: {a} vs {b}"
                );
            }
        }
    }

    #[test]
    fn basis_ordering_m3_d2() {
        let basis = SieveBasis::new(3, 2).unwrap();
        let got: Vec<Vec<u32>> = basis.indices().iter().map(|i| i.powers().to_vec()).collect();
        assert_eq!(
            got,
            vec![
                vec![0, 0],
                vec![1, 0],
                vec![0, 1],
                vec![2, 0],
                vec![1, 1],
                vec![0, 2]
            ]
        );
        assert_eq!(basis.len(), 6);
    }

    #[test]
    fn basis_univariate_degenerates() {
        for m in 1..=6 {
            let basis = SieveBasis::new(m, 1).unwrap();
            assert_eq!(basis.len(), m);
            for (ell, idx) in basis.indices().iter().enumerate() {
                assert_eq!(idx.powers(), &[ell as u32]);
            }
        }
    }

    #[test]
    fn basis_size_matches_binomial() {
        let basis = SieveBasis::new(2, 3).unwrap();
        assert_eq!(basis.len(), 4);
        for (m, d) in [(3usize, 2usize), (4, 3), (5, 5), (2, 10), (6, 4)] {
            let basis = SieveBasis::new(m, d).unwrap();
            assert_eq!(basis.len(), binomial(m + d - 1, d) as usize);
            // Block sizes sum: Σ_{ℓ<m} C(d+ℓ−1, d−1) = C(m+d−1, d).
            let mut total = 0;
            for ell in 0..m {
                let block = basis.block_range(ell).len();
                assert_eq!(block, binomial(d + ell - 1 + 1 - 1, d - 1) as usize);
                total += block;
            }
            assert_eq!(total, basis.len());
        }
    }

    #[test]
    fn basis_overflow_rejected() {
        assert!(matches!(
            SieveBasis::new(60, 40),
            Err(Error::BasisOverflow { .. })
        ));
    }

    #[test]
    fn pinned_selection_positions() {
        // First d slots of each degree block: (ℓ,0,…,0), then (ℓ−1, e_j).
        let basis = SieveBasis::new(4, 3).unwrap();
        for ell in 1..4u32 {
            let range = basis.selection_positions(ell as usize);
            let idx0 = &basis.indices()[range.start];
            let mut want = [0u32; 3];
            want[0] = ell;
            assert_eq!(idx0.powers(), &want[..]);
            for j in 1..3 {
                let idx = &basis.indices()[range.start + j];
                let mut want = [0u32; 3];
                want[0] = ell - 1;
                want[j] = 1;
                assert_eq!(idx.powers(), &want[..]);
            }
        }
    }

    #[test]
    fn pure_power_positions_match_closed_form() {
        // The recovery formulas presume pure powers ℓ·e_j at offsets
        //   ℓ_1 = C(d+ℓ−1, d) + 1,
        //   ℓ_j = ℓ_1 + C(d+ℓ−1, d−1) − C(d−j+ℓ, d−j)   (1-based),
        // consistent with ℓ_d = C(d+ℓ, d).
        for (m, d) in [(4usize, 2usize), (4, 3), (3, 5), (5, 4)] {
            let basis = SieveBasis::new(m, d).unwrap();
            for ell in 1..m {
                let one_based_first = binomial(d + ell - 1, d) as usize + 1;
                assert_eq!(basis.pure_power_position(ell, 0) + 1, one_based_first);
                for j in 2..=d {
                    let expect = one_based_first + binomial(d + ell - 1, d - 1) as usize
                        - binomial(d - j + ell, d - j) as usize;
                    assert_eq!(
                        basis.pure_power_position(ell, j - 1) + 1,
                        expect,
                        "m={m} d={d} ell={ell} j={j}"
                    );
                }
                let last = basis.pure_power_position(ell, d - 1) + 1;
                assert_eq!(last, binomial(d + ell, d) as usize);
            }
        }
    }

    #[test]
    fn eval_at_origin_m3_d2() {
        let basis = SieveBasis::new(3, 2).unwrap();
        let h = basis.eval(&[0.0, 0.0]).unwrap();
        let inv_sqrt2 = 1.0 / 2.0_f64.sqrt();
        let want = [1.0, 0.0, 0.0, -inv_sqrt2, 0.0, -inv_sqrt2];
        for (a, b) in h.iter().zip(want.iter()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-15);
        }
    }

    #[test]
    fn eval_constant_basis() {
        for d in 1..5 {
            let basis = SieveBasis::new(1, d).unwrap();
            let x: Vec<f64> = (0..d).map(|j| 0.3 * j as f64 - 1.0).collect();
            assert_eq!(basis.eval(&x).unwrap(), vec![1.0]);
        }
    }

    #[test]
    fn eval_linear_block() {
        let basis = SieveBasis::new(2, 2).unwrap();
        let h = basis.eval(&[1.0, 2.0]).unwrap();
        assert_eq!(h, vec![1.0, 1.0, 2.0]);
    }

    #[test]
    fn eval_dimension_mismatch() {
        let basis = SieveBasis::new(2, 2).unwrap();
        assert!(basis.eval(&[1.0]).is_err());
    }

    #[test]
    fn gamma_degree_one_reproduces_theta() {
        let basis = SieveBasis::new(2, 2).unwrap();
        let gamma = basis.gamma_from_index(&[0.0, 1.0], &[1.0, 0.0]).unwrap();
        assert_eq!(gamma.as_slice(), &[0.0, 1.0, 0.0]);
    }

    #[test]
    fn gamma_degree_two_block() {
        let basis = SieveBasis::new(3, 2).unwrap();
        let gamma = basis
            .gamma_from_index(&[0.0, 0.0, 2.0], &[0.6, 0.8])
            .unwrap();
        let block: Vec<f64> = basis.block_range(2).map(|i| gamma[i]).collect();
        assert_abs_diff_eq!(block[0], 0.72, epsilon = 1e-12);
        assert_abs_diff_eq!(block[1], 2.0_f64.sqrt() * 2.0 * 0.48, epsilon = 1e-12);
        assert_abs_diff_eq!(block[2], 1.28, epsilon = 1e-12);
    }

    #[test]
    fn gamma_rejects_non_unit_theta() {
        let basis = SieveBasis::new(2, 2).unwrap();
        assert!(basis.gamma_from_index(&[0.0, 1.0], &[1.0, 0.5]).is_err());
    }

    #[test]
    fn factorization_identity_spot_check() {
        use rand::prelude::*;
        use rand_chacha::ChaCha8Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let basis = SieveBasis::new(4, 3).unwrap();
        let b = [0.4, -1.1, 0.3, 0.9];
        let raw = [0.5, -1.0, 2.0];
        let norm = raw.iter().map(|v| v * v).sum::<f64>().sqrt();
        let theta: Vec<f64> = raw.iter().map(|v| v / norm).collect();
        let gamma = basis.gamma_from_index(&b, &theta).unwrap();
        for _ in 0..100 {
            let x: Vec<f64> = (0..3).map(|_| rng.random_range(-2.5..2.5)).collect();
            let h = basis.eval(&x).unwrap();
            let lhs: f64 = gamma.as_slice().iter().zip(&h).map(|(g, v)| g * v).sum();
            let w: f64 = x.iter().zip(&theta).map(|(a, t)| a * t).sum();
            let hs = hermite_sequence(3, w);
            let rhs: f64 = b.iter().zip(&hs).map(|(c, v)| c * v).sum();
            assert!((lhs - rhs).abs() < 1e-9, "lhs={lhs} rhs={rhs}");
        }
    }
}
