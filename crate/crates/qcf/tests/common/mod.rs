//! Test-only oracles, kept independent of the library's solver paths.

#![allow(dead_code)]

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

/// Exact quantile-regression objective via a dense primal simplex on the LP
///
/// ```text
/// min τ1'u⁺ + (1−τ)1'u⁻   s.t.  Xβ⁺ − Xβ⁻ + u⁺ − u⁻ = y,  all vars ≥ 0,
/// ```
///
/// returning `min Σ_i ρ_τ(y_i − x_i'β)`. Bland's rule keeps the iteration
/// finite. Independent of the crate's smoothed solver.
pub fn lp_quantile_objective(x: ArrayView2<'_, f64>, y: ArrayView1<'_, f64>, tau: f64) -> f64 {
    let (n, p) = x.dim();
    let n_vars = 2 * p + 2 * n;
    // Column-major dense constraint matrix and cost vector.
    let col = |j: usize, i: usize| -> f64 {
        if j < p {
            x[[i, j]]
        } else if j < 2 * p {
            -x[[i, j - p]]
        } else if j < 2 * p + n {
            if i == j - 2 * p {
                1.0
            } else {
                0.0
            }
        } else if i == j - 2 * p - n {
            -1.0
        } else {
            0.0
        }
    };
    let cost = |j: usize| -> f64 {
        if j < 2 * p {
            0.0
        } else if j < 2 * p + n {
            tau
        } else {
            1.0 - tau
        }
    };

    // Tableau rows scaled so the starting slack basis has +1 pivots.
    let mut tableau = vec![0.0f64; n * (n_vars + 1)];
    let mut basis = vec![0usize; n];
    for i in 0..n {
        let sign = if y[i] >= 0.0 { 1.0 } else { -1.0 };
        for j in 0..n_vars {
            tableau[i * (n_vars + 1) + j] = sign * col(j, i);
        }
        tableau[i * (n_vars + 1) + n_vars] = sign * y[i];
        basis[i] = if y[i] >= 0.0 { 2 * p + i } else { 2 * p + n + i };
    }

    let width = n_vars + 1;
    for _iteration in 0..200_000 {
        // Reduced costs: c_j − c_B' B⁻¹ A_j (tableau already holds B⁻¹A).
        let mut entering = None;
        for j in 0..n_vars {
            if basis.contains(&j) {
                continue;
            }
            let mut reduced = cost(j);
            for i in 0..n {
                reduced -= cost(basis[i]) * tableau[i * width + j];
            }
            if reduced < -1e-10 {
                entering = Some(j);
                break; // Bland: smallest index.
            }
        }
        let Some(enter) = entering else { break };
        // Ratio test with Bland tie-break on the leaving basic variable.
        let mut leave: Option<(usize, f64)> = None;
        for i in 0..n {
            let a = tableau[i * width + enter];
            if a > 1e-12 {
                let ratio = tableau[i * width + n_vars] / a;
                match leave {
                    None => leave = Some((i, ratio)),
                    Some((li, lr)) => {
                        if ratio < lr - 1e-12
                            || ((ratio - lr).abs() <= 1e-12 && basis[i] < basis[li])
                        {
                            leave = Some((i, ratio));
                        }
                    }
                }
            }
        }
        let Some((pivot_row, _)) = leave else {
            panic!("unbounded quantile-regression LP (should be impossible)");
        };
        // Pivot.
        let pivot = tableau[pivot_row * width + enter];
        for j in 0..width {
            tableau[pivot_row * width + j] /= pivot;
        }
        for i in 0..n {
            if i == pivot_row {
                continue;
            }
            let factor = tableau[i * width + enter];
            if factor == 0.0 {
                continue;
            }
            for j in 0..width {
                tableau[i * width + j] -= factor * tableau[pivot_row * width + j];
            }
        }
        basis[pivot_row] = enter;
    }

    let mut objective = 0.0;
    for i in 0..n {
        objective += cost(basis[i]) * tableau[i * width + n_vars];
    }
    objective
}

/// Physicists' Gauss–Hermite rule: `∫ f(s) e^{−s²} ds ≈ Σ w_i f(s_i)`.
/// Newton iteration on the orthonormal recurrence (no eigen-solver).
pub fn gauss_hermite(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 2);
    let mut nodes = vec![0.0f64; n];
    let mut weights = vec![0.0f64; n];
    let nf = n as f64;
    let m = n.div_ceil(2);
    let mut z = 0.0f64;
    for i in 0..m {
        z = match i {
            0 => (2.0 * nf + 1.0).sqrt() - 1.85575 * (2.0 * nf + 1.0).powf(-1.0 / 6.0),
            1 => z - 1.14 * nf.powf(0.426) / z,
            2 => 1.86 * z - 0.86 * nodes[0],
            3 => 1.91 * z - 0.91 * nodes[1],
            _ => 2.0 * z - nodes[i - 2],
        };
        let mut pp = 0.0;
        for _ in 0..200 {
            // Orthonormal physicists' Hermite functions at z.
            let mut p1 = std::f64::consts::PI.powf(-0.25);
            let mut p2 = 0.0f64;
            for j in 0..n {
                let p3 = p2;
                p2 = p1;
                let jf = j as f64;
                p1 = z * (2.0 / (jf + 1.0)).sqrt() * p2 - (jf / (jf + 1.0)).sqrt() * p3;
            }
            pp = (2.0 * nf).sqrt() * p2;
            let delta = p1 / pp;
            z -= delta;
            if delta.abs() < 1e-15 {
                break;
            }
        }
        nodes[i] = z;
        nodes[n - 1 - i] = -z;
        weights[i] = 2.0 / (pp * pp);
        weights[n - 1 - i] = weights[i];
    }
    (nodes, weights)
}

/// `(2π)^{−1/2} ∫ f(w) e^{−w²/2} dw` by Gauss–Hermite quadrature.
pub fn gaussian_integral<F: Fn(f64) -> f64>(f: F, n_nodes: usize) -> f64 {
    let (nodes, weights) = gauss_hermite(n_nodes);
    let mut acc = 0.0;
    for (s, w) in nodes.iter().zip(&weights) {
        acc += w * f(std::f64::consts::SQRT_2 * s);
    }
    acc / std::f64::consts::PI.sqrt()
}

pub fn unit_vector(raw: &[f64]) -> Vec<f64> {
    let norm = raw.iter().map(|v| v * v).sum::<f64>().sqrt();
    raw.iter().map(|v| v / norm).collect()
}

/// Mean check loss of a fitted vector against a response.
pub fn mean_check_loss(y: ArrayView1<'_, f64>, fitted: &Array1<f64>, tau: f64) -> f64 {
    let mut acc = 0.0;
    for (yi, fi) in y.iter().zip(fitted.iter()) {
        let u = yi - fi;
        acc += if u < 0.0 { u * (tau - 1.0) } else { u * tau };
    }
    acc / y.len() as f64
}

/// Build a design/response pair with entries in a deterministic range.
pub fn random_instance(
    rng: &mut impl rand::Rng,
    n: usize,
    p: usize,
    with_intercept: bool,
) -> (Array2<f64>, Array1<f64>) {
    let design = Array2::from_shape_fn((n, p), |(i, j)| {
        if with_intercept && j == 0 {
            1.0
        } else {
            let _ = i;
            rng.random_range(-2.0..2.0)
        }
    });
    let response = Array1::from_shape_fn(n, |_| rng.random_range(-3.0..3.0));
    (design, response)
}
