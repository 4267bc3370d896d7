//! Convex quantile-loss solvers.
//!
//! Minimizes over coefficients `ψ`
//!
//! ```text
//! (1/n_norm) Σ_i ρ_τ(y_i − x_i'ψ) + (a/2)‖ψ‖²,   ρ_τ(u) = u(τ − 1{u<0}),
//! ```
//!
//! where `n_norm` is a caller-supplied normalization: `n` for standalone
//! problems, the panel-wide `Σ_t n_t` when the problem is one period of a
//! separable panel objective.
//!
//! The scheme smooths the check loss by its Moreau envelope with a shrinking
//! smoothing parameter `δ`. Each smoothing level is minimized by a damped
//! Newton iteration on the piecewise-quadratic smoothed objective, with steps
//! accepted only when the true (unsmoothed) objective decreases, so the
//! recorded objective trace is non-increasing by construction. A final
//! subgradient check certifies optimality; for unpenalized problems the
//! solution is additionally snapped to an interpolating vertex when that
//! vertex passes the same check.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

use crate::error::{Error, Result};

/// Check loss `ρ_τ(u) = u(τ − 1{u<0})`.
pub fn quantile_loss(u: f64, tau: f64) -> f64 {
    if u < 0.0 {
        u * (tau - 1.0)
    } else {
        u * tau
    }
}

/// One quantile-regression instance.
#[derive(Debug, Clone)]
pub struct QrProblem {
    pub design: Array2<f64>,
    pub response: Array1<f64>,
    /// Quantile level, strictly inside (0,1).
    pub tau: f64,
    /// Ridge weight `a ≥ 0` on (1/2)‖ψ‖².
    pub ridge: f64,
    /// Loss normalization `n_norm`; defaults to the number of rows.
    pub loss_norm: f64,
}

impl QrProblem {
    pub fn new(design: Array2<f64>, response: Array1<f64>, tau: f64) -> Result<Self> {
        let n = design.nrows();
        let problem = QrProblem {
            loss_norm: n as f64,
            design,
            response,
            tau,
            ridge: 0.0,
        };
        problem.validate()?;
        Ok(problem)
    }

    pub fn with_ridge(mut self, ridge: f64) -> Self {
        self.ridge = ridge;
        self
    }

    pub fn with_loss_norm(mut self, loss_norm: f64) -> Self {
        self.loss_norm = loss_norm;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let (n, p) = self.design.dim();
        if n == 0 || p == 0 {
            return Err(Error::InvalidInput(format!(
                "quantile regression needs n >= 1 and p >= 1, got {n}x{p}"
            )));
        }
        if self.response.len() != n {
            return Err(Error::Dimension(format!(
                "response length {} does not match {} design rows",
                self.response.len(),
                n
            )));
        }
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return Err(Error::InvalidInput(format!(
                "tau must lie strictly inside (0,1), got {}",
                self.tau
            )));
        }
        if !self.ridge.is_finite() || self.ridge < 0.0 {
            return Err(Error::InvalidInput(format!(
                "ridge weight must be finite and nonnegative, got {}",
                self.ridge
            )));
        }
        if !(self.loss_norm.is_finite() && self.loss_norm > 0.0) {
            return Err(Error::InvalidInput(
                "loss normalization must be finite and positive".into(),
            ));
        }
        if self.design.iter().any(|v| !v.is_finite()) || self.response.iter().any(|v| !v.is_finite())
        {
            return Err(Error::InvalidInput(
                "design and response must be finite".into(),
            ));
        }
        Ok(())
    }
}

/// Solver output.
#[derive(Debug, Clone)]
pub struct QrSolution {
    pub coefficients: Array1<f64>,
    /// Achieved penalized objective on the contract normalization.
    pub objective: f64,
    pub iterations: usize,
    /// Subgradient stationarity certified at the returned point.
    pub converged: bool,
    /// Design is numerically rank-deficient and `a = 0`: the minimizer is a
    /// set, any point of which may be returned.
    pub non_unique: bool,
    /// KKT residual of the explicit subgradient check.
    pub kkt_residual: f64,
    /// True objective after every accepted step; non-increasing.
    pub trace: Vec<f64>,
}

/// Solve the ridge-penalized problem.
pub fn solve_penalized(problem: &QrProblem) -> Result<QrSolution> {
    problem.validate()?;
    Ok(solve_inner(
        problem.design.view(),
        problem.response.view(),
        problem.tau,
        problem.ridge,
        problem.loss_norm,
    ))
}

/// Unpenalized quantile regression of `response` on `design`.
pub fn solve_plain(
    design: ArrayView2<'_, f64>,
    response: ArrayView1<'_, f64>,
    tau: f64,
) -> Result<QrSolution> {
    let problem = QrProblem::new(design.to_owned(), response.to_owned(), tau)?;
    solve_penalized(&problem)
}

const MAX_ITERATIONS: usize = 10_000;
const MAX_STAGE_ITERATIONS: usize = 300;

/// Explicit subgradient stationarity residual at `psi`.
///
/// Picks `v_i = ρ_τ'(u_i)` on nonzero residuals and chooses the free
/// subgradients on (numerically) zero residuals inside `[τ−1, τ]` to minimize
/// `‖aψ − (1/n_norm) Σ_i x_i v_i‖`; returns that minimized norm.
pub fn kkt_residual(problem: &QrProblem, psi: ArrayView1<'_, f64>) -> f64 {
    kkt_residual_views(
        problem.design.view(),
        problem.response.view(),
        problem.tau,
        problem.ridge,
        problem.loss_norm,
        psi,
    )
}

fn kkt_residual_views(
    x: ArrayView2<'_, f64>,
    y: ArrayView1<'_, f64>,
    tau: f64,
    ridge: f64,
    loss_norm: f64,
    psi: ArrayView1<'_, f64>,
) -> f64 {
    let (n, p) = x.dim();
    let inv_norm = 1.0 / loss_norm;
    let y_scale = 1.0 + y.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let zero_band = 1e-9 * y_scale;

    let mut g = vec![0.0f64; p];
    for (j, &c) in psi.iter().enumerate() {
        g[j] = ridge * c;
    }
    let mut zero_rows: Vec<usize> = Vec::new();
    for i in 0..n {
        let mut u = y[i];
        for j in 0..p {
            u -= x[[i, j]] * psi[j];
        }
        if u.abs() <= zero_band {
            zero_rows.push(i);
        } else {
            let v = if u > 0.0 { tau } else { tau - 1.0 };
            for j in 0..p {
                g[j] -= inv_norm * x[[i, j]] * v;
            }
        }
    }
    // Coordinate descent on the boxed subgradients of the zero-residual rows.
    let mut v = vec![0.0f64; zero_rows.len()];
    let mut resid: Vec<f64> = g.clone();
    for _ in 0..200 {
        let mut moved = 0.0f64;
        for (zi, &i) in zero_rows.iter().enumerate() {
            let mut num = 0.0;
            let mut den = 0.0;
            for j in 0..p {
                let xj = x[[i, j]] * inv_norm;
                num += xj * (resid[j] + xj * v[zi]);
                den += xj * xj;
            }
            if den == 0.0 {
                continue;
            }
            let new_v = (num / den).clamp(tau - 1.0, tau);
            let delta = new_v - v[zi];
            if delta != 0.0 {
                for j in 0..p {
                    resid[j] -= x[[i, j]] * inv_norm * delta;
                }
                moved = moved.max(delta.abs());
                v[zi] = new_v;
            }
        }
        if moved < 1e-14 {
            break;
        }
    }
    resid.iter().map(|r| r * r).sum::<f64>().sqrt()
}

fn solve_inner(
    x: ArrayView2<'_, f64>,
    y: ArrayView1<'_, f64>,
    tau: f64,
    ridge: f64,
    loss_norm: f64,
) -> QrSolution {
    let (n, p) = x.dim();
    let nf = n as f64;
    // Internal per-observation scale: (1/n) Σ ρ + (ridge_eff/2)‖ψ‖² shares
    // its minimizer with the contract objective.
    let ridge_eff = ridge * loss_norm / nf;
    let y_scale = 1.0 + y.iter().fold(0.0f64, |a, v| a.max(v.abs()));

    // Flat row-major design for the hot loops.
    let x_flat_owned;
    let xs: &[f64] = match x.as_slice() {
        Some(s) => s,
        None => {
            x_flat_owned = x.to_owned();
            x_flat_owned.as_slice().unwrap()
        }
    };

    let mut psi = vec![0.0f64; p];
    let mut residuals: Vec<f64> = y.iter().copied().collect();
    let mut hessian = vec![0.0f64; p * p];
    let mut grad = vec![0.0f64; p];
    let mut dir = vec![0.0f64; p];
    let mut xdir = vec![0.0f64; n];

    let loss_of = |res: &[f64]| -> f64 {
        let mut loss = 0.0;
        for &u in res {
            loss += quantile_loss(u, tau);
        }
        loss
    };
    let sq_of = |psi: &[f64]| -> f64 { psi.iter().map(|c| c * c).sum() };

    let mut obj = loss_of(&residuals) / nf;
    let mut trace = vec![obj];
    let mut iterations = 0usize;

    let delta_min = 1e-9 * y_scale;
    let mut delta = 0.1 * y_scale;
    let grad_tol = 1e-8 * y_scale;

    'outer: while delta >= delta_min * 0.999 {
        for _ in 0..MAX_STAGE_ITERATIONS {
            if iterations >= MAX_ITERATIONS {
                break 'outer;
            }
            // Smoothed gradient and generalized Hessian at the current point.
            let lower = -delta * (1.0 - tau);
            let upper = delta * tau;
            grad.iter_mut().for_each(|g| *g = 0.0);
            hessian.iter_mut().for_each(|h| *h = 0.0);
            let w_int = 1.0 / (nf * delta);
            for i in 0..n {
                let u = residuals[i];
                let row = &xs[i * p..(i + 1) * p];
                let slope = if u > upper {
                    tau
                } else if u < lower {
                    tau - 1.0
                } else {
                    u / delta
                };
                let s = slope / nf;
                for (g, &xij) in grad.iter_mut().zip(row) {
                    *g -= xij * s;
                }
                if u <= upper && u >= lower {
                    for j in 0..p {
                        let wx = w_int * row[j];
                        if wx == 0.0 {
                            continue;
                        }
                        let dst = &mut hessian[j * p + j..j * p + p];
                        for (h, &xik) in dst.iter_mut().zip(&row[j..p]) {
                            *h += wx * xik;
                        }
                    }
                }
            }
            for j in 0..p {
                grad[j] += ridge_eff * psi[j];
                hessian[j * p + j] += ridge_eff;
            }
            let grad_norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
            if grad_norm <= grad_tol.max(1e-6 * delta) {
                break;
            }

            // Damped Newton direction.
            let trace_h: f64 = (0..p).map(|j| hessian[j * p + j]).sum();
            let mut damping = 0.0;
            let solved = loop {
                if cholesky_solve(&hessian, &grad, &mut dir, p, damping) {
                    break true;
                }
                damping = if damping == 0.0 {
                    1e-10 * (1.0 + trace_h / p as f64)
                } else {
                    damping * 100.0
                };
                if damping > 1e12 * (1.0 + trace_h) {
                    break false;
                }
            };
            if !solved {
                break;
            }

            // ψ' = ψ − t·dir shifts residuals by +t·(X dir); precompute the
            // shift so every backtracking step costs O(n).
            for i in 0..n {
                let row = &xs[i * p..(i + 1) * p];
                let mut acc = 0.0;
                for (xij, dj) in row.iter().zip(&dir) {
                    acc += xij * dj;
                }
                xdir[i] = acc;
            }

            // Backtracking: accept only true-objective decrease.
            let mut step = 1.0;
            let mut accepted = false;
            for _ in 0..60 {
                let mut loss = 0.0;
                for (u, xd) in residuals.iter().zip(&xdir) {
                    loss += quantile_loss(u + step * xd, tau);
                }
                let mut sq = 0.0;
                for (c, dj) in psi.iter().zip(&dir) {
                    let v = c - step * dj;
                    sq += v * v;
                }
                let cand_obj = loss / nf + 0.5 * ridge_eff * sq;
                if cand_obj < obj {
                    for (c, dj) in psi.iter_mut().zip(&dir) {
                        *c -= step * dj;
                    }
                    for (u, xd) in residuals.iter_mut().zip(&xdir) {
                        *u += step * xd;
                    }
                    obj = cand_obj;
                    trace.push(obj);
                    accepted = true;
                    break;
                }
                step *= 0.5;
            }
            iterations += 1;
            if !accepted {
                break;
            }
        }
        delta *= 0.1;
    }
    // Refresh residuals and the objective from scratch to clear the drift
    // the incremental updates accumulate.
    for i in 0..n {
        let row = &xs[i * p..(i + 1) * p];
        let mut acc = y[i];
        for (xij, c) in row.iter().zip(&psi) {
            acc -= xij * c;
        }
        residuals[i] = acc;
    }
    obj = loss_of(&residuals) / nf + 0.5 * ridge_eff * sq_of(&psi);

    let kkt_tol = 1e-7 * y_scale * (nf / loss_norm);
    let mut best = Array1::from_vec(psi);
    let mut best_obj = obj;

    let non_unique = ridge == 0.0 && design_rank_deficient(x);

    // Vertex polish: an unpenalized optimum interpolates p observations when
    // the design is in general position, so try the vertices spanned by the
    // rows with the smallest smoothed residuals. Large problems skip this;
    // the smoothed iterate is already inside tolerance there.
    if ridge == 0.0 && n >= p && !non_unique && n <= 2000 {
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| {
            residuals[a]
                .abs()
                .total_cmp(&residuals[b].abs())
                .then(a.cmp(&b))
        });
        order.truncate((p + 3).min(n));
        if let Some((vertex, internal_obj)) =
            polish_from_candidates(x, y, tau, loss_norm, &order, best_obj, kkt_tol)
        {
            if internal_obj <= best_obj {
                best = vertex;
                best_obj = internal_obj;
                trace.push(best_obj);
            }
        }
    }

    let kkt = kkt_residual_views(x, y, tau, ridge, loss_norm, best.view());
    let converged = kkt <= kkt_tol;
    QrSolution {
        objective: best_obj * (nf / loss_norm),
        coefficients: best,
        iterations,
        converged,
        non_unique,
        kkt_residual: kkt,
        trace,
    }
}

/// Solve `(H + damping·I) dir = grad` in place; returns false when the
/// factorization fails. `hessian` stores the upper triangle row-major.
fn cholesky_solve(hessian: &[f64], grad: &[f64], dir: &mut [f64], p: usize, damping: f64) -> bool {
    let mut chol = vec![0.0f64; p * p];
    for j in 0..p {
        for k in j..p {
            chol[j * p + k] = hessian[j * p + k];
        }
        chol[j * p + j] += damping;
    }
    // In-place upper Cholesky: chol = R'R.
    for j in 0..p {
        let mut diag = chol[j * p + j];
        for i in 0..j {
            diag -= chol[i * p + j] * chol[i * p + j];
        }
        if diag <= 0.0 || !diag.is_finite() {
            return false;
        }
        let rjj = diag.sqrt();
        chol[j * p + j] = rjj;
        for k in (j + 1)..p {
            let mut v = chol[j * p + k];
            for i in 0..j {
                v -= chol[i * p + j] * chol[i * p + k];
            }
            chol[j * p + k] = v / rjj;
        }
    }
    // R' z = grad, then R dir = z.
    for j in 0..p {
        let mut v = grad[j];
        for i in 0..j {
            v -= chol[i * p + j] * dir[i];
        }
        dir[j] = v / chol[j * p + j];
    }
    for j in (0..p).rev() {
        let mut v = dir[j];
        for k in (j + 1)..p {
            v -= chol[j * p + k] * dir[k];
        }
        dir[j] = v / chol[j * p + j];
    }
    true
}

fn design_rank_deficient(x: ArrayView2<'_, f64>) -> bool {
    let (n, p) = x.dim();
    if n < p {
        return true;
    }
    let mut gram = vec![0.0f64; p * p];
    for i in 0..n {
        for j in 0..p {
            let xij = x[[i, j]];
            if xij == 0.0 {
                continue;
            }
            for k in j..p {
                gram[j * p + k] += xij * x[[i, k]];
            }
        }
    }
    let max_diag = (0..p).fold(0.0f64, |a, j| a.max(gram[j * p + j]));
    if max_diag == 0.0 {
        return true;
    }
    // Cholesky pivots against a relative floor serve as the rank probe.
    let floor = 1e-12 * max_diag;
    for j in 0..p {
        let mut diag = gram[j * p + j];
        for i in 0..j {
            diag -= gram[i * p + j] * gram[i * p + j];
        }
        if diag <= floor {
            return true;
        }
        let rjj = diag.sqrt();
        gram[j * p + j] = rjj;
        for k in (j + 1)..p {
            let mut v = gram[j * p + k];
            for i in 0..j {
                v -= gram[i * p + j] * gram[i * p + k];
            }
            gram[j * p + k] = v / rjj;
        }
    }
    false
}

/// Vertex polish working on explicit candidate rows (smallest residuals of
/// the smoothed solution). Returns (coefficients, internal objective).
fn polish_from_candidates(
    x: ArrayView2<'_, f64>,
    y: ArrayView1<'_, f64>,
    tau: f64,
    loss_norm: f64,
    candidates: &[usize],
    current_internal_obj: f64,
    kkt_tol: f64,
) -> Option<(Array1<f64>, f64)> {
    let (n, p) = x.dim();
    let nf = n as f64;
    let mut combo: Vec<usize> = (0..p).collect();
    let mut best: Option<(Array1<f64>, f64)> = None;
    let limit = candidates.len();
    let mut tried = 0usize;
    loop {
        let rows: Vec<usize> = combo.iter().map(|&c| candidates[c]).collect();
        if let Some(beta) = solve_square(x, y, &rows) {
            let mut loss = 0.0;
            for i in 0..n {
                let mut u = y[i];
                for j in 0..p {
                    u -= x[[i, j]] * beta[j];
                }
                loss += quantile_loss(u, tau);
            }
            let obj = loss / nf;
            if obj <= current_internal_obj + 1e-12 * (1.0 + current_internal_obj.abs()) {
                let arr = Array1::from_vec(beta);
                let kkt = kkt_residual_views(x, y, tau, 0.0, loss_norm, arr.view());
                if kkt <= kkt_tol && best.as_ref().is_none_or(|(_, o)| obj < *o) {
                    best = Some((arr, obj));
                }
            }
        }
        tried += 1;
        if tried >= 40 {
            return best;
        }
        // Next lexicographic p-combination of 0..limit.
        let mut i = p;
        loop {
            if i == 0 {
                return best;
            }
            i -= 1;
            if combo[i] != i + limit - p {
                combo[i] += 1;
                for k in (i + 1)..p {
                    combo[k] = combo[k - 1] + 1;
                }
                break;
            }
        }
    }
}

fn solve_square(x: ArrayView2<'_, f64>, y: ArrayView1<'_, f64>, rows: &[usize]) -> Option<Vec<f64>> {
    let p = rows.len();
    let mut a = vec![0.0f64; p * p];
    let mut b = vec![0.0f64; p];
    for (r, &i) in rows.iter().enumerate() {
        for j in 0..p {
            a[r * p + j] = x[[i, j]];
        }
        b[r] = y[i];
    }
    // Gaussian elimination with partial pivoting.
    for col in 0..p {
        let mut piv = col;
        for r in (col + 1)..p {
            if a[r * p + col].abs() > a[piv * p + col].abs() {
                piv = r;
            }
        }
        if a[piv * p + col].abs() < 1e-12 {
            return None;
        }
        if piv != col {
            for j in 0..p {
                a.swap(col * p + j, piv * p + j);
            }
            b.swap(col, piv);
        }
        let d = a[col * p + col];
        for r in (col + 1)..p {
            let f = a[r * p + col] / d;
            if f == 0.0 {
                continue;
            }
            for j in col..p {
                a[r * p + j] -= f * a[col * p + j];
            }
            b[r] -= f * b[col];
        }
    }
    let mut beta = vec![0.0f64; p];
    for col in (0..p).rev() {
        let mut v = b[col];
        for j in (col + 1)..p {
            v -= a[col * p + j] * beta[j];
        }
        beta[col] = v / a[col * p + col];
    }
    if beta.iter().all(|v| v.is_finite()) {
        Some(beta)
    } else {
        None
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::{arr1, arr2, Array};
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn check_loss_values() {
        assert_eq!(quantile_loss(0.0, 0.3), 0.0);
        assert_abs_diff_eq!(quantile_loss(2.0, 0.05), 0.1, epsilon = 1e-15);
        assert_abs_diff_eq!(quantile_loss(-2.0, 0.05), 1.9, epsilon = 1e-15);
    }

    fn random_problem(rng: &mut ChaCha8Rng, n: usize, p: usize) -> (Array2<f64>, Array1<f64>) {
        let design = Array::from_shape_fn((n, p), |_| rng.random_range(-2.0..2.0));
        let response = Array::from_shape_fn(n, |_| rng.random_range(-3.0..3.0));
        (design, response)
    }

    #[test]
    fn zero_response_gives_zero_coefficients() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (design, _) = random_problem(&mut rng, 40, 4);
        let problem = QrProblem::new(design, Array1::zeros(40), 0.3)
            .unwrap()
            .with_ridge(0.1);
        let sol = solve_penalized(&problem).unwrap();
        for c in sol.coefficients.iter() {
            assert!(c.abs() < 1e-10, "coefficients {:?}", sol.coefficients);
        }
    }

    #[test]
    fn huge_ridge_shrinks_to_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (design, response) = random_problem(&mut rng, 50, 3);
        let problem = QrProblem::new(design, response, 0.4)
            .unwrap()
            .with_ridge(1e6);
        let sol = solve_penalized(&problem).unwrap();
        let norm: f64 = sol.coefficients.iter().map(|c| c * c).sum::<f64>().sqrt();
        assert!(norm < 1e-4, "norm = {norm}");
    }

    #[test]
    fn intercept_only_median() {
        let design = Array2::from_elem((5, 1), 1.0);
        let response = arr1(&[1.0, 2.0, 3.0, 4.0, 5.0]);
        let sol = solve_plain(design.view(), response.view(), 0.5).unwrap();
        assert_abs_diff_eq!(sol.coefficients[0], 3.0, epsilon = 1e-9);
        assert!(sol.converged);
    }

    #[test]
    fn intercept_only_low_tail() {
        let design = Array2::from_elem((5, 1), 1.0);
        let response = arr1(&[1.0, 2.0, 3.0, 4.0, 5.0]);
        let sol = solve_plain(design.view(), response.view(), 0.05).unwrap();
        // Grid-scan oracle over c: the minimizer sits at the smallest order
        // statistic.
        let mut best = (f64::INFINITY, f64::NAN);
        for step in 0..=1000 {
            let c = 0.5 + 5.0 * step as f64 / 1000.0;
            let obj: f64 = response.iter().map(|&y| quantile_loss(y - c, 0.05)).sum();
            if obj < best.0 {
                best = (obj, c);
            }
        }
        assert_abs_diff_eq!(best.1, 1.0, epsilon = 5e-3);
        assert_abs_diff_eq!(sol.coefficients[0], 1.0, epsilon = 1e-9);
    }

    #[test]
    fn calibration_bounds_intercept_only() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for trial in 0..20 {
            let n = 20 + 7 * trial;
            let tau = [0.1, 0.25, 0.5, 0.8][trial % 4];
            let response = Array::from_shape_fn(n, |_| rng.random_range(-5.0..5.0));
            let design = Array2::from_elem((n, 1), 1.0);
            let sol = solve_plain(design.view(), response.view(), tau).unwrap();
            let c = sol.coefficients[0];
            let below = response.iter().filter(|&&y| y - c < 0.0).count() as f64;
            let at_or_below = response.iter().filter(|&&y| y - c <= 1e-12).count() as f64;
            let nf = n as f64;
            assert!(
                below / nf <= tau + 1e-12,
                "strictly-below fraction {} > tau {tau}",
                below / nf
            );
            assert!(
                at_or_below / nf >= tau - 1e-12,
                "at-or-below fraction {} < tau {tau}",
                at_or_below / nf
            );
        }
    }

    #[test]
    fn scaling_equivariance_unpenalized() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (design, response) = random_problem(&mut rng, 35, 3);
        let base = solve_plain(design.view(), response.view(), 0.3).unwrap();
        let scaled_resp = response.mapv(|v| 2.5 * v);
        let scaled = solve_plain(design.view(), scaled_resp.view(), 0.3).unwrap();
        for (a, b) in base.coefficients.iter().zip(scaled.coefficients.iter()) {
            assert_abs_diff_eq!(2.5 * a, *b, epsilon = 1e-8);
        }
    }

    #[test]
    fn trace_is_monotone_and_kkt_certified() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for trial in 0..10 {
            let (design, response) = random_problem(&mut rng, 60, 4);
            let ridge = [0.0, 0.01, 0.5][trial % 3];
            let problem = QrProblem::new(design, response, 0.25)
                .unwrap()
                .with_ridge(ridge);
            let sol = solve_penalized(&problem).unwrap();
            for w in sol.trace.windows(2) {
                assert!(w[1] <= w[0] + 1e-14, "trace increased: {} -> {}", w[0], w[1]);
            }
            assert!(sol.converged, "trial {trial}: kkt residual {}", sol.kkt_residual);
            let recheck = kkt_residual(&problem, sol.coefficients.view());
            assert!(recheck <= 1e-7 * (1.0 + 3.0), "kkt recheck {recheck}");
        }
    }

    #[test]
    fn objective_no_worse_than_zero_vector() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let (design, response) = random_problem(&mut rng, 45, 5);
        let problem = QrProblem::new(design, response.clone(), 0.7)
            .unwrap()
            .with_ridge(0.02);
        let sol = solve_penalized(&problem).unwrap();
        let zero_obj: f64 =
            response.iter().map(|&y| quantile_loss(y, 0.7)).sum::<f64>() / 45.0;
        assert!(sol.objective <= zero_obj + 1e-12);
    }

    #[test]
    fn rank_deficient_design_flagged() {
        let design = arr2(&[
            [1.0, 2.0, 3.0],
            [2.0, 4.0, 6.0],
            [1.0, 0.0, 1.0],
            [3.0, 1.0, 4.0],
            [0.5, 2.0, 2.5],
        ]);
        let response = arr1(&[1.0, -1.0, 0.5, 2.0, 0.3]);
        let sol = solve_plain(design.view(), response.view(), 0.5).unwrap();
        assert!(sol.non_unique);
    }

    #[test]
    fn per_period_loss_norm_matches_rescaled_ridge() {
        // Solving with loss_norm = 4n and ridge a equals solving with
        // loss_norm = n and ridge 4a.
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let (design, response) = random_problem(&mut rng, 30, 3);
        let a = QrProblem::new(design.clone(), response.clone(), 0.4)
            .unwrap()
            .with_ridge(0.01)
            .with_loss_norm(120.0);
        let b = QrProblem::new(design, response, 0.4)
            .unwrap()
            .with_ridge(0.04);
        let sa = solve_penalized(&a).unwrap();
        let sb = solve_penalized(&b).unwrap();
        for (x, y) in sa.coefficients.iter().zip(sb.coefficients.iter()) {
            assert_abs_diff_eq!(x, y, epsilon = 1e-7);
        }
        assert_abs_diff_eq!(sa.objective * 4.0, sb.objective, epsilon = 1e-9);
    }

    #[test]
    fn invalid_inputs_rejected() {
        let design = Array2::from_elem((3, 1), 1.0);
        let response = arr1(&[1.0, 2.0, 3.0]);
        assert!(QrProblem::new(design.clone(), response.clone(), 0.0).is_err());
        assert!(QrProblem::new(design.clone(), response.clone(), 1.0).is_err());
        assert!(QrProblem::new(design.clone(), arr1(&[1.0]), 0.5).is_err());
        let bad = QrProblem::new(design, response, 0.5).unwrap().with_ridge(-1.0);
        assert!(bad.validate().is_err());
    }
}
