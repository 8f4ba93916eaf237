//! Small numerical helpers: deterministic reductions, finite-difference
//! steps, an L-BFGS minimiser and Gauss–Hermite rules.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

/// Pairwise (tree) summation. The reduction order depends only on the
/// slice length, so results do not depend on how the terms were produced.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    match xs.len() {
        0 => 0.0,
        1 => xs[0],
        2 => xs[0] + xs[1],
        n => {
            let (a, b) = xs.split_at(n / 2);
            pairwise_sum(a) + pairwise_sum(b)
        }
    }
}

/// Pairwise summation of equally sized vectors.
pub fn pairwise_sum_vec(xs: &[DVector<f64>], dim: usize) -> DVector<f64> {
    match xs.len() {
        0 => DVector::zeros(dim),
        1 => xs[0].clone(),
        n => {
            let (a, b) = xs.split_at(n / 2);
            pairwise_sum_vec(a, dim) + pairwise_sum_vec(b, dim)
        }
    }
}

/// Pairwise summation of equally sized matrices.
pub fn pairwise_sum_mat(xs: &[DMatrix<f64>], rows: usize, cols: usize) -> DMatrix<f64> {
    match xs.len() {
        0 => DMatrix::zeros(rows, cols),
        1 => xs[0].clone(),
        n => {
            let (a, b) = xs.split_at(n / 2);
            pairwise_sum_mat(a, rows, cols) + pairwise_sum_mat(b, rows, cols)
        }
    }
}

/// Central-difference step `ε^{1/3} · max(1, |θ|)`.
pub fn fd_step(theta: f64) -> f64 {
    f64::EPSILON.cbrt() * theta.abs().max(1.0)
}

/// Central-difference gradient of a scalar function.
pub fn fd_gradient<F: Fn(&DVector<f64>) -> f64>(f: F, x: &DVector<f64>) -> DVector<f64> {
    DVector::from_fn(x.len(), |h, _| {
        let step = fd_step(x[h]);
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[h] += step;
        xm[h] -= step;
        (f(&xp) - f(&xm)) / (2.0 * step)
    })
}

/// Central-difference Jacobian (columns indexed by coordinate of `x`).
pub fn fd_jacobian<F: FnMut(&DVector<f64>) -> DVector<f64>>(mut f: F, x: &DVector<f64>) -> DMatrix<f64> {
    let cols: Vec<DVector<f64>> = (0..x.len())
        .map(|h| {
            let step = fd_step(x[h]);
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[h] += step;
            xm[h] -= step;
            (f(&xp) - f(&xm)) / (2.0 * step)
        })
        .collect();
    DMatrix::from_columns(&cols)
}

pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(symmetrize(m)).eigenvalues.min()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LbfgsOptions {
    pub max_iter: usize,
    /// Stop once `‖∇f‖∞` falls below this.
    pub grad_tol: f64,
    pub memory: usize,
}

impl Default for LbfgsOptions {
    fn default() -> Self {
        Self {
            max_iter: 500,
            grad_tol: 1e-8,
            memory: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LbfgsResult {
    pub x: DVector<f64>,
    pub value: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Minimise `f`, which returns the value and gradient, by limited-memory
/// BFGS with a strong Wolfe line search.
pub fn lbfgs<F>(f: F, x0: &DVector<f64>, opts: &LbfgsOptions) -> LbfgsResult
where
    F: Fn(&DVector<f64>) -> (f64, DVector<f64>),
{
    let mut x = x0.clone();
    let (mut fx, mut g) = f(&x);
    let mut hist: VecDeque<(DVector<f64>, DVector<f64>, f64)> = VecDeque::new();
    let mut iter = 0;
    while iter < opts.max_iter {
        let gnorm = g.amax();
        if gnorm < opts.grad_tol || !fx.is_finite() {
            break;
        }
        iter += 1;
        // two-loop recursion
        let mut q = g.clone();
        let mut alphas = Vec::with_capacity(hist.len());
        for (s, y, rho) in hist.iter().rev() {
            let a = rho * s.dot(&q);
            q -= y * a;
            alphas.push(a);
        }
        if let Some((s, y, _)) = hist.back() {
            q *= s.dot(y) / y.dot(y);
        }
        for ((s, y, rho), a) in hist.iter().zip(alphas.iter().rev()) {
            let b = rho * y.dot(&q);
            q += s * (a - b);
        }
        let mut dir = -q;
        let mut slope = g.dot(&dir);
        if !(slope < 0.0) {
            hist.clear();
            dir = -g.clone();
            slope = g.dot(&dir);
        }
        let Some((step, xn, fnew, gnew)) = wolfe_search(&f, &x, fx, &g, &dir, slope) else {
            break;
        };
        let s = &xn - &x;
        let y = &gnew - &g;
        let sy = s.dot(&y);
        if sy > 1e-12 * s.norm() * y.norm() {
            hist.push_back((s, y, 1.0 / sy));
            if hist.len() > opts.memory {
                hist.pop_front();
            }
        }
        let stalled = (fx - fnew).abs() <= f64::EPSILON * fx.abs().max(1.0) && step < 1e-10;
        x = xn;
        fx = fnew;
        g = gnew;
        if stalled {
            break;
        }
    }
    let grad_norm = g.amax();
    LbfgsResult {
        x,
        value: fx,
        grad_norm,
        iterations: iter,
        converged: grad_norm < opts.grad_tol,
    }
}

/// Line search for the strong Wolfe conditions (`c₁ = 1e-4`, `c₂ = 0.9`),
/// by bracketing followed by bisection-style zoom.
#[allow(clippy::type_complexity)]
fn wolfe_search<F>(
    f: &F,
    x: &DVector<f64>,
    fx: f64,
    _g: &DVector<f64>,
    dir: &DVector<f64>,
    slope: f64,
) -> Option<(f64, DVector<f64>, f64, DVector<f64>)>
where
    F: Fn(&DVector<f64>) -> (f64, DVector<f64>),
{
    const C1: f64 = 1e-4;
    const C2: f64 = 0.9;
    let eval = |a: f64| {
        let xn = x + dir * a;
        let (v, g) = f(&xn);
        let d = g.dot(dir);
        (xn, v, g, d)
    };
    let zoom = |mut lo: f64, mut f_lo: f64, mut hi: f64| {
        for _ in 0..60 {
            let a = 0.5 * (lo + hi);
            let (xn, v, g, d) = eval(a);
            if !v.is_finite() || v > fx + C1 * a * slope || v >= f_lo {
                hi = a;
            } else {
                if d.abs() <= -C2 * slope {
                    return Some((a, xn, v, g));
                }
                if d * (hi - lo) >= 0.0 {
                    hi = lo;
                }
                lo = a;
                f_lo = v;
            }
            if (hi - lo).abs() < 1e-16 * lo.abs().max(1.0) {
                break;
            }
        }
        if lo > 0.0 {
            let (xn, v, g, _) = eval(lo);
            return Some((lo, xn, v, g));
        }
        None
    };
    let mut prev = 0.0;
    let mut f_prev = fx;
    let mut a = 1.0;
    for i in 0..60 {
        let (xn, v, g, d) = eval(a);
        if !v.is_finite() || v > fx + C1 * a * slope || (i > 0 && v >= f_prev) {
            return zoom(prev, f_prev, a);
        }
        if d.abs() <= -C2 * slope {
            return Some((a, xn, v, g));
        }
        if d >= 0.0 {
            return zoom(a, v, prev);
        }
        prev = a;
        f_prev = v;
        a *= 2.0;
    }
    None
}

/// Gauss–Hermite rule for the standard normal weight, by Golub–Welsch.
/// Returns nodes and weights with `Σ w_i f(z_i) ≈ E f(Z)`, `Z ~ N(0,1)`.
pub fn gauss_hermite_normal(order: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(order >= 1, "gauss-hermite order must be positive");
    let mut jac = DMatrix::zeros(order, order);
    for k in 1..order {
        let b = (k as f64 / 2.0).sqrt();
        jac[(k, k - 1)] = b;
        jac[(k - 1, k)] = b;
    }
    let eig = SymmetricEigen::new(jac);
    let mut pairs: Vec<(f64, f64)> = (0..order)
        .map(|i| {
            let v0 = eig.eigenvectors[(0, i)];
            (eig.eigenvalues[i] * std::f64::consts::SQRT_2, v0 * v0)
        })
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    pairs.into_iter().unzip()
}
