//! Minimum-KSD estimation and the data-adaptive learning rate
//! `β = min(1, tr(H J⁻¹ H) / tr(H))`.

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::conjugate::{affine_quadratic, quadratic_coeffs};
use crate::data::Dataset;
use crate::error::{check_dim, Error, Result};
use crate::ksd::{ksd_grad_theta, ksd_hess_theta, ksd_vstat, GramCache};
use crate::models::ScoreModel;
use crate::numeric::{lbfgs, min_eigenvalue, pairwise_sum_mat, pairwise_sum_vec, symmetrize, LbfgsOptions};
use crate::prior::Prior;
use crate::stein::{evaluate_score, evaluate_scores, ssk_theta_grad_from_pieces, SteinKernel};

/// Ridge added to the objective when `Λ_n` is singular.
pub const LAMBDA_RIDGE: f64 = 1e-10;
/// Relative ridge for a singular `J_n` (times `tr J_n / p`).
pub const J_RIDGE: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CalibrationFlag {
    /// `Λ_n` was not positive definite; the iterative path with a ridge was used.
    LambdaRidged,
    /// The optimiser stopped before reaching the gradient tolerance.
    NotConverged,
    /// `H_n` was not positive definite and was ridged.
    HessianRidged,
    /// `J_n` was singular and was ridged.
    JRidged,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MinimiserMethod {
    ClosedForm,
    Iterative,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MinKsdOptions {
    pub lbfgs: LbfgsOptions,
    /// Random starting points drawn from the prior when no initial value
    /// is given.
    pub restarts: usize,
    pub seed: u64,
}

impl Default for MinKsdOptions {
    fn default() -> Self {
        Self {
            lbfgs: LbfgsOptions::default(),
            restarts: 3,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MinKsdResult {
    pub theta: DVector<f64>,
    pub value: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    pub method: MinimiserMethod,
    pub flags: Vec<CalibrationFlag>,
}

/// Where the optimiser starts.
#[derive(Debug, Clone, Copy)]
pub enum Init<'a> {
    Point(&'a DVector<f64>),
    /// Draw `restarts` points from the prior and keep the best result.
    Prior(&'a Prior),
}

/// `argmin_θ KSD²(P_θ ‖ P_n)`. Natural exponential families with a
/// positive definite `Λ_n` use `θ_n = −½ Λ_n⁻¹ ν_n`; everything else runs
/// L-BFGS on the V-statistic.
pub fn minimum_ksd(
    model: &dyn ScoreModel,
    kernel: &dyn SteinKernel,
    data: &Dataset,
    init: Init<'_>,
    opts: &MinKsdOptions,
    cache: Option<&GramCache>,
) -> Result<MinKsdResult> {
    let mut flags = Vec::new();
    let mut ridge = 0.0;
    if let Some(ef) = model.exponential_family() {
        if ef.is_natural() {
            let q = quadratic_coeffs(ef, kernel, data, cache)?;
            match Cholesky::new(q.lambda.clone()).filter(|_| min_eigenvalue(&q.lambda) > 0.0) {
                Some(ch) => {
                    let theta = -ch.solve(&q.nu) * 0.5;
                    let grad = ksd_grad_theta(model, kernel, data, &theta, cache)?;
                    return Ok(MinKsdResult {
                        value: q.eval(&theta),
                        grad_norm: grad.amax(),
                        theta,
                        iterations: 0,
                        method: MinimiserMethod::ClosedForm,
                        flags,
                    });
                }
                None => {
                    flags.push(CalibrationFlag::LambdaRidged);
                    ridge = LAMBDA_RIDGE;
                }
            }
        }
    }
    minimum_ksd_iterative(model, kernel, data, init, opts, cache, ridge, flags)
}

#[allow(clippy::too_many_arguments)]
fn minimum_ksd_iterative(
    model: &dyn ScoreModel,
    kernel: &dyn SteinKernel,
    data: &Dataset,
    init: Init<'_>,
    opts: &MinKsdOptions,
    cache: Option<&GramCache>,
    ridge: f64,
    mut flags: Vec<CalibrationFlag>,
) -> Result<MinKsdResult> {
    let starts: Vec<DVector<f64>> = match init {
        Init::Point(t) => vec![t.clone()],
        Init::Prior(p) => {
            check_dim(model.param_dim(), p.dim())?;
            let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
            (0..opts.restarts.max(1)).map(|_| p.sample(&mut rng)).collect()
        }
    };
    let quad = match model.affine_score() {
        Some(a) => Some((a, affine_quadratic(a, kernel, data, cache)?)),
        None => None,
    };
    let eval = |t: &DVector<f64>| -> Result<(f64, DVector<f64>)> {
        match &quad {
            Some((a, q)) => {
                model.check_theta(t)?;
                let e = a.features(t);
                let g = a.feature_jacobian(t).tr_mul(&(&q.lambda * &e * 2.0 + &q.nu));
                Ok((q.eval(&e), g))
            }
            None => Ok((
                ksd_vstat(model, kernel, data, t, cache)?.value,
                ksd_grad_theta(model, kernel, data, t, cache)?,
            )),
        }
    };
    let objective = |t: &DVector<f64>| -> (f64, DVector<f64>) {
        match eval(t) {
            Ok((v, g)) if v.is_finite() && g.iter().all(|x| x.is_finite()) => {
                (v + ridge * t.norm_squared(), g + t * (2.0 * ridge))
            }
            _ => (f64::INFINITY, DVector::from_element(t.len(), f64::NAN)),
        }
    };
    let mut best: Option<crate::numeric::LbfgsResult> = None;
    for s in &starts {
        model.check_theta(s)?;
        let (v0, _) = objective(s);
        if !v0.is_finite() {
            return Err(Error::Numerical(format!("KSD not finite at initial value {s}")));
        }
        let r = lbfgs(objective, s, &opts.lbfgs);
        if best.as_ref().is_none_or(|b| r.value < b.value) {
            best = Some(r);
        }
    }
    let r = best.expect("at least one start");
    if !r.converged {
        flags.push(CalibrationFlag::NotConverged);
    }
    Ok(MinKsdResult {
        value: r.value - ridge * r.x.norm_squared(),
        theta: r.x,
        grad_norm: r.grad_norm,
        iterations: r.iterations,
        method: MinimiserMethod::Iterative,
        flags,
    })
}

/// `S_n(x, θ) = n⁻¹ Σ_i ∇_θ S S K(x, x_i)`.
pub fn s_n(
    x: &DVector<f64>,
    theta: &DVector<f64>,
    model: &dyn ScoreModel,
    kernel: &dyn SteinKernel,
    data: &Dataset,
) -> Result<DVector<f64>> {
    model.check_point(x)?;
    let sx = evaluate_score(model, x, theta, true)?;
    let scores = evaluate_scores(model, data.points(), theta, true)?;
    let terms = data
        .points()
        .par_iter()
        .zip(scores.par_iter())
        .map(|(xi, si)| ssk_theta_grad_from_pieces(&kernel.stein_pieces(x, xi)?, &sx, si))
        .collect::<Result<Vec<_>>>()?;
    Ok(pairwise_sum_vec(&terms, theta.len()) / data.len() as f64)
}

/// `S_n(x_j, θ)` at every data point.
pub fn s_n_at_data(
    model: &dyn ScoreModel,
    kernel: &dyn SteinKernel,
    data: &Dataset,
    theta: &DVector<f64>,
    cache: Option<&GramCache>,
) -> Result<Vec<DVector<f64>>> {
    if let Some(c) = cache {
        c.check(kernel, data)?;
    }
    model.check_data(data)?;
    let scores = evaluate_scores(model, data.points(), theta, true)?;
    let pts = data.points();
    let n = pts.len();
    (0..n)
        .into_par_iter()
        .map(|j| {
            let terms = (0..n)
                .map(|i| {
                    let p = match cache {
                        Some(c) => c.pieces(j, i),
                        None => kernel.stein_pieces(&pts[j], &pts[i])?,
                    };
                    ssk_theta_grad_from_pieces(&p, &scores[j], &scores[i])
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(pairwise_sum_vec(&terms, theta.len()) / n as f64)
        })
        .collect()
}

/// θ_n, `H_n`, `J_n` and the selected learning rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationResult {
    pub theta_n: Vec<f64>,
    pub h_n: Vec<Vec<f64>>,
    pub j_n: Vec<Vec<f64>>,
    pub beta_n: f64,
    pub beta: f64,
    pub method: MinimiserMethod,
    pub grad_norm: f64,
    pub flags: Vec<CalibrationFlag>,
}

fn rows_of(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().cloned().collect()).collect()
}

impl CalibrationResult {
    pub fn theta(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.theta_n)
    }

    pub fn h(&self) -> DMatrix<f64> {
        let p = self.theta_n.len();
        DMatrix::from_fn(p, p, |i, j| self.h_n[i][j])
    }

    pub fn j(&self) -> DMatrix<f64> {
        let p = self.theta_n.len();
        DMatrix::from_fn(p, p, |i, j| self.j_n[i][j])
    }
}

/// `β_n = tr(H J⁻¹ H) / tr(H)` with ridges for a singular `J` or an
/// indefinite `H`. Returns `(β_n, flags)`.
pub fn beta_from_matrices(h: &DMatrix<f64>, j: &DMatrix<f64>) -> Result<(f64, Vec<CalibrationFlag>)> {
    let p = h.nrows();
    check_dim(p, j.nrows())?;
    let mut flags = Vec::new();
    let mut h = symmetrize(h);
    let hmin = min_eigenvalue(&h);
    let hscale = h.trace().abs().max(f64::MIN_POSITIVE) / p as f64;
    if hmin <= 1e-12 * hscale {
        h += DMatrix::identity(p, p) * (hmin.min(0.0).abs() + 1e-8 * hscale);
        flags.push(CalibrationFlag::HessianRidged);
    }
    let mut j = symmetrize(j);
    let jscale = j.trace().max(0.0) / p as f64;
    let jmin = min_eigenvalue(&j);
    if jmin <= 1e-12 * jscale || jscale == 0.0 {
        let r = (J_RIDGE * jscale).max(f64::MIN_POSITIVE.sqrt()) + jmin.min(0.0).abs();
        j += DMatrix::identity(p, p) * r;
        flags.push(CalibrationFlag::JRidged);
    }
    let ch = Cholesky::new(j).ok_or_else(|| Error::NotPositiveDefinite("J_n".into()))?;
    let num = (&h * ch.solve(&h)).trace();
    let beta_n = num / h.trace();
    if !(beta_n.is_finite() && beta_n > 0.0) {
        return Err(Error::Numerical(format!("beta_n = {beta_n}")));
    }
    Ok((beta_n, flags))
}

/// Minimum-KSD estimate followed by the `β` rule.
pub fn beta_select(
    model: &dyn ScoreModel,
    kernel: &dyn SteinKernel,
    data: &Dataset,
    init: Init<'_>,
    opts: &MinKsdOptions,
    cache: Option<&GramCache>,
) -> Result<CalibrationResult> {
    let min = minimum_ksd(model, kernel, data, init, opts, cache)?;
    let h = ksd_hess_theta(model, kernel, data, &min.theta, cache)?;
    let s = s_n_at_data(model, kernel, data, &min.theta, cache)?;
    let p = min.theta.len();
    let outer: Vec<DMatrix<f64>> = s.iter().map(|v| v * v.transpose()).collect();
    let j = pairwise_sum_mat(&outer, p, p) / data.len() as f64;
    let (beta_n, more) = beta_from_matrices(&h, &j)?;
    let mut flags = min.flags;
    flags.extend(more);
    Ok(CalibrationResult {
        theta_n: min.theta.iter().cloned().collect(),
        h_n: rows_of(&symmetrize(&h)),
        j_n: rows_of(&j),
        beta_n,
        beta: beta_n.min(1.0),
        method: min.method,
        grad_norm: min.grad_norm,
        flags,
    })
}
