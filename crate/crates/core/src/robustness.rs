//! Sensitivity of generalised posteriors to a point contaminant `y`:
//! loss derivatives `DL`, the posterior influence function and the
//! boundedness diagnostic for the kernel.

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::ksd::{ksd_vstat, GramCache};
use crate::models::ScoreModel;
use crate::numeric::pairwise_sum;
use crate::sampler::{grid_quadrature, GeneralisedTarget};
use crate::stein::{evaluate_score, evaluate_scores, ssk_from_pieces, SteinKernel};

/// `d/dε KSD²(P_θ ‖ (1−ε)P_n + εδ_y)` at `ε = 0`:
/// `2 E_{P_n}[S S K(X, y)] − 2 KSD²(P_θ ‖ P_n)`.
pub fn dl_ksd(
    y: &DVector<f64>,
    theta: &DVector<f64>,
    model: &dyn ScoreModel,
    kernel: &dyn SteinKernel,
    data: &Dataset,
    cache: Option<&GramCache>,
) -> Result<f64> {
    model.check_point(y)?;
    let sy = evaluate_score(model, y, theta, false)?;
    let scores = evaluate_scores(model, data.points(), theta, false)?;
    let cross = data
        .points()
        .par_iter()
        .zip(scores.par_iter())
        .map(|(x, sx)| Ok(ssk_from_pieces(&kernel.stein_pieces(x, y)?, &sx.score, &sy.score)))
        .collect::<Result<Vec<f64>>>()?;
    let first = pairwise_sum(&cross) / data.len() as f64;
    let second = ksd_vstat(model, kernel, data, theta, cache)?.value;
    Ok(2.0 * first - 2.0 * second)
}

/// Same derivative for the average negative log-likelihood:
/// `n⁻¹ Σ log p_θ(x_i) − log p_θ(y)`.
pub fn dl_nll(y: &DVector<f64>, theta: &DVector<f64>, model: &dyn ScoreModel, data: &Dataset) -> Result<f64> {
    let lp = |x: &DVector<f64>| {
        model
            .log_density(x, theta)
            .ok_or_else(|| Error::Unsupported(format!("{} has no tractable likelihood", model.name())))
    };
    let terms = data.points().iter().map(lp).collect::<Result<Vec<f64>>>()?;
    Ok(pairwise_sum(&terms) / data.len() as f64 - lp(y)?)
}

/// Posterior influence function over a 1-d parameter grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PifCurve {
    pub theta: Vec<f64>,
    pub values: Vec<f64>,
    pub y: Vec<f64>,
    /// Trapezoid integral of the curve; zero up to rounding.
    pub integral: f64,
    /// Trapezoid integral of `|PIF|`.
    pub l1: f64,
}

impl PifCurve {
    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// `PIF(θ) = βn π_n(θ) (−DL(θ) + ∫ DL π_n)`, with `π_n` normalised on the
/// grid by the trapezoid rule.
pub fn pif<F>(
    y: &DVector<f64>,
    target: &GeneralisedTarget<'_>,
    dl: F,
    bounds: (f64, f64),
    resolution: usize,
) -> Result<PifCurve>
where
    F: Fn(&DVector<f64>) -> Result<f64> + Sync,
{
    if target.dim() != 1 {
        return Err(Error::Unsupported("influence curves need a scalar parameter".into()));
    }
    let grid = grid_quadrature(target, &[bounds], resolution)?;
    let pts = grid.points();
    let w = grid.weights();
    let dls = pts.par_iter().map(&dl).collect::<Result<Vec<f64>>>()?;
    let avg: Vec<f64> = dls.iter().zip(&grid.density).zip(&w).map(|((d, p), w)| d * p * w).collect();
    let avg = pairwise_sum(&avg);
    let bn = target.beta * target.n as f64;
    let values: Vec<f64> = dls.iter().zip(&grid.density).map(|(d, p)| bn * p * (avg - d)).collect();
    let integral = pairwise_sum(&values.iter().zip(&w).map(|(v, w)| v * w).collect::<Vec<_>>());
    let l1 = pairwise_sum(&values.iter().zip(&w).map(|(v, w)| v.abs() * w).collect::<Vec<_>>());
    Ok(PifCurve {
        theta: pts.iter().map(|p| p[0]).collect(),
        values,
        y: y.iter().cloned().collect(),
        integral,
        l1,
    })
}

/// One row of the boundedness diagnostic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundRow {
    pub theta: Vec<f64>,
    /// `max_y s(y)ᵀ K(y, y) s(y)` over the supplied y-grid.
    pub sup: f64,
    pub argsup: Vec<f64>,
    pub gamma: Option<f64>,
    pub within_bound: Option<bool>,
}

/// Numerical supremum of `∇log p_θ(y) · K(y, y) ∇log p_θ(y)` over `ys` for
/// every `θ`, compared against `γ(θ)` when given.
pub fn robustness_bound(
    model: &dyn ScoreModel,
    kernel: &dyn SteinKernel,
    thetas: &[DVector<f64>],
    ys: &[DVector<f64>],
    gamma: Option<&(dyn Fn(&DVector<f64>) -> f64 + Sync)>,
) -> Result<Vec<BoundRow>> {
    if model.is_discrete() || kernel.is_discrete() {
        return Err(Error::Unsupported("boundedness diagnostic needs a continuous model".into()));
    }
    if ys.is_empty() {
        return Err(Error::InvalidInput("empty y-grid".into()));
    }
    thetas
        .par_iter()
        .map(|t| {
            let mut best = (f64::NEG_INFINITY, 0);
            for (i, y) in ys.iter().enumerate() {
                let s = model.score(y, t)?;
                let v = kernel.stein_pieces(y, y)?.k.quad(&s, &s);
                if v > best.0 {
                    best = (v, i);
                }
            }
            let g = gamma.map(|g| g(t));
            Ok(BoundRow {
                theta: t.iter().cloned().collect(),
                sup: best.0,
                argsup: ys[best.1].iter().cloned().collect(),
                gamma: g,
                within_bound: g.map(|g| best.0 <= g * (1.0 + 1e-12)),
            })
        })
        .collect()
}
