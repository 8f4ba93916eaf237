//! Stein operators applied to both arguments of a kernel.
//!
//! Both the Langevin operator and the discrete flip-difference operator
//! reduce `S S K(x, x')` to the same four-term form
//!
//! `s(x)ᵀ K s(x') + trace + s(x)·div_xp + s(x')·div_x`,
//!
//! so a [`SteinKernel`] only has to supply the θ-independent
//! [`KernelPieces`]. For the Langevin operator these are the ordinary
//! divergences. For the discrete operator the first-order part is
//! `r·h − ∇⁻·h`, so the divergence pieces carry a minus sign.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{check_dim, Error, Result};
use crate::kernel::{KernelBlock, KernelPieces, WeightedKernel, WeightingFunction};
use crate::models::{IsingModel, ScoreModel};

/// Score (or ratio vector) at one point, optionally with its θ-Jacobian.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreEvaluation {
    pub score: DVector<f64>,
    /// `d×p` matrix `∂ score / ∂θ`.
    pub theta_grad: Option<DMatrix<f64>>,
}

impl ScoreEvaluation {
    pub fn new(score: DVector<f64>) -> Self {
        Self {
            score,
            theta_grad: None,
        }
    }

    fn check(&self) -> Result<()> {
        let finite = self.score.iter().all(|v| v.is_finite())
            && self.theta_grad.as_ref().is_none_or(|g| g.iter().all(|v| v.is_finite()));
        if finite {
            Ok(())
        } else {
            Err(Error::Numerical("non-finite score".into()))
        }
    }
}

pub fn evaluate_score(
    model: &dyn ScoreModel,
    x: &DVector<f64>,
    theta: &DVector<f64>,
    with_grad: bool,
) -> Result<ScoreEvaluation> {
    let ev = ScoreEvaluation {
        score: model.score(x, theta)?,
        theta_grad: if with_grad {
            Some(model.theta_grad_score(x, theta)?)
        } else {
            None
        },
    };
    ev.check()?;
    Ok(ev)
}

/// Scores at every data point, evaluated in parallel (order preserved).
pub fn evaluate_scores(
    model: &dyn ScoreModel,
    points: &[DVector<f64>],
    theta: &DVector<f64>,
    with_grad: bool,
) -> Result<Vec<ScoreEvaluation>> {
    model.check_theta(theta)?;
    points
        .par_iter()
        .map(|x| evaluate_score(model, x, theta, with_grad))
        .collect()
}

/// A kernel together with the Stein operator applied to it.
pub trait SteinKernel: Send + Sync {
    fn dim(&self) -> usize;

    fn is_discrete(&self) -> bool;

    /// Identifier of the configuration, used to validate caches.
    fn id(&self) -> u64;

    fn stein_pieces(&self, x: &DVector<f64>, xp: &DVector<f64>) -> Result<KernelPieces>;

    /// Pieces for every pair `(i, j)` with `j ≥ i`, one vector per row.
    fn upper_rows(&self, points: &[DVector<f64>]) -> Result<Vec<Vec<KernelPieces>>> {
        (0..points.len())
            .into_par_iter()
            .map(|i| {
                (i..points.len())
                    .map(|j| self.stein_pieces(&points[i], &points[j]))
                    .collect()
            })
            .collect()
    }
}

impl SteinKernel for WeightedKernel {
    fn dim(&self) -> usize {
        WeightedKernel::dim(self)
    }

    fn is_discrete(&self) -> bool {
        false
    }

    fn id(&self) -> u64 {
        WeightedKernel::id(self)
    }

    fn stein_pieces(&self, x: &DVector<f64>, xp: &DVector<f64>) -> Result<KernelPieces> {
        self.pieces(x, xp)
    }

    fn upper_rows(&self, points: &[DVector<f64>]) -> Result<Vec<Vec<KernelPieces>>> {
        for p in points {
            check_dim(WeightedKernel::dim(self), p.len())?;
        }
        let weights = points
            .iter()
            .map(|p| self.point_weight(p))
            .collect::<Result<Vec<_>>>()?;
        Ok((0..points.len())
            .into_par_iter()
            .map(|i| {
                (i..points.len())
                    .map(|j| self.pieces_with(&points[i], &weights[i], &points[j], &weights[j]))
                    .collect()
            })
            .collect())
    }
}

/// `s(x)ᵀ K s(x') + trace + s(x)·div_xp + s(x')·div_x`.
pub fn ssk_from_pieces(p: &KernelPieces, s: &DVector<f64>, sp: &DVector<f64>) -> f64 {
    p.k.quad(s, sp) + p.trace + s.dot(&p.div_xp) + sp.dot(&p.div_x)
}

/// `∇_θ` of [`ssk_from_pieces`] given the score Jacobians at both points.
pub fn ssk_theta_grad_from_pieces(
    p: &KernelPieces,
    s: &ScoreEvaluation,
    sp: &ScoreEvaluation,
) -> Result<DVector<f64>> {
    let (g, gp) = match (&s.theta_grad, &sp.theta_grad) {
        (Some(g), Some(gp)) => (g, gp),
        _ => return Err(Error::InvalidInput("score theta-gradients missing".into())),
    };
    Ok(g.tr_mul(&(p.k.mul(&sp.score) + &p.div_xp)) + gp.tr_mul(&(p.k.tr_mul(&s.score) + &p.div_x)))
}

/// Langevin double-Stein kernel `S S K(x, x')`.
pub fn langevin_ssk(
    k: &WeightedKernel,
    x: &DVector<f64>,
    s_x: &ScoreEvaluation,
    xp: &DVector<f64>,
    s_xp: &ScoreEvaluation,
) -> Result<f64> {
    check_dim(k.dim(), s_x.score.len())?;
    check_dim(k.dim(), s_xp.score.len())?;
    let p = k.pieces(x, xp)?;
    Ok(ssk_from_pieces(&p, &s_x.score, &s_xp.score))
}

/// Kernel `M(x) exp(−(1/2d) Σ|x_i − x'_i|) M(x')ᵀ` on `{−1,+1}^d` with a
/// scalar weight (identity or indicator).
#[derive(Debug, Clone)]
pub struct BinaryLatticeKernel {
    dim: usize,
    weight: WeightingFunction,
}

/// Raw flip-difference contractions of a lattice kernel.
#[derive(Debug, Clone, PartialEq)]
pub struct DifferenceDivergences {
    /// `[∇⁻_x · K]_j = Σ_i K_ij(x^{(i)}, x') − K_ij(x, x')`.
    pub div_x: DVector<f64>,
    /// `[∇⁻_{x'} · K]_i = Σ_j K_ij(x, x'^{(j)}) − K_ij(x, x')`.
    pub div_xp: DVector<f64>,
    /// `tr(∇⁻_x · ∇⁻_{x'} · K)`.
    pub trace: f64,
}

fn check_binary(x: &DVector<f64>) -> Result<()> {
    if x.iter().all(|&v| v == 1.0 || v == -1.0) {
        Ok(())
    } else {
        Err(Error::InvalidInput("lattice coordinates must be -1 or +1".into()))
    }
}

impl BinaryLatticeKernel {
    pub fn new(dim: usize, weight: WeightingFunction) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidInput("lattice kernel dimension must be >= 1".into()));
        }
        match weight {
            WeightingFunction::Identity | WeightingFunction::Indicator { .. } => Ok(Self { dim, weight }),
            other => Err(Error::Unsupported(format!("lattice kernel weight {other:?}"))),
        }
    }

    pub fn weight(&self) -> &WeightingFunction {
        &self.weight
    }

    fn m_of_sum(&self, sum: f64) -> f64 {
        match self.weight {
            WeightingFunction::Indicator { max_abs_sum } => {
                if sum.abs() <= max_abs_sum + 1e-9 {
                    1.0
                } else {
                    0.0
                }
            }
            _ => 1.0,
        }
    }

    /// Scalar base value `exp(−#{i: x_i ≠ x'_i}/d)`.
    pub fn base(&self, x: &DVector<f64>, xp: &DVector<f64>) -> Result<f64> {
        check_dim(self.dim, x.len())?;
        check_dim(self.dim, xp.len())?;
        check_binary(x)?;
        check_binary(xp)?;
        Ok(self.base_of_distance(hamming(x, xp)))
    }

    fn base_of_distance(&self, h: usize) -> f64 {
        (-(h as f64) / self.dim as f64).exp()
    }

    /// `K(x, x')`, a scalar multiple of the identity.
    pub fn eval(&self, x: &DVector<f64>, xp: &DVector<f64>) -> Result<f64> {
        let k = self.base(x, xp)?;
        Ok(self.m_of_sum(x.sum()) * k * self.m_of_sum(xp.sum()))
    }

    pub fn difference_divergences(&self, x: &DVector<f64>, xp: &DVector<f64>) -> Result<DifferenceDivergences> {
        let k = self.base(x, xp)?;
        let d = self.dim;
        let h = hamming(x, xp);
        let (sx, sxp) = (x.sum(), xp.sum());
        let (m, mp) = (self.m_of_sum(sx), self.m_of_sum(sxp));
        let mut div_x = DVector::zeros(d);
        let mut div_xp = DVector::zeros(d);
        let mut trace = 0.0;
        for i in 0..d {
            // flipping site i on one side moves the Hamming distance by ±1
            let h1 = if x[i] == xp[i] { h + 1 } else { h - 1 };
            let k1 = self.base_of_distance(h1);
            let m_flip = self.m_of_sum(sx - 2.0 * x[i]);
            let mp_flip = self.m_of_sum(sxp - 2.0 * xp[i]);
            div_xp[i] = m * (mp_flip * k1 - mp * k);
            div_x[i] = mp * (m_flip * k1 - m * k);
            trace += m_flip * mp_flip * k - m_flip * mp * k1 - m * mp_flip * k1 + m * mp * k;
        }
        Ok(DifferenceDivergences { div_x, div_xp, trace })
    }
}

fn hamming(x: &DVector<f64>, xp: &DVector<f64>) -> usize {
    x.iter().zip(xp.iter()).filter(|(a, b)| a != b).count()
}

impl SteinKernel for BinaryLatticeKernel {
    fn dim(&self) -> usize {
        self.dim
    }

    fn is_discrete(&self) -> bool {
        true
    }

    fn id(&self) -> u64 {
        use std::hash::{Hash, Hasher};
        let mut h = std::collections::hash_map::DefaultHasher::new();
        format!("lattice|{}|{:?}", self.dim, self.weight).hash(&mut h);
        h.finish()
    }

    fn stein_pieces(&self, x: &DVector<f64>, xp: &DVector<f64>) -> Result<KernelPieces> {
        let dd = self.difference_divergences(x, xp)?;
        Ok(KernelPieces {
            k: KernelBlock::Scaled(self.eval(x, xp)?),
            div_x: -dd.div_x,
            div_xp: -dd.div_xp,
            trace: dd.trace,
        })
    }
}

/// Discrete double-Stein kernel for ratio vectors `r(x)`, `r(x')`.
pub fn discrete_ssk(
    k: &BinaryLatticeKernel,
    x: &DVector<f64>,
    r_x: &DVector<f64>,
    xp: &DVector<f64>,
    r_xp: &DVector<f64>,
) -> Result<f64> {
    check_dim(k.dim, r_x.len())?;
    check_dim(k.dim, r_xp.len())?;
    let p = k.stein_pieces(x, xp)?;
    Ok(ssk_from_pieces(&p, r_x, r_xp))
}

/// Generic double-Stein kernel at `θ`.
pub fn ssk(
    model: &dyn ScoreModel,
    k: &dyn SteinKernel,
    theta: &DVector<f64>,
    x: &DVector<f64>,
    xp: &DVector<f64>,
) -> Result<f64> {
    if model.is_discrete() != k.is_discrete() {
        return Err(Error::InvalidInput("model and kernel disagree on discreteness".into()));
    }
    let s = model.score(x, theta)?;
    let sp = model.score(xp, theta)?;
    Ok(ssk_from_pieces(&k.stein_pieces(x, xp)?, &s, &sp))
}

/// Monte Carlo estimate of `E[S S K(X, X')]` for independent `X, X' ~ P_θ`,
/// with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SteinIdentityEstimate {
    pub estimate: f64,
    pub standard_error: f64,
}

pub fn stein_identity_mc(
    model: &dyn ScoreModel,
    k: &dyn SteinKernel,
    theta: &DVector<f64>,
    m: usize,
    seed: u64,
) -> Result<SteinIdentityEstimate> {
    if m < 2 {
        return Err(Error::InvalidInput("need at least two sample pairs".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let xs = model.sample(theta, m, &mut rng)?;
    let ys = model.sample(theta, m, &mut rng)?;
    let vals = xs
        .points()
        .par_iter()
        .zip(ys.points().par_iter())
        .map(|(x, y)| ssk(model, k, theta, x, y))
        .collect::<Result<Vec<f64>>>()?;
    let mean = crate::numeric::pairwise_sum(&vals) / m as f64;
    let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (m - 1) as f64;
    Ok(SteinIdentityEstimate {
        estimate: mean,
        standard_error: (var / m as f64).sqrt(),
    })
}

/// `Σ_{x,x'} p(x) p(x') S S K(x, x')` by exhaustive enumeration.
pub fn exact_stein_expectation(
    model: &IsingModel,
    k: &BinaryLatticeKernel,
    theta: &DVector<f64>,
) -> Result<f64> {
    let table = model.enumerate(theta)?;
    let scores = table
        .iter()
        .map(|(x, _)| model.score(x, theta))
        .collect::<Result<Vec<_>>>()?;
    let mut terms = Vec::with_capacity(table.len() * table.len());
    for (a, (x, px)) in table.iter().enumerate() {
        for (b, (y, py)) in table.iter().enumerate() {
            let p = k.stein_pieces(x, y)?;
            terms.push(px * py * ssk_from_pieces(&p, &scores[a], &scores[b]));
        }
    }
    Ok(crate::numeric::pairwise_sum(&terms))
}
