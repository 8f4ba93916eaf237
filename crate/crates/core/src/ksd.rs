//! The V-statistic `KSD²(P_θ ‖ P_n) = n⁻² Σ_ij S S K(x_i, x_j)`, its
//! memoised form and θ-derivatives.
//!
//! Everything that does not depend on θ lives in a [`GramCache`]. With
//! `u_i = Σ_j K_ij s_j` and `D_i = Σ_j ∇_{x'}·K(x_i, x_j)`, symmetry of
//! the kernel gives
//!
//! `n² KSD² = Σ_i s_i·u_i + 2 Σ_i s_i·D_i + Σ_ij trace_ij`,
//!
//! so each evaluation only needs the n scores and one pass over `K_ij`.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::data::Dataset;
use crate::error::{check_dim, Error, Result};
use crate::kernel::{KernelBlock, KernelPieces};
use crate::models::ScoreModel;
use crate::numeric::{pairwise_sum, pairwise_sum_mat, pairwise_sum_vec, symmetrize};
use crate::stein::{evaluate_scores, ssk_from_pieces, SteinKernel};

/// θ-independent kernel pieces for every pair `i ≤ j` of one dataset.
#[derive(Debug, Clone)]
pub struct GramCache {
    n: usize,
    dim: usize,
    data_fingerprint: u64,
    kernel_id: u64,
    discrete: bool,
    rows: Vec<Vec<KernelPieces>>,
    row_div: Vec<DVector<f64>>,
    row_trace: Vec<f64>,
}

impl GramCache {
    pub fn build(kernel: &dyn SteinKernel, data: &Dataset) -> Result<Self> {
        check_dim(kernel.dim(), data.dim())?;
        let pts = data.points();
        let n = pts.len();
        let rows = kernel.upper_rows(pts)?;
        let oriented = |i: usize, j: usize| {
            if j >= i {
                PairRef { p: &rows[i][j - i], flipped: false }
            } else {
                PairRef { p: &rows[j][i - j], flipped: true }
            }
        };
        let (row_div, row_trace): (Vec<_>, Vec<_>) = (0..n)
            .into_par_iter()
            .map(|i| {
                let mut div = DVector::zeros(data.dim());
                let mut tr = 0.0;
                for j in 0..n {
                    let p = oriented(i, j);
                    div += p.div_xp();
                    tr += p.p.trace;
                }
                (div, tr)
            })
            .unzip();
        Ok(Self {
            n,
            dim: data.dim(),
            data_fingerprint: data.fingerprint(),
            kernel_id: kernel.id(),
            discrete: kernel.is_discrete(),
            rows,
            row_div,
            row_trace,
        })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Pieces for the ordered pair `(i, j)`; pairs below the diagonal are
    /// obtained by transposition.
    pub fn pieces(&self, i: usize, j: usize) -> KernelPieces {
        let r = self.pair(i, j);
        if r.flipped {
            KernelPieces {
                k: r.p.k.transpose(),
                div_x: r.p.div_xp.clone(),
                div_xp: r.p.div_x.clone(),
                trace: r.p.trace,
            }
        } else {
            r.p.clone()
        }
    }

    /// `Σ_ij trace_ij`.
    pub fn trace_total(&self) -> f64 {
        pairwise_sum(&self.row_trace)
    }

    fn pair(&self, i: usize, j: usize) -> PairRef<'_> {
        if j >= i {
            PairRef { p: &self.rows[i][j - i], flipped: false }
        } else {
            PairRef { p: &self.rows[j][i - j], flipped: true }
        }
    }

    /// Fails unless the cache was built from this kernel and dataset.
    pub fn check(&self, kernel: &dyn SteinKernel, data: &Dataset) -> Result<()> {
        if self.n != data.len()
            || self.dim != data.dim()
            || self.data_fingerprint != data.fingerprint()
            || self.kernel_id != kernel.id()
            || self.discrete != kernel.is_discrete()
        {
            return Err(Error::CacheMismatch);
        }
        Ok(())
    }
}

struct PairRef<'a> {
    p: &'a KernelPieces,
    flipped: bool,
}

impl PairRef<'_> {
    fn div_xp(&self) -> &DVector<f64> {
        if self.flipped {
            &self.p.div_x
        } else {
            &self.p.div_xp
        }
    }

    /// `out += K v` for the oriented block.
    fn add_k_mul(&self, v: &DMatrix<f64>, out: &mut DMatrix<f64>) {
        add_block_mul(&self.p.k, self.flipped, v, out);
    }
}

fn add_block_mul(k: &KernelBlock, transpose: bool, v: &DMatrix<f64>, out: &mut DMatrix<f64>) {
    match k {
        KernelBlock::Scaled(c) => out.zip_apply(v, |o, x| *o += c * x),
        KernelBlock::Diagonal(g) => {
            for (r, gr) in g.iter().enumerate() {
                for c in 0..v.ncols() {
                    out[(r, c)] += gr * v[(r, c)];
                }
            }
        }
        KernelBlock::Full(m) => {
            if transpose {
                out.gemm_tr(1.0, m, v, 1.0)
            } else {
                out.gemm(1.0, m, v, 1.0)
            }
        }
    }
}

/// Per-row sums: `Σ_j K_ij V_j`, `D_i` and `Σ_j trace_ij`.
pub(crate) struct RowSums {
    pub kv: DMatrix<f64>,
    pub div: DVector<f64>,
    pub trace: f64,
}

/// Either a cache or the kernel and points, evaluated on the fly.
pub(crate) enum PairSource<'a> {
    Cached(&'a GramCache),
    Direct {
        kernel: &'a dyn SteinKernel,
        points: &'a [DVector<f64>],
    },
}

impl<'a> PairSource<'a> {
    pub(crate) fn new(
        kernel: &'a dyn SteinKernel,
        data: &'a Dataset,
        cache: Option<&'a GramCache>,
    ) -> Result<Self> {
        check_dim(kernel.dim(), data.dim())?;
        if data.is_empty() {
            return Err(Error::InvalidInput("empty dataset".into()));
        }
        match cache {
            Some(c) => {
                c.check(kernel, data)?;
                Ok(PairSource::Cached(c))
            }
            None => Ok(PairSource::Direct {
                kernel,
                points: data.points(),
            }),
        }
    }

    fn n(&self) -> usize {
        match self {
            PairSource::Cached(c) => c.n,
            PairSource::Direct { points, .. } => points.len(),
        }
    }

    fn row(&self, i: usize, v: &[DMatrix<f64>]) -> Result<RowSums> {
        let (d, c) = v[0].shape();
        let mut kv = DMatrix::zeros(d, c);
        match self {
            PairSource::Cached(cache) => {
                for (j, vj) in v.iter().enumerate() {
                    cache.pair(i, j).add_k_mul(vj, &mut kv);
                }
                Ok(RowSums {
                    kv,
                    div: cache.row_div[i].clone(),
                    trace: cache.row_trace[i],
                })
            }
            PairSource::Direct { kernel, points } => {
                let mut div = DVector::zeros(d);
                let mut trace = 0.0;
                for (j, vj) in v.iter().enumerate() {
                    let p = kernel.stein_pieces(&points[i], &points[j])?;
                    add_block_mul(&p.k, false, vj, &mut kv);
                    div += &p.div_xp;
                    trace += p.trace;
                }
                Ok(RowSums { kv, div, trace })
            }
        }
    }

    /// Row sums for every row, in parallel, order preserved.
    pub(crate) fn rows(&self, v: &[DMatrix<f64>]) -> Result<Vec<RowSums>> {
        if v.len() != self.n() {
            return Err(Error::DimensionMismatch {
                expected: self.n(),
                found: v.len(),
            });
        }
        (0..self.n()).into_par_iter().map(|i| self.row(i, v)).collect()
    }
}

fn as_column(v: &DVector<f64>) -> DMatrix<f64> {
    DMatrix::from_column_slice(v.len(), 1, v.as_slice())
}

pub(crate) fn check_compatible(model: &dyn ScoreModel, kernel: &dyn SteinKernel, data: &Dataset) -> Result<()> {
    if model.is_discrete() != kernel.is_discrete() {
        return Err(Error::InvalidInput("model and kernel disagree on discreteness".into()));
    }
    check_dim(model.data_dim(), kernel.dim())?;
    model.check_data(data)
}

/// A KSD² value. `up_to_constant` marks values that omit θ-independent
/// terms and so may be negative.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KsdValue {
    pub value: f64,
    pub up_to_constant: bool,
}

/// `n⁻² Σ_ij S S K(x_i, x_j)`, including the diagonal.
pub fn ksd_vstat(
    model: &dyn ScoreModel,
    kernel: &dyn SteinKernel,
    data: &Dataset,
    theta: &DVector<f64>,
    cache: Option<&GramCache>,
) -> Result<KsdValue> {
    let src = PairSource::new(kernel, data, cache)?;
    check_compatible(model, kernel, data)?;
    let scores = evaluate_scores(model, data.points(), theta, false)?;
    let v: Vec<DMatrix<f64>> = scores.iter().map(|s| as_column(&s.score)).collect();
    let rows = src.rows(&v)?;
    let terms: Vec<f64> = rows
        .iter()
        .zip(&scores)
        .map(|(r, s)| s.score.dot(&r.kv.column(0)) + 2.0 * s.score.dot(&r.div) + r.trace)
        .collect();
    let n = data.len() as f64;
    Ok(KsdValue {
        value: pairwise_sum(&terms) / (n * n),
        up_to_constant: false,
    })
}

/// `‖n⁻¹ Σ_i ∇ log p_θ(x_i)‖²`: KSD² for the constant kernel `K ≡ I`.
/// All kernel derivative terms vanish for that kernel, so this is exact.
pub fn ksd_rank_one(model: &dyn ScoreModel, data: &Dataset, theta: &DVector<f64>) -> Result<KsdValue> {
    if model.is_discrete() {
        return Err(Error::Unsupported("rank-one kernel needs a continuous model".into()));
    }
    if data.is_empty() {
        return Err(Error::InvalidInput("empty dataset".into()));
    }
    model.check_data(data)?;
    let scores = evaluate_scores(model, data.points(), theta, false)?;
    let s: Vec<DVector<f64>> = scores.into_iter().map(|e| e.score).collect();
    let mean = pairwise_sum_vec(&s, data.dim()) / data.len() as f64;
    Ok(KsdValue {
        value: mean.norm_squared(),
        up_to_constant: true,
    })
}

/// Unbiased estimate of the V-statistic from `batch_pairs` index pairs
/// drawn uniformly with replacement. When `batch_pairs = n²` every pair is
/// visited once instead.
pub fn ksd_minibatch(
    model: &dyn ScoreModel,
    kernel: &dyn SteinKernel,
    data: &Dataset,
    theta: &DVector<f64>,
    batch_pairs: usize,
    seed: u64,
) -> Result<f64> {
    if batch_pairs == 0 {
        return Err(Error::InvalidInput("batch_pairs must be >= 1".into()));
    }
    PairSource::new(kernel, data, None)?;
    check_compatible(model, kernel, data)?;
    let n = data.len();
    let pairs: Vec<(usize, usize)> = if batch_pairs == n * n {
        (0..n).flat_map(|i| (0..n).map(move |j| (i, j))).collect()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..batch_pairs)
            .map(|_| (rng.random_range(0..n), rng.random_range(0..n)))
            .collect()
    };
    let scores = evaluate_scores(model, data.points(), theta, false)?;
    let pts = data.points();
    let vals = pairs
        .par_iter()
        .map(|&(i, j)| {
            let p = kernel.stein_pieces(&pts[i], &pts[j])?;
            Ok(ssk_from_pieces(&p, &scores[i].score, &scores[j].score))
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(pairwise_sum(&vals) / batch_pairs as f64)
}

/// `∇_θ KSD² = 2 n⁻² Σ_i (∂s_i/∂θ)ᵀ (Σ_j K_ij s_j + D_i)`.
pub fn ksd_grad_theta(
    model: &dyn ScoreModel,
    kernel: &dyn SteinKernel,
    data: &Dataset,
    theta: &DVector<f64>,
    cache: Option<&GramCache>,
) -> Result<DVector<f64>> {
    let src = PairSource::new(kernel, data, cache)?;
    check_compatible(model, kernel, data)?;
    let scores = evaluate_scores(model, data.points(), theta, true)?;
    let v: Vec<DMatrix<f64>> = scores.iter().map(|s| as_column(&s.score)).collect();
    let rows = src.rows(&v)?;
    let terms: Vec<DVector<f64>> = rows
        .iter()
        .zip(&scores)
        .map(|(r, s)| {
            let g = s.theta_grad.as_ref().expect("requested");
            g.tr_mul(&(r.kv.column(0) + &r.div))
        })
        .collect();
    let n = data.len() as f64;
    Ok(pairwise_sum_vec(&terms, theta.len()) * (2.0 / (n * n)))
}

/// `∇²_θ KSD²`. Exponential families use the quadratic form in η;
/// other models use central differences of [`ksd_grad_theta`].
pub fn ksd_hess_theta(
    model: &dyn ScoreModel,
    kernel: &dyn SteinKernel,
    data: &Dataset,
    theta: &DVector<f64>,
    cache: Option<&GramCache>,
) -> Result<DMatrix<f64>> {
    model.check_theta(theta)?;
    if let Some(ef) = model.exponential_family() {
        let q = crate::conjugate::quadratic_coeffs(ef, kernel, data, cache)?;
        return Ok(crate::conjugate::loss_hessian(ef, &q, theta));
    }
    let p = theta.len();
    let mut cols = Vec::with_capacity(p);
    for h in 0..p {
        let step = crate::numeric::fd_step(theta[h]);
        let mut tp = theta.clone();
        let mut tm = theta.clone();
        tp[h] += step;
        tm[h] -= step;
        let gp = ksd_grad_theta(model, kernel, data, &tp, cache)?;
        let gm = ksd_grad_theta(model, kernel, data, &tm, cache)?;
        cols.push((gp - gm) / (2.0 * step));
    }
    Ok(symmetrize(&DMatrix::from_columns(&cols)))
}

/// `Σ_i Aᵢᵀ B_i` over rows, reduced pairwise.
pub(crate) fn sum_tr_products(a: &[DMatrix<f64>], b: &[DMatrix<f64>]) -> DMatrix<f64> {
    let (r, c) = (a[0].ncols(), b[0].ncols());
    let terms: Vec<DMatrix<f64>> = a.par_iter().zip(b.par_iter()).map(|(a, b)| a.tr_mul(b)).collect();
    pairwise_sum_mat(&terms, r, c)
}
