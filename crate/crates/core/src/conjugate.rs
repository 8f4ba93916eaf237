//! Closed-form posteriors for exponential families, whose KSD² is the
//! quadratic `ηᵀΛη + ηᵀν + C` in the natural parameter.

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Exp1, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{check_dim, Error, Result};
use crate::ksd::{sum_tr_products, GramCache, PairSource};
use crate::models::{AffineScore, ExponentialFamily, ScoreModel};
use crate::numeric::{pairwise_sum, symmetrize};
use crate::stein::SteinKernel;

/// `KSD²(θ) = η(θ)ᵀ Λ η(θ) + η(θ)ᵀ ν + constant`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticLoss {
    pub lambda: DMatrix<f64>,
    pub nu: DVector<f64>,
    pub constant: f64,
    pub n: usize,
    /// Whether `η(θ) = θ`.
    pub natural: bool,
}

impl QuadraticLoss {
    /// Loss at natural parameter `eta`, constant included.
    pub fn eval(&self, eta: &DVector<f64>) -> f64 {
        eta.dot(&(&self.lambda * eta)) + eta.dot(&self.nu) + self.constant
    }
}

pub fn quadratic_coeffs(
    ef: &ExponentialFamily,
    kernel: &dyn SteinKernel,
    data: &Dataset,
    cache: Option<&GramCache>,
) -> Result<QuadraticLoss> {
    check_dim(ef.data_dim(), kernel.dim())?;
    ef.check_data(data)?;
    let mut q = affine_quadratic(ef, kernel, data, cache)?;
    q.natural = ef.is_natural();
    Ok(q)
}

/// Quadratic coefficients of KSD² in the features of an affine score.
/// `natural` is left unset.
pub fn affine_quadratic(
    affine: &dyn AffineScore,
    kernel: &dyn SteinKernel,
    data: &Dataset,
    cache: Option<&GramCache>,
) -> Result<QuadraticLoss> {
    let src = PairSource::new(kernel, data, cache)?;
    let k = affine.feature_dim();
    let (gt, gb): (Vec<DMatrix<f64>>, Vec<DVector<f64>>) = data.points().par_iter().map(|x| affine.basis(x)).unzip();
    let v: Vec<DMatrix<f64>> = gt
        .iter()
        .zip(&gb)
        .map(|(t, b)| {
            let mut m = t.clone().insert_column(k, 0.0);
            m.set_column(k, b);
            m
        })
        .collect();
    let rows = src.rows(&v)?;
    let kv_t: Vec<DMatrix<f64>> = rows.iter().map(|r| r.kv.columns(0, k).into_owned()).collect();
    // D_i + Σ_j K_ij ∇b_j
    let lin: Vec<DMatrix<f64>> = rows
        .iter()
        .map(|r| {
            let c = r.kv.column(k) + &r.div;
            DMatrix::from_column_slice(c.len(), 1, c.as_slice())
        })
        .collect();
    let n2 = (data.len() * data.len()) as f64;
    let lambda = symmetrize(&sum_tr_products(&gt, &kv_t)) / n2;
    let nu = sum_tr_products(&gt, &lin).column(0) * (2.0 / n2);
    let c_terms: Vec<f64> = rows
        .iter()
        .zip(&gb)
        .map(|(r, b)| r.trace + b.dot(&(r.kv.column(k) + &r.div * 2.0)))
        .collect();
    Ok(QuadraticLoss {
        lambda,
        nu: nu.into_owned(),
        constant: pairwise_sum(&c_terms) / n2,
        n: data.len(),
        natural: false,
    })
}

/// `∇²_θ` of the quadratic loss:
/// `Jᵀ 2Λ J + Σ_k (2Λη + ν)_k ∇²η_k`.
pub fn loss_hessian(ef: &ExponentialFamily, q: &QuadraticLoss, theta: &DVector<f64>) -> DMatrix<f64> {
    let j = ef.eta_jacobian(theta);
    let mut h = j.transpose() * (&q.lambda * 2.0) * &j;
    if let Some(hess) = ef.eta_hessians(theta) {
        let w = &q.lambda * ef.eta(theta) * 2.0 + &q.nu;
        for (wk, hk) in w.iter().zip(&hess) {
            h += hk * *wk;
        }
    }
    symmetrize(&h)
}

/// Gaussian `N(mean, precision⁻¹)`, optionally restricted to the positive
/// orthant.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianPosterior {
    pub mean: DVector<f64>,
    pub precision: DMatrix<f64>,
    /// Set when the prior was truncated to the positive orthant; the
    /// moments above are those of the untruncated Gaussian.
    pub truncated: bool,
}

impl GaussianPosterior {
    pub fn new(mean: DVector<f64>, precision: DMatrix<f64>) -> Result<Self> {
        check_dim(mean.len(), precision.nrows())?;
        check_dim(mean.len(), precision.ncols())?;
        Cholesky::new(precision.clone()).ok_or_else(|| Error::NotPositiveDefinite("posterior precision".into()))?;
        Ok(Self {
            mean,
            precision,
            truncated: false,
        })
    }

    pub fn with_truncation(mut self) -> Self {
        self.truncated = true;
        self
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn cholesky(&self) -> Cholesky<f64, nalgebra::Dyn> {
        Cholesky::new(self.precision.clone()).expect("checked at construction")
    }

    pub fn covariance(&self) -> DMatrix<f64> {
        self.cholesky().inverse()
    }

    /// Normalised log-density of the (untruncated) Gaussian.
    pub fn log_density(&self, theta: &DVector<f64>) -> f64 {
        let ch = self.cholesky();
        let r = theta - &self.mean;
        let logdet: f64 = ch.l().diagonal().iter().map(|v| v.ln()).sum::<f64>() * 2.0;
        let k = self.dim() as f64;
        -0.5 * r.dot(&(&self.precision * &r)) + 0.5 * logdet - 0.5 * k * (2.0 * std::f64::consts::PI).ln()
    }

    pub fn export(&self, beta: f64, n: usize) -> PosteriorExport {
        let l = self.cholesky().l();
        PosteriorExport {
            mean: self.mean.iter().cloned().collect(),
            precision_cholesky: (0..l.nrows()).map(|i| l.row(i).iter().cloned().collect()).collect(),
            beta,
            n,
            truncated: self.truncated,
        }
    }
}

/// Serialisable summary of a [`GaussianPosterior`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorExport {
    pub mean: Vec<f64>,
    /// Lower-triangular `L` with `precision = L Lᵀ`, row-major.
    pub precision_cholesky: Vec<Vec<f64>>,
    pub beta: f64,
    pub n: usize,
    pub truncated: bool,
}

/// Posterior `∝ N(θ; μ, Σ) exp(−βn(θᵀΛθ + θᵀν))`, found by completing the
/// square: precision `Σ⁻¹ + 2βnΛ`, mean `precision⁻¹(Σ⁻¹μ − βnν)`.
pub fn conjugate_update(
    loss: &QuadraticLoss,
    prior_mean: &DVector<f64>,
    prior_cov: &DMatrix<f64>,
    beta: f64,
) -> Result<GaussianPosterior> {
    if !loss.natural {
        return Err(Error::Unsupported("conjugate update needs a natural parametrisation".into()));
    }
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(Error::InvalidInput(format!("beta must be positive, got {beta}")));
    }
    let k = loss.nu.len();
    check_dim(k, prior_mean.len())?;
    check_dim(k, prior_cov.nrows())?;
    check_dim(k, prior_cov.ncols())?;
    let prior_prec = Cholesky::new(symmetrize(prior_cov))
        .ok_or_else(|| Error::NotPositiveDefinite("prior covariance".into()))?
        .inverse();
    let bn = beta * loss.n as f64;
    let precision = symmetrize(&(&prior_prec + &loss.lambda * (2.0 * bn)));
    let ch = Cholesky::new(precision.clone()).ok_or_else(|| Error::NotPositiveDefinite("posterior precision".into()))?;
    let mean = ch.solve(&(&prior_prec * prior_mean - &loss.nu * bn));
    Ok(GaussianPosterior {
        mean,
        precision,
        truncated: false,
    })
}

/// Marginal mean and standard deviation of one coordinate, with the
/// ranking statistic `mean / sd`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Marginal {
    pub mean: f64,
    pub sd: f64,
    pub score: f64,
}

/// Per-coordinate marginals of the untruncated Gaussian. For a truncated
/// posterior these are the location and scale of each `N_T(mean, sd²)`.
pub fn truncated_marginals(post: &GaussianPosterior) -> Vec<Marginal> {
    let cov = post.covariance();
    (0..post.dim())
        .map(|i| {
            let sd = cov[(i, i)].sqrt();
            Marginal {
                mean: post.mean[i],
                sd,
                score: post.mean[i] / sd,
            }
        })
        .collect()
}

/// Standard normal draw conditioned on `z ≥ a`;
/// plain rejection for small `a`, exponential proposals otherwise.
fn std_normal_above(a: f64, rng: &mut ChaCha8Rng) -> f64 {
    if a < 0.5 {
        loop {
            let z: f64 = rng.sample(StandardNormal);
            if z >= a {
                return z;
            }
        }
    }
    let lam = 0.5 * (a + (a * a + 4.0).sqrt());
    loop {
        let e: f64 = rng.sample(Exp1);
        let z = a + e / lam;
        let u: f64 = rng.random();
        if u <= (-0.5 * (z - lam).powi(2)).exp() {
            return z;
        }
    }
}

/// `m` posterior draws. Untruncated posteriors are sampled exactly; a
/// truncated posterior runs coordinate-wise Gibbs from the projected mean,
/// discarding `m / 4` sweeps and keeping every sweep after that.
pub fn sample_posterior(post: &GaussianPosterior, m: usize, seed: u64) -> Vec<DVector<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p = post.dim();
    let ch = post.cholesky();
    if !post.truncated {
        let lt = ch.l().transpose();
        return (0..m)
            .map(|_| {
                let z = DVector::from_fn(p, |_, _| rng.sample::<f64, _>(StandardNormal));
                &post.mean + lt.solve_upper_triangular(&z).expect("nonsingular factor")
            })
            .collect();
    }
    let q = &post.precision;
    let mut x = post.mean.map(|v| v.max(0.0));
    let burn = m / 4;
    let mut out = Vec::with_capacity(m);
    for sweep in 0..burn + m {
        for i in 0..p {
            let mut shift = 0.0;
            for j in 0..p {
                if j != i {
                    shift += q[(i, j)] * (x[j] - post.mean[j]);
                }
            }
            let s = q[(i, i)].recip().sqrt();
            let mu = post.mean[i] - shift / q[(i, i)];
            x[i] = mu + s * std_normal_above(-mu / s, &mut rng);
        }
        if sweep >= burn {
            out.push(x.clone());
        }
    }
    out
}
