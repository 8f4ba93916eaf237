//! Five-dimensional tanh model with a two-dimensional parameter.
//!
//! The standard posterior needs `C_θ = E_{N(0,P⁻¹)}[exp(θ₁ tanh x₄ + θ₂ tanh x₅)]`,
//! which depends only on the `(x₄, x₅)` marginal and is computed by a
//! tensor Gauss–Hermite rule of order 10.

use ksd_bayes::models::liu_precision;
use ksd_bayes::numeric::{fd_gradient, gauss_hermite_normal, lbfgs, LbfgsOptions};
use ksd_bayes::sampler::log_generalised_posterior;
use ksd_bayes::{Dataset, GeneralisedTarget, GramCache};
use nalgebra::{Cholesky, DMatrix, DVector};

use super::{auto_grid, choose_beta, conjugate_posterior, obtain_data, posterior_table, push_grid, Moments, Run};
use crate::error::{CliError, Result};

pub const CUBATURE_ORDER: usize = 10;

/// Nodes `(tanh x₄, tanh x₅)` and weights of the cubature rule for the
/// `(x₄, x₅)` marginal of `N(0, P⁻¹)`.
pub fn tanh_cubature(order: usize) -> (Vec<[f64; 2]>, Vec<f64>) {
    let cov = liu_precision().try_inverse().expect("precision is invertible");
    let s = DMatrix::from_fn(2, 2, |i, j| cov[(3 + i, 3 + j)]);
    let l = Cholesky::new(s).expect("marginal covariance is SPD").l();
    let (z, w) = gauss_hermite_normal(order);
    let mut nodes = Vec::with_capacity(order * order);
    let mut weights = Vec::with_capacity(order * order);
    for (za, wa) in z.iter().zip(&w) {
        for (zb, wb) in z.iter().zip(&w) {
            let x4 = l[(0, 0)] * za;
            let x5 = l[(1, 0)] * za + l[(1, 1)] * zb;
            nodes.push([x4.tanh(), x5.tanh()]);
            weights.push(wa * wb);
        }
    }
    (nodes, weights)
}

/// Average log-likelihood `θ·t̄ − log C_θ` (the base-measure terms do not
/// depend on θ and are dropped).
pub struct LiuLikelihood {
    tbar: [f64; 2],
    nodes: Vec<[f64; 2]>,
    weights: Vec<f64>,
}

impl LiuLikelihood {
    pub fn new(data: &Dataset) -> Self {
        let n = data.len() as f64;
        let mut tbar = [0.0; 2];
        for x in data.points() {
            tbar[0] += x[3].tanh() / n;
            tbar[1] += x[4].tanh() / n;
        }
        let (nodes, weights) = tanh_cubature(CUBATURE_ORDER);
        Self { tbar, nodes, weights }
    }

    pub fn log_normaliser(&self, theta: &DVector<f64>) -> f64 {
        let terms: Vec<f64> = self
            .nodes
            .iter()
            .map(|t| theta[0] * t[0] + theta[1] * t[1])
            .collect();
        let m = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        m + terms.iter().zip(&self.weights).map(|(t, w)| w * (t - m).exp()).sum::<f64>().ln()
    }

    pub fn mean_log_lik(&self, theta: &DVector<f64>) -> f64 {
        theta[0] * self.tbar[0] + theta[1] * self.tbar[1] - self.log_normaliser(theta)
    }
}

/// Mode and curvature-based spread of an unnormalised log-density.
fn laplace<F: Fn(&DVector<f64>) -> f64>(f: &F, start: &DVector<f64>) -> Result<(DVector<f64>, DVector<f64>)> {
    let neg = |t: &DVector<f64>| -f(t);
    let r = lbfgs(|t| (neg(t), fd_gradient(neg, t)), start, &LbfgsOptions::default());
    let p = start.len();
    let h = 1e-4;
    let mut hess = DMatrix::zeros(p, p);
    for i in 0..p {
        let mut a = r.x.clone();
        let mut b = r.x.clone();
        a[i] += h;
        b[i] -= h;
        let gi = (fd_gradient(neg, &a) - fd_gradient(neg, &b)) / (2.0 * h);
        hess.set_column(i, &gi);
    }
    let hess = (&hess + hess.transpose()) * 0.5;
    let cov = hess
        .try_inverse()
        .filter(|c| c.diagonal().iter().all(|v| *v > 0.0))
        .ok_or_else(|| CliError::Core(ksd_bayes::Error::Numerical("standard posterior is not unimodal".into())))?;
    Ok((r.x, cov.diagonal().map(f64::sqrt)))
}

pub fn liu(run: &mut Run<'_>) -> Result<()> {
    let cfg = run.cfg;
    let spec = cfg.model_spec();
    let model = spec.build()?;
    let m = model.as_dyn();
    let (data, _) = obtain_data(run, &spec, &model)?;
    let kernel = cfg.kernel.build(&spec, &data)?;
    let k = kernel.as_ref();
    let cache = GramCache::build(k, &data)?;
    let prior = cfg.prior();
    let (beta, _) = choose_beta(run, m, k, &data, &prior, Some(&cache))?;
    let res = cfg.posterior.resolution_for(2);
    let fixed = cfg.posterior.bounds.as_deref();
    let mut table = posterior_table(&spec);

    let ksd_target = GeneralisedTarget::ksd(m, k, &data, Some(&cache), prior.clone(), beta)?;
    let ksd_log = |t: &DVector<f64>| log_generalised_posterior(&ksd_target, t);
    let (centre, spread) = match conjugate_posterior(m, k, &data, &prior, beta, Some(&cache))? {
        Some(p) => {
            run.json("posterior.json", &p.export(beta, data.len()))?;
            run.put("ksd_bayes_closed_form", Moments::of_gaussian(&p));
            (p.mean.clone(), p.covariance().diagonal().map(f64::sqrt))
        }
        None => laplace(&ksd_log, &DVector::zeros(2))?,
    };
    let ksd_grid = auto_grid(&ksd_log, centre.as_slice(), spread.as_slice(), res, fixed)?;
    push_grid(&mut table, "ksd-bayes", &ksd_grid);

    let lik = LiuLikelihood::new(&data);
    let n = data.len() as f64;
    let std_log = |t: &DVector<f64>| {
        let lp = prior.log_density(t);
        if lp.is_finite() {
            lp + n * lik.mean_log_lik(t)
        } else {
            lp
        }
    };
    let (c2, s2) = laplace(&std_log, &centre)?;
    let std_grid = auto_grid(&std_log, c2.as_slice(), s2.as_slice(), res, fixed)?;
    push_grid(&mut table, "standard-bayes", &std_grid);

    run.table("posterior.csv", &table)?;
    run.put("beta", beta);
    run.put("ksd_bayes", Moments::of_grid(&ksd_grid));
    run.put("standard_bayes", Moments::of_grid(&std_grid));
    Ok(())
}
