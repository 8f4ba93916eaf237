//! Kernel exponential family density estimation on whitened 1-d data.

use ksd_bayes::conjugate::sample_posterior;
use ksd_bayes::models::SufficientStatistics;
use ksd_bayes::GramCache;
use nalgebra::DVector;

use super::{choose_beta, conjugate_posterior, obtain_data, Moments, Run, STREAM_POSTERIOR};
use crate::error::{CliError, Result};
use crate::io::{fmt_f64, Table};

const CURVE_POINTS: usize = 201;

/// Normalised density `∝ exp(θ·t(x) + b(x))` on an evenly spaced grid.
pub fn density_curve(stats: &dyn SufficientStatistics, theta: &DVector<f64>, xs: &[f64]) -> Vec<f64> {
    let logs: Vec<f64> = xs
        .iter()
        .map(|&x| {
            let v = DVector::from_element(1, x);
            theta.dot(&stats.t(&v)) + stats.b(&v)
        })
        .collect();
    let m = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let un: Vec<f64> = logs.iter().map(|l| (l - m).exp()).collect();
    let h = xs[1] - xs[0];
    let z = h * (un.iter().sum::<f64>() - 0.5 * (un[0] + un[un.len() - 1]));
    un.iter().map(|u| u / z).collect()
}

pub fn kef(run: &mut Run<'_>) -> Result<()> {
    let cfg = run.cfg;
    let spec = cfg.model_spec();
    let model = spec.build()?;
    let m = model.as_dyn();
    let (data, whitening) = obtain_data(run, &spec, &model)?;
    let kernel = cfg.kernel.build(&spec, &data)?;
    let k = kernel.as_ref();
    let cache = GramCache::build(k, &data)?;
    let prior = cfg.prior();
    let (beta, _) = choose_beta(run, m, k, &data, &prior, Some(&cache))?;
    let post = conjugate_posterior(m, k, &data, &prior, beta, Some(&cache))?
        .ok_or_else(|| CliError::Config("kernel exponential family needs a Gaussian prior".into()))?;
    run.json("posterior.json", &post.export(beta, data.len()))?;

    let moments = Moments::of_gaussian(&post);
    let mut t = Table::new(&["parameter", "mean", "sd"]);
    for (i, name) in spec.param_names().iter().enumerate() {
        t.push(vec![name.clone(), fmt_f64(moments.mean[i]), fmt_f64(moments.sd[i])]);
    }
    run.table("marginals.csv", &t)?;

    let ef = m.exponential_family().expect("kernel exponential family");
    let lo = data.points().iter().map(|x| x[0]).fold(f64::INFINITY, f64::min) - 1.5;
    let hi = data.points().iter().map(|x| x[0]).fold(f64::NEG_INFINITY, f64::max) + 1.5;
    let xs: Vec<f64> = (0..CURVE_POINTS)
        .map(|i| lo + (hi - lo) * i as f64 / (CURVE_POINTS - 1) as f64)
        .collect();
    // report on the original scale when the data were whitened
    let (shift, scale) = whitening.as_ref().map_or((0.0, 1.0), |w| (w.mean[0], w.scale[0]));
    let mut curves = Table::new(&["curve", "x", "density"]);
    let mut push = |label: &str, dens: &[f64]| {
        for (x, d) in xs.iter().zip(dens) {
            curves.push(vec![label.to_string(), fmt_f64(shift + scale * x), fmt_f64(d / scale)]);
        }
    };
    push("mean", &density_curve(ef.stats(), &post.mean, &xs));
    let draws = sample_posterior(&post, cfg.posterior.curves, run.seed(STREAM_POSTERIOR));
    for (i, th) in draws.iter().enumerate() {
        push(&i.to_string(), &density_curve(ef.stats(), th, &xs));
    }
    run.table("density.csv", &curves)?;
    run.put("beta", beta);
    run.put("ksd_bayes", moments);
    Ok(())
}
