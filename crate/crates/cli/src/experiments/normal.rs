//! Normal location model: posteriors with baselines, influence curves and
//! the sampling distribution of β.

use ksd_bayes::baselines::{mmd_bayes_target, power_posterior};
use ksd_bayes::calibration::{beta_select, Init};
use ksd_bayes::models::contaminate;
use ksd_bayes::robustness::{dl_ksd, dl_nll, pif};
use ksd_bayes::sampler::log_generalised_posterior;
use ksd_bayes::{Dataset, GeneralisedTarget, GramCache, Prior, ScoreModel, SteinKernel};
use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{
    auto_grid, choose_beta, conjugate_posterior, obtain_data, posterior_table, push_grid, record_flags, sub_seed, Moments,
    Run, STREAM_CONTAMINATION, STREAM_DATA,
};
use crate::config::PifConfig;
use crate::error::Result;
use crate::io::{fmt_f64, Table};
use crate::spec::{vector, KernelConfig, WeightSpec};

pub fn normal_location(run: &mut Run<'_>) -> Result<()> {
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
    let res = cfg.posterior.resolution_for(1);
    let fixed = cfg.posterior.bounds.as_deref();
    let n = data.len() as f64;
    let mut table = posterior_table(&spec);

    // KSD-Bayes; closed form when the prior is Gaussian
    let ksd_target = GeneralisedTarget::ksd(m, k, &data, Some(&cache), prior.clone(), beta)?;
    let ksd_log = |t: &DVector<f64>| log_generalised_posterior(&ksd_target, t);
    let (centre, spread) = match conjugate_posterior(m, k, &data, &prior, beta, Some(&cache))? {
        Some(p) => {
            run.json("posterior.json", &p.export(beta, data.len()))?;
            (p.mean[0], p.covariance()[(0, 0)].sqrt())
        }
        None => (data.mean()[0], 1.0 / (beta * n).sqrt()),
    };
    let ksd_grid = auto_grid(&ksd_log, &[centre], &[spread], res, fixed)?;
    push_grid(&mut table, "ksd-bayes", &ksd_grid);

    let nll = GeneralisedTarget::nll(m, &data, prior.clone(), 1.0)?;
    let nll_log = |t: &DVector<f64>| log_generalised_posterior(&nll, t);
    let xbar = data.mean()[0];
    let std_grid = auto_grid(&nll_log, &[n * xbar / (n + 1.0)], &[(n + 1.0).recip().sqrt()], res, fixed)?;
    push_grid(&mut table, "standard-bayes", &std_grid);

    let power = power_posterior(&data)?;
    let pp = Prior::DiagonalGaussian {
        mean: vec![power.mean],
        var: vec![power.var],
    };
    let pp_log = |t: &DVector<f64>| pp.log_density(t);
    let pp_grid = auto_grid(&pp_log, &[power.mean], &[power.var.sqrt()], res, fixed)?;
    push_grid(&mut table, "power-posterior", &pp_grid);

    let mmd = mmd_bayes_target(&data, 1.0)?;
    let mmd_log = |t: &DVector<f64>| log_generalised_posterior(&mmd, t);
    let mmd_grid = auto_grid(&mmd_log, &[xbar], &[1.0], res, fixed)?;
    push_grid(&mut table, "mmd-bayes", &mmd_grid);

    run.table("posterior.csv", &table)?;
    run.put("beta", beta);
    run.put("ksd_bayes", Moments::of_grid(&ksd_grid));
    run.put("standard_bayes", Moments::of_grid(&std_grid));
    run.put("power_posterior", power);
    run.put("mmd_bayes", Moments::of_grid(&mmd_grid));

    if let Some(pc) = &cfg.pif {
        let curves = pif_curves(m, k, &data, Some(&cache), &prior, beta, pc)?;
        emit_pif(run, &curves)?;
    }
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
pub struct PifSummary {
    pub method: &'static str,
    pub y: f64,
    pub max_abs: f64,
    pub integral: f64,
    pub l1: f64,
    #[serde(skip)]
    pub theta: Vec<f64>,
    #[serde(skip)]
    pub values: Vec<f64>,
}

/// Influence curves of standard Bayes and KSD-Bayes for each contaminant.
pub fn pif_curves(
    model: &dyn ScoreModel,
    kernel: &dyn SteinKernel,
    data: &Dataset,
    cache: Option<&GramCache>,
    prior: &Prior,
    beta: f64,
    pc: &PifConfig,
) -> Result<Vec<PifSummary>> {
    let bounds = (pc.bounds[0], pc.bounds[1]);
    let nll = GeneralisedTarget::nll(model, data, prior.clone(), 1.0)?;
    let ksd = GeneralisedTarget::ksd(model, kernel, data, cache, prior.clone(), beta)?;
    let mut out = Vec::new();
    for &y in &pc.y {
        let yv = DVector::from_element(1, y);
        let a = pif(&yv, &nll, |t| dl_nll(&yv, t, model, data), bounds, pc.resolution)?;
        let b = pif(&yv, &ksd, |t| dl_ksd(&yv, t, model, kernel, data, cache), bounds, pc.resolution)?;
        for (method, c) in [("standard-bayes", a), ("ksd-bayes", b)] {
            out.push(PifSummary {
                method,
                y,
                max_abs: c.max_abs(),
                integral: c.integral,
                l1: c.l1,
                theta: c.theta,
                values: c.values,
            });
        }
    }
    Ok(out)
}

pub fn emit_pif(run: &mut Run<'_>, curves: &[PifSummary]) -> Result<()> {
    let mut t = Table::new(&["method", "y", "theta", "pif"]);
    for c in curves {
        for (th, v) in c.theta.iter().zip(&c.values) {
            t.push(vec![c.method.to_string(), fmt_f64(c.y), fmt_f64(*th), fmt_f64(*v)]);
        }
    }
    run.table("pif.csv", &t)?;
    run.json("pif.json", curves)?;
    run.put("pif", curves);
    Ok(())
}

pub fn pif_experiment(run: &mut Run<'_>) -> Result<()> {
    let cfg = run.cfg;
    let spec = cfg.model_spec();
    let model = spec.build()?;
    let m = model.as_dyn();
    let (data, _) = obtain_data(run, &spec, &model)?;
    let kernel = cfg.kernel.build(&spec, &data)?;
    let cache = GramCache::build(kernel.as_ref(), &data)?;
    let prior = cfg.prior();
    let (beta, _) = choose_beta(run, m, kernel.as_ref(), &data, &prior, Some(&cache))?;
    let pc = cfg.pif.clone().unwrap_or_default();
    let curves = pif_curves(m, kernel.as_ref(), &data, Some(&cache), &prior, beta, &pc)?;
    run.put("beta", beta);
    emit_pif(run, &curves)
}

pub fn beta_sweep(run: &mut Run<'_>) -> Result<()> {
    let cfg = run.cfg;
    let spec = cfg.model_spec();
    let model = spec.build()?;
    let m = model.as_dyn();
    let theta = vector(&cfg.theta.clone().or_else(|| spec.default_theta()).expect("normal location has a default"));
    let prior = cfg.prior();
    // unweighted kernel unless one is configured
    let kc = KernelConfig {
        weight: Some(cfg.kernel.weight.clone().unwrap_or(WeightSpec::Identity)),
        ..cfg.kernel.clone()
    };
    run.put("weight", kc.weight_for(&spec));
    let mut t = Table::new(&["replicate", "theta_n", "beta_n", "beta"]);
    let mut betas = Vec::with_capacity(cfg.sweep.replicates);
    let mut ones = 0usize;
    for r in 0..cfg.sweep.replicates {
        let seed = sub_seed(cfg.seed, 1000 + r as u64);
        let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(seed, STREAM_DATA));
        let mut data = m.sample(&theta, cfg.n(), &mut rng)?;
        if let Some(c) = cfg.contamination.as_ref().filter(|c| c.epsilon > 0.0) {
            data = contaminate(&data, c, sub_seed(seed, STREAM_CONTAMINATION))?;
        }
        let kernel = kc.build(&spec, &data)?;
        let cal = beta_select(m, kernel.as_ref(), &data, Init::Prior(&prior), &cfg.posterior.minimiser, None)?;
        record_flags(run, &cal.flags);
        if cal.beta == 1.0 {
            ones += 1;
        }
        betas.push(cal.beta);
        t.push(vec![
            r.to_string(),
            fmt_f64(cal.theta_n[0]),
            fmt_f64(cal.beta_n),
            fmt_f64(cal.beta),
        ]);
    }
    run.table("beta.csv", &t)?;
    let mut sorted = betas.clone();
    sorted.sort_by(f64::total_cmp);
    let k = sorted.len();
    let median = if k % 2 == 1 {
        sorted[k / 2]
    } else {
        0.5 * (sorted[k / 2 - 1] + sorted[k / 2])
    };
    run.put("replicates", k);
    run.put("fraction_beta_one", ones as f64 / k as f64);
    run.put("median_beta", median);
    run.put("mean_beta", betas.iter().sum::<f64>() / k as f64);
    Ok(())
}
