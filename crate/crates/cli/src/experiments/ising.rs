//! Ising temperature on a small lattice: random-walk Metropolis on the
//! generalised posterior, plus a grid density of the same target.

use ksd_bayes::calibration::{minimum_ksd, Init};
use ksd_bayes::sampler::{log_generalised_posterior, rwm_sample, Chain};
use ksd_bayes::{GeneralisedTarget, GramCache};
use nalgebra::DVector;
use serde::Serialize;

use super::{auto_grid, choose_beta, obtain_data, posterior_table, push_grid, Moments, Run, STREAM_POSTERIOR};
use crate::error::Result;
use crate::io::{fmt_f64, Table};

#[derive(Debug, Clone, Serialize)]
pub struct ChainSidecar {
    pub seed: u64,
    pub draws: usize,
    pub warmup: usize,
    pub acceptance: f64,
    pub final_scale: f64,
    pub ess: f64,
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
    pub mcse: Vec<f64>,
    pub beta: f64,
    pub n: usize,
}

/// Write `draws.csv` and `chain.json`, flagging a short effective sample
/// or a stuck chain.
pub fn emit_chain(run: &mut Run<'_>, chain: &Chain, names: &[String], beta: f64, n: usize) -> Result<ChainSidecar> {
    let sidecar = ChainSidecar {
        seed: chain.seed,
        draws: chain.draws.len(),
        warmup: chain.warmup,
        acceptance: chain.acceptance,
        final_scale: chain.final_scale,
        ess: chain.ess(),
        mean: chain.mean().iter().cloned().collect(),
        sd: chain.sd().iter().cloned().collect(),
        mcse: chain.mcse().iter().cloned().collect(),
        beta,
        n,
    };
    if sidecar.ess < 100.0 {
        run.flag("mcmc:low-ess");
    }
    if sidecar.acceptance < 0.05 {
        run.flag("mcmc:low-acceptance");
    }
    let mut header = vec!["draw".to_string()];
    header.extend(names.iter().cloned());
    let mut dt = Table::new(&header);
    for (i, th) in chain.draws.iter().enumerate() {
        let mut row = vec![i.to_string()];
        row.extend(th.iter().map(|v| fmt_f64(*v)));
        dt.push(row);
    }
    run.table("draws.csv", &dt)?;
    run.json("chain.json", &sidecar)?;
    Ok(sidecar)
}

pub fn ising(run: &mut Run<'_>) -> Result<()> {
    let cfg = run.cfg;
    let spec = cfg.model_spec();
    let model = spec.build()?;
    let m = model.as_dyn();
    let (data, _) = obtain_data(run, &spec, &model)?;
    let kernel = cfg.kernel.build(&spec, &data)?;
    let k = kernel.as_ref();
    let cache = GramCache::build(k, &data)?;
    let prior = cfg.prior();
    let (beta, cal) = choose_beta(run, m, k, &data, &prior, Some(&cache))?;
    let start = match cal {
        Some(c) => c.theta(),
        None => minimum_ksd(m, k, &data, Init::Prior(&prior), &cfg.posterior.minimiser, Some(&cache))?.theta,
    };
    let target = GeneralisedTarget::ksd(m, k, &data, Some(&cache), prior.clone(), beta)?;
    let log_target = |t: &DVector<f64>| log_generalised_posterior(&target, t);
    let init = if log_target(&start).is_finite() {
        start
    } else {
        DVector::from_element(1, 1.0)
    };
    let seed = run.seed(STREAM_POSTERIOR);
    let chain = rwm_sample(&target, &init, cfg.posterior.draws, seed, &cfg.posterior.rwm)?;
    let sidecar = emit_chain(run, &chain, &spec.param_names(), beta, data.len())?;

    let res = cfg.posterior.resolution_for(1);
    let grid = auto_grid(
        &log_target,
        &sidecar.mean,
        &[sidecar.sd[0].max(1e-3)],
        res,
        cfg.posterior.bounds.as_deref(),
    )?;
    let mut table = posterior_table(&spec);
    push_grid(&mut table, "ksd-bayes", &grid);
    run.table("posterior.csv", &table)?;
    run.put("beta", beta);
    run.put("chain", &sidecar);
    run.put("ksd_bayes", Moments::of_grid(&grid));
    Ok(())
}
