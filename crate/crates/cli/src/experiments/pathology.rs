//! KSD² of a two-component mixture as a function of the mixing proportion.

use ksd_bayes::{ksd_vstat, GramCache};
use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{sub_seed, Run, STREAM_DATA};
use crate::error::Result;
use crate::io::{fmt_f64, Table};
use crate::spec::{vector, ModelSpec};

#[derive(Debug, Clone, Serialize)]
pub struct CurveSummary {
    pub mu: f64,
    pub min: f64,
    pub max: f64,
    pub range: f64,
    pub argmin: f64,
}

pub fn pathology(run: &mut Run<'_>) -> Result<()> {
    let cfg = run.cfg;
    let pc = &cfg.pathology;
    let theta0 = vector(&cfg.theta.clone().unwrap_or_else(|| vec![0.5]));
    let thetas: Vec<f64> = (0..pc.points)
        .map(|i| pc.theta_min + (pc.theta_max - pc.theta_min) * i as f64 / (pc.points - 1) as f64)
        .collect();
    let mut t = Table::new(&["mu", "theta", "ksd2"]);
    let mut summaries = Vec::new();
    for (c, &mu) in pc.mu.iter().enumerate() {
        let spec = ModelSpec::Mixture { mu };
        let model = spec.build()?;
        let m = model.as_dyn();
        let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(run.seed(STREAM_DATA), c as u64));
        let data = m.sample(&theta0, cfg.n(), &mut rng)?;
        let kernel = cfg.kernel.build(&spec, &data)?;
        let cache = GramCache::build(kernel.as_ref(), &data)?;
        let mut vals = Vec::with_capacity(thetas.len());
        for &th in &thetas {
            let v = ksd_vstat(m, kernel.as_ref(), &data, &DVector::from_element(1, th), Some(&cache))?.value;
            t.push(vec![fmt_f64(mu), fmt_f64(th), fmt_f64(v)]);
            vals.push(v);
        }
        let (imin, min) = vals
            .iter()
            .cloned()
            .enumerate()
            .fold((0, f64::INFINITY), |a, (i, v)| if v < a.1 { (i, v) } else { a });
        let max = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        summaries.push(CurveSummary {
            mu,
            min,
            max,
            range: max - min,
            argmin: thetas[imin],
        });
    }
    run.table("ksd_curve.csv", &t)?;
    run.put("curves", &summaries);
    Ok(())
}
