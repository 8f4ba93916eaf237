//! Exponential graphical model with a truncated Gaussian prior; edges are
//! ranked by `mean / sd` of their posterior marginals.

use ksd_bayes::conjugate::{sample_posterior, truncated_marginals};
use ksd_bayes::models::egm_edge_index;
use ksd_bayes::GramCache;

use super::{choose_beta, conjugate_posterior, obtain_data, Run, STREAM_POSTERIOR};
use crate::error::{CliError, Result};
use crate::io::{fmt_f64, Table};
use crate::spec::ModelSpec;

pub fn egm(run: &mut Run<'_>) -> Result<()> {
    let cfg = run.cfg;
    let spec = cfg.model_spec();
    let ModelSpec::Egm { nodes: d } = spec.clone() else {
        unreachable!("validated model kind")
    };
    let model = spec.build()?;
    let m = model.as_dyn();
    let (data, _) = obtain_data(run, &spec, &model)?;
    let kernel = cfg.kernel.build(&spec, &data)?;
    let k = kernel.as_ref();
    let cache = GramCache::build(k, &data)?;
    let prior = cfg.prior();
    let (beta, _) = choose_beta(run, m, k, &data, &prior, Some(&cache))?;
    let post = conjugate_posterior(m, k, &data, &prior, beta, Some(&cache))?
        .ok_or_else(|| CliError::Config("graphical model needs a (truncated) Gaussian prior".into()))?;
    run.json("posterior.json", &post.export(beta, data.len()))?;

    let names = spec.param_names();
    let marg = truncated_marginals(&post);
    let mut t = Table::new(&["parameter", "mean", "sd", "score"]);
    for (name, mg) in names.iter().zip(&marg) {
        t.push(vec![name.clone(), fmt_f64(mg.mean), fmt_f64(mg.sd), fmt_f64(mg.score)]);
    }
    run.table("marginals.csv", &t)?;

    let mut edges: Vec<(usize, usize, f64)> = (0..d)
        .flat_map(|i| (i + 1..d).map(move |j| (i, j)))
        .map(|(i, j)| (i, j, marg[egm_edge_index(d, i, j)].score))
        .collect();
    // stable sort keeps index order among ties
    edges.sort_by(|a, b| b.2.total_cmp(&a.2));
    let mut e = Table::new(&["rank", "node_i", "node_j", "score"]);
    let top: Vec<[usize; 2]> = edges
        .iter()
        .take(cfg.posterior.top_edges)
        .map(|(i, j, _)| [i + 1, j + 1])
        .collect();
    for (r, (i, j, s)) in edges.iter().enumerate() {
        e.push(vec![(r + 1).to_string(), (i + 1).to_string(), (j + 1).to_string(), fmt_f64(*s)]);
    }
    run.table("edges.csv", &e)?;

    let draws = sample_posterior(&post, cfg.posterior.draws, run.seed(STREAM_POSTERIOR));
    let mut header = vec!["draw".to_string()];
    header.extend(names);
    let mut dt = Table::new(&header);
    for (i, th) in draws.iter().enumerate() {
        let mut row = vec![i.to_string()];
        row.extend(th.iter().map(|v| fmt_f64(*v)));
        dt.push(row);
    }
    run.table("draws.csv", &dt)?;
    run.put("beta", beta);
    run.put("top_edges", top);
    Ok(())
}
