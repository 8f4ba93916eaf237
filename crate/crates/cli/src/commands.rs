//! Single-purpose subcommands. Each builds an [`ExperimentConfig`] from its
//! flags and runs through the same output and manifest path as `run`.

use std::path::PathBuf;

use clap::{Args, ValueEnum};
use ksd_bayes::calibration::{beta_select, minimum_ksd, Init};
use ksd_bayes::models::{ContaminationMode, ContaminationSpec};
use ksd_bayes::sampler::{log_generalised_posterior, rwm_sample};
use ksd_bayes::{ksd_grad_theta, ksd_vstat, GeneralisedTarget, GramCache};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::{BetaMode, DataConfig, ExperimentConfig, ExperimentKind, PifConfig};
use crate::error::{CliError, Result};
use crate::experiments::{
    choose_beta, conjugate_posterior, emit_chain, emit_pif, obtain_data, pif_curves, record_flags, run_with,
    sub_seed, Moments, RunReport, STREAM_DATA, STREAM_POSTERIOR,
};
use crate::generate;
use crate::io::{emit_table, fmt_f64, read_rows, rows_table, Table};
use crate::spec::{vector, ModelSpec, WeightSpec};

/// Flags shared by the single-purpose subcommands.
#[derive(Debug, Clone, Args)]
pub struct Common {
    /// normal-location, liu, kef[:p], egm[:d], ising[:side], mixture[:mu]
    #[arg(long, default_value = "normal-location")]
    pub model: ModelSpec,
    /// Data CSV; simulated from the model when absent.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Whiten the data columns before fitting.
    #[arg(long)]
    pub whiten: bool,
    /// Sample size for simulated data.
    #[arg(long)]
    pub n: Option<usize>,
    /// Data-generating parameter, comma separated.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub theta0: Option<Vec<f64>>,
    /// Contamination proportion.
    #[arg(long, default_value_t = 0.0)]
    pub epsilon: f64,
    /// Contaminant location, comma separated.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub y: Option<Vec<f64>>,
    /// Spread of contaminant draws around `y`; 0 places them exactly at `y`.
    #[arg(long, default_value_t = 0.0)]
    pub y_scale: f64,
    /// identity, rational[:a,b,c], liu-diagonal, exp-diagonal, indicator[:f]
    #[arg(long)]
    pub weight: Option<WeightSpec>,
    /// Isotropic IMQ length-scale instead of the data-adaptive one.
    #[arg(long)]
    pub lengthscale: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory.
    #[arg(long, short)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub threads: Option<usize>,
}

impl Common {
    pub fn config(&self) -> Result<ExperimentConfig> {
        let kind = match self.model {
            ModelSpec::NormalLocation => ExperimentKind::NormalLocation,
            ModelSpec::Liu => ExperimentKind::Liu,
            ModelSpec::Kef { .. } => ExperimentKind::Kef,
            ModelSpec::Egm { .. } => ExperimentKind::Egm,
            ModelSpec::Ising { .. } => ExperimentKind::Ising,
            ModelSpec::Mixture { .. } => ExperimentKind::Pathology,
        };
        let mut cfg = ExperimentConfig::new(kind);
        cfg.model = Some(self.model.clone());
        cfg.seed = self.seed;
        cfg.n = self.n;
        cfg.theta = self.theta0.clone();
        cfg.output_dir = self.out.clone();
        cfg.threads = self.threads;
        cfg.kernel.weight = self.weight.clone();
        cfg.kernel.lengthscale = self.lengthscale;
        cfg.data = self.data.clone().map(|path| DataConfig {
            path,
            whiten: self.whiten,
        });
        cfg.contamination = contamination(self.epsilon, self.y.as_deref(), self.y_scale)?;
        cfg.apply_env()?;
        Ok(cfg)
    }
}

fn contamination(epsilon: f64, y: Option<&[f64]>, scale: f64) -> Result<Option<ContaminationSpec>> {
    if epsilon == 0.0 {
        return Ok(None);
    }
    let y = y
        .ok_or_else(|| CliError::Config("--epsilon needs a contaminant location --y".into()))?
        .to_vec();
    let mode = if scale > 0.0 {
        ContaminationMode::ReplaceDraw { y, scale }
    } else {
        ContaminationMode::ReplaceFixed { y }
    };
    Ok(Some(ContaminationSpec { epsilon, mode }))
}

/// `auto` or a positive number.
pub fn parse_beta(s: &str) -> Result<BetaMode> {
    if s == "auto" {
        return Ok(BetaMode::Auto {});
    }
    s.parse::<f64>()
        .ok()
        .filter(|v| *v > 0.0 && v.is_finite())
        .map(|value| BetaMode::Fixed { value })
        .ok_or_else(|| CliError::Config(format!("beta must be `auto` or a positive number, got {s:?}")))
}

fn split_point(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|v| v.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| CliError::Config(format!("cannot parse parameter {s:?}")))
}

/// KSD², and its gradient, at each parameter value.
pub fn ksd_eval(common: &Common, thetas: &[String]) -> Result<RunReport> {
    let cfg = common.config()?;
    let points: Vec<Vec<f64>> = thetas.iter().map(|s| split_point(s)).collect::<Result<_>>()?;
    let spec = cfg.model_spec();
    if let Some(p) = points.iter().find(|p| p.len() != spec.param_dim()) {
        return Err(CliError::Config(format!(
            "parameter {p:?} has {} entries, the model takes {}",
            p.len(),
            spec.param_dim()
        )));
    }
    run_with(&cfg, "ksd-eval", |run| {
        let model = spec.build()?;
        let m = model.as_dyn();
        let (data, _) = obtain_data(run, &spec, &model)?;
        let kernel = run.cfg.kernel.build(&spec, &data)?;
        let cache = GramCache::build(kernel.as_ref(), &data)?;
        let names = spec.param_names();
        let mut header = names.clone();
        header.push("ksd2".into());
        header.extend(names.iter().map(|n| format!("grad_{n}")));
        let mut t = Table::new(&header);
        let mut values = Vec::new();
        for p in &points {
            let th = vector(p);
            let v = ksd_vstat(m, kernel.as_ref(), &data, &th, Some(&cache))?.value;
            let g = ksd_grad_theta(m, kernel.as_ref(), &data, &th, Some(&cache))?;
            let mut row: Vec<f64> = p.clone();
            row.push(v);
            row.extend(g.iter());
            t.push_f64(&row);
            values.push(v);
        }
        run.table("ksd.csv", &t)?;
        run.put("ksd2", values);
        Ok(())
    })
}

/// Closed-form posterior for natural exponential families.
pub fn fit_conjugate(common: &Common, beta: BetaMode) -> Result<RunReport> {
    let mut cfg = common.config()?;
    cfg.beta = beta;
    run_with(&cfg.clone(), "fit-conjugate", |run| {
        let spec = run.cfg.model_spec();
        let model = spec.build()?;
        let m = model.as_dyn();
        let (data, _) = obtain_data(run, &spec, &model)?;
        let kernel = run.cfg.kernel.build(&spec, &data)?;
        let cache = GramCache::build(kernel.as_ref(), &data)?;
        let prior = run.cfg.prior();
        let (beta, _) = choose_beta(run, m, kernel.as_ref(), &data, &prior, Some(&cache))?;
        let post = conjugate_posterior(m, kernel.as_ref(), &data, &prior, beta, Some(&cache))?.ok_or_else(|| {
            CliError::Config("no closed form: the model is not a natural exponential family with a Gaussian prior".into())
        })?;
        run.json("posterior.json", &post.export(beta, data.len()))?;
        let mo = Moments::of_gaussian(&post);
        let mut t = Table::new(&["parameter", "mean", "sd"]);
        for (i, name) in spec.param_names().iter().enumerate() {
            t.push(vec![name.clone(), fmt_f64(mo.mean[i]), fmt_f64(mo.sd[i])]);
        }
        run.table("marginals.csv", &t)?;
        run.put("beta", beta);
        run.put("ksd_bayes", mo);
        Ok(())
    })
}

/// Random-walk Metropolis on the generalised posterior.
pub fn fit_mcmc(common: &Common, beta: BetaMode, draws: usize, init: Option<Vec<f64>>) -> Result<RunReport> {
    let mut cfg = common.config()?;
    cfg.beta = beta;
    cfg.posterior.draws = draws;
    if draws < 2 {
        return Err(CliError::Config("--draws must be at least 2".into()));
    }
    run_with(&cfg.clone(), "fit-mcmc", |run| {
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
        let start = match (&init, cal) {
            (Some(p), _) => vector(p),
            (None, Some(c)) => c.theta(),
            (None, None) => {
                let r = minimum_ksd(m, k, &data, Init::Prior(&prior), &cfg.posterior.minimiser, Some(&cache))?;
                record_flags(run, &r.flags);
                r.theta
            }
        };
        m.check_theta(&start)?;
        let target = GeneralisedTarget::ksd(m, k, &data, Some(&cache), prior, beta)?;
        if !log_generalised_posterior(&target, &start).is_finite() {
            return Err(CliError::Config("initial point lies outside the posterior support".into()));
        }
        let chain = rwm_sample(&target, &start, cfg.posterior.draws, run.seed(STREAM_POSTERIOR), &cfg.posterior.rwm)?;
        let sidecar = emit_chain(run, &chain, &spec.param_names(), beta, data.len())?;
        run.put("beta", beta);
        run.put("chain", sidecar);
        Ok(())
    })
}

/// Posterior influence curves of standard Bayes and KSD-Bayes.
pub fn pif(common: &Common, beta: BetaMode, pc: PifConfig) -> Result<RunReport> {
    let mut cfg = common.config()?;
    cfg.beta = beta;
    if cfg.model_spec().data_dim() != 1 || cfg.model_spec().param_dim() != 1 {
        return Err(CliError::Config("influence curves need a one-dimensional model".into()));
    }
    if !(pc.bounds[0] < pc.bounds[1]) || pc.resolution < 3 || pc.y.is_empty() {
        return Err(CliError::Config("influence curves need lo < hi, a resolution of at least 3 and some y".into()));
    }
    cfg.pif = Some(pc.clone());
    run_with(&cfg.clone(), "pif", |run| {
        let spec = run.cfg.model_spec();
        let model = spec.build()?;
        let m = model.as_dyn();
        let (data, _) = obtain_data(run, &spec, &model)?;
        let kernel = run.cfg.kernel.build(&spec, &data)?;
        let cache = GramCache::build(kernel.as_ref(), &data)?;
        let prior = run.cfg.prior();
        let (beta, _) = choose_beta(run, m, kernel.as_ref(), &data, &prior, Some(&cache))?;
        let curves = pif_curves(m, kernel.as_ref(), &data, Some(&cache), &prior, beta, &pc)?;
        run.put("beta", beta);
        emit_pif(run, &curves)
    })
}

/// The calibration rule on its own.
pub fn beta(common: &Common) -> Result<RunReport> {
    let cfg = common.config()?;
    run_with(&cfg, "beta", |run| {
        let spec = run.cfg.model_spec();
        let model = spec.build()?;
        let m = model.as_dyn();
        let (data, _) = obtain_data(run, &spec, &model)?;
        let kernel = run.cfg.kernel.build(&spec, &data)?;
        let cache = GramCache::build(kernel.as_ref(), &data)?;
        let prior = run.cfg.prior();
        let cal = beta_select(
            m,
            kernel.as_ref(),
            &data,
            Init::Prior(&prior),
            &run.cfg.posterior.minimiser,
            Some(&cache),
        )?;
        record_flags(run, &cal.flags);
        run.json("calibration.json", &cal)?;
        run.put("beta", cal.beta);
        run.put("beta_n", cal.beta_n);
        run.put("theta_n", cal.theta_n.iter().cloned().collect::<Vec<_>>());
        Ok(())
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Generator {
    Normal,
    Liu,
    Trimodal,
    Egm,
    Ising,
    Mixture,
}

#[derive(Debug, Clone, Args)]
pub struct GenData {
    /// Simulator; ignored when --input is given.
    #[arg(long, value_enum, default_value = "normal")]
    pub generator: Generator,
    /// Existing CSV to preprocess instead of simulating.
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long, default_value_t = 100)]
    pub n: usize,
    /// Data-generating parameter, comma separated; model default when absent.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub theta: Option<Vec<f64>>,
    /// Lattice side for the Ising generator, nodes for egm, separation for mixture.
    #[arg(long)]
    pub size: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 0.0)]
    pub epsilon: f64,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub y: Option<Vec<f64>>,
    #[arg(long, default_value_t = 0.0)]
    pub y_scale: f64,
    /// Square-root transform every entry.
    #[arg(long)]
    pub sqrt: bool,
    /// Drop rows with an entry further than this many sd from its column mean.
    #[arg(long)]
    pub outlier_sd: Option<f64>,
    /// Rescale each column to unit sample sd.
    #[arg(long)]
    pub unit_sd: bool,
    /// Output CSV.
    #[arg(long, short)]
    pub out: PathBuf,
}

/// Write a data CSV (header `x1, x2, …`). Preprocessing runs in the order
/// square root, outlier removal, unit sd.
pub fn gen_data(g: &GenData) -> Result<usize> {
    let mut rows = match &g.input {
        Some(path) => read_rows(path)?,
        None => simulate(g)?,
    };
    if g.sqrt {
        rows = generate::sqrt_transform(&rows).map_err(CliError::Data)?;
    }
    if let Some(k) = g.outlier_sd {
        if !(k > 0.0) {
            return Err(CliError::Config("--outlier-sd must be positive".into()));
        }
        rows = generate::remove_outliers(&rows, k);
    }
    if g.unit_sd {
        rows = generate::unit_sd(&rows);
    }
    if rows.is_empty() {
        return Err(CliError::Data("no rows left to write".into()));
    }
    emit_table(&rows_table(&rows), &g.out)?;
    Ok(rows.len())
}

fn simulate(g: &GenData) -> Result<Vec<Vec<f64>>> {
    if g.n == 0 {
        return Err(CliError::Config("--n must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(g.seed, STREAM_DATA));
    let size = |d: usize| -> Result<usize> {
        match g.size {
            None => Ok(d),
            Some(s) if s >= 1.0 && s.fract() == 0.0 => Ok(s as usize),
            Some(s) => Err(CliError::Config(format!("--size must be a positive integer here, got {s}"))),
        }
    };
    let spec = match g.generator {
        Generator::Trimodal => {
            return Ok(generate::trimodal(g.n, &mut rng).into_iter().map(|v| vec![v]).collect());
        }
        Generator::Normal => ModelSpec::NormalLocation,
        Generator::Liu => ModelSpec::Liu,
        Generator::Egm => ModelSpec::Egm { nodes: size(11)? },
        Generator::Ising => ModelSpec::Ising {
            side: size(6)?,
            burn_in: None,
            thin: None,
        },
        Generator::Mixture => ModelSpec::Mixture { mu: g.size.unwrap_or(5.0) },
    };
    let theta = g
        .theta
        .clone()
        .or_else(|| spec.default_theta())
        .ok_or_else(|| CliError::Config("this generator needs --theta".into()))?;
    let model = spec.build()?;
    let mut data = model.as_dyn().sample(&vector(&theta), g.n, &mut rng)?;
    if let Some(c) = contamination(g.epsilon, g.y.as_deref(), g.y_scale)? {
        data = ksd_bayes::models::contaminate(&data, &c, sub_seed(g.seed, crate::experiments::STREAM_CONTAMINATION))?;
    }
    let rows = data.to_rows();
    // graphical-model data are simulated on the log scale
    Ok(if let ModelSpec::Egm { .. } = spec {
        rows.into_iter().map(|r| r.into_iter().map(f64::exp).collect()).collect()
    } else {
        rows
    })
}
