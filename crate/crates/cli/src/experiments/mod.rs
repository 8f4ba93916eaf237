//! Experiment drivers. Each writes its tables into the output directory
//! and returns a summary; [`run_experiment`] adds the manifest.

mod egm;
mod ising;
mod kef;
mod liu;
mod normal;
mod pathology;

use std::path::PathBuf;

use ksd_bayes::calibration::{beta_select, CalibrationFlag, CalibrationResult, Init};
use ksd_bayes::conjugate::{conjugate_update, quadratic_coeffs, GaussianPosterior};
use ksd_bayes::models::contaminate;
use ksd_bayes::sampler::{grid_quadrature_fn, GridDensity};
use ksd_bayes::{Dataset, Error as CoreError, GramCache, Prior, ScoreModel, SteinKernel};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::{Map, Value};

use crate::config::{BetaMode, ExperimentConfig, ExperimentKind};
use crate::error::{CliError, Result};
use crate::io::{emit_json, emit_table, fmt_f64, load_csv, Table, Whitening};
use crate::spec::{vector, Model, ModelSpec};

pub use ising::{emit_chain, ChainSidecar};
pub use normal::{emit_pif, pif_curves, PifSummary};

/// How β was chosen, recorded in the manifest.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BetaRecord {
    pub mode: &'static str,
    pub value: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub beta_n: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Manifest {
    pub package: &'static str,
    pub version: &'static str,
    pub experiment: &'static str,
    pub seed: u64,
    pub n: usize,
    pub beta: Option<BetaRecord>,
    pub flags: Vec<String>,
    pub files: Vec<String>,
    /// The configuration with output directory and thread count removed,
    /// so that reruns elsewhere produce the same manifest.
    pub config: ExperimentConfig,
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub dir: PathBuf,
    pub manifest: Manifest,
    pub summary: Value,
}

impl RunReport {
    /// Look up a number in the summary by a `/`-separated path.
    pub fn number(&self, path: &str) -> Option<f64> {
        let mut v = &self.summary;
        for key in path.split('/') {
            v = match key.parse::<usize>() {
                Ok(i) => v.get(i)?,
                Err(_) => v.get(key)?,
            };
        }
        v.as_f64()
    }
}

/// Output sink shared by the drivers.
pub struct Run<'a> {
    pub cfg: &'a ExperimentConfig,
    dir: PathBuf,
    files: Vec<String>,
    flags: Vec<String>,
    summary: Map<String, Value>,
    beta: Option<BetaRecord>,
}

impl<'a> Run<'a> {
    fn new(cfg: &'a ExperimentConfig, dir: PathBuf) -> Self {
        Self {
            cfg,
            dir,
            files: Vec::new(),
            flags: Vec::new(),
            summary: Map::new(),
            beta: None,
        }
    }

    pub fn table(&mut self, name: &str, t: &Table) -> Result<()> {
        emit_table(t, &self.dir.join(name))?;
        self.files.push(name.to_string());
        Ok(())
    }

    pub fn json<T: Serialize + ?Sized>(&mut self, name: &str, v: &T) -> Result<()> {
        emit_json(v, &self.dir.join(name))?;
        self.files.push(name.to_string());
        Ok(())
    }

    pub fn flag(&mut self, f: impl Into<String>) {
        let f = f.into();
        if !self.flags.contains(&f) {
            self.flags.push(f);
        }
    }

    pub fn put(&mut self, key: &str, v: impl Serialize) {
        self.summary
            .insert(key.to_string(), serde_json::to_value(v).expect("summary values serialise"));
    }

    pub fn seed(&self, stream: u64) -> u64 {
        sub_seed(self.cfg.seed, stream)
    }
}

/// Independent seeds for separate random streams of one run.
pub fn sub_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed.wrapping_add(stream.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub const STREAM_DATA: u64 = 0;
pub const STREAM_CONTAMINATION: u64 = 1;
pub const STREAM_POSTERIOR: u64 = 2;

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunReport> {
    run_with(cfg, cfg.experiment.name(), |run| match cfg.experiment {
        ExperimentKind::NormalLocation => normal::normal_location(run),
        ExperimentKind::Pif => normal::pif_experiment(run),
        ExperimentKind::BetaSweep => normal::beta_sweep(run),
        ExperimentKind::Liu => liu::liu(run),
        ExperimentKind::Kef => kef::kef(run),
        ExperimentKind::Egm => egm::egm(run),
        ExperimentKind::Ising => ising::ising(run),
        ExperimentKind::Pathology => pathology::pathology(run),
    })
}

/// Validate, run `body` inside a thread pool of the configured size, then
/// write `summary.json` and `manifest.json`. `name` is recorded in the
/// manifest.
pub fn run_with<F>(cfg: &ExperimentConfig, name: &'static str, body: F) -> Result<RunReport>
where
    F: FnOnce(&mut Run<'_>) -> Result<()> + Send,
{
    cfg.validate()?;
    let dir = cfg.output_dir();
    std::fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads.unwrap_or(0))
        .build()
        .map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
    let mut run = Run::new(cfg, dir.clone());
    pool.install(|| body(&mut run))?;
    let summary = Value::Object(std::mem::take(&mut run.summary));
    run.json("summary.json", &summary)?;
    let mut echo = cfg.clone();
    echo.output_dir = None;
    echo.threads = None;
    let mut files = run.files.clone();
    files.push("manifest.json".into());
    let manifest = Manifest {
        package: "ksd-bayes",
        version: env!("CARGO_PKG_VERSION"),
        experiment: name,
        seed: cfg.seed,
        n: cfg.n(),
        beta: run.beta.clone(),
        flags: run.flags.clone(),
        files,
        config: echo,
    };
    emit_json(&manifest, &dir.join("manifest.json"))?;
    Ok(RunReport { dir, manifest, summary })
}

/// Data from the configured CSV or simulated at the configured parameter,
/// then contaminated. Writes `data.csv` and, when whitened, `whitening.json`.
pub fn obtain_data(run: &mut Run<'_>, spec: &ModelSpec, model: &Model) -> Result<(Dataset, Option<Whitening>)> {
    let cfg = run.cfg;
    let (data, whitening) = match &cfg.data {
        Some(dc) => {
            if !dc.path.exists() {
                return Err(CliError::Config(format!("data file {} not found", dc.path.display())));
            }
            let (d, w) = load_csv(&dc.path, dc.whiten)?;
            let d = if matches!(spec, ModelSpec::Egm { .. }) { log_transform(&d)? } else { d };
            (d, w)
        }
        None => simulate(run, spec, model)?,
    };
    model
        .as_dyn()
        .check_data(&data)
        .map_err(|e| CliError::Data(format!("data do not fit the model: {e}")))?;
    let data = match &cfg.contamination {
        Some(c) if c.epsilon > 0.0 => contaminate(&data, c, run.seed(STREAM_CONTAMINATION))?,
        _ => data,
    };
    write_data(run, &data)?;
    if let Some(w) = &whitening {
        run.json("whitening.json", w)?;
    }
    Ok((data, whitening))
}

fn log_transform(d: &Dataset) -> Result<Dataset> {
    let rows = d.to_rows();
    if rows.iter().flatten().any(|v| *v <= 0.0) {
        return Err(CliError::Data("graphical model data must be positive".into()));
    }
    let logs: Vec<Vec<f64>> = rows.iter().map(|r| r.iter().map(|v| v.ln()).collect()).collect();
    Ok(Dataset::from_rows(&logs)?)
}

fn simulate(run: &Run<'_>, spec: &ModelSpec, model: &Model) -> Result<(Dataset, Option<Whitening>)> {
    let cfg = run.cfg;
    let mut rng = ChaCha8Rng::seed_from_u64(run.seed(STREAM_DATA));
    if let ModelSpec::Kef { .. } = spec {
        let raw = crate::generate::trimodal(cfg.n(), &mut rng);
        let rows: Vec<Vec<f64>> = raw.iter().map(|v| vec![*v]).collect();
        let w = Whitening::fit(&rows)?;
        let z: Vec<Vec<f64>> = rows.iter().map(|r| w.apply(r)).collect();
        return Ok((Dataset::from_rows(&z)?, Some(w)));
    }
    let theta = cfg
        .theta
        .clone()
        .or_else(|| spec.default_theta())
        .ok_or_else(|| CliError::Config("no data-generating parameter for this model".into()))?;
    Ok((model.as_dyn().sample(&vector(&theta), cfg.n(), &mut rng)?, None))
}

fn write_data(run: &mut Run<'_>, data: &Dataset) -> Result<()> {
    let d = data.dim();
    let mut header: Vec<String> = (1..=d).map(|j| format!("x{j}")).collect();
    header.push("contaminated".into());
    let mut t = Table::new(&header);
    for (x, c) in data.points().iter().zip(data.contaminated()) {
        let mut row: Vec<String> = x.iter().map(|v| fmt_f64(*v)).collect();
        row.push(if *c { "1".into() } else { "0".into() });
        t.push(row);
    }
    run.table("data.csv", &t)
}

/// β from the configuration; the automatic rule also writes
/// `calibration.json` and records its flags.
pub fn choose_beta(
    run: &mut Run<'_>,
    model: &dyn ScoreModel,
    kernel: &dyn SteinKernel,
    data: &Dataset,
    prior: &Prior,
    cache: Option<&GramCache>,
) -> Result<(f64, Option<CalibrationResult>)> {
    match run.cfg.beta {
        BetaMode::Fixed { value } => {
            run.beta = Some(BetaRecord {
                mode: "fixed",
                value,
                beta_n: None,
            });
            Ok((value, None))
        }
        BetaMode::Auto {} => {
            let cal = beta_select(model, kernel, data, Init::Prior(prior), &run.cfg.posterior.minimiser, cache)?;
            record_flags(run, &cal.flags);
            run.json("calibration.json", &cal)?;
            run.beta = Some(BetaRecord {
                mode: "auto",
                value: cal.beta,
                beta_n: Some(cal.beta_n),
            });
            Ok((cal.beta, Some(cal)))
        }
    }
}

pub fn record_flags(run: &mut Run<'_>, flags: &[CalibrationFlag]) {
    for f in flags {
        let name = serde_json::to_value(f).expect("flag serialises");
        run.flag(format!("calibration:{}", name.as_str().unwrap_or_default()));
    }
}

/// Closed-form posterior when the model is a natural exponential family
/// and the prior is Gaussian.
pub fn conjugate_posterior(
    model: &dyn ScoreModel,
    kernel: &dyn SteinKernel,
    data: &Dataset,
    prior: &Prior,
    beta: f64,
    cache: Option<&GramCache>,
) -> Result<Option<GaussianPosterior>> {
    let (Some(ef), Some((mean, cov))) = (model.exponential_family(), prior.gaussian_moments()) else {
        return Ok(None);
    };
    if !ef.is_natural() {
        return Ok(None);
    }
    let q = quadratic_coeffs(ef, kernel, data, cache)?;
    let post = conjugate_update(&q, &mean, &cov, beta)?;
    Ok(Some(if prior.is_truncated() { post.with_truncation() } else { post }))
}

/// Grid normalisation on `centre ± k·spread`, widening until the mass just
/// outside the box is negligible. Fixed bounds are used as given.
pub fn auto_grid<F>(
    log_target: &F,
    centre: &[f64],
    spread: &[f64],
    resolution: usize,
    fixed: Option<&[[f64; 2]]>,
) -> Result<GridDensity>
where
    F: Fn(&nalgebra::DVector<f64>) -> f64 + Sync,
{
    if let Some(b) = fixed {
        let bounds: Vec<(f64, f64)> = b.iter().map(|[l, h]| (*l, *h)).collect();
        return Ok(grid_quadrature_fn(log_target, &bounds, resolution)?);
    }
    let mut k = 8.0;
    for _ in 0..8 {
        let bounds: Vec<(f64, f64)> = centre
            .iter()
            .zip(spread)
            .map(|(c, s)| (c - k * s, c + k * s))
            .collect();
        match grid_quadrature_fn(log_target, &bounds, resolution) {
            Err(CoreError::BoundsTooTight(_)) => k *= 2.0,
            other => return Ok(other?),
        }
    }
    Err(CliError::Core(CoreError::Numerical(
        "could not find grid bounds holding the posterior mass".into(),
    )))
}

/// Append a grid density to a long-format posterior table
/// `(method, θ…, density)`.
pub fn push_grid(t: &mut Table, method: &str, g: &GridDensity) {
    for (pt, d) in g.points().iter().zip(&g.density) {
        let mut row = vec![method.to_string()];
        row.extend(pt.iter().map(|v| fmt_f64(*v)));
        row.push(fmt_f64(*d));
        t.push(row);
    }
}

pub fn posterior_table(spec: &ModelSpec) -> Table {
    let mut header = vec!["method".to_string()];
    header.extend(spec.param_names());
    header.push("density".into());
    Table::new(&header)
}

#[derive(Debug, Clone, Serialize)]
pub struct Moments {
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
}

impl Moments {
    pub fn of_grid(g: &GridDensity) -> Self {
        Self {
            mean: g.mean.iter().cloned().collect(),
            sd: g.cov.diagonal().iter().map(|v| v.max(0.0).sqrt()).collect(),
        }
    }

    pub fn of_gaussian(p: &GaussianPosterior) -> Self {
        Self {
            mean: p.mean.iter().cloned().collect(),
            sd: p.covariance().diagonal().iter().map(|v| v.sqrt()).collect(),
        }
    }
}
