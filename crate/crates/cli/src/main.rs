use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use ksd_bayes_cli::commands::{self, parse_beta, Common, GenData};
use ksd_bayes_cli::config::{BetaMode, PifConfig};
use ksd_bayes_cli::{run_experiment, CliError, ExperimentConfig, Result, RunReport};

#[derive(Parser)]
#[command(name = "ksd-bayes", version, about = "Generalised Bayesian inference with a kernel Stein discrepancy loss")]
struct Cli {
    /// Exit with status 3 when a run raises numerical flags.
    #[arg(long, global = true)]
    strict: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment described by a TOML config.
    Run { config: PathBuf },
    /// Evaluate KSD² and its gradient at parameter values.
    KsdEval {
        #[command(flatten)]
        common: Common,
        /// Parameter value, comma separated; repeat for several.
        #[arg(long, required = true, allow_hyphen_values = true)]
        theta: Vec<String>,
    },
    /// Closed-form KSD-Bayes posterior for exponential families.
    FitConjugate {
        #[command(flatten)]
        common: Common,
        /// `auto` or a positive number.
        #[arg(long, default_value = "auto", value_parser = beta_arg)]
        beta: BetaMode,
    },
    /// Random-walk Metropolis on the KSD-Bayes posterior.
    FitMcmc {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "auto", value_parser = beta_arg)]
        beta: BetaMode,
        #[arg(long, default_value_t = 5000)]
        draws: usize,
        /// Starting point, comma separated; the minimum-KSD estimate when absent.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        init: Option<Vec<f64>>,
    },
    /// Posterior influence curves for standard Bayes and KSD-Bayes.
    Pif {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "auto", value_parser = beta_arg)]
        beta: BetaMode,
        /// Contaminant positions.
        #[arg(long = "at", value_delimiter = ',', allow_hyphen_values = true, default_value = "2,20")]
        at: Vec<f64>,
        #[arg(long, default_value_t = -1.0, allow_hyphen_values = true)]
        lo: f64,
        #[arg(long, default_value_t = 3.0, allow_hyphen_values = true)]
        hi: f64,
        #[arg(long, default_value_t = 401)]
        resolution: usize,
    },
    /// Select β by the calibration rule.
    Beta {
        #[command(flatten)]
        common: Common,
    },
    /// Simulate or preprocess a data CSV.
    GenData(GenData),
}

fn beta_arg(s: &str) -> std::result::Result<BetaMode, String> {
    parse_beta(s).map_err(|e| e.to_string())
}

fn report(r: &RunReport) {
    println!("{}", serde_json::to_string_pretty(&r.summary).expect("summary serialises"));
    eprintln!("wrote {}", r.dir.display());
}

fn dispatch(cli: Cli) -> Result<()> {
    let r = match cli.command {
        Command::Run { config } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            cfg.apply_env()?;
            run_experiment(&cfg)?
        }
        Command::KsdEval { common, theta } => commands::ksd_eval(&common, &theta)?,
        Command::FitConjugate { common, beta } => commands::fit_conjugate(&common, beta)?,
        Command::FitMcmc {
            common,
            beta,
            draws,
            init,
        } => commands::fit_mcmc(&common, beta, draws, init)?,
        Command::Pif {
            common,
            beta,
            at,
            lo,
            hi,
            resolution,
        } => commands::pif(
            &common,
            beta,
            PifConfig {
                y: at,
                bounds: [lo, hi],
                resolution,
            },
        )?,
        Command::Beta { common } => commands::beta(&common)?,
        Command::GenData(g) => {
            let rows = commands::gen_data(&g)?;
            eprintln!("wrote {} rows to {}", rows, g.out.display());
            return Ok(());
        }
    };
    report(&r);
    if cli.strict && !r.manifest.flags.is_empty() {
        return Err(CliError::Strict(r.manifest.flags.clone()));
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
