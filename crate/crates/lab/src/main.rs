use std::collections::BTreeMap;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use slowmix_lab::config::{Experiment, ExperimentConfig};
use slowmix_lab::error::{FieldError, LabError};
use slowmix_lab::summary::{emit_plotdata, sweep_summary, write_summary_csv};
use slowmix_lab::{experiments, run};

/// Numerical laboratory for randomly phase-shifted alternating shear flows.
///
/// Thread count follows RAYON_NUM_THREADS.
#[derive(Parser)]
#[command(name = "slowmix", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Dissipation time by power iteration and bisection.
    Tdis(RunArgs),
    /// Mix-norm decay under exact transport.
    Mix(RunArgs),
    /// Two-point drift and Foster-Lyapunov fit.
    TwopointDrift(RunArgs),
    /// Empirical minorization constant of the two-point chain.
    TwopointMinorize(RunArgs),
    /// Closed-form bounds; prints a JSON object per κ.
    Bounds(RunArgs),
    /// Diffusive versus transport closeness estimate.
    Closeness(RunArgs),
    /// Single-step decay at the mixing time.
    PropCheck(RunArgs),
    /// Dissipation time of the rescaled family.
    RescaledTdis(RunArgs),
    /// Run an experiment described by a JSON config file.
    Sweep {
        #[arg(long)]
        config: PathBuf,
    },
    /// Summarise a results file as tidy CSV.
    Summary {
        #[arg(long = "in")]
        input: PathBuf,
        /// Write here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Emit plot series (mix-decay, tdis-scaling, drift-ci).
    Plot {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        kind: String,
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
    },
}

#[derive(Args)]
struct RunArgs {
    /// Diffusivities; fractions such as 1/16 are accepted.
    #[arg(long, value_delimiter = ',', value_parser = parse_number, default_values_t = [1.0 / 16.0])]
    kappa: Vec<f64>,
    #[arg(long, default_value_t = 50.0)]
    amplitude: f64,
    #[arg(long, default_value_t = 256)]
    grid: usize,
    #[arg(long, value_delimiter = ',', default_values_t = [0u64])]
    seeds: Vec<u64>,
    #[arg(long, default_value_t = 64)]
    substeps: usize,
    #[arg(long, default_value = "cosine_bump")]
    profile: String,
    #[arg(long, default_value_t = 0)]
    master_seed: u64,
    /// Experiment knobs as key=value.
    #[arg(long = "set", value_parser = parse_override)]
    overrides: Vec<(String, f64)>,
    #[arg(long, default_value = "results.csv")]
    out: String,
}

fn parse_number(s: &str) -> Result<f64, String> {
    let parse = |t: &str| t.trim().parse::<f64>().map_err(|e| format!("{t:?}: {e}"));
    match s.split_once('/') {
        Some((a, b)) => Ok(parse(a)? / parse(b)?),
        None => parse(s),
    }
}

fn parse_override(s: &str) -> Result<(String, f64), String> {
    let (k, v) = s.split_once('=').ok_or_else(|| format!("{s:?} is not key=value"))?;
    Ok((k.trim().to_string(), parse_number(v)?))
}

impl RunArgs {
    fn into_config(self, experiment: Experiment) -> ExperimentConfig {
        ExperimentConfig {
            experiment,
            kappa_list: self.kappa,
            amplitude: self.amplitude,
            profile_name: self.profile,
            grid: self.grid,
            seeds: self.seeds,
            substeps: self.substeps,
            out_path: self.out,
            master_seed: self.master_seed,
            overrides: self.overrides.into_iter().collect::<BTreeMap<_, _>>(),
        }
    }
}

fn execute(config: ExperimentConfig) -> Result<ExitCode, LabError> {
    if config.experiment == Experiment::Bounds {
        config.validate()?;
        let profile = config.profile()?;
        for &kappa in &config.kappa_list {
            let mut doc = experiments::bounds_payload(&config, &profile, kappa, config.seeds[0])?;
            doc.insert("kappa".into(), kappa.into());
            doc.insert("amplitude".into(), config.amplitude.into());
            println!("{}", serde_json::Value::Object(doc));
        }
    }
    let outcome = run(&config)?;
    eprintln!("{} rows ({} failed) -> {}", outcome.rows, outcome.failures, outcome.path.display());
    Ok(if outcome.failures > 0 { ExitCode::from(3) } else { ExitCode::SUCCESS })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Tdis(a) => execute(a.into_config(Experiment::Tdis)),
        Command::Mix(a) => execute(a.into_config(Experiment::Mix)),
        Command::TwopointDrift(a) => execute(a.into_config(Experiment::TwopointDrift)),
        Command::TwopointMinorize(a) => execute(a.into_config(Experiment::TwopointMinorize)),
        Command::Bounds(a) => execute(a.into_config(Experiment::Bounds)),
        Command::Closeness(a) => execute(a.into_config(Experiment::Closeness)),
        Command::PropCheck(a) => execute(a.into_config(Experiment::PropCheck)),
        Command::RescaledTdis(a) => execute(a.into_config(Experiment::RescaledTdis)),
        Command::Sweep { config } => ExperimentConfig::from_json_file(&config).and_then(execute),
        Command::Summary { input, out } => sweep_summary(&input).and_then(|rows| match out {
            Some(path) => write_summary_csv(&rows, std::fs::File::create(path)?),
            None => write_summary_csv(&rows, std::io::stdout().lock()),
        }
        .map(|_| ExitCode::SUCCESS)),
        Command::Plot { input, kind, out_dir } => emit_plotdata(&input, &kind, &out_dir).map(|p| {
            eprintln!("{}", p.display());
            ExitCode::SUCCESS
        }),
    };
    match result {
        Ok(code) => code,
        Err(LabError::ConfigInvalid(errs)) => {
            for FieldError { field, message } in errs {
                eprintln!("config error: {field}: {message}");
            }
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
