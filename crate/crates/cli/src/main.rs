use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rkd_core::eval::PercentileChart;
use rkd_core::io::config::ExperimentConfig;
use rkd_core::io::experiment::{rerun_manifest, run_experiment, MANIFEST_FILE};
use rkd_core::io::metric_log::to_exact_json;
use rkd_core::io::offline::{
    evaluate_embeddings, geometry_of_file, load_embeddings, load_prompts, read_json,
};
use rkd_core::io::sweep::{run_sweep, Grid, SUMMARY_FILE};
use rkd_core::Error;

/// Exit codes: 0 ok, 1 other failure, 2 config error, 3 divergence, 4 IO or format error.
#[derive(Debug, Parser)]
#[command(
    name = "rkd",
    version,
    about = "Toy selective repulsive distillation experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train one student and write its artifacts.
    Train(TrainArgs),
    /// Run again from a manifest written by `train`.
    Rerun {
        manifest: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Zero-shot scores of an embedding file against a prompt file, as JSON.
    Eval(EvalArgs),
    /// Geometry report of a labeled embedding file, as JSON.
    Geometry { embeddings: PathBuf },
    /// Run a grid of configurations and write a summary table.
    Sweep(SweepArgs),
}

#[derive(Debug, Args)]
struct Overrides {
    /// Config file of flat dotted keys.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    mode: Option<String>,
    #[arg(long)]
    epochs: Option<String>,
    #[arg(long)]
    batch_size: Option<String>,
    #[arg(long)]
    lr: Option<String>,
    #[arg(long)]
    tau_kd: Option<String>,
    #[arg(long)]
    lambda0: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    beta0: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    r: Option<String>,
    #[arg(long)]
    epsilon: Option<String>,
    #[arg(long)]
    lambda_feat: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    /// Any config key, as `key=value`. Repeatable; applied after the named flags.
    #[arg(long = "set", value_name = "KEY=VALUE", allow_hyphen_values = true)]
    set: Vec<String>,
}

impl Overrides {
    fn resolve(&self) -> rkd_core::Result<ExperimentConfig> {
        let mut config = match &self.config {
            Some(path) => ExperimentConfig::from_file(path)?,
            None => ExperimentConfig::benchmark(),
        };
        let flags = [
            ("train.mode", &self.mode),
            ("train.epochs", &self.epochs),
            ("train.batch_size", &self.batch_size),
            ("train.learning_rate", &self.lr),
            ("train.tau_kd", &self.tau_kd),
            ("train.lambda0", &self.lambda0),
            ("train.beta0", &self.beta0),
            ("train.r", &self.r),
            ("train.epsilon", &self.epsilon),
            ("train.lambda_feat", &self.lambda_feat),
            ("train.seed", &self.seed),
        ];
        for (key, value) in flags {
            if let Some(v) = value {
                config.apply_override(key, v)?;
            }
        }
        for kv in &self.set {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("--set `{kv}` is not `key=value`")))?;
            config.apply_override(k.trim(), v.trim())?;
        }
        Ok(config)
    }
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[command(flatten)]
    overrides: Overrides,
    #[arg(long, default_value = "run")]
    out_dir: PathBuf,
}

#[derive(Debug, Args)]
struct EvalArgs {
    /// Labeled image embeddings.
    #[arg(long)]
    embeddings: PathBuf,
    /// One prompt embedding per class, in class order.
    #[arg(long)]
    prompts: PathBuf,
    /// JSON array with one measurement per embedding row.
    #[arg(long, requires = "chart")]
    measures: Option<PathBuf>,
    /// JSON percentile chart with `lower` and `upper` bands per class.
    #[arg(long, requires = "measures")]
    chart: Option<PathBuf>,
    /// Confusable classes, comma separated; the rest count as coarse.
    #[arg(long, value_delimiter = ',')]
    fine: Vec<u32>,
}

#[derive(Debug, Args)]
struct SweepArgs {
    #[command(flatten)]
    overrides: Overrides,
    /// Grid axis `key=v1,v2`, over mode, beta0, r, epsilon, lambda_feat or seed. Repeatable.
    #[arg(long = "grid", required = true, allow_hyphen_values = true)]
    grid: Vec<String>,
    #[arg(long, default_value = "sweep")]
    out_dir: PathBuf,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::UnknownKey(_) | Error::InvalidArgument { .. } => 2,
        Error::Divergence { .. } => 3,
        Error::Io(_) | Error::Format(_) | Error::Truncated { .. } | Error::Json(_) => 4,
        _ => 1,
    }
}

fn print_json<T: serde::Serialize>(value: &T) -> rkd_core::Result<()> {
    println!("{}", to_exact_json(value)?);
    Ok(())
}

fn report_run(out_dir: &Path) {
    eprintln!("wrote {}", out_dir.join(MANIFEST_FILE).display());
}

fn run(cli: Cli) -> rkd_core::Result<()> {
    match cli.command {
        Command::Train(args) => {
            let config = args.overrides.resolve()?;
            run_experiment(&config, &args.out_dir)?;
            report_run(&args.out_dir);
        }
        Command::Rerun { manifest, out_dir } => {
            rerun_manifest(&manifest, &out_dir)?;
            report_run(&out_dir);
        }
        Command::Eval(args) => {
            let (img, labels) = load_embeddings(&args.embeddings)?;
            let prompts = load_prompts(&args.prompts)?;
            let validity = match (&args.measures, &args.chart) {
                (Some(m), Some(c)) => {
                    Some((read_json::<Vec<f64>>(m)?, read_json::<PercentileChart>(c)?))
                }
                _ => None,
            };
            let report = evaluate_embeddings(
                &img,
                &labels,
                &prompts,
                &args.fine,
                validity.as_ref().map(|(m, c)| (m.as_slice(), c)),
            )?;
            print_json(&report)?;
        }
        Command::Geometry { embeddings } => print_json(&geometry_of_file(&embeddings)?)?,
        Command::Sweep(args) => {
            let base = args.overrides.resolve()?;
            let grid = Grid::parse(&args.grid)?;
            let rows = run_sweep(&base, &grid, &args.out_dir)?;
            let done = rows.iter().filter(|r| r.error.is_none()).count();
            eprintln!(
                "{done}/{} cells completed; summary in {}",
                rows.len(),
                args.out_dir.join(SUMMARY_FILE).display()
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
