use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use isaacs_lab::model::builtin_models;
use isaacs_lab_cli::{run, sweep, ConfigError, ExperimentConfig, Method, RunError, RunManifest, SweepAxis, SweepConfig, THREADS_ENV};

#[derive(Parser)]
#[command(name = "isaacs-lab", version, about = "Double-obstacle Isaacs equations, reflected BSDEs and Dynkin games")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct RunArgs {
    /// JSON experiment config.
    #[arg(long)]
    config: PathBuf,
    /// Output directory (overrides `output_dir`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Seed (overrides `seed`).
    #[arg(long)]
    seed: Option<u64>,
    /// Method (overrides `method`).
    #[arg(long)]
    method: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment.
    Run(RunArgs),
    /// Repeat an experiment along one parameter axis.
    Sweep {
        #[command(flatten)]
        run: RunArgs,
        /// nx, controls, penalty or p (overrides `sweep.axis`).
        #[arg(long)]
        axis: Option<String>,
        /// Comma-separated axis values (overrides `sweep.values`).
        #[arg(long, value_delimiter = ',')]
        values: Option<Vec<f64>>,
    },
    /// Print the built-in model names.
    ListModels,
}

fn load(args: &RunArgs) -> Result<ExperimentConfig, ConfigError> {
    let mut config = ExperimentConfig::load(&args.config)?;
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(m) = &args.method {
        config.method = Method::parse(m)?;
    }
    if let Some(out) = &args.out {
        config.output_dir = out.clone();
    }
    config.validate()?;
    Ok(config)
}

fn configure_threads() -> Result<(), ConfigError> {
    if let Ok(v) = std::env::var(THREADS_ENV) {
        let n: usize = v
            .parse()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| ConfigError::new(THREADS_ENV, format!("expected a positive integer, got `{v}`")))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| ConfigError::new(THREADS_ENV, e))?;
    }
    Ok(())
}

fn report(result: Result<RunManifest, RunError>) -> ExitCode {
    match result {
        Ok(m) => {
            for c in &m.checks {
                let verdict = if c.pass { "pass" } else { "FAIL" };
                println!("{verdict} {} = {:.3e} (tolerance {:.1e})", c.name, c.value, c.tolerance);
            }
            println!("{} files written in {:.2}s", m.files.len(), m.wall_time_seconds);
            ExitCode::from(m.exit_code() as u8)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(e) = configure_threads() {
        return report(Err(e.into()));
    }
    match cli.command {
        Command::ListModels => {
            for name in builtin_models::<f64>().names() {
                println!("{name}");
            }
            ExitCode::SUCCESS
        }
        Command::Run(args) => report(load(&args).map_err(RunError::from).and_then(|c| run(&c, &c.output_dir))),
        Command::Sweep { run: args, axis, values } => {
            let result = load(&args).map_err(RunError::from).and_then(|c| {
                let mut sweep_cfg = c.sweep.clone();
                if let Some(a) = axis {
                    let axis = SweepAxis::parse(&a)?;
                    sweep_cfg = Some(SweepConfig {
                        axis,
                        values: sweep_cfg.map(|s| s.values).unwrap_or_default(),
                    });
                }
                let mut sweep_cfg = sweep_cfg.ok_or_else(|| ConfigError::new("sweep", "no axis given"))?;
                if let Some(v) = values {
                    sweep_cfg.values = v;
                }
                if sweep_cfg.values.is_empty() {
                    return Err(ConfigError::new("sweep.values", "empty").into());
                }
                sweep(&c, &sweep_cfg, &c.output_dir)
            });
            report(result)
        }
    }
}
