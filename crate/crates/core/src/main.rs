use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use flowsteer::experiment::{self, ExperimentConfig};
use flowsteer::metrics::MetricReport;
use flowsteer::{Error, Result};

#[derive(Parser)]
#[command(
    name = "flowsteer",
    version,
    about = "Trajectory-corrected rectified-flow editing at desk scale"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Subcommand)]
enum Command {
    /// Train the toy editor and write model.ckpt and train_loss.csv
    Train,
    /// Empty-prompt reconstruction with and without correction
    Reconstruct,
    /// Editing comparison across correctors and noise inversion
    EditEval,
    /// Sweep over corrected steps M and blend strength alpha
    Sweep,
    /// Check the surrogate-objective propositions on random instances
    Verify,
    /// Count network slots and blend arithmetic
    Overhead,
    /// Export the synthetic dataset as PGM images with a manifest
    GenData,
}

#[derive(Args)]
struct Common {
    /// Flat key = value configuration file; flags override it
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    data_seed: Option<u64>,
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Image side in pixels (8 to 64)
    #[arg(long, global = true)]
    size: Option<usize>,
    /// Sampler steps N
    #[arg(long, global = true)]
    grid_n: Option<usize>,
    /// Corrected steps M
    #[arg(long, global = true)]
    m: Option<usize>,
    #[arg(long, global = true)]
    alpha: Option<f64>,
    /// none, empty-prompt, edit-prompt, straight-path or flowchef
    #[arg(long, global = true)]
    corrector: Option<String>,
    #[arg(long, global = true)]
    checkpoint: Option<PathBuf>,
    /// Include full latent states in trajectory files
    #[arg(long, global = true)]
    record_states: bool,
    /// Re-evaluate the edit velocity after each blend
    #[arg(long, global = true)]
    reevaluate_v: bool,
    /// text-removal or screentone
    #[arg(long, global = true)]
    task: Option<String>,
    #[arg(long, global = true)]
    eval_size: Option<usize>,
    /// Training steps
    #[arg(long, global = true)]
    steps: Option<usize>,
    #[arg(long, global = true)]
    batch_size: Option<usize>,
    #[arg(long, global = true)]
    learning_rate: Option<f64>,
    /// Hidden layer widths, comma separated
    #[arg(long, global = true)]
    hidden: Option<String>,
    /// Verification instances
    #[arg(long, global = true)]
    instances: Option<usize>,
}

impl Common {
    fn overrides(&self) -> Vec<(&'static str, String)> {
        let mut kv = Vec::new();
        let mut put = |k: &'static str, v: Option<String>| {
            if let Some(v) = v {
                kv.push((k, v));
            }
        };
        put("seed", self.seed.map(|v| v.to_string()));
        put("data_seed", self.data_seed.map(|v| v.to_string()));
        put("out", self.out.as_ref().map(|p| p.display().to_string()));
        put("size", self.size.map(|v| v.to_string()));
        put("grid_n", self.grid_n.map(|v| v.to_string()));
        put("m", self.m.map(|v| v.to_string()));
        put("alpha", self.alpha.map(|v| v.to_string()));
        put("corrector", self.corrector.clone());
        put("checkpoint", self.checkpoint.as_ref().map(|p| p.display().to_string()));
        put("record_states", self.record_states.then(|| "true".into()));
        put("reevaluate_v", self.reevaluate_v.then(|| "true".into()));
        put("task", self.task.clone());
        put("eval_size", self.eval_size.map(|v| v.to_string()));
        put("steps", self.steps.map(|v| v.to_string()));
        put("batch_size", self.batch_size.map(|v| v.to_string()));
        put("learning_rate", self.learning_rate.map(|v| v.to_string()));
        put("hidden", self.hidden.clone());
        put("instances", self.instances.map(|v| v.to_string()));
        kv
    }

    fn config(&self) -> Result<ExperimentConfig> {
        let mut cfg = ExperimentConfig::default();
        if let Some(path) = &self.config {
            cfg.apply_file(&fs::read_to_string(path)?)?;
        }
        for (k, v) in self.overrides() {
            cfg.set(k, &v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn print_summary(rows: &[MetricReport]) {
    println!("{}", MetricReport::CSV_HEADER);
    for r in rows {
        println!("{}", r.csv_row());
    }
}

fn run(cli: &Cli) -> Result<ExitCode> {
    let cfg = cli.common.config()?;
    match cli.command {
        Command::Train => {
            let report = experiment::cmd_train(&cfg)?;
            let first = report.losses.first().copied().unwrap_or(f64::NAN);
            let last = report.losses.last().copied().unwrap_or(f64::NAN);
            println!(
                "trained {} steps: loss {first:.4} -> {last:.4}; wrote {}",
                report.losses.len(),
                cfg.out.join("model.ckpt").display()
            );
        }
        Command::Reconstruct => print_summary(&experiment::cmd_reconstruct(&cfg, &experiment::load_model(&cfg)?)?),
        Command::EditEval => print_summary(&experiment::cmd_edit_eval(&cfg, &experiment::load_model(&cfg)?)?),
        Command::Sweep => print_summary(&experiment::cmd_sweep(&cfg, &experiment::load_model(&cfg)?)?),
        Command::Verify => {
            let field = match &cfg.checkpoint {
                Some(_) => Some(experiment::load_model(&cfg)?),
                None => None,
            };
            let report = experiment::cmd_verify(&cfg, field.as_ref())?;
            println!(
                "{} instances on {}: max L(Z*) {:.3e}, max update residual {:.3e}, max contraction residual {:.3e}, \
                 max decomposition residual {:.3e}, gradient bound violations {}",
                report.instances,
                report.field,
                report.max_minimizer_value,
                report.max_update_residual,
                report.max_contraction_residual,
                report.max_decomposition_residual,
                report.gradient_bound_violations
            );
            if !report.passed {
                for entry in report.failures() {
                    eprintln!("tolerance breach: {}", serde_json::to_string(entry)?);
                }
                return Ok(ExitCode::from(3));
            }
        }
        Command::Overhead => {
            let report = experiment::cmd_overhead(&cfg, &experiment::load_model(&cfg)?)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
        Command::GenData => {
            let n = experiment::cmd_gen_data(&cfg)?;
            println!("wrote {n} samples to {}", cfg.out.join("data").display());
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Divergence { .. } => ExitCode::from(2),
                _ => ExitCode::FAILURE,
            }
        }
    }
}
