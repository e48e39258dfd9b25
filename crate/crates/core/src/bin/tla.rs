//! `tla`: train, evaluate and augment aggression classifiers.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use tla_core::config::{ExperimentConfig, Overrides};
use tla_core::error::exit_code;
use tla_core::gradcheck::{run_gradcheck, Scope};
use tla_core::io::atomic_write;
use tla_core::metrics::{emit_results_table, ResultEntry, TableFormat};
use tla_core::run::{
    cmd_augment, cmd_encode, cmd_evaluate, cmd_train, demo_recurrence, EvaluateOptions, TrainOptions, CHECKPOINT_FILE,
};
use tla_core::{Result, TlaError};

#[derive(Parser)]
#[command(name = "tla", version, about = "Trustable LSTM-autoencoder aggression classifiers")]
struct Cli {
    /// Worker threads for per-example work; defaults to all cores.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config (JSON).
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Rejection threshold θ.
    #[arg(long)]
    theta: Option<f64>,
    /// Output directory; overrides `output_dir`.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Common {
    fn load(&self) -> Result<ExperimentConfig> {
        ExperimentConfig::load(
            &self.config,
            &Overrides {
                seed: self.seed,
                theta: self.theta,
                output_dir: self.out.clone(),
            },
        )
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write checkpoint, loss trace and manifest.
    Train {
        #[command(flatten)]
        common: Common,
        /// Continue from the checkpoint in the output directory.
        #[arg(long)]
        resume: bool,
        /// Save a resumable checkpoint every N epochs.
        #[arg(long, default_value_t = 0)]
        checkpoint_every: usize,
    },
    /// Evaluate a checkpoint on a dataset and write CSV, JSON and text reports.
    Evaluate {
        /// Config whose output directory and data provide defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// TRAC-2 CSV, encoded dataset, or `builtin:markers`.
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        theta: Option<f64>,
        /// Also write the coverage/accuracy threshold sweep.
        #[arg(long)]
        sweep: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Encode a CSV split with a checkpoint's vocabulary.
    Encode {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Build augmented corpora and the reconciliation report.
    Augment {
        #[command(flatten)]
        common: Common,
    },
    /// Finite-difference gradient checks; exit 1 if any fails.
    Gradcheck {
        #[arg(long, default_value = "all")]
        scope: Scope,
        /// Write `gradcheck.json` and `gradcheck.txt` here.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Add a check with a deliberately wrong derivative.
        #[arg(long, hide = true)]
        inject_fault: bool,
    },
    /// Print the trajectory of x_{i+1} = W·x_i and its regime.
    DemoRecurrence {
        #[arg(long, allow_hyphen_values = true)]
        w: f64,
        #[arg(long, default_value_t = 1.0, allow_hyphen_values = true)]
        x0: f64,
        #[arg(long, default_value_t = 10)]
        n: u32,
    },
}

fn evaluate(
    config: Option<PathBuf>,
    checkpoint: Option<PathBuf>,
    dataset: Option<PathBuf>,
    theta: Option<f64>,
    sweep: bool,
    out: Option<PathBuf>,
) -> Result<i32> {
    let cfg = config.map(|c| ExperimentConfig::load(&c, &Overrides::default())).transpose()?;
    let missing = |flag: &str| TlaError::Config(format!("{flag} is required without --config"));
    let run_dir = cfg.as_ref().map(|c| c.output_dir.clone());
    let checkpoint = match (checkpoint, &run_dir) {
        (Some(p), _) => p,
        (None, Some(d)) => d.join(CHECKPOINT_FILE),
        (None, None) => return Err(missing("--checkpoint")),
    };
    let dataset = match (dataset, &cfg) {
        (Some(p), _) => p,
        (None, Some(c)) => match (&c.data.test, &c.data.train) {
            (Some(t), _) | (None, Some(t)) => t.clone(),
            (None, None) => PathBuf::from(tla_core::run::BUILTIN_MARKERS),
        },
        (None, None) => return Err(missing("--dataset")),
    };
    let out = match (out, &run_dir) {
        (Some(p), _) => p,
        (None, Some(d)) => d.join("eval"),
        (None, None) => return Err(missing("--out")),
    };
    let s = cmd_evaluate(&EvaluateOptions {
        checkpoint,
        dataset,
        theta,
        sweep,
        out: out.clone(),
    })?;
    let entry = ResultEntry {
        model: s.model.display_name().into(),
        language: s.language,
        report: s.report,
    };
    print!("{}", emit_results_table(&[entry], TableFormat::Text)?);
    println!("theta {}; reports in {}", s.theta, out.display());
    Ok(0)
}

fn run(cli: Cli) -> Result<i32> {
    if let Some(j) = cli.jobs {
        if j == 0 {
            return Err(TlaError::Config("--jobs must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(j)
            .build_global()
            .map_err(|e| TlaError::Config(format!("--jobs: {e}")))?;
    }
    match cli.command {
        Command::Train {
            common,
            resume,
            checkpoint_every,
        } => {
            let cfg = common.load()?;
            let m = cmd_train(&cfg, &TrainOptions { resume, checkpoint_every })?;
            let r = &m.train_report;
            println!(
                "{} trained: train accuracy {:.4}, coverage {:.4}, f1 {:.4}",
                cfg.model, r.accuracy, r.coverage, r.f1
            );
            if let Some(t) = &m.test_report {
                println!("test accuracy {:.4}, coverage {:.4}, f1 {:.4}", t.accuracy, t.coverage, t.f1);
            }
            println!("outputs in {}", cfg.output_dir.display());
            Ok(0)
        }
        Command::Evaluate {
            config,
            checkpoint,
            dataset,
            theta,
            sweep,
            out,
        } => evaluate(config, checkpoint, dataset, theta, sweep, out),
        Command::Encode { checkpoint, dataset, out } => {
            let enc = cmd_encode(&checkpoint, &dataset, &out)?;
            println!("encoded {} rows into {}", enc.ids.len(), out.display());
            Ok(0)
        }
        Command::Augment { common } => {
            let cfg = common.load()?;
            let o = cmd_augment(&cfg)?;
            print!("{}", o.report.to_text());
            for f in &o.files {
                println!("wrote {}", f.display());
            }
            Ok(0)
        }
        Command::Gradcheck { scope, out, inject_fault } => {
            let report = run_gradcheck(scope, inject_fault)?;
            let text = report.to_text();
            if let Some(dir) = out {
                atomic_write(&dir.join("gradcheck.json"), &serde_json::to_vec_pretty(&report)?)?;
                atomic_write(&dir.join("gradcheck.txt"), text.as_bytes())?;
            }
            print!("{text}");
            match report.worst_failure() {
                None => Ok(0),
                Some(w) => {
                    eprintln!(
                        "worst offender: {} ({}), max_err {:.3e} > tol {:.0e} at {}",
                        w.name,
                        w.scope.as_str(),
                        w.max_error,
                        w.tolerance,
                        w.worst
                    );
                    Ok(1)
                }
            }
        }
        Command::DemoRecurrence { w, x0, n } => {
            print!("{}", demo_recurrence(w, x0, n));
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
