//! Command-line front end: argument parsing, config resolution, dispatch and
//! exit codes (0 success, 1 user error, 2 internal error).

pub mod commands;
pub mod config;
pub mod logging;

use std::ffi::OsString;
use std::fmt;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use serde_json::Value;

pub use config::{load_config, override_value, parse_config, ConfigError, RunConfig};

#[derive(Debug, Parser)]
#[command(
    name = "scenebias",
    version,
    about = "Background-bias measurement and mitigation for action recognition"
)]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// JSON run configuration; every key is optional.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Seed for every random stream in the run.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Directory for this run's outputs and `run.log`.
    #[arg(short, long, global = true)]
    pub output_dir: Option<PathBuf>,
    /// Worker threads for per-video and per-item work.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Override a config key, e.g. `--set train.epochs=20`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub set: Vec<String>,
    /// More log detail on stderr (-v debug, -vv trace).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
    /// Only errors on stderr.
    #[arg(short, long, global = true)]
    pub quiet: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the procedural bias sandbox (frames, masks, clean backgrounds).
    GenSandbox {
        #[arg(long)]
        per_class: Option<usize>,
    },
    /// Keep videos with a person detection and split them into train/val.
    BuildDataset {
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// Directory of `<video_id>.json` detection lists.
        #[arg(long)]
        detections: Option<PathBuf>,
    },
    /// Double a dataset by pasting each human onto a pool background.
    Augment {
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        pool: Option<PathBuf>,
    },
    /// Build a counterfactual action-swap test set.
    Swap {
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        target: Option<usize>,
    },
    /// Train a model variant.
    Train {
        #[arg(long)]
        train: Option<PathBuf>,
        #[arg(long)]
        val: Option<PathBuf>,
        #[arg(long)]
        variant: Option<String>,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Predict a manifest with a trained model and report SHAcc/SBErr.
    Eval {
        /// Directory written by `train`.
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
    /// Build five-way MCQ items and split them into tune/eval sets.
    Mcq {
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
    /// Run the automated prompt-tuning loop against chat endpoints or a transcript.
    PromptTune {
        /// Recorded transcript to replay instead of calling the endpoints.
        #[arg(long)]
        replay: Option<PathBuf>,
        /// Tune items; defaults to `items.jsonl` beside the transcript.
        #[arg(long)]
        items: Option<PathBuf>,
        /// Held-out items; defaults to the tune items.
        #[arg(long)]
        eval_items: Option<PathBuf>,
        #[arg(long)]
        iterations: Option<usize>,
        /// Also evaluate the hand-crafted prompt suite.
        #[arg(long)]
        manual: bool,
        /// Continue from `loop_state.json` in the output directory.
        #[arg(long)]
        resume: bool,
    },
    /// Summarize a predictions CSV; optionally emit sweep plot data.
    Report {
        #[arg(long)]
        predictions: Option<PathBuf>,
        #[arg(long, default_value = "json")]
        format: String,
        /// Sweep point `x=predictions.csv`. Repeatable.
        #[arg(long, value_name = "X=PATH")]
        sweep: Vec<String>,
    },
    /// Finite-difference check of every primitive and model variant.
    Gradcheck {
        #[arg(long, default_value_t = 4)]
        max_coords: usize,
        #[arg(long, default_value_t = 2)]
        batch: usize,
    },
    /// Write the prompt-tuning fixture (items and transcript).
    Fixture,
}

/// Failure that is not the user's fault.
#[derive(Debug)]
pub struct Internal(pub String);

impl fmt::Display for Internal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Internal {}

fn path_value(p: &std::path::Path) -> Value {
    Value::String(p.to_string_lossy().into_owned())
}

/// Config overrides from `--set` and then from flags, so flags win.
fn overrides(cli: &Cli) -> anyhow::Result<Vec<(String, Value)>> {
    let mut out = Vec::new();
    for kv in &cli.global.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| anyhow::anyhow!("--set expects KEY=VALUE, got {kv:?}"))?;
        out.push((k.trim().to_owned(), override_value(v)));
    }
    let g = &cli.global;
    let mut push = |key: &str, v: Value| out.push((key.to_owned(), v));
    if let Some(s) = g.seed {
        push("seed", s.into());
    }
    if let Some(o) = &g.output_dir {
        push("output_dir", path_value(o));
    }
    if let Some(j) = g.jobs {
        push("jobs", j.into());
    }
    let mut path = |key: &str, p: &Option<PathBuf>| {
        if let Some(p) = p {
            out.push((format!("data.{key}"), path_value(p)));
        }
    };
    match &cli.command {
        Command::GenSandbox { .. } | Command::Gradcheck { .. } | Command::Fixture => {}
        Command::BuildDataset { manifest, detections } => {
            path("manifest", manifest);
            path("detections", detections);
        }
        Command::Augment { manifest, pool } => {
            path("manifest", manifest);
            path("pool", pool);
        }
        Command::Swap { manifest, .. } | Command::Mcq { manifest } => path("manifest", manifest),
        Command::Train { train, val, .. } => {
            path("train", train);
            path("val", val);
        }
        Command::Eval { model, manifest } => {
            path("model", model);
            path("manifest", manifest);
        }
        Command::PromptTune {
            replay,
            items,
            eval_items,
            ..
        } => {
            path("transcript", replay);
            path("items", items);
            path("eval_items", eval_items);
        }
        Command::Report { predictions, .. } => path("predictions", predictions),
    }
    match &cli.command {
        Command::GenSandbox { per_class: Some(n) } => out.push(("sandbox.per_class".into(), (*n).into())),
        Command::Swap { target: Some(t), .. } => out.push(("metrics.swap_target".into(), (*t).into())),
        Command::Train { variant, epochs, .. } => {
            if let Some(v) = variant {
                let v: scenebias::models::ModelVariant = v.parse()?;
                out.push(("model.variant".into(), Value::String(v.to_string())));
            }
            if let Some(e) = epochs {
                out.push(("train.epochs".into(), (*e).into()));
            }
        }
        Command::PromptTune {
            iterations: Some(n), ..
        } => out.push(("prompt.iterations".into(), (*n).into())),
        _ => {}
    }
    Ok(out)
}

/// Parsed and validated configuration for a command line.
pub fn resolve_config(cli: &Cli) -> anyhow::Result<RunConfig> {
    let ov = overrides(cli)?;
    Ok(match &cli.global.config {
        Some(p) => load_config(p, &ov)?,
        None => parse_config("", "defaults", &ov)?,
    })
}

fn exit_code(e: &anyhow::Error) -> i32 {
    if e.downcast_ref::<Internal>().is_some() {
        return 2;
    }
    match e.downcast_ref::<scenebias::Error>() {
        Some(scenebias::Error::Shape(_)) => 2,
        _ => 1,
    }
}

/// Runs one command line and returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
        }
    };
    let outcome = catch_unwind(AssertUnwindSafe(|| {
        resolve_config(&cli).and_then(|cfg| commands::execute(&cli, cfg))
    }));
    let code = match outcome {
        Ok(Ok(())) => 0,
        Ok(Err(e)) => {
            if logging::active() {
                log::error!("{e:#}");
            } else {
                eprintln!("error: {e:#}");
            }
            exit_code(&e)
        }
        Err(_) => {
            eprintln!("error: internal failure (panic)");
            2
        }
    };
    logging::stop();
    code
}
