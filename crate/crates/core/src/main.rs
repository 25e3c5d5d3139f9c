use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use rgtr::harness::{self, RunConfig, SweepAxis};
use rgtr::model::InitStrategy;
use rgtr::Error;

#[derive(Parser)]
#[command(name = "rgtr", version, about = "Temporal sentence grounding with anchor-pair queries")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// TOML run configuration; defaults are used when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dotted-path override, e.g. `--set optim.lr=3e-4`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic dataset as a JSON Lines manifest.
    SynthData {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Initialize anchor pairs from the ground-truth spans of a manifest.
    InitAnchors {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        manifest: PathBuf,
        /// Number of anchors; defaults to model.num_queries.
        #[arg(long)]
        k: Option<usize>,
        /// kmeans, uniform_grid or random; defaults to model.init_strategy.
        #[arg(long)]
        strategy: Option<InitStrategy>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model; writes checkpoints and a JSON Lines log to output.dir.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Continue from a `last` checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on a manifest.
    Eval {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        /// product, sum or conf_only.
        #[arg(long)]
        scoring: Option<String>,
        #[arg(long)]
        nms_threshold: Option<f64>,
        /// Directory for the report and diagnostic CSVs.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train and evaluate one run per value along an ablation axis.
    Sweep {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// K, init_strategy, scoring or iou_loss_type.
        #[arg(long)]
        axis: String,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<String>,
    },
}

fn load(args: &ConfigArgs) -> rgtr::Result<RunConfig> {
    RunConfig::load(args.config.as_deref(), &args.overrides)
}

fn run(cli: Cli) -> rgtr::Result<()> {
    match cli.command {
        Command::SynthData { cfg, out } => {
            let cfg = load(&cfg)?;
            let n = harness::cmd_synth_data(&cfg, &out)?;
            println!("wrote {n} samples to {}", out.display());
        }
        Command::InitAnchors {
            cfg,
            manifest,
            k,
            strategy,
            seed,
            out,
        } => {
            let cfg = load(&cfg)?;
            let anchors = harness::cmd_init_anchors(
                &manifest,
                k.unwrap_or(cfg.model.num_queries),
                strategy.unwrap_or(cfg.model.init_strategy),
                seed.unwrap_or(cfg.optim.seed),
                cfg.model.kmeans_iters,
                &out,
            )?;
            println!("wrote {} anchors to {}", anchors.len(), out.display());
        }
        Command::Train { cfg, resume } => {
            let cfg = load(&cfg)?;
            let outcome = harness::cmd_train(&cfg, resume.as_deref())?;
            if let Some(r) = &outcome.final_report {
                println!("{}", serde_json::to_string_pretty(r)?);
            }
            println!("outputs in {}", outcome.output_dir.display());
        }
        Command::Eval {
            cfg,
            checkpoint,
            manifest,
            scoring,
            nms_threshold,
            out,
        } => {
            let mut cfg = load(&cfg)?;
            if let Some(s) = scoring {
                cfg.eval.scoring = s.parse()?;
            }
            if let Some(t) = nms_threshold {
                cfg.eval.nms_threshold = t;
            }
            let report = harness::cmd_eval(&checkpoint, &manifest, &cfg.eval, &out)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
        Command::Sweep { cfg, axis, values } => {
            let cfg = load(&cfg)?;
            let axis: SweepAxis = axis.parse()?;
            let rows = harness::cmd_sweep(&cfg, axis, &values)?;
            for r in &rows {
                match &r.report {
                    Some(rep) => println!("{}\tmAP_avg={:.4}", r.value, rep.map_avg),
                    None => println!("{}\tfailed: {}", r.value, r.error.as_deref().unwrap_or("")),
                }
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    if e.is_validation() {
        1
    } else {
        2
    }
}
