use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::info;

use wmtransfer_core::checkpoint::AgentCheckpoint;
use wmtransfer_core::envs::EnvConfig;
use wmtransfer_core::experiment::{
    aggregate, curves_csv, evaluate_checkpoint, find_runs, learning_curves, mean_std, render_svg,
    run_experiment, run_full_transfer_ablation, run_sweep, ExperimentConfig, MetricLog, Mode,
};

#[derive(Parser)]
#[command(name = "wmtransfer", version, about = "World-model agents with multi-source transfer")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a single-task agent from scratch.
    Train(RunArgs),
    /// Train one agent on several domains at once.
    Multitask(RunArgs),
    /// Fractional transfer from a multi-task source.
    Ftl(RunArgs),
    /// Modular transfer: frozen universal encoder plus source reward models.
    Mmtl(RunArgs),
    /// Fractional transfer over a grid of fractions, plus a baseline.
    Sweep(RunArgs),
    /// Copy every parameter from a source agent and compare with scratch.
    AblateFull(RunArgs),
    /// Greedy evaluation of a stored agent.
    Eval {
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 5)]
        episodes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Summary tables over every run below a directory.
    Aggregate {
        #[arg(default_value = "runs")]
        runs: PathBuf,
        /// Fraction of env steps counted as the final window.
        #[arg(long, default_value_t = 0.1)]
        window: f64,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Learning curves (SVG and CSV) per task.
    Plot {
        #[arg(default_value = "runs")]
        runs: PathBuf,
        #[arg(long)]
        task: Option<String>,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Checkpoint utilities.
    Ckpt {
        #[command(subcommand)]
        command: CkptCommand,
    },
}

#[derive(Subcommand)]
enum CkptCommand {
    /// Print metadata and per-tensor shapes.
    Inspect { path: PathBuf },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Run this seed only.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "runs")]
    out_dir: PathBuf,
    #[arg(long)]
    omega: Option<f64>,
    /// Source checkpoints: one multi-task agent, or one agent per source task for mmtl.
    #[arg(long, num_args = 1.., value_delimiter = ',')]
    sources: Vec<PathBuf>,
    /// Checkpoint whose encoder is shared frozen.
    #[arg(long)]
    uae: Option<PathBuf>,
}

impl RunArgs {
    fn config(&self, mode: Mode) -> Result<ExperimentConfig> {
        let mut cfg = ExperimentConfig::load(&self.config)
            .with_context(|| format!("loading {}", self.config.display()))?;
        if cfg.mode != mode {
            info!("config mode {} replaced by {mode}", cfg.mode);
            cfg.mode = mode;
        }
        if let Some(seed) = self.seed {
            cfg.seeds = vec![seed];
        }
        if let Some(w) = self.omega {
            cfg.omega = w;
            if mode == Mode::Sweep {
                cfg.omegas = vec![w];
            }
        }
        if !self.sources.is_empty() {
            if mode == Mode::Mmtl {
                cfg.source_checkpoints = self.sources.clone();
            } else if let [one] = self.sources.as_slice() {
                cfg.source_checkpoint = Some(one.clone());
            } else {
                bail!("{mode} takes a single source checkpoint");
            }
        }
        if let Some(uae) = &self.uae {
            cfg.uae_checkpoint = Some(uae.clone());
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn run(args: &RunArgs, mode: Mode) -> Result<()> {
    let cfg = args.config(mode)?;
    let root = args.out_dir.as_path();
    match mode {
        Mode::Sweep => {
            let (table, _) = run_sweep(&cfg, Some(root))?;
            print!("{}", table.to_text());
        }
        Mode::FullTransferAblation => {
            let report = run_full_transfer_ablation(&cfg, Some(root))?;
            print!("{}", report.to_text());
        }
        _ => {
            for log in run_experiment(&cfg, Some(root))? {
                let returns: Vec<f64> = log.episodes.iter().map(|e| e.episode_return).collect();
                println!(
                    "{} {} seed {}: {} episodes, {} env steps, mean return {:.3}",
                    log.run.method,
                    log.run.task(),
                    log.run.seed,
                    returns.len(),
                    log.env_steps(),
                    mean_std(&returns).0
                );
            }
        }
    }
    Ok(())
}

fn load_logs(runs: &Path) -> Result<Vec<MetricLog>> {
    let dirs = find_runs(runs)?;
    if dirs.is_empty() {
        bail!("no runs found under {}", runs.display());
    }
    dirs.iter()
        .map(|d| MetricLog::read_dir(d).with_context(|| format!("reading {}", d.display())))
        .collect()
}

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
    info!("wrote {}", path.display());
    Ok(())
}

fn main_inner(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train(a) => run(&a, Mode::Baseline),
        Command::Multitask(a) => run(&a, Mode::Multitask),
        Command::Ftl(a) => run(&a, Mode::Ftl),
        Command::Mmtl(a) => run(&a, Mode::Mmtl),
        Command::Sweep(a) => run(&a, Mode::Sweep),
        Command::AblateFull(a) => run(&a, Mode::FullTransferAblation),
        Command::Eval {
            checkpoint,
            episodes,
            seed,
        } => {
            let ckpt = AgentCheckpoint::load(&checkpoint)?;
            for (domain, ret) in evaluate_checkpoint(&ckpt, EnvConfig::default(), episodes, seed)? {
                println!("{domain}\t{ret:.3}");
            }
            Ok(())
        }
        Command::Aggregate {
            runs,
            window,
            out_dir,
        } => {
            let table = aggregate(&load_logs(&runs)?, window)?;
            let out = out_dir.unwrap_or(runs);
            let overall = table.to_text(false);
            let last = table.to_text(true);
            write(&out.join("summary.csv"), &table.to_csv())?;
            write(&out.join("overall.txt"), &overall)?;
            write(&out.join("final.txt"), &last)?;
            print!("{overall}\n{last}");
            Ok(())
        }
        Command::Plot {
            runs,
            task,
            out_dir,
        } => {
            let logs = load_logs(&runs)?;
            let mut tasks: Vec<String> = logs
                .iter()
                .flat_map(|l| l.episodes.iter().map(|e| e.domain.clone()))
                .collect();
            tasks.sort();
            tasks.dedup();
            if let Some(t) = task {
                if !tasks.contains(&t) {
                    bail!("no episodes of {t} under {}", runs.display());
                }
                tasks = vec![t];
            }
            let out = out_dir.unwrap_or(runs);
            for t in tasks {
                let curves = learning_curves(&logs, &t);
                write(&out.join(format!("curves_{t}.csv")), &curves_csv(&curves))?;
                write(&out.join(format!("curves_{t}.svg")), &render_svg(&curves, &t))?;
                println!("{t}: {} curves", curves.len());
            }
            Ok(())
        }
        Command::Ckpt {
            command: CkptCommand::Inspect { path },
        } => {
            let ckpt = AgentCheckpoint::load(&path)?;
            print!("{}", ckpt.describe());
            for w in ckpt.warnings() {
                println!("warning: {w}");
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match main_inner(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let cause = format!("{e:#}").replace('\n', " ");
            eprintln!("error: {cause}");
            ExitCode::FAILURE
        }
    }
}
