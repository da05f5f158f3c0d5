use std::collections::BTreeMap;
use std::path::Path;

use crate::checkpoint::AgentCheckpoint;
use crate::error::{Error, Result};
use crate::nets::{self, ModelSpec};
use crate::transfer::{
    apply_transfer, assemble_meta_sources, ftl_plan, make_universal_encoder, TransferMode,
    TransferPlan,
};

use super::aggregate::{mean_std, render_grid, Stat};
use super::config::{ExperimentConfig, Mode};
use super::metrics::{MetricLog, RunInfo};
use super::plot::{curves_csv, learning_curves, render_svg, Curve};
use super::train::{agent_spec, run_dir, run_stream, train_agent, Agent, RunOutput, TrainResult};

fn output(root: Option<&Path>, run: &RunInfo) -> RunOutput {
    match root {
        Some(root) => {
            let method = match run.omega {
                Some(w) if run.method == "ftl" => format!("ftl-omega{w}"),
                _ => run.method.clone(),
            };
            RunOutput::at(run_dir(root, &method, &run.task(), run.seed))
        }
        None => RunOutput::none(),
    }
}

fn load(path: Option<&Path>, what: &str) -> Result<AgentCheckpoint> {
    let path = path.ok_or_else(|| Error::config(format!("no {what} checkpoint configured")))?;
    AgentCheckpoint::load(path)
}

fn source_labels(ckpt: &AgentCheckpoint) -> Vec<String> {
    ckpt.meta.domains.clone()
}

/// Fresh agent on the config's domains; with a UAE checkpoint configured,
/// its encoder is installed and frozen.
pub fn baseline_agent(cfg: &ExperimentConfig, seed: u64) -> Result<Agent> {
    let domains = cfg.train_domains()?;
    let init = run_stream(seed).split("init");
    match &cfg.uae_checkpoint {
        None => Agent::fresh(&domains, &cfg.model, &cfg.train, &init),
        Some(path) => {
            let ckpt = AgentCheckpoint::load(path)?;
            let uae = make_universal_encoder(&ckpt)?;
            let spec = agent_spec(&domains, &ckpt.meta.spec, 0)?;
            let mut params = nets::build_agent(&spec, &init)?;
            uae.install(&mut params)?;
            Agent::from_params(&domains, spec, params, &cfg.train, true, None)
        }
    }
}

/// Target agent initialised from `source` by `plan`, using the source's
/// layer sizes.
pub fn transferred_agent(
    cfg: &ExperimentConfig,
    source: &AgentCheckpoint,
    plan: &TransferPlan,
    seed: u64,
) -> Result<Agent> {
    let target = cfg.target_domain()?;
    let template = ModelSpec {
        reward_extra_inputs: 0,
        ..source.meta.spec.clone()
    };
    let spec = agent_spec(&[target], &template, 0)?;
    let init = run_stream(seed).split("init");
    let params = apply_transfer(&spec, &source.params, plan, &init)?;
    Agent::from_params(&[target], spec, params, &cfg.train, false, None)
}

/// Target agent with the frozen shared encoder and a meta reward model
/// over the pool's reward models. Everything else is fresh.
pub fn mmtl_agent(
    cfg: &ExperimentConfig,
    uae_ckpt: &AgentCheckpoint,
    pool: &[AgentCheckpoint],
    seed: u64,
) -> Result<Agent> {
    let target = cfg.target_domain()?;
    let uae = make_universal_encoder(uae_ckpt)?;
    let sources = assemble_meta_sources(pool, &uae, cfg.meta_mode)?;
    let template = &uae_ckpt.meta.spec;
    for (i, src) in pool.iter().enumerate() {
        if src.meta.spec.latent_dim() != template.latent_dim() {
            return Err(Error::transfer(
                "reward",
                format!(
                    "source {i} has latent width {}, target {}",
                    src.meta.spec.latent_dim(),
                    template.latent_dim()
                ),
            ));
        }
    }
    let spec = agent_spec(&[target], template, sources.extra_inputs())?;
    let mut params = nets::build_agent(&spec, &run_stream(seed).split("init"))?;
    uae.install(&mut params)?;
    Agent::from_params(&[target], spec, params, &cfg.train, true, Some(sources))
}

pub fn run_baseline(cfg: &ExperimentConfig, seed: u64, root: Option<&Path>) -> Result<TrainResult> {
    let agent = baseline_agent(cfg, seed)?;
    let method = match cfg.mode {
        Mode::Baseline | Mode::Multitask => cfg.label(),
        _ => Mode::Baseline.name().to_string(),
    };
    let run = RunInfo::new(method, &agent.domains, seed);
    train_agent(agent, cfg, run.clone(), &output(root, &run))
}

/// FTL: `default_plan(ω)` from the multi-task source, then training on the target.
pub fn run_ftl(
    cfg: &ExperimentConfig,
    omega: f64,
    seed: u64,
    root: Option<&Path>,
) -> Result<TrainResult> {
    let source = load(cfg.source_checkpoint.as_deref(), "source")?;
    let agent = transferred_agent(cfg, &source, &ftl_plan(omega, cfg.full_copy_at_one)?, seed)?;
    let mut run = RunInfo::new("ftl", &agent.domains, seed);
    run.sources = source_labels(&source);
    run.omega = Some(omega);
    train_agent(agent, cfg, run.clone(), &output(root, &run))
}

pub fn run_mmtl(cfg: &ExperimentConfig, seed: u64, root: Option<&Path>) -> Result<TrainResult> {
    let uae = load(cfg.uae_checkpoint.as_deref(), "UAE")?;
    let pool = cfg
        .source_checkpoints
        .iter()
        .map(|p| AgentCheckpoint::load(p))
        .collect::<Result<Vec<_>>>()?;
    let agent = mmtl_agent(cfg, &uae, &pool, seed)?;
    let mut run = RunInfo::new("mmtl", &agent.domains, seed);
    run.sources = agent
        .sources
        .as_ref()
        .map(|s| s.domains().to_vec())
        .unwrap_or_default();
    train_agent(agent, cfg, run.clone(), &output(root, &run))
}

/// Runs a `baseline`, `multitask`, `ftl` or `mmtl` config for every seed.
pub fn run_experiment(cfg: &ExperimentConfig, root: Option<&Path>) -> Result<Vec<MetricLog>> {
    cfg.validate()?;
    let mut logs = Vec::new();
    for &seed in &cfg.seeds {
        let result = match cfg.mode {
            Mode::Baseline | Mode::Multitask => run_baseline(cfg, seed, root)?,
            Mode::Ftl => run_ftl(cfg, cfg.omega, seed, root)?,
            Mode::Mmtl => run_mmtl(cfg, seed, root)?,
            Mode::Sweep | Mode::FullTransferAblation => {
                return Err(Error::config(format!(
                    "{} mode has its own runner",
                    cfg.mode
                )))
            }
        };
        logs.push(result.log);
    }
    Ok(logs)
}

/// Fraction sweep results: one row per ω plus the baseline, one column
/// per (task, source count).
#[derive(Clone, Debug, PartialEq)]
pub struct SweepTable {
    pub omegas: Vec<f64>,
    pub columns: Vec<(String, usize)>,
    /// Overall return statistic per (row label, column).
    pub cells: BTreeMap<(String, usize), Stat>,
}

pub const BASELINE_ROW: &str = "Baseline";

fn omega_label(w: f64) -> String {
    format!("{w:.1}")
}

impl SweepTable {
    /// Builds the table from FTL logs (carrying ω) and baseline logs.
    pub fn from_logs(logs: &[MetricLog]) -> Result<Self> {
        let mut omegas: Vec<f64> = Vec::new();
        let mut columns: Vec<(String, usize)> = Vec::new();
        let mut groups: BTreeMap<(String, usize), Vec<Vec<f64>>> = BTreeMap::new();
        let mut baselines: BTreeMap<String, Vec<Vec<f64>>> = BTreeMap::new();
        for log in logs {
            let task = log.run.task();
            let returns: Vec<f64> = log
                .episodes
                .iter()
                .filter(|e| e.domain == task)
                .map(|e| e.episode_return)
                .collect();
            match (log.run.method.as_str(), log.run.omega) {
                ("ftl", Some(w)) => {
                    let col = (task, log.run.sources.len());
                    if !omegas.iter().any(|x| x.to_bits() == w.to_bits()) {
                        omegas.push(w);
                    }
                    let c = match columns.iter().position(|c| *c == col) {
                        Some(c) => c,
                        None => {
                            columns.push(col);
                            columns.len() - 1
                        }
                    };
                    groups.entry((omega_label(w), c)).or_default().push(returns);
                }
                ("baseline", _) => baselines.entry(task).or_default().push(returns),
                _ => {}
            }
        }
        if groups.is_empty() {
            return Err(Error::Input("no fraction-transfer logs to tabulate".into()));
        }
        omegas.sort_by(f64::total_cmp);
        let mut cells: BTreeMap<(String, usize), Stat> = groups
            .into_iter()
            .map(|(k, v)| (k, Stat::of_runs(&v)))
            .collect();
        for (c, (task, _)) in columns.iter().enumerate() {
            if let Some(b) = baselines.get(task) {
                cells.insert((BASELINE_ROW.to_string(), c), Stat::of_runs(b));
            }
        }
        Ok(SweepTable {
            omegas,
            columns,
            cells,
        })
    }

    pub fn row_labels(&self) -> Vec<String> {
        let mut rows: Vec<String> = self.omegas.iter().map(|&w| omega_label(w)).collect();
        rows.push(BASELINE_ROW.to_string());
        rows
    }

    /// Row label with the highest mean in column `c`.
    pub fn best(&self, c: usize) -> Option<String> {
        self.cells
            .iter()
            .filter(|((_, col), _)| *col == c)
            .max_by(|a, b| a.1.mean.total_cmp(&b.1.mean))
            .map(|((row, _), _)| row.clone())
    }

    pub fn to_text(&self) -> String {
        let mut rows = vec![{
            let mut h = vec!["ω".to_string()];
            h.extend(
                self.columns
                    .iter()
                    .map(|(task, n)| format!("{task} ({n} sources)")),
            );
            h
        }];
        for label in self.row_labels() {
            let mut row = vec![label.clone()];
            for c in 0..self.columns.len() {
                row.push(match self.cells.get(&(label.clone(), c)) {
                    Some(stat) => {
                        let mark = if self.best(c).as_deref() == Some(label.as_str()) {
                            "*"
                        } else {
                            ""
                        };
                        format!("{mark}{}", stat.cell())
                    }
                    None => "-".into(),
                });
            }
            rows.push(row);
        }
        let mut out = String::from(
            "Average return for fraction transfer (mean ± population std over all episodes of all seeds; * = best per column)\n",
        );
        out.push_str(&render_grid(&rows));
        out
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["row", "task", "sources", "mean", "std", "seed_std", "best"])
            .expect("in-memory write");
        for label in self.row_labels() {
            for (c, (task, n)) in self.columns.iter().enumerate() {
                if let Some(s) = self.cells.get(&(label.clone(), c)) {
                    let best = self.best(c).as_deref() == Some(label.as_str());
                    w.write_record([
                        label.clone(),
                        task.clone(),
                        n.to_string(),
                        s.mean.to_string(),
                        s.std.to_string(),
                        s.seed_std.to_string(),
                        best.to_string(),
                    ])
                    .expect("in-memory write");
                }
            }
        }
        String::from_utf8(w.into_inner().expect("flushed")).expect("utf-8")
    }
}

/// FTL for every ω in the config and a baseline, for every seed.
pub fn run_sweep(cfg: &ExperimentConfig, root: Option<&Path>) -> Result<(SweepTable, Vec<MetricLog>)> {
    cfg.validate()?;
    let mut logs = Vec::new();
    for &seed in &cfg.seeds {
        for &w in &cfg.omegas {
            logs.push(run_ftl(cfg, w, seed, root)?.log);
        }
        logs.push(run_baseline(cfg, seed, root)?.log);
    }
    let table = SweepTable::from_logs(&logs)?;
    if let Some(root) = root {
        write_file(&root.join("sweep.txt"), &table.to_text())?;
        write_file(&root.join("sweep.csv"), &table.to_csv())?;
    }
    Ok((table, logs))
}

pub const FULL_TRANSFER: &str = "full_transfer";

/// Full transfer of every parameter compared with learning from scratch.
#[derive(Clone, Debug)]
pub struct AblationReport {
    pub task: String,
    pub source_domains: Vec<String>,
    /// Why the comparison was not run.
    pub skipped: Option<String>,
    pub logs: Vec<MetricLog>,
    pub curves: Vec<Curve>,
}

impl AblationReport {
    pub fn mean_return(&self, method: &str) -> Option<f64> {
        let returns: Vec<f64> = self
            .logs
            .iter()
            .filter(|l| l.run.method == method)
            .flat_map(|l| l.episodes.iter().map(|e| e.episode_return))
            .collect();
        (!returns.is_empty()).then(|| mean_std(&returns).0)
    }

    pub fn to_text(&self) -> String {
        let mut s = format!(
            "Full transfer of all parameters: {} <- {}\n",
            self.task,
            self.source_domains.join("+")
        );
        if let Some(reason) = &self.skipped {
            s.push_str(&format!("skipped: {reason}\n"));
            return s;
        }
        let seeds: Vec<String> = {
            let mut v: Vec<u64> = self.logs.iter().map(|l| l.run.seed).collect();
            v.sort_unstable();
            v.dedup();
            v.iter().map(u64::to_string).collect()
        };
        s.push_str(&format!("seeds: {}\n", seeds.join(", ")));
        for m in ["baseline", FULL_TRANSFER] {
            if let Some(r) = self.mean_return(m) {
                s.push_str(&format!("{m} mean return: {r:.3}\n"));
            }
        }
        s
    }
}

/// Appendix-style ablation: every parameter copied from a source agent.
/// The run is skipped (and reported) when the action widths differ.
pub fn run_full_transfer_ablation(
    cfg: &ExperimentConfig,
    root: Option<&Path>,
) -> Result<AblationReport> {
    cfg.validate()?;
    let target = cfg.target_domain()?;
    let source = load(cfg.source_checkpoint.as_deref(), "source")?;
    let mut report = AblationReport {
        task: target.id().to_string(),
        source_domains: source_labels(&source),
        skipped: None,
        logs: Vec::new(),
        curves: Vec::new(),
    };
    if source.meta.spec.action_dim != target.action_dim() {
        report.skipped = Some(format!(
            "source action width {} differs from {} on {target}",
            source.meta.spec.action_dim,
            target.action_dim()
        ));
    } else {
        let plan = TransferPlan::uniform(TransferMode::Full);
        for &seed in &cfg.seeds {
            let agent = transferred_agent(cfg, &source, &plan, seed)?;
            let mut run = RunInfo::new(FULL_TRANSFER, &[target], seed);
            run.sources = source_labels(&source);
            report
                .logs
                .push(train_agent(agent, cfg, run.clone(), &output(root, &run))?.log);
            report.logs.push(run_baseline(cfg, seed, root)?.log);
        }
        report.curves = learning_curves(&report.logs, target.id());
    }
    if let Some(root) = root {
        write_file(&root.join("ablation.txt"), &report.to_text())?;
        if report.skipped.is_none() {
            write_file(&root.join("ablation_curves.csv"), &curves_csv(&report.curves))?;
            let title = format!("{target}: full transfer vs. scratch");
            write_file(
                &root.join("ablation_curves.svg"),
                &render_svg(&report.curves, &title),
            )?;
        }
    }
    Ok(report)
}

pub(crate) fn write_file(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}
