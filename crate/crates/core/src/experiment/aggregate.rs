use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::Serialize;

use crate::error::{Error, Result};

use super::metrics::MetricLog;

/// Mean and population standard deviation.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Returns pooled over every episode of every seed.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Stat {
    pub mean: f64,
    /// Population std over all pooled episodes.
    pub std: f64,
    /// Population std of the per-seed means.
    pub seed_std: f64,
    pub episodes: usize,
}

impl Stat {
    pub(crate) fn of_runs(per_seed: &[Vec<f64>]) -> Stat {
        let pooled: Vec<f64> = per_seed.iter().flatten().copied().collect();
        let (mean, std) = mean_std(&pooled);
        let means: Vec<f64> = per_seed
            .iter()
            .filter(|v| !v.is_empty())
            .map(|v| mean_std(v).0)
            .collect();
        Stat {
            mean,
            std,
            seed_std: mean_std(&means).1,
            episodes: pooled.len(),
        }
    }

    pub fn cell(&self) -> String {
        format!("{:.2} ± {:.2}", self.mean, self.std)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SummaryRow {
    pub method: String,
    pub task: String,
    pub seeds: usize,
    pub overall: Stat,
    pub final_window: Stat,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SummaryTable {
    /// Fraction of each run's env steps counted as the final window.
    pub window: f64,
    pub rows: Vec<SummaryRow>,
}

/// Per (method, task): overall returns and returns over the final `window`
/// fraction of env steps, pooled across seeds.
///
/// An episode is in the final window when it ends after
/// `(1 − window)·total` steps of its run.
pub fn aggregate(logs: &[MetricLog], window: f64) -> Result<SummaryTable> {
    if logs.is_empty() {
        return Err(Error::Input("no metric logs to aggregate".into()));
    }
    if !(window > 0.0 && window <= 1.0) {
        return Err(Error::config(format!("final window {window} outside (0, 1]")));
    }
    type Key = (String, String);
    let mut overall: BTreeMap<Key, Vec<Vec<f64>>> = BTreeMap::new();
    let mut last: BTreeMap<Key, Vec<Vec<f64>>> = BTreeMap::new();
    for log in logs {
        let total = log.env_steps() as f64;
        let threshold = total * (1.0 - window);
        let tasks: BTreeSet<&str> = log.episodes.iter().map(|e| e.domain.as_str()).collect();
        for task in tasks {
            let eps = log.episodes.iter().filter(|e| e.domain == task);
            let key = (log.run.method.clone(), task.to_string());
            overall
                .entry(key.clone())
                .or_default()
                .push(eps.clone().map(|e| e.episode_return).collect());
            last.entry(key).or_default().push(
                eps.filter(|e| e.env_steps as f64 > threshold)
                    .map(|e| e.episode_return)
                    .collect(),
            );
        }
    }
    let rows = overall
        .into_iter()
        .map(|(key, per_seed)| {
            let final_window = Stat::of_runs(&last[&key]);
            SummaryRow {
                seeds: per_seed.len(),
                overall: Stat::of_runs(&per_seed),
                final_window,
                method: key.0,
                task: key.1,
            }
        })
        .collect();
    Ok(SummaryTable { window, rows })
}

impl SummaryTable {
    /// Methods in column order: alphabetical, with `baseline` last.
    pub fn methods(&self) -> Vec<String> {
        let set: BTreeSet<&str> = self.rows.iter().map(|r| r.method.as_str()).collect();
        let mut out: Vec<String> = set
            .iter()
            .filter(|m| **m != "baseline")
            .map(|m| m.to_string())
            .collect();
        if set.contains("baseline") {
            out.push("baseline".into());
        }
        out
    }

    pub fn tasks(&self) -> Vec<String> {
        let set: BTreeSet<&str> = self.rows.iter().map(|r| r.task.as_str()).collect();
        set.into_iter().map(String::from).collect()
    }

    pub fn get(&self, method: &str, task: &str) -> Option<&SummaryRow> {
        self.rows
            .iter()
            .find(|r| r.method == method && r.task == task)
    }

    /// Method with the highest mean for `task`.
    pub fn best(&self, task: &str, final_window: bool) -> Option<&str> {
        self.rows
            .iter()
            .filter(|r| r.task == task)
            .max_by(|a, b| {
                let (x, y) = if final_window {
                    (a.final_window.mean, b.final_window.mean)
                } else {
                    (a.overall.mean, b.overall.mean)
                };
                x.total_cmp(&y)
            })
            .map(|r| r.method.as_str())
    }

    /// One line per (method, task) with both statistics.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "method",
            "task",
            "seeds",
            "overall_mean",
            "overall_std",
            "overall_seed_std",
            "overall_episodes",
            "final_mean",
            "final_std",
            "final_seed_std",
            "final_episodes",
            "best_overall",
            "best_final",
        ])
        .expect("in-memory write");
        for r in &self.rows {
            let best_o = self.best(&r.task, false) == Some(r.method.as_str());
            let best_f = self.best(&r.task, true) == Some(r.method.as_str());
            w.write_record([
                r.method.clone(),
                r.task.clone(),
                r.seeds.to_string(),
                r.overall.mean.to_string(),
                r.overall.std.to_string(),
                r.overall.seed_std.to_string(),
                r.overall.episodes.to_string(),
                r.final_window.mean.to_string(),
                r.final_window.std.to_string(),
                r.final_window.seed_std.to_string(),
                r.final_window.episodes.to_string(),
                best_o.to_string(),
                best_f.to_string(),
            ])
            .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("flushed")).expect("utf-8")
    }

    /// Task-by-method table of the overall or final-window statistic; the
    /// best entry per task carries a `*`.
    pub fn to_text(&self, final_window: bool) -> String {
        let title = if final_window {
            format!(
                "Average episode return over the final {}% of environment steps",
                fmt_percent(self.window)
            )
        } else {
            "Overall average episode return".to_string()
        };
        let methods = self.methods();
        let mut header = vec!["Task".to_string()];
        header.extend(methods.iter().cloned());
        let mut rows = vec![header];
        for task in self.tasks() {
            let best = self.best(&task, final_window);
            let mut row = vec![task.clone()];
            for m in &methods {
                row.push(match self.get(m, &task) {
                    Some(r) => {
                        let stat = if final_window {
                            &r.final_window
                        } else {
                            &r.overall
                        };
                        let mark = if best == Some(m.as_str()) { "*" } else { "" };
                        format!("{mark}{}", stat.cell())
                    }
                    None => "-".to_string(),
                });
            }
            rows.push(row);
        }
        let mut out = format!(
            "{title} (mean ± population std over all episodes of all seeds; * = best per task)\n"
        );
        out.push_str(&render_grid(&rows));
        out
    }
}

fn fmt_percent(window: f64) -> String {
    let p = window * 100.0;
    if (p - p.round()).abs() < 1e-9 {
        format!("{}", p.round())
    } else {
        format!("{p}")
    }
}

/// Left-aligned columns separated by ` | `, with a rule under the header.
pub(crate) fn render_grid(rows: &[Vec<String>]) -> String {
    let cols = rows.iter().map(Vec::len).max().unwrap_or(0);
    let widths: Vec<usize> = (0..cols)
        .map(|c| {
            rows.iter()
                .filter_map(|r| r.get(c))
                .map(|s| s.chars().count())
                .max()
                .unwrap_or(0)
        })
        .collect();
    let mut out = String::new();
    for (i, row) in rows.iter().enumerate() {
        let cells: Vec<String> = (0..cols)
            .map(|c| {
                let s = row.get(c).map(String::as_str).unwrap_or("");
                format!("{s:<w$}", w = widths[c])
            })
            .collect();
        let _ = writeln!(out, "{}", cells.join(" | ").trim_end());
        if i == 0 {
            let rule: Vec<String> = widths.iter().map(|w| "-".repeat(*w)).collect();
            let _ = writeln!(out, "{}", rule.join("-+-"));
        }
    }
    out
}
