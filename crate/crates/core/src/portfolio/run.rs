use std::fmt::Write as _;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{ResolvedPortfolio, ResolvedScenario};
use crate::engine::{simulate, SimulationConfig};
use crate::error::{Error, Result};
use crate::metrics::{MetricValue, ScenarioReport, METRIC_NAMES};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub scenario_id: String,
    pub repetition: u32,
    pub report: ScenarioReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricAggregate {
    pub metric: String,
    pub median: f64,
    pub mean: f64,
    /// Unbiased sample standard deviation; 0 for a single repetition.
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioAggregate {
    pub scenario_id: String,
    pub metrics: Vec<MetricAggregate>,
}

impl ScenarioAggregate {
    pub fn get(&self, metric: &str) -> Option<&MetricAggregate> {
        self.metrics.iter().find(|m| m.metric == metric)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResults {
    pub repetitions: u32,
    /// Scenario declaration order, then repetition.
    pub rows: Vec<ResultRow>,
    pub aggregates: Vec<ScenarioAggregate>,
}

/// Median, mean, and unbiased standard deviation of `values`.
pub fn aggregate(values: &[f64]) -> (f64, f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN, f64::NAN);
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let median = if n % 2 == 1 { sorted[n / 2] } else { (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0 };
    let mean = values.iter().sum::<f64>() / n as f64;
    let std = if n < 2 {
        0.0
    } else {
        (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64).sqrt()
    };
    (median, mean, std)
}

fn run_unit(scenario: &ResolvedScenario, repetition: u32) -> Result<ScenarioReport> {
    let seed = u64::from(repetition);
    let workload = scenario.workload(seed)?;
    let cfg = SimulationConfig {
        topology: &scenario.topology,
        workload: &workload,
        policy: scenario.policy,
        placement_map: scenario.placement_map.as_deref(),
        phenomena: &scenario.phenomena,
        options: scenario.options,
    };
    simulate(cfg, seed)
        .map(|o| o.report)
        .inspect_err(|e| log::error!("scenario `{}` repetition {repetition}: {e}", scenario.scenario_id))
}

/// Runs every scenario `repetitions` times with seed = repetition, on up to `parallelism`
/// threads. `progress` is called with (completed, total) after each run.
pub fn run_portfolio(
    portfolio: &ResolvedPortfolio,
    parallelism: usize,
    progress: Option<&(dyn Fn(usize, usize) + Sync)>,
) -> Result<RunResults> {
    let reps = portfolio.repetitions();
    let units: Vec<(usize, u32)> =
        (0..portfolio.scenarios.len()).flat_map(|s| (0..reps).map(move |r| (s, r))).collect();
    let total = units.len();
    let done = AtomicUsize::new(0);

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallelism.max(1))
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
    let reports = pool.install(|| {
        units
            .par_iter()
            .map(|&(s, r)| {
                let report = run_unit(&portfolio.scenarios[s], r)?;
                let completed = done.fetch_add(1, Ordering::SeqCst) + 1;
                if let Some(cb) = progress {
                    cb(completed, total);
                }
                Ok(report)
            })
            .collect::<Result<Vec<_>>>()
    })?;

    let rows: Vec<ResultRow> = units
        .iter()
        .zip(reports)
        .map(|(&(s, r), report)| ResultRow {
            scenario_id: portfolio.scenarios[s].scenario_id.clone(),
            repetition: r,
            report,
        })
        .collect();
    let aggregates = portfolio
        .scenarios
        .iter()
        .map(|s| {
            let reports: Vec<&ScenarioReport> =
                rows.iter().filter(|row| row.scenario_id == s.scenario_id).map(|row| &row.report).collect();
            ScenarioAggregate {
                scenario_id: s.scenario_id.clone(),
                metrics: METRIC_NAMES
                    .iter()
                    .enumerate()
                    .map(|(i, name)| {
                        let values: Vec<f64> = reports.iter().map(|r| r.value(i).as_f64()).collect();
                        let (median, mean, std) = aggregate(&values);
                        MetricAggregate { metric: name.to_string(), median, mean, std }
                    })
                    .collect(),
            }
        })
        .collect();
    Ok(RunResults { repetitions: reps, rows, aggregates })
}

fn float(out: &mut String, v: f64) {
    write!(out, "{v:.16e}").expect("write to String");
}

/// `results.csv`: one row per (scenario, repetition) with all fourteen metrics.
pub fn results_csv(results: &RunResults) -> String {
    let mut out = String::from("scenario_id,repetition");
    for name in METRIC_NAMES {
        out.push(',');
        out.push_str(name);
    }
    out.push('\n');
    for row in &results.rows {
        out.push_str(&csv_field(&row.scenario_id));
        write!(out, ",{}", row.repetition).expect("write to String");
        for v in row.report.values() {
            out.push(',');
            match v {
                MetricValue::Float(f) => float(&mut out, f),
                MetricValue::Count(c) => write!(out, "{c}").expect("write to String"),
            }
        }
        out.push('\n');
    }
    out
}

/// `summary.csv`: median, mean, and std of every metric per scenario.
pub fn summary_csv(results: &RunResults) -> String {
    let mut out = String::from("scenario_id,metric,median,mean,std\n");
    for agg in &results.aggregates {
        for m in &agg.metrics {
            out.push_str(&csv_field(&agg.scenario_id));
            write!(out, ",{},", m.metric).expect("write to String");
            float(&mut out, m.median);
            out.push(',');
            float(&mut out, m.mean);
            out.push(',');
            float(&mut out, m.std);
            out.push('\n');
        }
    }
    out
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Writes `results.csv` and `summary.csv` into `dir`, creating it if needed.
pub fn export_results(results: &RunResults, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (name, body) in [("results.csv", results_csv(results)), ("summary.csv", summary_csv(results))] {
        let path = dir.join(name);
        std::fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}
