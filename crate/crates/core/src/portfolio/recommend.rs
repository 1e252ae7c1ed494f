use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{Comparator, ResolvedPortfolio, RunResults};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SloCheck {
    pub metric: String,
    pub comparator: Comparator,
    pub threshold: f64,
    pub units: String,
    pub median: f64,
    pub satisfied: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedScenario {
    pub scenario_id: String,
    pub total_cores: u64,
    pub median_power_wh: f64,
    pub violated: usize,
    pub slo_checks: Vec<SloCheck>,
    /// Medians of the selected metrics.
    pub medians: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Recommendation {
    /// No scenario met every SLO; `ranked` then orders all scenarios by violations.
    pub best_effort: bool,
    pub ranked: Vec<RankedScenario>,
    /// Scenarios that missed at least one SLO, fewest violations first. Empty when best effort.
    pub violating: Vec<RankedScenario>,
}

/// Ranks scenarios that meet every SLO (on repetition medians) by total cores, then median power.
pub fn recommend_plan(results: &RunResults, portfolio: &ResolvedPortfolio) -> Result<Recommendation> {
    let targets = &portfolio.portfolio.targets;
    let mut entries = Vec::with_capacity(portfolio.scenarios.len());
    for (order, scenario) in portfolio.scenarios.iter().enumerate() {
        let agg = results
            .aggregates
            .iter()
            .find(|a| a.scenario_id == scenario.scenario_id)
            .ok_or_else(|| Error::Argument(format!("no results for scenario `{}`", scenario.scenario_id)))?;
        let median = |metric: &str| agg.get(metric).map(|m| m.median).expect("aggregate covers every metric");
        let slo_checks: Vec<SloCheck> = targets
            .slos
            .iter()
            .map(|slo| {
                let m = median(&slo.metric);
                SloCheck {
                    metric: slo.metric.clone(),
                    comparator: slo.comparator,
                    threshold: slo.threshold,
                    units: slo.units.clone(),
                    median: m,
                    satisfied: slo.comparator.holds(m, slo.threshold),
                }
            })
            .collect();
        let entry = RankedScenario {
            scenario_id: scenario.scenario_id.clone(),
            total_cores: scenario.topology.total_cores(),
            median_power_wh: median("total_power_wh"),
            violated: slo_checks.iter().filter(|c| !c.satisfied).count(),
            slo_checks,
            medians: targets.metrics().into_iter().map(|m| (m.to_string(), median(m))).collect(),
        };
        entries.push((order, entry));
    }

    let by_capacity = |a: &(usize, RankedScenario), b: &(usize, RankedScenario)| {
        a.1.total_cores
            .cmp(&b.1.total_cores)
            .then(a.1.median_power_wh.total_cmp(&b.1.median_power_wh))
            .then(a.0.cmp(&b.0))
    };
    let (mut ok, mut bad): (Vec<_>, Vec<_>) = entries.into_iter().partition(|(_, e)| e.violated == 0);
    ok.sort_by(by_capacity);
    bad.sort_by(|a, b| a.1.violated.cmp(&b.1.violated).then(by_capacity(a, b)));
    let strip = |v: Vec<(usize, RankedScenario)>| v.into_iter().map(|(_, e)| e).collect::<Vec<_>>();

    if ok.is_empty() {
        Ok(Recommendation { best_effort: true, ranked: strip(bad), violating: Vec::new() })
    } else {
        Ok(Recommendation { best_effort: false, ranked: strip(ok), violating: strip(bad) })
    }
}
