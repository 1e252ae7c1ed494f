//! Portfolios of what-if scenarios: the JSON schema, fail-fast resolution of every referenced
//! file, parallel repeated execution, result export, and plan recommendation.

mod recommend;
mod run;

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::engine::{RunOptions, DEFAULT_MAX_SLICES};
use crate::error::{Error, Result};
use crate::metrics::{metric_index, PowerModel, METRIC_NAMES};
use crate::phenomena::{load_interference_groups, FailureMode, FailureModelParams, PhenomenaConfig, PhenomenaSwitch};
use crate::scheduler::{PlacementMap, PolicyBase, PolicyId};
use crate::topology::Topology;
use crate::trace::{
    load_azure_trace, load_private_trace, read_placement_file, sample_multiple_traces_with, sample_trace,
    truncate_workload, Workload, DEFAULT_ASSUMED_CLOCK_MHZ, PRIVATE_PREFIX, PUBLIC_PREFIX, PUBLIC_PRESAMPLE_FRACTION,
};

pub use recommend::{recommend_plan, RankedScenario, Recommendation, SloCheck};
pub use run::{
    aggregate, export_results, results_csv, run_portfolio, summary_csv, MetricAggregate, ResultRow, RunResults,
    ScenarioAggregate,
};

pub const DEFAULT_REPETITIONS: u32 = 32;

/// A topology given inline or as a path to a topology JSON file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TopologyRef {
    Inline(Topology),
    Path(PathBuf),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TraceFormat {
    #[default]
    Canonical,
    Azure,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PublicMix {
    pub trace: PathBuf,
    #[serde(default = "azure")]
    pub format: TraceFormat,
    pub fraction: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub presample_fraction: Option<f64>,
}

fn azure() -> TraceFormat {
    TraceFormat::Azure
}

fn one() -> f64 {
    1.0
}

/// The workload of a scenario: a trace sampled to a load fraction with the repetition as seed,
/// optionally mixed with a public trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkloadRef {
    pub trace: PathBuf,
    #[serde(default)]
    pub format: TraceFormat,
    #[serde(default = "one")]
    pub fraction: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub public: Option<PublicMix>,
    /// Cut every trace to this many seconds before sampling.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub duration_s: Option<i64>,
    /// Clock used to turn Azure utilization into MHz.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub assumed_clock_mhz: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub scenario_id: String,
    pub topology: TopologyRef,
    pub workload: WorkloadRef,
    pub policy: PolicyId,
    /// Historical placements; required by the replay policy.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub placement: Option<PathBuf>,
    #[serde(default)]
    pub phenomena: PhenomenaSwitch,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure_model: Option<FailureModelParams>,
    #[serde(default)]
    pub failure_mode: FailureMode,
    /// Interference groups JSON; required when interference is enabled.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub interference: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub end_time: Option<i64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub power: Option<PowerModel>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_slices: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Comparator {
    #[serde(rename = "<=")]
    AtMost,
    #[serde(rename = ">=")]
    AtLeast,
}

impl Comparator {
    pub fn holds(self, value: f64, threshold: f64) -> bool {
        match self {
            Comparator::AtMost => value <= threshold,
            Comparator::AtLeast => value >= threshold,
        }
    }
}

impl fmt::Display for Comparator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Comparator::AtMost => "<=",
            Comparator::AtLeast => ">=",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Slo {
    pub metric: String,
    pub comparator: Comparator,
    pub threshold: f64,
    #[serde(default)]
    pub units: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Targets {
    /// Metrics to highlight; empty means all fourteen.
    pub selected_metrics: Vec<String>,
    pub slos: Vec<Slo>,
    /// `[start, end)` in trace seconds; only this window is accumulated.
    pub time_range: Option<(i64, i64)>,
}

impl Targets {
    pub fn metrics(&self) -> Vec<&str> {
        if self.selected_metrics.is_empty() {
            METRIC_NAMES.to_vec()
        } else {
            self.selected_metrics.iter().map(String::as_str).collect()
        }
    }

    pub fn validate(&self) -> Result<()> {
        for m in &self.selected_metrics {
            if metric_index(m).is_none() {
                return Err(Error::Config(format!("unknown metric `{m}` in selected_metrics")));
            }
        }
        for slo in &self.slos {
            if metric_index(&slo.metric).is_none() {
                return Err(Error::Config(format!("unknown metric `{}` in SLO", slo.metric)));
            }
            if !slo.threshold.is_finite() {
                return Err(Error::Config(format!("SLO on `{}` has a non-finite threshold", slo.metric)));
            }
        }
        if let Some((a, b)) = self.time_range {
            if a >= b {
                return Err(Error::Config(format!("time_range [{a}, {b}) is empty")));
            }
        }
        Ok(())
    }
}

fn default_repetitions() -> u32 {
    DEFAULT_REPETITIONS
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Portfolio {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub base: Scenario,
    #[serde(default)]
    pub candidates: Vec<Scenario>,
    #[serde(default)]
    pub targets: Targets,
    #[serde(default = "default_repetitions")]
    pub repetitions: u32,
}

impl Portfolio {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(format!("invalid portfolio: {e}")))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Json { path: path.to_path_buf(), source: e })
    }

    pub fn scenarios(&self) -> impl Iterator<Item = &Scenario> {
        std::iter::once(&self.base).chain(&self.candidates)
    }

    /// Checks the parts of the portfolio that need no file access.
    pub fn validate(&self) -> Result<()> {
        if self.repetitions == 0 {
            return Err(Error::Config("repetitions must be >= 1".into()));
        }
        let mut ids = BTreeSet::new();
        for s in self.scenarios() {
            if s.scenario_id.is_empty() {
                return Err(Error::Config("scenario_id must not be empty".into()));
            }
            if !ids.insert(s.scenario_id.as_str()) {
                return Err(Error::Config(format!("duplicate scenario_id `{}`", s.scenario_id)));
            }
        }
        self.targets.validate()
    }
}

pub type TopologyLookup<'a> = &'a dyn Fn(&str) -> Option<Topology>;

/// Where relative paths point and how stored topologies are looked up.
pub struct ResolveContext<'a> {
    pub base_dir: PathBuf,
    /// Consulted for topology references before they are treated as file paths.
    pub topology_lookup: Option<TopologyLookup<'a>>,
}

impl ResolveContext<'_> {
    pub fn new(base_dir: impl Into<PathBuf>) -> Self {
        ResolveContext { base_dir: base_dir.into(), topology_lookup: None }
    }

    fn path(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }
}

#[derive(Debug, Clone)]
pub struct PublicSource {
    pub workload: Arc<Workload>,
    pub fraction: f64,
    pub presample_fraction: f64,
}

/// A scenario with every reference loaded and validated.
#[derive(Debug, Clone)]
pub struct ResolvedScenario {
    pub scenario_id: String,
    pub topology: Arc<Topology>,
    pub trace: Arc<Workload>,
    pub fraction: f64,
    pub public: Option<PublicSource>,
    pub policy: PolicyId,
    pub placement_map: Option<Arc<PlacementMap>>,
    pub phenomena: PhenomenaConfig,
    pub options: RunOptions,
}

impl ResolvedScenario {
    /// The workload of repetition `seed`.
    pub fn workload(&self, seed: u64) -> Result<Arc<Workload>> {
        if let Some(public) = &self.public {
            let w = sample_multiple_traces_with(
                &self.trace,
                self.fraction,
                &public.workload,
                public.fraction,
                public.presample_fraction,
                seed,
            )?;
            return Ok(Arc::new(w));
        }
        if self.fraction == 1.0 || self.trace.is_empty() {
            return Ok(Arc::clone(&self.trace));
        }
        let total = self.trace.total_load_mflop();
        if total <= 0.0 {
            return Ok(Arc::clone(&self.trace));
        }
        Ok(Arc::new(sample_trace(&self.trace, self.fraction, total, seed)?))
    }
}

#[derive(Debug, Clone)]
pub struct ResolvedPortfolio {
    pub portfolio: Portfolio,
    pub scenarios: Vec<ResolvedScenario>,
}

impl ResolvedPortfolio {
    pub fn repetitions(&self) -> u32 {
        self.portfolio.repetitions
    }

    pub fn with_repetitions(mut self, repetitions: u32) -> Result<Self> {
        if repetitions == 0 {
            return Err(Error::Config("repetitions must be >= 1".into()));
        }
        self.portfolio.repetitions = repetitions;
        Ok(self)
    }
}

type TraceKey = (PathBuf, TraceFormat, u64, Option<i64>);

struct Loader<'a, 'b> {
    ctx: &'a ResolveContext<'b>,
    traces: HashMap<TraceKey, Arc<Workload>>,
    topologies: HashMap<PathBuf, Arc<Topology>>,
}

impl Loader<'_, '_> {
    fn trace(&mut self, path: &Path, format: TraceFormat, clock: f64, duration: Option<i64>) -> Result<Arc<Workload>> {
        let path = self.ctx.path(path);
        let key = (path.clone(), format, clock.to_bits(), duration);
        if let Some(w) = self.traces.get(&key) {
            return Ok(Arc::clone(w));
        }
        let mut w = match format {
            TraceFormat::Canonical => load_private_trace(&path)?,
            TraceFormat::Azure => load_azure_trace(&path, clock)?,
        };
        if let Some(d) = duration {
            w = truncate_workload(&w, d)?;
        }
        let w = Arc::new(w);
        self.traces.insert(key, Arc::clone(&w));
        Ok(w)
    }

    fn topology(&mut self, r: &TopologyRef) -> Result<Arc<Topology>> {
        let topology = match r {
            TopologyRef::Inline(t) => Arc::new(t.clone()),
            TopologyRef::Path(p) => {
                let stored = match (self.ctx.topology_lookup, p.to_str()) {
                    (Some(lookup), Some(id)) => lookup(id),
                    _ => None,
                };
                match stored {
                    Some(t) => Arc::new(t),
                    None => {
                        let path = self.ctx.path(p);
                        if let Some(t) = self.topologies.get(&path) {
                            return Ok(Arc::clone(t));
                        }
                        let t = Arc::new(Topology::load(&path)?);
                        self.topologies.insert(path, Arc::clone(&t));
                        t
                    }
                }
            }
        };
        topology.validate()?;
        Ok(topology)
    }

    fn scenario(&mut self, s: &Scenario, targets: &Targets) -> Result<ResolvedScenario> {
        let fail = |msg: String| Error::Config(format!("scenario `{}`: {msg}", s.scenario_id));
        let topology = self.topology(&s.topology)?;

        let w = &s.workload;
        check_fraction(w.fraction).map_err(fail)?;
        let clock = w.assumed_clock_mhz.unwrap_or(DEFAULT_ASSUMED_CLOCK_MHZ);
        if !(clock.is_finite() && clock > 0.0) {
            return Err(fail(format!("assumed_clock_mhz {clock} must be positive")));
        }
        let trace = self.trace(&w.trace, w.format, clock, w.duration_s)?;
        let public = match &w.public {
            Some(p) => {
                check_fraction(p.fraction).map_err(fail)?;
                let presample_fraction = p.presample_fraction.unwrap_or(PUBLIC_PRESAMPLE_FRACTION);
                check_fraction(presample_fraction).map_err(fail)?;
                let workload = self.trace(&p.trace, p.format, clock, w.duration_s)?;
                if workload.end_time() != trace.end_time() {
                    return Err(fail(format!(
                        "private and public traces end at {} s and {} s; set workload.duration_s",
                        trace.end_time(),
                        workload.end_time()
                    )));
                }
                Some(PublicSource { workload, fraction: p.fraction, presample_fraction })
            }
            None => None,
        };

        let placement_map = match &s.placement {
            Some(p) => Some(Arc::new(read_placement_file(self.ctx.path(p))?.into_iter().collect::<PlacementMap>())),
            None => None,
        };
        if s.policy.base == PolicyBase::Replay && placement_map.is_none() {
            return Err(fail("the replay policy needs a placement file".into()));
        }

        let mut phenomena = PhenomenaConfig { failure_mode: s.failure_mode, ..PhenomenaConfig::none() };
        if s.phenomena.failures() {
            let params = s.failure_model.unwrap_or_default();
            params.validate()?;
            if topology.clusters.iter().all(|c| c.machines.is_empty()) {
                return Err(fail("failures need at least one machine".into()));
            }
            phenomena.failures = Some(params);
        }
        if s.phenomena.interference() {
            let Some(p) = &s.interference else {
                return Err(fail("interference is enabled but no interference file is given".into()));
            };
            phenomena.interference = load_interference_groups(self.ctx.path(p))?;
        }

        // Mixed workloads carry source-prefixed ids; unprefixed references name private VMs.
        let (placement_map, phenomena) = if public.is_some() {
            let map = placement_map
                .map(|m| Arc::new(m.0.iter().map(|(vm, host)| (mixed_id(vm), host.clone())).collect()));
            for g in &mut phenomena.interference {
                g.members = g.members.iter().map(|m| mixed_id(m)).collect();
            }
            (map, phenomena)
        } else {
            (placement_map, phenomena)
        };

        let power = s.power.unwrap_or_default();
        if !(power.idle_w.is_finite() && power.max_w.is_finite() && power.idle_w >= 0.0 && power.max_w >= power.idle_w) {
            return Err(fail(format!("power model {power:?} must satisfy 0 <= idle_w <= max_w")));
        }
        let options = RunOptions {
            end_time: s.end_time,
            window: targets.time_range,
            power,
            max_slices: s.max_slices.unwrap_or(DEFAULT_MAX_SLICES),
        };

        Ok(ResolvedScenario {
            scenario_id: s.scenario_id.clone(),
            topology,
            trace,
            fraction: w.fraction,
            public,
            policy: s.policy,
            placement_map,
            phenomena,
            options,
        })
    }
}

fn mixed_id(id: &str) -> String {
    if id.starts_with(PRIVATE_PREFIX) || id.starts_with(PUBLIC_PREFIX) {
        id.to_owned()
    } else {
        format!("{PRIVATE_PREFIX}{id}")
    }
}

fn check_fraction(f: f64) -> std::result::Result<(), String> {
    if (0.0..=1.0).contains(&f) {
        Ok(())
    } else {
        Err(format!("fraction {f} is outside [0, 1]"))
    }
}

/// Loads and validates everything a portfolio references. Any error aborts before a single run.
pub fn resolve(portfolio: &Portfolio, ctx: &ResolveContext<'_>) -> Result<ResolvedPortfolio> {
    portfolio.validate()?;
    let mut loader = Loader { ctx, traces: HashMap::new(), topologies: HashMap::new() };
    let scenarios = portfolio
        .scenarios()
        .map(|s| loader.scenario(s, &portfolio.targets))
        .collect::<Result<Vec<_>>>()?;
    Ok(ResolvedPortfolio { portfolio: portfolio.clone(), scenarios })
}

/// Loads a portfolio file and resolves its paths relative to the file's directory.
pub fn load_portfolio(path: impl AsRef<Path>) -> Result<ResolvedPortfolio> {
    let path = path.as_ref();
    let portfolio = Portfolio::load(path)?;
    let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    resolve(&portfolio, &ResolveContext::new(base_dir))
}
