//! Slice-stepped simulation kernel.
//!
//! Time advances in 300 s slices. At every slice boundary the engine applies host recoveries and
//! failures, enqueues submitted VMs, lets the allocation policy drain the FIFO queue, and then
//! runs one slice of fair-share CPU allocation on every live host. A run is single-threaded and
//! fully determined by its inputs and seed.

mod fair_share;

use std::collections::{BTreeMap, VecDeque};
use std::iter::Peekable;

type FailureSource<'a> = Peekable<Box<dyn Iterator<Item = FailureEvent> + Send + 'a>>;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{HostSlice, MetricsAccumulator, PowerModel, ScenarioReport};
use crate::phenomena::{FailureEvent, FailureMode, FailureSampler, InterferenceModel, PhenomenaConfig};
use crate::rng::{self, SimRng, Stream};
use crate::scheduler::{place, HostState, Placement, PlacementMap, PolicyId};
use crate::topology::Topology;
use crate::trace::{slice_ceil, slice_floor, VmSpec, Workload, SLICE_SECS};

pub use fair_share::fair_share;
pub(crate) use fair_share::water_fill;

/// Upper bound on slices per run unless overridden (about 19 years of simulated time).
pub const DEFAULT_MAX_SLICES: u64 = 2_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunOptions {
    /// Keep simulating idle slices until at least this time.
    pub end_time: Option<i64>,
    /// Only slices starting in `[start, end)` and events inside it count towards the metrics.
    pub window: Option<(i64, i64)>,
    pub power: PowerModel,
    pub max_slices: u64,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions { end_time: None, window: None, power: PowerModel::default(), max_slices: DEFAULT_MAX_SLICES }
    }
}

/// Everything one run needs.
#[derive(Debug, Clone, Copy)]
pub struct SimulationConfig<'a> {
    pub topology: &'a Topology,
    pub workload: &'a Workload,
    pub policy: PolicyId,
    pub placement_map: Option<&'a PlacementMap>,
    pub phenomena: &'a PhenomenaConfig,
    pub options: RunOptions,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Phase {
    /// Not submitted yet.
    Pending,
    Queued,
    Running,
    /// Resident on a crashed host.
    Failed,
    Finished,
    /// Needs more memory than any host has; dropped from the queue.
    Rejected,
}

#[derive(Debug, Clone)]
pub struct VmState<'a> {
    pub spec: &'a VmSpec,
    pub phase: Phase,
    pub progress: usize,
    pub placed_on: Option<usize>,
    ever_failed: bool,
}

/// CPU accounting of one VM in one slice, in MHz.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VmAllocation {
    pub vm: usize,
    pub host: usize,
    pub requested_mhz: f64,
    pub effective_mhz: f64,
    pub granted_mhz: f64,
}

/// What happened during one slice. `hosts[i]` is `None` while host `i` is down.
#[derive(Debug, Clone, PartialEq)]
pub struct SliceRecord {
    pub slice_start: i64,
    pub allocations: Vec<VmAllocation>,
    pub hosts: Vec<Option<HostSlice>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub report: ScenarioReport,
    pub placements: PlacementMap,
    pub start: i64,
    pub end: i64,
}

pub struct Simulation<'a> {
    cfg: SimulationConfig<'a>,
    hosts: Vec<HostState>,
    host_index: BTreeMap<String, usize>,
    vms: Vec<VmState<'a>>,
    submit_order: Vec<usize>,
    next_submit: usize,
    queue: VecDeque<usize>,
    /// Placed and not finished.
    active: usize,
    max_host_memory: u64,
    start: i64,
    now: i64,
    slices: u64,
    metrics: MetricsAccumulator,
    placement_rng: SimRng,
    interference_rng: SimRng,
    interference: InterferenceModel,
    failures: Option<FailureSource<'a>>,
    placements: PlacementMap,
}

impl<'a> Simulation<'a> {
    pub fn new(cfg: SimulationConfig<'a>, seed: u64) -> Result<Self> {
        cfg.topology.validate()?;
        for g in &cfg.phenomena.interference {
            g.validate()?;
        }
        if let Some((a, b)) = cfg.options.window {
            if a >= b {
                return Err(Error::Config(format!("empty time range [{a}, {b})")));
            }
        }

        let mut hosts = Vec::with_capacity(cfg.topology.machine_count());
        for (ci, cluster) in cfg.topology.clusters.iter().enumerate() {
            for m in &cluster.machines {
                hosts.push(HostState::new(m.clone(), ci));
            }
        }
        let host_index = hosts.iter().enumerate().map(|(i, h)| (h.spec.host_id.clone(), i)).collect();
        let max_host_memory = hosts.iter().map(|h| h.spec.memory_mb).max().unwrap_or(0);

        let vms: Vec<VmState<'a>> = cfg
            .workload
            .vms()
            .iter()
            .map(|spec| VmState { spec, phase: Phase::Pending, progress: 0, placed_on: None, ever_failed: false })
            .collect();
        let mut submit_order: Vec<usize> = (0..vms.len()).collect();
        // Workload members are id-sorted, so a stable sort keeps id order within a timestamp.
        submit_order.sort_by_key(|&i| vms[i].spec.submit_time);

        let start = submit_order.first().map_or(0, |&i| slice_floor(vms[i].spec.submit_time));
        let failures = match &cfg.phenomena.failures {
            Some(params) => {
                let sampler = FailureSampler::new(params, cfg.topology, start, rng::stream(seed, Stream::Failures))?;
                let source: Box<dyn Iterator<Item = FailureEvent> + Send + 'a> = Box::new(sampler);
                Some(source.peekable())
            }
            None => None,
        };

        Ok(Simulation {
            hosts,
            host_index,
            vms,
            submit_order,
            next_submit: 0,
            queue: VecDeque::new(),
            active: 0,
            max_host_memory,
            start,
            now: start,
            slices: 0,
            metrics: MetricsAccumulator::new(cfg.options.power),
            placement_rng: rng::stream(seed, Stream::Placement),
            interference_rng: rng::stream(seed, Stream::Interference),
            interference: InterferenceModel::new(cfg.phenomena.interference.clone()),
            failures,
            placements: PlacementMap::default(),
            cfg,
        })
    }

    /// Replaces the sampled failure process with a fixed list of events, ordered by start.
    pub fn with_failure_events(mut self, mut events: Vec<FailureEvent>) -> Result<Self> {
        events.sort_by_key(|e| e.start);
        for e in &events {
            for victim in &e.victim_hosts {
                if !self.host_index.contains_key(victim) {
                    return Err(Error::Argument(format!("failure event names unknown host `{victim}`")));
                }
            }
        }
        let source: Box<dyn Iterator<Item = FailureEvent> + Send + 'a> = Box::new(events.into_iter());
        self.failures = Some(source.peekable());
        Ok(self)
    }

    pub fn now(&self) -> i64 {
        self.now
    }

    pub fn hosts(&self) -> &[HostState] {
        &self.hosts
    }

    pub fn vms(&self) -> &[VmState<'a>] {
        &self.vms
    }

    pub fn queued(&self) -> usize {
        self.queue.len()
    }

    pub fn is_done(&self) -> bool {
        self.next_submit == self.submit_order.len()
            && self.queue.is_empty()
            && self.active == 0
            && self.cfg.options.end_time.is_none_or(|end| self.now >= end)
    }

    fn in_window(&self, t: i64) -> bool {
        self.cfg.options.window.is_none_or(|(a, b)| t >= a && t < b)
    }

    /// Processes one slice boundary and the slice that follows it. Returns `None` once all work
    /// is done.
    pub fn step(&mut self) -> Result<Option<SliceRecord>> {
        self.advance(true)
    }

    pub fn run(mut self) -> Result<RunOutcome> {
        while self.advance(false)?.is_some() {}
        Ok(RunOutcome {
            report: self.metrics.finish(),
            placements: self.placements,
            start: self.start,
            end: self.now,
        })
    }

    pub fn report(&self) -> ScenarioReport {
        self.metrics.finish()
    }

    fn advance(&mut self, record: bool) -> Result<Option<SliceRecord>> {
        if self.is_done() {
            return Ok(None);
        }
        if self.slices >= self.cfg.options.max_slices {
            return Err(Error::HorizonExceeded(self.cfg.options.max_slices));
        }
        let t = self.now;
        let in_window = self.in_window(t);
        self.apply_recoveries(t);
        self.apply_failures(t, in_window);
        self.submit(t, in_window);
        self.schedule(in_window);
        if in_window {
            self.metrics.queue_length(self.queue.len());
        }
        let slice = self.step_slice(t, in_window, record);
        self.now += SLICE_SECS;
        self.slices += 1;
        Ok(Some(slice))
    }

    fn apply_recoveries(&mut self, t: i64) {
        for host in &mut self.hosts {
            if host.failed_until.is_some_and(|until| until <= t) {
                host.failed_until = None;
                for &v in &host.resident_vms {
                    if self.vms[v].phase == Phase::Failed {
                        self.vms[v].phase = Phase::Running;
                    }
                }
                assert!(host.memory_used_mb <= host.spec.memory_mb);
            }
        }
    }

    fn apply_failures(&mut self, t: i64, in_window: bool) {
        let Some(failures) = self.failures.as_mut() else { return };
        while failures.peek().is_some_and(|e| slice_ceil(e.start) <= t) {
            let event = failures.next().expect("peeked");
            let until = slice_ceil(event.end());
            if until <= t {
                continue;
            }
            for victim in &event.victim_hosts {
                let h = self.host_index[victim];
                let host = &mut self.hosts[h];
                let newly_failed = host.failed_until.is_none();
                host.failed_until = Some(host.failed_until.map_or(until, |u| u.max(until)));
                if !newly_failed {
                    continue;
                }
                for &v in &host.resident_vms {
                    let vm = &mut self.vms[v];
                    vm.phase = Phase::Failed;
                    if !vm.ever_failed {
                        vm.ever_failed = true;
                        if in_window {
                            self.metrics.vm_failed();
                        }
                    }
                }
            }
        }
    }

    fn submit(&mut self, t: i64, in_window: bool) {
        while let Some(&v) = self.submit_order.get(self.next_submit) {
            if self.vms[v].spec.submit_time > t {
                break;
            }
            self.vms[v].phase = Phase::Queued;
            self.queue.push_back(v);
            self.next_submit += 1;
            if in_window {
                self.metrics.vm_submitted();
            }
        }
    }

    fn schedule(&mut self, in_window: bool) {
        while let Some(&v) = self.queue.front() {
            let spec = self.vms[v].spec;
            if spec.memory_mb > self.max_host_memory {
                log::warn!("VM {} needs {} MB, more than any host has; dropping it", spec.vm_id, spec.memory_mb);
                self.queue.pop_front();
                self.vms[v].phase = Phase::Rejected;
                continue;
            }
            let placement = place(
                self.cfg.policy,
                &mut self.hosts,
                v,
                spec,
                self.cfg.placement_map,
                &self.host_index,
                &mut self.placement_rng,
            );
            match placement {
                Placement::Host(h) => {
                    self.queue.pop_front();
                    let vm = &mut self.vms[v];
                    vm.phase = Phase::Running;
                    vm.placed_on = Some(h);
                    vm.progress = 0;
                    self.active += 1;
                    self.placements.insert(spec.vm_id.clone(), self.hosts[h].spec.host_id.clone());
                    if spec.slice_usages.is_empty() {
                        self.finish_vm(v, in_window);
                    }
                }
                Placement::Queued => break,
            }
        }
    }

    fn finish_vm(&mut self, v: usize, in_window: bool) {
        let vm = &mut self.vms[v];
        let h = vm.placed_on.expect("finished VM was placed");
        vm.phase = Phase::Finished;
        let host = &mut self.hosts[h];
        let pos = host.resident_vms.iter().position(|&r| r == v).expect("resident");
        host.resident_vms.remove(pos);
        host.memory_used_mb -= vm.spec.memory_mb;
        self.active -= 1;
        if in_window {
            self.metrics.vm_finished();
        }
    }

    fn step_slice(&mut self, t: i64, in_window: bool, record: bool) -> SliceRecord {
        let mut slice = SliceRecord { slice_start: t, allocations: Vec::new(), hosts: Vec::new() };
        let mut finished = Vec::new();
        let skip_failed = self.cfg.phenomena.failure_mode == FailureMode::Skip;

        for h in 0..self.hosts.len() {
            let host = &self.hosts[h];
            if host.is_failed() {
                if in_window {
                    self.metrics.failed_host(host.resident_vms.len());
                }
                if skip_failed {
                    for &v in &host.resident_vms {
                        let vm = &mut self.vms[v];
                        vm.progress += 1;
                        if vm.progress == vm.spec.slice_usages.len() {
                            finished.push(v);
                        }
                    }
                }
                if record {
                    slice.hosts.push(None);
                }
                continue;
            }

            let residents = &host.resident_vms;
            let requests: Vec<f64> = residents
                .iter()
                .map(|&v| self.vms[v].spec.slice_usages[self.vms[v].progress].usage_mhz)
                .collect();
            let capacity = host.spec.capacity_mhz();
            let requested: f64 = requests.iter().sum();
            let effective = if self.interference.is_empty() || residents.len() < 2 {
                requests.clone()
            } else {
                let pairs: Vec<(&str, f64)> = residents
                    .iter()
                    .zip(&requests)
                    .map(|(&v, &r)| (self.vms[v].spec.vm_id.as_str(), r))
                    .collect();
                let load = if capacity > 0.0 { requested / capacity } else { 1.0 };
                self.interference.apply(&pairs, load, &mut self.interference_rng).effective_mhz
            };
            let granted = water_fill(capacity, &effective);

            let host_slice = HostSlice {
                capacity_mhz: capacity,
                requested_mhz: requested,
                effective_mhz: effective.iter().sum(),
                granted_mhz: granted.iter().sum(),
                overcommitted_mhz: requests.iter().zip(&granted).map(|(r, g)| r - g).sum(),
                resident_vms: residents.len(),
            };
            debug_assert!(host_slice.granted_mhz <= capacity * (1.0 + 1e-12));
            if in_window {
                self.metrics.live_host(&host_slice);
            }
            if record {
                slice.hosts.push(Some(host_slice));
                for (i, &v) in residents.iter().enumerate() {
                    slice.allocations.push(VmAllocation {
                        vm: v,
                        host: h,
                        requested_mhz: requests[i],
                        effective_mhz: effective[i],
                        granted_mhz: granted[i],
                    });
                }
            }
            for &v in residents {
                let vm = &mut self.vms[v];
                vm.progress += 1;
                if vm.progress == vm.spec.slice_usages.len() {
                    finished.push(v);
                }
            }
        }

        for v in finished {
            self.finish_vm(v, in_window);
        }
        slice
    }
}

/// Runs one scenario to completion.
pub fn simulate(cfg: SimulationConfig<'_>, seed: u64) -> Result<RunOutcome> {
    Simulation::new(cfg, seed)?.run()
}
