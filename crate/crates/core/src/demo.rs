//! A small, fully synthetic portfolio that exercises every input format.
//!
//! Everything is generated from a fixed seed, so [`write_demo`] always produces the same bytes.

use std::f64::consts::TAU;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::engine::{RunOptions, Simulation, SimulationConfig};
use crate::error::{Error, Result};
use crate::phenomena::{
    colocation_records, mine_interference_groups, save_interference_groups, FailureMode, PhenomenaConfig,
    PhenomenaSwitch,
};
use crate::portfolio::{Comparator, Portfolio, PublicMix, Scenario, Slo, Targets, TopologyRef, TraceFormat, WorkloadRef};
use crate::scheduler::{PolicyBase, PolicyId};
use crate::topology::{
    derive_candidate, CandidateDimensions, Cluster, Direction, MachineSpec, Mode, Quality, ScalingConstants, Topology,
    Variance,
};
use crate::trace::{write_canonical_trace, write_placement_file, PlacementRecord, VmSpec, Workload, SLICE_SECS};

const SEED: u64 = 0x5eed_cafe;
/// Two days.
pub const DEMO_SLICES: usize = 576;
const PRIVATE_VMS: usize = 100;
const PUBLIC_VMS: usize = 40;
const SLICES_PER_DAY: f64 = 288.0;

pub const PORTFOLIO_FILE: &str = "portfolio.json";

fn cluster(id: &str, machines: usize, cores: u32, clock_mhz: f64, memory_gb: u64) -> Cluster {
    Cluster {
        cluster_id: id.to_owned(),
        machines: (0..machines)
            .map(|i| MachineSpec {
                host_id: format!("{id}-{i:02}"),
                core_count: cores,
                clock_mhz,
                memory_mb: memory_gb * 1024,
            })
            .collect(),
    }
}

/// Four clusters; the two closest to the average machine shape (A and D) are the ones modified by
/// candidates.
pub fn demo_topology() -> Topology {
    Topology {
        name: "demo".into(),
        clusters: vec![
            cluster("A", 8, 32, 2600.0, 256),
            cluster("B", 16, 16, 2400.0, 128),
            cluster("C", 4, 64, 2900.0, 512),
            cluster("D", 12, 24, 2200.0, 192),
        ],
    }
}

struct Shape {
    start: usize,
    len: usize,
    level: f64,
    phase: f64,
}

fn shape(rng: &mut ChaCha8Rng, first: bool) -> Shape {
    if first {
        // One VM spans the whole trace so that both traces share their end time.
        return Shape { start: 0, len: DEMO_SLICES, level: 0.5, phase: 0.0 };
    }
    let start = rng.random_range(0..DEMO_SLICES * 3 / 4);
    let len = rng.random_range(DEMO_SLICES / 8..=DEMO_SLICES - start);
    Shape { start, len, level: rng.random_range(0.25..0.9), phase: rng.random_range(0.0..TAU) }
}

/// Utilization in `[0, 1]` for slice `k` of a VM.
fn utilization(rng: &mut ChaCha8Rng, s: &Shape, k: usize) -> f64 {
    let day = TAU * (s.start + k) as f64 / SLICES_PER_DAY;
    let noise = rng.random_range(-0.05..0.05);
    (s.level * (1.0 + 0.3 * (day + s.phase).sin()) + noise).clamp(0.0, 1.0)
}

pub fn demo_private_trace() -> Workload {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let vms = (0..PRIVATE_VMS)
        .map(|i| {
            let cores = [4, 8, 16, 32][rng.random_range(0..4)];
            let memory_mb = u64::from(cores) * [2048, 4096][rng.random_range(0..2)];
            let s = shape(&mut rng, i == 0);
            let usages: Vec<f64> = (0..s.len)
                .map(|k| (utilization(&mut rng, &s, k) * f64::from(cores) * 2400.0).round())
                .collect();
            VmSpec::from_series(format!("vm-{i:03}"), s.start as i64 * SLICE_SECS, cores, memory_mb, usages)
        })
        .collect();
    Workload::new("demo-private", vms).expect("unique ids")
}

/// `vmtable.csv` and `vm_cpu_readings-file-1-of-1.csv` contents of the public fixture.
pub fn demo_public_trace_files() -> (String, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED ^ 0xa2);
    let mut table = String::new();
    let mut readings = String::new();
    for i in 0..PUBLIC_VMS {
        let (cores, cores_field, memory_field) = match rng.random_range(0..5) {
            0 => (2, "2", "4"),
            1 => (4, "4", "8"),
            2 => (4, "4", "3.5"),
            3 => (8, "8", "32"),
            _ => (24, ">24", ">64"),
        };
        let s = shape(&mut rng, i == 0);
        let id = format!("az-{i:03}");
        let created = s.start as i64 * SLICE_SECS;
        let deleted = created + s.len as i64 * SLICE_SECS;
        let mut sum = 0.0;
        let mut max: f64 = 0.0;
        for k in 0..s.len {
            let t = created + k as i64 * SLICE_SECS;
            let u = (utilization(&mut rng, &s, k) * f64::from(cores) * 100.0).round() / 100.0;
            sum += u;
            max = max.max(u);
            // The first VM reports twice per slice, exercising per-slice averaging.
            if i == 0 {
                let lo = (u - 0.1).max(0.0);
                let hi = (u + 0.1).min(f64::from(cores));
                writeln!(readings, "{},{id},{lo:.2},{lo:.2},{lo:.2}", t + 13).unwrap();
                writeln!(readings, "{},{id},{hi:.2},{hi:.2},{hi:.2}", t + 163).unwrap();
            } else {
                writeln!(readings, "{},{id},{u:.2},{u:.2},{u:.2}", t + 73).unwrap();
            }
        }
        let mean = sum / s.len as f64;
        let category = if s.level > 0.6 { "Interactive" } else { "Delay-insensitive" };
        writeln!(
            table,
            "{id},sub-{},dep-{},{created},{deleted},{max:.2},{mean:.2},{max:.2},{category},{cores_field},{memory_field}",
            i % 7,
            i % 11
        )
        .unwrap();
    }
    (table, readings)
}

/// Runs the private trace on the base topology under the memory policy and records where every VM
/// ran and which fraction of its demand went ungranted.
pub fn demo_placements(topology: &Topology, workload: &Workload) -> Result<Vec<PlacementRecord>> {
    let phenomena = PhenomenaConfig::none();
    let cfg = SimulationConfig {
        topology,
        workload,
        policy: PolicyId::worst_fit(PolicyBase::Mem),
        placement_map: None,
        phenomena: &phenomena,
        options: RunOptions::default(),
    };
    let mut sim = Simulation::new(cfg, 0)?;
    let mut requested = vec![0.0; workload.len()];
    let mut granted = vec![0.0; workload.len()];
    while let Some(slice) = sim.step()? {
        for a in slice.allocations {
            requested[a.vm] += a.requested_mhz;
            granted[a.vm] += a.granted_mhz;
        }
    }
    let hosts = sim.hosts();
    Ok(sim
        .vms()
        .iter()
        .enumerate()
        .filter_map(|(i, vm)| {
            let host = vm.placed_on?;
            let ready = if requested[i] > 0.0 { (requested[i] - granted[i]) / requested[i] } else { 0.0 };
            Some(PlacementRecord {
                vm_id: vm.spec.vm_id.clone(),
                host_id: hosts[host].spec.host_id.clone(),
                cpu_ready_fraction: Some((ready * 1e4).round() / 1e4),
            })
        })
        .collect())
}

fn dims(direction: Direction) -> CandidateDimensions {
    CandidateDimensions { mode: Mode::Replace, quality: Quality::Volume, direction, variance: Variance::Homogeneous }
}

fn scenario(id: &str, topology: &str) -> Scenario {
    Scenario {
        scenario_id: id.to_owned(),
        topology: TopologyRef::Path(PathBuf::from(topology)),
        workload: WorkloadRef {
            trace: "traces/private".into(),
            format: TraceFormat::Canonical,
            fraction: 0.9,
            public: Some(PublicMix {
                trace: "traces/azure".into(),
                format: TraceFormat::Azure,
                fraction: 0.2,
                presample_fraction: Some(0.5),
            }),
            duration_s: Some(DEMO_SLICES as i64 * SLICE_SECS),
            assumed_clock_mhz: None,
        },
        policy: PolicyId::worst_fit(PolicyBase::ActiveServers),
        placement: None,
        phenomena: PhenomenaSwitch::All,
        failure_model: None,
        failure_mode: FailureMode::Skip,
        interference: Some("interference.json".into()),
        end_time: None,
        power: None,
        max_slices: None,
    }
}

pub fn demo_portfolio() -> Portfolio {
    let candidate = |d: Direction| {
        let label = dims(d).label();
        scenario(&label, &format!("candidates/demo-{label}.json"))
    };
    Portfolio {
        name: Some("demo".into()),
        base: scenario("base", "topology.json"),
        candidates: vec![candidate(Direction::Vertical), candidate(Direction::Horizontal)],
        targets: Targets {
            selected_metrics: [
                "total_overcommitted_mflop",
                "total_interfered_mflop",
                "total_power_wh",
                "total_failed_vm_slices",
                "max_vms_queued",
            ]
            .map(String::from)
            .to_vec(),
            slos: vec![Slo {
                metric: "max_vms_queued".into(),
                comparator: Comparator::AtMost,
                threshold: 0.0,
                units: "VMs".into(),
            }],
            time_range: None,
        },
        repetitions: 32,
    }
}

fn write(path: &Path, body: impl AsRef<[u8]>) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, body).map_err(|e| Error::io(path, e))
}

fn json<T: serde::Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serializable");
    s.push('\n');
    s
}

/// Writes the demo portfolio and all of its inputs into `dir`.
pub fn write_demo(dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    let topology = demo_topology();
    write(&dir.join("topology.json"), json(&topology))?;
    let constants = ScalingConstants::default();
    for d in [Direction::Vertical, Direction::Horizontal] {
        let candidate = derive_candidate(&topology, dims(d), &constants, 0)?;
        write(&dir.join(format!("candidates/{}.json", candidate.name)), json(&candidate))?;
    }

    let private = demo_private_trace();
    write_canonical_trace(&private, dir.join("traces/private"))?;
    let (table, readings) = demo_public_trace_files();
    write(&dir.join("traces/azure/vmtable.csv"), table)?;
    write(&dir.join("traces/azure/vm_cpu_readings-file-1-of-1.csv"), readings)?;

    let placements = demo_placements(&topology, &private)?;
    write_placement_file(&placements, dir.join("placement.csv"))?;
    let records = colocation_records(&private, &topology, &placements)?;
    let groups: Vec<_> =
        mine_interference_groups(&records, 12)?.into_iter().filter(|g| g.score < 1.0).collect();
    save_interference_groups(&groups, dir.join("interference.json"))?;

    write(&dir.join(PORTFOLIO_FILE), json(&demo_portfolio()))
}
