//! Acceptance criteria 1-10. Runs without the libtest harness and prints one line per criterion.

use std::collections::BTreeSet;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use capelin_core::demo::demo_topology;
use capelin_core::engine::{fair_share, simulate, RunOptions, SimulationConfig};
use capelin_core::metrics::{host_power_w, PowerModel};
use capelin_core::phenomena::{FailureMode, FailureModelParams, FailureSampler, InterferenceGroup, PhenomenaConfig};
use capelin_core::portfolio::{
    load_portfolio, resolve, results_csv, run_portfolio, Portfolio, ResolveContext, Scenario, Targets, TopologyRef,
    TraceFormat, WorkloadRef,
};
use capelin_core::scheduler::{PlacementMap, PolicyBase, PolicyId};
use capelin_core::topology::{
    derive_candidate, enumerate_candidates, CandidateDimensions, Cluster, Direction, MachineSpec, Mode, Quality,
    ScalingConstants, Topology, Variance,
};
use capelin_core::trace::{load_private_trace, sample_trace, write_canonical_trace, VmSpec, Workload, SLICE_SECS};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    a == b || (a - b).abs() <= tol * a.abs().max(b.abs())
}

fn demo_dir() -> std::path::PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../demo")
}

const POLICIES: [&str; 8] = ["mem", "mem-inv", "core-mem", "core-mem-inv", "active-servers", "active-servers-inv", "random", "replay"];

fn random_topology(rng: &mut ChaCha8Rng, max_hosts: usize) -> Topology {
    let hosts = rng.random_range(1..=max_hosts);
    let machines = (0..hosts)
        .map(|i| MachineSpec {
            host_id: format!("h{i}"),
            core_count: rng.random_range(1..=8),
            clock_mhz: rng.random_range(1000.0..3500.0),
            memory_mb: rng.random_range(2..=16) * 1024,
        })
        .collect();
    Topology { name: "random".into(), clusters: vec![Cluster { cluster_id: "c".into(), machines }] }
}

fn random_workload(rng: &mut ChaCha8Rng, max_vms: usize, max_slices: usize) -> Workload {
    let n = rng.random_range(0..=max_vms);
    let vms = (0..n)
        .map(|i| {
            let len = rng.random_range(0..=max_slices);
            let submit = rng.random_range(0..(max_slices as i64)) * SLICE_SECS / 2;
            let peak: f64 = rng.random_range(0.0..6000.0);
            let usage: Vec<f64> = (0..len)
                .map(|_| if rng.random_bool(0.1) { 0.0 } else { rng.random_range(0.0..peak.max(1.0)) })
                .collect();
            VmSpec::from_series(format!("vm{i:02}"), submit, rng.random_range(1..=4), rng.random_range(1..=8) * 1024, usage)
        })
        .collect();
    Workload::new("random", vms).unwrap()
}

/// 1. requested = granted + overcommitted and interfered <= overcommitted on random scenarios.
fn conservation() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for case in 0..200 {
        let topology = random_topology(&mut rng, 4);
        let workload = random_workload(&mut rng, 20, 100);
        let policy: PolicyId = POLICIES[rng.random_range(0..POLICIES.len())].parse().unwrap();
        let placement_map: PlacementMap = workload
            .vms()
            .iter()
            .filter_map(|vm| {
                let host = rng.random_range(0..topology.machine_count());
                rng.random_bool(0.8).then(|| (vm.vm_id.clone(), format!("h{host}")))
            })
            .collect::<PlacementMap>();
        let mut phenomena = PhenomenaConfig::none();
        if rng.random_bool(0.5) {
            // Frequent failures with a light duration tail; the default tail yields multi-year outages.
            phenomena.failures = Some(FailureModelParams {
                interarrival_scale_h: 2.0,
                duration_shape_min: 3.0,
                ..FailureModelParams::default()
            });
            phenomena.failure_mode = if rng.random_bool(0.5) { FailureMode::Skip } else { FailureMode::Pause };
        }
        if rng.random_bool(0.5) && workload.len() >= 2 {
            for _ in 0..rng.random_range(1..4) {
                let mut members = BTreeSet::new();
                while members.len() < 2 {
                    members.insert(workload.vms()[rng.random_range(0..workload.len())].vm_id.clone());
                }
                phenomena.interference.push(InterferenceGroup {
                    members,
                    score: rng.random_range(0.0..=1.0),
                    load_threshold: rng.random_range(0.0..=1.0),
                });
            }
        }
        let cfg = SimulationConfig {
            topology: &topology,
            workload: &workload,
            policy,
            placement_map: Some(&placement_map),
            phenomena: &phenomena,
            options: RunOptions::default(),
        };
        let r = simulate(cfg, case).map_err(|e| format!("case {case}: {e}"))?.report;
        let sum = r.total_granted_mflop + r.total_overcommitted_mflop;
        ensure(rel_close(r.total_requested_mflop, sum, 1e-9), || {
            format!("case {case}: requested {} != granted + overcommitted {sum}", r.total_requested_mflop)
        })?;
        ensure(r.total_interfered_mflop <= r.total_overcommitted_mflop * (1.0 + 1e-9) + 1e-6, || {
            format!("case {case}: interfered {} > overcommitted {}", r.total_interfered_mflop, r.total_overcommitted_mflop)
        })?;
    }
    let elapsed = start.elapsed();
    ensure(elapsed < Duration::from_secs(30), || format!("took {elapsed:?}"))?;
    Ok(format!("200 scenarios in {elapsed:.2?}"))
}

/// Round-based water filling: grant every request not above the equal share of what is left.
fn water_fill_oracle(capacity: f64, requests: &[f64]) -> Vec<f64> {
    let mut grants = vec![0.0; requests.len()];
    let mut open: Vec<usize> = (0..requests.len()).collect();
    let mut left = capacity;
    while !open.is_empty() {
        let share = left / open.len() as f64;
        let (done, rest): (Vec<usize>, Vec<usize>) = open.iter().partition(|&&i| requests[i] <= share);
        if done.is_empty() {
            for &i in &rest {
                grants[i] = share;
            }
            break;
        }
        for &i in &done {
            grants[i] = requests[i];
            left -= requests[i];
        }
        open = rest;
    }
    grants
}

/// 2. fair_share against the oracle and under permutation.
fn fair_share_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for case in 0..10_000 {
        let n = rng.random_range(0..=24);
        let mut requests: Vec<f64> = (0..n)
            .map(|_| match rng.random_range(0..10) {
                0 => 0.0,
                1 => 1000.0,
                _ => rng.random_range(0.0..5000.0),
            })
            .collect();
        let demand: f64 = requests.iter().sum();
        let capacity = match rng.random_range(0..6) {
            0 => 0.0,
            1 => demand,
            2 => demand * 2.0 + 1.0,
            _ => rng.random_range(0.0..demand.max(1.0)),
        };
        let got = fair_share(capacity, &requests).map_err(|e| format!("case {case}: {e}"))?;
        let want = water_fill_oracle(capacity, &requests);
        for (i, (g, w)) in got.iter().zip(&want).enumerate() {
            ensure(rel_close(*g, *w, 1e-12), || format!("case {case} vm {i}: {g} vs oracle {w}"))?;
        }

        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        let permuted: Vec<f64> = order.iter().map(|&i| requests[i]).collect();
        let got_p = fair_share(capacity, &permuted).unwrap();
        for (k, &i) in order.iter().enumerate() {
            ensure(rel_close(got_p[k], got[i], 1e-12), || format!("case {case}: permutation changed grant of {i}"))?;
        }
        requests.clear();
    }
    Ok("10000 instances".into())
}

/// Algorithm 1 from scratch: uniform draws without replacement from the id-sorted list, stop at the
/// first VM that would exceed the load budget.
fn sample_oracle(vms: &[VmSpec], fraction: f64, seed: u64) -> BTreeSet<String> {
    let total: f64 = vms.iter().map(VmSpec::total_load_mflop).sum();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    let mut pool: Vec<&VmSpec> = vms.iter().collect();
    pool.sort_by(|a, b| a.vm_id.cmp(&b.vm_id));
    let mut picked = BTreeSet::new();
    let mut load = 0.0;
    while !pool.is_empty() {
        let i = rng.random_range(0..pool.len() as u64) as usize;
        let vm = pool.swap_remove(i);
        if load + vm.total_load_mflop() > fraction * total {
            break;
        }
        load += vm.total_load_mflop();
        picked.insert(vm.vm_id.clone());
    }
    picked
}

/// 3. sample_trace against the oracle, plus the load bound.
fn sampling_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut checked = 0;
    for case in 0..1000 {
        let n = rng.random_range(1..=12);
        // Integral MHz keeps every load sum exact, so the stopping rule has no rounding ambiguity.
        let vms: Vec<VmSpec> = (0..n)
            .map(|i| {
                let len = rng.random_range(1..=6);
                VmSpec::from_series(format!("v{i:02}"), 0, 1, 1, (0..len).map(|_| f64::from(rng.random_range(0..500u32))))
            })
            .collect();
        let workload = Workload::new("w", vms.clone()).unwrap();
        let total = workload.total_load_mflop();
        if total == 0.0 {
            continue;
        }
        let fraction = match rng.random_range(0..10) {
            0 => 0.0,
            1 => 1.0,
            _ => rng.random_range(0.0..1.0),
        };
        let seed = rng.random_range(0..1_000_000u64);
        let sample = sample_trace(&workload, fraction, total, seed).map_err(|e| format!("case {case}: {e}"))?;
        let ids: BTreeSet<String> = sample.vms().iter().map(|v| v.vm_id.clone()).collect();
        let want = sample_oracle(&vms, fraction, seed);
        ensure(ids == want, || format!("case {case}: {ids:?} vs oracle {want:?}"))?;
        ensure(sample.total_load_mflop() <= fraction * total, || {
            format!("case {case}: load {} above {}", sample.total_load_mflop(), fraction * total)
        })?;
        checked += 1;
    }
    Ok(format!("{checked} triples"))
}

/// 4. Demo portfolio with 1 and 8 threads gives byte-identical results, twice.
fn determinism() -> Outcome {
    let start = Instant::now();
    let resolved = load_portfolio(demo_dir().join("portfolio.json")).map_err(|e| e.to_string())?;
    ensure(resolved.scenarios.len() == 3 && resolved.repetitions() == 32, || "demo is not 3 x 32".into())?;
    let a = results_csv(&run_portfolio(&resolved, 1, None).map_err(|e| e.to_string())?);
    let b = results_csv(&run_portfolio(&resolved, 8, None).map_err(|e| e.to_string())?);
    let c = results_csv(&run_portfolio(&resolved, 8, None).map_err(|e| e.to_string())?);
    ensure(a == b, || "parallelism 1 and 8 differ".into())?;
    ensure(b == c, || "repeated run differs".into())?;
    ensure(a.lines().count() == 1 + 96, || "wrong row count".into())?;
    let elapsed = start.elapsed();
    ensure(elapsed < Duration::from_secs(300), || format!("took {elapsed:?}"))?;
    Ok(format!("3 x 32 runs, three passes in {elapsed:.2?}"))
}

/// 5. Power endpoints and the idle datacenter.
fn power_model() -> Outcome {
    let m = PowerModel::default();
    for (u, w) in [(0.0, 200.0), (0.5, 275.0), (1.0, 350.0)] {
        ensure(host_power_w(&m, u) == w, || format!("P({u}) = {} != {w}", host_power_w(&m, u)))?;
    }
    let topology = demo_topology();
    let hosts = topology.machine_count() as u64;
    let horizon_s: i64 = 7 * 86_400;
    let workload = Workload::empty("empty");
    let phenomena = PhenomenaConfig::none();
    let cfg = SimulationConfig {
        topology: &topology,
        workload: &workload,
        policy: PolicyId::worst_fit(PolicyBase::Mem),
        placement_map: None,
        phenomena: &phenomena,
        options: RunOptions { end_time: Some(horizon_s), ..RunOptions::default() },
    };
    let got = simulate(cfg, 0).map_err(|e| e.to_string())?.report.total_power_wh;
    let want = (hosts * 200 * horizon_s as u64) as f64 / 3600.0;
    ensure(got == want, || format!("idle energy {got} Wh != {want} Wh"))?;
    Ok(format!("{hosts} idle hosts for 7 days = {want} Wh"))
}

/// 6. Default failure model: two co-located victims, at least 15 minutes.
fn failure_model() -> Outcome {
    let topology = demo_topology();
    let rng = capelin_core::rng::stream(6, capelin_core::rng::Stream::Failures);
    let events: Vec<_> = FailureSampler::new(&FailureModelParams::default(), &topology, 0, rng)
        .map_err(|e| e.to_string())?
        .take(10_000)
        .collect();
    ensure(events.len() == 10_000, || "sampler ended early".into())?;
    for (i, e) in events.iter().enumerate() {
        ensure(e.victim_hosts.len() == 2, || format!("event {i} has {} victims", e.victim_hosts.len()))?;
        ensure(e.victim_hosts[0] != e.victim_hosts[1], || format!("event {i} repeats a victim"))?;
        ensure(e.duration_s >= 900, || format!("event {i} lasts {} s", e.duration_s))?;
        let cluster = topology.clusters.iter().find(|c| c.cluster_id == e.cluster_id).ok_or("unknown cluster")?;
        ensure(e.victim_hosts.iter().all(|h| cluster.machines.iter().any(|m| &m.host_id == h)), || {
            format!("event {i} victims outside cluster {}", e.cluster_id)
        })?;
    }
    Ok("10000 events".into())
}

/// 7. Replaying recorded placements reproduces placements and metrics.
fn replay_round_trip() -> Outcome {
    let topology = demo_topology();
    let workload = load_private_trace(demo_dir().join("traces/private")).map_err(|e| e.to_string())?;
    let phenomena = PhenomenaConfig::none();
    let mut cfg = SimulationConfig {
        topology: &topology,
        workload: &workload,
        policy: PolicyId::worst_fit(PolicyBase::ActiveServers),
        placement_map: None,
        phenomena: &phenomena,
        options: RunOptions::default(),
    };
    let first = simulate(cfg, 0).map_err(|e| e.to_string())?;
    let map = first.placements.clone();
    cfg.policy = PolicyId::worst_fit(PolicyBase::Replay);
    cfg.placement_map = Some(&map);
    let second = simulate(cfg, 0).map_err(|e| e.to_string())?;
    ensure(first.placements == second.placements, || "placements differ".into())?;
    let (a, b) = (&first.report, &second.report);
    ensure(
        a.total_requested_mflop == b.total_requested_mflop
            && a.total_granted_mflop == b.total_granted_mflop
            && a.total_overcommitted_mflop == b.total_overcommitted_mflop
            && a.mean_cpu_usage_mhz == b.mean_cpu_usage_mhz
            && a.mean_cpu_demand_mhz == b.mean_cpu_demand_mhz
            && a.total_power_wh == b.total_power_wh,
        || format!("metrics differ: {a:?} vs {b:?}"),
    )?;
    Ok(format!("{} VMs placed identically", map.len()))
}

/// 8. Twelve candidates with core floor, memory conservation, and the expected machine counts.
fn candidate_generation() -> Outcome {
    let base = demo_topology();
    let constants = ScalingConstants::default();
    let candidates = enumerate_candidates(&base, &constants, 0).map_err(|e| e.to_string())?;
    ensure(candidates.len() == 12, || format!("{} candidates", candidates.len()))?;
    let labels: BTreeSet<String> = candidates.iter().map(|(d, _)| d.label()).collect();
    ensure(labels.len() == 12, || "duplicate candidate labels".into())?;

    for (dims, topo) in &candidates {
        if dims.quality != Quality::Volume {
            continue;
        }
        for original in &base.clusters {
            let rebuilt_id = match dims.mode {
                Mode::Replace => original.cluster_id.clone(),
                Mode::Expand => format!("{}-x", original.cluster_id),
            };
            let Some(rebuilt) = topo.clusters.iter().find(|c| c.cluster_id == rebuilt_id) else { continue };
            if rebuilt == original {
                continue;
            }
            let per = u64::from(rebuilt.machines[0].core_count);
            let (old, new) = (original.total_cores(), rebuilt.total_cores());
            ensure(new >= old && new < old + per, || format!("{}: cores {old} -> {new}", dims.label()))?;
            let (old_m, new_m) = (original.total_memory_mb(), rebuilt.total_memory_mb());
            let count = rebuilt.machines.len() as u64;
            ensure(new_m >= old_m && new_m < old_m + count, || format!("{}: memory {old_m} -> {new_m}", dims.label()))?;
        }
    }

    let count_for = |direction| {
        let dims = CandidateDimensions { mode: Mode::Replace, quality: Quality::Volume, direction, variance: Variance::Homogeneous };
        let topo = derive_candidate(&base, dims, &constants, 0).unwrap();
        topo.clusters.iter().find(|c| c.cluster_id == "A").unwrap().machines.len()
    };
    let (hor, ver) = (count_for(Direction::Horizontal), count_for(Direction::Vertical));
    ensure(hor == 256usize.div_ceil(28) && hor == 10, || format!("horizontal count {hor}"))?;
    ensure(ver == 256usize.div_ceil(128) && ver == 2, || format!("vertical count {ver}"))?;
    Ok("12 candidates; 256 cores -> 10 x 28 and 2 x 128".into())
}

/// 9. Under ~1.2x demand, vertical scaling overcommits more and draws less power than horizontal.
fn trend_smoke_test() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let base = demo_topology();
    let capacity = base.capacity_mhz();
    let slices = 288;
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let n = 240;
    // Fraction 0.95 of a 1.26x trace leaves about 1.2x capacity.
    let per_vm = 1.26 * capacity / n as f64;
    let vms = (0..n)
        .map(|i| {
            let usage: Vec<f64> = (0..slices).map(|_| (per_vm * rng.random_range(0.8..1.2)).round()).collect();
            VmSpec::from_series(format!("vm{i:03}"), 0, 8, 16 * 1024, usage)
        })
        .collect();
    write_canonical_trace(&Workload::new("contended", vms).unwrap(), tmp.path().join("trace")).map_err(|e| e.to_string())?;

    let scenario = |id: &str, topology: Topology| Scenario {
        scenario_id: id.into(),
        topology: TopologyRef::Inline(topology),
        workload: WorkloadRef {
            trace: "trace".into(),
            format: TraceFormat::Canonical,
            fraction: 0.95,
            public: None,
            duration_s: None,
            assumed_clock_mhz: None,
        },
        policy: PolicyId::worst_fit(PolicyBase::Mem),
        placement: None,
        phenomena: Default::default(),
        failure_model: None,
        failure_mode: Default::default(),
        interference: None,
        end_time: None,
        power: None,
        max_slices: None,
    };
    let candidate = |direction| {
        let dims = CandidateDimensions { mode: Mode::Replace, quality: Quality::Volume, direction, variance: Variance::Homogeneous };
        derive_candidate(&base, dims, &ScalingConstants::default(), 0).unwrap()
    };
    let portfolio = Portfolio {
        name: None,
        base: scenario("vertical", candidate(Direction::Vertical)),
        candidates: vec![scenario("horizontal", candidate(Direction::Horizontal))],
        targets: Targets::default(),
        repetitions: 8,
    };
    let resolved = resolve(&portfolio, &ResolveContext::new(tmp.path())).map_err(|e| e.to_string())?;
    let results = run_portfolio(&resolved, 4, None).map_err(|e| e.to_string())?;
    let median = |s: usize, m: &str| results.aggregates[s].get(m).unwrap().median;
    let demand = median(0, "mean_cpu_demand_mhz") * resolved.scenarios[0].topology.machine_count() as f64;
    let (ov, oh) = (median(0, "total_overcommitted_mflop"), median(1, "total_overcommitted_mflop"));
    let (pv, ph) = (median(0, "total_power_wh"), median(1, "total_power_wh"));
    ensure(ov > oh, || format!("overcommission vertical {ov:e} <= horizontal {oh:e}"))?;
    ensure(pv < ph, || format!("power vertical {pv:e} >= horizontal {ph:e}"))?;
    Ok(format!(
        "demand/capacity {:.2}; overcommission {:.3e} > {:.3e}; power {:.4e} < {:.4e}",
        demand / capacity,
        ov,
        oh,
        pv,
        ph
    ))
}

/// 10. One always-active pair on an idle host loses (1/N) * (1 - score) of its demand on average.
fn interference_accounting() -> Outcome {
    let topology = Topology {
        name: "one".into(),
        clusters: vec![Cluster {
            cluster_id: "c".into(),
            machines: vec![MachineSpec { host_id: "h".into(), core_count: 16, clock_mhz: 3000.0, memory_mb: 65536 }],
        }],
    };
    let slices = 10_000;
    let workload = Workload::new(
        "pair",
        vec![
            VmSpec::from_series("a", 0, 1, 1024, vec![1000.0; slices]),
            VmSpec::from_series("b", 0, 1, 1024, vec![1000.0; slices]),
        ],
    )
    .unwrap();
    let score = 0.8;
    let phenomena = PhenomenaConfig {
        interference: vec![InterferenceGroup { members: ["a", "b"].map(String::from).into(), score, load_threshold: 0.0 }],
        ..PhenomenaConfig::none()
    };
    let cfg = SimulationConfig {
        topology: &topology,
        workload: &workload,
        policy: PolicyId::worst_fit(PolicyBase::Mem),
        placement_map: None,
        phenomena: &phenomena,
        options: RunOptions::default(),
    };
    let r = simulate(cfg, 10).map_err(|e| e.to_string())?.report;
    let expected = 0.5 * (1.0 - score);
    let observed = r.total_interfered_mflop / r.total_requested_mflop;
    ensure((observed - expected).abs() <= 0.02 * expected, || format!("observed {observed} vs expected {expected}"))?;
    ensure(r.total_overcommitted_mflop == r.total_interfered_mflop, || "uncontended host lost extra demand".into())?;
    Ok(format!("interfered fraction {observed:.5} vs analytic {expected:.5}"))
}

type Criterion = (&'static str, fn() -> Outcome);

fn main() -> ExitCode {
    let criteria: [Criterion; 10] = [
        ("conservation", conservation),
        ("fair-share oracle", fair_share_oracle),
        ("sampling oracle", sampling_oracle),
        ("determinism", determinism),
        ("power model", power_model),
        ("failure model", failure_model),
        ("replay round-trip", replay_round_trip),
        ("candidate generation", candidate_generation),
        ("trend smoke test", trend_smoke_test),
        ("interference accounting", interference_accounting),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default())
        });
        match outcome {
            Ok(detail) => println!("criterion {:>2} {name}: PASS ({detail})", i + 1),
            Err(why) => {
                failed += 1;
                println!("criterion {:>2} {name}: FAIL ({why})", i + 1);
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
