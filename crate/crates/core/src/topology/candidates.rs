//! Candidate topologies derived from a base topology.
//!
//! Half of the clusters are picked and modified along four dimensions: replace or expand, volume
//! or velocity, horizontal or vertical, homogeneous or heterogeneous. Volume changes rebuild a
//! cluster with machines of a fixed core count so that the new total is at least the old one;
//! velocity changes raise the clock.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{Cluster, MachineSpec, Topology};
use crate::error::{Error, Result};
use crate::rng::{self, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Replace,
    Expand,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Quality {
    Volume,
    Velocity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Horizontal,
    Vertical,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variance {
    Homogeneous,
    Heterogeneous,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CandidateDimensions {
    pub mode: Mode,
    pub quality: Quality,
    /// Ignored for velocity candidates.
    pub direction: Direction,
    pub variance: Variance,
}

impl CandidateDimensions {
    /// Short label such as `rep-vol-hor-hom` or `exp-vel-het`.
    pub fn label(&self) -> String {
        let mode = match self.mode {
            Mode::Replace => "rep",
            Mode::Expand => "exp",
        };
        let variance = match self.variance {
            Variance::Homogeneous => "hom",
            Variance::Heterogeneous => "het",
        };
        match self.quality {
            Quality::Volume => {
                let direction = match self.direction {
                    Direction::Horizontal => "hor",
                    Direction::Vertical => "ver",
                };
                format!("{mode}-vol-{direction}-{variance}")
            }
            Quality::Velocity => format!("{mode}-vel-{variance}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalingConstants {
    pub horizontal_cores: u32,
    pub vertical_cores: u32,
    pub velocity_factor: f64,
}

impl Default for ScalingConstants {
    fn default() -> Self {
        ScalingConstants {
            horizontal_cores: 28,
            vertical_cores: 128,
            velocity_factor: 1.25,
        }
    }
}

impl ScalingConstants {
    pub fn validate(&self) -> Result<()> {
        if self.horizontal_cores == 0 || self.horizontal_cores >= self.vertical_cores {
            return Err(Error::Argument(format!(
                "need 0 < horizontal_cores ({}) < vertical_cores ({})",
                self.horizontal_cores, self.vertical_cores
            )));
        }
        if !(self.velocity_factor.is_finite() && self.velocity_factor > 1.0) {
            return Err(Error::Argument(format!("velocity_factor {} must exceed 1", self.velocity_factor)));
        }
        Ok(())
    }
}

/// How the half of the topology to modify is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HalfSelection {
    /// Clusters closest to the mean machines-per-cluster and mean cores-per-machine; ties by
    /// `cluster_id`. Seed independent.
    #[default]
    AverageSized,
    /// A seeded uniform choice.
    Random,
}

fn selected_indices(topology: &Topology, rule: HalfSelection, seed: u64) -> Result<Vec<usize>> {
    let n = topology.clusters.len();
    if n < 2 {
        return Err(Error::Config(format!(
            "topology {} has {n} cluster(s); selecting half needs at least 2, use whole-topology mode instead",
            topology.name
        )));
    }
    let k = n / 2;
    let mut order: Vec<usize> = (0..n).collect();
    match rule {
        HalfSelection::AverageSized => {
            let mean_machines = topology.machine_count() as f64 / n as f64;
            let mean_cores = topology.total_cores() as f64 / topology.machine_count() as f64;
            let distance = |c: &Cluster| {
                let machines = c.machines.len() as f64;
                let cores = c.total_cores() as f64 / machines;
                (machines - mean_machines).abs() / mean_machines + (cores - mean_cores).abs() / mean_cores
            };
            order.sort_by(|&a, &b| {
                let (ca, cb) = (&topology.clusters[a], &topology.clusters[b]);
                distance(ca)
                    .total_cmp(&distance(cb))
                    .then_with(|| ca.cluster_id.cmp(&cb.cluster_id))
            });
        }
        HalfSelection::Random => {
            order.shuffle(&mut rng::stream(seed, Stream::TopologySelection));
        }
    }
    let mut chosen = order[..k].to_vec();
    chosen.sort_unstable();
    Ok(chosen)
}

/// Splits the topology into the ⌊n/2⌋ clusters to modify and the rest, both in declaration order.
pub fn select_half(topology: &Topology, seed: u64) -> Result<(Vec<Cluster>, Vec<Cluster>)> {
    select_half_with(topology, HalfSelection::AverageSized, seed)
}

pub fn select_half_with(
    topology: &Topology,
    rule: HalfSelection,
    seed: u64,
) -> Result<(Vec<Cluster>, Vec<Cluster>)> {
    let chosen = selected_indices(topology, rule, seed)?;
    let (mut selected, mut rest) = (Vec::new(), Vec::new());
    for (i, c) in topology.clusters.iter().enumerate() {
        if chosen.binary_search(&i).is_ok() {
            selected.push(c.clone());
        } else {
            rest.push(c.clone());
        }
    }
    Ok((selected, rest))
}

#[derive(Debug, Clone, Copy)]
enum Change {
    Resize { cores_per_machine: u32 },
    Clock { factor: f64 },
}

fn rebuild(cluster: &Cluster, change: Change, cluster_id: &str) -> Cluster {
    let host = |i: usize| format!("{cluster_id}-n{i:03}");
    let machines = match change {
        Change::Resize { cores_per_machine } => {
            let cores = cluster.total_cores();
            let memory = cluster.total_memory_mb();
            let clock = cluster
                .machines
                .iter()
                .map(|m| f64::from(m.core_count) * m.clock_mhz)
                .sum::<f64>()
                / cores as f64;
            let count = cores.div_ceil(u64::from(cores_per_machine));
            let memory_each = memory.div_ceil(count);
            (0..count as usize)
                .map(|i| MachineSpec {
                    host_id: host(i),
                    core_count: cores_per_machine,
                    clock_mhz: clock,
                    memory_mb: memory_each,
                })
                .collect()
        }
        Change::Clock { factor } => cluster
            .machines
            .iter()
            .enumerate()
            .map(|(i, m)| MachineSpec {
                host_id: host(i),
                clock_mhz: m.clock_mhz * factor,
                ..m.clone()
            })
            .collect(),
    };
    Cluster {
        cluster_id: cluster_id.to_owned(),
        machines,
    }
}

/// Builds one candidate topology from `topology`.
pub fn derive_candidate(
    topology: &Topology,
    dims: CandidateDimensions,
    constants: &ScalingConstants,
    seed: u64,
) -> Result<Topology> {
    constants.validate()?;
    let chosen = selected_indices(topology, HalfSelection::AverageSized, seed)?;

    let (designated, opposite) = match dims.quality {
        Quality::Volume => {
            let (d, o) = match dims.direction {
                Direction::Horizontal => (constants.horizontal_cores, constants.vertical_cores),
                Direction::Vertical => (constants.vertical_cores, constants.horizontal_cores),
            };
            (Change::Resize { cores_per_machine: d }, Change::Resize { cores_per_machine: o })
        }
        Quality::Velocity => (
            Change::Clock { factor: constants.velocity_factor },
            Change::Clock { factor: 1.0 },
        ),
    };
    let k = chosen.len();
    let designated_count = match dims.variance {
        Variance::Homogeneous => k,
        Variance::Heterogeneous => (2 * k).div_ceil(3),
    };

    let mut clusters = topology.clusters.clone();
    for (j, &ci) in chosen.iter().enumerate() {
        let change = if j < designated_count { designated } else { opposite };
        let original = &topology.clusters[ci];
        match dims.mode {
            Mode::Replace => clusters[ci] = rebuild(original, change, &original.cluster_id),
            Mode::Expand => clusters.push(rebuild(original, change, &format!("{}-x", original.cluster_id))),
        }
    }

    let candidate = Topology {
        name: format!("{}-{}", topology.name, dims.label()),
        clusters,
    };
    candidate.validate()?;
    Ok(candidate)
}

/// All 12 candidates: {replace, expand} × {volume-horizontal, volume-vertical, velocity} ×
/// {homogeneous, heterogeneous}. The base topology itself is never included.
pub fn enumerate_candidates(
    topology: &Topology,
    constants: &ScalingConstants,
    seed: u64,
) -> Result<Vec<(CandidateDimensions, Topology)>> {
    let axes = [
        (Quality::Volume, Direction::Horizontal),
        (Quality::Volume, Direction::Vertical),
        (Quality::Velocity, Direction::Vertical),
    ];
    let mut out = Vec::with_capacity(12);
    for mode in [Mode::Replace, Mode::Expand] {
        for (quality, direction) in axes {
            for variance in [Variance::Homogeneous, Variance::Heterogeneous] {
                let dims = CandidateDimensions { mode, quality, direction, variance };
                out.push((dims, derive_candidate(topology, dims, constants, seed)?));
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cluster(id: &str, machines: usize, cores: u32, clock: f64, memory_mb: u64) -> Cluster {
        Cluster {
            cluster_id: id.into(),
            machines: (0..machines)
                .map(|i| MachineSpec {
                    host_id: format!("{id}-h{i}"),
                    core_count: cores,
                    clock_mhz: clock,
                    memory_mb,
                })
                .collect(),
        }
    }

    fn topo(clusters: Vec<Cluster>) -> Topology {
        Topology { name: "base".into(), clusters }
    }

    fn dims(mode: Mode, quality: Quality, direction: Direction, variance: Variance) -> CandidateDimensions {
        CandidateDimensions { mode, quality, direction, variance }
    }

    #[test]
    fn single_cluster_rejected() {
        let t = topo(vec![cluster("a", 2, 8, 2000.0, 1024)]);
        assert!(matches!(select_half(&t, 0), Err(Error::Config(_))));
    }

    #[test]
    fn tie_broken_by_cluster_id() {
        // |2 - 6| == |10 - 6|, equal cores per machine.
        let t = topo(vec![cluster("b", 10, 8, 2000.0, 1024), cluster("a", 2, 8, 2000.0, 1024)]);
        let (sel, rest) = select_half(&t, 0).unwrap();
        assert_eq!(sel[0].cluster_id, "a");
        assert_eq!(rest[0].cluster_id, "b");
    }

    #[test]
    fn identical_clusters_reproducible() {
        let t = topo((0..4).map(|i| cluster(&format!("c{i}"), 3, 8, 2000.0, 1024)).collect());
        let a = select_half(&t, 5).unwrap();
        assert_eq!(a, select_half(&t, 5).unwrap());
        assert_eq!(a.0.len(), 2);
        let r = select_half_with(&t, HalfSelection::Random, 5).unwrap();
        assert_eq!(r, select_half_with(&t, HalfSelection::Random, 5).unwrap());
    }

    fn pair_256() -> Topology {
        topo(vec![cluster("a", 8, 32, 2400.0, 65_536), cluster("b", 8, 32, 2400.0, 65_536)])
    }

    #[test]
    fn horizontal_volume_rounds_up() {
        let t = pair_256();
        let c = derive_candidate(
            &t,
            dims(Mode::Replace, Quality::Volume, Direction::Horizontal, Variance::Homogeneous),
            &ScalingConstants::default(),
            0,
        )
        .unwrap();
        let modified = &c.clusters[0];
        assert_eq!(modified.machines.len(), 10);
        assert!(modified.machines.iter().all(|m| m.core_count == 28));
        assert_eq!(modified.total_cores(), 280);
        assert!(modified.total_memory_mb() >= 8 * 65_536);
        assert!(modified.total_memory_mb() - 8 * 65_536 < 10);
        assert_eq!(c.clusters[1], t.clusters[1]);
    }

    #[test]
    fn vertical_volume_rounds_up() {
        let c = derive_candidate(
            &pair_256(),
            dims(Mode::Replace, Quality::Volume, Direction::Vertical, Variance::Homogeneous),
            &ScalingConstants::default(),
            0,
        )
        .unwrap();
        assert_eq!(c.clusters[0].machines.len(), 2);
        assert_eq!(c.clusters[0].total_cores(), 256);
    }

    #[test]
    fn velocity_scales_clock_only() {
        let c = derive_candidate(
            &pair_256(),
            dims(Mode::Replace, Quality::Velocity, Direction::Vertical, Variance::Homogeneous),
            &ScalingConstants::default(),
            0,
        )
        .unwrap();
        let m = &c.clusters[0].machines;
        assert_eq!(m.len(), 8);
        assert!(m.iter().all(|m| m.core_count == 32 && m.clock_mhz == 3000.0));
    }

    #[test]
    fn expand_keeps_originals_with_fresh_hosts() {
        let t = pair_256();
        let c = derive_candidate(
            &t,
            dims(Mode::Expand, Quality::Volume, Direction::Vertical, Variance::Homogeneous),
            &ScalingConstants::default(),
            0,
        )
        .unwrap();
        assert_eq!(&c.clusters[..2], &t.clusters[..]);
        assert_eq!(c.clusters.len(), 3);
        assert_eq!(c.clusters[2].cluster_id, "a-x");
    }

    #[test]
    fn heterogeneous_splits_two_thirds() {
        let t = topo((0..6).map(|i| cluster(&format!("c{i}"), 4, 32, 2000.0, 4096)).collect());
        let c = derive_candidate(
            &t,
            dims(Mode::Replace, Quality::Volume, Direction::Horizontal, Variance::Heterogeneous),
            &ScalingConstants::default(),
            0,
        )
        .unwrap();
        // Selected c0..c2 (ties by id): two horizontal, one vertical.
        let per_machine: Vec<u32> = c.clusters[..3].iter().map(|c| c.machines[0].core_count).collect();
        assert_eq!(per_machine, vec![28, 28, 128]);

        let v = derive_candidate(
            &t,
            dims(Mode::Replace, Quality::Velocity, Direction::Vertical, Variance::Heterogeneous),
            &ScalingConstants::default(),
            0,
        )
        .unwrap();
        let clocks: Vec<f64> = v.clusters[..3].iter().map(|c| c.machines[0].clock_mhz).collect();
        assert_eq!(clocks, vec![2500.0, 2500.0, 2000.0]);
    }

    #[test]
    fn heterogeneous_single_selected_cluster_gets_designated_change() {
        let t = topo(vec![cluster("a", 8, 32, 2000.0, 1024), cluster("b", 8, 32, 2000.0, 1024)]);
        let c = derive_candidate(
            &t,
            dims(Mode::Replace, Quality::Volume, Direction::Vertical, Variance::Heterogeneous),
            &ScalingConstants::default(),
            0,
        )
        .unwrap();
        assert_eq!(c.clusters[0].machines[0].core_count, 128);
    }

    #[test]
    fn bad_constants_rejected() {
        let bad = ScalingConstants { horizontal_cores: 128, vertical_cores: 28, velocity_factor: 1.25 };
        let r = derive_candidate(
            &pair_256(),
            dims(Mode::Replace, Quality::Volume, Direction::Vertical, Variance::Homogeneous),
            &bad,
            0,
        );
        assert!(matches!(r, Err(Error::Argument(_))));
    }

    #[test]
    fn twelve_labelled_candidates() {
        let t = topo((0..4).map(|i| cluster(&format!("c{i}"), 3, 8, 2000.0, 1024)).collect());
        let all = enumerate_candidates(&t, &ScalingConstants::default(), 1).unwrap();
        let labels: std::collections::BTreeSet<String> = all.iter().map(|(d, _)| d.label()).collect();
        assert_eq!(all.len(), 12);
        assert_eq!(labels.len(), 12);
        assert!(all.iter().all(|(_, c)| c != &t));
    }
}
