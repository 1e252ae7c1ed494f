//! Physical topology model and candidate-topology derivation.

mod candidates;

use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use candidates::{
    derive_candidate, enumerate_candidates, select_half, select_half_with, CandidateDimensions, Direction,
    HalfSelection, Mode, Quality, ScalingConstants, Variance,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MachineSpec {
    pub host_id: String,
    pub core_count: u32,
    pub clock_mhz: f64,
    pub memory_mb: u64,
}

impl MachineSpec {
    /// Total CPU capacity in MHz (cores pooled).
    pub fn capacity_mhz(&self) -> f64 {
        f64::from(self.core_count) * self.clock_mhz
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Cluster {
    pub cluster_id: String,
    pub machines: Vec<MachineSpec>,
}

impl Cluster {
    pub fn total_cores(&self) -> u64 {
        self.machines.iter().map(|m| u64::from(m.core_count)).sum()
    }

    pub fn total_memory_mb(&self) -> u64 {
        self.machines.iter().map(|m| m.memory_mb).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Topology {
    pub name: String,
    pub clusters: Vec<Cluster>,
}

impl Topology {
    /// Reads and validates a topology JSON document.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let raw = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let topology: Topology = serde_json::from_str(&raw).map_err(|source| Error::Json {
            path: path.to_owned(),
            source,
        })?;
        topology.validate()?;
        Ok(topology)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut json = serde_json::to_string_pretty(self).expect("topology serializes");
        json.push('\n');
        std::fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn validate(&self) -> Result<()> {
        if self.clusters.is_empty() {
            return Err(Error::Config(format!("topology {} has no clusters", self.name)));
        }
        let mut cluster_ids = HashSet::new();
        let mut host_ids = HashSet::new();
        for cluster in &self.clusters {
            if !cluster_ids.insert(cluster.cluster_id.as_str()) {
                return Err(Error::Config(format!("duplicate cluster_id {}", cluster.cluster_id)));
            }
            if cluster.machines.is_empty() {
                return Err(Error::Config(format!("cluster {} has no machines", cluster.cluster_id)));
            }
            for m in &cluster.machines {
                if !host_ids.insert(m.host_id.as_str()) {
                    return Err(Error::Config(format!("duplicate host_id {}", m.host_id)));
                }
                if m.core_count == 0 || !(m.clock_mhz.is_finite() && m.clock_mhz > 0.0) || m.memory_mb == 0 {
                    return Err(Error::Config(format!(
                        "host {} needs positive core_count, clock_mhz and memory_mb",
                        m.host_id
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn machines(&self) -> impl Iterator<Item = (&Cluster, &MachineSpec)> {
        self.clusters
            .iter()
            .flat_map(|c| c.machines.iter().map(move |m| (c, m)))
    }

    pub fn machine_count(&self) -> usize {
        self.clusters.iter().map(|c| c.machines.len()).sum()
    }

    pub fn total_cores(&self) -> u64 {
        self.clusters.iter().map(Cluster::total_cores).sum()
    }

    pub fn total_memory_mb(&self) -> u64 {
        self.clusters.iter().map(Cluster::total_memory_mb).sum()
    }

    pub fn capacity_mhz(&self) -> f64 {
        self.machines().map(|(_, m)| m.capacity_mhz()).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn machine(id: &str) -> MachineSpec {
        MachineSpec { host_id: id.into(), core_count: 4, clock_mhz: 2000.0, memory_mb: 8192 }
    }

    #[test]
    fn aggregates() {
        let t = Topology {
            name: "t".into(),
            clusters: vec![
                Cluster { cluster_id: "a".into(), machines: vec![machine("h1"), machine("h2")] },
                Cluster { cluster_id: "b".into(), machines: vec![machine("h3")] },
            ],
        };
        t.validate().unwrap();
        assert_eq!(t.total_cores(), 12);
        assert_eq!(t.total_memory_mb(), 3 * 8192);
        assert_eq!(t.capacity_mhz(), 24_000.0);
    }

    #[test]
    fn duplicate_host_rejected() {
        let t = Topology {
            name: "t".into(),
            clusters: vec![
                Cluster { cluster_id: "a".into(), machines: vec![machine("h1")] },
                Cluster { cluster_id: "b".into(), machines: vec![machine("h1")] },
            ],
        };
        assert!(t.validate().is_err());
    }

    #[test]
    fn unknown_fields_rejected_on_load() {
        let tmp = tempfile::tempdir().unwrap();
        let p = tmp.path().join("t.json");
        std::fs::write(&p, r#"{"name":"t","clusters":[],"extra":1}"#).unwrap();
        assert!(matches!(Topology::load(&p), Err(Error::Json { .. })));
    }
}
