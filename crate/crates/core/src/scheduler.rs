//! VM allocation policies.
//!
//! Worst-Fit picks the host with the most of the policy's resource; the `-inv` variants
//! (Best-Fit) pick the least. Ties go to the lexicographically smallest `host_id`.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::rng::SimRng;
use crate::topology::MachineSpec;
use crate::trace::{PlacementRecord, VmSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PolicyBase {
    /// Free memory.
    Mem,
    /// Free memory per core.
    CoreMem,
    /// Fewest resident VMs.
    ActiveServers,
    /// Historical placement with memory-based fallback.
    Replay,
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PolicyId {
    pub base: PolicyBase,
    /// Best-Fit instead of Worst-Fit. Always false for `Replay` and `Random`.
    pub inverted: bool,
}

impl PolicyId {
    pub const fn worst_fit(base: PolicyBase) -> Self {
        PolicyId { base, inverted: false }
    }

    pub const fn best_fit(base: PolicyBase) -> Self {
        PolicyId { base, inverted: true }
    }
}

impl fmt::Display for PolicyId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let base = match self.base {
            PolicyBase::Mem => "mem",
            PolicyBase::CoreMem => "core-mem",
            PolicyBase::ActiveServers => "active-servers",
            PolicyBase::Replay => "replay",
            PolicyBase::Random => "random",
        };
        f.write_str(base)?;
        if self.inverted {
            f.write_str("-inv")?;
        }
        Ok(())
    }
}

impl FromStr for PolicyId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (name, inverted) = match s.strip_suffix("-inv") {
            Some(name) => (name, true),
            None => (s, false),
        };
        let base = match name {
            "mem" => PolicyBase::Mem,
            "core-mem" => PolicyBase::CoreMem,
            "active-servers" => PolicyBase::ActiveServers,
            "replay" => PolicyBase::Replay,
            "random" => PolicyBase::Random,
            _ => return Err(Error::Config(format!("unknown allocation policy `{s}`"))),
        };
        if inverted && matches!(base, PolicyBase::Replay | PolicyBase::Random) {
            return Err(Error::Config(format!("policy `{name}` has no inverted variant")));
        }
        Ok(PolicyId { base, inverted })
    }
}

impl Serialize for PolicyId {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for PolicyId {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let raw = String::deserialize(d)?;
        raw.parse().map_err(serde::de::Error::custom)
    }
}

/// vm_id → host_id.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlacementMap(pub BTreeMap<String, String>);

impl PlacementMap {
    pub fn get(&self, vm_id: &str) -> Option<&str> {
        self.0.get(vm_id).map(String::as_str)
    }

    pub fn insert(&mut self, vm_id: impl Into<String>, host_id: impl Into<String>) {
        self.0.insert(vm_id.into(), host_id.into());
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn to_records(&self) -> Vec<PlacementRecord> {
        self.0
            .iter()
            .map(|(vm, host)| PlacementRecord { vm_id: vm.clone(), host_id: host.clone(), cpu_ready_fraction: None })
            .collect()
    }
}

impl FromIterator<PlacementRecord> for PlacementMap {
    fn from_iter<I: IntoIterator<Item = PlacementRecord>>(iter: I) -> Self {
        PlacementMap(iter.into_iter().map(|r| (r.vm_id, r.host_id)).collect())
    }
}

impl FromIterator<(String, String)> for PlacementMap {
    fn from_iter<I: IntoIterator<Item = (String, String)>>(iter: I) -> Self {
        PlacementMap(iter.into_iter().collect())
    }
}

/// A simulated host.
#[derive(Debug, Clone, PartialEq)]
pub struct HostState {
    pub spec: MachineSpec,
    /// Index of the owning cluster in the topology.
    pub cluster: usize,
    /// Indices of resident VMs in placement order.
    pub resident_vms: Vec<usize>,
    pub memory_used_mb: u64,
    /// Set while crashed; the slice boundary at which the host comes back.
    pub failed_until: Option<i64>,
}

impl HostState {
    pub fn new(spec: MachineSpec, cluster: usize) -> Self {
        HostState { spec, cluster, resident_vms: Vec::new(), memory_used_mb: 0, failed_until: None }
    }

    pub fn free_memory_mb(&self) -> u64 {
        self.spec.memory_mb - self.memory_used_mb
    }

    pub fn is_failed(&self) -> bool {
        self.failed_until.is_some()
    }

    pub fn can_host(&self, vm: &VmSpec) -> bool {
        !self.is_failed() && self.free_memory_mb() >= vm.memory_mb
    }
}

fn key(base: PolicyBase, host: &HostState) -> f64 {
    match base {
        PolicyBase::Mem | PolicyBase::Replay => host.free_memory_mb() as f64,
        PolicyBase::CoreMem => host.free_memory_mb() as f64 / f64::from(host.spec.core_count),
        PolicyBase::ActiveServers => -(host.resident_vms.len() as f64),
        PolicyBase::Random => 0.0,
    }
}

/// Orders eligible hosts by preference, returning positions into `hosts`.
///
/// `hosts` must already be restricted to live hosts with room for `vm`; an empty result means the
/// VM has to wait in the queue.
pub fn rank_hosts(policy: PolicyId, hosts: &[&HostState], _vm: &VmSpec, rng: &mut SimRng) -> Vec<usize> {
    let mut order: Vec<usize> = (0..hosts.len()).collect();
    if policy.base == PolicyBase::Random {
        order.sort_by(|&a, &b| hosts[a].spec.host_id.cmp(&hosts[b].spec.host_id));
        order.shuffle(rng);
        return order;
    }
    let keys: Vec<f64> = hosts.iter().map(|h| key(policy.base, h)).collect();
    let inverted = policy.inverted && policy.base != PolicyBase::Replay;
    order.sort_by(|&a, &b| {
        let by_key = if inverted { keys[a].total_cmp(&keys[b]) } else { keys[b].total_cmp(&keys[a]) };
        by_key.then_with(|| hosts[a].spec.host_id.cmp(&hosts[b].spec.host_id))
    });
    order
}

/// Where a VM went.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Placement {
    Host(usize),
    Queued,
}

fn best_among(policy: PolicyId, hosts: &[HostState], candidates: &[usize], vm: &VmSpec, rng: &mut SimRng) -> Option<usize> {
    let eligible: Vec<&HostState> = candidates.iter().map(|&i| &hosts[i]).collect();
    rank_hosts(policy, &eligible, vm, rng).first().map(|&pos| candidates[pos])
}

/// Chooses a host for `vm` and reserves its memory there.
///
/// `host_index` resolves host ids for replay lookups.
pub fn place(
    policy: PolicyId,
    hosts: &mut [HostState],
    vm_index: usize,
    vm: &VmSpec,
    placement_map: Option<&PlacementMap>,
    host_index: &BTreeMap<String, usize>,
    rng: &mut SimRng,
) -> Placement {
    let eligible: Vec<usize> = (0..hosts.len()).filter(|&i| hosts[i].can_host(vm)).collect();
    let choice = if policy.base == PolicyBase::Replay {
        let mem = PolicyId::worst_fit(PolicyBase::Mem);
        match placement_map.and_then(|m| m.get(&vm.vm_id)).and_then(|h| host_index.get(h)) {
            Some(&mapped) if hosts[mapped].can_host(vm) => Some(mapped),
            Some(&mapped) => {
                let cluster = hosts[mapped].cluster;
                let same: Vec<usize> = eligible.iter().copied().filter(|&i| hosts[i].cluster == cluster).collect();
                best_among(mem, hosts, &same, vm, rng).or_else(|| best_among(mem, hosts, &eligible, vm, rng))
            }
            None => {
                log::debug!("no usable replay entry for VM {}; falling back to mem", vm.vm_id);
                best_among(mem, hosts, &eligible, vm, rng)
            }
        }
    } else {
        best_among(policy, hosts, &eligible, vm, rng)
    };

    match choice {
        Some(h) => {
            let host = &mut hosts[h];
            host.memory_used_mb += vm.memory_mb;
            host.resident_vms.push(vm_index);
            assert!(host.memory_used_mb <= host.spec.memory_mb, "memory overcommitted on {}", host.spec.host_id);
            Placement::Host(h)
        }
        None => Placement::Queued,
    }
}
