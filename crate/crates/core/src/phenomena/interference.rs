//! Colocation performance interference.
//!
//! A group is a set of VMs observed together on a host, with a score in `[0, 1]` and the host load
//! at which it was observed. At simulation time a group is active on a host when at least two of
//! its members are resident and the host load reaches the recorded threshold. Each resident
//! member of an active group is then hit with probability `1/N`, `N` being the number of VMs on
//! the host, and its request is multiplied by the score.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::SimRng;
use crate::topology::Topology;
use crate::trace::{PlacementRecord, Workload, SLICE_SECS};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InterferenceGroup {
    pub members: BTreeSet<String>,
    pub score: f64,
    pub load_threshold: f64,
}

impl InterferenceGroup {
    pub fn validate(&self) -> Result<()> {
        if self.members.len() < 2 {
            return Err(Error::Config("interference group needs at least two members".into()));
        }
        if !(0.0..=1.0).contains(&self.score) || !(0.0..=1.0).contains(&self.load_threshold) {
            return Err(Error::Config(format!(
                "interference score {} and load threshold {} must lie in [0, 1]",
                self.score, self.load_threshold
            )));
        }
        Ok(())
    }
}

pub fn load_interference_groups(path: impl AsRef<Path>) -> Result<Vec<InterferenceGroup>> {
    let path = path.as_ref();
    let raw = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let groups: Vec<InterferenceGroup> =
        serde_json::from_str(&raw).map_err(|source| Error::Json { path: path.to_owned(), source })?;
    for g in &groups {
        g.validate()?;
    }
    Ok(groups)
}

pub fn save_interference_groups(groups: &[InterferenceGroup], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut json = serde_json::to_string_pretty(groups).expect("groups serialize");
    json.push('\n');
    std::fs::write(path, json).map_err(|e| Error::io(path, e))
}

/// One observation of a set of VMs sharing a host.
#[derive(Debug, Clone, PartialEq)]
pub struct ColocationRecord {
    pub members: BTreeSet<String>,
    pub host_load: f64,
    pub cpu_ready_fraction: f64,
}

/// Aggregates observations into groups keyed by member set and host load rounded to one decimal.
///
/// The score of a group is one minus the mean CPU ready fraction of its observations.
pub fn mine_interference_groups(records: &[ColocationRecord], min_occurrences: usize) -> Result<Vec<InterferenceGroup>> {
    let mut buckets: BTreeMap<(&BTreeSet<String>, i64), (f64, usize)> = BTreeMap::new();
    for r in records {
        if !(0.0..=1.0).contains(&r.host_load) || !(0.0..=1.0).contains(&r.cpu_ready_fraction) {
            return Err(Error::Argument(format!(
                "host load {} and CPU ready fraction {} must lie in [0, 1]",
                r.host_load, r.cpu_ready_fraction
            )));
        }
        if r.members.len() < 2 {
            continue;
        }
        let tenths = (r.host_load * 10.0).round() as i64;
        let entry = buckets.entry((&r.members, tenths)).or_insert((0.0, 0));
        entry.0 += r.cpu_ready_fraction;
        entry.1 += 1;
    }
    Ok(buckets
        .into_iter()
        .filter(|(_, (_, n))| *n >= min_occurrences.max(1))
        .map(|((members, tenths), (sum, n))| InterferenceGroup {
            members: members.clone(),
            score: 1.0 - sum / n as f64,
            load_threshold: tenths as f64 / 10.0,
        })
        .collect())
}

/// Derives one observation per (host, slice) from historical placements: the VMs placed on the
/// host with demand in that slice, the host load they caused, and their mean CPU ready fraction.
///
/// Slices with fewer than two such VMs, or with a VM lacking a ready fraction, are skipped.
pub fn colocation_records(
    workload: &Workload,
    topology: &Topology,
    placements: &[PlacementRecord],
) -> Result<Vec<ColocationRecord>> {
    let capacity: HashMap<&str, f64> =
        topology.machines().map(|(_, m)| (m.host_id.as_str(), m.capacity_mhz())).collect();
    // host -> slice -> (vm, usage, ready)
    type Residents<'a> = Vec<(&'a str, f64, Option<f64>)>;
    let mut by_host: BTreeMap<&str, BTreeMap<i64, Residents>> = BTreeMap::new();
    for p in placements {
        if !capacity.contains_key(p.host_id.as_str()) {
            return Err(Error::Argument(format!("placement of {} names unknown host `{}`", p.vm_id, p.host_id)));
        }
        let Some(vm) = workload.get(&p.vm_id) else {
            log::debug!("placement names VM {} which is not in the trace", p.vm_id);
            continue;
        };
        let slices = by_host.entry(p.host_id.as_str()).or_default();
        for s in &vm.slice_usages {
            slices.entry(s.slice_start).or_default().push((vm.vm_id.as_str(), s.usage_mhz, p.cpu_ready_fraction));
        }
    }

    let mut records = Vec::new();
    for (host, slices) in by_host {
        let cap = capacity[host];
        for residents in slices.values() {
            if residents.len() < 2 {
                continue;
            }
            let Some(ready) = residents.iter().map(|r| r.2).collect::<Option<Vec<f64>>>() else {
                continue;
            };
            let demand: f64 = residents.iter().map(|r| r.1).sum();
            records.push(ColocationRecord {
                members: residents.iter().map(|r| r.0.to_owned()).collect(),
                host_load: if cap > 0.0 { (demand / cap).clamp(0.0, 1.0) } else { 1.0 },
                cpu_ready_fraction: ready.iter().sum::<f64>() / ready.len() as f64,
            });
        }
    }
    Ok(records)
}

/// Effective requests of the VMs on one host after interference.
#[derive(Debug, Clone, PartialEq)]
pub struct InterferenceOutcome {
    pub effective_mhz: Vec<f64>,
    /// Per VM `(requested - effective) * SLICE_SECS`.
    pub interfered_mflop: Vec<f64>,
}

/// Interference groups indexed by member for fast per-host lookups.
#[derive(Debug, Clone, Default)]
pub struct InterferenceModel {
    groups: Vec<InterferenceGroup>,
    by_vm: HashMap<String, Vec<usize>>,
}

impl InterferenceModel {
    pub fn new(groups: Vec<InterferenceGroup>) -> Self {
        let mut by_vm: HashMap<String, Vec<usize>> = HashMap::new();
        for (i, g) in groups.iter().enumerate() {
            for m in &g.members {
                by_vm.entry(m.clone()).or_default().push(i);
            }
        }
        InterferenceModel { groups, by_vm }
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }

    /// Applies interference to the residents of one host.
    ///
    /// `residents` pairs each VM id with its request in MHz; `host_load` is the pre-interference
    /// demand over capacity, clamped to `[0, 1]`. One Bernoulli draw is consumed per resident that
    /// belongs to an active group, in resident order; the first active group listing the VM applies.
    pub fn apply<S: AsRef<str>>(&self, residents: &[(S, f64)], host_load: f64, rng: &mut SimRng) -> InterferenceOutcome {
        let mut effective_mhz: Vec<f64> = residents.iter().map(|(_, r)| *r).collect();
        let mut interfered_mflop = vec![0.0; residents.len()];
        if self.groups.is_empty() || residents.len() < 2 {
            return InterferenceOutcome { effective_mhz, interfered_mflop };
        }

        let mut present: HashMap<usize, usize> = HashMap::new();
        for (id, _) in residents {
            for &g in self.by_vm.get(id.as_ref()).into_iter().flatten() {
                *present.entry(g).or_default() += 1;
            }
        }
        let host_load = host_load.clamp(0.0, 1.0);
        let active = |g: usize| present.get(&g).is_some_and(|&n| n >= 2) && host_load >= self.groups[g].load_threshold;

        let p_hit = 1.0 / residents.len() as f64;
        for (i, (id, request)) in residents.iter().enumerate() {
            let Some(&g) = self.by_vm.get(id.as_ref()).and_then(|gs| gs.iter().find(|&&g| active(g))) else {
                continue;
            };
            if rng.random::<f64>() < p_hit {
                let eff = request * self.groups[g].score;
                effective_mhz[i] = eff;
                interfered_mflop[i] = (request - eff) * SLICE_SECS as f64;
            }
        }
        InterferenceOutcome { effective_mhz, interfered_mflop }
    }
}

/// One-shot form of [`InterferenceModel::apply`].
pub fn apply_interference<S: AsRef<str>>(
    groups: &[InterferenceGroup],
    residents: &[(S, f64)],
    host_load: f64,
    rng: &mut SimRng,
) -> InterferenceOutcome {
    InterferenceModel::new(groups.to_vec()).apply(residents, host_load, rng)
}
