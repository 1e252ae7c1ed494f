//! Workload traces: the in-memory model, on-disk formats, and load-fraction sampling.
//!
//! CPU demand is tracked per 300 s slice as mean MHz. One MHz sustained for one second counts
//! as one MFLOP, so the load of a slice is `usage_mhz * 300`.

mod azure;
mod canonical;
mod placement;
mod sampling;

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use azure::{load_azure_trace, DEFAULT_ASSUMED_CLOCK_MHZ};
pub use canonical::{load_private_trace, write_canonical_trace};
pub use placement::{read_placement_file, write_placement_file, PlacementRecord};
pub use sampling::{
    sample_multiple_traces, sample_multiple_traces_with, sample_trace, PUBLIC_PRESAMPLE_FRACTION,
    PRIVATE_PREFIX, PUBLIC_PREFIX,
};

/// Duration of one time slice in seconds.
pub const SLICE_SECS: i64 = 300;

/// Aligns `t` down to the slice grid.
pub fn slice_floor(t: i64) -> i64 {
    t.div_euclid(SLICE_SECS) * SLICE_SECS
}

/// Aligns `t` up to the slice grid.
pub fn slice_ceil(t: i64) -> i64 {
    -slice_floor(-t)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VmSliceUsage {
    pub slice_start: i64,
    pub usage_mhz: f64,
}

/// A virtual machine and its CPU demand series.
///
/// `slice_usages` is contiguous: entry `i` starts at `submit_time + i * SLICE_SECS`. Idle stretches
/// are zero-demand slices, so the VM occupies its memory for the whole series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VmSpec {
    pub vm_id: String,
    pub submit_time: i64,
    pub core_count: u32,
    pub memory_mb: u64,
    pub slice_usages: Vec<VmSliceUsage>,
}

impl VmSpec {
    /// Builds a VM whose series starts at `submit_time` with the given per-slice demand.
    pub fn from_series(
        vm_id: impl Into<String>,
        submit_time: i64,
        core_count: u32,
        memory_mb: u64,
        usages_mhz: impl IntoIterator<Item = f64>,
    ) -> Self {
        let slice_usages = usages_mhz
            .into_iter()
            .enumerate()
            .map(|(i, usage_mhz)| VmSliceUsage {
                slice_start: submit_time + i as i64 * SLICE_SECS,
                usage_mhz,
            })
            .collect();
        VmSpec {
            vm_id: vm_id.into(),
            submit_time,
            core_count,
            memory_mb,
            slice_usages,
        }
    }

    pub fn total_load_mflop(&self) -> f64 {
        self.slice_usages
            .iter()
            .map(|s| s.usage_mhz * SLICE_SECS as f64)
            .sum()
    }

    /// Time at which the last slice of the series ends.
    pub fn end_time(&self) -> i64 {
        self.submit_time + self.slice_usages.len() as i64 * SLICE_SECS
    }

    pub fn validate(&self) -> Result<()> {
        if self.core_count == 0 {
            return Err(Error::Argument(format!("VM {}: core_count must be >= 1", self.vm_id)));
        }
        for (i, s) in self.slice_usages.iter().enumerate() {
            if s.slice_start != self.submit_time + i as i64 * SLICE_SECS {
                return Err(Error::Argument(format!(
                    "VM {}: slice {i} starts at {} which is off the slice grid",
                    self.vm_id, s.slice_start
                )));
            }
            if !(s.usage_mhz.is_finite() && s.usage_mhz >= 0.0) {
                return Err(Error::Argument(format!(
                    "VM {}: usage {} at {} is not a non-negative number",
                    self.vm_id, s.usage_mhz, s.slice_start
                )));
            }
        }
        Ok(())
    }
}

/// A set of VMs with unique ids, kept sorted by id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Workload {
    pub name: String,
    vms: Vec<VmSpec>,
    total_load_mflop: f64,
}

impl Workload {
    pub fn new(name: impl Into<String>, mut vms: Vec<VmSpec>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(vms.len());
        for vm in &vms {
            vm.validate()?;
            if !seen.insert(vm.vm_id.as_str()) {
                return Err(Error::Argument(format!("duplicate vm_id {}", vm.vm_id)));
            }
        }
        vms.sort_by(|a, b| a.vm_id.cmp(&b.vm_id));
        let total_load_mflop = sum_load(&vms);
        Ok(Workload {
            name: name.into(),
            vms,
            total_load_mflop,
        })
    }

    pub fn empty(name: impl Into<String>) -> Self {
        Workload {
            name: name.into(),
            vms: Vec::new(),
            total_load_mflop: 0.0,
        }
    }

    pub fn vms(&self) -> &[VmSpec] {
        &self.vms
    }

    pub fn into_vms(self) -> Vec<VmSpec> {
        self.vms
    }

    pub fn len(&self) -> usize {
        self.vms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vms.is_empty()
    }

    pub fn get(&self, vm_id: &str) -> Option<&VmSpec> {
        self.vms
            .binary_search_by(|vm| vm.vm_id.as_str().cmp(vm_id))
            .ok()
            .map(|i| &self.vms[i])
    }

    pub fn total_load_mflop(&self) -> f64 {
        self.total_load_mflop
    }

    /// Recomputes the total from the members and compares it with the cached value.
    pub fn check_total(&self) -> bool {
        sum_load(&self.vms) == self.total_load_mflop
    }

    /// End of the latest slice of any VM, or 0 for an empty workload.
    pub fn end_time(&self) -> i64 {
        self.vms.iter().map(VmSpec::end_time).max().unwrap_or(0)
    }

    pub fn total_memory_mb(&self) -> u64 {
        self.vms.iter().map(|vm| vm.memory_mb).sum()
    }
}

fn sum_load(vms: &[VmSpec]) -> f64 {
    vms.iter().map(VmSpec::total_load_mflop).sum()
}

/// Restricts the workload to `[0, duration_s)`.
///
/// VMs submitted at or after the horizon are dropped; the others lose every slice starting at or
/// after it.
pub fn truncate_workload(workload: &Workload, duration_s: i64) -> Result<Workload> {
    if duration_s < 0 || duration_s % SLICE_SECS != 0 {
        return Err(Error::Argument(format!(
            "truncation horizon {duration_s} s is not a non-negative multiple of {SLICE_SECS} s"
        )));
    }
    let vms = workload
        .vms
        .iter()
        .filter(|vm| vm.submit_time < duration_s)
        .map(|vm| {
            let mut vm = vm.clone();
            vm.slice_usages.retain(|s| s.slice_start < duration_s);
            vm
        })
        .collect();
    Workload::new(workload.name.clone(), vms)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn uniform_vm(id: &str, slices: usize, mhz: f64) -> VmSpec {
        VmSpec::from_series(id, 0, 1, 1024, std::iter::repeat_n(mhz, slices))
    }

    #[test]
    fn slice_alignment_helpers() {
        assert_eq!(slice_floor(299), 0);
        assert_eq!(slice_floor(-1), -300);
        assert_eq!(slice_ceil(1), 300);
        assert_eq!(slice_ceil(600), 600);
    }

    #[test]
    fn duplicate_ids_rejected() {
        let err = Workload::new("w", vec![uniform_vm("a", 1, 1.0), uniform_vm("a", 2, 1.0)]);
        assert!(matches!(err, Err(Error::Argument(_))));
    }

    #[test]
    fn total_load_is_recomputable() {
        let w = Workload::new("w", vec![uniform_vm("a", 3, 1000.0), uniform_vm("b", 1, 10.0)])
            .unwrap();
        assert_eq!(w.total_load_mflop(), 3.0 * 1000.0 * 300.0 + 10.0 * 300.0);
        assert!(w.check_total());
    }

    #[test]
    fn truncate_full_length_is_identity() {
        let w = Workload::new("w", vec![uniform_vm("a", 10, 500.0)]).unwrap();
        assert_eq!(truncate_workload(&w, w.end_time()).unwrap(), w);
    }

    #[test]
    fn truncate_to_zero_is_empty() {
        let w = Workload::new("w", vec![uniform_vm("a", 10, 500.0)]).unwrap();
        assert!(truncate_workload(&w, 0).unwrap().is_empty());
    }

    #[test]
    fn truncate_mid_life_halves_uniform_load() {
        let w = Workload::new("w", vec![uniform_vm("a", 10, 500.0)]).unwrap();
        let t = truncate_workload(&w, 5 * SLICE_SECS).unwrap();
        assert_eq!(t.vms()[0].slice_usages.len(), 5);
        assert_eq!(t.total_load_mflop(), w.total_load_mflop() / 2.0);
    }

    #[test]
    fn truncate_drops_late_submissions() {
        let mut late = uniform_vm("late", 2, 1.0);
        late = VmSpec::from_series("late", 900, 1, 1, late.slice_usages.iter().map(|s| s.usage_mhz));
        let w = Workload::new("w", vec![uniform_vm("a", 4, 1.0), late]).unwrap();
        let t = truncate_workload(&w, 900).unwrap();
        assert_eq!(t.len(), 1);
        assert!(t.get("late").is_none());
    }

    #[test]
    fn truncate_rejects_off_grid_horizon() {
        let w = Workload::empty("w");
        assert!(truncate_workload(&w, 301).is_err());
    }
}
