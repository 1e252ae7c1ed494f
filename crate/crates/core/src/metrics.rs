//! The fourteen run metrics and the linear host power model.

use serde::{Deserialize, Serialize};

use crate::trace::SLICE_SECS;

/// Metric identifiers in report order.
pub const METRIC_NAMES: [&str; 14] = [
    "total_requested_mflop",
    "total_granted_mflop",
    "total_overcommitted_mflop",
    "total_interfered_mflop",
    "total_power_wh",
    "total_failed_vm_slices",
    "mean_cpu_usage_mhz",
    "mean_cpu_demand_mhz",
    "mean_deployed_images_per_host",
    "max_deployed_images_per_host",
    "total_vms_submitted",
    "max_vms_queued",
    "total_vms_finished",
    "total_vms_failed",
];

pub fn metric_index(name: &str) -> Option<usize> {
    METRIC_NAMES.iter().position(|&m| m == name)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PowerModel {
    pub idle_w: f64,
    pub max_w: f64,
}

impl Default for PowerModel {
    fn default() -> Self {
        PowerModel { idle_w: 200.0, max_w: 350.0 }
    }
}

/// Power draw of a live host at `utilization` (clamped to `[0, 1]`).
pub fn host_power_w(model: &PowerModel, utilization: f64) -> f64 {
    let u = if utilization.is_nan() { 0.0 } else { utilization.clamp(0.0, 1.0) };
    model.idle_w + (model.max_w - model.idle_w) * u
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MetricValue {
    Float(f64),
    Count(u64),
}

impl MetricValue {
    pub fn as_f64(self) -> f64 {
        match self {
            MetricValue::Float(v) => v,
            MetricValue::Count(c) => c as f64,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ScenarioReport {
    pub total_requested_mflop: f64,
    pub total_granted_mflop: f64,
    pub total_overcommitted_mflop: f64,
    pub total_interfered_mflop: f64,
    pub total_power_wh: f64,
    pub total_failed_vm_slices: u64,
    pub mean_cpu_usage_mhz: f64,
    pub mean_cpu_demand_mhz: f64,
    pub mean_deployed_images_per_host: f64,
    pub max_deployed_images_per_host: u64,
    pub total_vms_submitted: u64,
    pub max_vms_queued: u64,
    pub total_vms_finished: u64,
    pub total_vms_failed: u64,
}

impl ScenarioReport {
    /// Value of the metric at `index` in [`METRIC_NAMES`] order.
    pub fn value(&self, index: usize) -> MetricValue {
        use MetricValue::{Count, Float};
        match index {
            0 => Float(self.total_requested_mflop),
            1 => Float(self.total_granted_mflop),
            2 => Float(self.total_overcommitted_mflop),
            3 => Float(self.total_interfered_mflop),
            4 => Float(self.total_power_wh),
            5 => Count(self.total_failed_vm_slices),
            6 => Float(self.mean_cpu_usage_mhz),
            7 => Float(self.mean_cpu_demand_mhz),
            8 => Float(self.mean_deployed_images_per_host),
            9 => Count(self.max_deployed_images_per_host),
            10 => Count(self.total_vms_submitted),
            11 => Count(self.max_vms_queued),
            12 => Count(self.total_vms_finished),
            13 => Count(self.total_vms_failed),
            _ => panic!("metric index {index} out of range"),
        }
    }

    pub fn get(&self, name: &str) -> Option<MetricValue> {
        metric_index(name).map(|i| self.value(i))
    }

    pub fn values(&self) -> [MetricValue; 14] {
        std::array::from_fn(|i| self.value(i))
    }
}

/// CPU accounting of one live host for one slice, in MHz.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct HostSlice {
    pub capacity_mhz: f64,
    pub requested_mhz: f64,
    pub effective_mhz: f64,
    pub granted_mhz: f64,
    /// Σ per VM of `requested - granted`.
    pub overcommitted_mhz: f64,
    pub resident_vms: usize,
}

/// Running sums for one run. Means are kept as (sum, samples) until [`finish`](Self::finish).
#[derive(Debug, Clone)]
pub struct MetricsAccumulator {
    power: PowerModel,
    requested_mhz: f64,
    granted_mhz: f64,
    overcommitted_mhz: f64,
    interfered_mhz: f64,
    // Joules: exact for idle hosts, where each slice adds an integral value.
    energy_ws: f64,
    failed_vm_slices: u64,
    live_host_slices: u64,
    images_sum: u64,
    images_max: u64,
    submitted: u64,
    max_queued: u64,
    finished: u64,
    failed_vms: u64,
}

impl MetricsAccumulator {
    pub fn new(power: PowerModel) -> Self {
        MetricsAccumulator {
            power,
            requested_mhz: 0.0,
            granted_mhz: 0.0,
            overcommitted_mhz: 0.0,
            interfered_mhz: 0.0,
            energy_ws: 0.0,
            failed_vm_slices: 0,
            live_host_slices: 0,
            images_sum: 0,
            images_max: 0,
            submitted: 0,
            max_queued: 0,
            finished: 0,
            failed_vms: 0,
        }
    }

    pub fn live_host(&mut self, h: &HostSlice) {
        self.requested_mhz += h.requested_mhz;
        self.granted_mhz += h.granted_mhz;
        self.overcommitted_mhz += h.overcommitted_mhz;
        self.interfered_mhz += h.requested_mhz - h.effective_mhz;
        let utilization = if h.capacity_mhz > 0.0 { h.granted_mhz / h.capacity_mhz } else { 0.0 };
        self.energy_ws += host_power_w(&self.power, utilization) * SLICE_SECS as f64;
        self.live_host_slices += 1;
        self.images_sum += h.resident_vms as u64;
        self.images_max = self.images_max.max(h.resident_vms as u64);
    }

    /// A crashed host draws no power; each of its VMs accrues a failed slice.
    pub fn failed_host(&mut self, resident_vms: usize) {
        self.failed_vm_slices += resident_vms as u64;
    }

    /// Records every host of one slice.
    pub fn accumulate_slice<'a>(&mut self, hosts: impl IntoIterator<Item = Option<&'a HostSlice>>, failed_residents: &[usize]) {
        for h in hosts.into_iter().flatten() {
            self.live_host(h);
        }
        for &n in failed_residents {
            self.failed_host(n);
        }
    }

    pub fn vm_submitted(&mut self) {
        self.submitted += 1;
    }

    pub fn vm_finished(&mut self) {
        self.finished += 1;
    }

    pub fn vm_failed(&mut self) {
        self.failed_vms += 1;
    }

    pub fn queue_length(&mut self, queued: usize) {
        self.max_queued = self.max_queued.max(queued as u64);
    }

    pub fn finish(&self) -> ScenarioReport {
        let secs = SLICE_SECS as f64;
        let samples = self.live_host_slices as f64;
        let mean = |sum: f64| if self.live_host_slices == 0 { 0.0 } else { sum / samples };
        ScenarioReport {
            total_requested_mflop: self.requested_mhz * secs,
            total_granted_mflop: self.granted_mhz * secs,
            total_overcommitted_mflop: self.overcommitted_mhz * secs,
            total_interfered_mflop: self.interfered_mhz * secs,
            total_power_wh: self.energy_ws / 3600.0,
            total_failed_vm_slices: self.failed_vm_slices,
            mean_cpu_usage_mhz: mean(self.granted_mhz),
            mean_cpu_demand_mhz: mean(self.requested_mhz),
            mean_deployed_images_per_host: mean(self.images_sum as f64),
            max_deployed_images_per_host: self.images_max,
            total_vms_submitted: self.submitted,
            max_vms_queued: self.max_queued,
            total_vms_finished: self.finished,
            total_vms_failed: self.failed_vms,
        }
    }
}
