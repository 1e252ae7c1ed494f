//! Space-correlated crash failures with lognormal inter-arrival time, duration, and group size.
//!
//! Each table value `v` enters the distribution as `ln(v)`: a scale `s` and shape `k` give a
//! lognormal with `mu = ln(s)` and `sigma = ln(k)`.

use rand::seq::index;
use rand::Rng;
use rand_distr::{Distribution, LogNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::SimRng;
use crate::topology::Topology;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FailureModelParams {
    pub interarrival_scale_h: f64,
    pub interarrival_shape: f64,
    pub duration_scale_min: f64,
    pub duration_shape_min: f64,
    pub group_size_scale: f64,
    pub group_size_shape: f64,
    pub min_duration_min: f64,
}

impl Default for FailureModelParams {
    fn default() -> Self {
        FailureModelParams {
            interarrival_scale_h: 24.0 * 7.0,
            interarrival_shape: 2.801,
            duration_scale_min: 60.0,
            duration_shape_min: 60.0 * 8.0,
            group_size_scale: 2.0,
            group_size_shape: 1.0,
            min_duration_min: 15.0,
        }
    }
}

impl FailureModelParams {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.interarrival_scale_h,
            self.interarrival_shape,
            self.duration_scale_min,
            self.duration_shape_min,
            self.group_size_scale,
            self.group_size_shape,
            self.min_duration_min,
        ];
        if all.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::Config("failure model parameters must be positive and finite".into()));
        }
        // sigma = ln(shape) must not be negative.
        if self.interarrival_shape < 1.0 || self.duration_shape_min < 1.0 || self.group_size_shape < 1.0 {
            return Err(Error::Config("failure model shapes must be >= 1".into()));
        }
        Ok(())
    }

    fn distribution(scale: f64, shape: f64) -> LogNormal<f64> {
        LogNormal::new(scale.ln(), shape.ln()).expect("validated lognormal parameters")
    }
}

/// A group of machines crashing together.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FailureEvent {
    pub start: i64,
    pub duration_s: i64,
    pub cluster_id: String,
    pub victim_hosts: Vec<String>,
}

impl FailureEvent {
    pub fn end(&self) -> i64 {
        self.start.saturating_add(self.duration_s)
    }
}

/// Unbounded, time-ordered stream of failure events starting after `start`.
///
/// Per event the draws are: inter-arrival, duration, group size, cluster, victims.
pub struct FailureSampler<'a> {
    topology: &'a Topology,
    rng: SimRng,
    clock_s: f64,
    min_duration_s: f64,
    interarrival: LogNormal<f64>,
    duration: LogNormal<f64>,
    group_size: LogNormal<f64>,
}

impl<'a> FailureSampler<'a> {
    pub fn new(params: &FailureModelParams, topology: &'a Topology, start: i64, rng: SimRng) -> Result<Self> {
        params.validate()?;
        Ok(FailureSampler {
            topology,
            rng,
            clock_s: start as f64,
            min_duration_s: params.min_duration_min * 60.0,
            interarrival: FailureModelParams::distribution(params.interarrival_scale_h, params.interarrival_shape),
            duration: FailureModelParams::distribution(params.duration_scale_min, params.duration_shape_min),
            group_size: FailureModelParams::distribution(params.group_size_scale, params.group_size_shape),
        })
    }
}

impl Iterator for FailureSampler<'_> {
    type Item = FailureEvent;

    fn next(&mut self) -> Option<FailureEvent> {
        if self.topology.clusters.is_empty() {
            return None;
        }
        self.clock_s += self.interarrival.sample(&mut self.rng) * 3600.0;
        let duration_s = (self.duration.sample(&mut self.rng) * 60.0).max(self.min_duration_s);
        let size = self.group_size.sample(&mut self.rng).round().max(1.0);

        let cluster = &self.topology.clusters[self.rng.random_range(0..self.topology.clusters.len() as u64) as usize];
        let n = cluster.machines.len();
        let size = (size as usize).min(n);
        let mut picked = index::sample(&mut self.rng, n, size).into_vec();
        picked.sort_unstable();

        // Float-to-int casts saturate, so absurd tail samples stay representable.
        Some(FailureEvent {
            start: self.clock_s as i64,
            duration_s: duration_s.ceil() as i64,
            cluster_id: cluster.cluster_id.clone(),
            victim_hosts: picked.into_iter().map(|i| cluster.machines[i].host_id.clone()).collect(),
        })
    }
}

/// All failure events that start before `horizon_s`.
pub fn sample_failures(
    params: &FailureModelParams,
    horizon_s: i64,
    topology: &Topology,
    rng: SimRng,
) -> Result<Vec<FailureEvent>> {
    if horizon_s <= 0 {
        return Ok(Vec::new());
    }
    Ok(FailureSampler::new(params, topology, 0, rng)?
        .take_while(|e| e.start < horizon_s)
        .collect())
}
