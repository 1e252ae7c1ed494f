//! Operational phenomena: space-correlated machine failures and colocation interference.

mod failures;
mod interference;

use serde::{Deserialize, Serialize};

pub use failures::{sample_failures, FailureEvent, FailureModelParams, FailureSampler};
pub use interference::{
    apply_interference, colocation_records, load_interference_groups, mine_interference_groups, save_interference_groups,
    ColocationRecord, InterferenceGroup, InterferenceModel, InterferenceOutcome,
};

/// Which phenomena a scenario enables.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PhenomenaSwitch {
    #[default]
    None,
    Failures,
    Interference,
    All,
}

impl PhenomenaSwitch {
    pub fn failures(self) -> bool {
        matches!(self, PhenomenaSwitch::Failures | PhenomenaSwitch::All)
    }

    pub fn interference(self) -> bool {
        matches!(self, PhenomenaSwitch::Interference | PhenomenaSwitch::All)
    }
}

/// What happens to the demand series of a VM while its host is down.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FailureMode {
    /// Trace time keeps running: the slices that fall into the outage are lost and the VM still
    /// finishes at the end of its series.
    #[default]
    Skip,
    /// Progress pauses during the outage and resumes afterwards, delaying completion.
    Pause,
}

/// Phenomena as seen by the engine for one run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PhenomenaConfig {
    pub failures: Option<FailureModelParams>,
    pub failure_mode: FailureMode,
    pub interference: Vec<InterferenceGroup>,
}

impl PhenomenaConfig {
    pub fn none() -> Self {
        PhenomenaConfig::default()
    }
}
