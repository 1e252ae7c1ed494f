use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use capelin_core::portfolio::{Recommendation, RunResults};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RunStatus {
    Pending,
    Running,
    Done,
    Failed,
}

impl RunStatus {
    pub fn is_active(self) -> bool {
        matches!(self, RunStatus::Pending | RunStatus::Running)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunHandle {
    pub run_id: String,
    pub portfolio_id: String,
    pub status: RunStatus,
    /// Completed (scenario, repetition) runs.
    pub completed: usize,
    pub total: usize,
    /// `completed / total`.
    pub progress: f64,
    /// Seconds since the Unix epoch.
    pub created_at: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl RunHandle {
    pub fn new(run_id: String, portfolio_id: String, total: usize) -> Self {
        let created_at = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
        RunHandle { run_id, portfolio_id, status: RunStatus::Pending, completed: 0, total, progress: 0.0, created_at, error: None }
    }

    /// Progress only moves forward, whatever order workers report in.
    pub fn advance(&mut self, completed: usize) {
        if completed > self.completed {
            self.completed = completed.min(self.total);
            self.progress = if self.total == 0 { 1.0 } else { self.completed as f64 / self.total as f64 };
        }
    }
}

/// Everything `GET /runs/{id}/results` returns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub run_id: String,
    pub portfolio_id: String,
    pub results: RunResults,
    pub recommendation: Recommendation,
}
