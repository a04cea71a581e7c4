//! The Q1..Q5 co-creation dialogue: contract, session state and the engine
//! that drives a session through its stages.

mod engine;
pub mod extract;
mod session;
mod stage;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::money::Cents;

pub use engine::{CoCreationEngine, EngineConfig, EngineError, Selection, SessionOptions, DEFAULT_TURN_TIMEOUT};
pub use session::{
    FindingSource,
    DialogueSession, EventKind, FailureCause, Finding, FindingKind, Proposal, SessionEvent, Trajectory,
};
pub use stage::Stage;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ContractStatus {
    Draft,
    Grounded,
    Proposed,
    Confirmed,
    Aborted,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct QosConstraint {
    pub metric: String,
    /// One of `<=`, `>=`, `=`.
    pub comparator: String,
    pub value: String,
    pub unit: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Budget {
    pub amount: Cents,
    /// `week`, `day`, `month`, or absent when the text gives no period.
    pub period: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct IntentContract {
    pub goal_text: String,
    pub qos_constraints: Vec<QosConstraint>,
    /// `None` after grounding means the location is explicitly unspecified.
    pub location: Option<String>,
    pub budget: Option<Budget>,
    pub duration_hint_days: Option<u32>,
    pub slice_profile: Option<String>,
    pub policy_constraints: Vec<String>,
    pub status: ContractStatus,
}

impl IntentContract {
    pub fn draft(goal_text: impl Into<String>) -> Self {
        Self {
            goal_text: goal_text.into(),
            qos_constraints: Vec::new(),
            location: None,
            budget: None,
            duration_hint_days: None,
            slice_profile: None,
            policy_constraints: Vec::new(),
            status: ContractStatus::Draft,
        }
    }

    /// Moves the status forward. Backward moves are ignored; Aborted is
    /// always reachable.
    pub fn advance(&mut self, to: ContractStatus) {
        if to > self.status || to == ContractStatus::Aborted {
            self.status = to;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct TemporalSpec {
    pub start_date: NaiveDate,
    pub duration_days: u32,
}
