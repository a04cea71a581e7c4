//! Recording backend calls and replaying them later.

use std::collections::VecDeque;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{AgentBackend, BackendError, ChatTurn, CompletionRequest};
use crate::clock::{ManualClock, SharedClock};
use crate::dialogue::Stage;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", rename_all_fields = "camelCase", tag = "kind")]
pub enum RecordedOutcome {
    Turn { turn: ChatTurn },
    Timeout { after_ms: u64 },
    Transport { detail: String },
    ToolCallingUnsupported,
    Protocol { detail: String },
    InvalidRequest { detail: String },
}

impl RecordedOutcome {
    fn from_result(r: &Result<ChatTurn, BackendError>) -> Self {
        match r {
            Ok(turn) => RecordedOutcome::Turn { turn: turn.clone() },
            Err(BackendError::Timeout(d)) => RecordedOutcome::Timeout { after_ms: d.as_millis() as u64 },
            Err(BackendError::Transport(d)) => RecordedOutcome::Transport { detail: d.clone() },
            Err(BackendError::ToolCallingUnsupported) => RecordedOutcome::ToolCallingUnsupported,
            Err(BackendError::Protocol(d)) => RecordedOutcome::Protocol { detail: d.clone() },
            Err(BackendError::InvalidRequest(d)) => RecordedOutcome::InvalidRequest { detail: d.clone() },
        }
    }

    fn into_result(self) -> Result<ChatTurn, BackendError> {
        match self {
            RecordedOutcome::Turn { turn } => Ok(turn),
            RecordedOutcome::Timeout { after_ms } => Err(BackendError::Timeout(Duration::from_millis(after_ms))),
            RecordedOutcome::Transport { detail } => Err(BackendError::Transport(detail)),
            RecordedOutcome::ToolCallingUnsupported => Err(BackendError::ToolCallingUnsupported),
            RecordedOutcome::Protocol { detail } => Err(BackendError::Protocol(detail)),
            RecordedOutcome::InvalidRequest { detail } => Err(BackendError::InvalidRequest(detail)),
        }
    }
}

/// One backend call: the stage it was made in, how long it took on the
/// session clock, and what came back.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct BackendCallRecord {
    pub stage: Stage,
    pub latency_ms: u64,
    pub outcome: RecordedOutcome,
}

/// Wraps a backend and records every call.
#[derive(Debug)]
pub struct RecordingBackend<'a> {
    inner: &'a dyn AgentBackend,
    clock: SharedClock,
    records: Mutex<Vec<BackendCallRecord>>,
}

impl<'a> RecordingBackend<'a> {
    pub fn new(inner: &'a dyn AgentBackend, clock: SharedClock) -> Self {
        Self { inner, clock, records: Mutex::new(Vec::new()) }
    }

    pub fn into_records(self) -> Vec<BackendCallRecord> {
        self.records.into_inner().expect("records lock")
    }
}

impl AgentBackend for RecordingBackend<'_> {
    fn name(&self) -> &str {
        self.inner.name()
    }

    fn complete(&self, req: &CompletionRequest<'_>) -> Result<ChatTurn, BackendError> {
        let start = self.clock.now_ms();
        let result = self.inner.complete(req);
        let record = BackendCallRecord {
            stage: req.stage,
            latency_ms: self.clock.now_ms().saturating_sub(start),
            outcome: RecordedOutcome::from_result(&result),
        };
        self.records.lock().expect("records lock").push(record);
        result
    }
}

/// Plays recorded calls back in order, advancing a manual clock by the
/// recorded latency. A call in a different stage than recorded means the
/// run diverged.
#[derive(Debug)]
pub struct ReplayBackend {
    name: String,
    records: Mutex<VecDeque<BackendCallRecord>>,
    clock: Option<Arc<ManualClock>>,
}

impl ReplayBackend {
    pub fn new(name: &str, records: Vec<BackendCallRecord>, clock: Option<Arc<ManualClock>>) -> Self {
        Self { name: name.into(), records: Mutex::new(records.into()), clock }
    }

    pub fn remaining(&self) -> usize {
        self.records.lock().expect("records lock").len()
    }
}

impl AgentBackend for ReplayBackend {
    fn name(&self) -> &str {
        &self.name
    }

    fn complete(&self, req: &CompletionRequest<'_>) -> Result<ChatTurn, BackendError> {
        let mut records = self.records.lock().expect("records lock");
        let Some(next) = records.pop_front() else {
            return Err(BackendError::Protocol("replay exhausted: more calls than recorded".into()));
        };
        if next.stage != req.stage {
            return Err(BackendError::Protocol(format!(
                "replay diverged: recorded call in {} but asked in {}",
                next.stage, req.stage
            )));
        }
        if let Some(c) = &self.clock {
            c.advance(Duration::from_millis(next.latency_ms));
        }
        next.outcome.into_result()
    }
}
