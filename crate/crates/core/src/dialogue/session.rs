use std::collections::BTreeMap;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use super::{IntentContract, Stage, TemporalSpec};
use crate::backend::ChatTurn;
use crate::catalog::{CostQuote, OfferingId};
use crate::gateway::{finding_key, OrderPayload, OrderRecord, RuleId, ToolLedger};
use crate::money::Cents;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Trajectory {
    #[default]
    OrderManagement,
    ServiceResourceSupport,
    Troubleshooting,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FailureCause {
    Timeout,
    ToolCallingUnsupported,
    DirectOrder,
    Aborted,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Proposal {
    pub proposal_id: String,
    pub bundle: Vec<OfferingId>,
    /// Computed by the catalog, not the agent.
    pub quote: CostQuote,
    pub rationale: String,
    /// Ledger ids of the catalog lookups made in the proposing stage.
    pub grounding_evidence: Vec<String>,
    /// Total the agent claimed, when it stated one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stated_total: Option<Cents>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FindingSource {
    Proposal,
    Text,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all_fields = "camelCase")]
pub enum FindingKind {
    /// A product that does not resolve in the catalog.
    Hallucination { name: String, source: FindingSource },
    /// A service or resource specification named to the user.
    ServiceMention { name: String },
    DirectOrderAttempt { call_id: String },
    NoGroundedLookup,
    ParseFailure { detail: String },
    BudgetWarning { quote: Cents, budget: Cents },
    DomainConflict { constraint: String, task_id: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Finding {
    pub stage: Stage,
    #[serde(flatten)]
    pub kind: FindingKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rule: Option<RuleId>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all_fields = "camelCase")]
pub enum EventKind {
    StageChanged { from: Stage, to: Stage },
    ProposalAdded { proposal_id: String, bundle: Vec<OfferingId>, total_cost: Cents },
    HallucinationFinding { name: String },
    QuoteUpdated { total_cost: Cents, duration_days: u32, within_budget: Option<bool> },
    DraftReady { order_id: String, total_cost: Cents },
    OrderPlaced { record_id: u64, order_id: String },
    Aborted { cause: FailureCause, reason: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SessionEvent {
    pub session_id: String,
    pub seq: u64,
    pub timestamp: DateTime<Utc>,
    #[serde(flatten)]
    pub kind: EventKind,
}

/// One co-creation dialogue. All fields are public for inspection; mutate
/// through [`super::CoCreationEngine`] only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct DialogueSession {
    pub session_id: String,
    pub trajectory: Trajectory,
    pub stage: Stage,
    pub contract: IntentContract,
    pub transcript: Vec<ChatTurn>,
    pub proposals: Vec<Proposal>,
    pub selected: Option<Vec<OfferingId>>,
    pub temporal: Option<TemporalSpec>,
    pub quote: Option<CostQuote>,
    pub order_draft: Option<OrderPayload>,
    pub order_record: Option<OrderRecord>,
    pub ledger: ToolLedger,
    pub findings: Vec<Finding>,
    pub events: Vec<SessionEvent>,
    pub assumptions: Vec<String>,
    /// Slice profile used when the intent names none.
    pub default_slice_profile: Option<String>,
    /// Milliseconds spent in each stage that has been left.
    pub timings: BTreeMap<Stage, u64>,
    pub created_at: DateTime<Utc>,
    pub created_ms: u64,
    pub stage_entered_ms: u64,
    pub last_activity_ms: u64,
    pub failure: Option<FailureCause>,
    pub abort_reason: Option<String>,
}

impl DialogueSession {
    pub fn is_terminal(&self) -> bool {
        self.stage.is_terminal()
    }

    /// Stages visited, in order, starting with Q1.
    pub fn stage_history(&self) -> Vec<Stage> {
        let mut out = vec![Stage::Ingestion];
        out.extend(self.events.iter().filter_map(|e| match e.kind {
            EventKind::StageChanged { to, .. } => Some(to),
            _ => None,
        }));
        out
    }

    /// Total dialogue time in milliseconds, once the session is Confirmed.
    pub fn dialogue_ms(&self) -> Option<u64> {
        (self.stage == Stage::Confirmed).then(|| self.timings.values().sum())
    }

    /// Distinct fabricated product names, first occurrence kept.
    pub fn hallucinated_names(&self) -> Vec<String> {
        let mut keys = Vec::new();
        let mut names = Vec::new();
        for f in &self.findings {
            if let FindingKind::Hallucination { name, .. } = &f.kind {
                let k = finding_key(name);
                if !keys.contains(&k) {
                    keys.push(k);
                    names.push(name.clone());
                }
            }
        }
        names
    }

    pub fn direct_order_attempts(&self) -> usize {
        self.findings.iter().filter(|f| matches!(f.kind, FindingKind::DirectOrderAttempt { .. })).count()
    }
}
