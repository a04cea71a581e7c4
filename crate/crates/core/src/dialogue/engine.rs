//! Drives sessions through Q1..Q5. The engine owns all state changes: agents
//! only ever see the transcript and reach the catalog through the gateway.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;
use std::time::Duration;

use serde_json::{json, Value};
use thiserror::Error;

use super::session::FindingSource;
use super::{
    extract, ContractStatus, DialogueSession, EventKind, FailureCause, Finding, FindingKind, IntentContract, Proposal,
    QosConstraint, SessionEvent, Stage, TemporalSpec, Trajectory,
};
use crate::backend::{AgentBackend, BackendError, ChatTurn, CompletionRequest};
use crate::bus::{AgentBus, AgentMessage, DomainTask, SenderRole};
use crate::catalog::{CatalogError, OfferingId, OfferingRef};
use crate::gateway::{
    build_order_payload, CallOrigin, GatewayError, OrderParameters, OrderPayload, OrderRecord, RuleId, SkillPolicy,
    ToolCall, ToolGateway, ToolName, ToolStatus,
};
use crate::memory::{
    Actor, CaseFile, CaseSnapshot, ConstraintSnapshot, ConstraintValue, DerivedComposition, DomainResult, MemoryError,
    MemoryStore, NewDecision, TaskStatus, TodoTask,
};
use crate::money::Cents;

pub const DEFAULT_TURN_TIMEOUT: Duration = Duration::from_secs(20 * 60);

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EngineConfig {
    /// Longest wait for one backend turn.
    pub turn_timeout: Duration,
    /// Backend calls allowed within one stage operation.
    pub max_agent_rounds: usize,
    pub domain_timeout: Duration,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self { turn_timeout: DEFAULT_TURN_TIMEOUT, max_agent_rounds: 8, domain_timeout: Duration::from_secs(5) }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SessionOptions {
    pub trajectory: Trajectory,
    /// Generated when absent.
    pub session_id: Option<String>,
    pub default_slice_profile: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Selection {
    Index(usize),
    Bundle(Vec<OfferingRef>),
}

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("intent text is empty")]
    EmptyIntent,
    #[error("session id `{0}` may only use letters, digits, `-`, `_` and `.`")]
    InvalidSessionId(String),
    #[error("operation needs stage {expected}, session is at {actual}")]
    WrongStage { expected: Stage, actual: Stage },
    #[error("session already ended ({0})")]
    TerminalStage(Stage),
    #[error("trajectory {0:?} only records the transcript")]
    UnsupportedTrajectory(Trajectory),
    #[error("not confirmed: {0}")]
    NotConfirmed(String),
    #[error("invalid selection: {0}")]
    InvalidSelection(String),
    #[error("invalid date: {0}")]
    InvalidDate(String),
    #[error("products were proposed without a catalog lookup in this stage")]
    NoGroundedLookup,
    #[error("missing order parameters: {}", .0.join(", "))]
    MissingParameter(Vec<String>),
    #[error("session aborted ({cause:?}): {reason}")]
    Aborted { cause: FailureCause, reason: String },
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Memory(#[from] MemoryError),
}

const Q1_INSTRUCTION: &str = "Extract the request above into one ```json block with the keys location, budgetEur, \
budgetPeriod, durationDays, sliceProfile, qos (a list of {metric, comparator, value, unit}) and policies (a list of \
strings). Use null for anything the request does not state.";

const Q2_INSTRUCTION: &str = "Search the catalog and propose alternative product bundles that satisfy the request. \
Answer with one ```json block shaped {\"proposals\": [{\"items\": [{\"name\": ..., \"tier\": ...}], \
\"statedTotalEur\": ..., \"rationale\": ...}]}.";

const Q4_INSTRUCTION: &str = "Restate the operational lifecycle as one ```json block {\"startDate\": \"YYYY-MM-DD\", \
\"durationDays\": n}.";

const Q5_INSTRUCTION: &str = "Present this order draft to the user, including its total cost, and ask for an explicit \
confirmation. Do not place the order yourself.";

const RETRY_NOTE: &str = "Your last reply contained a tool call as plain text. Use the structured tool-calling \
interface, or answer without tools.";

fn system_prompt(policy: &SkillPolicy) -> String {
    format!(
        "You are a network service co-creation assistant. You help a user turn a service request into a catalog \
         order through five steps: intent, alternatives, combination, lifecycle and confirmation. Use the provided \
         tools for every catalog fact. Rules:\n{}",
        policy.prompt_text()
    )
}

fn valid_session_id(id: &str) -> bool {
    !id.is_empty()
        && id.len() <= 128
        && !id.starts_with('.')
        && id.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'))
}

/// First JSON object in `text`; fenced blocks are found the same way.
pub(crate) fn json_object(text: &str) -> Option<Value> {
    text.match_indices('{').find_map(|(i, _)| {
        match serde_json::Deserializer::from_str(&text[i..]).into_iter::<Value>().next() {
            Some(Ok(v @ Value::Object(_))) => Some(v),
            _ => None,
        }
    })
}

fn euros_value(v: &Value) -> Option<Cents> {
    let x = v.as_f64()?;
    (x.is_finite() && x >= 0.0).then(|| Cents((x * 100.0).round() as u64))
}

fn item_ref(v: &Value) -> Option<OfferingRef> {
    match v {
        Value::String(s) if !s.trim().is_empty() => Some(OfferingRef::named(s.trim(), None)),
        Value::Object(o) => {
            if let Some(name) = o.get("name").and_then(Value::as_str).filter(|n| !n.trim().is_empty()) {
                Some(OfferingRef::named(name.trim(), o.get("tier").and_then(Value::as_str)))
            } else {
                o.get("id").and_then(Value::as_str).map(OfferingRef::id)
            }
        }
        _ => None,
    }
}

/// Default and drafted to-do ids belonging to a stage.
fn stage_tasks(stage: Stage) -> Option<(&'static str, &'static str)> {
    match stage {
        Stage::Alternatives => Some(("t-alternatives", "t-q2-")),
        Stage::Combination => Some(("t-combination", "t-q3-")),
        Stage::Temporal => Some(("t-temporal", "t-q4-")),
        Stage::Confirmation => Some(("t-confirmation", "t-q5-")),
        _ => None,
    }
}

#[derive(Debug)]
pub struct CoCreationEngine {
    gateway: Arc<ToolGateway>,
    memory: Arc<MemoryStore>,
    bus: Option<Arc<AgentBus>>,
    config: EngineConfig,
}

impl CoCreationEngine {
    pub fn new(gateway: Arc<ToolGateway>, memory: Arc<MemoryStore>, config: EngineConfig) -> Self {
        Self { gateway, memory, bus: None, config }
    }

    /// Dispatches domain tasks over `bus` when a combination is selected.
    pub fn with_bus(mut self, bus: Arc<AgentBus>) -> Self {
        self.bus = Some(bus);
        self
    }

    pub fn gateway(&self) -> &Arc<ToolGateway> {
        &self.gateway
    }

    pub fn memory(&self) -> &Arc<MemoryStore> {
        &self.memory
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    fn now(&self) -> u64 {
        self.gateway.clock().now_ms()
    }

    pub fn open_session(&self, intent_text: &str, opts: SessionOptions) -> Result<DialogueSession, EngineError> {
        let text = intent_text.trim();
        if text.is_empty() {
            return Err(EngineError::EmptyIntent);
        }
        let session_id = match opts.session_id {
            Some(id) if valid_session_id(&id) => id,
            Some(id) => return Err(EngineError::InvalidSessionId(id)),
            None => format!("s-{}", &uuid::Uuid::new_v4().simple().to_string()[..12]),
        };
        let contract = IntentContract::draft(text);
        self.memory.create_case(&session_id, contract.clone())?;
        self.memory.init_working_state(&session_id, None)?;
        let now = self.now();
        let s = DialogueSession {
            session_id,
            trajectory: opts.trajectory,
            stage: Stage::Ingestion,
            contract,
            transcript: vec![ChatTurn::system(system_prompt(&self.gateway.policy())), ChatTurn::user(text)],
            proposals: Vec::new(),
            selected: None,
            temporal: None,
            quote: None,
            order_draft: None,
            order_record: None,
            ledger: Default::default(),
            findings: Vec::new(),
            events: Vec::new(),
            assumptions: Vec::new(),
            default_slice_profile: opts.default_slice_profile,
            timings: BTreeMap::new(),
            created_at: self.gateway.clock().timestamp(),
            created_ms: now,
            stage_entered_ms: now,
            last_activity_ms: now,
            failure: None,
            abort_reason: None,
        };
        self.record(&s, Actor::User, format!("intent received ({:?})", s.trajectory), Vec::new())?;
        Ok(s)
    }

    fn record(
        &self,
        s: &DialogueSession,
        actor: Actor,
        summary: impl Into<String>,
        refs: Vec<String>,
    ) -> Result<(), EngineError> {
        self.memory.record_decision(&s.session_id, NewDecision::new(s.stage, actor, summary).with_refs(refs))?;
        Ok(())
    }

    fn emit(&self, s: &mut DialogueSession, kind: EventKind) {
        let seq = s.events.len() as u64 + 1;
        let event = SessionEvent { session_id: s.session_id.clone(), seq, timestamp: self.gateway.clock().timestamp(), kind };
        s.events.push(event);
    }

    fn transition(&self, s: &mut DialogueSession, to: Stage) {
        let now = self.now();
        let from = s.stage;
        *s.timings.entry(from).or_default() += now.saturating_sub(s.stage_entered_ms);
        s.stage = to;
        s.stage_entered_ms = now;
        s.last_activity_ms = now;
        self.emit(s, EventKind::StageChanged { from, to });
        let status = if to == Stage::Aborted { TaskStatus::Blocked } else { TaskStatus::Done };
        self.memory.update_working(&s.session_id, |w| {
            w.stage_mirror = to;
            if let Some((id, prefix)) = stage_tasks(from) {
                let ids: Vec<String> = w
                    .todo
                    .iter()
                    .filter(|t| t.task_id == id || t.task_id.starts_with(prefix))
                    .map(|t| t.task_id.clone())
                    .collect();
                for t in ids {
                    w.finish(&t, status);
                }
            }
        });
    }

    fn expect_stage(&self, s: &DialogueSession, expected: Stage) -> Result<(), EngineError> {
        if s.trajectory != Trajectory::OrderManagement {
            return Err(EngineError::UnsupportedTrajectory(s.trajectory));
        }
        if s.stage.is_terminal() {
            return Err(EngineError::TerminalStage(s.stage));
        }
        if s.stage != expected {
            return Err(EngineError::WrongStage { expected, actual: s.stage });
        }
        Ok(())
    }

    fn snapshot(&self, s: &DialogueSession) -> CaseSnapshot {
        let constraints = self
            .memory
            .working_state(&s.session_id)
            .map(|w| w.active_constraints.into_values().collect())
            .unwrap_or_default();
        let derived_composition = s.selected.as_ref().map(|bundle| {
            let domains = bundle
                .iter()
                .map(|id| {
                    let d = self
                        .gateway
                        .catalog()
                        .decompose_offering(id)
                        .map(|t| t.domains().map(str::to_owned).collect())
                        .unwrap_or_default();
                    (id.clone(), d)
                })
                .collect();
            DerivedComposition {
                bundle: bundle.clone(),
                temporal: s.temporal,
                parameters: self.parameters(s),
                domains,
            }
        });
        CaseSnapshot {
            canonical_intent: s.contract.clone(),
            constraints,
            assumptions: s.assumptions.clone(),
            derived_composition,
        }
    }

    /// Persists the session's case file.
    pub fn checkpoint(&self, s: &DialogueSession) -> Result<CaseFile, EngineError> {
        Ok(self.memory.checkpoint(&s.session_id, self.snapshot(s))?)
    }

    fn parameters(&self, s: &DialogueSession) -> OrderParameters {
        OrderParameters { city_name: s.contract.location.clone(), slice_profile: s.contract.slice_profile.clone() }
    }

    fn finding(&self, s: &mut DialogueSession, kind: FindingKind, rule: Option<RuleId>) {
        s.findings.push(Finding { stage: s.stage, kind, rule });
    }

    fn hallucination(&self, s: &mut DialogueSession, name: &str, source: FindingSource) {
        let is_new = !s.hallucinated_names().iter().any(|n| crate::gateway::finding_key(n) == crate::gateway::finding_key(name));
        self.finding(s, FindingKind::Hallucination { name: name.into(), source }, Some(RuleId::R3));
        if is_new {
            self.emit(s, EventKind::HallucinationFinding { name: name.into() });
        }
    }

    fn audit_text(&self, s: &mut DialogueSession, text: &str) {
        let found = self.gateway.audit_response(text);
        for name in found.hallucinated {
            self.hallucination(s, &name, FindingSource::Text);
        }
        for name in found.service_mentions {
            self.finding(s, FindingKind::ServiceMention { name }, Some(RuleId::R5));
        }
    }

    /// Ends the session with `cause` from inside an operation.
    fn fail(&self, s: &mut DialogueSession, cause: FailureCause, reason: String) -> EngineError {
        if !s.stage.is_terminal() {
            self.abort_with(s, cause, &reason);
        }
        EngineError::Aborted { cause, reason }
    }

    /// One user turn followed by backend turns until the backend answers
    /// without tool calls. Returns the last non-empty assistant text.
    fn run_agent(&self, s: &mut DialogueSession, backend: &dyn AgentBackend, content: String) -> Result<String, EngineError> {
        let stage = s.stage;
        s.transcript.push(ChatTurn::user(content));
        let tools = self.gateway.list_tools();
        let mut parse_failures = 0;
        let mut order_attempts = 0;
        let mut last_text = String::new();
        for _ in 0..self.config.max_agent_rounds {
            let result = {
                let req = CompletionRequest {
                    session_id: &s.session_id,
                    stage,
                    history: &s.transcript,
                    tools: &tools,
                    contract: &s.contract,
                    draft: s.order_draft.as_ref(),
                    timeout: self.config.turn_timeout,
                };
                backend.complete(&req)
            };
            let turn = match result {
                Ok(t) => t,
                Err(BackendError::Timeout(d)) => {
                    return Err(self.fail(s, FailureCause::Timeout, format!("backend gave no output within {}s", d.as_secs())))
                }
                Err(BackendError::ToolCallingUnsupported) => {
                    return Err(self.fail(s, FailureCause::ToolCallingUnsupported, "backend does not support tool calling".into()))
                }
                Err(e) => return Err(self.fail(s, FailureCause::Aborted, e.to_string())),
            };
            s.last_activity_ms = self.now();
            let failure = turn.parse_failure.clone();
            let calls = turn.tool_calls.clone();
            let text = turn.content.clone();
            s.transcript.push(turn);
            if !text.trim().is_empty() {
                self.audit_text(s, &text);
                last_text = text;
            }
            if let Some(detail) = failure {
                parse_failures += 1;
                self.finding(s, FindingKind::ParseFailure { detail: detail.clone() }, None);
                if parse_failures >= 2 {
                    return Err(self.fail(s, FailureCause::ToolCallingUnsupported, format!("tool calls arrived as text twice: {detail}")));
                }
                s.transcript.push(ChatTurn::user(RETRY_NOTE));
                continue;
            }
            if calls.is_empty() {
                return Ok(last_text);
            }
            for c in calls {
                let ledger_id = format!("c{:04}", s.ledger.len() + 1);
                let is_order = ToolName::parse(&c.tool_name) == Some(ToolName::OrderPlace);
                let call = ToolCall {
                    call_id: ledger_id.clone(),
                    tool_name: c.tool_name,
                    arguments: c.arguments,
                    session_id: s.session_id.clone(),
                    stage,
                    origin: CallOrigin::Agent,
                };
                let result = self.gateway.invoke(call, &mut s.ledger, s.order_draft.as_ref());
                if is_order {
                    order_attempts += 1;
                    self.finding(s, FindingKind::DirectOrderAttempt { call_id: ledger_id.clone() }, Some(RuleId::R4));
                    if result.status == ToolStatus::Ok {
                        // only reachable with R4 switched off
                        if let Ok(r) = serde_json::from_value::<OrderRecord>(result.payload["order"].clone()) {
                            s.order_record = Some(r);
                        }
                    }
                }
                let body = serde_json::to_string(&result).expect("tool result serializes");
                s.transcript.push(ChatTurn::tool(c.call_id, body));
            }
            if order_attempts >= 2 {
                return Err(self.fail(s, FailureCause::DirectOrder, "agent kept trying to place the order itself".into()));
            }
        }
        Err(self.fail(
            s,
            FailureCause::Aborted,
            format!("no final answer after {} backend turns", self.config.max_agent_rounds),
        ))
    }

    /// Q1: grounds the intent. Budget and duration come from the intent text
    /// alone; location, QoS and policies may come from the backend.
    pub fn ground_intent<'s>(&self, s: &'s mut DialogueSession, backend: &dyn AgentBackend) -> Result<&'s IntentContract, EngineError> {
        self.expect_stage(s, Stage::Ingestion)?;
        let text = self.run_agent(s, backend, Q1_INSTRUCTION.into())?;
        let reply = json_object(&text).unwrap_or(Value::Null);
        let goal = s.contract.goal_text.clone();

        let backend_location = reply
            .get("location")
            .and_then(Value::as_str)
            .map(str::trim)
            .filter(|l| !l.is_empty() && !matches!(l.to_lowercase().as_str(), "unspecified" | "unknown" | "none" | "null"))
            .map(str::to_owned);
        let qos: Vec<QosConstraint> = reply
            .get("qos")
            .and_then(|q| serde_json::from_value(q.clone()).ok())
            .filter(|q: &Vec<QosConstraint>| !q.is_empty())
            .unwrap_or_else(|| extract::qos_constraints(&goal));
        let policies: Vec<String> = reply
            .get("policies")
            .and_then(Value::as_array)
            .map(|a| a.iter().filter_map(Value::as_str).map(str::to_owned).collect())
            .unwrap_or_default();
        if reply.get("budgetEur").is_some_and(|b| !b.is_null()) && extract::budget(&goal).is_none() {
            s.assumptions.push("budget stated by the agent but not in the request; ignored".into());
        }

        let c = &mut s.contract;
        c.budget = extract::budget(&goal);
        c.duration_hint_days = extract::duration_days(&goal);
        c.location = backend_location.or_else(|| extract::city(&goal));
        c.qos_constraints = qos;
        c.policy_constraints = policies;
        c.slice_profile = extract::slice_profile(&goal).or_else(|| s.default_slice_profile.clone());
        c.advance(ContractStatus::Grounded);

        let mut facts = Vec::new();
        if let Some(b) = &c.budget {
            facts.push(ConstraintSnapshot { name: "budget".into(), value: ConstraintValue::at_most(b.amount.get() as i64), source: "intent".into() });
        }
        if let Some(d) = c.duration_hint_days {
            facts.push(ConstraintSnapshot { name: "durationDays".into(), value: ConstraintValue::exact(d.to_string()), source: "intent".into() });
        }
        if let Some(l) = &c.location {
            facts.push(ConstraintSnapshot { name: "cityName".into(), value: ConstraintValue::exact(l.clone()), source: "intent".into() });
        }
        let summary = format!(
            "intent grounded: location={}, budget={}, durationDays={}, sliceProfile={}",
            c.location.as_deref().unwrap_or("unspecified"),
            c.budget.as_ref().map(|b| b.amount.to_string()).unwrap_or_else(|| "none".into()),
            c.duration_hint_days.map(|d| d.to_string()).unwrap_or_else(|| "none".into()),
            c.slice_profile.as_deref().unwrap_or("none"),
        );
        self.memory.update_working(&s.session_id, |w| facts.into_iter().for_each(|f| w.assert_constraint(f)));
        if s.contract.slice_profile.is_some() && extract::slice_profile(&goal).is_none() {
            s.assumptions.push("slice profile taken from the scenario default".into());
        }
        self.record(s, Actor::Engine, summary, Vec::new())?;
        self.transition(s, Stage::Alternatives);
        self.checkpoint(s)?;
        Ok(&s.contract)
    }

    /// Q2: asks for alternatives. Every stored bundle member resolves in the
    /// catalog; unresolvable items become findings.
    pub fn propose_alternatives<'s>(
        &self,
        s: &'s mut DialogueSession,
        backend: &dyn AgentBackend,
        user_text: Option<&str>,
    ) -> Result<&'s [Proposal], EngineError> {
        self.expect_stage(s, Stage::Alternatives)?;
        let content = match user_text {
            Some(t) if !t.trim().is_empty() => format!("{}\n\n{Q2_INSTRUCTION}", t.trim()),
            _ => Q2_INSTRUCTION.to_owned(),
        };
        let text = self.run_agent(s, backend, content)?;
        let reply = json_object(&text).unwrap_or(Value::Null);
        let raw = reply.get("proposals").and_then(Value::as_array).cloned().unwrap_or_default();

        let catalog = self.gateway.catalog().clone();
        let mut candidates = Vec::new();
        for p in &raw {
            let mut bundle: Vec<OfferingId> = Vec::new();
            for item in p.get("items").and_then(Value::as_array).into_iter().flatten() {
                let Some(r) = item_ref(item) else { continue };
                match catalog.resolve_offering(&r) {
                    Ok(o) => {
                        if !bundle.contains(&o.id) {
                            bundle.push(o.id.clone());
                        }
                    }
                    Err(CatalogError::Ambiguous { name, tiers }) => {
                        s.assumptions.push(format!("proposal item `{name}` names no tier ({}); dropped", tiers.join(", ")))
                    }
                    Err(_) => self.hallucination(s, &r.to_string(), FindingSource::Proposal),
                }
            }
            let stated = p.get("statedTotalEur").and_then(euros_value);
            let rationale = p.get("rationale").and_then(Value::as_str).unwrap_or_default().to_owned();
            if !bundle.is_empty() {
                candidates.push((bundle, stated, rationale));
            }
        }

        let evidence: Vec<String> = s
            .ledger
            .entries()
            .iter()
            .filter(|e| e.call.stage == Stage::Alternatives && e.call.tool().is_some_and(ToolName::is_catalog_lookup))
            .map(|e| e.call.call_id.clone())
            .collect();
        if self.gateway.policy().is_active(RuleId::R2) && evidence.is_empty() {
            self.finding(s, FindingKind::NoGroundedLookup, Some(RuleId::R2));
            self.record(s, Actor::Engine, format!("{} proposals rejected: no catalog lookup", candidates.len()), Vec::new())?;
            return Err(EngineError::NoGroundedLookup);
        }

        let days = s.contract.duration_hint_days.unwrap_or(7);
        let budget = s.contract.budget.as_ref().map(|b| b.amount);
        let mut added = Vec::new();
        for (bundle, stated_total, rationale) in candidates {
            let quote = catalog
                .quote(&bundle, days, budget)
                .map_err(|e| GatewayError::Integrity(format!("resolved bundle failed to quote: {e}")))?;
            let proposal_id = format!("p{}", s.proposals.len() + 1);
            self.emit(
                s,
                EventKind::ProposalAdded { proposal_id: proposal_id.clone(), bundle: bundle.clone(), total_cost: quote.total_cost },
            );
            added.push(proposal_id.clone());
            s.proposals.push(Proposal { proposal_id, bundle, quote, rationale, grounding_evidence: evidence.clone(), stated_total });
        }
        if !added.is_empty() {
            s.contract.advance(ContractStatus::Proposed);
        }
        let mut refs = added.clone();
        refs.extend(evidence);
        self.record(s, Actor::CoCreationAgent, format!("{} proposals stored", added.len()), refs)?;
        self.checkpoint(s)?;
        Ok(&s.proposals)
    }

    /// Q3: fixes the bundle and moves on to Q4.
    pub fn select_combination(&self, s: &mut DialogueSession, selection: Selection) -> Result<(), EngineError> {
        self.expect_stage(s, Stage::Alternatives)?;
        let (bundle, refs) = match selection {
            Selection::Index(i) => {
                let p = s
                    .proposals
                    .get(i)
                    .ok_or_else(|| EngineError::InvalidSelection(format!("no proposal {i}; {} stored", s.proposals.len())))?;
                (p.bundle.clone(), vec![p.proposal_id.clone()])
            }
            Selection::Bundle(items) => {
                if items.is_empty() {
                    return Err(EngineError::InvalidSelection("bundle is empty".into()));
                }
                let mut ids: Vec<OfferingId> = Vec::new();
                for r in &items {
                    let o = self
                        .gateway
                        .catalog()
                        .resolve_offering(r)
                        .map_err(|e| EngineError::InvalidSelection(format!("{r}: {e}")))?;
                    if ids.contains(&o.id) {
                        return Err(EngineError::InvalidSelection(format!("{r} listed twice")));
                    }
                    ids.push(o.id.clone());
                }
                (ids, Vec::new())
            }
        };
        let names: Vec<String> =
            bundle.iter().filter_map(|id| self.gateway.catalog().offering(id)).map(|o| o.label()).collect();
        s.selected = Some(bundle.clone());
        s.transcript.push(ChatTurn::user(format!("I choose: {}.", names.join(", "))));
        self.record(s, Actor::User, format!("selected {}", names.join(", ")), refs)?;
        self.transition(s, Stage::Combination);
        self.dispatch_domains(s, &bundle)?;
        self.transition(s, Stage::Temporal);
        self.checkpoint(s)?;
        Ok(())
    }

    fn dispatch_domains(&self, s: &mut DialogueSession, bundle: &[OfferingId]) -> Result<(), EngineError> {
        let Some(bus) = &self.bus else { return Ok(()) };
        let catalog = self.gateway.catalog();
        let domains: BTreeSet<String> = bundle
            .iter()
            .filter_map(|id| catalog.decompose_offering(id).ok())
            .flat_map(|t| t.resources_by_domain.into_keys())
            .collect();
        let tasks: Vec<(String, DomainTask)> = domains
            .into_iter()
            .map(|d| {
                let task = DomainTask {
                    task_id: format!("t-domain-{d}"),
                    session_id: s.session_id.clone(),
                    offering_ids: bundle.to_vec(),
                    city_name: s.contract.location.clone(),
                };
                (d, task)
            })
            .collect();
        self.memory.update_working(&s.session_id, |w| {
            for (d, t) in &tasks {
                w.add_task(TodoTask {
                    task_id: t.task_id.clone(),
                    action: format!("derive {d} resources for the selected bundle"),
                    expected_output: "domain constraints".into(),
                    assignee: format!("domain:{d}"),
                    status: TaskStatus::Pending,
                });
                w.set_status(&t.task_id, TaskStatus::InProgress);
            }
        });
        let timeout = self.config.domain_timeout;
        let replies: Vec<_> = std::thread::scope(|scope| {
            let handles: Vec<_> = tasks
                .iter()
                .map(|(d, t)| {
                    let msg = AgentMessage::task(&format!("domain.{d}"), SenderRole::CoCreation, json!(t));
                    scope.spawn(move || bus.request(msg, timeout))
                })
                .collect();
            handles.into_iter().map(|h| h.join().expect("domain request thread")).collect()
        });

        let mut results = Vec::new();
        for ((d, t), reply) in tasks.iter().zip(replies) {
            match reply.map(|m| serde_json::from_value::<DomainResult>(m.payload)) {
                Ok(Ok(r)) => results.push(r),
                Ok(Err(e)) => {
                    self.memory.update_working(&s.session_id, |w| w.finish(&t.task_id, TaskStatus::Blocked));
                    s.assumptions.push(format!("domain {d} sent an unreadable result: {e}"));
                }
                Err(e) => {
                    self.memory.update_working(&s.session_id, |w| w.finish(&t.task_id, TaskStatus::Blocked));
                    s.assumptions.push(format!("domain {d} gave no result: {e}"));
                }
            }
        }
        let report = self.memory.update_working(&s.session_id, |w| {
            let (next, report) = w.reconcile(&results);
            *w = next;
            report
        });
        for r in &results {
            self.record(
                s,
                Actor::DomainExpert(r.domain.clone()),
                format!("{} constraints", r.constraints.len()),
                vec![r.task_id.clone()],
            )?;
        }
        for c in report.map(|r| r.conflicts).unwrap_or_default() {
            s.assumptions.push(format!(
                "conflict on {}: {} ({}) vs {} ({}); existing value kept",
                c.constraint, c.existing.value, c.existing.source, c.incoming.value, c.incoming.source
            ));
            self.finding(s, FindingKind::DomainConflict { constraint: c.constraint, task_id: c.task_id }, None);
        }
        Ok(())
    }

    /// Q4 through the agent: it restates the dates the user gave, and the
    /// restated dates are applied.
    pub fn negotiate_temporal(
        &self,
        s: &mut DialogueSession,
        backend: &dyn AgentBackend,
        user_text: &str,
    ) -> Result<TemporalSpec, EngineError> {
        self.expect_stage(s, Stage::Temporal)?;
        let text = self.run_agent(s, backend, format!("{}\n\n{Q4_INSTRUCTION}", user_text.trim()))?;
        let reply = json_object(&text).unwrap_or(Value::Null);
        let start = reply
            .get("startDate")
            .and_then(Value::as_str)
            .and_then(|d| d.parse().ok())
            .ok_or_else(|| EngineError::InvalidDate("agent gave no start date".into()))?;
        let days = reply
            .get("durationDays")
            .and_then(Value::as_u64)
            .and_then(|d| u32::try_from(d).ok())
            .ok_or_else(|| EngineError::InvalidDate("agent gave no duration".into()))?;
        let spec = TemporalSpec { start_date: start, duration_days: days };
        self.set_temporal(s, spec)?;
        Ok(spec)
    }

    /// Q4: stores the lifecycle and re-quotes. A quote over budget is a
    /// warning only.
    pub fn set_temporal(&self, s: &mut DialogueSession, spec: TemporalSpec) -> Result<(), EngineError> {
        self.expect_stage(s, Stage::Temporal)?;
        if spec.duration_days < 1 {
            return Err(EngineError::InvalidDate("duration must be at least one day".into()));
        }
        let created = s.created_at.date_naive();
        if spec.start_date < created {
            return Err(EngineError::InvalidDate(format!("start {} is before the session date {created}", spec.start_date)));
        }
        let bundle = s.selected.clone().ok_or_else(|| EngineError::InvalidSelection("no bundle selected".into()))?;
        let budget = s.contract.budget.as_ref().map(|b| b.amount);
        let quote = self
            .gateway
            .catalog()
            .quote(&bundle, spec.duration_days, budget)
            .map_err(|e| GatewayError::Integrity(e.to_string()))?;
        self.emit(
            s,
            EventKind::QuoteUpdated { total_cost: quote.total_cost, duration_days: quote.duration_days, within_budget: quote.within_budget },
        );
        if let (Some(false), Some(b)) = (quote.within_budget, budget) {
            self.finding(s, FindingKind::BudgetWarning { quote: quote.total_cost, budget: b }, None);
            s.assumptions.push(format!("quote {} exceeds the budget {b}", quote.total_cost));
        }
        let summary = format!("lifecycle {} for {} days, quote {}", spec.start_date, spec.duration_days, quote.total_cost);
        s.temporal = Some(spec);
        s.quote = Some(quote);
        self.memory.update_working(&s.session_id, |w| {
            w.assert_constraint(ConstraintSnapshot {
                name: "startDate".into(),
                value: ConstraintValue::exact(spec.start_date.to_string()),
                source: "user".into(),
            })
        });
        self.record(s, Actor::User, summary, Vec::new())?;
        self.transition(s, Stage::Confirmation);
        self.checkpoint(s)?;
        Ok(())
    }

    /// Q5: serializes the order draft. Rebuilding gives identical bytes.
    pub fn build_order_draft<'s>(&self, s: &'s mut DialogueSession) -> Result<&'s OrderPayload, EngineError> {
        self.expect_stage(s, Stage::Confirmation)?;
        let bundle = s.selected.clone().ok_or_else(|| EngineError::InvalidSelection("no bundle selected".into()))?;
        let temporal = s.temporal.ok_or_else(|| EngineError::InvalidDate("no lifecycle set".into()))?;
        let draft = build_order_payload(self.gateway.catalog(), &s.session_id, &bundle, &temporal, &self.parameters(s))
            .map_err(|e| match e {
                GatewayError::MissingParameter(v) => EngineError::MissingParameter(v),
                other => EngineError::Gateway(other),
            })?;
        self.emit(s, EventKind::DraftReady { order_id: draft.order_id.clone(), total_cost: draft.total_cost });
        self.record(s, Actor::Engine, format!("order draft {} totalling {}", draft.order_id, draft.total_cost), vec![draft.order_id.clone()])?;
        s.order_draft = Some(draft);
        self.checkpoint(s)?;
        Ok(s.order_draft.as_ref().expect("just stored"))
    }

    /// Q5: the agent presents the draft. Returns its text.
    pub fn present_draft(
        &self,
        s: &mut DialogueSession,
        backend: &dyn AgentBackend,
        user_text: Option<&str>,
    ) -> Result<String, EngineError> {
        self.expect_stage(s, Stage::Confirmation)?;
        if s.order_draft.is_none() {
            self.build_order_draft(s)?;
        }
        let draft = s.order_draft.as_ref().expect("draft present").canonical_string();
        let lead = user_text.map(str::trim).filter(|t| !t.is_empty()).map(|t| format!("{t}\n\n")).unwrap_or_default();
        self.run_agent(s, backend, format!("{lead}{Q5_INSTRUCTION}\n```json\n{draft}\n```"))
    }

    /// The user's explicit confirmation: mints a token and places the draft.
    pub fn confirm(&self, s: &mut DialogueSession) -> Result<OrderRecord, EngineError> {
        if s.stage != Stage::Confirmation || s.order_draft.is_none() || s.trajectory != Trajectory::OrderManagement {
            return Err(EngineError::NotConfirmed(format!("session is at {} without a pending draft", s.stage)));
        }
        let token = self.gateway.mint_token(&s.session_id);
        let call_id = format!("c{:04}", s.ledger.len() + 1);
        let call = ToolCall {
            call_id: call_id.clone(),
            tool_name: ToolName::OrderPlace.as_str().into(),
            arguments: json!({ "confirmationToken": token.token_id }),
            session_id: s.session_id.clone(),
            stage: Stage::Confirmation,
            origin: CallOrigin::Engine,
        };
        s.transcript.push(ChatTurn::user("I confirm the order."));
        let result = self.gateway.invoke(call, &mut s.ledger, s.order_draft.as_ref());
        match result.status {
            ToolStatus::Ok => {}
            ToolStatus::Denied => {
                let rule = result.rule.unwrap_or(RuleId::R4);
                let reason = result.payload["reason"].as_str().unwrap_or("denied").to_owned();
                return Err(GatewayError::Denied(rule, reason).into());
            }
            ToolStatus::Error => {
                let msg = result.payload["error"].as_str().unwrap_or("order placement failed").to_owned();
                return Err(GatewayError::Integrity(msg).into());
            }
        }
        let record: OrderRecord = serde_json::from_value(result.payload["order"].clone())
            .map_err(|e| GatewayError::Integrity(format!("order result unreadable: {e}")))?;
        self.record(s, Actor::User, "explicit confirmation", vec![call_id.clone()])?;
        s.order_record = Some(record.clone());
        s.contract.advance(ContractStatus::Confirmed);
        self.transition(s, Stage::Confirmed);
        self.emit(s, EventKind::OrderPlaced { record_id: record.record_id, order_id: record.order.order_id.clone() });
        self.record(s, Actor::Engine, format!("order {} placed as record {}", record.order.order_id, record.record_id), vec![call_id])?;
        self.checkpoint(s)?;
        Ok(record)
    }

    /// User cancel.
    pub fn abort(&self, s: &mut DialogueSession, reason: &str) -> Result<(), EngineError> {
        if s.stage.is_terminal() {
            return Err(EngineError::TerminalStage(s.stage));
        }
        self.abort_with(s, FailureCause::Aborted, reason);
        Ok(())
    }

    /// Aborts with a cause; a no-op on ended sessions.
    pub fn abort_with(&self, s: &mut DialogueSession, cause: FailureCause, reason: &str) {
        if s.stage.is_terminal() {
            return;
        }
        s.failure = Some(cause);
        s.abort_reason = Some(reason.to_owned());
        s.contract.advance(ContractStatus::Aborted);
        let at = s.stage;
        self.transition(s, Stage::Aborted);
        self.emit(s, EventKind::Aborted { cause, reason: reason.to_owned() });
        let logged = self
            .memory
            .record_decision(&s.session_id, NewDecision::new(at, Actor::Engine, format!("aborted ({cause:?}): {reason}")))
            .map(|_| ())
            .and_then(|_| self.memory.checkpoint(&s.session_id, self.snapshot(s)).map(|_| ()));
        if let Err(e) = logged {
            tracing::warn!(session = %s.session_id, error = %e, "abort not persisted");
        }
    }

    /// Aborts with cause Timeout when nothing happened for `idle`.
    pub fn abort_if_idle(&self, s: &mut DialogueSession, idle: Duration) -> bool {
        let quiet = self.now().saturating_sub(s.last_activity_ms);
        if s.stage.is_terminal() || quiet < idle.as_millis() as u64 {
            return false;
        }
        self.abort_with(s, FailureCause::Timeout, &format!("no activity for {} s", quiet / 1000));
        true
    }

    /// Free-text user message, routed by stage. Trajectories other than
    /// ordering only record the text.
    pub fn user_message(&self, s: &mut DialogueSession, backend: &dyn AgentBackend, text: &str) -> Result<String, EngineError> {
        if s.stage.is_terminal() {
            return Err(EngineError::TerminalStage(s.stage));
        }
        if s.trajectory != Trajectory::OrderManagement {
            s.transcript.push(ChatTurn::user(text));
            s.last_activity_ms = self.now();
            return Ok(String::new());
        }
        match s.stage {
            Stage::Ingestion => {
                if !text.trim().is_empty() {
                    s.transcript.push(ChatTurn::user(text));
                }
                self.ground_intent(s, backend)?;
                Ok(last_assistant_text(s))
            }
            Stage::Alternatives => {
                self.propose_alternatives(s, backend, Some(text))?;
                Ok(last_assistant_text(s))
            }
            Stage::Temporal => {
                self.negotiate_temporal(s, backend, text)?;
                Ok(last_assistant_text(s))
            }
            Stage::Confirmation => self.present_draft(s, backend, Some(text)),
            other => Err(EngineError::WrongStage { expected: Stage::Alternatives, actual: other }),
        }
    }
}

fn last_assistant_text(s: &DialogueSession) -> String {
    s.transcript
        .iter()
        .rev()
        .find(|t| t.role == crate::backend::Role::Assistant && !t.content.trim().is_empty())
        .map(|t| t.content.clone())
        .unwrap_or_default()
}
