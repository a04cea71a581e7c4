use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::{BenchmarkScenario, BundleItem, EvalError, GroundTruth, SelectionRule, EvaluationReport};
use crate::backend::{
    AgentBackend, AgentProfile, BackendCallRecord, BackendError, BackendSpec, ChatTurn, CompletionRequest,
    RecordingBackend, ReplayBackend,
};
use crate::catalog::{Catalog, OfferingId};
use crate::clock::ManualClock;
use crate::dialogue::{
    CoCreationEngine, DialogueSession, EngineConfig, EngineError, FailureCause, Selection, SessionOptions, Stage,
};
use crate::gateway::{OrderInventory, OrderRecord, SkillPolicy, ToolGateway};
use crate::memory::MemoryStore;

pub const OUTCOME_FORMAT_VERSION: u32 = 1;

/// Everything a run produced; enough to re-score it and to replay it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SessionOutcome {
    pub format_version: u32,
    pub scenario: BenchmarkScenario,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub backend: Option<BackendSpec>,
    pub backend_name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub backend_group: Option<String>,
    pub session: DialogueSession,
    /// Ordered, drafted or selected products, whichever the run got to.
    pub final_bundle: Vec<BundleItem>,
    pub orders: Vec<OrderRecord>,
    pub backend_calls: Vec<BackendCallRecord>,
    /// The engine error that ended the run early, if any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl SessionOutcome {
    pub fn from_json(source: &str) -> Result<Self, EvalError> {
        let o: Self = serde_json::from_str(source)
            .map_err(|e| EvalError::Parse { what: "outcome".into(), detail: e.to_string() })?;
        if o.format_version != OUTCOME_FORMAT_VERSION {
            return Err(EvalError::Parse {
                what: "outcome".into(),
                detail: format!("format version {} is not {OUTCOME_FORMAT_VERSION}", o.format_version),
            });
        }
        Ok(o)
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self, EvalError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| EvalError::Io { path: path.display().to_string(), source })?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("outcome serializes")
    }

    pub fn score(&self) -> EvaluationReport {
        super::score(self, &self.scenario.ground_truth)
    }
}

/// Charges real elapsed time to the simulated clock, for backends that take
/// real time.
#[derive(Debug)]
struct RealTime<'a> {
    inner: &'a dyn AgentBackend,
    clock: Arc<ManualClock>,
}

impl AgentBackend for RealTime<'_> {
    fn name(&self) -> &str {
        self.inner.name()
    }

    fn complete(&self, req: &CompletionRequest<'_>) -> Result<ChatTurn, BackendError> {
        let started = Instant::now();
        let r = self.inner.complete(req);
        self.clock.advance(started.elapsed());
        r
    }
}

fn session_id_for(scenario: &BenchmarkScenario, backend_name: &str) -> String {
    let tail: String =
        backend_name.chars().map(|c| if c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.') { c } else { '-' }).collect();
    format!("{}-{tail}", scenario.scenario_id)
}

/// Builds the backend named by `spec` and runs the scenario against it.
pub fn run_scenario(scenario: &BenchmarkScenario, catalog: Arc<Catalog>, spec: &BackendSpec) -> Result<SessionOutcome, EvalError> {
    let clock = Arc::new(ManualClock::new(scenario.session_start));
    let backend = spec.build(catalog.clone(), Some(clock.clone())).map_err(EvalError::Backend)?;
    let mut outcome = match spec {
        BackendSpec::Remote { .. } => {
            let timed = RealTime { inner: backend.as_ref(), clock: clock.clone() };
            run_with_backend(scenario, catalog, &timed, clock)?
        }
        _ => run_with_backend(scenario, catalog, backend.as_ref(), clock)?,
    };
    outcome.backend = Some(spec.clone());
    if let BackendSpec::Scripted { profile } = spec {
        outcome.backend_group = AgentProfile::by_name(profile).and_then(|p| p.group);
    }
    Ok(outcome)
}

/// Runs the scenario against any backend on a fresh engine, order inventory
/// and memory. Engine errors end the run and are kept in the outcome.
pub fn run_with_backend(
    scenario: &BenchmarkScenario,
    catalog: Arc<Catalog>,
    backend: &dyn AgentBackend,
    clock: Arc<ManualClock>,
) -> Result<SessionOutcome, EvalError> {
    scenario.validate()?;
    let inventory = Arc::new(OrderInventory::in_memory());
    let gateway = Arc::new(ToolGateway::new(catalog.clone(), SkillPolicy::strict(), inventory.clone(), clock.clone()));
    let memory = Arc::new(MemoryStore::in_memory(clock.clone()));
    let engine = CoCreationEngine::new(gateway, memory, EngineConfig::default());

    let recorder = RecordingBackend::new(backend, clock.clone());
    let opts = SessionOptions {
        session_id: Some(session_id_for(scenario, backend.name())),
        default_slice_profile: scenario.default_slice_profile.clone(),
        ..SessionOptions::default()
    };
    let mut s = engine.open_session(&scenario.intent_text, opts).map_err(|e| EvalError::InvalidScenario(e.to_string()))?;

    let error = play(&engine, &mut s, &recorder, scenario, &catalog).err().map(|e| e.to_string());
    if let Some(e) = &error {
        engine.abort_with(&mut s, FailureCause::Aborted, e);
    }

    Ok(SessionOutcome {
        format_version: OUTCOME_FORMAT_VERSION,
        scenario: scenario.clone(),
        backend: None,
        backend_name: backend.name().to_owned(),
        backend_group: None,
        final_bundle: final_bundle(&s, &catalog),
        orders: inventory.records(),
        backend_calls: recorder.into_records(),
        error,
        session: s,
    })
}

fn play(
    engine: &CoCreationEngine,
    s: &mut DialogueSession,
    backend: &dyn AgentBackend,
    scenario: &BenchmarkScenario,
    catalog: &Catalog,
) -> Result<(), EngineError> {
    for turn in &scenario.user_script {
        let text = turn.text.as_deref().map(str::trim).filter(|t| !t.is_empty());
        match turn.stage {
            Stage::Ingestion => match text {
                Some(t) => engine.user_message(s, backend, t).map(drop)?,
                None => engine.ground_intent(s, backend).map(drop)?,
            },
            Stage::Alternatives => engine.propose_alternatives(s, backend, text).map(drop)?,
            Stage::Combination => {
                let rule = turn.select.unwrap_or(SelectionRule::GroundTruthElseCheapest);
                let index = pick(s, rule, &scenario.ground_truth, catalog)
                    .ok_or_else(|| EngineError::InvalidSelection("no proposals to choose from".into()))?;
                engine.select_combination(s, Selection::Index(index))?;
            }
            Stage::Temporal => engine.negotiate_temporal(s, backend, text.unwrap_or_default()).map(drop)?,
            Stage::Confirmation => {
                engine.present_draft(s, backend, text)?;
                if turn.confirm {
                    engine.confirm(s)?;
                }
            }
            Stage::Confirmed | Stage::Aborted => {}
        }
    }
    Ok(())
}

fn names<'c>(catalog: &'c Catalog, ids: &[OfferingId]) -> Vec<&'c str> {
    let mut v: Vec<&str> = ids.iter().filter_map(|id| catalog.offering(id)).map(|o| o.name.as_str()).collect();
    v.sort_unstable();
    v.dedup();
    v
}

fn pick(s: &DialogueSession, rule: SelectionRule, truth: &GroundTruth, catalog: &Catalog) -> Option<usize> {
    if s.proposals.is_empty() {
        return None;
    }
    let cheapest = || s.proposals.iter().enumerate().min_by_key(|(i, p)| (p.quote.total_cost, *i)).map(|(i, _)| i);
    match rule {
        SelectionRule::First => Some(0),
        SelectionRule::Cheapest => cheapest(),
        SelectionRule::GroundTruthElseCheapest => {
            let mut want: Vec<&str> = truth.expected_bundle.iter().map(String::as_str).collect();
            want.sort_unstable();
            s.proposals.iter().position(|p| names(catalog, &p.bundle) == want).or_else(cheapest)
        }
    }
}

fn final_bundle(s: &DialogueSession, catalog: &Catalog) -> Vec<BundleItem> {
    let items = s.order_record.as_ref().map(|r| &r.order).or(s.order_draft.as_ref()).map(|o| &o.order_items);
    if let Some(items) = items {
        return items
            .iter()
            .map(|i| BundleItem { offering_id: i.offering_id.clone(), name: i.offering_name.clone(), tier: i.tier.clone() })
            .collect();
    }
    s.selected
        .iter()
        .flatten()
        .filter_map(|id| catalog.offering(id))
        .map(|o| BundleItem { offering_id: o.id.clone(), name: o.name.clone(), tier: o.tier.clone() })
        .collect()
}

/// Result of re-running a stored outcome against its own recorded turns.
#[derive(Debug, Clone)]
pub struct ReplayCheck {
    pub replayed: SessionOutcome,
    /// Human-readable differences, first one first. Empty when identical.
    pub differences: Vec<String>,
}

impl ReplayCheck {
    pub fn is_identical(&self) -> bool {
        self.differences.is_empty()
    }
}

fn first_difference(label: &str, a: &str, b: &str) -> Option<String> {
    if a == b {
        return None;
    }
    let at = a.bytes().zip(b.bytes()).position(|(x, y)| x != y).unwrap_or(a.len().min(b.len()));
    let excerpt = |s: &str| {
        let start = s.floor_char_boundary(at.saturating_sub(24));
        let end = s.ceil_char_boundary((at + 24).min(s.len()));
        s[start..end].to_owned()
    };
    Some(format!("{label} differs at byte {at}: stored `{}`, replayed `{}`", excerpt(a), excerpt(b)))
}

/// Replays the recorded backend turns through a fresh engine and compares
/// the order payload and the score with what was stored.
pub fn replay_outcome(stored: &SessionOutcome, catalog: Arc<Catalog>) -> Result<ReplayCheck, EvalError> {
    let clock = Arc::new(ManualClock::new(stored.scenario.session_start));
    let backend = ReplayBackend::new(&stored.backend_name, stored.backend_calls.clone(), Some(clock.clone()));
    let mut replayed = run_with_backend(&stored.scenario, catalog, &backend, clock)?;
    replayed.backend = stored.backend.clone();
    replayed.backend_group = stored.backend_group.clone();

    let mut differences = Vec::new();
    let draft = |o: &SessionOutcome| o.session.order_draft.as_ref().map(|d| d.canonical_string()).unwrap_or_default();
    differences.extend(first_difference("order payload", &draft(stored), &draft(&replayed)));
    let placed = |o: &SessionOutcome| o.orders.iter().map(|r| r.order.canonical_string()).collect::<Vec<_>>().join("\n");
    differences.extend(first_difference("placed orders", &placed(stored), &placed(&replayed)));
    if stored.session.stage != replayed.session.stage {
        differences.push(format!("final stage: stored {}, replayed {}", stored.session.stage, replayed.session.stage));
    }
    let report = |o: &SessionOutcome| serde_json::to_string(&o.score()).expect("report serializes");
    differences.extend(first_difference("score", &report(stored), &report(&replayed)));
    if backend.remaining() > 0 {
        differences.push(format!("{} recorded backend calls were never requested", backend.remaining()));
    }
    Ok(ReplayCheck { replayed, differences })
}
