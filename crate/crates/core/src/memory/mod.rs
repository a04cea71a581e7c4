//! Session memory: in-process working state per session and a persistent case
//! file per session.
//!
//! A directory-backed store keeps one directory per case id holding
//! `case.json` (latest checkpoint, pretty-printed) and `decisions.log`
//! (newline-delimited [`DecisionEntry`] records, appended and flushed before
//! `record_decision` returns).

mod working;

use std::collections::{BTreeMap, HashMap};
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

pub use working::{
    Conflict, ConflictReport, ConstraintSnapshot, ConstraintValue, DomainResult, TaskStatus, TodoTask, WorkingState,
};

use crate::catalog::{Catalog, OfferingId};
use crate::clock::SharedClock;
use crate::dialogue::{IntentContract, Stage, TemporalSpec};
use crate::gateway::{build_order_payload, GatewayError, OrderParameters, OrderPayload};

pub const CASE_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum MemoryError {
    #[error("unknown case `{0}`")]
    UnknownCase(String),
    #[error("case `{0}` already exists")]
    DuplicateCase(String),
    #[error("working state for `{0}` already initialized")]
    AlreadyInitialized(String),
    #[error("corrupt case file {path}: {detail}")]
    Corrupt { path: String, detail: String },
    #[error("storage: {0}")]
    Storage(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Actor {
    User,
    CoCreationAgent,
    DomainExpert(String),
    Engine,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct DecisionEntry {
    pub seq: u64,
    pub timestamp: DateTime<Utc>,
    pub stage: Stage,
    pub actor: Actor,
    pub summary: String,
    /// Tool call ids, proposal ids and similar.
    pub references: Vec<String>,
}

/// Final bundle and everything needed to rebuild its order draft.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct DerivedComposition {
    pub bundle: Vec<OfferingId>,
    pub temporal: Option<TemporalSpec>,
    pub parameters: OrderParameters,
    /// Resource domains per offering, from its decomposition.
    pub domains: BTreeMap<OfferingId, Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct CaseFile {
    pub format_version: u32,
    pub case_id: String,
    pub canonical_intent: IntentContract,
    pub constraints: Vec<ConstraintSnapshot>,
    pub assumptions: Vec<String>,
    pub decision_log: Vec<DecisionEntry>,
    pub derived_composition: Option<DerivedComposition>,
}

impl CaseFile {
    fn new(case_id: &str, intent: IntentContract) -> Self {
        Self {
            format_version: CASE_FORMAT_VERSION,
            case_id: case_id.into(),
            canonical_intent: intent,
            constraints: Vec::new(),
            assumptions: Vec::new(),
            decision_log: Vec::new(),
            derived_composition: None,
        }
    }

    /// Rebuilds the order draft recorded by this case.
    pub fn rebuild_draft(&self, catalog: &Catalog) -> Result<OrderPayload, GatewayError> {
        let comp = self
            .derived_composition
            .as_ref()
            .ok_or_else(|| GatewayError::Integrity("case has no derived composition".into()))?;
        let temporal = comp
            .temporal
            .as_ref()
            .ok_or_else(|| GatewayError::Integrity("case has no temporal specification".into()))?;
        build_order_payload(catalog, &self.case_id, &comp.bundle, temporal, &comp.parameters)
    }
}

/// Everything a checkpoint replaces; the decision log is owned by the store.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CaseSnapshot {
    pub canonical_intent: IntentContract,
    pub constraints: Vec<ConstraintSnapshot>,
    pub assumptions: Vec<String>,
    pub derived_composition: Option<DerivedComposition>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NewDecision {
    pub stage: Stage,
    pub actor: Actor,
    pub summary: String,
    pub references: Vec<String>,
}

impl NewDecision {
    pub fn new(stage: Stage, actor: Actor, summary: impl Into<String>) -> Self {
        Self { stage, actor, summary: summary.into(), references: Vec::new() }
    }

    pub fn with_refs(mut self, refs: impl IntoIterator<Item = String>) -> Self {
        self.references.extend(refs);
        self
    }
}

#[derive(Debug)]
struct CaseState {
    file: CaseFile,
    log: Option<File>,
}

#[derive(Debug)]
pub struct MemoryStore {
    root: Option<PathBuf>,
    clock: SharedClock,
    cases: RwLock<HashMap<String, Arc<Mutex<CaseState>>>>,
    working: Mutex<HashMap<String, WorkingState>>,
}

fn corrupt(path: &Path, detail: impl ToString) -> MemoryError {
    MemoryError::Corrupt { path: path.display().to_string(), detail: detail.to_string() }
}

fn valid_case_id(id: &str) -> bool {
    !id.is_empty() && id.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.')) && !id.starts_with('.')
}

impl MemoryStore {
    pub fn in_memory(clock: SharedClock) -> Self {
        Self { root: None, clock, cases: RwLock::new(HashMap::new()), working: Mutex::new(HashMap::new()) }
    }

    /// Directory-backed store; existing cases are loaded on first access.
    pub fn open(root: impl AsRef<Path>, clock: SharedClock) -> Result<Self, MemoryError> {
        let root = root.as_ref().to_path_buf();
        fs::create_dir_all(&root)?;
        Ok(Self { root: Some(root), ..Self::in_memory(clock) })
    }

    pub fn root(&self) -> Option<&Path> {
        self.root.as_deref()
    }

    fn case_dir(&self, case_id: &str) -> Option<PathBuf> {
        self.root.as_ref().map(|r| r.join(case_id))
    }

    fn write_snapshot(dir: &Path, file: &CaseFile) -> Result<(), MemoryError> {
        let tmp = dir.join("case.json.tmp");
        let mut body = serde_json::to_vec_pretty(file).expect("case serializes");
        body.push(b'\n');
        fs::write(&tmp, body)?;
        fs::rename(&tmp, dir.join("case.json"))?;
        Ok(())
    }

    fn open_log(dir: &Path) -> Result<File, MemoryError> {
        Ok(OpenOptions::new().create(true).append(true).open(dir.join("decisions.log"))?)
    }

    fn read_from_disk(dir: &Path) -> Result<CaseFile, MemoryError> {
        let path = dir.join("case.json");
        let text = fs::read_to_string(&path)?;
        let mut file: CaseFile = serde_json::from_str(&text).map_err(|e| corrupt(&path, e))?;
        let log_path = dir.join("decisions.log");
        if log_path.exists() {
            let mut log = Vec::new();
            for (n, line) in BufReader::new(File::open(&log_path)?).lines().enumerate() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                let entry: DecisionEntry =
                    serde_json::from_str(&line).map_err(|e| corrupt(&log_path, format!("line {}: {e}", n + 1)))?;
                if entry.seq != log.len() as u64 + 1 {
                    return Err(corrupt(&log_path, format!("line {}: sequence gap at seq {}", n + 1, entry.seq)));
                }
                log.push(entry);
            }
            if log.len() < file.decision_log.len() || log[..file.decision_log.len()] != file.decision_log[..] {
                return Err(corrupt(&log_path, "log is not an extension of the checkpointed decisions"));
            }
            file.decision_log = log;
        }
        Ok(file)
    }

    fn state(&self, case_id: &str) -> Result<Arc<Mutex<CaseState>>, MemoryError> {
        if let Some(s) = self.cases.read().expect("cases lock").get(case_id) {
            return Ok(s.clone());
        }
        let dir = match self.case_dir(case_id) {
            Some(d) if valid_case_id(case_id) && d.join("case.json").exists() => d,
            _ => return Err(MemoryError::UnknownCase(case_id.into())),
        };
        let file = Self::read_from_disk(&dir)?;
        let log = Some(Self::open_log(&dir)?);
        let mut cases = self.cases.write().expect("cases lock");
        let entry = cases.entry(case_id.into()).or_insert_with(|| Arc::new(Mutex::new(CaseState { file, log })));
        Ok(entry.clone())
    }

    pub fn create_case(&self, case_id: &str, intent: IntentContract) -> Result<(), MemoryError> {
        if !valid_case_id(case_id) {
            return Err(MemoryError::UnknownCase(case_id.into()));
        }
        let mut cases = self.cases.write().expect("cases lock");
        let on_disk = self.case_dir(case_id).is_some_and(|d| d.join("case.json").exists());
        if cases.contains_key(case_id) || on_disk {
            return Err(MemoryError::DuplicateCase(case_id.into()));
        }
        let file = CaseFile::new(case_id, intent);
        let log = match self.case_dir(case_id) {
            Some(dir) => {
                fs::create_dir_all(&dir)?;
                Self::write_snapshot(&dir, &file)?;
                Some(Self::open_log(&dir)?)
            }
            None => None,
        };
        cases.insert(case_id.into(), Arc::new(Mutex::new(CaseState { file, log })));
        Ok(())
    }

    /// Appends a decision; the returned seq is one more than the previous.
    pub fn record_decision(&self, case_id: &str, decision: NewDecision) -> Result<u64, MemoryError> {
        let state = self.state(case_id)?;
        let mut state = state.lock().expect("case lock");
        let entry = DecisionEntry {
            seq: state.file.decision_log.len() as u64 + 1,
            timestamp: self.clock.timestamp(),
            stage: decision.stage,
            actor: decision.actor,
            summary: decision.summary,
            references: decision.references,
        };
        if let Some(log) = state.log.as_mut() {
            let mut line = serde_json::to_string(&entry).expect("entry serializes");
            line.push('\n');
            log.write_all(line.as_bytes())?;
            log.flush()?;
        }
        let seq = entry.seq;
        state.file.decision_log.push(entry);
        Ok(seq)
    }

    pub fn decision_log(&self, case_id: &str) -> Result<Vec<DecisionEntry>, MemoryError> {
        Ok(self.state(case_id)?.lock().expect("case lock").file.decision_log.clone())
    }

    /// Persists a full snapshot and returns it.
    pub fn checkpoint(&self, case_id: &str, snapshot: CaseSnapshot) -> Result<CaseFile, MemoryError> {
        let state = self.state(case_id)?;
        let mut state = state.lock().expect("case lock");
        state.file.canonical_intent = snapshot.canonical_intent;
        state.file.constraints = snapshot.constraints;
        state.file.assumptions = snapshot.assumptions;
        state.file.derived_composition = snapshot.derived_composition;
        if let Some(dir) = self.case_dir(case_id) {
            Self::write_snapshot(&dir, &state.file)?;
        }
        Ok(state.file.clone())
    }

    /// Latest snapshot. Directory stores read from disk so a fresh process
    /// sees exactly what was persisted.
    pub fn load_case(&self, case_id: &str) -> Result<CaseFile, MemoryError> {
        match self.case_dir(case_id) {
            Some(dir) if valid_case_id(case_id) && dir.join("case.json").exists() => Self::read_from_disk(&dir),
            Some(_) => Err(MemoryError::UnknownCase(case_id.into())),
            None => Ok(self.state(case_id)?.lock().expect("case lock").file.clone()),
        }
    }

    pub fn init_working_state(&self, session_id: &str, drafted: Option<&Value>) -> Result<WorkingState, MemoryError> {
        let mut working = self.working.lock().expect("working lock");
        if working.contains_key(session_id) {
            return Err(MemoryError::AlreadyInitialized(session_id.into()));
        }
        let (state, note) = WorkingState::initial(session_id, drafted);
        if let (Some(note), Ok(case)) = (note, self.state(session_id)) {
            case.lock().expect("case lock").file.assumptions.push(note);
        }
        working.insert(session_id.into(), state.clone());
        Ok(state)
    }

    pub fn working_state(&self, session_id: &str) -> Option<WorkingState> {
        self.working.lock().expect("working lock").get(session_id).cloned()
    }

    /// Applies `f` to a session's working state, if it has one.
    pub fn update_working<R>(&self, session_id: &str, f: impl FnOnce(&mut WorkingState) -> R) -> Option<R> {
        self.working.lock().expect("working lock").get_mut(session_id).map(f)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clock::ManualClock;
    use sha2::{Digest, Sha256};

    fn store_in(dir: &Path) -> MemoryStore {
        MemoryStore::open(dir, ManualClock::at_fixed_origin()).unwrap()
    }

    fn snapshot() -> CaseSnapshot {
        CaseSnapshot {
            canonical_intent: IntentContract::draft("XR event"),
            constraints: vec![],
            assumptions: vec!["sliceProfile defaulted to eMBB".into()],
            derived_composition: None,
        }
    }

    #[test]
    fn seqs_increase_by_one() {
        let store = MemoryStore::in_memory(ManualClock::at_fixed_origin());
        store.create_case("c1", IntentContract::draft("x")).unwrap();
        let a = store.record_decision("c1", NewDecision::new(Stage::Combination, Actor::User, "picked 0")).unwrap();
        let b = store.record_decision("c1", NewDecision::new(Stage::Temporal, Actor::User, "dates")).unwrap();
        assert_eq!((a, b), (1, 2));
        assert!(matches!(
            store.record_decision("nope", NewDecision::new(Stage::Temporal, Actor::User, "x")),
            Err(MemoryError::UnknownCase(_))
        ));
    }

    #[test]
    fn checkpoint_round_trips_through_disk() {
        let dir = tempfile::tempdir().unwrap();
        let store = store_in(dir.path());
        store.create_case("c1", IntentContract::draft("x")).unwrap();
        store.record_decision("c1", NewDecision::new(Stage::Ingestion, Actor::Engine, "grounded")).unwrap();
        let saved = store.checkpoint("c1", snapshot()).unwrap();
        let again = store.checkpoint("c1", snapshot()).unwrap();
        assert_eq!(saved, again);

        let fresh = store_in(dir.path());
        assert_eq!(fresh.load_case("c1").unwrap(), saved);
        // decisions after the checkpoint are still visible
        fresh.record_decision("c1", NewDecision::new(Stage::Alternatives, Actor::CoCreationAgent, "2 proposals")).unwrap();
        assert_eq!(store_in(dir.path()).load_case("c1").unwrap().decision_log.len(), 2);
        assert!(matches!(fresh.load_case("c2"), Err(MemoryError::UnknownCase(_))));
        assert!(matches!(fresh.create_case("c1", IntentContract::draft("x")), Err(MemoryError::DuplicateCase(_))));
    }

    #[test]
    fn path_like_ids_are_refused() {
        let dir = tempfile::tempdir().unwrap();
        let store = store_in(dir.path());
        assert!(store.create_case("../evil", IntentContract::draft("x")).is_err());
        assert!(matches!(store.load_case("../evil"), Err(MemoryError::UnknownCase(_))));
    }

    #[test]
    fn concurrent_appends_are_gapless_and_prefix_stable() {
        let dir = tempfile::tempdir().unwrap();
        let store = Arc::new(store_in(dir.path()));
        store.create_case("c", IntentContract::draft("x")).unwrap();

        let hash = |entries: &[DecisionEntry]| {
            let mut h = Sha256::new();
            for e in entries {
                h.update(serde_json::to_vec(e).unwrap());
            }
            hex::encode(h.finalize())
        };

        let before = store.decision_log("c").unwrap();
        let prefix_hash = hash(&before);
        let handles: Vec<_> = (0..8)
            .map(|t| {
                let store = store.clone();
                std::thread::spawn(move || {
                    (0..50)
                        .map(|i| {
                            store
                                .record_decision("c", NewDecision::new(Stage::Alternatives, Actor::DomainExpert(format!("d{t}")), format!("n{i}")))
                                .unwrap()
                        })
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        let mut seqs: Vec<u64> = handles.into_iter().flat_map(|h| h.join().unwrap()).collect();
        seqs.sort_unstable();
        assert_eq!(seqs, (1..=400).collect::<Vec<_>>());

        let after = store_in(dir.path()).load_case("c").unwrap().decision_log;
        assert_eq!(after.len(), 400);
        assert_eq!(hash(&after[..before.len()]), prefix_hash);
        let mid = hash(&after[..200]);
        store.record_decision("c", NewDecision::new(Stage::Temporal, Actor::User, "later")).unwrap();
        assert_eq!(hash(&store_in(dir.path()).load_case("c").unwrap().decision_log[..200]), mid);
    }

    #[test]
    fn working_state_initializes_once() {
        let store = MemoryStore::in_memory(ManualClock::at_fixed_origin());
        assert_eq!(store.init_working_state("s", None).unwrap().todo.len(), 4);
        assert!(matches!(store.init_working_state("s", None), Err(MemoryError::AlreadyInitialized(_))));
    }
}
