//! Short-term working state: the shared to-do list and the constraints merged
//! from domain results.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::dialogue::Stage;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TaskStatus {
    Pending,
    InProgress,
    Done,
    Blocked,
}

impl TaskStatus {
    pub fn can_move_to(self, to: TaskStatus) -> bool {
        matches!(
            (self, to),
            (TaskStatus::Pending, TaskStatus::InProgress)
                | (TaskStatus::InProgress, TaskStatus::Done)
                | (TaskStatus::InProgress, TaskStatus::Blocked)
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct TodoTask {
    pub task_id: String,
    pub action: String,
    pub expected_output: String,
    /// `co-creation`, `user`, `engine` or `domain:<name>`.
    pub assignee: String,
    pub status: TaskStatus,
}

/// Value asserted for a named constraint.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", rename_all_fields = "camelCase", tag = "kind")]
pub enum ConstraintValue {
    Exact { value: String },
    /// Inclusive integer interval; open ends are unbounded.
    Range { min: Option<i64>, max: Option<i64> },
}

impl ConstraintValue {
    pub fn exact(v: impl Into<String>) -> Self {
        ConstraintValue::Exact { value: v.into() }
    }

    pub fn at_least(min: i64) -> Self {
        ConstraintValue::Range { min: Some(min), max: None }
    }

    pub fn at_most(max: i64) -> Self {
        ConstraintValue::Range { min: None, max: Some(max) }
    }

    /// Combined value when both assertions can hold at once.
    pub fn merge(&self, other: &ConstraintValue) -> Option<ConstraintValue> {
        use ConstraintValue::*;
        match (self, other) {
            (Exact { value: a }, Exact { value: b }) => (a == b).then(|| self.clone()),
            (Range { min: a0, max: a1 }, Range { min: b0, max: b1 }) => {
                let min = match (a0, b0) {
                    (Some(x), Some(y)) => Some(*x.max(y)),
                    (x, y) => x.or(*y),
                };
                let max = match (a1, b1) {
                    (Some(x), Some(y)) => Some(*x.min(y)),
                    (x, y) => x.or(*y),
                };
                match (min, max) {
                    (Some(lo), Some(hi)) if lo > hi => None,
                    _ => Some(Range { min, max }),
                }
            }
            (Exact { value }, range @ Range { .. }) | (range @ Range { .. }, Exact { value }) => {
                let n: i64 = value.parse().ok()?;
                range.contains(n).then(|| ConstraintValue::exact(value.clone()))
            }
        }
    }

    fn contains(&self, n: i64) -> bool {
        match self {
            ConstraintValue::Range { min, max } => min.is_none_or(|m| n >= m) && max.is_none_or(|m| n <= m),
            ConstraintValue::Exact { value } => value.parse() == Ok(n),
        }
    }
}

impl fmt::Display for ConstraintValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ConstraintValue::Exact { value } => write!(f, "= {value}"),
            ConstraintValue::Range { min, max } => {
                let lo = min.map(|m| m.to_string()).unwrap_or_else(|| "-inf".into());
                let hi = max.map(|m| m.to_string()).unwrap_or_else(|| "+inf".into());
                write!(f, "in [{lo}, {hi}]")
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ConstraintSnapshot {
    pub name: String,
    pub value: ConstraintValue,
    /// Who asserted it: `user`, `engine` or `domain:<name>`.
    pub source: String,
}

/// A domain expert's answer to one task.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct DomainResult {
    pub task_id: String,
    pub domain: String,
    pub constraints: Vec<ConstraintSnapshot>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Conflict {
    pub constraint: String,
    pub existing: ConstraintSnapshot,
    pub incoming: ConstraintSnapshot,
    pub task_id: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ConflictReport {
    pub conflicts: Vec<Conflict>,
}

impl ConflictReport {
    pub fn is_empty(&self) -> bool {
        self.conflicts.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct WorkingState {
    pub session_id: String,
    pub stage_mirror: Stage,
    pub todo: Vec<TodoTask>,
    /// Keyed by constraint name.
    pub active_constraints: BTreeMap<String, ConstraintSnapshot>,
    pub interim_decisions: Vec<String>,
}

fn default_tasks() -> Vec<TodoTask> {
    let task = |id: &str, action: &str, expected: &str, assignee: &str| TodoTask {
        task_id: id.into(),
        action: action.into(),
        expected_output: expected.into(),
        assignee: assignee.into(),
        status: TaskStatus::Pending,
    };
    vec![
        task("t-alternatives", "Propose catalog bundles meeting the constraints", "At least one grounded proposal", "co-creation"),
        task("t-combination", "Let the user pick one combination", "Selected bundle", "user"),
        task("t-temporal", "Agree start date and duration", "Temporal specification", "user"),
        task("t-confirmation", "Serialize the order and obtain confirmation", "Placed order record", "engine"),
    ]
}

const STAGE_KEYS: [&str; 4] = ["Q2", "Q3", "Q4", "Q5"];

/// Parses a to-do list drafted by a backend. The draft must be a JSON array
/// of objects with `stage`, `action` and `expectedOutput` strings, covering
/// each of Q2..Q5 at least once.
fn parse_drafted(draft: &Value) -> Option<Vec<TodoTask>> {
    let items = draft.as_array()?;
    let mut tasks = Vec::with_capacity(items.len());
    let mut covered = [false; 4];
    for (n, item) in items.iter().enumerate() {
        let stage = item.get("stage")?.as_str()?;
        let slot = STAGE_KEYS.iter().position(|k| stage.starts_with(k))?;
        covered[slot] = true;
        let action = item.get("action")?.as_str()?.trim();
        let expected = item.get("expectedOutput")?.as_str()?.trim();
        if action.is_empty() || expected.is_empty() {
            return None;
        }
        tasks.push(TodoTask {
            task_id: format!("t-{}-{}", STAGE_KEYS[slot].to_lowercase(), n + 1),
            action: action.into(),
            expected_output: expected.into(),
            assignee: item.get("assignee").and_then(Value::as_str).unwrap_or("co-creation").into(),
            status: TaskStatus::Pending,
        });
    }
    covered.iter().all(|c| *c).then_some(tasks)
}

impl WorkingState {
    /// Fresh state. Returns the fallback note when `drafted` was given but
    /// rejected.
    pub fn initial(session_id: &str, drafted: Option<&Value>) -> (Self, Option<String>) {
        let (todo, note) = match drafted.map(parse_drafted) {
            None => (default_tasks(), None),
            Some(Some(tasks)) => (tasks, None),
            Some(None) => (default_tasks(), Some("drafted to-do list was malformed; default task list used".into())),
        };
        let state = Self {
            session_id: session_id.into(),
            stage_mirror: Stage::Ingestion,
            todo,
            active_constraints: BTreeMap::new(),
            interim_decisions: Vec::new(),
        };
        (state, note)
    }

    pub fn task(&self, task_id: &str) -> Option<&TodoTask> {
        self.todo.iter().find(|t| t.task_id == task_id)
    }

    /// Adds a task unless its id is taken.
    pub fn add_task(&mut self, task: TodoTask) -> bool {
        if self.task(&task.task_id).is_some() {
            return false;
        }
        self.todo.push(task);
        true
    }

    /// Applies a legal status change; illegal ones are refused.
    pub fn set_status(&mut self, task_id: &str, to: TaskStatus) -> bool {
        match self.todo.iter_mut().find(|t| t.task_id == task_id) {
            Some(t) if t.status.can_move_to(to) => {
                t.status = to;
                true
            }
            _ => false,
        }
    }

    /// Moves a task to a terminal status through InProgress if needed.
    pub fn finish(&mut self, task_id: &str, to: TaskStatus) {
        self.set_status(task_id, TaskStatus::InProgress);
        self.set_status(task_id, to);
    }

    pub fn assert_constraint(&mut self, snapshot: ConstraintSnapshot) {
        self.active_constraints.insert(snapshot.name.clone(), snapshot);
    }

    /// Merges domain results. Each result completes its task, or blocks it
    /// when one of its constraints cannot hold together with the current
    /// value. Conflicts are reported, never resolved.
    pub fn reconcile(&self, incoming: &[DomainResult]) -> (WorkingState, ConflictReport) {
        let mut next = self.clone();
        let mut report = ConflictReport::default();
        for result in incoming {
            let mut blocked = false;
            for c in &result.constraints {
                match next.active_constraints.get(&c.name) {
                    None => {
                        next.active_constraints.insert(c.name.clone(), c.clone());
                    }
                    Some(existing) => match existing.value.merge(&c.value) {
                        Some(value) => {
                            let source = if existing.source == c.source {
                                existing.source.clone()
                            } else {
                                let mut s = [existing.source.as_str(), c.source.as_str()];
                                s.sort_unstable();
                                s.join("+")
                            };
                            next.active_constraints
                                .insert(c.name.clone(), ConstraintSnapshot { name: c.name.clone(), value, source });
                        }
                        None => {
                            blocked = true;
                            report.conflicts.push(Conflict {
                                constraint: c.name.clone(),
                                existing: existing.clone(),
                                incoming: c.clone(),
                                task_id: result.task_id.clone(),
                            });
                        }
                    },
                }
            }
            next.finish(&result.task_id, if blocked { TaskStatus::Blocked } else { TaskStatus::Done });
        }
        (next, report)
    }
}
