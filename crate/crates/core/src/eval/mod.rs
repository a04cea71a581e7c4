//! Benchmark harness: runs a scripted user against a backend, scores the
//! outcome against ground truth and renders comparison tables.

mod report;
mod run;
mod score;

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use chrono::{DateTime, NaiveDate, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use report::{emit_report, ReportFormat, ReportOptions};
pub use run::{replay_outcome, run_scenario, run_with_backend, ReplayCheck, SessionOutcome, OUTCOME_FORMAT_VERSION};
pub use score::{score, BundleItem, EvaluationReport, Rating, Verdict};

use crate::catalog::Catalog;
use crate::dialogue::Stage;
use crate::money::Cents;

pub const REFERENCE_SCENARIO: &str = include_str!("../../data/benchmark-scenario.json");

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("no reports to render")]
    EmptyInput,
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("malformed {what}: {detail}")]
    Parse { what: String, detail: String },
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error("backend: {0}")]
    Backend(String),
}

/// How the scripted user picks at Q3.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum SelectionRule {
    /// The first proposal whose product names equal the expected bundle,
    /// otherwise the cheapest.
    GroundTruthElseCheapest,
    Cheapest,
    First,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ScriptTurn {
    pub stage: Stage,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub select: Option<SelectionRule>,
    /// Confirm the order after this turn.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub confirm: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct GroundTruth {
    pub expected_bundle: Vec<String>,
    pub budget: Cents,
    #[serde(default)]
    pub budget_period: Option<String>,
    pub duration_days: u32,
    pub start_date: NaiveDate,
    pub city: String,
    #[serde(default)]
    pub expected_parameters: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct BenchmarkScenario {
    pub scenario_id: String,
    /// Session clock origin.
    pub session_start: DateTime<Utc>,
    pub intent_text: String,
    #[serde(default)]
    pub default_slice_profile: Option<String>,
    pub user_script: Vec<ScriptTurn>,
    pub ground_truth: GroundTruth,
}

impl BenchmarkScenario {
    pub fn reference() -> Self {
        Self::from_json(REFERENCE_SCENARIO).expect("shipped scenario is valid")
    }

    pub fn from_json(source: &str) -> Result<Self, EvalError> {
        let s: Self = serde_json::from_str(source)
            .map_err(|e| EvalError::Parse { what: "scenario".into(), detail: e.to_string() })?;
        s.validate()?;
        Ok(s)
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self, EvalError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| EvalError::Io { path: path.display().to_string(), source })?;
        Self::from_json(&text)
    }

    /// One turn per active stage, in stage order; Q3 selects and Q5 confirms.
    pub fn validate(&self) -> Result<(), EvalError> {
        let bad = |m: String| Err(EvalError::InvalidScenario(m));
        if self.scenario_id.trim().is_empty() || self.intent_text.trim().is_empty() {
            return bad("scenarioId and intentText are required".into());
        }
        let stages: Vec<Stage> = self.user_script.iter().map(|t| t.stage).collect();
        if stages != Stage::ACTIVE {
            return bad(format!("userScript must have one turn per stage Q1..Q5 in order, got {stages:?}"));
        }
        if self.turn(Stage::Combination).and_then(|t| t.select).is_none() {
            return bad("the Q3 turn needs a selection rule".into());
        }
        if !self.turn(Stage::Confirmation).is_some_and(|t| t.confirm) {
            return bad("the Q5 turn must confirm".into());
        }
        let gt = &self.ground_truth;
        let distinct: BTreeSet<&str> = gt.expected_bundle.iter().map(String::as_str).collect();
        if distinct.is_empty() || distinct.len() != gt.expected_bundle.len() {
            return bad("expectedBundle must list distinct product names".into());
        }
        if gt.duration_days < 1 {
            return bad("durationDays must be at least 1".into());
        }
        Ok(())
    }

    /// Expected product names missing from `catalog`.
    pub fn unknown_products(&self, catalog: &Catalog) -> Vec<String> {
        let names = catalog.offering_names();
        self.ground_truth.expected_bundle.iter().filter(|n| !names.contains(&n.as_str())).cloned().collect()
    }

    pub fn turn(&self, stage: Stage) -> Option<&ScriptTurn> {
        self.user_script.iter().find(|t| t.stage == stage)
    }
}
