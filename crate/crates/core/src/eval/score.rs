use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::{GroundTruth, SessionOutcome};
use crate::backend::Role;
use crate::catalog::OfferingId;
use crate::dialogue::FailureCause;
use crate::money::{currency_amounts, Cents};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct BundleItem {
    pub offering_id: OfferingId,
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tier: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Verdict {
    Pass,
    Fail,
}

impl Verdict {
    fn of(ok: bool) -> Self {
        if ok {
            Verdict::Pass
        } else {
            Verdict::Fail
        }
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Verdict::Pass => "Pass",
            Verdict::Fail => "Fail",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Rating {
    Pass,
    Partial,
    Fail,
}

impl Rating {
    /// Pass needs everything right; Partial keeps a correct cost and at
    /// least three quarters of the expected products.
    pub fn derive(composition: usize, expected: usize, hallucinated: usize, cost: Verdict, duration: Verdict) -> Self {
        let cost_ok = cost == Verdict::Pass;
        if composition == expected && hallucinated == 0 && cost_ok && duration == Verdict::Pass {
            Rating::Pass
        } else if cost_ok && composition * 4 >= expected * 3 {
            Rating::Partial
        } else {
            Rating::Fail
        }
    }
}

impl fmt::Display for Rating {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Rating::Pass => "Pass",
            Rating::Partial => "Partial",
            Rating::Fail => "Fail",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct EvaluationReport {
    pub scenario_id: String,
    pub backend_name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group: Option<String>,
    pub composition_correct: usize,
    pub composition_expected: usize,
    pub hallucinated_products: usize,
    pub cost_accuracy: Verdict,
    pub duration_accuracy: Verdict,
    pub baseline_achievement: Rating,
    /// Whole minutes; absent when the session did not complete.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dialogue_time_min: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure_cause: Option<FailureCause>,
    /// The engine quote and the total the agent stated, for inspection.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub engine_quote: Option<Cents>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stated_total: Option<Cents>,
}

impl EvaluationReport {
    pub fn composition_percent(&self) -> usize {
        (self.composition_correct * 100 + self.composition_expected / 2).checked_div(self.composition_expected).unwrap_or(0)
    }
}

/// The last currency amount in the last assistant text before the user
/// confirmed (or in the whole transcript if nobody confirmed).
fn stated_total(outcome: &SessionOutcome) -> Option<Cents> {
    let t = &outcome.session.transcript;
    let end = if outcome.session.order_record.is_some() {
        t.iter().rposition(|turn| turn.role == Role::User).unwrap_or(t.len())
    } else {
        t.len()
    };
    t[..end]
        .iter()
        .rev()
        .find(|turn| turn.role == Role::Assistant && !turn.content.trim().is_empty())
        .and_then(|turn| currency_amounts(&turn.content).last().copied())
}

/// Scores a finished run. Pure: the same outcome always gives the same report.
pub fn score(outcome: &SessionOutcome, truth: &GroundTruth) -> EvaluationReport {
    let s = &outcome.session;
    let expected: BTreeSet<&str> = truth.expected_bundle.iter().map(String::as_str).collect();
    let present: BTreeSet<&str> = outcome.final_bundle.iter().map(|i| i.name.as_str()).collect();
    let composition = expected.intersection(&present).count();
    let hallucinated = s.hallucinated_names().len();

    let quote = s.quote.as_ref().map(|q| q.total_cost);
    let stated = stated_total(outcome);
    let cost = Verdict::of(matches!((quote, stated), (Some(q), Some(st)) if q == st && q <= truth.budget));

    let duration = Verdict::of(
        s.order_draft
            .as_ref()
            .is_some_and(|d| d.start_date == truth.start_date && d.duration_days == truth.duration_days),
    );

    EvaluationReport {
        scenario_id: outcome.scenario.scenario_id.clone(),
        backend_name: outcome.backend_name.clone(),
        group: outcome.backend_group.clone(),
        composition_correct: composition,
        composition_expected: expected.len(),
        hallucinated_products: hallucinated,
        cost_accuracy: cost,
        duration_accuracy: duration,
        baseline_achievement: Rating::derive(composition, expected.len(), hallucinated, cost, duration),
        dialogue_time_min: s.dialogue_ms().map(|ms| (ms + 30_000) / 60_000),
        failure_cause: s.failure,
        engine_quote: quote,
        stated_total: stated,
    }
}
