//! Scripted agents: the oracle's turn plan, bent by a fault profile.

use std::sync::Arc;
use std::time::Duration;

use serde_json::{json, Value};

use super::oracle::{
    budget_note, call, extraction_text, items_of, oracle_proposals, proposals_text, quote_call, quoted_total,
    requested_dates, search_calls, summary_text, temporal_text,
};
use super::{classify_text, AgentBackend, AgentProfile, BackendError, ChatTurn, CompletionRequest, Fault, ProfileError};
use crate::catalog::{Catalog, OfferingRef};
use crate::clock::ManualClock;
use crate::dialogue::Stage;
use crate::money::Cents;

#[derive(Debug)]
pub struct ScriptedBackend {
    profile: AgentProfile,
    catalog: Arc<Catalog>,
    clock: Option<Arc<ManualClock>>,
}

fn shift(total: Cents, delta_eur: i64) -> Cents {
    let cents = total.get() as i64 + delta_eur * 100;
    Cents(cents.max(0) as u64)
}

impl ScriptedBackend {
    pub fn new(profile: AgentProfile, catalog: Arc<Catalog>, clock: Option<Arc<ManualClock>>) -> Result<Self, ProfileError> {
        profile.validate()?;
        Ok(Self { profile, catalog, clock })
    }

    pub fn profile(&self) -> &AgentProfile {
        &self.profile
    }

    fn delta(&self) -> i64 {
        self.profile
            .faults
            .iter()
            .find_map(|f| match f {
                Fault::WrongArithmetic { delta_eur } => Some(*delta_eur),
                _ => None,
            })
            .unwrap_or(0)
    }

    fn wait(&self, d: Duration) {
        if let Some(c) = &self.clock {
            c.advance(d);
        }
    }

    fn malformed_text(&self) -> String {
        let mut text = String::from(
            "Let me check the catalog first.\n<tool_call>\n{\"name\": \"catalog.search\", \"arguments\": {\"keywords\": [\"network\", \"slice\"]\n</tool_call>",
        );
        let names = self.profile.hallucinated_names();
        if !names.is_empty() {
            text.push_str("\n\nBased on your needs I recommend:\n");
            for n in names {
                text.push_str(&format!("- {n}\n"));
            }
        }
        text
    }

    fn proposals_turn(&self, req: &CompletionRequest<'_>) -> ChatTurn {
        let days = req.contract.duration_hint_days.unwrap_or(7);
        let mut proposals: Vec<(Vec<Value>, Option<Cents>, String)> = match &self.profile.proposals {
            Some(script) => script
                .iter()
                .map(|items| {
                    let ids: Vec<_> = items
                        .iter()
                        .filter_map(|i| self.catalog.resolve_offering(&OfferingRef::named(&i.name, i.tier.as_deref())).ok())
                        .map(|o| o.id.clone())
                        .collect();
                    let values = items.iter().map(|i| json!({ "name": i.name, "tier": i.tier })).collect();
                    let total = self.catalog.quote(&ids, days, None).ok().map(|q| q.total_cost);
                    (values, total, "Covers the main needs of the event".to_owned())
                })
                .collect(),
            None => oracle_proposals(&self.catalog, req.contract)
                .into_iter()
                .map(|ids| {
                    let total = self.catalog.quote(&ids, days, None).ok().map(|q| q.total_cost);
                    (items_of(&self.catalog, &ids), total, "Fits the stated constraints".to_owned())
                })
                .collect(),
        };
        let delta = self.delta();
        for p in &mut proposals {
            p.1 = p.1.map(|t| shift(t, delta));
        }
        if let Some(first) = proposals.first_mut() {
            for n in self.profile.hallucinated_names() {
                first.0.push(json!({ "name": n, "tier": null }));
            }
        }
        ChatTurn::assistant(proposals_text(&proposals, &budget_note(req.contract)))
    }

    /// The turns this profile would give in a stage without ordering faults;
    /// the last one is the stage's final answer.
    fn plan(&self, req: &CompletionRequest<'_>) -> Vec<ChatTurn> {
        match req.stage {
            Stage::Ingestion => vec![ChatTurn::assistant(extraction_text(req.contract))],
            Stage::Alternatives => {
                let final_turn = self.proposals_turn(req);
                if self.profile.has(|f| matches!(f, Fault::SkipCatalogLookup)) {
                    vec![final_turn]
                } else {
                    vec![ChatTurn::assistant_calls("", search_calls(req.stage)), final_turn]
                }
            }
            Stage::Combination => vec![ChatTurn::assistant("Please choose one of the proposed bundles.")],
            Stage::Temporal => {
                let (mut start, days) = requested_dates(req);
                if self.profile.has(|f| matches!(f, Fault::WrongDates)) {
                    start = start.and_then(|d| d.succ_opt());
                }
                vec![ChatTurn::assistant(temporal_text(start, days))]
            }
            Stage::Confirmation => match req.draft {
                Some(d) => {
                    let summary = if req.step() == 0 {
                        String::new()
                    } else {
                        summary_text(d, shift(quoted_total(req, d), self.delta()))
                    };
                    vec![ChatTurn::assistant_calls("", vec![quote_call(d)]), ChatTurn::assistant(summary)]
                }
                None => vec![ChatTurn::assistant("There is no order draft yet.")],
            },
            Stage::Confirmed | Stage::Aborted => vec![ChatTurn::assistant("This session is closed.")],
        }
    }
}

impl AgentBackend for ScriptedBackend {
    fn name(&self) -> &str {
        &self.profile.name
    }

    fn complete(&self, req: &CompletionRequest<'_>) -> Result<ChatTurn, BackendError> {
        req.validate()?;
        let silent = self.profile.faults.iter().any(|f| matches!(f, Fault::Unresponsive { from_stage } if req.stage >= *from_stage));
        if silent && !req.stage.is_terminal() {
            self.wait(req.timeout);
            return Err(BackendError::Timeout(req.timeout));
        }
        let per_turn = self.profile.faults.iter().find_map(|f| match f {
            Fault::SlowResponse { per_turn } => Some(*per_turn),
            _ => None,
        });
        self.wait(per_turn.unwrap_or(Duration::from_millis(self.profile.turn_latency_ms)));

        if self.profile.has(|f| matches!(f, Fault::NoToolCalling)) {
            return Ok(classify_text(self.malformed_text()));
        }

        let plan = self.plan(req);
        let step = req.step();
        let last = plan.len() - 1;
        let direct = self.profile.faults.iter().find_map(|f| match f {
            Fault::DirectOrderAttempt { stage, insist } if *stage == req.stage => Some(*insist),
            _ => None,
        });
        let order_call = || call(format!("{}-order-{step}", req.stage.short()), "order.place", json!({ "confirmationToken": "tok-user-approved" }));
        let turn = match direct {
            None => plan.into_iter().nth(step.min(last)).expect("plan is non-empty"),
            Some(_) if step < last => plan.into_iter().nth(step).expect("in range"),
            Some(_) if step == last => {
                let mut t = plan.into_iter().nth(last).expect("in range");
                t.tool_calls.push(order_call());
                t
            }
            Some(true) => ChatTurn::assistant_calls("", vec![order_call()]),
            Some(false) => plan.into_iter().nth(last).expect("in range"),
        };
        Ok(turn)
    }
}
