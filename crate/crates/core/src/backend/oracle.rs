//! The expert baseline agent. Deterministic: the same stage, contract and
//! catalog always give the same turn.

use std::sync::Arc;

use chrono::NaiveDate;
use serde_json::{json, Value};

use super::{AgentBackend, BackendError, ChatTurn, CompletionRequest, RequestedCall};
use crate::catalog::{Catalog, OfferingId};
use crate::dialogue::{extract, IntentContract, Stage};
use crate::gateway::OrderPayload;
use crate::money::Cents;

/// The four products an expert bundles for a latency-bound media event.
pub const EXPERT_PRODUCTS: [&str; 4] =
    ["On-demand Network Slice", "Edge Media Cache Server", "Network Slice Observability", "Service Setup and VPN"];

const DEFAULT_DAYS: u32 = 7;

/// Feasible tier combinations of the expert products, best first.
///
/// Within one product name, tiers rank by unit cost (cheapest is 1). A bundle
/// scores the sum of its tier ranks; higher is better, then lower quote, then
/// lexicographic ids. Bundles whose quote exceeds `budget` are dropped.
pub fn expert_bundles(catalog: &Catalog, budget: Option<Cents>, days: u32) -> Vec<Vec<OfferingId>> {
    let mut choices: Vec<Vec<(usize, OfferingId)>> = Vec::new();
    for name in EXPERT_PRODUCTS {
        let mut tiers: Vec<_> = catalog.offerings().iter().filter(|o| o.name == name).collect();
        if tiers.is_empty() {
            return Vec::new();
        }
        tiers.sort_by(|a, b| a.unit_cost.cmp(&b.unit_cost).then_with(|| a.id.cmp(&b.id)));
        choices.push(tiers.iter().enumerate().map(|(i, o)| (i + 1, o.id.clone())).collect());
    }

    let mut combos: Vec<(usize, Vec<OfferingId>)> = vec![(0, Vec::new())];
    for options in &choices {
        combos = combos
            .into_iter()
            .flat_map(|(score, ids)| {
                options.iter().map(move |(rank, id)| {
                    let mut ids = ids.clone();
                    ids.push(id.clone());
                    (score + rank, ids)
                })
            })
            .collect();
    }

    let mut scored: Vec<(usize, Cents, Vec<OfferingId>)> = combos
        .into_iter()
        .filter_map(|(score, ids)| {
            let total = catalog.quote(&ids, days, None).ok()?.total_cost;
            budget.is_none_or(|b| total <= b).then_some((score, total, ids))
        })
        .collect();
    scored.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)).then_with(|| a.2.cmp(&b.2)));
    scored.into_iter().map(|(_, _, ids)| ids).collect()
}

/// Best bundle first, then the cheapest feasible one as the alternative.
pub(crate) fn oracle_proposals(catalog: &Catalog, contract: &IntentContract) -> Vec<Vec<OfferingId>> {
    let days = contract.duration_hint_days.unwrap_or(DEFAULT_DAYS);
    let ranked = expert_bundles(catalog, contract.budget.as_ref().map(|b| b.amount), days);
    let Some(best) = ranked.first().cloned() else {
        return Vec::new();
    };
    let cheapest = ranked
        .iter()
        .min_by(|a, b| {
            let qa = catalog.quote(a, days, None).map(|q| q.total_cost).unwrap_or(Cents(u64::MAX));
            let qb = catalog.quote(b, days, None).map(|q| q.total_cost).unwrap_or(Cents(u64::MAX));
            qa.cmp(&qb).then_with(|| a.cmp(b))
        })
        .cloned()
        .expect("non-empty");
    let second = if cheapest != best { Some(cheapest) } else { ranked.get(1).cloned() };
    std::iter::once(best).chain(second).collect()
}

pub(crate) fn call(id: String, tool: &str, arguments: Value) -> RequestedCall {
    RequestedCall { call_id: id, tool_name: tool.into(), arguments }
}

pub(crate) fn search_calls(stage: Stage) -> Vec<RequestedCall> {
    [&["network", "slice"][..], &["edge", "cache", "server"], &["observability"], &["setup", "vpn"]]
        .iter()
        .enumerate()
        .map(|(i, kw)| call(format!("{}-search-{i}", stage.short()), "catalog.search", json!({ "keywords": kw })))
        .collect()
}

pub(crate) fn extraction_text(contract: &IntentContract) -> String {
    let text = &contract.goal_text;
    let budget = extract::budget(text);
    let qos: Vec<Value> = extract::qos_constraints(text)
        .into_iter()
        .map(|q| json!({ "metric": q.metric, "comparator": q.comparator, "value": q.value, "unit": q.unit }))
        .collect();
    let body = json!({
        "location": extract::city(text),
        "budgetEur": budget.as_ref().map(|b| b.amount.whole_euros()),
        "budgetPeriod": budget.and_then(|b| b.period),
        "durationDays": extract::duration_days(text),
        "sliceProfile": extract::slice_profile(text),
        "qos": qos,
        "policies": [],
    });
    format!("Here is the structured request.\n```json\n{}\n```", serde_json::to_string_pretty(&body).expect("json"))
}

/// Proposal items as `{name, tier}` objects.
pub(crate) fn items_of(catalog: &Catalog, ids: &[OfferingId]) -> Vec<Value> {
    ids.iter()
        .filter_map(|id| catalog.offering(id))
        .map(|o| json!({ "name": o.name, "tier": o.tier }))
        .collect()
}

pub(crate) fn proposals_text(proposals: &[(Vec<Value>, Option<Cents>, String)], budget_note: &str) -> String {
    let list: Vec<Value> = proposals
        .iter()
        .map(|(items, total, rationale)| {
            json!({ "items": items, "statedTotalEur": total.map(|t| t.whole_euros()), "rationale": rationale })
        })
        .collect();
    let intro = if proposals.is_empty() {
        format!("No combination of the required products fits {budget_note}.")
    } else {
        format!("I found {} catalog bundles {budget_note}.", proposals.len())
    };
    let body = json!({ "proposals": list });
    format!("{intro}\n```json\n{}\n```", serde_json::to_string_pretty(&body).expect("json"))
}

pub(crate) fn budget_note(contract: &IntentContract) -> String {
    let days = contract.duration_hint_days.unwrap_or(DEFAULT_DAYS);
    match &contract.budget {
        Some(b) => format!("within the budget of {} for {days} days", b.amount),
        None => format!("for {days} days"),
    }
}

pub(crate) fn oracle_q2_text(catalog: &Catalog, contract: &IntentContract) -> String {
    let days = contract.duration_hint_days.unwrap_or(DEFAULT_DAYS);
    let proposals: Vec<_> = oracle_proposals(catalog, contract)
        .into_iter()
        .enumerate()
        .map(|(i, ids)| {
            let total = catalog.quote(&ids, days, None).ok().map(|q| q.total_cost);
            let why = if i == 0 { "Highest tiers that fit the budget" } else { "Lowest cost option" };
            (items_of(catalog, &ids), total, why.to_owned())
        })
        .collect();
    proposals_text(&proposals, &budget_note(contract))
}

/// Dates the user asked for, from the latest user turn; falls back to the
/// contract's duration hint.
pub(crate) fn requested_dates(req: &CompletionRequest<'_>) -> (Option<NaiveDate>, Option<u32>) {
    let text = req.last_user_text();
    (extract::start_date(text), extract::duration_days(text).or(req.contract.duration_hint_days))
}

pub(crate) fn temporal_text(start: Option<NaiveDate>, days: Option<u32>) -> String {
    let body = json!({ "startDate": start.map(|d| d.to_string()), "durationDays": days });
    format!("Lifecycle noted.\n```json\n{body}\n```")
}

pub(crate) fn quote_call(draft: &OrderPayload) -> RequestedCall {
    let ids: Vec<&str> = draft.order_items.iter().map(|i| i.offering_id.as_str()).collect();
    call("Q5-quote".into(), "cost.quote", json!({ "items": ids, "durationDays": draft.duration_days }))
}

/// Total from the most recent cost.quote result, else the draft total.
pub(crate) fn quoted_total(req: &CompletionRequest<'_>, draft: &OrderPayload) -> Cents {
    req.recent_tool_results()
        .filter_map(|t| serde_json::from_str::<Value>(&t.content).ok())
        .filter_map(|v| v.pointer("/payload/quote/totalCost").and_then(Value::as_u64))
        .last()
        .map(Cents)
        .unwrap_or(draft.total_cost)
}

pub(crate) fn summary_text(draft: &OrderPayload, stated_total: Cents) -> String {
    let items: Vec<String> = draft
        .order_items
        .iter()
        .map(|i| match &i.tier {
            Some(t) => format!("{} ({t})", i.offering_name),
            None => i.offering_name.clone(),
        })
        .collect();
    let city = draft
        .order_items
        .iter()
        .find_map(|i| i.parameters.get("cityName"))
        .map(|c| format!(" in {c}"))
        .unwrap_or_default();
    format!(
        "The order draft covers {}{city}, starting {} for {} days. Total cost: {stated_total}. \
         Reply with an explicit confirmation to place it.",
        items.join(", "),
        draft.start_date,
        draft.duration_days
    )
}

#[derive(Debug)]
pub struct OracleBackend {
    catalog: Arc<Catalog>,
}

impl OracleBackend {
    pub fn new(catalog: Arc<Catalog>) -> Self {
        Self { catalog }
    }
}

impl AgentBackend for OracleBackend {
    fn name(&self) -> &str {
        "oracle"
    }

    fn complete(&self, req: &CompletionRequest<'_>) -> Result<ChatTurn, BackendError> {
        req.validate()?;
        let step = req.step();
        let turn = match req.stage {
            Stage::Ingestion => ChatTurn::assistant(extraction_text(req.contract)),
            Stage::Alternatives if step == 0 => ChatTurn::assistant_calls("", search_calls(req.stage)),
            Stage::Alternatives => ChatTurn::assistant(oracle_q2_text(&self.catalog, req.contract)),
            Stage::Combination => ChatTurn::assistant("Please choose one of the proposed bundles."),
            Stage::Temporal => {
                let (start, days) = requested_dates(req);
                ChatTurn::assistant(temporal_text(start, days))
            }
            Stage::Confirmation => match req.draft {
                Some(d) if step == 0 => ChatTurn::assistant_calls("", vec![quote_call(d)]),
                Some(d) => ChatTurn::assistant(summary_text(d, quoted_total(req, d))),
                None => ChatTurn::assistant("There is no order draft yet."),
            },
            Stage::Confirmed | Stage::Aborted => ChatTurn::assistant("This session is closed."),
        };
        Ok(turn)
    }
}
