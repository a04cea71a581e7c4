//! Tool gateway: the only path from agents to the catalog and to order placement.

mod audit;
mod inventory;
mod order;
mod policy;
mod token;
mod tools;

use std::sync::{Arc, Mutex};
use std::time::Duration;

use serde_json::{json, Value};
use thiserror::Error;

pub use audit::{audit_response, finding_key, PolicyFindings, PRODUCT_HEADS};
pub use inventory::{OrderInventory, OrderRecord, INVENTORY_FORMAT_VERSION};
pub use order::{
    build_order_payload, order_id_for, verify_payload, OrderItem, OrderParameters, OrderPayload, ORDER_SCHEMA_VERSION,
};
pub use policy::{PolicyAction, PolicyDecision, RuleId, SkillPolicy};
pub use token::{ConfirmationToken, TokenProblem, TOKEN_TTL};
pub use tools::{
    list_tools, CallOrigin, LedgerEntry, ToolCall, ToolDescriptor, ToolLedger, ToolName, ToolParameter, ToolResult,
    ToolStatus,
};

use crate::catalog::{Catalog, CatalogError, ConstraintSet, OfferingId, OfferingRef};
use crate::clock::SharedClock;
use crate::money::Cents;
use token::TokenRegistry;

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("missing order parameters: {}", .0.join(", "))]
    MissingParameter(Vec<String>),
    #[error("unresolved offering: {0}")]
    Unresolved(String),
    #[error("denied by {0}: {1}")]
    Denied(RuleId, String),
    #[error("integrity violation: {0}")]
    Integrity(String),
    #[error("invalid arguments: {0}")]
    InvalidArguments(String),
    #[error("storage: {0}")]
    Storage(#[from] std::io::Error),
}

/// Shared, thread-safe gateway. One instance serves every session.
#[derive(Debug)]
pub struct ToolGateway {
    catalog: Arc<Catalog>,
    policy: SkillPolicy,
    tokens: Mutex<TokenRegistry>,
    inventory: Arc<OrderInventory>,
    clock: SharedClock,
}

impl ToolGateway {
    pub fn new(catalog: Arc<Catalog>, policy: SkillPolicy, inventory: Arc<OrderInventory>, clock: SharedClock) -> Self {
        Self::with_token_ttl(catalog, policy, inventory, clock, TOKEN_TTL)
    }

    pub fn with_token_ttl(
        catalog: Arc<Catalog>,
        policy: SkillPolicy,
        inventory: Arc<OrderInventory>,
        clock: SharedClock,
        ttl: Duration,
    ) -> Self {
        let tokens = Mutex::new(TokenRegistry::new(clock.clone(), ttl));
        Self { catalog, policy, tokens, inventory, clock }
    }

    pub fn catalog(&self) -> &Arc<Catalog> {
        &self.catalog
    }

    pub fn policy(&self) -> SkillPolicy {
        self.policy
    }

    pub fn inventory(&self) -> &Arc<OrderInventory> {
        &self.inventory
    }

    pub fn clock(&self) -> &SharedClock {
        &self.clock
    }

    pub fn list_tools(&self) -> Vec<ToolDescriptor> {
        list_tools()
    }

    /// Policy check for an action in a session, given its ledger so far.
    /// R4 is checked before R2, so a tokenless order is always an R4 denial.
    pub fn enforce_policy(&self, action: PolicyAction<'_>, session_id: &str, ledger: &ToolLedger) -> PolicyDecision {
        if let PolicyAction::PlaceOrder { token } = action {
            if self.policy.is_active(RuleId::R4) {
                let tokens = self.tokens.lock().expect("token lock");
                if tokens.check(token, session_id).is_err() {
                    return PolicyDecision::Deny(RuleId::R4);
                }
            }
        }
        if matches!(action, PolicyAction::PlaceOrder { .. } | PolicyAction::SubmitProposal)
            && self.policy.is_active(RuleId::R2)
            && ledger.catalog_lookups() == 0
        {
            return PolicyDecision::Deny(RuleId::R2);
        }
        PolicyDecision::Allow
    }

    /// Runs one tool call and appends it with its result to the ledger.
    /// `draft` is the session's current order draft, used by order.place.
    pub fn invoke(&self, call: ToolCall, ledger: &mut ToolLedger, draft: Option<&OrderPayload>) -> ToolResult {
        let result = self.dispatch(&call, ledger, draft);
        tracing::debug!(tool = %call.tool_name, status = ?result.status, session = %call.session_id, "tool call");
        ledger.record(call, result.clone());
        result
    }

    fn dispatch(&self, call: &ToolCall, ledger: &ToolLedger, draft: Option<&OrderPayload>) -> ToolResult {
        let id = call.call_id.as_str();
        let Some(tool) = call.tool() else {
            return ToolResult::error(id, format!("unknown tool `{}`", call.tool_name));
        };
        let args = &call.arguments;
        match tool {
            ToolName::CatalogSearch => match search_constraints(args) {
                Ok(q) => {
                    let hits: Vec<_> = self.catalog.search_offerings(&q);
                    ToolResult::ok(id, json!({ "offerings": hits }))
                }
                Err(e) => ToolResult::error(id, e),
            },
            ToolName::CatalogGet => match get_reference(args) {
                Ok(r) => match self.catalog.resolve_offering(&r) {
                    Ok(o) => ToolResult::ok(id, json!({ "offering": o })),
                    Err(e) => ToolResult::ok(id, not_found(&e)),
                },
                Err(e) => ToolResult::error(id, e),
            },
            ToolName::CatalogDecompose => match args.get("offeringId").and_then(Value::as_str) {
                Some(o) => match self.catalog.decompose_offering(&OfferingId::from(o)) {
                    Ok(tree) => ToolResult::ok(id, json!({ "decomposition": tree })),
                    Err(e) => ToolResult::ok(id, not_found(&e)),
                },
                None => ToolResult::error(id, "offeringId is required"),
            },
            ToolName::CostQuote => self.quote_call(id, args),
            ToolName::OrderPlace => {
                let token = args.get("confirmationToken").and_then(Value::as_str);
                match self.enforce_policy(PolicyAction::PlaceOrder { token }, &call.session_id, ledger) {
                    PolicyDecision::Deny(rule) => ToolResult::denied(id, rule, &self.denial_reason(rule, token, call)),
                    PolicyDecision::Allow => {
                        let Some(draft) = draft.filter(|d| d.session_id == call.session_id) else {
                            return ToolResult::error(id, "no order draft for this session");
                        };
                        match self.place_order(draft, token) {
                            Ok(record) => ToolResult::ok(id, json!({ "order": record })),
                            Err(GatewayError::Denied(rule, why)) => ToolResult::denied(id, rule, &why),
                            Err(e) => ToolResult::error(id, e.to_string()),
                        }
                    }
                }
            }
        }
    }

    fn denial_reason(&self, rule: RuleId, token: Option<&str>, call: &ToolCall) -> String {
        match rule {
            RuleId::R4 => {
                let tokens = self.tokens.lock().expect("token lock");
                match tokens.check(token, &call.session_id) {
                    Err(p) => p.describe().to_owned(),
                    Ok(()) => "confirmation required".to_owned(),
                }
            }
            RuleId::R2 => "no catalog lookup in this session".to_owned(),
            other => other.instruction().to_owned(),
        }
    }

    fn quote_call(&self, id: &str, args: &Value) -> ToolResult {
        let Some(items) = args.get("items").and_then(Value::as_array) else {
            return ToolResult::error(id, "items must be an array");
        };
        let Some(days) = args.get("durationDays").and_then(Value::as_u64) else {
            return ToolResult::error(id, "durationDays must be a positive integer");
        };
        let budget = args.get("budgetEur").and_then(Value::as_u64).map(Cents::from_euros);
        let mut ids = Vec::with_capacity(items.len());
        for item in items {
            let reference = match item {
                Value::String(s) => OfferingRef::id(s.as_str()),
                other => match serde_json::from_value::<OfferingRef>(other.clone()) {
                    Ok(r) => r,
                    Err(e) => return ToolResult::error(id, format!("bad item: {e}")),
                },
            };
            match self.catalog.resolve_offering(&reference) {
                Ok(o) => ids.push(o.id.clone()),
                Err(e) => return ToolResult::ok(id, not_found(&e)),
            }
        }
        match self.catalog.quote(&ids, u32::try_from(days).unwrap_or(u32::MAX), budget) {
            Ok(q) => ToolResult::ok(id, json!({ "quote": q })),
            Err(e) => ToolResult::error(id, e.to_string()),
        }
    }

    /// Mints the single-use token for a session. In a running service only
    /// the dialogue engine's confirm step calls this; agents never see it.
    pub fn mint_token(&self, session_id: &str) -> ConfirmationToken {
        self.tokens.lock().expect("token lock").mint(session_id)
    }

    /// Places a verified draft, consuming the token. The token lock is held
    /// from check to consume, so concurrent replays of one token place at
    /// most one order.
    pub fn place_order(&self, payload: &OrderPayload, token: Option<&str>) -> Result<OrderRecord, GatewayError> {
        let mut tokens = self.tokens.lock().expect("token lock");
        if self.policy.is_active(RuleId::R4) {
            if let Err(p) = tokens.check(token, &payload.session_id) {
                return Err(GatewayError::Denied(RuleId::R4, p.describe().to_owned()));
            }
        }
        verify_payload(&self.catalog, payload)?;
        let token_id = token.unwrap_or_default();
        let record = self.inventory.append(payload.clone(), token_id, self.clock.timestamp())?;
        tokens.consume(token_id);
        Ok(record)
    }

    pub fn audit_response(&self, text: &str) -> PolicyFindings {
        audit_response(&self.catalog, text)
    }
}

fn not_found(e: &CatalogError) -> Value {
    match e {
        CatalogError::Ambiguous { name, tiers } => json!({ "ambiguous": name, "tiers": tiers }),
        other => json!({ "notFound": other.to_string() }),
    }
}

fn string_list(v: Option<&Value>) -> Result<Vec<String>, String> {
    match v {
        None | Some(Value::Null) => Ok(Vec::new()),
        Some(Value::String(s)) => Ok(s.split_whitespace().map(str::to_owned).collect()),
        Some(Value::Array(a)) => a
            .iter()
            .map(|x| x.as_str().map(str::to_owned).ok_or_else(|| "expected a list of strings".to_owned()))
            .collect(),
        Some(_) => Err("expected a list of strings".into()),
    }
}

fn search_constraints(args: &Value) -> Result<ConstraintSet, String> {
    let max_daily_cost = match args.get("maxDailyCostEur") {
        None | Some(Value::Null) => None,
        Some(v) => Some(Cents::from_euros(v.as_u64().ok_or("maxDailyCostEur must be a non-negative integer")?)),
    };
    Ok(ConstraintSet {
        keywords: string_list(args.get("keywords"))?,
        max_daily_cost,
        required_parameters: string_list(args.get("requiredParameters"))?,
    })
}

fn get_reference(args: &Value) -> Result<OfferingRef, String> {
    if let Some(id) = args.get("id").and_then(Value::as_str) {
        return Ok(OfferingRef::id(id));
    }
    match args.get("name").and_then(Value::as_str) {
        Some(name) => Ok(OfferingRef::named(name, args.get("tier").and_then(Value::as_str))),
        None => Err("either id or name is required".into()),
    }
}
