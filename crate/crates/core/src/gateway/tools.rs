use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::policy::RuleId;
use crate::dialogue::Stage;

/// The closed set of tools agents can call.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ToolName {
    #[serde(rename = "catalog.search")]
    CatalogSearch,
    #[serde(rename = "catalog.get")]
    CatalogGet,
    #[serde(rename = "catalog.decompose")]
    CatalogDecompose,
    #[serde(rename = "cost.quote")]
    CostQuote,
    #[serde(rename = "order.place")]
    OrderPlace,
}

impl ToolName {
    pub const ALL: [ToolName; 5] = [
        ToolName::CatalogSearch,
        ToolName::CatalogGet,
        ToolName::CatalogDecompose,
        ToolName::CostQuote,
        ToolName::OrderPlace,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ToolName::CatalogSearch => "catalog.search",
            ToolName::CatalogGet => "catalog.get",
            ToolName::CatalogDecompose => "catalog.decompose",
            ToolName::CostQuote => "cost.quote",
            ToolName::OrderPlace => "order.place",
        }
    }

    pub fn parse(name: &str) -> Option<ToolName> {
        ToolName::ALL.into_iter().find(|t| t.as_str() == name)
    }

    /// Lookups that count as grounding a product mapping in the catalog.
    pub fn is_catalog_lookup(self) -> bool {
        matches!(self, ToolName::CatalogSearch | ToolName::CatalogGet)
    }
}

impl fmt::Display for ToolName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ToolParameter {
    pub name: String,
    /// JSON type name: `string`, `integer`, `array`, `object`.
    #[serde(rename = "type")]
    pub kind: String,
    pub required: bool,
    pub description: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ToolDescriptor {
    pub name: ToolName,
    pub description: String,
    pub parameters: Vec<ToolParameter>,
}

impl ToolDescriptor {
    /// JSON-schema object for the parameters, as function-calling endpoints expect.
    pub fn parameters_schema(&self) -> Value {
        let mut props = serde_json::Map::new();
        let mut required = Vec::new();
        for p in &self.parameters {
            let mut schema = json!({ "type": p.kind, "description": p.description });
            if p.kind == "array" {
                schema["items"] = json!({});
            }
            props.insert(p.name.clone(), schema);
            if p.required {
                required.push(p.name.clone());
            }
        }
        json!({ "type": "object", "properties": props, "required": required })
    }
}

fn param(name: &str, kind: &str, required: bool, description: &str) -> ToolParameter {
    ToolParameter { name: name.into(), kind: kind.into(), required, description: description.into() }
}

/// The five tool descriptors, in fixed order.
pub fn list_tools() -> Vec<ToolDescriptor> {
    vec![
        ToolDescriptor {
            name: ToolName::CatalogSearch,
            description: "Search product offerings by keywords. Returns offerings with tier, parameters and unit cost.".into(),
            parameters: vec![
                param("keywords", "array", true, "Keywords matched against offering names"),
                param("maxDailyCostEur", "integer", false, "Upper bound on the recurring daily cost in euros"),
                param("requiredParameters", "array", false, "Order parameters the offering must accept"),
            ],
        },
        ToolDescriptor {
            name: ToolName::CatalogGet,
            description: "Fetch one offering by id, or by exact name and tier.".into(),
            parameters: vec![
                param("id", "string", false, "Offering id"),
                param("name", "string", false, "Exact offering name"),
                param("tier", "string", false, "Tier, required when the name has several"),
            ],
        },
        ToolDescriptor {
            name: ToolName::CatalogDecompose,
            description: "Show how an offering is delivered, for internal planning only.".into(),
            parameters: vec![param("offeringId", "string", true, "Offering id")],
        },
        ToolDescriptor {
            name: ToolName::CostQuote,
            description: "Price a bundle of offerings for a number of days.".into(),
            parameters: vec![
                param("items", "array", true, "Offering ids, or {name, tier} objects"),
                param("durationDays", "integer", true, "Number of billable days, at least 1"),
                param("budgetEur", "integer", false, "Budget in euros to compare against"),
            ],
        },
        ToolDescriptor {
            name: ToolName::OrderPlace,
            description: "Place the confirmed order. Only valid with the confirmation token issued after the user confirms.".into(),
            parameters: vec![
                param("confirmationToken", "string", true, "Token issued on explicit user confirmation"),
            ],
        },
    ]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CallOrigin {
    Agent,
    Engine,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ToolCall {
    pub call_id: String,
    /// Raw name as requested; may name no known tool.
    pub tool_name: String,
    pub arguments: Value,
    pub session_id: String,
    pub stage: Stage,
    pub origin: CallOrigin,
}

impl ToolCall {
    pub fn tool(&self) -> Option<ToolName> {
        ToolName::parse(&self.tool_name)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ToolStatus {
    Ok,
    Denied,
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ToolResult {
    pub call_id: String,
    pub status: ToolStatus,
    pub payload: Value,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rule: Option<RuleId>,
}

impl ToolResult {
    pub fn ok(call_id: &str, payload: Value) -> Self {
        Self { call_id: call_id.into(), status: ToolStatus::Ok, payload, rule: None }
    }

    pub fn denied(call_id: &str, rule: RuleId, reason: &str) -> Self {
        Self {
            call_id: call_id.into(),
            status: ToolStatus::Denied,
            payload: json!({ "denied": rule, "reason": reason }),
            rule: Some(rule),
        }
    }

    pub fn error(call_id: &str, message: impl Into<String>) -> Self {
        Self {
            call_id: call_id.into(),
            status: ToolStatus::Error,
            payload: json!({ "error": message.into() }),
            rule: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub call: ToolCall,
    pub result: ToolResult,
}

/// Every tool call made in a session, each paired with its result.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ToolLedger {
    entries: Vec<LedgerEntry>,
}

impl ToolLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub(crate) fn record(&mut self, call: ToolCall, result: ToolResult) {
        debug_assert_eq!(call.call_id, result.call_id);
        self.entries.push(LedgerEntry { call, result });
    }

    pub fn entries(&self) -> &[LedgerEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn catalog_lookups(&self) -> usize {
        self.entries
            .iter()
            .filter(|e| e.call.tool().is_some_and(ToolName::is_catalog_lookup))
            .count()
    }

    pub fn catalog_lookups_in(&self, stage: Stage) -> usize {
        self.entries
            .iter()
            .filter(|e| e.call.stage == stage && e.call.tool().is_some_and(ToolName::is_catalog_lookup))
            .count()
    }

    pub fn contains_call(&self, call_id: &str) -> bool {
        self.entries.iter().any(|e| e.call.call_id == call_id)
    }
}
