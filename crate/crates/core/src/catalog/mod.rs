//! The product catalog and its specification graph.
//!
//! A [`Catalog`] is loaded once from a JSON document, validated, and never
//! mutated afterwards. Offerings point at product specifications; policy rules
//! connect product specifications to service specifications and those to
//! resource specifications. Every query here is a pure function of the catalog
//! and its inputs, so a catalog can be shared freely across threads.

mod decompose;
mod load;
mod query;
mod quote;

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::money::Cents;

pub use decompose::{DecompositionNode, DecompositionTree};
pub use load::REFERENCE_CATALOG;
pub use query::{ConstraintSet, ItemValidation, ResolveProblem, ValidationReport};
pub use quote::{CostQuote, QuoteLine};

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct OfferingId(pub String);

impl OfferingId {
    pub fn new(id: impl Into<String>) -> Self {
        Self(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for OfferingId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for OfferingId {
    fn from(s: &str) -> Self {
        Self(s.to_owned())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SpecId(pub String);

impl SpecId {
    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for SpecId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Billing {
    PerDay,
    Once,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Layer {
    Product,
    Service,
    Resource,
}

impl Layer {
    /// The only layer a rule starting at `self` may point to.
    pub fn next(self) -> Option<Layer> {
        match self {
            Layer::Product => Some(Layer::Service),
            Layer::Service => Some(Layer::Resource),
            Layer::Resource => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ProductOffering {
    pub id: OfferingId,
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tier: Option<String>,
    pub parameter_names: Vec<String>,
    /// Euro-cents.
    pub unit_cost: Cents,
    pub billing: Billing,
    pub product_spec_id: SpecId,
}

impl ProductOffering {
    /// `Name (Tier)`, or just the name for untiered offerings.
    pub fn label(&self) -> String {
        match &self.tier {
            Some(t) => format!("{} ({})", self.name, t),
            None => self.name.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Characteristic {
    pub name: String,
    pub value_type: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub allowed_values: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SpecNode {
    pub id: SpecId,
    pub name: String,
    pub layer: Layer,
    #[serde(default)]
    pub characteristics: Vec<Characteristic>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub domain: Option<String>,
}

/// Equality or inclusive range test on one named characteristic.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Condition {
    pub characteristic: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub equals: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min: Option<i64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max: Option<i64>,
}

impl Condition {
    pub fn holds(&self, context: &BTreeMap<String, String>) -> bool {
        let Some(value) = context.get(&self.characteristic) else {
            return false;
        };
        if let Some(expected) = &self.equals {
            if value != expected {
                return false;
            }
        }
        if self.min.is_some() || self.max.is_some() {
            let Ok(n) = value.trim().parse::<i64>() else {
                return false;
            };
            if self.min.is_some_and(|m| n < m) || self.max.is_some_and(|m| n > m) {
                return false;
            }
        }
        true
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct PolicyRule {
    pub id: String,
    pub from_spec_id: SpecId,
    pub to_spec_id: SpecId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub condition: Option<Condition>,
    #[serde(default)]
    pub note: String,
}

/// A reference to an offering as an agent or user would write it.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(untagged)]
pub enum OfferingRef {
    Id(OfferingId),
    Named {
        name: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        tier: Option<String>,
    },
}

impl OfferingRef {
    pub fn named(name: impl Into<String>, tier: Option<&str>) -> Self {
        OfferingRef::Named { name: name.into(), tier: tier.map(str::to_owned) }
    }

    pub fn id(id: impl Into<String>) -> Self {
        OfferingRef::Id(OfferingId(id.into()))
    }
}

impl fmt::Display for OfferingRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OfferingRef::Id(id) => write!(f, "{id}"),
            OfferingRef::Named { name, tier: Some(t) } => write!(f, "{name} ({t})"),
            OfferingRef::Named { name, tier: None } => f.write_str(name),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum IntegrityError {
    #[error("duplicate id `{0}`")]
    DuplicateId(String),
    #[error("duplicate offering name/tier `{0}`")]
    DuplicateOffering(String),
    #[error("offering `{0}` has a negative unit cost")]
    NegativeCost(String),
    #[error("`{from}` references missing id `{missing}`")]
    DanglingReference { from: String, missing: String },
    #[error("offering `{offering}` must reference a Product-layer spec, `{spec}` is not")]
    NotAProductSpec { offering: String, spec: String },
    #[error("resource spec `{0}` has no domain label")]
    MissingDomain(String),
    #[error("specification graph has a cycle through `{0}`")]
    Cycle(String),
    #[error("rule `{0}` does not go Product->Service or Service->Resource")]
    LayerOrder(String),
    #[error("offering `{0}` has no path to any resource specification")]
    NoResourcePath(String),
}

impl IntegrityError {
    /// The id the finding is about.
    pub fn offending_id(&self) -> &str {
        match self {
            IntegrityError::DuplicateId(id)
            | IntegrityError::DuplicateOffering(id)
            | IntegrityError::NegativeCost(id)
            | IntegrityError::MissingDomain(id)
            | IntegrityError::Cycle(id)
            | IntegrityError::LayerOrder(id)
            | IntegrityError::NoResourcePath(id) => id,
            IntegrityError::DanglingReference { missing, .. } => missing,
            IntegrityError::NotAProductSpec { spec, .. } => spec,
        }
    }
}

#[derive(Debug, Error)]
pub enum CatalogError {
    #[error("cannot read catalog: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed catalog document: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("catalog integrity: {0}")]
    Integrity(#[from] IntegrityError),
    #[error("no catalog offering matches `{0}`")]
    NotFound(String),
    #[error("`{name}` is offered in several tiers ({})", tiers.join(", "))]
    Ambiguous { name: String, tiers: Vec<String> },
    #[error("duration must be at least one day, got {0}")]
    InvalidDuration(u32),
}

/// Immutable, validated catalog.
#[derive(Debug, Clone)]
pub struct Catalog {
    version: String,
    offerings: Vec<ProductOffering>,
    specs: BTreeMap<SpecId, SpecNode>,
    rules: Vec<PolicyRule>,
    by_id: HashMap<OfferingId, usize>,
    outgoing: HashMap<SpecId, Vec<usize>>,
}

impl Catalog {
    pub fn version(&self) -> &str {
        &self.version
    }

    /// Offerings in document order.
    pub fn offerings(&self) -> &[ProductOffering] {
        &self.offerings
    }

    pub fn specs(&self) -> impl Iterator<Item = &SpecNode> {
        self.specs.values()
    }

    pub fn spec(&self, id: &SpecId) -> Option<&SpecNode> {
        self.specs.get(id)
    }

    /// Rules sorted by id.
    pub fn rules(&self) -> &[PolicyRule] {
        &self.rules
    }

    pub fn offering(&self, id: &OfferingId) -> Option<&ProductOffering> {
        self.by_id.get(id).map(|&i| &self.offerings[i])
    }

    /// Rules leaving `spec`, in rule-id order.
    pub fn rules_from(&self, spec: &SpecId) -> impl Iterator<Item = &PolicyRule> {
        self.outgoing
            .get(spec)
            .into_iter()
            .flatten()
            .map(|&i| &self.rules[i])
    }

    /// Distinct offering names, in document order.
    pub fn offering_names(&self) -> Vec<&str> {
        let mut names: Vec<&str> = Vec::new();
        for o in &self.offerings {
            if !names.contains(&o.name.as_str()) {
                names.push(&o.name);
            }
        }
        names
    }

    /// Names of Service- and Resource-layer specifications.
    pub fn lower_layer_names(&self) -> Vec<&str> {
        self.specs
            .values()
            .filter(|s| s.layer != Layer::Product)
            .map(|s| s.name.as_str())
            .collect()
    }
}
