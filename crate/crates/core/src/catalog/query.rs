use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{Billing, Catalog, CatalogError, OfferingId, OfferingRef, ProductOffering};
use crate::money::Cents;

/// Search filter for [`Catalog::search_offerings`].
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ConstraintSet {
    #[serde(default)]
    pub keywords: Vec<String>,
    /// Recurring cost cap. One-off offerings carry no daily cost.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_daily_cost: Option<Cents>,
    /// Offerings must declare every one of these order parameters.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub required_parameters: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", rename_all_fields = "camelCase", tag = "kind")]
pub enum ResolveProblem {
    NotFound,
    Ambiguous { tiers: Vec<String> },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ItemValidation {
    pub reference: OfferingRef,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub offering_id: Option<OfferingId>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub problem: Option<ResolveProblem>,
    pub missing_parameters: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ValidationReport {
    pub items: Vec<ItemValidation>,
    pub valid: bool,
}

impl ValidationReport {
    pub fn unresolved(&self) -> impl Iterator<Item = &ItemValidation> {
        self.items.iter().filter(|i| i.problem.is_some())
    }
}

/// Lowercased alphanumeric runs.
pub(crate) fn tokens(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

fn same(a: &str, b: &str) -> bool {
    a.trim().to_lowercase() == b.trim().to_lowercase()
}

impl Catalog {
    /// Exact lookup. Names and tiers compare case-insensitively; nothing else is
    /// forgiven, so an invented product name never resolves.
    pub fn resolve_offering(&self, reference: &OfferingRef) -> Result<&ProductOffering, CatalogError> {
        match reference {
            OfferingRef::Id(id) => self.offering(id).ok_or_else(|| CatalogError::NotFound(id.0.clone())),
            OfferingRef::Named { name, tier } => {
                let same_name: Vec<&ProductOffering> =
                    self.offerings.iter().filter(|o| same(&o.name, name)).collect();
                match tier {
                    Some(t) => same_name
                        .into_iter()
                        .find(|o| o.tier.as_deref().is_some_and(|ot| same(ot, t)))
                        .ok_or_else(|| CatalogError::NotFound(reference.to_string())),
                    None => match same_name.as_slice() {
                        [] => Err(CatalogError::NotFound(reference.to_string())),
                        [only] => Ok(only),
                        many => Err(CatalogError::Ambiguous {
                            name: name.clone(),
                            tiers: many.iter().filter_map(|o| o.tier.clone()).collect(),
                        }),
                    },
                }
            }
        }
    }

    /// Offerings matching `query`, best first.
    ///
    /// The score is the share of name characters covered by name tokens that
    /// equal a query token; ties go to the cheaper offering, then the smaller
    /// id. With keywords present, offerings scoring zero are dropped.
    pub fn search_offerings(&self, query: &ConstraintSet) -> Vec<&ProductOffering> {
        let wanted: Vec<String> = query.keywords.iter().flat_map(|k| tokens(k)).collect();
        let mut scored: Vec<(&ProductOffering, u64, u64)> = self
            .offerings
            .iter()
            .filter(|o| match query.max_daily_cost {
                Some(cap) => o.billing == Billing::Once || o.unit_cost <= cap,
                None => true,
            })
            .filter(|o| query.required_parameters.iter().all(|p| o.parameter_names.contains(p)))
            .map(|o| {
                let name_tokens = tokens(&o.name);
                let total: usize = name_tokens.iter().map(|t| t.chars().count()).sum();
                let hit: usize = name_tokens
                    .iter()
                    .filter(|t| wanted.contains(t))
                    .map(|t| t.chars().count())
                    .sum();
                (o, hit as u64, total.max(1) as u64)
            })
            .filter(|&(_, hit, _)| wanted.is_empty() || hit > 0)
            .collect();
        scored.sort_by(|a, b| {
            // a.hit/a.total vs b.hit/b.total, descending, in exact integer arithmetic
            let by_overlap = (b.1 * a.2).cmp(&(a.1 * b.2));
            by_overlap
                .then(a.0.unit_cost.cmp(&b.0.unit_cost))
                .then(a.0.id.cmp(&b.0.id))
        });
        scored.into_iter().map(|(o, _, _)| o).collect()
    }

    /// Checks that every item resolves and that `provided` supplies each
    /// required order parameter with a non-blank value.
    pub fn validate_bundle(&self, items: &[OfferingRef], provided: &BTreeMap<String, String>) -> ValidationReport {
        let items: Vec<ItemValidation> = items
            .iter()
            .map(|reference| match self.resolve_offering(reference) {
                Ok(o) => ItemValidation {
                    reference: reference.clone(),
                    offering_id: Some(o.id.clone()),
                    problem: None,
                    missing_parameters: o
                        .parameter_names
                        .iter()
                        .filter(|p| provided.get(*p).is_none_or(|v| v.trim().is_empty()))
                        .cloned()
                        .collect(),
                },
                Err(e) => ItemValidation {
                    reference: reference.clone(),
                    offering_id: None,
                    problem: Some(match e {
                        CatalogError::Ambiguous { tiers, .. } => ResolveProblem::Ambiguous { tiers },
                        _ => ResolveProblem::NotFound,
                    }),
                    missing_parameters: Vec::new(),
                },
            })
            .collect();
        let valid = items.iter().all(|i| i.problem.is_none() && i.missing_parameters.is_empty());
        ValidationReport { items, valid }
    }
}
