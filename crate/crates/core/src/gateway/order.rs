//! Order payloads and their canonical serialization.
//!
//! A payload serializes to compact JSON with keys in declaration order and
//! item parameters sorted by name, so equal drafts are byte-equal.

use std::collections::BTreeMap;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use super::GatewayError;
use crate::catalog::{Catalog, OfferingId};
use crate::dialogue::TemporalSpec;
use crate::money::Cents;

pub const ORDER_SCHEMA_VERSION: &str = "1.0";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct OrderItem {
    pub offering_id: OfferingId,
    pub offering_name: String,
    pub tier: Option<String>,
    pub parameters: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct OrderPayload {
    pub schema_version: String,
    pub order_id: String,
    pub session_id: String,
    pub order_items: Vec<OrderItem>,
    pub start_date: NaiveDate,
    pub duration_days: u32,
    pub total_cost: Cents,
    pub currency: String,
}

impl OrderPayload {
    pub fn canonical_bytes(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("payload serializes")
    }

    pub fn canonical_string(&self) -> String {
        serde_json::to_string(self).expect("payload serializes")
    }

    pub fn offering_ids(&self) -> Vec<OfferingId> {
        self.order_items.iter().map(|i| i.offering_id.clone()).collect()
    }
}

/// Values for the order parameters an offering may declare.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct OrderParameters {
    pub city_name: Option<String>,
    pub slice_profile: Option<String>,
}

impl OrderParameters {
    fn value(&self, name: &str) -> Option<&str> {
        let v = match name {
            "cityName" => self.city_name.as_deref(),
            "sliceProfile" => self.slice_profile.as_deref(),
            _ => None,
        };
        v.filter(|s| !s.trim().is_empty())
    }

    pub fn as_map(&self) -> BTreeMap<String, String> {
        let mut m = BTreeMap::new();
        if let Some(c) = self.value("cityName") {
            m.insert("cityName".into(), c.into());
        }
        if let Some(p) = self.value("sliceProfile") {
            m.insert("sliceProfile".into(), p.into());
        }
        m
    }
}

/// Deterministic order id for a session.
pub fn order_id_for(session_id: &str) -> String {
    format!("ord-{session_id}")
}

/// Builds the canonical payload for a selected bundle.
pub fn build_order_payload(
    catalog: &Catalog,
    session_id: &str,
    selected: &[OfferingId],
    temporal: &TemporalSpec,
    params: &OrderParameters,
) -> Result<OrderPayload, GatewayError> {
    let mut missing: Vec<String> = Vec::new();
    let mut order_items = Vec::with_capacity(selected.len());
    for id in selected {
        let offering = catalog.offering(id).ok_or_else(|| GatewayError::Unresolved(id.0.clone()))?;
        let mut parameters = BTreeMap::new();
        for name in &offering.parameter_names {
            match params.value(name) {
                Some(v) => {
                    parameters.insert(name.clone(), v.to_owned());
                }
                None => {
                    if !missing.contains(name) {
                        missing.push(name.clone());
                    }
                }
            }
        }
        order_items.push(OrderItem {
            offering_id: id.clone(),
            offering_name: offering.name.clone(),
            tier: offering.tier.clone(),
            parameters,
        });
    }
    if !missing.is_empty() {
        missing.sort();
        return Err(GatewayError::MissingParameter(missing));
    }
    let quote = catalog
        .quote(selected, temporal.duration_days, None)
        .map_err(|e| GatewayError::Unresolved(e.to_string()))?;
    Ok(OrderPayload {
        schema_version: ORDER_SCHEMA_VERSION.into(),
        order_id: order_id_for(session_id),
        session_id: session_id.into(),
        order_items,
        start_date: temporal.start_date,
        duration_days: temporal.duration_days,
        total_cost: quote.total_cost,
        currency: "EUR".into(),
    })
}

/// Re-checks a payload against the catalog: items resolve and match, parameters
/// are complete, and the total equals the catalog quote.
pub fn verify_payload(catalog: &Catalog, payload: &OrderPayload) -> Result<(), GatewayError> {
    if payload.currency != "EUR" {
        return Err(GatewayError::Integrity(format!("unsupported currency {}", payload.currency)));
    }
    for item in &payload.order_items {
        let offering = catalog
            .offering(&item.offering_id)
            .ok_or_else(|| GatewayError::Integrity(format!("unknown offering `{}`", item.offering_id)))?;
        if offering.name != item.offering_name || offering.tier != item.tier {
            return Err(GatewayError::Integrity(format!(
                "item `{}` does not match catalog entry {}",
                item.offering_name,
                offering.label()
            )));
        }
        if let Some(p) = offering
            .parameter_names
            .iter()
            .find(|p| item.parameters.get(*p).is_none_or(|v| v.trim().is_empty()))
        {
            return Err(GatewayError::Integrity(format!("item `{}` lacks parameter {p}", item.offering_id)));
        }
    }
    let quote = catalog
        .quote(&payload.offering_ids(), payload.duration_days, None)
        .map_err(|e| GatewayError::Integrity(e.to_string()))?;
    if quote.total_cost != payload.total_cost {
        return Err(GatewayError::Integrity(format!(
            "total {} differs from catalog quote {}",
            payload.total_cost, quote.total_cost
        )));
    }
    Ok(())
}
