use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::Path;

use serde::Deserialize;

use super::{
    Billing, Catalog, CatalogError, IntegrityError, Layer, OfferingId, PolicyRule, ProductOffering, SpecId,
    SpecNode,
};
use crate::money::Cents;

/// The catalog shipped with the crate.
pub const REFERENCE_CATALOG: &str = include_str!("../../data/reference-catalog.json");

#[derive(Debug, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
struct CatalogDocument {
    version: String,
    #[serde(default)]
    description: Option<String>,
    #[serde(default)]
    offerings: Vec<OfferingDocument>,
    #[serde(default)]
    specs: Vec<SpecNode>,
    #[serde(default)]
    rules: Vec<PolicyRule>,
}

#[derive(Debug, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
struct OfferingDocument {
    id: String,
    name: String,
    #[serde(default)]
    tier: Option<String>,
    #[serde(default)]
    parameter_names: Vec<String>,
    /// Whole euros.
    unit_cost: i64,
    billing: Billing,
    product_spec_id: SpecId,
}

impl Catalog {
    pub fn from_json(source: &str) -> Result<Catalog, CatalogError> {
        let doc: CatalogDocument = serde_json::from_str(source)?;
        let _ = doc.description;
        Ok(build(doc)?)
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Catalog, CatalogError> {
        let text = std::fs::read_to_string(path)?;
        Catalog::from_json(&text)
    }

    pub fn reference() -> Catalog {
        Catalog::from_json(REFERENCE_CATALOG).expect("bundled catalog is valid")
    }
}

fn name_key(name: &str, tier: Option<&str>) -> String {
    format!("{}\u{1f}{}", name.trim().to_lowercase(), tier.unwrap_or("").trim().to_lowercase())
}

fn build(doc: CatalogDocument) -> Result<Catalog, IntegrityError> {
    let mut seen_ids = HashSet::new();
    let mut seen_names = HashSet::new();
    let mut offerings = Vec::with_capacity(doc.offerings.len());
    for o in doc.offerings {
        if !seen_ids.insert(o.id.clone()) {
            return Err(IntegrityError::DuplicateId(o.id));
        }
        if !seen_names.insert(name_key(&o.name, o.tier.as_deref())) {
            let label = match &o.tier {
                Some(t) => format!("{} ({})", o.name, t),
                None => o.name.clone(),
            };
            return Err(IntegrityError::DuplicateOffering(label));
        }
        if o.unit_cost < 0 {
            return Err(IntegrityError::NegativeCost(o.id));
        }
        offerings.push(ProductOffering {
            id: OfferingId(o.id),
            name: o.name,
            tier: o.tier,
            parameter_names: o.parameter_names,
            unit_cost: Cents::from_euros(o.unit_cost as u64),
            billing: o.billing,
            product_spec_id: o.product_spec_id,
        });
    }

    let mut specs = BTreeMap::new();
    for s in doc.specs {
        if seen_ids.contains(&s.id.0) || specs.contains_key(&s.id) {
            return Err(IntegrityError::DuplicateId(s.id.0));
        }
        specs.insert(s.id.clone(), s);
    }

    let mut rules = doc.rules;
    rules.sort_by(|a, b| a.id.cmp(&b.id));
    let mut rule_ids = HashSet::new();
    for r in &rules {
        if !rule_ids.insert(r.id.as_str()) || seen_ids.contains(&r.id) || specs.contains_key(&SpecId(r.id.clone())) {
            return Err(IntegrityError::DuplicateId(r.id.clone()));
        }
    }

    for o in &offerings {
        let Some(spec) = specs.get(&o.product_spec_id) else {
            return Err(IntegrityError::DanglingReference {
                from: o.id.0.clone(),
                missing: o.product_spec_id.0.clone(),
            });
        };
        if spec.layer != Layer::Product {
            return Err(IntegrityError::NotAProductSpec { offering: o.id.0.clone(), spec: spec.id.0.clone() });
        }
    }
    for r in &rules {
        for end in [&r.from_spec_id, &r.to_spec_id] {
            if !specs.contains_key(end) {
                return Err(IntegrityError::DanglingReference { from: r.id.clone(), missing: end.0.clone() });
            }
        }
    }
    for s in specs.values() {
        if s.layer == Layer::Resource && s.domain.as_deref().is_none_or(|d| d.trim().is_empty()) {
            return Err(IntegrityError::MissingDomain(s.id.0.clone()));
        }
    }

    let mut outgoing: HashMap<SpecId, Vec<usize>> = HashMap::new();
    for (i, r) in rules.iter().enumerate() {
        outgoing.entry(r.from_spec_id.clone()).or_default().push(i);
    }

    if let Some(id) = find_cycle(&specs, &rules, &outgoing) {
        return Err(IntegrityError::Cycle(id.0));
    }
    for r in &rules {
        let from = specs[&r.from_spec_id].layer;
        let to = specs[&r.to_spec_id].layer;
        if from.next() != Some(to) {
            return Err(IntegrityError::LayerOrder(r.id.clone()));
        }
    }

    let catalog = Catalog {
        version: doc.version,
        by_id: offerings.iter().enumerate().map(|(i, o)| (o.id.clone(), i)).collect(),
        offerings,
        specs,
        rules,
        outgoing,
    };
    for o in &catalog.offerings {
        if !reaches_resource(&catalog, &o.product_spec_id) {
            return Err(IntegrityError::NoResourcePath(o.id.0.clone()));
        }
    }
    Ok(catalog)
}

/// Returns a spec on some cycle, visiting specs and edges in id order.
fn find_cycle(
    specs: &BTreeMap<SpecId, SpecNode>,
    rules: &[PolicyRule],
    outgoing: &HashMap<SpecId, Vec<usize>>,
) -> Option<SpecId> {
    #[derive(Clone, Copy, PartialEq)]
    enum Mark {
        Unseen,
        Active,
        Done,
    }
    let mut marks: HashMap<&SpecId, Mark> = specs.keys().map(|k| (k, Mark::Unseen)).collect();

    for start in specs.keys() {
        if marks[start] != Mark::Unseen {
            continue;
        }
        // explicit stack of (node, next edge index)
        let mut stack: Vec<(&SpecId, usize)> = vec![(start, 0)];
        marks.insert(start, Mark::Active);
        while let Some((node, edge)) = stack.pop() {
            let edges = outgoing.get(node).map(Vec::as_slice).unwrap_or(&[]);
            if edge < edges.len() {
                stack.push((node, edge + 1));
                let next = &rules[edges[edge]].to_spec_id;
                match marks[next] {
                    Mark::Active => return Some(next.clone()),
                    Mark::Unseen => {
                        marks.insert(next, Mark::Active);
                        stack.push((next, 0));
                    }
                    Mark::Done => {}
                }
            } else {
                marks.insert(node, Mark::Done);
            }
        }
    }
    None
}

fn reaches_resource(catalog: &Catalog, from: &SpecId) -> bool {
    let mut pending = vec![from];
    let mut seen = HashSet::new();
    while let Some(id) = pending.pop() {
        if !seen.insert(id) {
            continue;
        }
        if catalog.specs[id].layer == Layer::Resource {
            return true;
        }
        pending.extend(catalog.rules_from(id).map(|r| &r.to_spec_id));
    }
    false
}

#[cfg(test)]
mod tests {
    use serde_json::{json, Value};

    use super::*;

    fn reference_doc() -> Value {
        serde_json::from_str(REFERENCE_CATALOG).unwrap()
    }

    fn load(doc: &Value) -> Result<Catalog, CatalogError> {
        Catalog::from_json(&doc.to_string())
    }

    fn integrity(doc: &Value) -> IntegrityError {
        match load(doc) {
            Err(CatalogError::Integrity(e)) => e,
            other => panic!("expected integrity error, got {other:?}"),
        }
    }

    #[test]
    fn reference_catalog_has_nine_offerings_in_cents() {
        let c = Catalog::reference();
        assert_eq!(c.offerings().len(), 9);
        let gold = c.offering(&"po-slice-gold".into()).unwrap();
        assert_eq!(gold.unit_cost, Cents(70_000));
        assert_eq!(c.offering_names().len(), 5);
    }

    #[test]
    fn empty_catalog_is_valid() {
        let c = Catalog::from_json(r#"{"version":"0","offerings":[],"specs":[],"rules":[]}"#).unwrap();
        assert!(c.offerings().is_empty());
    }

    #[test]
    fn malformed_document_is_parse_error() {
        assert!(matches!(Catalog::from_json("{ not json"), Err(CatalogError::Parse(_))));
        assert!(matches!(
            Catalog::from_json(r#"{"version":"0","offerings":[{"id":"x"}]}"#),
            Err(CatalogError::Parse(_))
        ));
    }

    #[test]
    fn dangling_product_spec_names_the_missing_id() {
        let mut doc = reference_doc();
        let specs = doc["specs"].as_array_mut().unwrap();
        specs.retain(|s| s["id"] != "ps-edge-cache");
        doc["rules"].as_array_mut().unwrap().retain(|r| r["fromSpecId"] != "ps-edge-cache");
        let err = integrity(&doc);
        assert_eq!(err.offending_id(), "ps-edge-cache");
        assert!(matches!(err, IntegrityError::DanglingReference { .. }));
    }

    #[test]
    fn cycle_is_rejected_with_a_spec_on_it() {
        let mut doc = reference_doc();
        doc["rules"].as_array_mut().unwrap().push(json!({
            "id": "r-999", "fromSpecId": "rs-gnb-capacity", "toSpecId": "ss-ran-subnet", "note": "loop"
        }));
        let err = integrity(&doc);
        assert!(matches!(err, IntegrityError::Cycle(_)), "{err:?}");
        assert!(["rs-gnb-capacity", "ss-ran-subnet"].contains(&err.offending_id()));
    }

    #[test]
    fn layer_skipping_rule_is_rejected() {
        let mut doc = reference_doc();
        doc["rules"].as_array_mut().unwrap().push(json!({
            "id": "r-900", "fromSpecId": "ps-network-slice", "toSpecId": "rs-gnb-capacity"
        }));
        assert_eq!(integrity(&doc), IntegrityError::LayerOrder("r-900".into()));
    }

    #[test]
    fn resource_without_domain_is_rejected() {
        let mut doc = reference_doc();
        for s in doc["specs"].as_array_mut().unwrap() {
            if s["id"] == "rs-vpn-gateway" {
                s.as_object_mut().unwrap().remove("domain");
            }
        }
        assert_eq!(integrity(&doc), IntegrityError::MissingDomain("rs-vpn-gateway".into()));
    }

    #[test]
    fn offering_without_resource_path_is_rejected() {
        let mut doc = reference_doc();
        doc["rules"].as_array_mut().unwrap().retain(|r| r["id"] != "r-150");
        assert_eq!(integrity(&doc), IntegrityError::NoResourcePath("po-setup-vpn".into()));
    }

    #[test]
    fn duplicate_name_tier_and_negative_cost() {
        let mut doc = reference_doc();
        doc["offerings"].as_array_mut().unwrap().push(json!({
            "id": "po-dup", "name": "on-demand network slice", "tier": "GOLD",
            "parameterNames": [], "unitCost": 1, "billing": "Once", "productSpecId": "ps-network-slice"
        }));
        assert!(matches!(integrity(&doc), IntegrityError::DuplicateOffering(_)));

        let mut doc = reference_doc();
        doc["offerings"][0]["unitCost"] = json!(-5);
        assert_eq!(integrity(&doc), IntegrityError::NegativeCost("po-slice-platinum".into()));
    }
}
