use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{Billing, Catalog, CatalogError, Layer, OfferingId, SpecId};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct DecompositionNode {
    pub spec_id: SpecId,
    pub name: String,
    pub layer: Layer,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub via_rule: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub domain: Option<String>,
    pub children: Vec<DecompositionNode>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct DecompositionTree {
    pub offering_id: OfferingId,
    pub root: DecompositionNode,
    /// Resource spec ids keyed by domain label, in traversal order.
    pub resources_by_domain: BTreeMap<String, Vec<SpecId>>,
    /// False when no resource specification was reached.
    pub complete: bool,
}

impl DecompositionTree {
    pub fn depth(&self) -> usize {
        fn depth(n: &DecompositionNode) -> usize {
            1 + n.children.iter().map(depth).max().unwrap_or(0)
        }
        depth(&self.root)
    }

    pub fn domains(&self) -> impl Iterator<Item = &str> {
        self.resources_by_domain.keys().map(String::as_str)
    }
}

impl Catalog {
    /// Expands an offering down to its resource specifications.
    ///
    /// Rule conditions are evaluated against the offering's own attributes
    /// (`name`, `tier`, `billing`, `unitCost` in whole euros).
    pub fn decompose_offering(&self, offering_id: &OfferingId) -> Result<DecompositionTree, CatalogError> {
        self.decompose_with(offering_id, &BTreeMap::new())
    }

    /// Like [`Catalog::decompose_offering`], with extra characteristic values
    /// (for example order parameters) visible to rule conditions.
    pub fn decompose_with(
        &self,
        offering_id: &OfferingId,
        extra: &BTreeMap<String, String>,
    ) -> Result<DecompositionTree, CatalogError> {
        let offering = self
            .offering(offering_id)
            .ok_or_else(|| CatalogError::NotFound(offering_id.0.clone()))?;
        let mut context = extra.clone();
        context.insert("name".into(), offering.name.clone());
        if let Some(t) = &offering.tier {
            context.insert("tier".into(), t.clone());
        }
        context.insert(
            "billing".into(),
            match offering.billing {
                Billing::PerDay => "PerDay".into(),
                Billing::Once => "Once".into(),
            },
        );
        context.insert("unitCost".into(), offering.unit_cost.whole_euros().to_string());

        let mut resources: BTreeMap<String, Vec<SpecId>> = BTreeMap::new();
        let root = self.expand(&offering.product_spec_id, None, &context, &mut resources);
        Ok(DecompositionTree {
            offering_id: offering_id.clone(),
            complete: !resources.is_empty(),
            root,
            resources_by_domain: resources,
        })
    }

    fn expand(
        &self,
        spec_id: &SpecId,
        via_rule: Option<&str>,
        context: &BTreeMap<String, String>,
        resources: &mut BTreeMap<String, Vec<SpecId>>,
    ) -> DecompositionNode {
        let spec = &self.specs[spec_id];
        if spec.layer == Layer::Resource {
            let domain = spec.domain.clone().unwrap_or_default();
            let entry = resources.entry(domain).or_default();
            if !entry.contains(spec_id) {
                entry.push(spec_id.clone());
            }
        }
        let children = self
            .rules_from(spec_id)
            .filter(|r| r.condition.as_ref().is_none_or(|c| c.holds(context)))
            .map(|r| self.expand(&r.to_spec_id, Some(&r.id), context, resources))
            .collect();
        DecompositionNode {
            spec_id: spec_id.clone(),
            name: spec.name.clone(),
            layer: spec.layer,
            via_rule: via_rule.map(str::to_owned),
            domain: spec.domain.clone(),
            children,
        }
    }
}

#[cfg(test)]
mod tests {
    use serde_json::json;

    use super::*;

    #[test]
    fn gold_slice_spans_radio_core_and_transport() {
        let c = Catalog::reference();
        let tree = c.decompose_offering(&"po-slice-gold".into()).unwrap();
        assert!(tree.complete);
        let domains: Vec<&str> = tree.domains().collect();
        assert_eq!(domains, ["RAN", "core", "transport"]);
        assert_eq!(tree.depth(), 3);
        // the dedicated user plane is Platinum-only
        assert!(tree.root.children.iter().all(|n| n.spec_id.as_str() != "ss-dedicated-upf"));
    }

    #[test]
    fn conditional_rules_fire_for_matching_tier() {
        let c = Catalog::reference();
        let tree = c.decompose_offering(&"po-slice-platinum".into()).unwrap();
        assert!(tree.root.children.iter().any(|n| n.spec_id.as_str() == "ss-dedicated-upf"));
        let gpu = c.decompose_offering(&"po-cache-large-gpu".into()).unwrap();
        assert!(gpu.resources_by_domain["edge"].iter().any(|s| s.as_str() == "rs-edge-gpu"));
    }

    #[test]
    fn children_follow_rule_id_order_and_output_is_stable() {
        let c = Catalog::reference();
        let a = c.decompose_offering(&"po-slice-platinum".into()).unwrap();
        let rules: Vec<_> = a.root.children.iter().map(|n| n.via_rule.clone().unwrap()).collect();
        let mut sorted = rules.clone();
        sorted.sort();
        assert_eq!(rules, sorted);
        let b = c.decompose_offering(&"po-slice-platinum".into()).unwrap();
        assert_eq!(serde_json::to_vec(&a).unwrap(), serde_json::to_vec(&b).unwrap());
    }

    #[test]
    fn unsatisfied_conditions_leave_an_incomplete_tree() {
        let doc = json!({
            "version": "t",
            "offerings": [{ "id": "po-x", "name": "X", "tier": "Basic", "parameterNames": [],
                            "unitCost": 1, "billing": "Once", "productSpecId": "ps-x" }],
            "specs": [
                { "id": "ps-x", "name": "X product", "layer": "Product" },
                { "id": "ss-x", "name": "X service", "layer": "Service" },
                { "id": "rs-x", "name": "X resource", "layer": "Resource", "domain": "edge" }
            ],
            "rules": [
                { "id": "r1", "fromSpecId": "ps-x", "toSpecId": "ss-x",
                  "condition": { "characteristic": "tier", "equals": "Premium" } },
                { "id": "r2", "fromSpecId": "ss-x", "toSpecId": "rs-x" }
            ]
        });
        let c = Catalog::from_json(&doc.to_string()).unwrap();
        let tree = c.decompose_offering(&"po-x".into()).unwrap();
        assert!(!tree.complete);
        assert!(tree.root.children.is_empty());
    }

    #[test]
    fn unknown_offering_is_not_found() {
        let c = Catalog::reference();
        assert!(matches!(c.decompose_offering(&"po-nope".into()), Err(CatalogError::NotFound(_))));
    }

    #[test]
    fn every_reference_offering_reaches_a_resource() {
        let c = Catalog::reference();
        for o in c.offerings() {
            let tree = c.decompose_offering(&o.id).unwrap();
            assert!(tree.complete, "{}", o.id);
            assert!(tree.depth() <= 3);
        }
    }
}
