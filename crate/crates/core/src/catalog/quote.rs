use serde::{Deserialize, Serialize};

use super::{Billing, Catalog, CatalogError, OfferingId};
use crate::money::Cents;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct QuoteLine {
    pub offering_id: OfferingId,
    pub unit_cost: Cents,
    pub billing: Billing,
    pub charged_units: u32,
    pub line_total: Cents,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct CostQuote {
    pub line_items: Vec<QuoteLine>,
    pub total_cost: Cents,
    pub duration_days: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub within_budget: Option<bool>,
}

impl Catalog {
    /// Prices `items` over `duration_days`. Per-day offerings are charged for
    /// every day, one-off offerings once.
    pub fn quote(
        &self,
        items: &[OfferingId],
        duration_days: u32,
        budget: Option<Cents>,
    ) -> Result<CostQuote, CatalogError> {
        if duration_days < 1 {
            return Err(CatalogError::InvalidDuration(duration_days));
        }
        let line_items = items
            .iter()
            .map(|id| {
                let o = self.offering(id).ok_or_else(|| CatalogError::NotFound(id.0.clone()))?;
                let charged_units = match o.billing {
                    Billing::PerDay => duration_days,
                    Billing::Once => 1,
                };
                Ok(QuoteLine {
                    offering_id: id.clone(),
                    unit_cost: o.unit_cost,
                    billing: o.billing,
                    charged_units,
                    line_total: o.unit_cost * u64::from(charged_units),
                })
            })
            .collect::<Result<Vec<_>, CatalogError>>()?;
        let total_cost: Cents = line_items.iter().map(|l| l.line_total).sum();
        Ok(CostQuote {
            total_cost,
            duration_days,
            within_budget: budget.map(|b| total_cost <= b),
            line_items,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(list: &[&str]) -> Vec<OfferingId> {
        list.iter().map(|&s| s.into()).collect()
    }

    const GOLD_MIX: [&str; 4] = ["po-slice-gold", "po-cache-large-gpu", "po-slice-observability", "po-setup-vpn"];
    const PLATINUM_MIX: [&str; 4] =
        ["po-slice-platinum", "po-cache-large-gpu", "po-slice-observability", "po-setup-vpn"];

    #[test]
    fn gold_mix_for_a_week_fits_the_budget() {
        let c = Catalog::reference();
        let q = c.quote(&ids(&GOLD_MIX), 7, Some(Cents::from_euros(9000))).unwrap();
        // 700*7 + 300*7 + 100*7 + 100
        assert_eq!(q.total_cost, Cents::from_euros(7800));
        assert_eq!(q.within_budget, Some(true));
        assert_eq!(q.line_items[3].charged_units, 1);
    }

    #[test]
    fn platinum_mix_for_a_week_exceeds_the_budget() {
        let c = Catalog::reference();
        let q = c.quote(&ids(&PLATINUM_MIX), 7, Some(Cents::from_euros(9000))).unwrap();
        assert_eq!(q.total_cost, Cents::from_euros(9900));
        assert_eq!(q.within_budget, Some(false));
    }

    #[test]
    fn two_weeks_of_the_gold_mix() {
        let c = Catalog::reference();
        let q = c.quote(&ids(&GOLD_MIX), 14, None).unwrap();
        assert_eq!(q.total_cost, Cents::from_euros(15_500));
        assert_eq!(q.within_budget, None);
    }

    #[test]
    fn empty_bundle_and_bad_inputs() {
        let c = Catalog::reference();
        assert_eq!(c.quote(&[], 7, None).unwrap().total_cost, Cents::ZERO);
        assert!(matches!(c.quote(&ids(&GOLD_MIX), 0, None), Err(CatalogError::InvalidDuration(0))));
        assert!(matches!(c.quote(&ids(&["po-ghost"]), 7, None), Err(CatalogError::NotFound(_))));
    }
}
