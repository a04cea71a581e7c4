//! Domain expert agents answering decomposition tasks on `domain.<name>`.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{AgentBus, AgentMessage, BusError, MessageKind, SenderRole, Subscription};
use crate::catalog::{Catalog, OfferingId};
use crate::memory::{ConstraintSnapshot, ConstraintValue, DomainResult};

/// Payload of a Task sent to a domain expert.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct DomainTask {
    pub task_id: String,
    pub session_id: String,
    pub offering_ids: Vec<OfferingId>,
    #[serde(default)]
    pub city_name: Option<String>,
}

fn answer(catalog: &Catalog, domain: &str, task: &DomainTask) -> DomainResult {
    let source = format!("domain:{domain}");
    let mut resources = Vec::new();
    for id in &task.offering_ids {
        if let Ok(tree) = catalog.decompose_offering(id) {
            for spec in tree.resources_by_domain.get(domain).into_iter().flatten() {
                if !resources.contains(&spec.0) {
                    resources.push(spec.0.clone());
                }
            }
        }
    }
    let mut constraints = vec![ConstraintSnapshot {
        name: format!("resources.{domain}"),
        value: ConstraintValue::exact(resources.join(",")),
        source: source.clone(),
    }];
    if let Some(city) = &task.city_name {
        constraints.push(ConstraintSnapshot { name: "cityName".into(), value: ConstraintValue::exact(city.clone()), source });
    }
    DomainResult { task_id: task.task_id.clone(), domain: domain.into(), constraints }
}

/// Starts an expert for `domain`. It replies to each Task with the resource
/// specifications of that domain the listed offerings decompose into.
pub fn spawn_domain_expert(bus: &Arc<AgentBus>, domain: &str, catalog: Arc<Catalog>) -> Result<Subscription, BusError> {
    let weak = Arc::downgrade(bus);
    let name = domain.to_owned();
    bus.subscribe(&format!("domain.{domain}"), move |msg| {
        if msg.kind != MessageKind::Task {
            return;
        }
        let Some(bus) = weak.upgrade() else { return };
        let payload = match serde_json::from_value::<DomainTask>(msg.payload.clone()) {
            Ok(task) => serde_json::to_value(answer(&catalog, &name, &task)).expect("result serializes"),
            Err(e) => serde_json::json!({ "error": e.to_string() }),
        };
        let reply = AgentMessage::reply_to(&msg, SenderRole::DomainExpert(name.clone()), payload);
        if let Err(e) = bus.publish(reply) {
            tracing::debug!(error = %e, "expert reply dropped");
        }
    })
}
