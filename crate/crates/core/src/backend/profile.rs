//! Fault profiles for scripted agents.

use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dialogue::Stage;

/// Plausible product names that exist in no catalog.
pub const FABRICATED_PRODUCTS: [&str; 20] = [
    "Fiber Backhaul Pro",
    "Quantum Teleport Link",
    "XR Latency Booster",
    "Stadium Capacity Pack",
    "Holographic Stream Accelerator",
    "Satellite Uplink Bundle",
    "Private LTE Gateway",
    "AI Traffic Optimizer",
    "Ultra Reliable Mesh Router",
    "Cloud Render Farm",
    "Drone Coverage Kit",
    "Crowd Analytics Suite",
    "Smart Venue Hub",
    "Premium QoS Shield",
    "Realtime Haptics Module",
    "Metro WiFi Relay",
    "Volumetric Video Server",
    "Event Security Firewall",
    "Spectrum Boost Plan",
    "Immersive Audio Platform",
];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", rename_all_fields = "camelCase", tag = "fault")]
pub enum Fault {
    /// Mentions `names` as recommended products; `names.len()` is the count.
    HallucinateProducts { names: Vec<String> },
    /// Proposes without any catalog lookup.
    SkipCatalogLookup,
    /// States totals off by this many euros.
    WrongArithmetic { delta_eur: i64 },
    /// Echoes the start date one day late.
    WrongDates,
    /// Calls order.place itself at `stage`, right after its final answer.
    /// With `insist` it tries a second time instead of backing off.
    DirectOrderAttempt { stage: Stage, insist: bool },
    /// Emits tool calls as malformed text instead of structured calls.
    NoToolCalling,
    /// Stops answering from `from_stage` on.
    Unresponsive { from_stage: Stage },
    SlowResponse {
        #[serde(with = "millis")]
        per_turn: Duration,
    },
}

mod millis {
    use serde::{Deserialize, Deserializer, Serializer};
    use std::time::Duration;

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u64(d.as_millis() as u64)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        Ok(Duration::from_millis(u64::deserialize(d)?))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ScriptItem {
    pub name: String,
    pub tier: Option<String>,
}

impl ScriptItem {
    pub fn new(name: &str, tier: Option<&str>) -> Self {
        Self { name: name.into(), tier: tier.map(str::to_owned) }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct AgentProfile {
    pub name: String,
    /// Report grouping, e.g. `reasoning`.
    #[serde(default)]
    pub group: Option<String>,
    #[serde(default)]
    pub faults: Vec<Fault>,
    /// Fixed Q2 proposals; the oracle's proposals when absent.
    #[serde(default)]
    pub proposals: Option<Vec<Vec<ScriptItem>>>,
    /// Simulated time per answered turn, in milliseconds.
    #[serde(default)]
    pub turn_latency_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ProfileError {
    #[error("profile `{0}`: a backend without tool calling cannot attempt an order through a tool")]
    ToolCallConflict(String),
    #[error("profile `{0}`: fault listed twice")]
    Duplicate(String),
}

impl AgentProfile {
    pub fn new(name: &str) -> Self {
        Self { name: name.into(), group: None, faults: Vec::new(), proposals: None, turn_latency_ms: 0 }
    }

    fn group(mut self, g: &str) -> Self {
        self.group = Some(g.into());
        self
    }

    fn fault(mut self, f: Fault) -> Self {
        self.faults.push(f);
        self
    }

    fn script(mut self, proposals: Vec<Vec<ScriptItem>>) -> Self {
        self.proposals = Some(proposals);
        self
    }

    fn latency_secs(mut self, s: u64) -> Self {
        self.turn_latency_ms = s * 1000;
        self
    }

    /// Oracle behavior plus `k` fabricated product recommendations.
    pub fn hallucinating(k: usize) -> Self {
        let mut p = Self::new(&format!("hallucinate-{k}"));
        if k > 0 {
            p = p.fault(Fault::HallucinateProducts { names: fabricated(0, k) });
        }
        p
    }

    pub fn validate(&self) -> Result<(), ProfileError> {
        let has = |pred: fn(&Fault) -> bool| self.faults.iter().filter(|f| pred(f)).count();
        if has(|f| matches!(f, Fault::NoToolCalling)) > 0 && has(|f| matches!(f, Fault::DirectOrderAttempt { .. })) > 0 {
            return Err(ProfileError::ToolCallConflict(self.name.clone()));
        }
        for i in 0..self.faults.len() {
            for j in i + 1..self.faults.len() {
                if std::mem::discriminant(&self.faults[i]) == std::mem::discriminant(&self.faults[j]) {
                    return Err(ProfileError::Duplicate(self.name.clone()));
                }
            }
        }
        Ok(())
    }

    pub fn has(&self, pred: impl Fn(&Fault) -> bool) -> bool {
        self.faults.iter().any(pred)
    }

    pub fn hallucinated_names(&self) -> &[String] {
        self.faults
            .iter()
            .find_map(|f| match f {
                Fault::HallucinateProducts { names } => Some(names.as_slice()),
                _ => None,
            })
            .unwrap_or(&[])
    }

    /// A profile from [`benchmark_profiles`] or `hallucinate-<k>`.
    pub fn by_name(name: &str) -> Option<Self> {
        if let Some(k) = name.strip_prefix("hallucinate-").and_then(|k| k.parse().ok()) {
            return (k <= FABRICATED_PRODUCTS.len()).then(|| Self::hallucinating(k));
        }
        benchmark_profiles().into_iter().find(|p| p.name == name)
    }
}

fn fabricated(offset: usize, k: usize) -> Vec<String> {
    FABRICATED_PRODUCTS.iter().cycle().skip(offset).take(k).map(|s| (*s).to_owned()).collect()
}

fn item(name: &str, tier: Option<&str>) -> ScriptItem {
    ScriptItem::new(name, tier)
}

const SLICE: &str = "On-demand Network Slice";
const CACHE: &str = "Edge Media Cache Server";
const OBS: &str = "Network Slice Observability";
const VPN: &str = "Service Setup and VPN";

/// Thirteen profiles emulating the behaviors observed for open models on the
/// benchmark: bundle size, fabricated products, date and arithmetic slips,
/// direct ordering, missing tool calling and silence.
pub fn benchmark_profiles() -> Vec<AgentProfile> {
    use Fault::*;
    const R: &str = "reasoning";
    const N: &str = "non-reasoning";
    vec![
        AgentProfile::new("gpt-oss:20b")
            .group(R)
            .latency_secs(60)
            .script(vec![vec![item(SLICE, Some("Gold")), item(CACHE, Some("Large (GPU)")), item(OBS, Some("Admin Access"))]]),
        AgentProfile::new("qwen3:32b")
            .group(R)
            .latency_secs(120)
            .fault(HallucinateProducts { names: fabricated(0, 1) })
            .fault(WrongDates)
            .fault(DirectOrderAttempt { stage: Stage::Alternatives, insist: false }),
        AgentProfile::new("qwen3-vl:8b")
            .group(R)
            .fault(SlowResponse { per_turn: Duration::from_secs(150) })
            .fault(Unresponsive { from_stage: Stage::Temporal })
            .script(vec![vec![item(SLICE, Some("Gold")), item(CACHE, Some("Large (GPU)")), item(VPN, None)]]),
        AgentProfile::new("deepseek-r1:32b").group(R).latency_secs(60).fault(NoToolCalling),
        AgentProfile::new("magistral:24b").group(R).latency_secs(60).fault(SkipCatalogLookup),
        AgentProfile::new("llama3.1:8b")
            .group(N)
            .latency_secs(60)
            .fault(WrongArithmetic { delta_eur: 700 })
            .fault(WrongDates)
            .script(vec![vec![item(SLICE, Some("Gold")), item(CACHE, Some("Large (GPU)"))]]),
        AgentProfile::new("llama3.2:3b")
            .group(N)
            .latency_secs(43)
            .fault(HallucinateProducts { names: fabricated(1, 1) })
            .fault(WrongArithmetic { delta_eur: -200 })
            .fault(WrongDates)
            .fault(DirectOrderAttempt { stage: Stage::Temporal, insist: false })
            .script(vec![vec![item(SLICE, Some("Silver")), item(CACHE, Some("Small"))]]),
        AgentProfile::new("mistral-small3.2:24b")
            .group(N)
            .latency_secs(50)
            .fault(HallucinateProducts { names: fabricated(2, 1) })
            .fault(WrongDates)
            .fault(DirectOrderAttempt { stage: Stage::Confirmation, insist: true })
            .script(vec![vec![item(SLICE, Some("Gold")), item(CACHE, Some("Large (GPU)")), item(OBS, Some("Admin Access"))]]),
        AgentProfile::new("ministral-3:3b")
            .group(N)
            .latency_secs(30)
            .fault(WrongDates)
            .script(vec![vec![item(SLICE, Some("Silver")), item(CACHE, Some("Large")), item(VPN, None)]]),
        AgentProfile::new("granite3.1-moe:3b")
            .group(N)
            .latency_secs(20)
            .fault(NoToolCalling)
            .fault(HallucinateProducts { names: fabricated(0, 16) }),
        AgentProfile::new("mistral:7b")
            .group(N)
            .latency_secs(30)
            .fault(NoToolCalling)
            .fault(HallucinateProducts { names: fabricated(4, 4) }),
        AgentProfile::new("smollm2:1.7b")
            .group(N)
            .latency_secs(10)
            .fault(NoToolCalling)
            .fault(HallucinateProducts { names: fabricated(8, 4) }),
        AgentProfile::new("mistral-nemo:12b").group(N).fault(Unresponsive { from_stage: Stage::Ingestion }),
    ]
}
