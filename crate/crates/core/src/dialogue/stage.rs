use std::fmt;

use serde::{Deserialize, Serialize};

/// Dialogue stages in the order a session must traverse them.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Stage {
    #[serde(rename = "Q1_Ingestion")]
    Ingestion,
    #[serde(rename = "Q2_Alternatives")]
    Alternatives,
    #[serde(rename = "Q3_Combination")]
    Combination,
    #[serde(rename = "Q4_Temporal")]
    Temporal,
    #[serde(rename = "Q5_Confirmation")]
    Confirmation,
    Confirmed,
    Aborted,
}

impl Stage {
    pub const ACTIVE: [Stage; 5] =
        [Stage::Ingestion, Stage::Alternatives, Stage::Combination, Stage::Temporal, Stage::Confirmation];

    pub fn is_terminal(self) -> bool {
        matches!(self, Stage::Confirmed | Stage::Aborted)
    }

    /// The stage that follows on the happy path.
    pub fn next(self) -> Option<Stage> {
        match self {
            Stage::Ingestion => Some(Stage::Alternatives),
            Stage::Alternatives => Some(Stage::Combination),
            Stage::Combination => Some(Stage::Temporal),
            Stage::Temporal => Some(Stage::Confirmation),
            Stage::Confirmation => Some(Stage::Confirmed),
            Stage::Confirmed | Stage::Aborted => None,
        }
    }

    /// `Q1`..`Q5` for active stages.
    pub fn short(self) -> &'static str {
        match self {
            Stage::Ingestion => "Q1",
            Stage::Alternatives => "Q2",
            Stage::Combination => "Q3",
            Stage::Temporal => "Q4",
            Stage::Confirmation => "Q5",
            Stage::Confirmed => "Confirmed",
            Stage::Aborted => "Aborted",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Stage::Ingestion => "Q1_Ingestion",
            Stage::Alternatives => "Q2_Alternatives",
            Stage::Combination => "Q3_Combination",
            Stage::Temporal => "Q4_Temporal",
            Stage::Confirmation => "Q5_Confirmation",
            Stage::Confirmed => "Confirmed",
            Stage::Aborted => "Aborted",
        };
        f.write_str(s)
    }
}
