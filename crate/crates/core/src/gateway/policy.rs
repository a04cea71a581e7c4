use std::fmt;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum RuleId {
    R1,
    R2,
    R3,
    R4,
    R5,
}

impl RuleId {
    pub const ALL: [RuleId; 5] = [RuleId::R1, RuleId::R2, RuleId::R3, RuleId::R4, RuleId::R5];

    fn index(self) -> usize {
        self as usize
    }

    /// Instruction text given to agents for this rule.
    pub fn instruction(self) -> &'static str {
        match self {
            RuleId::R1 => "Look up products exclusively through the catalog tools.",
            RuleId::R2 => "Do not map the request to any product before a catalog lookup in this session.",
            RuleId::R3 => "Recommend only products that exist in the catalog.",
            RuleId::R4 => "Never place an order until the user has explicitly confirmed it.",
            RuleId::R5 => "Do not name the underlying service or resource specifications to the user.",
        }
    }
}

impl fmt::Display for RuleId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "R{}", self.index() + 1)
    }
}

/// The five-rule skill policy. All rules are on unless switched off for an
/// ablation run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkillPolicy {
    enabled: [bool; 5],
}

impl Default for SkillPolicy {
    fn default() -> Self {
        Self { enabled: [true; 5] }
    }
}

impl SkillPolicy {
    pub fn strict() -> Self {
        Self::default()
    }

    /// Ablation: the same policy with `rule` disabled.
    pub fn without(mut self, rule: RuleId) -> Self {
        self.enabled[rule.index()] = false;
        self
    }

    pub fn is_active(&self, rule: RuleId) -> bool {
        self.enabled[rule.index()]
    }

    /// Numbered instruction list for the system prompt.
    pub fn prompt_text(&self) -> String {
        RuleId::ALL
            .iter()
            .filter(|r| self.is_active(**r))
            .map(|r| format!("{r}. {}", r.instruction()))
            .collect::<Vec<_>>()
            .join("\n")
    }
}

/// Something the policy is asked about.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PolicyAction<'a> {
    PlaceOrder { token: Option<&'a str> },
    SubmitProposal,
    /// Any other tool call; R1 and R3 hold structurally for these.
    Lookup,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PolicyDecision {
    Allow,
    Deny(RuleId),
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ablation_toggles_one_rule() {
        let p = SkillPolicy::strict().without(RuleId::R4);
        assert!(!p.is_active(RuleId::R4));
        assert!(RuleId::ALL.iter().filter(|r| **r != RuleId::R4).all(|r| p.is_active(*r)));
        assert_eq!(p.prompt_text().lines().count(), 4);
        assert_eq!(SkillPolicy::strict().prompt_text().lines().count(), 5);
        assert_eq!(RuleId::R4.to_string(), "R4");
    }
}
