use std::collections::HashMap;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::clock::SharedClock;

pub const TOKEN_TTL: Duration = Duration::from_secs(10 * 60);

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ConfirmationToken {
    pub token_id: String,
    pub session_id: String,
    pub single_use: bool,
    /// Clock milliseconds after which the token is void.
    pub expires_at_ms: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TokenProblem {
    Missing,
    Unknown,
    ForeignSession,
    Consumed,
    Expired,
}

impl TokenProblem {
    pub fn describe(self) -> &'static str {
        match self {
            TokenProblem::Missing => "no confirmation token supplied",
            TokenProblem::Unknown => "confirmation token was never issued",
            TokenProblem::ForeignSession => "confirmation token belongs to another session",
            TokenProblem::Consumed => "confirmation token was already used",
            TokenProblem::Expired => "confirmation token expired",
        }
    }
}

#[derive(Debug)]
struct TokenState {
    token: ConfirmationToken,
    consumed: bool,
}

/// Issued confirmation tokens. Callers hold the registry lock across
/// check-and-consume so a token can be spent at most once.
#[derive(Debug)]
pub(crate) struct TokenRegistry {
    clock: SharedClock,
    ttl: Duration,
    tokens: HashMap<String, TokenState>,
}

impl TokenRegistry {
    pub(crate) fn new(clock: SharedClock, ttl: Duration) -> Self {
        Self { clock, ttl, tokens: HashMap::new() }
    }

    pub(crate) fn mint(&mut self, session_id: &str) -> ConfirmationToken {
        let token = ConfirmationToken {
            token_id: format!("tok-{}", uuid::Uuid::new_v4().simple()),
            session_id: session_id.into(),
            single_use: true,
            expires_at_ms: self.clock.now_ms() + self.ttl.as_millis() as u64,
        };
        self.tokens.insert(token.token_id.clone(), TokenState { token: token.clone(), consumed: false });
        token
    }

    pub(crate) fn check(&self, token_id: Option<&str>, session_id: &str) -> Result<(), TokenProblem> {
        let id = token_id.filter(|t| !t.is_empty()).ok_or(TokenProblem::Missing)?;
        let state = self.tokens.get(id).ok_or(TokenProblem::Unknown)?;
        if state.token.session_id != session_id {
            return Err(TokenProblem::ForeignSession);
        }
        if state.consumed {
            return Err(TokenProblem::Consumed);
        }
        if self.clock.now_ms() > state.token.expires_at_ms {
            return Err(TokenProblem::Expired);
        }
        Ok(())
    }

    pub(crate) fn consume(&mut self, token_id: &str) {
        if let Some(s) = self.tokens.get_mut(token_id) {
            s.consumed = true;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clock::ManualClock;

    #[test]
    fn lifecycle() {
        let clock = ManualClock::at_fixed_origin();
        let mut reg = TokenRegistry::new(clock.clone(), TOKEN_TTL);
        let t = reg.mint("s1");
        assert_eq!(reg.check(Some(&t.token_id), "s1"), Ok(()));
        assert_eq!(reg.check(Some(&t.token_id), "s2"), Err(TokenProblem::ForeignSession));
        assert_eq!(reg.check(None, "s1"), Err(TokenProblem::Missing));
        assert_eq!(reg.check(Some("tok-forged"), "s1"), Err(TokenProblem::Unknown));
        reg.consume(&t.token_id);
        assert_eq!(reg.check(Some(&t.token_id), "s1"), Err(TokenProblem::Consumed));

        let t2 = reg.mint("s1");
        clock.advance(TOKEN_TTL + Duration::from_millis(1));
        assert_eq!(reg.check(Some(&t2.token_id), "s1"), Err(TokenProblem::Expired));
    }
}
