//! Integer euro-cent amounts and extraction of currency-tagged numbers from text.

use std::fmt;
use std::iter::Sum;
use std::ops::{Add, Mul};
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

/// An amount of money in euro-cents.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Cents(pub u64);

impl Cents {
    pub const ZERO: Cents = Cents(0);

    pub const fn from_euros(euros: u64) -> Self {
        Cents(euros * 100)
    }

    pub const fn get(self) -> u64 {
        self.0
    }

    /// Whole euros, truncating any cents.
    pub const fn whole_euros(self) -> u64 {
        self.0 / 100
    }
}

impl Add for Cents {
    type Output = Cents;
    fn add(self, rhs: Cents) -> Cents {
        Cents(self.0 + rhs.0)
    }
}

impl Mul<u64> for Cents {
    type Output = Cents;
    fn mul(self, rhs: u64) -> Cents {
        Cents(self.0 * rhs)
    }
}

impl Sum for Cents {
    fn sum<I: Iterator<Item = Cents>>(iter: I) -> Cents {
        iter.fold(Cents::ZERO, Add::add)
    }
}

/// Renders as `7,800€` or `7,800.50€`.
impl fmt::Display for Cents {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let euros = self.0 / 100;
        let cents = self.0 % 100;
        let digits = euros.to_string();
        let mut grouped = String::with_capacity(digits.len() + digits.len() / 3);
        for (i, ch) in digits.chars().enumerate() {
            if i > 0 && (digits.len() - i).is_multiple_of(3) {
                grouped.push(',');
            }
            grouped.push(ch);
        }
        if cents == 0 {
            write!(f, "{grouped}€")
        } else {
            write!(f, "{grouped}.{cents:02}€")
        }
    }
}

fn number(tag: &str) -> String {
    format!(r"(?P<{tag}num>\d{{1,3}}(?:[.,\u{{202f}}]\d{{3}})+(?:[.,]\d{{1,2}})?|\d+(?:[.,]\d{{1,2}})?)(?P<{tag}k>\s?[kK])?")
}

static AMOUNT: LazyLock<Regex> = LazyLock::new(|| {
    let prefix = format!(r"(?:€|EUR|eur)\s?{}", number("p"));
    let suffix = format!(r"{}\s?(?:€|(?i:eur(?:os?)?)\b)", number("s"));
    Regex::new(&format!("{prefix}|{suffix}")).expect("valid amount pattern")
});

/// Every currency-tagged amount in `text`, in order of appearance.
///
/// Accepts `9,000€`, `€9,000`, `9000 EUR`, `9.000 euros`, `7,800.50€` and `9k€`.
/// A separator followed by exactly three digits is a thousands separator;
/// one or two trailing digits are cents.
pub fn currency_amounts(text: &str) -> Vec<Cents> {
    let mut out = Vec::new();
    let mut pos = 0;
    while pos <= text.len() {
        let Some(caps) = AMOUNT.captures_at(text, pos) else { break };
        let whole = caps.get(0).expect("match");
        let (num, kilo) = match caps.name("pnum") {
            Some(m) => (m.as_str(), caps.name("pk").is_some()),
            None => (
                caps.name("snum").map(|m| m.as_str()).unwrap_or_default(),
                caps.name("sk").is_some(),
            ),
        };
        if let Some(c) = parse_number(num, kilo) {
            out.push(c);
        }
        pos = whole.end().max(pos + 1);
    }
    out
}

fn parse_number(raw: &str, kilo: bool) -> Option<Cents> {
    let cleaned: String = raw.chars().filter(|c| !c.is_whitespace() && *c != '\u{202f}').collect();
    // split off a decimal part of 1-2 digits after the last separator
    let (int_part, frac_part) = match cleaned.rfind(['.', ',']) {
        Some(idx) if cleaned.len() - idx - 1 <= 2 => (&cleaned[..idx], &cleaned[idx + 1..]),
        _ => (cleaned.as_str(), ""),
    };
    let int_digits: String = int_part.chars().filter(char::is_ascii_digit).collect();
    let euros: u64 = int_digits.parse().ok()?;
    let cents: u64 = match frac_part.len() {
        0 => 0,
        1 => frac_part.parse::<u64>().ok()? * 10,
        _ => frac_part.parse().ok()?,
    };
    let total = euros.checked_mul(100)?.checked_add(cents)?;
    if kilo {
        total.checked_mul(1000).map(Cents)
    } else {
        Some(Cents(total))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn display_groups_thousands() {
        assert_eq!(Cents::from_euros(7800).to_string(), "7,800€");
        assert_eq!(Cents(99).to_string(), "0.99€");
        assert_eq!(Cents::from_euros(1_000_000).to_string(), "1,000,000€");
        assert_eq!(Cents::from_euros(100).to_string(), "100€");
    }

    #[test]
    fn parses_common_notations() {
        let cases = [
            ("budget of 9,000€ total", 900_000),
            ("about €9,000 for the week", 900_000),
            ("9000 EUR", 900_000),
            ("9.000 euros", 900_000),
            ("7,800.50€", 780_050),
            ("9k€", 900_000),
            ("costs 50 €/day", 5_000),
            ("12,5 EUR", 1_250),
        ];
        for (text, cents) in cases {
            assert_eq!(currency_amounts(text), vec![Cents(cents)], "{text}");
        }
    }

    #[test]
    fn keeps_order_and_ignores_untagged_numbers() {
        let got = currency_amounts("Slice 700€/day, 7 days, cache 300€, total 7,800€.");
        assert_eq!(got, vec![Cents(70_000), Cents(30_000), Cents(780_000)]);
        assert!(currency_amounts("latency below 20 ms for 7 days").is_empty());
    }

    #[test]
    fn display_round_trips_through_parser() {
        for c in [0, 5, 100, 780_000, 123_456_789] {
            assert_eq!(currency_amounts(&Cents(c).to_string()), vec![Cents(c)]);
        }
    }
}
