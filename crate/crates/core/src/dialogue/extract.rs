//! Deterministic extraction of explicit numbers and names from intent text.
//! These values override anything a backend reports for the same fields.

use std::sync::LazyLock;

use chrono::NaiveDate;
use regex::Regex;

use super::{Budget, QosConstraint};
use crate::money::{currency_amounts, Cents};

static CITY: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"\b(?:in|at|near|around)\s+((?:[A-Z][\p{Ll}'-]+)(?:[ -][A-Z][\p{Ll}'-]+)?)").expect("city pattern")
});

static WEEKS: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)\b(a|an|one|two|three|four|\d{1,2})[ -]weeks?\b").expect("weeks pattern"));

static DAYS: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)\b(one|two|three|four|five|six|seven|ten|fourteen|\d{1,3})[ -]days?\b").expect("days pattern"));

static ISO_DATE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\b(\d{4})-(\d{2})-(\d{2})\b").expect("date pattern"));

static LATENCY: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?i)latency\D{0,30}?(?:under|below|less than|at most|<=?|≤)\s*(\d+(?:\.\d+)?)\s*(ms|milliseconds)")
        .expect("latency pattern")
});

static THROUGHPUT: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)\b(\d+(?:\.\d+)?)\s*(Mbps|Gbps)\b").expect("throughput pattern"));

static DEVICES: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?i)\b(\d{1,6})\s+(?:concurrent\s+|simultaneous\s+)?(users|headsets|devices|viewers)\b")
        .expect("devices pattern")
});

/// Words that look like a place after "in" but are not one.
const NOT_CITIES: &[&str] = &["May", "June", "July", "January", "February", "March", "April", "August", "September",
    "October", "November", "December", "Monday", "Tuesday", "Wednesday", "Thursday", "Friday", "Saturday", "Sunday",
    "Q1", "Q2", "Q3", "Q4", "EUR", "Euro"];

pub const SLICE_PROFILES: [&str; 3] = ["eMBB", "URLLC", "mMTC"];

fn small_number(word: &str) -> Option<u32> {
    let n = match word.to_lowercase().as_str() {
        "a" | "an" | "one" => 1,
        "two" => 2,
        "three" => 3,
        "four" => 4,
        "five" => 5,
        "six" => 6,
        "seven" => 7,
        "ten" => 10,
        "fourteen" => 14,
        other => return other.parse().ok(),
    };
    Some(n)
}

/// The stated budget: the amount in the first sentence mentioning "budget",
/// else the first currency amount anywhere.
pub fn budget(text: &str) -> Option<Budget> {
    let sentence = text
        .split_inclusive(['.', '!', '?', '\n'])
        .find(|s| s.to_lowercase().contains("budget") && !currency_amounts(s).is_empty());
    let scope = sentence.unwrap_or(text);
    let amount: Cents = *currency_amounts(scope).first()?;
    let lower = scope.to_lowercase();
    let period = if lower.contains("week") {
        Some("week".to_owned())
    } else if lower.contains("per day") || lower.contains("daily") {
        Some("day".to_owned())
    } else if lower.contains("month") {
        Some("month".to_owned())
    } else {
        None
    };
    Some(Budget { amount, period })
}

/// Duration in days from "one week", "2 weeks", "10 days" and the like.
pub fn duration_days(text: &str) -> Option<u32> {
    if let Some(c) = DAYS.captures(text) {
        return small_number(&c[1]).filter(|d| *d > 0);
    }
    if let Some(c) = WEEKS.captures(text) {
        return small_number(&c[1]).map(|w| w * 7).filter(|d| *d > 0);
    }
    if text.to_lowercase().contains("fortnight") {
        return Some(14);
    }
    None
}

/// First ISO-8601 calendar date in the text.
pub fn start_date(text: &str) -> Option<NaiveDate> {
    ISO_DATE.captures_iter(text).find_map(|c| {
        NaiveDate::from_ymd_opt(c[1].parse().ok()?, c[2].parse().ok()?, c[3].parse().ok()?)
    })
}

pub fn city(text: &str) -> Option<String> {
    CITY.captures_iter(text)
        .map(|c| c[1].to_owned())
        .find(|c| !NOT_CITIES.contains(&c.split([' ', '-']).next().unwrap_or_default()))
}

/// A slice profile named verbatim in the text, in canonical spelling.
pub fn slice_profile(text: &str) -> Option<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .find_map(|w| SLICE_PROFILES.iter().find(|p| p.eq_ignore_ascii_case(w)))
        .map(|p| (*p).to_owned())
}

pub fn qos_constraints(text: &str) -> Vec<QosConstraint> {
    let mut out = Vec::new();
    if let Some(c) = LATENCY.captures(text) {
        out.push(QosConstraint { metric: "latency".into(), comparator: "<=".into(), value: c[1].into(), unit: "ms".into() });
    }
    if let Some(c) = THROUGHPUT.captures(text) {
        out.push(QosConstraint { metric: "throughput".into(), comparator: ">=".into(), value: c[1].into(), unit: c[2].into() });
    }
    if let Some(c) = DEVICES.captures(text) {
        out.push(QosConstraint {
            metric: "concurrentDevices".into(),
            comparator: ">=".into(),
            value: c[1].into(),
            unit: c[2].to_lowercase(),
        });
    }
    out
}
