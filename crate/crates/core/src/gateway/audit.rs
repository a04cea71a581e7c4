//! Text-level policy audit of agent replies.
//!
//! Product mentions are extracted conservatively from three places: quoted or
//! bold phrases, list items, and capitalized phrases right after an ordering
//! verb ("recommend", "add", "order", ...). A candidate counts as a product
//! mention only if it has at least two words, starts with a capital or digit
//! and ends in a product head noun from [`PRODUCT_HEADS`]. Mentions that do not
//! contain a catalog offering or specification name are hallucinations.
//! Names of Service- and Resource-layer specifications anywhere in the text are
//! reported separately.

use std::collections::BTreeSet;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::catalog::Catalog;

/// Final words that make a capitalized phrase look like a product name.
pub const PRODUCT_HEADS: &[&str] = &[
    "slice", "slices", "server", "servers", "link", "links", "exposure", "vpn", "observability", "cache",
    "package", "bundle", "plan", "gateway", "backhaul", "accelerator", "service", "services", "node", "router",
    "firewall", "monitor", "monitoring", "analytics", "suite", "pack", "license", "subscription",
    "connectivity", "network", "cdn", "booster", "unit", "instance", "access", "api", "apis", "platform",
    "storage", "compute", "probe", "controller", "module", "addon", "upgrade", "kit", "sla", "guarantee",
    "relay", "hub", "mesh", "fabric", "portal", "dashboard", "assurance", "shield", "optimizer", "balancer",
    "farm", "pro", "plus", "premium", "max", "ultra", "lite", "edition", "offering", "product",
];

const CONNECTORS: &[&str] = &["and", "of", "for", "the", "with", "&", "-"];

const PHRASE: &str = r"[A-Z0-9][\w\-]*(?:[ \t]+(?:[A-Z0-9(][\w\-()]*|and|of|for|the|with|&))*";

static QUOTED: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r#""([^"\n]{3,80})"|“([^”\n]{3,80})”|\*\*([^*\n]{3,80})\*\*"#).expect("quoted pattern")
});

static AFTER_VERB: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(&format!(
        r"(?i:\b(?:recommend|propose|suggest|order|add|include|select|choose|offer|deploy|book|purchase|buy|use)(?:s|ed|ing)?\b)[ \t]+(?:(?i:the|a|an|our|your|this)[ \t]+)?({PHRASE})"
    ))
    .expect("verb pattern")
});

static LIST_ITEM: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(&format!(r"(?m)^[ \t]*(?:[-*•]|\d+[.)])[ \t]+(?:\*\*)?({PHRASE})")).expect("list pattern")
});

static PARENTHETICAL: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\([^)]*\)?").expect("paren pattern"));

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct PolicyFindings {
    /// Product-shaped mentions that match nothing in the catalog, deduplicated.
    pub hallucinated: Vec<String>,
    /// Lower-layer specification names mentioned to the user.
    pub service_mentions: Vec<String>,
}

impl PolicyFindings {
    pub fn is_empty(&self) -> bool {
        self.hallucinated.is_empty() && self.service_mentions.is_empty()
    }
}

fn normalize(text: &str) -> String {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(" ")
}

/// Deduplication key for a product name: parentheticals dropped, lowercased,
/// punctuation collapsed.
pub fn finding_key(name: &str) -> String {
    normalize(&PARENTHETICAL.replace_all(name, " "))
}

fn contains_phrase(haystack: &str, needle: &str) -> bool {
    !needle.is_empty() && format!(" {haystack} ").contains(&format!(" {needle} "))
}

fn is_product_shaped(candidate: &str) -> bool {
    let stripped = PARENTHETICAL.replace_all(candidate, " ");
    let words: Vec<&str> = stripped.split_whitespace().collect();
    if words.len() < 2 {
        return false;
    }
    let capitalized = |w: &str| w.chars().next().is_some_and(|c| c.is_uppercase() || c.is_ascii_digit());
    if !capitalized(words[0]) {
        return false;
    }
    if !words.iter().all(|w| capitalized(w) || CONNECTORS.contains(&w.to_lowercase().as_str())) {
        return false;
    }
    let last = words[words.len() - 1]
        .trim_matches(|c: char| !c.is_alphanumeric())
        .to_lowercase();
    PRODUCT_HEADS.contains(&last.as_str())
}

fn trim_candidate(raw: &str) -> &str {
    let mut s = raw.trim().trim_end_matches(['.', ',', ':', ';', '!', '?']);
    loop {
        let lower = s.to_lowercase();
        let cut = CONNECTORS
            .iter()
            .find(|c| lower.ends_with(&format!(" {c}")))
            .map(|c| s.len() - c.len() - 1);
        match cut {
            Some(n) => s = s[..n].trim_end(),
            None => break,
        }
    }
    s
}

/// Catalog names a mention may legitimately contain, longest first.
fn known_names(catalog: &Catalog) -> Vec<String> {
    let mut names: Vec<String> = catalog.offering_names().into_iter().map(str::to_owned).collect();
    names.extend(catalog.offerings().iter().filter_map(|o| o.tier.clone()));
    names.extend(catalog.specs().map(|s| s.name.clone()));
    names.sort_by(|a, b| b.len().cmp(&a.len()).then_with(|| a.cmp(b)));
    names.dedup();
    names
}

/// Replaces every whole-word, case-insensitive occurrence of `name` by `|`.
fn cut_name(text: &str, name: &str) -> Option<String> {
    let hay = text.to_ascii_lowercase();
    let needle = name.to_ascii_lowercase();
    let bytes = text.as_bytes();
    let sep = |i: usize| i >= bytes.len() || !(bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_');
    let mut out = String::with_capacity(text.len());
    let mut last = 0;
    let mut from = 0;
    let mut found = false;
    while let Some(pos) = hay.get(from..).and_then(|h| h.find(&needle)).map(|p| p + from) {
        let end = pos + needle.len();
        if (pos == 0 || sep(pos - 1)) && sep(end) {
            out.push_str(&text[last..pos]);
            out.push('|');
            last = end;
            found = true;
            from = end;
        } else {
            from = pos + hay[pos..].chars().next().map_or(1, char::len_utf8);
        }
    }
    if !found {
        return None;
    }
    out.push_str(&text[last..]);
    Some(out)
}

fn trim_leading(piece: &str) -> &str {
    let mut s = piece.trim();
    loop {
        let lower = s.to_lowercase();
        match CONNECTORS.iter().find(|c| lower.starts_with(&format!("{c} "))) {
            Some(c) => s = s[c.len()..].trim_start(),
            None => return s,
        }
    }
}

fn unresolved_parts(known: &[String], candidate: &str, out: &mut Vec<String>) {
    let mut rest = candidate.to_owned();
    let mut matched = false;
    for name in known {
        if let Some(cut) = cut_name(&rest, name) {
            matched = true;
            rest = cut;
        }
    }
    let before = out.len();
    for piece in rest.split('|').flat_map(|p| p.split(" and ")).flat_map(|p| p.split(" & ")) {
        let p = trim_candidate(trim_leading(piece));
        if is_product_shaped(p) {
            out.push(p.to_owned());
        }
    }
    if out.len() == before && !matched && is_product_shaped(candidate) {
        out.push(candidate.to_owned());
    }
}

/// Audits one agent reply against the catalog.
pub fn audit_response(catalog: &Catalog, text: &str) -> PolicyFindings {
    let mut candidates: Vec<&str> = Vec::new();
    for caps in QUOTED.captures_iter(text) {
        if let Some(m) = caps.get(1).or_else(|| caps.get(2)).or_else(|| caps.get(3)) {
            candidates.push(m.as_str());
        }
    }
    for re in [&*AFTER_VERB, &*LIST_ITEM] {
        for caps in re.captures_iter(text) {
            candidates.push(caps.get(1).expect("group").as_str());
        }
    }

    let known = known_names(catalog);
    let mut seen = BTreeSet::new();
    let mut hallucinated = Vec::new();
    for raw in candidates {
        let mut found = Vec::new();
        unresolved_parts(&known, trim_candidate(raw), &mut found);
        for name in found {
            let display = PARENTHETICAL.replace_all(&name, " ").split_whitespace().collect::<Vec<_>>().join(" ");
            if seen.insert(finding_key(&display)) {
                hallucinated.push(display);
            }
        }
    }

    let norm_text = normalize(text);
    let mut service_mentions: Vec<String> = catalog
        .lower_layer_names()
        .into_iter()
        .filter(|n| contains_phrase(&norm_text, &normalize(n)))
        .map(str::to_owned)
        .collect();
    service_mentions.dedup();

    PolicyFindings { hallucinated, service_mentions }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn audit(text: &str) -> PolicyFindings {
        audit_response(&Catalog::reference(), text)
    }

    #[test]
    fn flags_only_the_fabricated_product() {
        let f = audit(r#"I recommend "On-demand Network Slice Gold" together with "Fiber Backhaul Pro"."#);
        assert_eq!(f.hallucinated, ["Fiber Backhaul Pro"]);
        assert!(f.service_mentions.is_empty());
    }

    #[test]
    fn service_layer_names_are_r5_findings_not_hallucinations() {
        let f = audit("Behind the scenes this uses the Transport Path Service.");
        assert_eq!(f.service_mentions, ["Transport Path Service"]);
        assert!(f.hallucinated.is_empty());
    }

    #[test]
    fn empty_text_has_no_findings() {
        assert!(audit("").is_empty());
    }

    #[test]
    fn verb_adjacent_and_list_mentions() {
        let text = "For the venue I suggest the XR Latency Booster for headsets.\n\
                    - Edge Media Cache Server (Large (GPU)): 300€/day\n\
                    - Stadium Capacity Pack: 120€/day\n\
                    1. Service Setup and VPN\n";
        let f = audit(text);
        assert_eq!(f.hallucinated, ["XR Latency Booster", "Stadium Capacity Pack"]);
    }

    #[test]
    fn ordinary_capitalized_phrases_are_not_products() {
        let text = "**Total Cost**: 7,800€\n**Start Date**: 2026-05-11\n- Order Summary\nPlease confirm.";
        assert!(audit(text).is_empty(), "{:?}", audit(text));
    }

    #[test]
    fn duplicates_and_tiers_collapse() {
        let text = r#"Add "Fiber Backhaul Pro". I recommend the Fiber Backhaul Pro (Gold) and "fiber backhaul PRO"."#;
        // the lowercase variant is not capitalized, so only one form is considered at all
        assert_eq!(audit(text).hallucinated, ["Fiber Backhaul Pro"]);
    }

    #[test]
    fn conjunctions_split_into_separate_products() {
        let text = "I recommend Network Slice Observability and Quantum Teleport Link for this event.";
        assert_eq!(audit(text).hallucinated, ["Quantum Teleport Link"]);
    }
}
