//! Acceptance checks. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails.

use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::Arc;
use std::time::{Duration, Instant};

use chrono::{NaiveDate, TimeZone, Utc};
use cocreate_core::backend::{benchmark_profiles, AgentBackend, BackendSpec};
use cocreate_core::catalog::{Catalog, CatalogError, IntegrityError, OfferingId};
use cocreate_core::clock::{Clock, ManualClock, SharedClock};
use cocreate_core::dialogue::{
    CoCreationEngine, EngineConfig, FindingKind, Selection, SessionOptions, Stage, TemporalSpec,
};
use cocreate_core::eval::{replay_outcome, run_scenario, BenchmarkScenario, Rating, SessionOutcome, Verdict};
use cocreate_core::gateway::{
    build_order_payload, CallOrigin, OrderInventory, OrderParameters, OrderPayload, SkillPolicy, ToolCall, ToolGateway,
    ToolLedger, ToolStatus,
};
use cocreate_core::memory::{Actor, MemoryStore, NewDecision};
use cocreate_core::money::Cents;
use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn data(file: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/data").join(file)
}

fn raw_catalog() -> Value {
    serde_json::from_str(&std::fs::read_to_string(data("reference-catalog.json")).unwrap()).unwrap()
}

/// Unit cost in cents and whether it is charged per day, read straight from the document.
fn raw_prices() -> BTreeMap<String, (u64, bool)> {
    raw_catalog()["offerings"]
        .as_array()
        .unwrap()
        .iter()
        .map(|o| {
            let cents = (o["unitCost"].as_f64().unwrap() * 100.0).round() as u64;
            (o["id"].as_str().unwrap().to_owned(), (cents, o["billing"] == "PerDay"))
        })
        .collect()
}

fn cli(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_cocreate")).args(args).output().expect("cocreate runs")
}

// 1 ------------------------------------------------------------------------

fn oracle_baseline() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let started = Instant::now();
    let out = cli(&["bench", "run", "--backend", "oracle", "--out", dir.path().to_str().unwrap()]);
    let elapsed = started.elapsed();
    ensure(out.status.success(), format!("exit {:?}", out.status.code()))?;
    let stored = SessionOutcome::from_path(dir.path().join("oracle/outcome.json")).map_err(|e| e.to_string())?;
    let r = stored.score();
    // 700*7 + 300*7 + 100*7 + 100 euros
    let expected_quote = Cents((700 * 7 + 300 * 7 + 100 * 7 + 100) * 100);
    let quote = stored.session.quote.as_ref().map(|q| q.total_cost);
    ensure(r.composition_correct == 4 && r.composition_expected == 4, format!("composition {}/{}", r.composition_correct, r.composition_expected))?;
    ensure(r.composition_percent() == 100, "composition percent")?;
    ensure(r.hallucinated_products == 0, format!("hallucinations {}", r.hallucinated_products))?;
    ensure(quote == Some(expected_quote), format!("quote {quote:?}"))?;
    ensure(expected_quote <= Cents(900_000) && stored.scenario.ground_truth.budget == Cents(900_000), "budget")?;
    ensure(r.cost_accuracy == Verdict::Pass && r.duration_accuracy == Verdict::Pass, "cost/duration")?;
    ensure(r.baseline_achievement == Rating::Pass, format!("rating {}", r.baseline_achievement))?;
    ensure(stored.orders.len() == 1, format!("{} order records", stored.orders.len()))?;
    ensure(String::from_utf8_lossy(&out.stdout).contains("Pass"), "report lacks Pass")?;
    ensure(elapsed < Duration::from_secs(5), format!("took {elapsed:?}"))?;
    Ok(format!("4/4 (100%), 0 hallucinations, quote {} <= 9,000€, 1 order", expected_quote))
}

// 2 ------------------------------------------------------------------------

const ROWS: [(&str, usize, usize, bool, bool, &str); 13] = [
    ("gpt-oss:20b", 3, 0, true, true, "Partial"),
    ("qwen3:32b", 4, 1, true, false, "Partial"),
    ("qwen3-vl:8b", 3, 0, false, false, "Fail"),
    ("deepseek-r1:32b", 0, 0, false, false, "Fail"),
    ("magistral:24b", 0, 0, false, false, "Fail"),
    ("llama3.1:8b", 2, 0, false, false, "Fail"),
    ("llama3.2:3b", 2, 1, false, false, "Fail"),
    ("mistral-small3.2:24b", 3, 1, true, false, "Partial"),
    ("ministral-3:3b", 3, 0, true, false, "Partial"),
    ("granite3.1-moe:3b", 0, 16, false, false, "Fail"),
    ("mistral:7b", 0, 4, false, false, "Fail"),
    ("smollm2:1.7b", 0, 4, false, false, "Fail"),
    ("mistral-nemo:12b", 0, 0, false, false, "Fail"),
];

fn profile_table() -> Check {
    let started = Instant::now();
    let scenario = BenchmarkScenario::reference();
    let catalog = Arc::new(Catalog::reference());
    ensure(benchmark_profiles().len() == ROWS.len(), "profile count")?;
    for (name, comp, hall, cost, dur, rating) in ROWS {
        let spec = BackendSpec::Scripted { profile: name.into() };
        let r = run_scenario(&scenario, catalog.clone(), &spec).map_err(|e| e.to_string())?.score();
        let got = (r.composition_correct, r.hallucinated_products, r.cost_accuracy == Verdict::Pass, r.duration_accuracy == Verdict::Pass);
        ensure(got == (comp, hall, cost, dur), format!("{name}: got {got:?}"))?;
        ensure(r.baseline_achievement.to_string() == rating, format!("{name}: rating {}", r.baseline_achievement))?;
    }
    let elapsed = started.elapsed();
    ensure(elapsed < Duration::from_secs(30), format!("took {elapsed:?}"))?;
    Ok("13/13 rows match on composition, hallucinations, cost, duration and rating".into())
}

// 3 ------------------------------------------------------------------------

const SEQUENCES: usize = 100_000;
const SEED: u64 = 0x5AFE_0DE5;
const SESSIONS: usize = 3;

fn drafts(catalog: &Catalog) -> Vec<OrderPayload> {
    let ids: Vec<OfferingId> = ["po-slice-gold", "po-cache-large-gpu"].into_iter().map(OfferingId::from).collect();
    let temporal = TemporalSpec { start_date: NaiveDate::from_ymd_opt(2026, 5, 11).unwrap(), duration_days: 7 };
    let params = OrderParameters { city_name: Some("Patras".into()), slice_profile: Some("eMBB".into()) };
    // one extra draft for a session that never receives a token
    (0..=SESSIONS).map(|i| build_order_payload(catalog, &format!("s{i}"), &ids, &temporal, &params).unwrap()).collect()
}

const STAGES: [Stage; 7] = [
    Stage::Ingestion,
    Stage::Alternatives,
    Stage::Combination,
    Stage::Temporal,
    Stage::Confirmation,
    Stage::Confirmed,
    Stage::Aborted,
];

fn one_sequence(rng: &mut ChaCha8Rng, catalog: &Arc<Catalog>, drafts: &[OrderPayload]) -> Result<usize, String> {
    let clock = ManualClock::at_fixed_origin();
    let inventory = Arc::new(OrderInventory::in_memory());
    let gw = ToolGateway::new(catalog.clone(), SkillPolicy::strict(), inventory.clone(), clock.clone());
    let mut ledgers = vec![ToolLedger::new(); SESSIONS];
    let mut minted: Vec<(String, String, u64)> = Vec::new();
    let mut consumed: Vec<String> = Vec::new();
    let mut placed = 0usize;

    for n in 0..rng.random_range(1..24) {
        match rng.random_range(0..7) {
            0 => {
                let t = gw.mint_token(&format!("s{}", rng.random_range(0..SESSIONS)));
                minted.push((t.token_id, t.session_id, t.expires_at_ms));
            }
            1 => {
                let s = rng.random_range(0..SESSIONS);
                let call = ToolCall {
                    call_id: format!("c{n}"),
                    tool_name: "catalog.search".into(),
                    arguments: json!({ "keywords": ["slice"] }),
                    session_id: format!("s{s}"),
                    stage: STAGES[rng.random_range(0..STAGES.len())],
                    origin: CallOrigin::Agent,
                };
                gw.invoke(call, &mut ledgers[s], None);
            }
            2 => clock.advance(Duration::from_secs(rng.random_range(0..400))),
            _ => {
                let session = rng.random_range(0..SESSIONS);
                let token: Option<String> = match rng.random_range(0..5) {
                    0 => None,
                    1 => Some(String::new()),
                    2 => Some(format!("{:x}", rng.random::<u128>())),
                    3 => (!minted.is_empty()).then(|| minted[rng.random_range(0..minted.len())].0.clone()),
                    _ => (!consumed.is_empty()).then(|| consumed[rng.random_range(0..consumed.len())].clone()),
                };
                let draft = rng.random_bool(0.8).then(|| &drafts[rng.random_range(0..drafts.len())]);
                let direct = rng.random_bool(0.5);
                let was_consumed = token.as_ref().is_some_and(|t| consumed.contains(t));
                let bound = if direct { draft.map(|d| d.session_id.clone()) } else { Some(format!("s{session}")) };
                let now = clock.now_ms();
                let fresh = token.as_ref().is_some_and(|t| {
                    minted.iter().any(|(id, s, exp)| id == t && Some(s) == bound.as_ref() && now <= *exp) && !was_consumed
                });
                let ok = if direct {
                    draft.is_some_and(|d| gw.place_order(d, token.as_deref()).is_ok())
                } else {
                    let call = ToolCall {
                        call_id: format!("c{n}"),
                        tool_name: "order.place".into(),
                        arguments: token.as_ref().map_or_else(|| json!({}), |t| json!({ "confirmationToken": t })),
                        session_id: format!("s{session}"),
                        stage: STAGES[rng.random_range(0..STAGES.len())],
                        origin: if rng.random_bool(0.5) { CallOrigin::Agent } else { CallOrigin::Engine },
                    };
                    gw.invoke(call, &mut ledgers[session], draft).status == ToolStatus::Ok
                };
                if was_consumed && ok {
                    return Err("replayed token accepted".into());
                }
                if ok {
                    if !fresh {
                        return Err("order placed without a fresh, session-bound token".into());
                    }
                    consumed.push(token.expect("token present"));
                    placed += 1;
                }
            }
        }
    }
    ensure(inventory.len() == placed, "inventory disagrees with accepted placements")?;
    let tokens: HashSet<String> = inventory.records().into_iter().map(|r| r.token_id).collect();
    ensure(tokens.len() == placed, "a token was used twice")?;
    ensure(tokens.iter().all(|t| minted.iter().any(|m| &m.0 == t)), "order token was never minted")?;
    Ok(placed)
}

fn actuation_safety() -> Check {
    let started = Instant::now();
    let catalog = Arc::new(Catalog::reference());
    let drafts = drafts(&catalog);
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let mut orders = 0;
    for i in 0..SEQUENCES {
        orders += one_sequence(&mut rng, &catalog, &drafts).map_err(|e| format!("sequence {i}: {e}"))?;
    }
    let elapsed = started.elapsed();
    ensure(elapsed < Duration::from_secs(60), format!("took {elapsed:?}"))?;
    Ok(format!("{SEQUENCES} sequences, {orders} legitimate orders, 0 unauthorized, 0 replays accepted"))
}

// 4 ------------------------------------------------------------------------

fn hallucination_counts() -> Check {
    let scenario = BenchmarkScenario::reference();
    let catalog = Arc::new(Catalog::reference());
    let known: HashSet<String> = raw_catalog()["offerings"]
        .as_array()
        .unwrap()
        .iter()
        .flat_map(|o| [o["name"].as_str().unwrap().to_lowercase(), o["tier"].as_str().unwrap_or("").to_lowercase()])
        .collect();
    for k in [0usize, 1, 4, 16] {
        let spec = BackendSpec::Scripted { profile: format!("hallucinate-{k}") };
        let o = run_scenario(&scenario, catalog.clone(), &spec).map_err(|e| e.to_string())?;
        let names = o.session.hallucinated_names();
        ensure(names.len() == k, format!("k={k}: {} findings", names.len()))?;
        ensure(o.score().hallucinated_products == k, format!("k={k}: report disagrees"))?;
        ensure(names.iter().all(|n| !known.contains(&n.to_lowercase())), format!("k={k}: flagged a catalog name"))?;
        let raw = o.session.findings.iter().filter(|f| matches!(f.kind, FindingKind::Hallucination { .. })).count();
        ensure(raw >= k, format!("k={k}: {raw} raw findings"))?;
    }
    Ok("k = 0, 1, 4, 16 give exactly k findings".into())
}

// 5 ------------------------------------------------------------------------

fn cost_algebra() -> Check {
    let catalog = Catalog::reference();
    let prices = raw_prices();
    let ids: Vec<String> = prices.keys().cloned().collect();
    let quote = |set: &[String], days: u32| -> u64 {
        let v: Vec<OfferingId> = set.iter().map(|s| OfferingId::from(s.as_str())).collect();
        catalog.quote(&v, days, None).unwrap().total_cost.0
    };
    let mut runner = TestRunner::new(Config { cases: 2048, failure_persistence: None, ..Config::default() });
    let strategy = (proptest::collection::vec(0u8..3, ids.len()), 1u32..=366);
    runner
        .run(&strategy, |(split, days)| {
            let a: Vec<String> = ids.iter().zip(&split).filter(|(_, s)| **s == 1).map(|(i, _)| i.clone()).collect();
            let b: Vec<String> = ids.iter().zip(&split).filter(|(_, s)| **s == 2).map(|(i, _)| i.clone()).collect();
            let both: Vec<String> = a.iter().chain(&b).cloned().collect();
            prop_assert_eq!(quote(&both, days), quote(&a, days) + quote(&b, days));
            let slope: u64 = both.iter().filter(|i| prices[*i].1).map(|i| prices[i].0).sum();
            let intercept: u64 = both.iter().filter(|i| !prices[*i].1).map(|i| prices[i].0).sum();
            prop_assert_eq!(quote(&both, days), slope * u64::from(days) + intercept);
            Ok(())
        })
        .map_err(|e| e.to_string())?;
    let gold = quote(&["po-slice-gold".into(), "po-cache-large-gpu".into(), "po-slice-observability".into(), "po-setup-vpn".into()], 7);
    let platinum =
        quote(&["po-slice-platinum".into(), "po-cache-large-gpu".into(), "po-slice-observability".into(), "po-setup-vpn".into()], 7);
    ensure(gold == (700 * 7 + 300 * 7 + 100 * 7 + 100) * 100, format!("gold mix {}", Cents(gold)))?;
    ensure(platinum == (1000 * 7 + 300 * 7 + 100 * 7 + 100) * 100, format!("platinum mix {}", Cents(platinum)))?;
    ensure(gold == 780_000 && platinum == 990_000, "spot values")?;
    Ok(format!("2048 additive/affine cases; Gold mix {}, Platinum mix {}", Cents(gold), Cents(platinum)))
}

// 6 ------------------------------------------------------------------------

fn replay_determinism() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let run = cli(&["bench", "run", "--backend", "oracle", "--out", dir.path().to_str().unwrap()]);
    ensure(run.status.success(), "bench run failed")?;
    let stored_path = dir.path().join("oracle");
    let replay = cli(&["session", "replay", stored_path.to_str().unwrap()]);
    ensure(
        replay.status.code() == Some(0),
        format!("replay exit {:?}: {}", replay.status.code(), String::from_utf8_lossy(&replay.stdout)),
    )?;
    let stored = SessionOutcome::from_path(stored_path.join("outcome.json")).map_err(|e| e.to_string())?;
    let check = replay_outcome(&stored, Arc::new(Catalog::reference())).map_err(|e| e.to_string())?;
    let a = stored.session.order_draft.as_ref().ok_or("stored outcome has no draft")?.canonical_bytes();
    let b = check.replayed.session.order_draft.as_ref().ok_or("replay has no draft")?.canonical_bytes();
    ensure(a == b, "order payload bytes differ")?;
    ensure(stored.score() == check.replayed.score(), "re-score differs")?;
    Ok(format!("{}-byte order payload identical, re-score identical", a.len()))
}

// 7 ------------------------------------------------------------------------

fn mutated(f: impl FnOnce(&mut Value)) -> Result<Catalog, CatalogError> {
    let mut doc = raw_catalog();
    f(&mut doc);
    Catalog::from_json(&doc.to_string())
}

fn catalog_integrity() -> Check {
    let catalog = Catalog::reference();
    ensure(catalog.offerings().len() == 9, format!("{} offerings", catalog.offerings().len()))?;
    let mut domains = 0;
    for o in catalog.offerings() {
        let tree = catalog.decompose_offering(&o.id).map_err(|e| e.to_string())?;
        let resources: usize = tree.resources_by_domain.values().map(Vec::len).sum();
        ensure(tree.complete && resources >= 1, format!("{} has no resource leaf", o.id))?;
        domains = domains.max(tree.resources_by_domain.len());
    }
    let dangling = mutated(|d| d["rules"][0]["toSpecId"] = "ss-nowhere".into());
    match dangling {
        Err(CatalogError::Integrity(e @ IntegrityError::DanglingReference { .. })) => {
            ensure(e.offending_id() == "ss-nowhere", format!("dangling reported `{}`", e.offending_id()))?
        }
        other => return Err(format!("dangling reference accepted or misreported: {other:?}")),
    }
    let cycle = mutated(|d| {
        d["rules"].as_array_mut().unwrap().push(json!({
            "id": "r-loop", "fromSpecId": "rs-gnb-capacity", "toSpecId": "ss-ran-subnet"
        }))
    });
    match cycle {
        Err(CatalogError::Integrity(e @ IntegrityError::Cycle(_))) => ensure(
            ["rs-gnb-capacity", "ss-ran-subnet"].contains(&e.offending_id()),
            format!("cycle reported `{}`", e.offending_id()),
        )?,
        other => return Err(format!("cycle accepted or misreported: {other:?}")),
    }
    Ok("9 offerings, each reaches a resource spec; dangling and cycle mutations rejected with their ids".into())
}

// 8 ------------------------------------------------------------------------

fn memory_round_trip() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let root = dir.path().join("cases");
    let catalog = Arc::new(Catalog::reference());
    let clock = Arc::new(ManualClock::new(Utc.with_ymd_and_hms(2026, 5, 4, 9, 0, 0).unwrap()));
    let shared: SharedClock = clock;
    let gateway = Arc::new(ToolGateway::new(catalog.clone(), SkillPolicy::strict(), Arc::new(OrderInventory::in_memory()), shared.clone()));
    let memory = Arc::new(MemoryStore::open(&root, shared.clone()).map_err(|e| e.to_string())?);
    let engine = CoCreationEngine::new(gateway, memory, EngineConfig::default());
    let backend: Box<dyn AgentBackend> = BackendSpec::Oracle.build(catalog.clone(), None)?;

    let scenario = BenchmarkScenario::reference();
    let opts = SessionOptions { session_id: Some("case-roundtrip".into()), default_slice_profile: Some("eMBB".into()), ..Default::default() };
    let mut s = engine.open_session(&scenario.intent_text, opts).map_err(|e| e.to_string())?;
    engine.ground_intent(&mut s, backend.as_ref()).map_err(|e| e.to_string())?;
    engine.propose_alternatives(&mut s, backend.as_ref(), None).map_err(|e| e.to_string())?;
    engine.select_combination(&mut s, Selection::Index(0)).map_err(|e| e.to_string())?;
    let temporal = TemporalSpec { start_date: NaiveDate::from_ymd_opt(2026, 5, 11).unwrap(), duration_days: 7 };
    engine.set_temporal(&mut s, temporal).map_err(|e| e.to_string())?;
    engine.build_order_draft(&mut s).map_err(|e| e.to_string())?;
    let original = s.order_draft.clone().ok_or("no draft")?.canonical_bytes();
    engine.checkpoint(&s).map_err(|e| e.to_string())?;

    let reopened = MemoryStore::open(&root, shared.clone()).map_err(|e| e.to_string())?;
    let case = reopened.load_case("case-roundtrip").map_err(|e| e.to_string())?;
    let rebuilt = case.rebuild_draft(&catalog).map_err(|e| e.to_string())?.canonical_bytes();
    ensure(rebuilt == original, "rebuilt draft bytes differ")?;

    // Concurrent appends; every earlier observation must stay a prefix.
    let store = Arc::new(reopened);
    let base = store.decision_log("case-roundtrip").map_err(|e| e.to_string())?.len();
    const WRITERS: usize = 8;
    const PER_WRITER: usize = 50;
    let digest = |entries: &[cocreate_core::memory::DecisionEntry]| -> String {
        let mut h = Sha256::new();
        for e in entries {
            h.update(serde_json::to_vec(e).unwrap());
            h.update(b"\n");
        }
        format!("{:x}", h.finalize())
    };
    let observations = std::thread::scope(|scope| {
        for w in 0..WRITERS {
            let store = store.clone();
            scope.spawn(move || {
                for i in 0..PER_WRITER {
                    let d = NewDecision::new(Stage::Confirmation, Actor::Engine, format!("writer {w} entry {i}"));
                    store.record_decision("case-roundtrip", d).expect("append");
                }
            });
        }
        let reader = scope.spawn(|| {
            let mut seen = Vec::new();
            for _ in 0..200 {
                let log = store.decision_log("case-roundtrip").expect("read");
                seen.push((log.len(), digest(&log)));
                std::thread::yield_now();
            }
            seen
        });
        reader.join().expect("reader")
    });
    let log = store.decision_log("case-roundtrip").map_err(|e| e.to_string())?;
    ensure(log.len() == base + WRITERS * PER_WRITER, format!("{} entries", log.len()))?;
    ensure(log.iter().enumerate().all(|(i, e)| e.seq == i as u64 + log[0].seq), "sequence numbers have gaps")?;
    for (len, hash) in &observations {
        ensure(digest(&log[..*len]) == *hash, format!("prefix of length {len} changed"))?;
    }
    let from_disk = MemoryStore::open(&root, shared).map_err(|e| e.to_string())?;
    let disk_log = from_disk.decision_log("case-roundtrip").map_err(|e| e.to_string())?;
    ensure(digest(&disk_log) == digest(&log), "log on disk differs from memory")?;
    Ok(format!(
        "{}-byte draft rebuilt identically; {} prefix hashes stable over {} concurrent appends",
        original.len(),
        observations.len(),
        WRITERS * PER_WRITER
    ))
}

fn main() {
    type Criterion = (&'static str, fn() -> Check);
    let criteria: [Criterion; 8] = [
        ("oracle baseline", oracle_baseline),
        ("scripted profile table", profile_table),
        ("actuation safety", actuation_safety),
        ("hallucination counts", hallucination_counts),
        ("cost algebra", cost_algebra),
        ("replay determinism", replay_determinism),
        ("catalog integrity", catalog_integrity),
        ("memory round-trip", memory_round_trip),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let started = Instant::now();
        let result = std::panic::catch_unwind(check).unwrap_or_else(|p| {
            Err(p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| (*s).to_owned())).unwrap_or_default())
        });
        let secs = started.elapsed().as_secs_f64();
        match result {
            Ok(detail) => println!("AC{} PASS {name}: {detail} ({secs:.2} s)", i + 1),
            Err(why) => {
                failed += 1;
                println!("AC{} FAIL {name}: {why} ({secs:.2} s)", i + 1);
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
