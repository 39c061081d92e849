//! Acceptance criteria, one pass/fail line each. Exits non-zero if any fail.

mod common;

use std::time::Instant;

use common::Outcome;
use tablerag_core::router::{classify_intention, IntentionCategory};
use tablerag_core::store::synth::{generate, SyntheticCorpusSpec};
use tablerag_core::suite::Suite;

fn reference_quads() -> Outcome {
    let start = Instant::now();
    let rows = common::reference_quads().map_err(|e| vec![e])?;
    let elapsed = start.elapsed();
    let mut bad = Vec::new();
    let mut shown = Vec::new();
    for r in &rows {
        shown.push(r.got.to_string());
        if r.got.as_array() != r.expected {
            bad.push(format!(
                "{}: got {} expected {:?} ({:?})",
                r.label, r.got, r.expected, r.got.evidence
            ));
        }
    }
    if elapsed.as_secs_f64() >= 1.0 {
        bad.push(format!("took {elapsed:?}"));
    }
    if bad.is_empty() {
        Ok(format!(
            "{} in {:.1} ms",
            shown.join(" "),
            elapsed.as_secs_f64() * 1000.0
        ))
    } else {
        Err(bad)
    }
}

fn routing() -> Outcome {
    use IntentionCategory::*;
    let cases = [
        ("What % of our offices are at 100% renewable electricity?", Percent),
        ("What is the annual reduction of emissions globally?", Change),
        ("Which country has the highest Emissions type 1 emissions?", Rank),
        ("What is scope 1 emission levels for offices in Argentina?", Level),
        ("Which city had the highest water consumption for Dec 2022?", Rank2),
        (
            "Which countries reduced scope 3 emissions consistently in the last 2 years and increased renewable electricity?",
            Multi,
        ),
        ("What is included in business travel?", Faq),
    ];
    let mut bad = Vec::new();
    for (q, want) in cases {
        match classify_intention(q) {
            Ok(got) if got == want => {}
            other => bad.push(format!("{q}: {other:?}, expected {}", want.code())),
        }
    }
    if bad.is_empty() {
        Ok("7 of 7 queries classified to codes 0-6".into())
    } else {
        Err(bad)
    }
}

fn oracle_equivalence() -> Outcome {
    let s4 = common::s4_equivalence(11, 1000, 200)?;
    let topk = common::topk_equivalence(12, 200, 50)?;
    Ok(format!("{s4}; {topk}"))
}

type Criterion<'a> = (&'static str, Box<dyn Fn() -> Outcome + 'a>);

fn main() {
    let corpus = generate(SyntheticCorpusSpec::default());
    let suite = Suite::build(&corpus).expect("suite builds");
    let criteria: Vec<Criterion<'_>> = vec![
        ("Reference score vectors", Box::new(reference_quads)),
        ("Intent routing", Box::new(routing)),
        (
            "Fault-injection soundness",
            Box::new(|| common::fault_injection(&[1, 2, 3, 4, 5], 2)),
        ),
        ("Oracle equivalence", Box::new(oracle_equivalence)),
        (
            "Conservation invariants",
            Box::new(|| common::conservation(&corpus, &suite)),
        ),
        ("MUP isolation", Box::new(|| common::mup_isolation(7, 100, 3))),
        (
            "Call accounting and overhead",
            Box::new(|| common::call_accounting(&corpus, &suite)),
        ),
        ("Determinism", Box::new(common::determinism)),
    ];
    let mut failed = 0;
    for (name, run) in &criteria {
        match run() {
            Ok(detail) => println!("PASS {name}: {detail}"),
            Err(problems) => {
                failed += 1;
                println!("FAIL {name}: {} problem(s)", problems.len());
                for p in problems.iter().take(5) {
                    println!("    {p}");
                }
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
