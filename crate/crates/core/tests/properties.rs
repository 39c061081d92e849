mod common;

use std::collections::{BTreeMap, BTreeSet, HashSet};

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rust_decimal::Decimal;

use tablerag_core::answer::{parse_table_block, render_table_block};
use tablerag_core::auth::MinimalUserProfile;
use tablerag_core::retriever::{validate_sql, PlanSource, RetrieverError};
use tablerag_core::scorer::{grounding_set, number_check, regurgitation_check};
use tablerag_core::store::synth::{generate, SyntheticCorpusSpec};
use tablerag_core::store::{ColumnDef, ScalarType, StagedTable, Value};
use tablerag_core::suite::Suite;

fn ident() -> impl Strategy<Value = String> {
    "[a-z][a-z0-9_]{0,11}"
}

fn mup() -> impl Strategy<Value = MinimalUserProfile> {
    (
        ident(),
        prop::collection::btree_set(ident(), 0..6),
        any::<u64>(),
        prop::collection::vec(("[A-Za-z ]{1,12}", "[A-Za-z' ]{0,12}"), 0..3),
    )
        .prop_map(|(user_id, granted_tables, issued_at, preds)| {
            let constraints: BTreeMap<String, String> = granted_tables
                .iter()
                .zip(preds)
                .map(|(t, (col, lit))| (t.clone(), format!("{} = '{}'", col.trim(), lit.replace('\'', "''"))))
                .collect();
            MinimalUserProfile {
                constraints,
                granted_tables,
                issued_at,
                user_id,
            }
        })
}

fn staged(rows: Vec<Vec<Value>>) -> StagedTable {
    let width = rows.first().map_or(1, Vec::len);
    StagedTable {
        staging_id: "stage_t_1".into(),
        columns: (0..width)
            .map(|i| ColumnDef::new(format!("c{i}"), ScalarType::Text))
            .collect(),
        row_count: rows.len(),
        rows,
        source_sql: vec![],
        origin: "sql".into(),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn mup_document_round_trips(m in mup()) {
        let text = m.serialize();
        prop_assert_eq!(MinimalUserProfile::parse(&text).unwrap(), m.clone());
        prop_assert_eq!(MinimalUserProfile::parse(&text).unwrap().serialize(), text);
    }

    #[test]
    fn enforce_permits_exactly_the_grants(m in mup(), probe in ident()) {
        prop_assert_eq!(m.enforce(&probe).is_permit(), m.granted_tables.contains(&probe));
    }

    #[test]
    fn table_block_round_trips(cells in prop::collection::vec(prop::collection::vec("[ -~\n\r|\\\\]{0,10}", 3), 0..6)) {
        let rows: Vec<Vec<Value>> = cells.iter().map(|r| r.iter().map(|c| Value::Text(c.clone())).collect()).collect();
        let table = StagedTable {
            columns: (0..3).map(|i| ColumnDef::new(format!("c{i}"), ScalarType::Text)).collect(),
            ..staged(rows)
        };
        let parsed = parse_table_block(&render_table_block(&table)).expect("block parses");
        prop_assert_eq!(&parsed[0], &vec!["c0".to_string(), "c1".into(), "c2".into()]);
        prop_assert_eq!(&parsed[1..], &cells[..]);
    }

    #[test]
    fn s4_matches_substring_oracle(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (p, r) = common::random_pair(&mut rng, 200);
        prop_assert_eq!(regurgitation_check(&p, None, &r, 10).0, common::s4_oracle(&p, &r, 10));
    }

    #[test]
    fn injected_absent_number_lowers_s1(
        cells in prop::collection::vec(1i64..1_000_000, 1..8),
        scale in 0u32..3,
        injected in 1i64..1_000_000_000,
    ) {
        let rows = vec![cells.iter().map(|c| Value::Number(Decimal::new(*c, scale))).collect()];
        let table = staged(rows);
        let query = "What is the total for offices in Europe?";
        let set = grounding_set(Some(&table), query);
        let fabricated = Decimal::new(injected, 2);
        prop_assume!(!set.contains(&fabricated.normalize()));
        let grounded: Vec<String> = cells.iter().map(|c| Decimal::new(*c, scale).to_string()).collect();
        let response = format!("The values were {}. Another figure is {fabricated}.", grounded.join(", "));
        let (s1, _) = number_check(&response, &set, None);
        prop_assert!(s1 < 1.0);
        prop_assert_eq!(number_check(&format!("The values were {}.", grounded.join(", ")), &set, None).0, 1.0);
    }

    #[test]
    fn data_modifying_sql_is_rejected(
        kw in prop::sample::select(vec!["INSERT INTO t VALUES (1)", "UPDATE t SET a = 1", "DELETE FROM t", "DROP TABLE t", "ALTER TABLE t ADD b INT", "CREATE TABLE u (a INT)", "TRUNCATE t"]),
        upper in any::<bool>(),
        prefix in prop::bool::ANY,
    ) {
        let stmt = if upper { kw.to_string() } else { kw.to_lowercase() };
        let text = if prefix { format!("SELECT a FROM t; {stmt}") } else { stmt };
        let known: HashSet<String> = ["t", "a"].into_iter().map(String::from).collect();
        let err = validate_sql(&text, &known, PlanSource::Fixture).unwrap_err();
        prop_assert!(matches!(err, RetrieverError::ForbiddenStatement(_)), "{err:?}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn top_k_matches_brute_force_sort(seed in any::<u64>()) {
        prop_assert!(common::topk_equivalence(seed, 5, 50).is_ok());
    }

    #[test]
    fn corpus_sums_are_conserved(seed in any::<u64>()) {
        let corpus = generate(SyntheticCorpusSpec { seed, rows_per_table: 200 });
        let suite = Suite::build(&corpus).unwrap();
        let outcome = common::conservation(&corpus, &suite);
        prop_assert!(outcome.is_ok(), "{:?}", outcome);
    }
}

#[test]
fn session_isolation_small() {
    let outcome = common::mup_isolation(3, 20, 2);
    assert!(outcome.is_ok(), "{outcome:?}");
}

#[test]
fn grounding_uses_absolute_values() {
    let table = staged(vec![vec![Value::Number(Decimal::new(-125, 1))]]);
    let set = grounding_set(Some(&table), "");
    assert_eq!(set, BTreeSet::from([Decimal::new(125, 1)]));
}
