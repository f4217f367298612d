mod common;

use std::collections::BTreeSet;

use proptest::prelude::*;

use common::{col, new_table, plain};
use lazymig::catalog::{
    format_spec, parse_spec, Catalog, CmpOp, ColumnDef, ColumnSource, KeyMode, MigrationClass, MigrationSpec,
    NewColumnSpec, Predicate, Strategy,
};
use lazymig::kvstore::{ClockMode, Cluster, ColumnType, Scalar};
use lazymig::Error;

/// `line(w, o, n, item, qty)` joined with `stock(w, item, info)` on
/// `(w, item)` into `line_stock(w, o, n, item, qty, info)`.
fn join_catalog() -> (Catalog, lazymig::catalog::MigrationHandle) {
    let mut catalog = Catalog::new();
    let int = |n: &str| ColumnDef::new(n, ColumnType::Int);
    catalog
        .create_table_with_id(61, "line", vec![int("w"), int("o"), int("n"), int("item"), int("qty")], &["w", "o", "n"])
        .unwrap();
    catalog
        .create_table_with_id(62, "stock", vec![int("w"), int("item"), int("info")], &["w", "item"])
        .unwrap();
    let spec = MigrationSpec {
        class: MigrationClass::Join,
        strategy: Strategy::SlsmBasic,
        old_tables: vec!["line".into(), "stock".into()],
        new_tables: vec![new_table(
            "line_stock",
            63,
            vec![
                plain("w", "line", "w"),
                plain("o", "line", "o"),
                plain("n", "line", "n"),
                plain("item", "line", "item"),
                plain("qty", "line", "qty"),
                plain("info", "stock", "info"),
            ],
            &["w", "o", "n"],
        )],
        join_keys: vec![(col("line", "w"), col("stock", "w")), (col("line", "item"), col("stock", "item"))],
        group_keys: Vec::new(),
    };
    let mut cluster = Cluster::new(1, 0.0, ClockMode::Virtual).unwrap();
    let h = catalog.register_migration(spec, &mut cluster, 0).unwrap();
    (catalog, h)
}

type Row = Vec<Scalar>;

fn ints(v: &[i64]) -> Row {
    v.iter().map(|&x| Scalar::Int(x)).collect()
}

/// Nested-loop join in new-table column order.
fn nested_loop(lines: &[Row], stock: &[Row]) -> BTreeSet<Row> {
    let mut out = BTreeSet::new();
    for l in lines {
        for s in stock {
            if l[0] == s[0] && l[3] == s[1] {
                out.insert(vec![l[0].clone(), l[1].clone(), l[2].clone(), l[3].clone(), l[4].clone(), s[2].clone()]);
            }
        }
    }
    out
}

const COLS: [&str; 6] = ["w", "o", "n", "item", "qty", "info"];

fn op() -> impl proptest::strategy::Strategy<Value = CmpOp> {
    prop_oneof![Just(CmpOp::Eq), Just(CmpOp::Lt), Just(CmpOp::Le), Just(CmpOp::Gt), Just(CmpOp::Ge)]
}

proptest! {
    #[test]
    fn rewritten_filter_selects_exactly_the_joined_rows(
        lines in proptest::collection::vec((1i64..3, 1i64..5, 1i64..4, 1i64..6, 0i64..10), 0..25),
        stock in proptest::collection::btree_map((1i64..3, 1i64..6), 0i64..10, 0..12),
        conds in proptest::collection::vec((0usize..6, op(), 0i64..8), 0..4),
    ) {
        let (catalog, h) = join_catalog();
        let lines: Vec<Row> = lines
            .into_iter()
            .map(|(w, o, n, i, q)| ints(&[w, o, n, i, q]))
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let stock: Vec<Row> = stock.into_iter().map(|((w, i), info)| ints(&[w, i, info])).collect();
        let mut pred = Predicate::all();
        for (c, o, v) in &conds {
            pred = pred.and(COLS[*c], *o, *v);
        }
        let nt = catalog.table("line_stock").unwrap();
        let bound = pred.bind(nt).unwrap();
        let expected: BTreeSet<Row> = nested_loop(&lines, &stock).into_iter().filter(|r| bound.matches(r)).collect();

        let rewritten = catalog.rewrite_predicate(h, "line_stock", &pred).unwrap();
        prop_assert_eq!(rewritten.len(), 2);
        let filter = |t: &str, rows: &[Row]| -> Vec<Row> {
            let b = rewritten[t].bind(catalog.table(t).unwrap()).unwrap();
            rows.iter().filter(|r| b.matches(r)).cloned().collect()
        };
        let got = nested_loop(&filter("line", &lines), &filter("stock", &stock));
        prop_assert_eq!(got, expected);
    }
}

#[test]
fn join_key_condition_reaches_both_sides() {
    let (catalog, h) = join_catalog();
    let out = catalog.rewrite_predicate(h, "line_stock", &Predicate::eq("item", 4)).unwrap();
    assert_eq!(out["line"], Predicate::eq("item", 4));
    assert_eq!(out["stock"], Predicate::eq("item", 4));
    let out = catalog.rewrite_predicate(h, "line_stock", &Predicate::eq("info", 4)).unwrap();
    assert!(out["line"].is_tautology());
    assert_eq!(out["stock"], Predicate::eq("info", 4));
}

#[test]
fn sum_column_predicate_is_rejected() {
    let mut catalog = Catalog::new();
    let int = |n: &str| ColumnDef::new(n, ColumnType::Int);
    catalog
        .create_table_with_id(61, "line", vec![int("w"), int("o"), int("n"), int("qty")], &["w", "o", "n"])
        .unwrap();
    let spec = MigrationSpec {
        class: MigrationClass::Preaggregate,
        strategy: Strategy::SlsmFull,
        old_tables: vec!["line".into()],
        new_tables: vec![new_table(
            "totals",
            64,
            vec![
                plain("w", "line", "w"),
                plain("o", "line", "o"),
                NewColumnSpec {
                    name: "total".into(),
                    source: ColumnSource::Sum(col("line", "qty")),
                },
            ],
            &["w", "o"],
        )],
        join_keys: Vec::new(),
        group_keys: vec!["w".into(), "o".into()],
    };
    let mut cluster = Cluster::new(1, 0.0, ClockMode::Virtual).unwrap();
    let h = catalog.register_migration(spec, &mut cluster, 0).unwrap();
    let p = Predicate::eq("w", 1).and("total", CmpOp::Gt, 3);
    assert!(matches!(
        catalog.rewrite_predicate(h, "totals", &p),
        Err(Error::RewriteUnsupported { .. })
    ));
    assert_eq!(
        catalog.table("totals").unwrap().key_mode,
        KeyMode::Prefixed {
            old_table: 61,
            prefix_arity: 2
        }
    );
}

#[test]
fn built_in_specs_round_trip_and_register() {
    for class in MigrationClass::ALL {
        let spec = lazymig::bench::migration_spec(class, Strategy::SlsmFull).unwrap();
        assert_eq!(spec.class, class);
        assert_eq!(parse_spec(&format_spec(&spec)).unwrap(), spec);
        let cfg = lazymig::bench::WorkloadConfig {
            cardinalities: Some(common::tiny_card()),
            migration: class,
            ..Default::default()
        };
        let mut db = lazymig::bench::prepare_database(&cfg).unwrap();
        let h = db.catalog.register_migration(spec, &mut db.cluster, 0).unwrap();
        let m = db.catalog.migration(h);
        assert!(db.catalog.state(h).warnings.is_empty(), "{:?}", db.catalog.state(h).warnings);
        assert!(m.targets.iter().all(|t| matches!(t.key_mode, KeyMode::Prefixed { .. })));
    }
}

#[test]
fn second_migration_on_a_busy_table_is_refused() {
    let (mut db, _) = common::account_migration(Strategy::SlsmBasic, 10, 1).unwrap();
    let err = db
        .catalog
        .register_migration(common::split_spec(Strategy::SlsmBasic), &mut db.cluster, 0)
        .unwrap_err();
    assert!(matches!(err, Error::MigrationConflict(_) | Error::InvalidMigration(_)), "{err}");
}
