mod common;

use std::collections::{BTreeMap, BTreeSet};

use common::*;
use lazymig::background::{drain_until_done, DrainConfig, DrainMode};
use lazymig::bench::hop::{hop_audit_with_costs, Category, HopOutcome, PROBE_ID};
use lazymig::catalog::{CmpOp, MigrationClass, MigrationHandle, OscState, Predicate, Strategy};
use lazymig::kvstore::Scalar;
use lazymig::migration::{exclusivity_violations, orphaned_units, repeated_migrations, OscConfig, OscDriver};
use lazymig::txn::{Assignment, Database, ServiceCosts, Statement};
use lazymig::Error;

type Row = Vec<Scalar>;

fn select_all(db: &mut Database, table: &str) -> BTreeSet<Row> {
    let r = run_txn(db, 1, &[Statement::select(table, &[], Predicate::all())]).unwrap();
    r[0].rows.iter().cloned().collect()
}

fn by_id(table: &str, id: i64) -> Statement {
    Statement::select(table, &[], Predicate::eq("id", id))
}

fn finish(db: &mut Database, h: MigrationHandle, strategy: Strategy) {
    if strategy.is_lazy() {
        let cfg = DrainConfig {
            batch_size: 4,
            pace_us: 0,
            mode: DrainMode::for_strategy(strategy),
        };
        drain_until_done(db, h, cfg).unwrap();
    } else {
        let mut d = OscDriver::new(h, OscConfig { batch_size: 4, pace_us: 0 });
        while d.osc_step(db).unwrap() != OscState::Public {}
    }
    assert!(db.catalog.state(h).done);
}

fn text(s: &str) -> Scalar {
    Scalar::Text(s.into())
}

/// Expected new-table contents computed from the fixture generators alone.
fn expected(class: MigrationClass) -> BTreeMap<&'static str, BTreeSet<Row>> {
    let mut out = BTreeMap::new();
    match class {
        MigrationClass::Split => {
            let rows: Vec<Row> = (0..60).map(account_row).collect();
            out.insert(
                "profile",
                rows.iter().map(|r| vec![r[0].clone(), r[1].clone(), r[3].clone()]).collect(),
            );
            out.insert("balance", rows.iter().map(|r| vec![r[0].clone(), r[2].clone()]).collect());
        }
        MigrationClass::Join => {
            let mut set = BTreeSet::new();
            for w in 1..=2 {
                for o in 1..=8 {
                    for n in 1..=3 {
                        let mut r = line_row(w, o, n);
                        let item = r[3].as_int().unwrap();
                        r.push(Scalar::Text(format!("s{w}-{item}")));
                        set.insert(r);
                    }
                }
            }
            out.insert("line_stock", set);
        }
        MigrationClass::Preaggregate => {
            let mut set = BTreeSet::new();
            for w in 1..=2 {
                for o in 1..=8 {
                    let total: i64 = (1..=3).map(|n| line_row(w, o, n)[4].as_int().unwrap()).sum();
                    set.insert(vec![Scalar::Int(w), Scalar::Int(o), Scalar::Int(total)]);
                }
            }
            out.insert("totals", set);
        }
    }
    out
}

#[test]
fn drained_tables_match_independent_derivation() {
    for class in MigrationClass::ALL {
        for strategy in Strategy::ALL {
            let (mut db, h) = migration_fixture(class, strategy).unwrap();
            finish(&mut db, h, strategy);
            for (table, rows) in expected(class) {
                assert_eq!(select_all(&mut db, table), rows, "{strategy} {class} {table}");
            }
            if strategy.is_lazy() {
                assert!(exclusivity_violations(&db, h).unwrap().is_empty(), "{strategy} {class}");
            }
            assert!(repeated_migrations(&db).is_empty(), "{strategy} {class}");
        }
    }
}

#[test]
fn fused_statement_returns_rights_in_one_round_trip() {
    let costs = ServiceCosts {
        statement_us: 1000,
        ..ServiceCosts::zero()
    };
    let HopOutcome::Measured(full) = hop_audit_with_costs(Category::OldNew, Strategy::SlsmFull, costs).unwrap() else {
        panic!("old_new is measurable under full");
    };
    assert_eq!(full.round_trips, 1);
    assert_eq!(full.rows, vec![vec![Scalar::Int(PROBE_ID), text("r")]]);
    assert!(full.fused);
    assert_eq!(full.service_us, 1000);
    let HopOutcome::Measured(basic) = hop_audit_with_costs(Category::OldNew, Strategy::SlsmBasic, costs).unwrap()
    else {
        panic!("old_new is measurable under basic");
    };
    assert_eq!(basic.round_trips, 1);
    assert_eq!(basic.rows, full.rows);
    assert!(!basic.fused);
    assert_eq!(basic.service_us, 2000);
}

#[test]
fn a_unit_is_migrated_once() {
    for strategy in LAZY {
        let (mut db, _) = account_migration(strategy, 60, 3).unwrap();
        let r = run_txn(&mut db, 1, &[by_id("profile", 7)]).unwrap();
        assert_eq!(r[0].cost.migrated_units, 1, "{strategy}");
        assert_eq!(r[0].rows, vec![vec![Scalar::Int(7), text("n7"), text("lima")]]);
        let r = run_txn(&mut db, 1, &[by_id("profile", 7), by_id("balance", 7)]).unwrap();
        assert_eq!(r[0].cost.migrated_units, 0, "{strategy}");
        assert_eq!(r[1].cost.migrated_units, 0, "{strategy}");
        assert_eq!(r[1].rows, vec![vec![Scalar::Int(7), Scalar::Int(70)]]);
        let range = Statement::select("balance", &[], Predicate::all().and("id", CmpOp::Lt, 20));
        let r = run_txn(&mut db, 2, std::slice::from_ref(&range)).unwrap();
        assert_eq!(r[0].cost.migrated_units, 19, "{strategy}");
        assert_eq!(r[0].rows.len(), 20);
        let r = run_txn(&mut db, 3, &[range]).unwrap();
        assert_eq!(r[0].cost.migrated_units, 0, "{strategy}");
        assert!(repeated_migrations(&db).is_empty());
    }
}

#[test]
fn aborted_migration_leaves_the_unit_pending() {
    let (mut db, _) = account_migration(Strategy::SlsmFull, 20, 1).unwrap();
    let t = db.begin(1);
    assert_eq!(db.execute(t, &by_id("profile", 4)).unwrap().cost.migrated_units, 1);
    db.abort(t).unwrap();
    let r = run_txn(&mut db, 1, &[by_id("profile", 4)]).unwrap();
    assert_eq!(r[0].cost.migrated_units, 1);
    assert_eq!(db.migration_events().len(), 1);
}

#[test]
fn old_table_is_obsolete_under_lazy_strategies() {
    for strategy in LAZY {
        let (mut db, _) = account_migration(strategy, 10, 1).unwrap();
        let err = run_txn(&mut db, 1, &[by_id("account", 1)]).unwrap_err();
        assert!(matches!(err, Error::ObsoleteSchema(_)), "{strategy}: {err}");
    }
}

#[test]
fn insert_of_a_pending_key_is_refused() {
    for strategy in LAZY {
        let (mut db, _) = account_migration(strategy, 10, 2).unwrap();
        let ins = |id: i64| {
            Statement::insert(
                "profile",
                &[("id", Scalar::Int(id)), ("name", text("x")), ("city", text("rome"))],
            )
        };
        let err = run_txn(&mut db, 1, &[ins(5)]).unwrap_err();
        assert!(matches!(err, Error::Constraint(_)), "{strategy}: {err}");
        run_txn(&mut db, 1, &[ins(100)]).unwrap();
        let r = run_txn(&mut db, 1, &[by_id("profile", 100), by_id("balance", 100)]).unwrap();
        assert_eq!(r[0].cost.migrated_units, 0);
        assert_eq!(r[0].rows, vec![vec![Scalar::Int(100), text("x"), text("rome")]]);
        assert_eq!(r[1].rows, vec![vec![Scalar::Int(100), Scalar::Int(0)]]);
        // once migrated, the key exists in the new table
        run_txn(&mut db, 1, &[by_id("profile", 5)]).unwrap();
        let err = run_txn(&mut db, 1, &[ins(5)]).unwrap_err();
        assert!(matches!(err, Error::Constraint(_)), "{strategy}: {err}");
    }
}

#[test]
fn deleted_rows_stay_deleted() {
    for strategy in LAZY {
        let (mut db, h) = account_migration(strategy, 20, 2).unwrap();
        let del = Statement::delete("profile", Predicate::eq("id", 9));
        let r = run_txn(&mut db, 1, &[del]).unwrap();
        assert_eq!(r[0].affected, 1, "{strategy}");
        let r = run_txn(&mut db, 1, &[by_id("profile", 9)]).unwrap();
        assert!(r[0].rows.is_empty());
        assert_eq!(r[0].cost.migrated_units, 0);
        finish(&mut db, h, strategy);
        let profiles = select_all(&mut db, "profile");
        assert_eq!(profiles.len(), 19, "{strategy}");
        assert!(profiles.iter().all(|p| p[0] != Scalar::Int(9)));
    }
}

#[test]
fn updates_through_the_new_schema_survive_the_drain() {
    for strategy in LAZY {
        let (mut db, h) = account_migration(strategy, 30, 3).unwrap();
        let upd = Statement::update(
            "balance",
            Predicate::all().and("id", CmpOp::Ge, 25),
            vec![Assignment::Set("balance".into(), Scalar::Int(-1))],
        );
        let r = run_txn(&mut db, 1, &[upd]).unwrap();
        assert_eq!(r[0].affected, 5);
        finish(&mut db, h, strategy);
        let bal = select_all(&mut db, "balance");
        let expect: BTreeSet<Row> = (0..30)
            .map(|id| vec![Scalar::Int(id), Scalar::Int(if id >= 25 { -1 } else { id * 10 })])
            .collect();
        assert_eq!(bal, expect, "{strategy}");
    }
}

#[test]
fn join_and_aggregate_targets_refuse_unsafe_writes() {
    for strategy in LAZY {
        let (mut db, _) = migration_fixture(MigrationClass::Join, strategy).unwrap();
        let sel = Statement::select("line_stock", &[], Predicate::eq("w", 1).and("o", CmpOp::Eq, 2));
        let r = run_txn(&mut db, 1, &[sel]).unwrap();
        assert_eq!(r[0].rows.len(), 3, "{strategy}");
        let upd = Statement::update(
            "stock",
            Predicate::eq("w", 1),
            vec![Assignment::Set("info".into(), text("z"))],
        );
        assert!(matches!(run_txn(&mut db, 1, &[upd]), Err(Error::Unsupported(_))));

        let (mut db, _) = migration_fixture(MigrationClass::Preaggregate, strategy).unwrap();
        let sel = Statement::select("totals", &["total"], Predicate::eq("w", 2).and("o", CmpOp::Eq, 3));
        let r = run_txn(&mut db, 1, &[sel]).unwrap();
        let total: i64 = (1..=3).map(|n| line_row(2, 3, n)[4].as_int().unwrap()).sum();
        assert_eq!(r[0].rows, vec![vec![Scalar::Int(total)]], "{strategy}");
        let ins = Statement::insert(
            "totals",
            &[("w", Scalar::Int(9)), ("o", Scalar::Int(1)), ("total", Scalar::Int(1))],
        );
        assert!(matches!(run_txn(&mut db, 1, &[ins]), Err(Error::Unsupported(_))));
    }
}

#[test]
fn osc_mirrors_writes_until_public() {
    let (mut db, h) = account_migration(Strategy::Osc, 30, 3).unwrap();
    let mut d = OscDriver::new(h, OscConfig { batch_size: 4, pace_us: 0 });
    assert!(matches!(
        run_txn(&mut db, 1, &[by_id("profile", 1)]),
        Err(Error::NotYetPublic(_))
    ));
    assert_eq!(d.osc_step(&mut db).unwrap(), OscState::DeleteOnly);
    assert_eq!(d.osc_step(&mut db).unwrap(), OscState::WriteOnly);
    let set = |id: i64, v: i64| {
        Statement::update(
            "account",
            Predicate::eq("id", id),
            vec![Assignment::Set("balance".into(), Scalar::Int(v))],
        )
    };
    // ahead of the backfill watermark
    run_txn(&mut db, 1, &[set(27, 1)]).unwrap();
    for _ in 0..3 {
        assert_eq!(d.osc_step(&mut db).unwrap(), OscState::WriteOnly);
    }
    assert!(matches!(
        run_txn(&mut db, 1, &[by_id("balance", 1)]),
        Err(Error::NotYetPublic(_))
    ));
    // behind the watermark
    run_txn(&mut db, 1, &[set(2, 2)]).unwrap();
    run_txn(&mut db, 1, &[Statement::delete("account", Predicate::eq("id", 3))]).unwrap();
    let mut row = account_row(40);
    row[1] = text("new");
    let cols = ["id", "name", "balance", "city"];
    let values: Vec<(&str, Scalar)> = cols.into_iter().zip(row).collect();
    run_txn(&mut db, 1, &[Statement::insert("account", &values)]).unwrap();
    while d.osc_step(&mut db).unwrap() != OscState::Public {}
    assert!(db.catalog.state(h).backfill_steps >= 8);

    let bal: BTreeMap<i64, i64> = select_all(&mut db, "balance")
        .into_iter()
        .map(|r| (r[0].as_int().unwrap(), r[1].as_int().unwrap()))
        .collect();
    let mut expect: BTreeMap<i64, i64> = (0..30).map(|id| (id, id * 10)).collect();
    expect.insert(27, 1);
    expect.insert(2, 2);
    expect.remove(&3);
    expect.insert(40, 400);
    assert_eq!(bal, expect);
    let r = run_txn(&mut db, 1, &[by_id("profile", 40)]).unwrap();
    assert_eq!(r[0].rows, vec![vec![Scalar::Int(40), text("new"), text("lima")]]);
    assert!(matches!(
        run_txn(&mut db, 1, &[by_id("account", 1)]),
        Err(Error::ObsoleteSchema(_))
    ));
}

#[test]
fn checks_catch_planted_anomalies() {
    let (mut db, h) = account_migration(Strategy::SlsmBasic, 10, 1).unwrap();
    run_txn(&mut db, 1, &[by_id("profile", 7)]).unwrap();
    assert!(exclusivity_violations(&db, h).unwrap().is_empty());
    // a stale copy of a migrated row makes the tuple visible twice
    let account = db.catalog.table("account").unwrap().clone();
    db.cluster
        .load_row(account.row_key(&account_row(7)), lazymig::kvstore::RowValue(account_row(7)));
    assert_eq!(exclusivity_violations(&db, h).unwrap().len(), 1);

    let (mut db, h) = migration_fixture(MigrationClass::Join, Strategy::SlsmBasic).unwrap();
    let sel = Statement::select("line_stock", &[], Predicate::eq("w", 1).and("o", CmpOp::Eq, 2));
    run_txn(&mut db, 1, &[sel]).unwrap();
    assert!(orphaned_units(&db, h).unwrap().is_empty());
    let del = Statement::delete("line_stock", Predicate::eq("w", 1).and("o", CmpOp::Eq, 2));
    run_txn(&mut db, 1, &[del]).unwrap();
    assert_eq!(orphaned_units(&db, h).unwrap().len(), 3);
    assert!(exclusivity_violations(&db, h).unwrap().is_empty());
}
