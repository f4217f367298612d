//! Acceptance criteria, one PASS/FAIL line each. Exits non-zero if any fails.

mod common;

use std::collections::BTreeMap;
use std::fs;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::*;
use lazymig::background::{DrainConfig, DrainMode, Drainer};
use lazymig::bench::hop::{expected_round_trips, hop_audit, Category, HopOutcome};
use lazymig::bench::tpcc::Cardinalities;
use lazymig::bench::{export_report, run_benchmark, MetricsReport, WorkloadConfig};
use lazymig::catalog::{CmpOp, MigrationClass, MigrationHandle, Predicate, Strategy};
use lazymig::kvstore::Scalar;
use lazymig::migration::{exclusivity_violations, repeated_migrations};
use lazymig::txn::{Assignment, Database, Statement, TxnId};
use lazymig::Error;

/// Outcome of one criterion: pass flag and a one-line measurement.
type Verdict = (bool, String);

fn ms(us: f64) -> f64 {
    us / 1000.0
}

fn check_runtime(v: Verdict, took: Duration, limit: Duration) -> Verdict {
    let ok = v.0 && took < limit;
    (ok, format!("{}; runtime {:.2}s (limit {}s)", v.1, took.as_secs_f64(), limit.as_secs()))
}

// 1. Round trips per placement category.

fn hop_table() -> Verdict {
    let mut ok = true;
    let mut cells = Vec::new();
    for s in [Strategy::SlsmBasic, Strategy::SlsmMigOpt, Strategy::SlsmFull] {
        let mut row = Vec::new();
        for c in Category::ALL {
            let got = hop_audit(c, s).expect("hop audit runs");
            // placements that colocation makes impossible are expected as such
            let want = match (s.colocates(), c) {
                (true, Category::GatewayOld | Category::GatewayNew | Category::Disjoint) => None,
                (_, Category::GatewayOldNew) => Some(0),
                (_, Category::Disjoint) => Some(3),
                _ => Some(1),
            };
            ok &= got.round_trips() == want && expected_round_trips(c, s) == want;
            if let (HopOutcome::Measured(a), true) = (&got, s == Strategy::SlsmFull && c == Category::OldNew) {
                ok &= a.fused;
            }
            row.push(got.round_trips().map_or("-".to_string(), |n| n.to_string()));
        }
        cells.push(format!("{s}={}", row.join("/")));
    }
    (ok, cells.join(" "))
}

// 2, 3 and 8. Latency comparisons on TPC-C-lite.

/// The migration starts with the run and no background drain competes
/// with user statements.
fn ablation(strategy: Strategy, rtt_ms: f64, nodes: usize) -> WorkloadConfig {
    WorkloadConfig {
        strategy,
        rtt_ms,
        nodes,
        seed: 1,
        duration_ms: 180_000,
        migration_start_ms: 0,
        background: false,
        ..WorkloadConfig::default()
    }
}

fn mean_new(cfg: &WorkloadConfig) -> f64 {
    let r = run_benchmark(cfg).expect("benchmark runs");
    assert!(r.errors.is_empty(), "{}: {:?}", cfg.strategy, r.errors);
    r.mean_new_schema_latency_us().expect("new-schema statements")
}

fn ablation_ordering() -> Verdict {
    let m: BTreeMap<Strategy, f64> = [
        Strategy::SlsmFull,
        Strategy::SlsmMigOpt,
        Strategy::SlsmUserOpt,
        Strategy::SlsmBasic,
    ]
    .into_iter()
    .map(|s| (s, mean_new(&ablation(s, 22.33, 3))))
    .collect();
    let gap = |lo: Strategy, hi: Strategy| 1.0 - m[&lo] / m[&hi];
    let pairs = [
        (Strategy::SlsmFull, Strategy::SlsmMigOpt),
        (Strategy::SlsmMigOpt, Strategy::SlsmBasic),
        (Strategy::SlsmFull, Strategy::SlsmUserOpt),
        (Strategy::SlsmUserOpt, Strategy::SlsmBasic),
    ];
    let ok = pairs.iter().all(|&(lo, hi)| gap(lo, hi) > 0.05);
    let means: Vec<String> = m.iter().map(|(s, v)| format!("{s}={:.2}ms", ms(*v))).collect();
    let gaps: Vec<String> = pairs
        .iter()
        .map(|&(lo, hi)| format!("{lo}<{hi} by {:.1}%", 100.0 * gap(lo, hi)))
        .collect();
    (ok, format!("{}; {} (need > 5%)", means.join(" "), gaps.join(", ")))
}

/// Mean latency of new-schema statements issued while the migration runs.
fn window_mean(r: &MetricsReport) -> (f64, usize) {
    let done = r.timeline.done_at_us.unwrap_or(r.end_us);
    let v: Vec<u64> = r
        .statements
        .iter()
        .filter(|s| s.new_schema && s.at_us < done)
        .map(|s| s.latency_us)
        .collect();
    (v.iter().sum::<u64>() as f64 / v.len().max(1) as f64, v.len())
}

fn slsm_vs_bullfrog() -> Verdict {
    let run = |s| {
        let cfg = WorkloadConfig {
            strategy: s,
            rtt_ms: 11.78,
            duration_ms: 20_000,
            ..WorkloadConfig::default()
        };
        let r = run_benchmark(&cfg).expect("benchmark runs");
        assert!(r.errors.is_empty(), "{s}: {:?}", r.errors);
        window_mean(&r)
    };
    let (full, nf) = run(Strategy::SlsmFull);
    let (bull, nb) = run(Strategy::Bullfrog);
    let ok = nf > 0 && nb > 0 && full <= 0.8 * bull;
    (
        ok,
        format!(
            "slsm_full={:.2}ms ({nf} stmts) bullfrog={:.2}ms ({nb} stmts), {:.1}% lower (need >= 20%)",
            ms(full),
            ms(bull),
            100.0 * (1.0 - full / bull)
        ),
    )
}

fn single_node() -> Verdict {
    let u = mean_new(&ablation(Strategy::SlsmUserOpt, 22.33, 1));
    let b = mean_new(&ablation(Strategy::Bullfrog, 22.33, 1));
    let f = mean_new(&ablation(Strategy::SlsmFull, 22.33, 1));
    (
        u <= b && u <= f,
        format!(
            "slsm_user_opt={:.2}ms bullfrog={:.2}ms slsm_full={:.2}ms",
            ms(u),
            ms(b),
            ms(f)
        ),
    )
}

// 4. Availability gap.

fn availability() -> Verdict {
    let mut ok = true;
    for class in MigrationClass::ALL {
        for s in LAZY {
            let r = run_benchmark(&small_config(s, class)).expect("benchmark runs");
            ok &= r.timeline.registered_at_us.is_some()
                && r.timeline.first_service_at_us == r.timeline.registered_at_us;
        }
    }
    // 10k customers
    let cfg = WorkloadConfig {
        strategy: Strategy::Osc,
        cardinalities: Some(Cardinalities {
            warehouses: 1,
            districts: 10,
            customers: 1000,
            items: 100,
            orders: 10,
            min_lines: 2,
            max_lines: 4,
        }),
        sessions: 0,
        duration_ms: 0,
        migration_start_ms: 0,
        osc: lazymig::migration::OscConfig {
            batch_size: 500,
            pace_us: 1000,
        },
        finish_migration: true,
        ..WorkloadConfig::default()
    };
    let r = run_benchmark(&cfg).expect("benchmark runs");
    let t = &r.timeline;
    let (reg, first, done) = (
        t.registered_at_us.unwrap_or(0) / 1000,
        t.first_service_at_us.map(|x| x / 1000),
        t.done_at_us.map(|x| x / 1000),
    );
    ok &= first.is_some() && first == done && t.backfill_steps >= 20 && done.unwrap_or(0) >= reg + 20;
    (
        ok,
        format!(
            "lazy first-service == registration for 5 strategies x 3 classes; osc registered tick {reg}, first-service tick {first:?}, done tick {done:?}, {} backfill steps (need >= 20)",
            t.backfill_steps
        ),
    )
}

// 5. Exclusivity under concurrent transactions.

fn random_statement(class: MigrationClass, rng: &mut ChaCha8Rng) -> Statement {
    let int = Scalar::Int;
    match class {
        MigrationClass::Split => {
            let id = rng.gen_range(0..70);
            match rng.gen_range(0..6) {
                0 => Statement::select("profile", &[], Predicate::eq("id", id)),
                1 => Statement::select(
                    "balance",
                    &[],
                    Predicate::all().and("id", CmpOp::Ge, id).and("id", CmpOp::Lt, id + 5),
                ),
                2 => Statement::select("balance", &["balance"], Predicate::eq("id", id)),
                3 => Statement::update(
                    "balance",
                    Predicate::eq("id", id),
                    vec![Assignment::Set("balance".into(), int(rng.gen_range(0..1000)))],
                ),
                4 => Statement::delete("profile", Predicate::eq("id", id)),
                _ => Statement::insert(
                    "profile",
                    &[
                        ("id", int(rng.gen_range(55..90))),
                        ("name", Scalar::Text("ins".into())),
                        ("city", Scalar::Text("rome".into())),
                    ],
                ),
            }
        }
        MigrationClass::Join => {
            let (w, o, n) = (rng.gen_range(1..=2), rng.gen_range(1..=8), rng.gen_range(1..=3));
            let wo = Predicate::eq("w", w).and("o", CmpOp::Eq, o);
            match rng.gen_range(0..5) {
                0 => Statement::select("line_stock", &[], wo),
                1 => Statement::select("line_stock", &["info"], Predicate::eq("w", w)),
                2 => Statement::update(
                    "line_stock",
                    wo.and("n", CmpOp::Eq, n),
                    vec![Assignment::Set("qty".into(), int(rng.gen_range(1..9)))],
                ),
                3 => Statement::delete("line_stock", wo.and("n", CmpOp::Eq, n)),
                _ => Statement::select("stock", &[], Predicate::eq("w", w).and("item", CmpOp::Eq, o)),
            }
        }
        MigrationClass::Preaggregate => {
            let (w, o, n) = (rng.gen_range(1..=2), rng.gen_range(1..=8), rng.gen_range(1..=5));
            let wo = Predicate::eq("w", w).and("o", CmpOp::Eq, o);
            match rng.gen_range(0..6) {
                0 => Statement::select("totals", &[], wo),
                1 => Statement::select("totals", &["total"], Predicate::eq("w", w)),
                2 => Statement::update(
                    "line",
                    wo.and("n", CmpOp::Eq, n),
                    vec![Assignment::Set("qty".into(), int(rng.gen_range(1..9)))],
                ),
                3 => Statement::insert(
                    "line",
                    &[
                        ("w", int(w)),
                        ("o", int(o)),
                        ("n", int(n)),
                        ("item", int(1)),
                        ("qty", int(rng.gen_range(1..9))),
                    ],
                ),
                4 => Statement::delete("line", wo.and("n", CmpOp::Eq, n)),
                _ => Statement::select("line", &[], wo),
            }
        }
    }
}

struct Client {
    stmts: Vec<Statement>,
    step: usize,
    txn: Option<TxnId>,
    priority: Option<u64>,
}

#[derive(Default)]
struct Tally {
    committed: usize,
    checks: usize,
    violations: usize,
    repeats: usize,
    wounds: u64,
}

/// Four clients interleave statements at random, a drain step runs now and
/// then, and every commit is followed by the exclusivity check.
fn concurrent_run(class: MigrationClass, strategy: Strategy, target: usize, seed: u64, tally: &mut Tally) {
    let (mut db, h) = migration_fixture(class, strategy).expect("fixture");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut drainer = Drainer::new(
        h,
        DrainConfig {
            batch_size: 2,
            pace_us: 0,
            mode: DrainMode::for_strategy(strategy),
        },
    )
    .expect("drainer");
    let mut clients: Vec<Client> = (0..4)
        .map(|_| Client {
            stmts: Vec::new(),
            step: 0,
            txn: None,
            priority: None,
        })
        .collect();
    let mut committed = 0;
    let check = |db: &Database, tally: &mut Tally| {
        tally.checks += 1;
        tally.violations += exclusivity_violations(db, h).expect("check runs").len();
        tally.repeats += repeated_migrations(db).len();
    };
    let mut guard = 0;
    while committed < target {
        guard += 1;
        assert!(guard < 200_000, "no progress");
        if rng.gen_bool(0.03) {
            if drainer.drain_step(&mut db).is_ok() {
                check(&db, tally);
            }
            continue;
        }
        let c = clients.choose_mut(&mut rng).expect("clients");
        let txn = match c.txn {
            Some(t) => t,
            None => {
                if c.stmts.is_empty() {
                    c.stmts = (0..rng.gen_range(1..=3)).map(|_| random_statement(class, &mut rng)).collect();
                    c.priority = None;
                }
                let gw = rng.gen_range(1..=3);
                let t = match c.priority {
                    Some(p) => db.begin_with_priority(gw, p),
                    None => db.begin(gw),
                };
                c.priority = db.transaction(t).map(|x| x.priority);
                c.txn = Some(t);
                c.step = 0;
                t
            }
        };
        if c.step == c.stmts.len() {
            c.txn = None;
            match db.commit(txn) {
                Ok(_) => {
                    committed += 1;
                    c.stmts.clear();
                    check(&db, tally);
                }
                Err(e) if e.is_retryable() => {}
                Err(e) => panic!("commit: {e}"),
            }
            continue;
        }
        match db.execute(txn, &c.stmts[c.step]) {
            Ok(_) => c.step += 1,
            Err(Error::Blocked { .. }) => {}
            Err(Error::Aborted { .. }) => {
                let _ = db.abort(txn);
                c.txn = None;
            }
            // a refused statement ends the transaction
            Err(Error::Constraint(_) | Error::Unsupported(_)) => {
                let _ = db.abort(txn);
                c.txn = None;
                c.stmts.clear();
            }
            Err(e) => panic!("{strategy} {class}: {e}"),
        }
    }
    for c in &mut clients {
        if let Some(t) = c.txn.take() {
            let _ = db.abort(t);
        }
    }
    while !db.catalog.state(h).done {
        drainer.drain_step(&mut db).expect("drain");
    }
    check(&db, tally);
    tally.committed += committed;
    tally.wounds += db.wounds();
}

fn exclusivity() -> Verdict {
    let mut tally = Tally::default();
    let mut seed = 0;
    for class in MigrationClass::ALL {
        for s in LAZY {
            seed += 1;
            concurrent_run(class, s, 67, seed, &mut tally);
        }
    }
    let ok = tally.committed >= 1000 && tally.violations == 0 && tally.repeats == 0;
    (
        ok,
        format!(
            "{} committed txns, {} snapshot checks, {} wounds; {} tuples in both schemas, {} repeated migrations",
            tally.committed, tally.checks, tally.wounds, tally.violations, tally.repeats
        ),
    )
}

// 6. Fusion against lazy, statement by statement.

fn sized_fixture(class: MigrationClass, strategy: Strategy, rng: &mut ChaCha8Rng) -> (Database, MigrationHandle) {
    let (mut db, spec) = match class {
        MigrationClass::Split => (account_db(rng.gen_range(20..=200), 3, 10).unwrap(), split_spec(strategy)),
        MigrationClass::Join => (line_db(rng.gen_range(5..=30), 3, 3).unwrap(), join_spec(strategy)),
        MigrationClass::Preaggregate => (line_db(rng.gen_range(5..=30), 3, 3).unwrap(), totals_spec(strategy)),
    };
    let h = db.catalog.register_migration(spec, &mut db.cluster, 0).unwrap();
    (db, h)
}

/// Statements that take the fused path: reads and writes on new tables.
fn target_statement(class: MigrationClass, rng: &mut ChaCha8Rng) -> Statement {
    loop {
        let s = random_statement(class, rng);
        let on_target = matches!(s.table(), Some("profile" | "balance" | "line_stock" | "totals"));
        if on_target && !matches!(s, Statement::Insert { .. }) {
            return s;
        }
    }
}

fn outcome(r: lazymig::Result<Vec<lazymig::txn::StatementResult>>) -> String {
    match r {
        Ok(v) => format!("{:?} {} {}", v[0].rows, v[0].affected, v[0].cost.migrated_units),
        Err(e) => format!("error {e}"),
    }
}

fn fusion_equivalence() -> Verdict {
    let mut instances = 0;
    let mut mismatches = 0;
    let mut fused = 0;
    let mut migrating = 0;
    for (lazy, fusion) in [
        (Strategy::SlsmBasic, Strategy::SlsmUserOpt),
        (Strategy::SlsmMigOpt, Strategy::SlsmFull),
    ] {
        for class in MigrationClass::ALL {
            for seed in 0..3 {
                let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
                let (mut a, _) = sized_fixture(class, lazy, &mut rng.clone());
                let (mut b, _) = sized_fixture(class, fusion, &mut rng);
                for _ in 0..30 {
                    let stmt = target_statement(class, &mut rng);
                    let gw = rng.gen_range(1..=3);
                    let ra = run_txn(&mut a, gw, std::slice::from_ref(&stmt));
                    let rb = run_txn(&mut b, gw, std::slice::from_ref(&stmt));
                    if let Ok(v) = &rb {
                        fused += usize::from(v[0].cost.fused);
                        migrating += usize::from(v[0].cost.migrated_units > 0);
                    }
                    instances += 1;
                    if outcome(ra) != outcome(rb) || a.cluster.dump() != b.cluster.dump() {
                        mismatches += 1;
                    }
                }
            }
        }
    }
    (
        instances >= 500 && mismatches == 0 && migrating > 0,
        format!(
            "{instances} instances ({fused} fused, {migrating} migrating), {mismatches} differing results or snapshots"
        ),
    )
}

// 7. Confluence.

fn confluence() -> Verdict {
    let mut ok = true;
    let mut notes = Vec::new();
    for class in MigrationClass::ALL {
        let reference = confluent_snapshot(Strategy::Osc, class, 2000);
        let rows = reference.lines().count();
        let mut same = 0;
        for s in Strategy::ALL.into_iter().skip(1) {
            if confluent_snapshot(s, class, 2000) == reference {
                same += 1;
            } else {
                ok = false;
            }
        }
        ok &= rows > 0;
        notes.push(format!("{class}: {rows} rows, {same}/5 match osc"));
    }
    (ok, notes.join("; "))
}

// 9. Determinism.

fn determinism() -> Verdict {
    let cfg = WorkloadConfig {
        duration_ms: 5_000,
        migration_start_ms: 1_000,
        ..WorkloadConfig::default()
    };
    let files = ["txns.csv", "statements.csv", "tps.csv", "progress.csv", "timeline.csv"];
    let read = || {
        let dir = tempfile::tempdir().unwrap();
        export_report(&run_benchmark(&cfg).unwrap(), dir.path()).unwrap();
        files
            .iter()
            .map(|f| fs::read(dir.path().join(f)).unwrap())
            .collect::<Vec<_>>()
    };
    let (a, b) = (read(), read());
    let bytes: usize = a.iter().map(Vec::len).sum();
    (a == b, format!("{} CSVs, {bytes} bytes, identical: {}", files.len(), a == b))
}

fn main() -> ExitCode {
    type Criterion = (&'static str, fn() -> Verdict, Option<u64>);
    let criteria: [Criterion; 9] = [
        ("1 hop table", hop_table, Some(1)),
        ("2 ablation ordering at 22.33ms", ablation_ordering, Some(60)),
        ("3 slsm_full vs bullfrog at 11.78ms", slsm_vs_bullfrog, None),
        ("4 availability gap", availability, None),
        ("5 exclusivity", exclusivity, Some(120)),
        ("6 fusion equivalence", fusion_equivalence, Some(60)),
        ("7 confluence", confluence, Some(180)),
        ("8 single node", single_node, None),
        ("9 determinism", determinism, None),
    ];
    let mut failed = 0;
    for (name, f, limit) in criteria {
        let t = Instant::now();
        let mut v = f();
        if let Some(secs) = limit {
            v = check_runtime(v, t.elapsed(), Duration::from_secs(secs));
        }
        println!("{} criterion {name}: {}", if v.0 { "PASS" } else { "FAIL" }, v.1);
        failed += usize::from(!v.0);
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
