#![allow(dead_code)]

use lazymig::bench::{prepare_database, run_prepared, Cardinalities, Population, WorkloadConfig};
use lazymig::catalog::{
    Catalog, ColumnDef, ColumnSource, MigrationClass, MigrationHandle, MigrationSpec, NewColumnSpec, NewTableSpec,
    SourceColumn, Strategy,
};
use lazymig::kvstore::{encode_key, ClockMode, Cluster, ColumnType, Key, NodeId, RowValue, Scalar};
use lazymig::txn::{Database, ServiceCosts, Statement, StatementResult};
use lazymig::migration::{exclusivity_violations, new_table_snapshot, orphaned_units, repeated_migrations};
use lazymig::Result;

pub const LAZY: [Strategy; 5] = [
    Strategy::Bullfrog,
    Strategy::SlsmBasic,
    Strategy::SlsmMigOpt,
    Strategy::SlsmUserOpt,
    Strategy::SlsmFull,
];

pub fn tiny_card() -> Cardinalities {
    Cardinalities {
        warehouses: 1,
        districts: 3,
        customers: 20,
        items: 50,
        orders: 20,
        min_lines: 2,
        max_lines: 4,
    }
}

/// A short virtual-clock run on a small population.
pub fn small_config(strategy: Strategy, migration: MigrationClass) -> WorkloadConfig {
    WorkloadConfig {
        population: Population::Reduced,
        cardinalities: Some(tiny_card()),
        strategy,
        migration,
        duration_ms: 3_000,
        migration_start_ms: 500,
        rtt_ms: 2.0,
        sessions: 4,
        drain_batch: 16,
        osc: lazymig::migration::OscConfig {
            batch_size: 16,
            pace_us: 1000,
        },
        ..WorkloadConfig::default()
    }
}

/// Run statements in one transaction and commit it.
pub fn run_txn(db: &mut Database, gateway: NodeId, stmts: &[Statement]) -> Result<Vec<StatementResult>> {
    let txn = db.begin(gateway);
    let mut out = Vec::new();
    for s in stmts {
        match db.execute(txn, s) {
            Ok(r) => out.push(r),
            Err(e) => {
                db.abort(txn)?;
                return Err(e);
            }
        }
    }
    db.commit(txn)?;
    Ok(out)
}

pub fn col(table: &str, column: &str) -> SourceColumn {
    SourceColumn {
        table: table.into(),
        column: column.into(),
    }
}

pub fn plain(name: &str, table: &str, column: &str) -> NewColumnSpec {
    NewColumnSpec {
        name: name.into(),
        source: ColumnSource::Column(col(table, column)),
    }
}

pub fn new_table(name: &str, id: u32, columns: Vec<NewColumnSpec>, pk: &[&str]) -> NewTableSpec {
    NewTableSpec {
        name: name.into(),
        id: Some(id),
        columns,
        pk: pk.iter().map(|c| c.to_string()).collect(),
    }
}

pub const ACCOUNT: u32 = 41;
pub const PROFILE: u32 = 42;
pub const BALANCE: u32 = 43;

/// `account(id, name, balance, city)` split into `profile(id, name, city)`
/// and `balance(id, balance)`.
pub fn split_spec(strategy: Strategy) -> MigrationSpec {
    MigrationSpec {
        class: MigrationClass::Split,
        strategy,
        old_tables: vec!["account".into()],
        new_tables: vec![
            new_table(
                "profile",
                PROFILE,
                vec![
                    plain("id", "account", "id"),
                    plain("name", "account", "name"),
                    plain("city", "account", "city"),
                ],
                &["id"],
            ),
            new_table(
                "balance",
                BALANCE,
                vec![plain("id", "account", "id"), plain("balance", "account", "balance")],
                &["id"],
            ),
        ],
        join_keys: Vec::new(),
        group_keys: Vec::new(),
    }
}

pub fn account_row(id: i64) -> Vec<Scalar> {
    vec![
        Scalar::Int(id),
        Scalar::Text(format!("n{id}")),
        Scalar::Int(id * 10),
        Scalar::Text(["oslo", "lima", "pune"][(id % 3) as usize].into()),
    ]
}

/// `account` rows `0..rows` on a `nodes`-node cluster, ranges cut every
/// `chunk` ids and leased round robin.
pub fn account_db(rows: i64, nodes: usize, chunk: i64) -> Result<Database> {
    let mut cluster = Cluster::new(nodes, 1.0, ClockMode::Virtual)?;
    let mut catalog = Catalog::new();
    let t = catalog.create_table_with_id(
        ACCOUNT,
        "account",
        vec![
            ColumnDef::new("id", ColumnType::Int),
            ColumnDef::new("name", ColumnType::Text),
            ColumnDef::new("balance", ColumnType::Int),
            ColumnDef::new("city", ColumnType::Text),
        ],
        &["id"],
    )?;
    for id in 0..rows {
        let row = account_row(id);
        cluster.load_row(t.row_key(&row), RowValue(row));
    }
    let ids = cluster.nodes().to_vec();
    let mut b = 0;
    let mut i = 0;
    while b < rows {
        let r = cluster.split_range(encode_key(ACCOUNT, &[Scalar::Int(b)]))?;
        let replicas = ids.clone();
        cluster.set_replicas(r, replicas, ids[i % ids.len()])?;
        b += chunk;
        i += 1;
    }
    Ok(Database::new(cluster, catalog, ServiceCosts::default()))
}

pub fn account_migration(strategy: Strategy, rows: i64, nodes: usize) -> Result<(Database, MigrationHandle)> {
    let mut db = account_db(rows, nodes, 10)?;
    let h = db.catalog.register_migration(split_spec(strategy), &mut db.cluster, 0)?;
    Ok((db, h))
}

pub fn key_of(table: u32, id: i64) -> Key {
    encode_key(table, &[Scalar::Int(id)])
}

pub const LINE: u32 = 44;
pub const STOCK: u32 = 45;
pub const LINE_STOCK: u32 = 46;
pub const TOTALS: u32 = 47;

pub fn line_row(w: i64, o: i64, n: i64) -> Vec<Scalar> {
    vec![
        Scalar::Int(w),
        Scalar::Int(o),
        Scalar::Int(n),
        Scalar::Int((o * 7 + n * 3) % 10 + 1),
        Scalar::Int(n + o % 4),
    ]
}

/// `line(w, o, n, item, qty)` with `lines` lines for each of `orders`
/// orders in warehouses 1 and 2, and `stock(w, item, info)` for items
/// 1..=10. Ranges are cut per warehouse over `nodes` nodes.
pub fn line_db(orders: i64, lines: i64, nodes: usize) -> Result<Database> {
    let mut cluster = Cluster::new(nodes, 1.0, ClockMode::Virtual)?;
    let mut catalog = Catalog::new();
    let int = |n: &str| ColumnDef::new(n, ColumnType::Int);
    let line = catalog.create_table_with_id(
        LINE,
        "line",
        vec![int("w"), int("o"), int("n"), int("item"), int("qty")],
        &["w", "o", "n"],
    )?;
    let stock = catalog.create_table_with_id(
        STOCK,
        "stock",
        vec![int("w"), int("item"), ColumnDef::new("info", ColumnType::Text)],
        &["w", "item"],
    )?;
    for w in 1..=2 {
        for o in 1..=orders {
            for n in 1..=lines {
                let row = line_row(w, o, n);
                cluster.load_row(line.row_key(&row), RowValue(row));
            }
        }
        for item in 1..=10 {
            let row = vec![Scalar::Int(w), Scalar::Int(item), Scalar::Text(format!("s{w}-{item}"))];
            cluster.load_row(stock.row_key(&row), RowValue(row));
        }
    }
    let ids = cluster.nodes().to_vec();
    for (i, t) in [LINE, STOCK].into_iter().enumerate() {
        for w in 1..=2i64 {
            let r = cluster.split_range(encode_key(t, &[Scalar::Int(w)]))?;
            cluster.set_replicas(r, ids.clone(), ids[(i + w as usize) % ids.len()])?;
        }
    }
    Ok(Database::new(cluster, catalog, ServiceCosts::default()))
}

pub fn join_spec(strategy: Strategy) -> MigrationSpec {
    MigrationSpec {
        class: MigrationClass::Join,
        strategy,
        old_tables: vec!["line".into(), "stock".into()],
        new_tables: vec![new_table(
            "line_stock",
            LINE_STOCK,
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
    }
}

pub fn totals_spec(strategy: Strategy) -> MigrationSpec {
    MigrationSpec {
        class: MigrationClass::Preaggregate,
        strategy,
        old_tables: vec!["line".into()],
        new_tables: vec![new_table(
            "totals",
            TOTALS,
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
    }
}

/// A fixture database with `class` registered under `strategy`.
pub fn migration_fixture(class: MigrationClass, strategy: Strategy) -> Result<(Database, MigrationHandle)> {
    let (mut db, spec) = match class {
        MigrationClass::Split => (account_db(60, 3, 10)?, split_spec(strategy)),
        MigrationClass::Join => (line_db(8, 3, 3)?, join_spec(strategy)),
        MigrationClass::Preaggregate => (line_db(8, 3, 3)?, totals_spec(strategy)),
    };
    let h = db.catalog.register_migration(spec, &mut db.cluster, 0)?;
    Ok((db, h))
}

/// One session, so every strategy sees the same transaction sequence.
pub fn serial_config(strategy: Strategy, migration: MigrationClass, txns: u64) -> WorkloadConfig {
    WorkloadConfig {
        population: Population::Reduced,
        cardinalities: Some(tiny_card()),
        strategy,
        migration,
        sessions: 1,
        max_txns: Some(txns),
        duration_ms: u64::MAX / 4000,
        migration_start_ms: 2_000,
        rtt_ms: 5.0,
        drain_batch: 4,
        drain_pace_us: 200_000,
        osc: lazymig::migration::OscConfig {
            batch_size: 4,
            pace_us: 200_000,
        },
        finish_migration: true,
        ..WorkloadConfig::default()
    }
}

pub fn confluent_snapshot(strategy: Strategy, migration: MigrationClass, txns: u64) -> String {
    let cfg = serial_config(strategy, migration, txns);
    let db = prepare_database(&cfg).unwrap();
    let (report, db) = run_prepared(db, &cfg).unwrap();
    assert!(report.errors.is_empty(), "{strategy} {migration}: {:?}", report.errors);
    assert_eq!(report.committed() as u64, txns, "{strategy} {migration}");
    let h = MigrationHandle(0);
    assert!(db.catalog.state(h).done, "{strategy} {migration} not done");
    if strategy.is_lazy() {
        let v = exclusivity_violations(&db, h).unwrap();
        assert!(v.is_empty(), "{strategy} {migration}: {v:?}");
        let v = orphaned_units(&db, h).unwrap();
        assert!(v.is_empty(), "{strategy} {migration}: {v:?}");
    }
    assert!(repeated_migrations(&db).is_empty());
    new_table_snapshot(&db, h)
}
