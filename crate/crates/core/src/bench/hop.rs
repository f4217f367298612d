//! Round trips of one lazy point select under forced node placements.
//!
//! The fixture is a `user` table (id 51) split into `user_rights` (71) and
//! `user_contact` (72). The statement is
//! `SELECT id, rights FROM user_rights WHERE id = 1001` with row 1001 not
//! yet migrated.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::Serialize;

use crate::catalog::{
    Catalog, ColumnDef, ColumnSource, MigrationClass, MigrationSpec, NewColumnSpec, NewTableSpec, Predicate,
    SourceColumn, Strategy,
};
use crate::error::{Error, Result};
use crate::kvstore::{encode_key, table_end, table_start, ClockMode, Cluster, ColumnType, NodeId, RowValue, Scalar};
use crate::txn::{Database, HopEntry, ServiceCosts, Statement};

pub const USER: u32 = 51;
pub const USER_RIGHTS: u32 = 71;
pub const USER_CONTACT: u32 = 72;
pub const PROBE_ID: i64 = 1001;

/// Which of gateway, old-data leaseholder and new-data leaseholder share a
/// node. Nodes outside the named set are distinct from it and each other.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum Category {
    /// gateway, old and new on one node
    GatewayOldNew,
    GatewayOld,
    GatewayNew,
    OldNew,
    /// three distinct nodes
    Disjoint,
}

impl Category {
    pub const ALL: [Category; 5] = [
        Category::GatewayOldNew,
        Category::GatewayOld,
        Category::GatewayNew,
        Category::OldNew,
        Category::Disjoint,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Category::GatewayOldNew => "gateway_old_new",
            Category::GatewayOld => "gateway_old",
            Category::GatewayNew => "gateway_new",
            Category::OldNew => "old_new",
            Category::Disjoint => "none",
        }
    }

    /// (gateway, old leaseholder, new leaseholder).
    pub fn nodes(self) -> (NodeId, NodeId, NodeId) {
        match self {
            Category::GatewayOldNew => (1, 1, 1),
            Category::GatewayOld => (1, 1, 2),
            Category::GatewayNew => (1, 2, 1),
            Category::OldNew => (3, 1, 1),
            Category::Disjoint => (3, 1, 2),
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Category {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Category::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown category `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HopAudit {
    pub category: Category,
    pub strategy: Strategy,
    pub round_trips: u64,
    pub service_us: u64,
    pub elapsed_us: u64,
    pub fused: bool,
    pub rows: Vec<Vec<Scalar>>,
    pub ledger: Vec<HopEntry>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum HopOutcome {
    Measured(HopAudit),
    /// New rows share the old row's range, so old and new leaseholders
    /// cannot differ.
    Impossible,
}

impl HopOutcome {
    pub fn round_trips(&self) -> Option<u64> {
        match self {
            HopOutcome::Measured(a) => Some(a.round_trips),
            HopOutcome::Impossible => None,
        }
    }
}

fn split_spec(strategy: Strategy) -> MigrationSpec {
    let col = |name: &str| NewColumnSpec {
        name: name.into(),
        source: ColumnSource::Column(SourceColumn {
            table: "user".into(),
            column: name.into(),
        }),
    };
    MigrationSpec {
        class: MigrationClass::Split,
        strategy,
        old_tables: vec!["user".into()],
        new_tables: vec![
            NewTableSpec {
                name: "user_rights".into(),
                id: Some(USER_RIGHTS),
                columns: vec![col("id"), col("rights")],
                pk: vec!["id".into()],
            },
            NewTableSpec {
                name: "user_contact".into(),
                id: Some(USER_CONTACT),
                columns: vec![col("id"), col("name"), col("email")],
                pk: vec!["id".into()],
            },
        ],
        join_keys: Vec::new(),
        group_keys: Vec::new(),
    }
}

fn lease(cluster: &mut Cluster, start: crate::kvstore::Key, node: NodeId) -> Result<()> {
    let id = cluster.split_range(start)?;
    let replicas = cluster.nodes().to_vec();
    cluster.set_replicas(id, replicas, node)
}

/// Database with users 0..3000 in ranges split at 1000 and 2000, the split
/// migration registered, and placement forced into `category`.
pub fn hop_fixture(category: Category, strategy: Strategy, costs: ServiceCosts) -> Result<Option<Database>> {
    let (_, o, n) = category.nodes();
    let mut cluster = Cluster::new(3, 1.0, ClockMode::Virtual)?;
    let mut catalog = Catalog::new();
    let user = catalog.create_table_with_id(
        USER,
        "user",
        vec![
            ColumnDef::new("id", ColumnType::Int),
            ColumnDef::new("name", ColumnType::Text),
            ColumnDef::new("rights", ColumnType::Text),
            ColumnDef::new("email", ColumnType::Text),
        ],
        &["id"],
    )?;
    for id in 0..3000i64 {
        let row = vec![
            Scalar::Int(id),
            Scalar::Text(format!("user{id}")),
            Scalar::Text(if id % 2 == 0 { "rw" } else { "r" }.into()),
            Scalar::Text(format!("user{id}@example.com")),
        ];
        cluster.load_row(user.row_key(&row), RowValue(row));
    }
    // one range per table, then the user table cut at 1000 and 2000
    for t in [USER, USER_RIGHTS, USER_CONTACT] {
        cluster.split_range(table_end(t))?;
        lease(&mut cluster, table_start(t), 3)?;
    }
    for b in [1000, 2000] {
        lease(&mut cluster, encode_key(USER, &[Scalar::Int(b)]), 3)?;
    }
    let h = catalog.register_migration(split_spec(strategy), &mut cluster, 0)?;
    let old_key = encode_key(USER, &[Scalar::Int(PROBE_ID)]);
    let old_range = cluster.route(&old_key).0;
    let start = cluster.range_of(&old_key).start.clone();
    lease(&mut cluster, start, o)?;
    for target in &catalog.migration(h).targets {
        let new_key = target.key_for_pk(&[Scalar::Int(PROBE_ID)]);
        if cluster.route(&new_key).0 == old_range {
            if n != o {
                return Ok(None);
            }
        } else {
            let start = cluster.range_of(&new_key).start.clone();
            lease(&mut cluster, start, n)?;
        }
    }
    Ok(Some(Database::new(cluster, catalog, costs)))
}

/// Run the probe select once and report its cost.
pub fn hop_audit_with_costs(category: Category, strategy: Strategy, costs: ServiceCosts) -> Result<HopOutcome> {
    if !strategy.is_lazy() {
        return Err(Error::Config(format!("hop audit needs a lazy strategy, not {strategy}")));
    }
    let Some(mut db) = hop_fixture(category, strategy, costs)? else {
        return Ok(HopOutcome::Impossible);
    };
    let (g, _, _) = category.nodes();
    let txn = db.begin(g);
    let stmt = Statement::select("user_rights", &["id", "rights"], Predicate::eq("id", PROBE_ID));
    let r = db.execute(txn, &stmt)?;
    let t = db.commit(txn)?;
    Ok(HopOutcome::Measured(HopAudit {
        category,
        strategy,
        round_trips: t.round_trips(),
        service_us: r.cost.service_us,
        elapsed_us: r.cost.elapsed_us,
        fused: r.cost.fused,
        rows: r.rows,
        ledger: t.hop_ledger,
    }))
}

/// Round trips with service costs switched off.
pub fn hop_audit(category: Category, strategy: Strategy) -> Result<HopOutcome> {
    hop_audit_with_costs(category, strategy, ServiceCosts::zero())
}

/// Round trips the complexity table gives for one lazy select; `None` where
/// colocation makes the placement impossible.
pub fn expected_round_trips(category: Category, strategy: Strategy) -> Option<u64> {
    let colocated = strategy.colocates();
    match category {
        Category::GatewayOldNew => Some(0),
        Category::OldNew => Some(1),
        Category::GatewayOld | Category::GatewayNew if !colocated => Some(1),
        Category::Disjoint if !colocated => Some(3),
        _ => None,
    }
}

#[derive(Debug, Clone, Serialize)]
struct LedgerRow {
    txn_id: usize,
    strategy: String,
    category: String,
    round_trips: String,
}

/// Audit every category under each strategy and write the hop ledger CSV.
pub fn export_hop_ledger(strategies: &[Strategy], path: &Path) -> Result<Vec<(Category, Strategy, HopOutcome)>> {
    let mut out = Vec::new();
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Csv {
        path: path.into(),
        source: e,
    })?;
    let mut id = 0;
    for &s in strategies {
        for c in Category::ALL {
            let o = hop_audit(c, s)?;
            id += 1;
            let row = LedgerRow {
                txn_id: id,
                strategy: s.to_string(),
                category: c.to_string(),
                round_trips: o.round_trips().map_or("impossible".into(), |n| n.to_string()),
            };
            w.serialize(row).map_err(|e| Error::Csv {
                path: path.into(),
                source: e,
            })?;
            out.push((c, s, o));
        }
    }
    w.flush().map_err(|e| Error::Io {
        path: path.into(),
        source: e,
    })?;
    Ok(out)
}
