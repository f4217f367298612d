//! Strategy executors: lazy migration (optionally fused with the user
//! statement), direct inserts, and eager backfill through OSC states.

mod lazy;
mod osc;

use std::collections::{BTreeMap, BTreeSet};

pub use osc::{OscConfig, OscDriver};

pub(crate) use lazy::{collect_units, dim_row};

use crate::catalog::{
    Catalog, ColumnOrigin, Migration, MigrationClass, MigrationHandle, OscState, Predicate, TableRole,
};
use crate::error::{Error, Result};
use crate::kvstore::{decode_key, dump_rows, table_end, table_start, Key, KeyTail, RowValue, Scalar};
use crate::txn::{Database, Output, Statement, StmtCtx};

/// Whether statements on the new tables of `h` are served.
pub fn new_schema_live(catalog: &Catalog, h: MigrationHandle) -> bool {
    catalog.migration(h).strategy().is_lazy() || catalog.state(h).osc_state == OscState::Public
}

/// Route a statement according to the migration role of its table.
pub(crate) fn dispatch(db: &mut Database, ctx: &mut StmtCtx, stmt: &Statement) -> Result<Output> {
    match stmt {
        Statement::MigrateRange { migration, start, end } => {
            let m = db.catalog.migration(*migration).clone();
            if !m.strategy().is_lazy() {
                return Err(Error::Unsupported("drain of an eager migration".into()));
            }
            return lazy::migrate_range(db, ctx, &m, start, end);
        }
        Statement::Backfill { migration, start, end } => {
            let m = db.catalog.migration(*migration).clone();
            return osc::backfill(db, ctx, &m, start, end);
        }
        _ => {}
    }
    let name = stmt.table().expect("user statement");
    let desc = db.catalog.table(name)?.clone();
    match db.catalog.role_of(desc.id) {
        TableRole::Plain => Ok(db.exec_plain(ctx, &desc, stmt)?.0),
        TableRole::Target(h, ti) => {
            let m = db.catalog.migration(h).clone();
            if !m.strategy().is_lazy() {
                // a finished OSC migration reports its targets as plain
                return Err(Error::NotYetPublic(desc.name.clone()));
            }
            match stmt {
                Statement::Insert { .. } => lazy::run_insert_direct(db, ctx, &m, ti, stmt),
                _ if m.strategy().fuses() => lazy::run_fusion(db, ctx, &m, ti, stmt),
                _ => lazy::run_lazy(db, ctx, &m, ti, stmt),
            }
        }
        TableRole::Driving(h) => {
            let m = db.catalog.migration(h).clone();
            let state = db.catalog.state(h).osc_state;
            let lazy = m.strategy().is_lazy();
            if m.class().replaces_source() && (lazy || state == OscState::Public) {
                return Err(Error::ObsoleteSchema(desc.name.clone()));
            }
            let (out, changes) = db.exec_plain(ctx, &desc, stmt)?;
            if changes.is_empty() {
                return Ok(out);
            }
            let how = if lazy {
                osc::Propagation::Recompute { mark: true }
            } else {
                match state {
                    OscState::Absent => return Ok(out),
                    OscState::DeleteOnly => osc::Propagation::DeletesOnly,
                    OscState::WriteOnly | OscState::Public => osc::Propagation::Recompute { mark: false },
                }
            };
            osc::propagate(db, ctx, &m, &changes, how)?;
            Ok(out)
        }
        TableRole::Dimension(h) => {
            let m = db.catalog.migration(h).clone();
            check_dimension_write(&m, stmt)?;
            Ok(db.exec_plain(ctx, &desc, stmt)?.0)
        }
    }
}

/// Writes that would change join results are refused while the join is
/// being migrated.
fn check_dimension_write(m: &Migration, stmt: &Statement) -> Result<()> {
    let dim = m.dimension.as_ref().expect("dimension role");
    let refuse = |what: &str| {
        Err(Error::Unsupported(format!(
            "{what} on {} while it feeds a join migration",
            dim.name
        )))
    };
    match stmt {
        Statement::Select { .. } => Ok(()),
        Statement::Insert { .. } => refuse("insert"),
        Statement::Delete { .. } => refuse("delete"),
        Statement::Update { set, .. } => {
            let contributing = m.contributing_dimension_columns();
            for a in set {
                if contributing.contains(&dim.column_index(a.column())?) {
                    return refuse(&format!("update of {}", a.column()));
                }
            }
            Ok(())
        }
        _ => Ok(()),
    }
}

/// Target rows derived from one unit: its driving rows and, for joins, the
/// matching dimension row.
pub(crate) fn derive(
    m: &Migration,
    rows: &[Vec<Scalar>],
    dim: Option<&[Scalar]>,
) -> Result<Vec<(usize, Vec<Scalar>)>> {
    let Some(first) = rows.first() else {
        return Ok(Vec::new());
    };
    if m.class() == MigrationClass::Join && dim.is_none() {
        return Ok(Vec::new());
    }
    let mut out = Vec::with_capacity(m.targets.len());
    for (ti, (target, origins)) in m.targets.iter().zip(&m.target_columns).enumerate() {
        let mut row = Vec::with_capacity(origins.len());
        for (col, origin) in target.columns.iter().zip(origins) {
            row.push(match origin {
                ColumnOrigin::Driving(i) => first[*i].clone(),
                ColumnOrigin::Dimension(i) => dim.expect("join has dimension row")[*i].clone(),
                ColumnOrigin::SumOfDriving(i) => {
                    let mut acc = Scalar::zero(col.ty);
                    for r in rows {
                        acc = acc.checked_add(&r[*i])?;
                    }
                    acc
                }
            });
        }
        out.push((ti, row));
    }
    Ok(out)
}

/// Key of target `ti`'s row for a unit, when the target key consists only of
/// unit columns (aggregates).
pub(crate) fn unit_target_key(m: &Migration, ti: usize, unit: &[Scalar]) -> Option<Key> {
    let target = &m.targets[ti];
    let unit_cols = &m.driving.pk[..m.unit_arity];
    let pk = target
        .pk
        .iter()
        .map(|&c| match m.target_columns[ti][c] {
            ColumnOrigin::Driving(d) => unit_cols.iter().position(|&u| u == d).map(|p| unit[p].clone()),
            _ => None,
        })
        .collect::<Option<Vec<_>>>()?;
    Some(target.key_for_pk(&pk))
}

/// Plan the next batch of at most `limit` units starting at `from`.
/// Returns the number of units found and the exclusive end of the batch.
pub(crate) fn plan_batch(
    db: &Database,
    m: &Migration,
    from: &Key,
    limit: usize,
    pending_only: bool,
) -> Result<(usize, Key)> {
    let end = table_end(m.driving.id);
    let mut count = 0;
    let mut current: Option<(Vec<Scalar>, bool, bool)> = None;
    let done_unit = |u: &(Vec<Scalar>, bool, bool)| u.1 && !(pending_only && u.2);
    for key in db.cluster.peek_keys(from, &end) {
        let d = decode_key(key)?;
        if d.table != m.driving.id || d.values.len() < m.unit_arity {
            continue;
        }
        let is_row = d.tail == KeyTail::None && d.values.len() == m.driving.pk.len();
        let is_marker = d.tail == KeyTail::Marker && d.values.len() == m.unit_arity;
        if !is_row && !is_marker {
            continue;
        }
        let uv = &d.values[..m.unit_arity];
        if current.as_ref().is_some_and(|c| c.0 != uv) {
            let finished = current.take().expect("checked");
            if done_unit(&finished) {
                count += 1;
                if count == limit {
                    return Ok((count, m.unit_key(&finished.0).prefix_end()));
                }
            }
        }
        let c = current.get_or_insert_with(|| (uv.to_vec(), false, false));
        if is_row {
            c.1 = true;
        } else {
            c.2 = true;
        }
    }
    if let Some(last) = current {
        if done_unit(&last) {
            count += 1;
        }
    }
    Ok((count, end))
}

/// Run one statement on the first new table that selects nothing; on
/// success record the first-service time if not yet known.
pub fn availability_probe(db: &mut Database, h: MigrationHandle) -> Result<bool> {
    let m = db.catalog.migration(h).clone();
    let target = &m.targets[0];
    let col = &target.columns[target.pk[0]];
    let sentinel = match col.ty {
        crate::kvstore::ColumnType::Int => Scalar::Int(i64::MIN),
        crate::kvstore::ColumnType::Decimal => Scalar::Decimal(crate::kvstore::Decimal(i64::MIN)),
        crate::kvstore::ColumnType::Text => Scalar::Text("\u{0}".into()),
    };
    let gateway = db.cluster.nodes()[0];
    let txn = db.begin(gateway);
    let stmt = Statement::select(&target.name, &[], Predicate::eq(col.name.clone(), sentinel));
    match db.execute(txn, &stmt) {
        Ok(_) => {
            db.commit(txn)?;
            let now = db.now();
            db.catalog.state_mut(h).first_service_at.get_or_insert(now);
            Ok(true)
        }
        Err(Error::NotYetPublic(_)) | Err(Error::Blocked { .. }) => {
            db.abort(txn)?;
            Ok(false)
        }
        Err(e) => {
            db.abort(txn)?;
            Err(e)
        }
    }
}

/// Committed rows of every new table of `h`, keyed as if laid out plainly so
/// that snapshots compare across key layouts.
pub fn new_table_snapshot(db: &Database, h: MigrationHandle) -> String {
    let m = db.catalog.migration(h);
    let mut rows: BTreeMap<Key, RowValue> = BTreeMap::new();
    for t in &m.targets {
        let (start, end) = t.keyspace();
        for (k, v) in db.cluster.raw().range(start..end) {
            if decode_key(k).is_ok_and(|d| t.owns(&d)) {
                rows.insert(t.canonical_key(&v.0), v.clone());
            }
        }
    }
    dump_rows(rows.iter())
}

/// Per-unit view of committed old-schema state.
#[derive(Debug, Default, Clone, Copy)]
struct OldUnit {
    has_rows: bool,
    marked: bool,
}

type OldUnits = BTreeMap<Vec<Scalar>, (OldUnit, Vec<Vec<Scalar>>)>;

/// Committed old-schema units by unit value, with their rows.
fn old_units(db: &Database, m: &Migration) -> Result<OldUnits> {
    let mut old = OldUnits::new();
    for (k, v) in db.cluster.raw().range(table_start(m.driving.id)..table_end(m.driving.id)) {
        let d = decode_key(k)?;
        if d.values.len() < m.unit_arity {
            continue;
        }
        let uv = d.values[..m.unit_arity].to_vec();
        if d.tail == KeyTail::None && d.values.len() == m.driving.pk.len() {
            let e = old.entry(uv).or_default();
            e.0.has_rows = true;
            e.1.push(v.0.clone());
        } else if d.tail == KeyTail::Marker && d.values.len() == m.unit_arity {
            old.entry(uv).or_default().0.marked = true;
        }
    }
    Ok(old)
}

/// Units that have at least one row in the new tables.
fn new_units(db: &Database, m: &Migration) -> BTreeSet<Vec<Scalar>> {
    let mut out = BTreeSet::new();
    for (ti, t) in m.targets.iter().enumerate() {
        let (start, end) = t.keyspace();
        for (k, v) in db.cluster.raw().range(start..end) {
            if decode_key(k).is_ok_and(|d| t.owns(&d)) {
                out.insert(m.unit_of_target_row(ti, &v.0));
            }
        }
    }
    out
}

/// Logical tuples visible in both schemas: a unit with rows in the new
/// tables whose old rows are still unmarked. Empty when exclusive.
pub fn exclusivity_violations(db: &Database, h: MigrationHandle) -> Result<Vec<String>> {
    let m = db.catalog.migration(h);
    let old = old_units(db, m)?;
    Ok(new_units(db, m)
        .into_iter()
        .filter(|u| old.get(u).is_some_and(|(o, _)| o.has_rows && !o.marked))
        .map(|u| format!("unit {u:?} of {} visible in both schemas", m.driving.name))
        .collect())
}

/// Units marked as migrated whose derived rows are absent from the new
/// tables. A delete through the new schema produces one legitimately, so
/// this only means lost data for workloads without such deletes.
pub fn orphaned_units(db: &Database, h: MigrationHandle) -> Result<Vec<String>> {
    let m = db.catalog.migration(h);
    let new = new_units(db, m);
    let mut out = Vec::new();
    for (u, (o, rows)) in old_units(db, m)? {
        if !(o.has_rows && o.marked) || new.contains(&u) {
            continue;
        }
        let dim = match &m.dimension {
            Some(dim) => {
                let pk: Vec<Scalar> = m.join_pairs.iter().map(|(d, _)| rows[0][*d].clone()).collect();
                db.cluster.raw().get(&dim.key_for_pk(&pk)).map(|r| r.0.clone())
            }
            None => None,
        };
        if !derive(m, &rows, dim.as_deref())?.is_empty() {
            out.push(format!("unit {u:?} of {} marked but absent from new schema", m.driving.name));
        }
    }
    Ok(out)
}

/// Unit keys migrated by more than one committed transaction.
pub fn repeated_migrations(db: &Database) -> Vec<(Key, u32)> {
    db.migration_events()
        .iter()
        .filter(|(_, &n)| n > 1)
        .map(|(k, &n)| (k.clone(), n))
        .collect()
}
