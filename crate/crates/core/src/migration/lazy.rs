//! Lazy migration: a migration step scoped by the rewritten user predicate,
//! followed by (or fused with) the user statement.

use std::collections::BTreeMap;

use crate::catalog::{BoundPredicate, Migration, MigrationClass, Predicate, TableDescriptor};
use crate::error::{Error, Result};
use crate::kvstore::{decode_key, Key, KeyTail, NodeId, Scalar};
use crate::txn::{apply_set, build_row, project, Database, LockMode, Output, Phase, Statement, StmtCtx};

use super::derive;

/// One unit of migration as read from the old keyspace.
#[derive(Debug, Clone)]
pub(crate) struct Unit {
    pub values: Vec<Scalar>,
    pub key: Key,
    pub rows: Vec<Vec<Scalar>>,
    pub marked: bool,
    /// Leaseholder that served the unit.
    pub node: NodeId,
}

impl Unit {
    fn pending(&self) -> bool {
        !self.marked && !self.rows.is_empty()
    }
}

/// Scan `[start, end)` of the driving table and group what it holds by unit.
pub(crate) fn collect_units(
    db: &mut Database,
    ctx: &mut StmtCtx,
    m: &Migration,
    start: &Key,
    end: &Key,
    mode: LockMode,
    phase: Phase,
) -> Result<Vec<Unit>> {
    let gw = ctx.gateway;
    let rows = db.scan(ctx, start, end, mode, phase, gw, "old scan")?;
    let mut units: Vec<Unit> = Vec::new();
    for r in rows {
        let d = decode_key(&r.key)?;
        if d.table != m.driving.id || d.values.len() < m.unit_arity {
            continue;
        }
        let is_row = d.tail == KeyTail::None && d.values.len() == m.driving.pk.len();
        let is_marker = d.tail == KeyTail::Marker && d.values.len() == m.unit_arity;
        if !is_row && !is_marker {
            continue;
        }
        let uv = &d.values[..m.unit_arity];
        if units.last().is_none_or(|u| u.values != uv) {
            units.push(Unit {
                values: uv.to_vec(),
                key: m.unit_key(uv),
                rows: Vec::new(),
                marked: false,
                node: r.node,
            });
        }
        let u = units.last_mut().expect("just pushed");
        if is_row {
            u.rows.push(r.row);
        } else {
            u.marked = true;
        }
    }
    Ok(units)
}

/// Dimension row joined with a driving row, looked up from `from`.
pub(crate) fn dim_row(
    db: &mut Database,
    ctx: &mut StmtCtx,
    m: &Migration,
    row: &[Scalar],
    from: NodeId,
) -> Result<Option<Vec<Scalar>>> {
    let Some(dim) = &m.dimension else {
        return Ok(None);
    };
    let pk: Vec<Scalar> = m.join_pairs.iter().map(|(d, _)| row[*d].clone()).collect();
    let key = dim.key_for_pk(&pk);
    db.read(ctx, &key, LockMode::Shared, Phase::Mig, from, "dimension lookup")
}

/// Move or mark one pending unit and insert its derived rows.
fn migrate_unit(
    db: &mut Database,
    ctx: &mut StmtCtx,
    m: &Migration,
    u: &Unit,
    dim: Option<Vec<Scalar>>,
) -> Result<Vec<(usize, Vec<Scalar>)>> {
    let gw = ctx.gateway;
    let end = u.key.prefix_end();
    db.lock(ctx, &u.key, &end, LockMode::Exclusive)?;
    let rows = if m.unit_arity < m.driving.pk.len() {
        // a group may extend past the interval it was found in
        collect_units(db, ctx, m, &u.key, &end, LockMode::Exclusive, Phase::Mig)?
            .into_iter()
            .flat_map(|g| g.rows)
            .collect()
    } else {
        u.rows.clone()
    };
    let derived = derive(m, &rows, dim.as_deref())?;
    for (ti, row) in &derived {
        let key = m.targets[*ti].row_key(row);
        db.lock_point(ctx, &key, LockMode::Exclusive)?;
        db.write(ctx, key, Some(row.clone()), Phase::Mig, u.node, "migrate insert")?;
    }
    if m.class().moves_source() {
        for r in &rows {
            db.write(ctx, m.driving.row_key(r), None, Phase::Mig, gw, "consume source")?;
        }
    } else {
        db.write(ctx, u.key.marker(), Some(Vec::new()), Phase::Mig, gw, "mark source")?;
    }
    ctx.migrated_units.push(u.key.clone());
    Ok(derived)
}

/// Migrate every pending unit in `[start, end)` selected by the driving and
/// dimension predicates. Returns the inserted target rows.
fn migrate_scope(
    db: &mut Database,
    ctx: &mut StmtCtx,
    m: &Migration,
    pdrv: &BoundPredicate,
    pdim: Option<&BoundPredicate>,
    start: &Key,
    end: &Key,
) -> Result<Vec<(usize, Vec<Scalar>)>> {
    ctx.touch(Phase::Mig);
    let units = collect_units(db, ctx, m, start, end, LockMode::Shared, Phase::Mig)?;
    let mut out = Vec::new();
    for u in units {
        if !u.pending() || !u.rows.iter().any(|r| pdrv.matches(r)) {
            continue;
        }
        let dim = if m.dimension.is_some() {
            let d = dim_row(db, ctx, m, &u.rows[0], u.node)?;
            if let Some(pd) = pdim.filter(|p| !p.conds.is_empty()) {
                if !d.as_ref().is_some_and(|d| pd.matches(d)) {
                    continue;
                }
            }
            d
        } else {
            None
        };
        out.extend(migrate_unit(db, ctx, m, &u, dim)?);
    }
    Ok(out)
}

/// Migrate the pending units in scope of `pred` over `target`.
fn migration_phase(
    db: &mut Database,
    ctx: &mut StmtCtx,
    m: &Migration,
    target: &TableDescriptor,
    pred: &Predicate,
) -> Result<Vec<(usize, Vec<Scalar>)>> {
    // conditions on aggregate outputs are dropped, widening the scope
    let (rewritten, _dropped) = m.filter.rewrite_widened(&target.name, pred)?;
    let on = |name: &str| rewritten.get(name).cloned().unwrap_or_default();
    let pdrv = on(&m.driving.name).bind(&m.driving)?;
    let pdim = match &m.dimension {
        Some(d) => Some(on(&d.name).bind(d)?),
        None => None,
    };
    let (start, end) = pdrv.key_bounds(&m.driving);
    migrate_scope(db, ctx, m, &pdrv, pdim.as_ref(), &start, &end)
}

/// Drain step body: migrate every pending unit in `[start, end)`.
pub(crate) fn migrate_range(
    db: &mut Database,
    ctx: &mut StmtCtx,
    m: &Migration,
    start: &Key,
    end: &Key,
) -> Result<Output> {
    let before = ctx.migrated_units.len();
    migrate_scope(db, ctx, m, &BoundPredicate::default(), None, start, end)?;
    Ok(Output {
        rows: Vec::new(),
        affected: ctx.migrated_units.len() - before,
    })
}

/// When the predicate fixes the whole target key and that row already
/// exists, its unit is migrated and the migration step can be skipped.
fn point_hit(db: &mut Database, ctx: &mut StmtCtx, target: &TableDescriptor, pred: &Predicate) -> Result<bool> {
    let mut pk = Vec::with_capacity(target.pk.len());
    for &c in &target.pk {
        let col = &target.columns[c];
        match pred
            .conds
            .iter()
            .find(|k| k.column == col.name && k.op == crate::catalog::CmpOp::Eq)
        {
            Some(k) if k.value.column_type() == col.ty => pk.push(k.value.clone()),
            _ => return Ok(false),
        }
    }
    let key = target.key_for_pk(&pk);
    let gw = ctx.gateway;
    Ok(db
        .read(ctx, &key, LockMode::Shared, Phase::Usr, gw, "point probe")?
        .is_some())
}

fn reject_aggregate_writes(m: &Migration, stmt: &Statement) -> Result<()> {
    if m.class() == MigrationClass::Preaggregate && stmt.is_write() {
        return Err(Error::Unsupported(format!(
            "writes to aggregate table {}",
            m.targets[0].name
        )));
    }
    Ok(())
}

/// Migration step, then the user statement on the new table.
pub(crate) fn run_lazy(
    db: &mut Database,
    ctx: &mut StmtCtx,
    m: &Migration,
    ti: usize,
    stmt: &Statement,
) -> Result<Output> {
    reject_aggregate_writes(m, stmt)?;
    let target = m.targets[ti].clone();
    let pred = stmt.predicate().expect("select, update or delete");
    if !point_hit(db, ctx, &target, pred)? {
        migration_phase(db, ctx, m, &target, pred)?;
    }
    Ok(db.exec_plain(ctx, &target, stmt)?.0)
}

/// One plan: scan the new table, migrate the scope with a row-returning
/// insert, merge both streams by primary key and apply the user operator.
pub(crate) fn run_fusion(
    db: &mut Database,
    ctx: &mut StmtCtx,
    m: &Migration,
    ti: usize,
    stmt: &Statement,
) -> Result<Output> {
    reject_aggregate_writes(m, stmt)?;
    ctx.fused = true;
    let target = m.targets[ti].clone();
    let pred = stmt.predicate().expect("select, update or delete");
    if point_hit(db, ctx, &target, pred)? {
        return Ok(db.exec_plain(ctx, &target, stmt)?.0);
    }
    let bound = pred.bind(&target)?;
    let mode = if stmt.is_write() {
        LockMode::Exclusive
    } else {
        LockMode::Shared
    };
    let mut merged: BTreeMap<Vec<Scalar>, (Key, Vec<Scalar>)> = db
        .select_rows(ctx, &target, &bound, mode, Phase::Usr)?
        .into_iter()
        .map(|r| (target.pk_values(&r.row), (r.key, r.row)))
        .collect();
    for (tj, row) in migration_phase(db, ctx, m, &target, pred)? {
        if tj == ti && bound.matches(&row) {
            merged.insert(target.pk_values(&row), (target.row_key(&row), row));
        }
    }
    let gw = ctx.gateway;
    let mut out = Output::default();
    match stmt {
        Statement::Select { columns, .. } => {
            for (_, (_, row)) in merged {
                out.rows.push(project(&target, columns, &row)?);
            }
        }
        Statement::Update { set, .. } => {
            for (_, (key, row)) in merged {
                let new = apply_set(&target, &row, set)?;
                db.lock_point(ctx, &key, LockMode::Exclusive)?;
                db.write(ctx, key, Some(new.clone()), Phase::Usr, gw, "update")?;
                out.rows.push(new);
            }
        }
        Statement::Delete { .. } => {
            for (_, (key, row)) in merged {
                db.lock_point(ctx, &key, LockMode::Exclusive)?;
                db.write(ctx, key, None, Phase::Usr, gw, "delete")?;
                out.rows.push(row);
            }
        }
        _ => unreachable!("inserts take the direct path"),
    }
    out.affected = out.rows.len();
    Ok(out)
}

/// Insert into the new schema only, after checking that the key is not
/// still waiting in the old schema. A split insert also writes the sibling
/// table's share of the row.
pub(crate) fn run_insert_direct(
    db: &mut Database,
    ctx: &mut StmtCtx,
    m: &Migration,
    ti: usize,
    stmt: &Statement,
) -> Result<Output> {
    reject_aggregate_writes(m, stmt)?;
    let Statement::Insert { columns, values, .. } = stmt else {
        unreachable!("insert")
    };
    let target = &m.targets[ti];
    let row = build_row(target, columns, values)?;
    let unit = m.unit_of_target_row(ti, &row);
    let ukey = m.unit_key(&unit);
    let probe = collect_units(db, ctx, m, &ukey, &ukey.prefix_end(), LockMode::Exclusive, Phase::Usr)?;
    if probe.iter().any(Unit::pending) {
        return Err(Error::Constraint(format!(
            "key {ukey} still exists in {}",
            m.driving.name
        )));
    }
    let mut rows = vec![(ti, row.clone())];
    if m.class() == MigrationClass::Split {
        for (tj, sib) in m.targets.iter().enumerate() {
            if tj == ti {
                continue;
            }
            let srow = sib
                .columns
                .iter()
                .zip(&m.target_columns[tj])
                .map(|(c, o)| match m.target_columns[ti].iter().position(|x| x == o) {
                    Some(p) => row[p].clone(),
                    None => Scalar::zero(c.ty),
                })
                .collect();
            rows.push((tj, srow));
        }
    }
    let gw = ctx.gateway;
    for (tj, r) in rows {
        let t = &m.targets[tj];
        let key = t.row_key(&r);
        if db.exists(ctx, &key, LockMode::Exclusive)? {
            return Err(Error::Constraint(format!("duplicate key {key} in {}", t.name)));
        }
        db.write(ctx, key, Some(r), Phase::Usr, gw, "insert")?;
    }
    Ok(Output {
        rows: vec![row],
        affected: 1,
    })
}
