//! Eager migration through `delete_only` and `write_only` states with a
//! watermark-ordered backfill, and propagation of old-schema writes.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::catalog::{Migration, MigrationHandle, OscState};
use crate::error::Result;
use crate::kvstore::{table_start, Key, Scalar};
use crate::txn::sched::{BackgroundTask, BgAction};
use crate::txn::{Change, Database, LockMode, Output, Phase, Statement, StatementResult, StmtCtx};

use super::{availability_probe, collect_units, derive, dim_row, plan_batch, unit_target_key};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Propagation {
    /// Only deletions reach the new schema.
    DeletesOnly,
    /// New-schema rows of every touched unit are recomputed; `mark` records
    /// the unit as migrated.
    Recompute { mark: bool },
}

/// Bring the new schema in line with old-schema `changes`.
pub(crate) fn propagate(
    db: &mut Database,
    ctx: &mut StmtCtx,
    m: &Migration,
    changes: &[Change],
    how: Propagation,
) -> Result<()> {
    let gw = ctx.gateway;
    if m.unit_arity == m.driving.pk.len() {
        for c in changes {
            if how == Propagation::DeletesOnly && c.after.is_some() {
                continue;
            }
            let before = match &c.before {
                Some(r) => derive_single(db, ctx, m, r)?,
                None => Vec::new(),
            };
            let after = match &c.after {
                Some(r) => derive_single(db, ctx, m, r)?,
                None => Vec::new(),
            };
            let after_keys: BTreeSet<Key> = after.iter().map(|(t, r)| m.targets[*t].row_key(r)).collect();
            for (t, r) in &before {
                let key = m.targets[*t].row_key(r);
                if !after_keys.contains(&key) && db.exists(ctx, &key, LockMode::Exclusive)? {
                    db.write(ctx, key, None, Phase::Usr, gw, "mirror delete")?;
                }
            }
            for (t, r) in after {
                let key = m.targets[t].row_key(&r);
                db.lock_point(ctx, &key, LockMode::Exclusive)?;
                db.write(ctx, key, Some(r), Phase::Usr, gw, "mirror write")?;
            }
        }
        return Ok(());
    }
    let mut groups: BTreeSet<Vec<Scalar>> = BTreeSet::new();
    for c in changes {
        if how == Propagation::DeletesOnly && c.after.is_some() {
            continue;
        }
        for r in c.before.iter().chain(c.after.iter()) {
            groups.insert(m.unit_of_driving_row(r));
        }
    }
    for g in groups {
        match how {
            Propagation::DeletesOnly => {
                for ti in 0..m.targets.len() {
                    let key = unit_target_key(m, ti, &g).expect("aggregate key is the group");
                    if db.exists(ctx, &key, LockMode::Exclusive)? {
                        db.write(ctx, key, None, Phase::Usr, gw, "mirror delete")?;
                    }
                }
            }
            Propagation::Recompute { mark } => recompute_group(db, ctx, m, &g, mark)?,
        }
    }
    Ok(())
}

fn derive_single(
    db: &mut Database,
    ctx: &mut StmtCtx,
    m: &Migration,
    row: &[Scalar],
) -> Result<Vec<(usize, Vec<Scalar>)>> {
    let gw = ctx.gateway;
    let dim = dim_row(db, ctx, m, row, gw)?;
    derive(m, &[row.to_vec()], dim.as_deref())
}

/// Recompute the aggregate rows of one group from its current rows.
fn recompute_group(db: &mut Database, ctx: &mut StmtCtx, m: &Migration, group: &[Scalar], mark: bool) -> Result<()> {
    let gw = ctx.gateway;
    let ukey = m.unit_key(group);
    let end = ukey.prefix_end();
    let units = collect_units(db, ctx, m, &ukey, &end, LockMode::Exclusive, Phase::Mig)?;
    let node = db.cluster.leaseholder(&ukey);
    let marked = units.iter().any(|u| u.marked);
    let rows: Vec<Vec<Scalar>> = units.into_iter().flat_map(|u| u.rows).collect();
    let derived = derive(m, &rows, None)?;
    for ti in 0..m.targets.len() {
        let key = unit_target_key(m, ti, group).expect("aggregate key is the group");
        match derived.iter().find(|(t, _)| *t == ti) {
            Some((_, r)) => {
                db.lock_point(ctx, &key, LockMode::Exclusive)?;
                db.write(ctx, key, Some(r.clone()), Phase::Mig, node, "maintain aggregate")?;
            }
            None => {
                if db.exists(ctx, &key, LockMode::Exclusive)? {
                    db.write(ctx, key, None, Phase::Mig, node, "maintain aggregate")?;
                }
            }
        }
    }
    if mark && !marked {
        db.write(ctx, ukey.marker(), Some(Vec::new()), Phase::Mig, gw, "mark source")?;
        ctx.migrated_units.push(ukey);
    }
    Ok(())
}

/// Recompute the new-schema rows of every unit in `[start, end)`.
pub(crate) fn backfill(db: &mut Database, ctx: &mut StmtCtx, m: &Migration, start: &Key, end: &Key) -> Result<Output> {
    ctx.touch(Phase::Mig);
    let units = collect_units(db, ctx, m, start, end, LockMode::Shared, Phase::Mig)?;
    let mut affected = 0;
    for u in units {
        if u.rows.is_empty() {
            continue;
        }
        let dim = dim_row(db, ctx, m, &u.rows[0], u.node)?;
        for (ti, row) in derive(m, &u.rows, dim.as_deref())? {
            let key = m.targets[ti].row_key(&row);
            db.lock_point(ctx, &key, LockMode::Exclusive)?;
            db.write(ctx, key, Some(row), Phase::Mig, u.node, "backfill")?;
        }
        affected += 1;
    }
    Ok(Output {
        rows: Vec::new(),
        affected,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct OscConfig {
    /// Units per backfill transaction.
    pub batch_size: usize,
    /// Pause between steps, in microseconds.
    pub pace_us: u64,
}

impl Default for OscConfig {
    fn default() -> Self {
        OscConfig {
            batch_size: 500,
            pace_us: 1000,
        }
    }
}

/// Background task driving one OSC migration to `public`.
#[derive(Debug, Clone)]
pub struct OscDriver {
    handle: MigrationHandle,
    cfg: OscConfig,
    pending_end: Option<Key>,
}

impl OscDriver {
    pub fn new(handle: MigrationHandle, cfg: OscConfig) -> Self {
        OscDriver {
            handle,
            cfg,
            pending_end: None,
        }
    }

    /// Advance by one step outside any scheduler: a state transition or one
    /// backfill batch in its own transaction. Returns the new state.
    pub fn osc_step(&mut self, db: &mut Database) -> Result<OscState> {
        match self.next_action(db)? {
            BgAction::Run(stmt) => {
                let gateway = db.cluster.nodes()[0];
                let txn = db.begin(gateway);
                match db.execute(txn, &stmt) {
                    Ok(r) => {
                        db.commit(txn)?;
                        self.on_commit(db, &r);
                    }
                    Err(e) => {
                        db.abort(txn)?;
                        return Err(e);
                    }
                }
            }
            BgAction::Sleep(_) | BgAction::Done => {}
        }
        Ok(db.catalog.state(self.handle).osc_state)
    }
}

impl BackgroundTask for OscDriver {
    fn name(&self) -> String {
        "backfill".into()
    }

    fn pace_us(&self) -> u64 {
        self.cfg.pace_us
    }

    fn next_action(&mut self, db: &mut Database) -> Result<BgAction> {
        let h = self.handle;
        let state = db.catalog.state(h).osc_state;
        match state {
            OscState::Absent => {
                db.catalog.state_mut(h).advance_osc(OscState::DeleteOnly);
                Ok(BgAction::Sleep(self.cfg.pace_us))
            }
            OscState::DeleteOnly => {
                db.catalog.state_mut(h).advance_osc(OscState::WriteOnly);
                Ok(BgAction::Sleep(self.cfg.pace_us))
            }
            OscState::WriteOnly => {
                let m = db.catalog.migration(h).clone();
                let from = db
                    .catalog
                    .state(h)
                    .backfill_watermark
                    .clone()
                    .unwrap_or_else(|| table_start(m.driving.id));
                let (units, end) = plan_batch(db, &m, &from, self.cfg.batch_size.max(1), false)?;
                if units == 0 {
                    let now = db.now();
                    let st = db.catalog.state_mut(h);
                    st.advance_osc(OscState::Public);
                    st.done = true;
                    st.done_at = Some(now);
                    availability_probe(db, h)?;
                    return Ok(BgAction::Done);
                }
                self.pending_end = Some(end.clone());
                Ok(BgAction::Run(Statement::Backfill {
                    migration: h,
                    start: from,
                    end,
                }))
            }
            OscState::Public => Ok(BgAction::Done),
        }
    }

    fn on_commit(&mut self, db: &mut Database, _result: &StatementResult) {
        let st = db.catalog.state_mut(self.handle);
        st.backfill_watermark = self.pending_end.take();
        st.backfill_steps += 1;
    }

    fn cursor(&self, db: &Database) -> Option<Key> {
        db.catalog.state(self.handle).backfill_watermark.clone()
    }
}
