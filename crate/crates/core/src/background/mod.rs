//! Background drain for lazy migrations: small migration transactions over
//! the units that no user statement has migrated yet.

use serde::{Deserialize, Serialize};

use crate::catalog::{MigrationHandle, Strategy};
use crate::error::{Error, Result};
use crate::kvstore::{decode_key, table_end, table_start, Key, KeyTail};
use crate::migration::plan_batch;
use crate::txn::sched::{BackgroundTask, BgAction};
use crate::txn::{Database, Statement, StatementResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DrainMode {
    /// Resume from a cursor and visit only pending units.
    Cursor,
    /// Visit every unit position present when the drain started, migrated
    /// or not.
    WholeTable,
}

impl DrainMode {
    pub fn for_strategy(s: Strategy) -> Self {
        if s == Strategy::Bullfrog {
            DrainMode::WholeTable
        } else {
            DrainMode::Cursor
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct DrainConfig {
    /// Units per drain transaction.
    pub batch_size: usize,
    /// Pause after each committed batch, in microseconds.
    pub pace_us: u64,
    pub mode: DrainMode,
}

impl Default for DrainConfig {
    fn default() -> Self {
        DrainConfig {
            batch_size: 128,
            pace_us: 1000,
            mode: DrainMode::Cursor,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct DrainStats {
    pub steps: u64,
    pub rows_migrated: u64,
    /// Unit positions covered by the batches issued so far.
    pub scanned_positions: u64,
}

#[derive(Debug, Clone)]
struct Planned {
    end: Key,
    positions: u64,
}

/// Drain session for one lazy migration.
#[derive(Debug, Clone)]
pub struct Drainer {
    handle: MigrationHandle,
    cfg: DrainConfig,
    stats: DrainStats,
    positions: Option<Vec<Key>>,
    next_pos: usize,
    pending: Option<Planned>,
}

impl Drainer {
    pub fn new(handle: MigrationHandle, cfg: DrainConfig) -> Result<Self> {
        if cfg.batch_size == 0 {
            return Err(Error::Config("drain batch_size must be at least 1".into()));
        }
        Ok(Drainer {
            handle,
            cfg,
            stats: DrainStats::default(),
            positions: None,
            next_pos: 0,
            pending: None,
        })
    }

    pub fn stats(&self) -> DrainStats {
        self.stats
    }

    fn finish(&self, db: &mut Database) {
        let now = db.now();
        let st = db.catalog.state_mut(self.handle);
        st.done = true;
        st.done_at.get_or_insert(now);
    }

    fn plan_cursor(&mut self, db: &mut Database) -> Result<BgAction> {
        let m = db.catalog.migration(self.handle).clone();
        let start = table_start(m.driving.id);
        let mut from = db.catalog.state(self.handle).drain_cursor.clone().unwrap_or_else(|| start.clone());
        let mut planned = plan_batch(db, &m, &from, self.cfg.batch_size, true)?;
        if planned.0 == 0 && from != start {
            // a full pass only ends at the table start
            from = start;
            planned = plan_batch(db, &m, &from, self.cfg.batch_size, true)?;
        }
        let (units, end) = planned;
        if units == 0 {
            self.finish(db);
            return Ok(BgAction::Done);
        }
        self.pending = Some(Planned {
            end: end.clone(),
            positions: units as u64,
        });
        Ok(BgAction::Run(Statement::MigrateRange {
            migration: self.handle,
            start: from,
            end,
        }))
    }

    fn plan_whole_table(&mut self, db: &mut Database) -> Result<BgAction> {
        let m = db.catalog.migration(self.handle).clone();
        let positions = match &mut self.positions {
            Some(p) => p,
            None => {
                let mut p: Vec<Key> = Vec::new();
                for k in db.cluster.peek_keys(&table_start(m.driving.id), &table_end(m.driving.id)) {
                    let d = decode_key(k)?;
                    if d.tail != KeyTail::None || d.values.len() != m.driving.pk.len() {
                        continue;
                    }
                    let u = m.unit_key(&d.values[..m.unit_arity]);
                    if p.last() != Some(&u) {
                        p.push(u);
                    }
                }
                self.positions.insert(p)
            }
        };
        let batch = &positions[self.next_pos.min(positions.len())..];
        let batch = &batch[..batch.len().min(self.cfg.batch_size)];
        let (Some(first), Some(last)) = (batch.first(), batch.last()) else {
            self.finish(db);
            return Ok(BgAction::Done);
        };
        let (start, end) = (first.clone(), last.prefix_end());
        self.pending = Some(Planned {
            end: end.clone(),
            positions: batch.len() as u64,
        });
        Ok(BgAction::Run(Statement::MigrateRange {
            migration: self.handle,
            start,
            end,
        }))
    }

    /// One drain transaction outside any scheduler. Returns the number of
    /// units it migrated; 0 once the migration is done.
    pub fn drain_step(&mut self, db: &mut Database) -> Result<usize> {
        let BgAction::Run(stmt) = self.next_action(db)? else {
            return Ok(0);
        };
        let txn = db.begin(db.cluster.nodes()[0]);
        match db.execute(txn, &stmt) {
            Ok(r) => {
                db.commit(txn)?;
                self.on_commit(db, &r);
                Ok(r.affected)
            }
            Err(e) => {
                db.abort(txn)?;
                self.pending = None;
                Err(e)
            }
        }
    }
}

impl BackgroundTask for Drainer {
    fn name(&self) -> String {
        "drain".into()
    }

    fn pace_us(&self) -> u64 {
        self.cfg.pace_us
    }

    fn next_action(&mut self, db: &mut Database) -> Result<BgAction> {
        let m = db.catalog.migration(self.handle).clone();
        if !m.strategy().is_lazy() {
            return Err(Error::Unsupported("drain of an eager migration".into()));
        }
        if db.catalog.state(self.handle).done {
            return Ok(BgAction::Done);
        }
        match self.cfg.mode {
            DrainMode::Cursor => self.plan_cursor(db),
            DrainMode::WholeTable => self.plan_whole_table(db),
        }
    }

    fn on_commit(&mut self, db: &mut Database, result: &StatementResult) {
        let Some(p) = self.pending.take() else { return };
        self.stats.steps += 1;
        self.stats.rows_migrated += result.affected as u64;
        self.stats.scanned_positions += p.positions;
        if self.cfg.mode == DrainMode::WholeTable {
            self.next_pos += p.positions as usize;
        }
        db.catalog.state_mut(self.handle).drain_cursor = Some(p.end);
    }

    fn cursor(&self, db: &Database) -> Option<Key> {
        db.catalog.state(self.handle).drain_cursor.clone()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DrainReport {
    /// Units migrated by each step, ending with the step that found nothing.
    pub step_counts: Vec<usize>,
    pub stats: DrainStats,
    pub done_at: Option<u64>,
}

/// Drain without concurrent load until a full pass finds nothing, advancing
/// the clock by each step's cost plus the pace.
pub fn drain_until_done(db: &mut Database, handle: MigrationHandle, cfg: DrainConfig) -> Result<DrainReport> {
    let mut d = Drainer::new(handle, cfg)?;
    let mut step_counts = Vec::new();
    loop {
        let BgAction::Run(stmt) = d.next_action(db)? else {
            step_counts.push(0);
            break;
        };
        let txn = db.begin(db.cluster.nodes()[0]);
        let r = match db.execute(txn, &stmt) {
            Ok(r) => r,
            Err(e) => {
                db.abort(txn)?;
                return Err(e);
            }
        };
        db.commit(txn)?;
        d.on_commit(db, &r);
        step_counts.push(r.affected);
        db.set_now(db.now() + r.cost.elapsed_us + cfg.pace_us);
    }
    Ok(DrainReport {
        step_counts,
        stats: d.stats(),
        done_at: db.catalog.state(handle).done_at,
    })
}
