//! Transaction engine: strict two-phase locking with wound-wait, statement
//! execution, and round-trip accounting on a virtual clock.
//!
//! A statement is charged one round trip per distinct pair of nodes that
//! exchange data while it runs. Its simulated duration is its service time
//! plus `round_trips * per_hop_latency`.

mod exec;
mod lock;
pub mod sched;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

pub use exec::{Assignment, Change, Statement};
pub(crate) use exec::{apply_set, build_row, project, Output};
pub use lock::{LockEntry, LockMode, LockTable};

use crate::catalog::Catalog;
use crate::error::{AbortReason, Error, Result};
use crate::kvstore::{Cluster, Key, LockToken, NodeId, RowValue, Scalar};

pub type TxnId = u64;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TxnState {
    Active,
    Committed,
    Aborted(AbortReason),
}

/// One remote request/response between two distinct nodes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HopEntry {
    pub from: NodeId,
    pub to: NodeId,
    pub purpose: &'static str,
}

#[derive(Debug, Clone)]
pub struct Transaction {
    pub id: TxnId,
    pub gateway: NodeId,
    /// Wound-wait priority; lower is older. Kept across restarts.
    pub priority: u64,
    pub state: TxnState,
    pub hop_ledger: Vec<HopEntry>,
    pub start: u64,
    pub end: Option<u64>,
    pub service_us: u64,
    writes: BTreeMap<Key, Option<RowValue>>,
    migrated_units: Vec<Key>,
}

impl Transaction {
    pub fn round_trips(&self) -> u64 {
        self.hop_ledger.len() as u64
    }
}

/// Simulated service time of statement work, in microseconds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ServiceCosts {
    /// Fixed cost of each executed phase (migration part or user part).
    pub statement_us: u64,
    pub row_read_us: u64,
    pub row_write_us: u64,
    /// Extra fixed cost of a phase that touches prefixed keys.
    pub prefix_stmt_us: u64,
    /// Extra per-row cost in such a phase.
    pub prefix_row_us: u64,
}

impl Default for ServiceCosts {
    fn default() -> Self {
        ServiceCosts {
            statement_us: 4000,
            row_read_us: 20,
            row_write_us: 50,
            prefix_stmt_us: 500,
            prefix_row_us: 30,
        }
    }
}

impl ServiceCosts {
    pub fn zero() -> Self {
        ServiceCosts {
            statement_us: 0,
            row_read_us: 0,
            row_write_us: 0,
            prefix_stmt_us: 0,
            prefix_row_us: 0,
        }
    }

    fn phase(&self, p: &PhaseCost) -> u64 {
        if !p.used {
            return 0;
        }
        let rows = p.rows_read + p.rows_written;
        let mut us = self.statement_us + p.rows_read * self.row_read_us + p.rows_written * self.row_write_us;
        if p.prefixed {
            us += self.prefix_stmt_us + rows * self.prefix_row_us;
        }
        us
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct StatementCost {
    pub round_trips: u64,
    pub service_us: u64,
    pub elapsed_us: u64,
    /// Migration and user work overlapped.
    pub fused: bool,
    /// Units migrated by this statement.
    pub migrated_units: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct StatementResult {
    pub rows: Vec<Vec<Scalar>>,
    pub affected: usize,
    pub cost: StatementCost,
}

#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct PhaseCost {
    pub used: bool,
    pub rows_read: u64,
    pub rows_written: u64,
    pub prefixed: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Phase {
    Mig,
    Usr,
}

/// Per-statement execution state. Writes stay local until the statement
/// succeeds, so a blocked statement can be retried from scratch.
#[derive(Debug)]
pub(crate) struct StmtCtx {
    pub txn: TxnId,
    pub gateway: NodeId,
    pub fused: bool,
    pub migrated_units: Vec<Key>,
    local: BTreeMap<Key, Option<RowValue>>,
    pairs: BTreeSet<(NodeId, NodeId)>,
    ledger: Vec<HopEntry>,
    mig: PhaseCost,
    usr: PhaseCost,
}

impl StmtCtx {
    fn new(txn: TxnId, gateway: NodeId) -> Self {
        StmtCtx {
            txn,
            gateway,
            fused: false,
            migrated_units: Vec::new(),
            local: BTreeMap::new(),
            pairs: BTreeSet::new(),
            ledger: Vec::new(),
            mig: PhaseCost::default(),
            usr: PhaseCost::default(),
        }
    }

    fn phase(&mut self, p: Phase) -> &mut PhaseCost {
        let c = match p {
            Phase::Mig => &mut self.mig,
            Phase::Usr => &mut self.usr,
        };
        c.used = true;
        c
    }

    /// Mark a phase as executed even if it touched no rows.
    pub fn touch(&mut self, p: Phase) {
        self.phase(p);
    }
}

/// A row returned by [`Database::scan`], with the node that served it.
#[derive(Debug, Clone)]
pub(crate) struct ScanRow {
    pub key: Key,
    pub row: Vec<Scalar>,
    pub node: NodeId,
}

/// The simulated database: storage, catalog, lock manager and clock.
#[derive(Debug, Clone)]
pub struct Database {
    pub cluster: Cluster,
    pub catalog: Catalog,
    costs: ServiceCosts,
    locks: LockTable,
    txns: BTreeMap<TxnId, Transaction>,
    next_txn: TxnId,
    now: u64,
    migration_events: BTreeMap<Key, u32>,
    wounds: u64,
}

impl Database {
    pub fn new(cluster: Cluster, catalog: Catalog, costs: ServiceCosts) -> Self {
        Database {
            cluster,
            catalog,
            costs,
            locks: LockTable::default(),
            txns: BTreeMap::new(),
            next_txn: 1,
            now: 0,
            migration_events: BTreeMap::new(),
            wounds: 0,
        }
    }

    pub fn costs(&self) -> ServiceCosts {
        self.costs
    }

    pub fn set_costs(&mut self, costs: ServiceCosts) {
        self.costs = costs;
    }

    /// Current time in microseconds.
    pub fn now(&self) -> u64 {
        self.now
    }

    pub fn set_now(&mut self, now: u64) {
        self.now = now;
    }

    pub fn wounds(&self) -> u64 {
        self.wounds
    }

    /// How many committed transactions migrated each unit key.
    pub fn migration_events(&self) -> &BTreeMap<Key, u32> {
        &self.migration_events
    }

    pub fn begin(&mut self, gateway: NodeId) -> TxnId {
        let id = self.next_txn;
        self.begin_with_priority(gateway, id)
    }

    /// Begin a restarted transaction that keeps an earlier priority.
    pub fn begin_with_priority(&mut self, gateway: NodeId, priority: u64) -> TxnId {
        let id = self.next_txn;
        self.next_txn += 1;
        self.txns.insert(
            id,
            Transaction {
                id,
                gateway,
                priority,
                state: TxnState::Active,
                hop_ledger: Vec::new(),
                start: self.now,
                end: None,
                service_us: 0,
                writes: BTreeMap::new(),
                migrated_units: Vec::new(),
            },
        );
        id
    }

    pub fn transaction(&self, txn: TxnId) -> Option<&Transaction> {
        self.txns.get(&txn)
    }

    pub fn active_transactions(&self) -> usize {
        self.txns.len()
    }

    pub fn locks_of(&self, txn: TxnId) -> Vec<LockEntry> {
        self.locks.held_by(txn).cloned().collect()
    }

    fn check_active(&self, txn: TxnId) -> Result<&Transaction> {
        let t = self.txns.get(&txn).ok_or(Error::TxnNotActive(txn))?;
        match t.state {
            TxnState::Active => Ok(t),
            TxnState::Aborted(reason) => Err(Error::Aborted { txn, reason }),
            TxnState::Committed => Err(Error::TxnNotActive(txn)),
        }
    }

    /// Run one statement inside `txn`.
    pub fn execute(&mut self, txn: TxnId, stmt: &Statement) -> Result<StatementResult> {
        let gateway = self.check_active(txn)?.gateway;
        let mut ctx = StmtCtx::new(txn, gateway);
        let out = crate::migration::dispatch(self, &mut ctx, stmt)?;
        let mig = self.costs.phase(&ctx.mig);
        let usr = self.costs.phase(&ctx.usr);
        let service_us = if ctx.fused { mig.max(usr) } else { mig + usr };
        let round_trips = ctx.pairs.len() as u64;
        let cost = StatementCost {
            round_trips,
            service_us,
            elapsed_us: service_us + round_trips * self.cluster.per_hop_latency_us(),
            fused: ctx.fused,
            migrated_units: ctx.migrated_units.len() as u64,
        };
        let t = self.txns.get_mut(&txn).expect("checked active");
        t.writes.append(&mut ctx.local);
        t.hop_ledger.append(&mut ctx.ledger);
        t.migrated_units.append(&mut ctx.migrated_units);
        t.service_us += service_us;
        Ok(StatementResult {
            rows: out.rows,
            affected: out.affected,
            cost,
        })
    }

    /// Publish the write set at the leaseholders and release all locks.
    pub fn commit(&mut self, txn: TxnId) -> Result<Transaction> {
        let mut t = self.txns.remove(&txn).ok_or(Error::TxnNotActive(txn))?;
        if let TxnState::Aborted(reason) = t.state {
            return Err(Error::Aborted { txn, reason });
        }
        let token = LockToken::new(txn);
        for (key, value) in std::mem::take(&mut t.writes) {
            let node = self.cluster.leaseholder(&key);
            match value {
                Some(row) => self.cluster.put(node, key, row, &token)?,
                None => {
                    self.cluster.delete(node, &key, &token)?;
                }
            }
        }
        for unit in std::mem::take(&mut t.migrated_units) {
            *self.migration_events.entry(unit).or_default() += 1;
        }
        self.locks.release_all(txn);
        t.state = TxnState::Committed;
        t.end = Some(self.now);
        Ok(t)
    }

    /// Discard the write set and release all locks. Aborting a transaction
    /// that was already wounded is fine.
    pub fn abort(&mut self, txn: TxnId) -> Result<Transaction> {
        let mut t = self.txns.remove(&txn).ok_or(Error::TxnNotActive(txn))?;
        self.locks.release_all(txn);
        t.writes.clear();
        t.migrated_units.clear();
        if t.state == TxnState::Active {
            t.state = TxnState::Aborted(AbortReason::User);
        }
        t.end = Some(self.now);
        Ok(t)
    }

    fn wound(&mut self, victim: TxnId, by: TxnId) {
        if let Some(t) = self.txns.get_mut(&victim) {
            t.state = TxnState::Aborted(AbortReason::Wounded { by });
            t.writes.clear();
            t.migrated_units.clear();
            self.wounds += 1;
        }
        self.locks.release_all(victim);
    }

    /// Acquire a lock under wound-wait: an older requester wounds younger
    /// holders, a younger requester is told to wait.
    pub(crate) fn lock(&mut self, ctx: &StmtCtx, start: &Key, end: &Key, mode: LockMode) -> Result<()> {
        let holders = self.locks.conflicts(ctx.txn, start, end, mode);
        if !holders.is_empty() {
            let me = self.txns[&ctx.txn].priority;
            if let Some(&older) = holders
                .iter()
                .find(|h| self.txns.get(h).is_some_and(|t| t.priority < me))
            {
                return Err(Error::Blocked {
                    txn: ctx.txn,
                    holder: older,
                });
            }
            for h in holders {
                self.wound(h, ctx.txn);
            }
        }
        self.locks.grant(ctx.txn, start.clone(), end.clone(), mode);
        Ok(())
    }

    pub(crate) fn lock_point(&mut self, ctx: &StmtCtx, key: &Key, mode: LockMode) -> Result<()> {
        self.lock(ctx, key, &key.successor(), mode)
    }

    fn audit_lock(&self, ctx: &StmtCtx, start: &Key, end: &Key, mode: LockMode) -> Result<()> {
        if cfg!(debug_assertions) && !self.locks.holds(ctx.txn, start, end, mode) {
            return Err(Error::LockNotHeld {
                txn: ctx.txn,
                key: start.to_string(),
            });
        }
        Ok(())
    }

    /// Record a round trip between `from` and `to` unless this statement
    /// already exchanged data between them.
    pub(crate) fn charge_hop(&self, ctx: &mut StmtCtx, from: NodeId, to: NodeId, purpose: &'static str) {
        if from == to {
            return;
        }
        if ctx.pairs.insert((from.min(to), from.max(to))) {
            ctx.ledger.push(HopEntry { from, to, purpose });
        }
    }

    fn note_prefixed(&self, ctx: &mut StmtCtx, key: &Key, phase: Phase) {
        if key
            .table_id()
            .is_some_and(|t| self.cluster.colocation_arity(t).is_some())
        {
            ctx.phase(phase).prefixed = true;
        }
    }

    /// Value of `key` as seen by the statement: own writes first, then
    /// committed state at the leaseholder.
    fn view(&self, ctx: &StmtCtx, key: &Key) -> Result<Option<RowValue>> {
        if let Some(v) = ctx.local.get(key) {
            return Ok(v.clone());
        }
        if let Some(v) = self.txns[&ctx.txn].writes.get(key) {
            return Ok(v.clone());
        }
        let node = self.cluster.leaseholder(key);
        Ok(self.cluster.get(node, key, &LockToken::new(ctx.txn))?.cloned())
    }

    /// Locked point read issued from `from`.
    pub(crate) fn read(
        &mut self,
        ctx: &mut StmtCtx,
        key: &Key,
        mode: LockMode,
        phase: Phase,
        from: NodeId,
        purpose: &'static str,
    ) -> Result<Option<Vec<Scalar>>> {
        self.lock_point(ctx, key, mode)?;
        self.audit_lock(ctx, key, &key.successor(), mode)?;
        let node = self.cluster.leaseholder(key);
        self.charge_hop(ctx, from, node, purpose);
        self.note_prefixed(ctx, key, phase);
        let v = self.view(ctx, key)?;
        if v.is_some() {
            ctx.phase(phase).rows_read += 1;
        }
        Ok(v.map(|r| r.0))
    }

    /// Locked ordered scan of `[start, end)` issued from `from`; each range
    /// piece is served by its leaseholder.
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn scan(
        &mut self,
        ctx: &mut StmtCtx,
        start: &Key,
        end: &Key,
        mode: LockMode,
        phase: Phase,
        from: NodeId,
        purpose: &'static str,
    ) -> Result<Vec<ScanRow>> {
        ctx.phase(phase);
        if start >= end {
            return Ok(Vec::new());
        }
        self.lock(ctx, start, end, mode)?;
        self.audit_lock(ctx, start, end, mode)?;
        self.note_prefixed(ctx, start, phase);
        let token = LockToken::new(ctx.txn);
        let mut out = Vec::new();
        for seg in self.cluster.segments(start, end) {
            self.charge_hop(ctx, from, seg.leaseholder, purpose);
            let mut rows: BTreeMap<Key, RowValue> = self
                .cluster
                .scan(seg.leaseholder, &seg.start, &seg.end, &token)?
                .into_iter()
                .collect();
            let own = &self.txns[&ctx.txn].writes;
            for overlay in [own, &ctx.local] {
                for (k, v) in overlay.range(seg.start.clone()..seg.end.clone()) {
                    match v {
                        Some(r) => rows.insert(k.clone(), r.clone()),
                        None => rows.remove(k),
                    };
                }
            }
            for (key, row) in rows {
                out.push(ScanRow {
                    key,
                    row: row.0,
                    node: seg.leaseholder,
                });
            }
        }
        ctx.phase(phase).rows_read += out.len() as u64;
        Ok(out)
    }

    /// Buffer a write (or delete, for `None`) of a key the statement has
    /// locked exclusively, shipped from `from` to the key's leaseholder.
    pub(crate) fn write(
        &mut self,
        ctx: &mut StmtCtx,
        key: Key,
        value: Option<Vec<Scalar>>,
        phase: Phase,
        from: NodeId,
        purpose: &'static str,
    ) -> Result<()> {
        self.audit_lock(ctx, &key, &key.successor(), LockMode::Exclusive)?;
        let node = self.cluster.leaseholder(&key);
        self.charge_hop(ctx, from, node, purpose);
        self.note_prefixed(ctx, &key, phase);
        ctx.phase(phase).rows_written += 1;
        ctx.local.insert(key, value.map(RowValue));
        Ok(())
    }

    /// Whether `key` currently holds a row in the statement's view. Takes the
    /// given lock; charges nothing.
    pub(crate) fn exists(&mut self, ctx: &StmtCtx, key: &Key, mode: LockMode) -> Result<bool> {
        self.lock_point(ctx, key, mode)?;
        Ok(self.view(ctx, key)?.is_some())
    }
}
