//! Interval lock table with shared and exclusive modes.

use crate::kvstore::Key;

use super::TxnId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum LockMode {
    Shared,
    Exclusive,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LockEntry {
    pub txn: TxnId,
    pub start: Key,
    pub end: Key,
    pub mode: LockMode,
}

impl LockEntry {
    fn overlaps(&self, start: &Key, end: &Key) -> bool {
        self.start < *end && *start < self.end
    }

    fn covers(&self, start: &Key, end: &Key) -> bool {
        self.start <= *start && *end <= self.end
    }
}

/// Locks held by active transactions. Conflict resolution is left to the
/// caller, which knows transaction priorities.
#[derive(Debug, Clone, Default)]
pub struct LockTable {
    entries: Vec<LockEntry>,
}

impl LockTable {
    /// Holders other than `txn` whose locks conflict with the request.
    pub fn conflicts(&self, txn: TxnId, start: &Key, end: &Key, mode: LockMode) -> Vec<TxnId> {
        let mut out: Vec<TxnId> = self
            .entries
            .iter()
            .filter(|e| {
                e.txn != txn
                    && (mode == LockMode::Exclusive || e.mode == LockMode::Exclusive)
                    && e.overlaps(start, end)
            })
            .map(|e| e.txn)
            .collect();
        out.sort_unstable();
        out.dedup();
        out
    }

    /// Whether `txn` holds a lock of at least `mode` covering `[start, end)`.
    pub fn holds(&self, txn: TxnId, start: &Key, end: &Key, mode: LockMode) -> bool {
        self.entries
            .iter()
            .any(|e| e.txn == txn && e.mode >= mode && e.covers(start, end))
    }

    /// Record a lock; the caller has resolved conflicts.
    pub fn grant(&mut self, txn: TxnId, start: Key, end: Key, mode: LockMode) {
        if self.holds(txn, &start, &end, mode) {
            return;
        }
        self.entries.push(LockEntry {
            txn,
            start,
            end,
            mode,
        });
    }

    pub fn release_all(&mut self, txn: TxnId) {
        self.entries.retain(|e| e.txn != txn);
    }

    pub fn held_by(&self, txn: TxnId) -> impl Iterator<Item = &LockEntry> {
        self.entries.iter().filter(move |e| e.txn == txn)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}
