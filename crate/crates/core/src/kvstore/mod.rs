//! Range-partitioned ordered key-value storage with leaseholder routing.
//!
//! Replication is placement metadata only: every range records its replica
//! set and leaseholder, and the single authoritative copy of the data is
//! served by the leaseholder. Reads and writes issued at any other node are
//! rejected with [`Error::RoutingViolation`].

mod key;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::ops::Bound;

use serde::{Deserialize, Serialize};

pub use key::{
    decode_key, encode_key, encode_prefixed_key, table_end, table_start, ColumnType, Decimal,
    DecodedKey, Key, KeyTail, Scalar, TableId,
};

use crate::error::{Error, Result};
use crate::txn::TxnId;

pub type NodeId = u32;
pub type RangeId = u64;

/// Column values of one stored row, in descriptor order.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct RowValue(pub Vec<Scalar>);

impl RowValue {
    pub fn new(values: Vec<Scalar>) -> Self {
        RowValue(values)
    }

    pub fn values(&self) -> &[Scalar] {
        &self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ClockMode {
    #[default]
    Virtual,
    Wall,
}

impl std::str::FromStr for ClockMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "virtual" => Ok(ClockMode::Virtual),
            "wall" => Ok(ClockMode::Wall),
            _ => Err(Error::Config(format!("unknown clock `{s}`"))),
        }
    }
}

/// Proof handed to storage primitives that the caller went through the lock
/// manager. Storage does not interpret it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LockToken {
    pub txn: TxnId,
}

impl LockToken {
    pub fn new(txn: TxnId) -> Self {
        LockToken { txn }
    }
}

/// A contiguous half-open key interval `[start, end)`; `end == None` is +inf.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Range {
    pub id: RangeId,
    pub start: Key,
    pub end: Option<Key>,
    pub replicas: Vec<NodeId>,
    pub leaseholder: NodeId,
}

impl Range {
    pub fn contains(&self, key: &Key) -> bool {
        *key >= self.start && self.end.as_ref().is_none_or(|e| key < e)
    }
}

#[derive(Debug, Clone)]
pub struct Cluster {
    nodes: Vec<NodeId>,
    ranges: BTreeMap<Key, Range>,
    next_range_id: RangeId,
    per_hop_latency_us: u64,
    clock_mode: ClockMode,
    /// table id -> number of leading key columns that form a colocation group.
    colocation: BTreeMap<TableId, usize>,
    data: BTreeMap<Key, RowValue>,
}

impl Cluster {
    /// A cluster of nodes `1..=nodes` with one range covering the keyspace.
    pub fn new(nodes: usize, per_hop_latency_ms: f64, clock_mode: ClockMode) -> Result<Self> {
        if nodes == 0 {
            return Err(Error::Config("cluster needs at least one node".into()));
        }
        if !(per_hop_latency_ms >= 0.0 && per_hop_latency_ms.is_finite()) {
            return Err(Error::Config(format!("bad per-hop latency {per_hop_latency_ms}")));
        }
        let nodes: Vec<NodeId> = (1..=nodes as NodeId).collect();
        let first = Range {
            id: 1,
            start: Key::default(),
            end: None,
            replicas: nodes.iter().copied().take(3).collect(),
            leaseholder: nodes[0],
        };
        let mut ranges = BTreeMap::new();
        ranges.insert(Key::default(), first);
        Ok(Cluster {
            nodes,
            ranges,
            next_range_id: 2,
            per_hop_latency_us: (per_hop_latency_ms * 1000.0).round() as u64,
            clock_mode,
            colocation: BTreeMap::new(),
            data: BTreeMap::new(),
        })
    }

    pub fn nodes(&self) -> &[NodeId] {
        &self.nodes
    }

    pub fn per_hop_latency_us(&self) -> u64 {
        self.per_hop_latency_us
    }

    pub fn clock_mode(&self) -> ClockMode {
        self.clock_mode
    }

    pub fn range_count(&self) -> usize {
        self.ranges.len()
    }

    pub fn ranges(&self) -> impl Iterator<Item = &Range> {
        self.ranges.values()
    }

    pub fn range(&self, id: RangeId) -> Option<&Range> {
        self.ranges.values().find(|r| r.id == id)
    }

    /// The range covering `key`.
    pub fn range_of(&self, key: &Key) -> &Range {
        self.ranges
            .range::<Key, _>((Bound::Unbounded, Bound::Included(key)))
            .next_back()
            .map(|(_, r)| r)
            .expect("ranges cover the keyspace")
    }

    /// The covering range and its leaseholder.
    pub fn route(&self, key: &Key) -> (RangeId, NodeId) {
        let r = self.range_of(key);
        (r.id, r.leaseholder)
    }

    pub fn leaseholder(&self, key: &Key) -> NodeId {
        self.range_of(key).leaseholder
    }

    /// Pieces of `[start, end)` clipped to range boundaries, in key order.
    pub fn segments(&self, start: &Key, end: &Key) -> Vec<Segment> {
        let mut out = Vec::new();
        if start >= end {
            return out;
        }
        let first = self.range_of(start).start.clone();
        for r in self
            .ranges
            .range::<Key, _>((Bound::Included(&first), Bound::Excluded(end)))
            .map(|(_, r)| r)
        {
            let seg_start = if r.start > *start { r.start.clone() } else { start.clone() };
            let seg_end = match &r.end {
                Some(e) if e < end => e.clone(),
                _ => end.clone(),
            };
            if seg_start < seg_end {
                out.push(Segment {
                    range: r.id,
                    leaseholder: r.leaseholder,
                    start: seg_start,
                    end: seg_end,
                });
            }
        }
        out
    }

    /// Require that range boundaries inside `table` never cut a group made of
    /// the first `arity` key columns.
    pub fn add_colocation(&mut self, table: TableId, arity: usize) -> Result<()> {
        let (lo, hi) = (table_start(table), table_end(table));
        for start in self.ranges.keys() {
            if *start > lo && *start < hi && !boundary_ok(start, table, arity) {
                return Err(Error::InvalidSplit(start.to_string()));
            }
        }
        let entry = self.colocation.entry(table).or_insert(arity);
        *entry = (*entry).min(arity);
        Ok(())
    }

    pub fn colocation_arity(&self, table: TableId) -> Option<usize> {
        self.colocation.get(&table).copied()
    }

    fn check_boundary(&self, boundary: &Key) -> Result<()> {
        if boundary.0.is_empty() {
            return Ok(());
        }
        if boundary.0.len() == 5 && boundary.0[4] == 0xFF {
            return Ok(());
        }
        let decoded = decode_key(boundary).map_err(|_| Error::InvalidSplit(boundary.to_hex()))?;
        if decoded.tail != KeyTail::None {
            return Err(Error::InvalidSplit(boundary.to_string()));
        }
        if let Some(&arity) = self.colocation.get(&decoded.table) {
            if decoded.values.len() > arity {
                return Err(Error::InvalidSplit(boundary.to_string()));
            }
        }
        Ok(())
    }

    /// Split the range containing `boundary` so that a range starts exactly
    /// there. Returns the id of the range starting at `boundary`.
    pub fn split_range(&mut self, boundary: Key) -> Result<RangeId> {
        if let Some(r) = self.ranges.get(&boundary) {
            return Ok(r.id);
        }
        self.check_boundary(&boundary)?;
        let left_start = self.range_of(&boundary).start.clone();
        let left = self.ranges.get_mut(&left_start).expect("covering range");
        let right = Range {
            id: self.next_range_id,
            start: boundary.clone(),
            end: left.end.take(),
            replicas: left.replicas.clone(),
            leaseholder: left.leaseholder,
        };
        left.end = Some(boundary.clone());
        self.next_range_id += 1;
        let id = right.id;
        self.ranges.insert(boundary, right);
        Ok(id)
    }

    fn range_mut(&mut self, id: RangeId) -> Result<&mut Range> {
        self.ranges
            .values_mut()
            .find(|r| r.id == id)
            .ok_or(Error::UnknownRange(id))
    }

    pub fn transfer_lease(&mut self, id: RangeId, node: NodeId) -> Result<()> {
        let r = self.range_mut(id)?;
        if !r.replicas.contains(&node) {
            return Err(Error::NotAReplica(node));
        }
        r.leaseholder = node;
        Ok(())
    }

    /// Replace a range's replica set; the leaseholder must be among them.
    pub fn set_replicas(&mut self, id: RangeId, replicas: Vec<NodeId>, leaseholder: NodeId) -> Result<()> {
        if !replicas.contains(&leaseholder) {
            return Err(Error::NotAReplica(leaseholder));
        }
        if let Some(bad) = replicas.iter().find(|n| !self.nodes.contains(n)) {
            return Err(Error::NotAReplica(*bad));
        }
        let r = self.range_mut(id)?;
        r.replicas = replicas;
        r.leaseholder = leaseholder;
        Ok(())
    }

    fn check_lease(&self, node: NodeId, key: &Key) -> Result<()> {
        let lh = self.leaseholder(key);
        if lh != node {
            return Err(Error::RoutingViolation {
                key: key.to_string(),
                node,
                leaseholder: lh,
            });
        }
        Ok(())
    }

    pub fn get(&self, node: NodeId, key: &Key, _token: &LockToken) -> Result<Option<&RowValue>> {
        self.check_lease(node, key)?;
        Ok(self.data.get(key))
    }

    pub fn put(&mut self, node: NodeId, key: Key, row: RowValue, _token: &LockToken) -> Result<()> {
        self.check_lease(node, &key)?;
        self.data.insert(key, row);
        Ok(())
    }

    pub fn delete(&mut self, node: NodeId, key: &Key, _token: &LockToken) -> Result<Option<RowValue>> {
        self.check_lease(node, key)?;
        Ok(self.data.remove(key))
    }

    /// Ordered scan of `[start, end)`; every covered range must be leased by `node`.
    pub fn scan(
        &self,
        node: NodeId,
        start: &Key,
        end: &Key,
        _token: &LockToken,
    ) -> Result<Vec<(Key, RowValue)>> {
        for seg in self.segments(start, end) {
            if seg.leaseholder != node {
                return Err(Error::RoutingViolation {
                    key: seg.start.to_string(),
                    node,
                    leaseholder: seg.leaseholder,
                });
            }
        }
        Ok(self.scan_unchecked(start, end))
    }

    pub(crate) fn scan_unchecked(&self, start: &Key, end: &Key) -> Vec<(Key, RowValue)> {
        if start >= end {
            return Vec::new();
        }
        self.data
            .range::<Key, _>((Bound::Included(start), Bound::Excluded(end)))
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect()
    }

    /// Key-only probe used by batch planners to size a batch before locking
    /// it. Returns no values.
    pub fn peek_keys(&self, start: &Key, end: &Key) -> impl Iterator<Item = &Key> {
        let (lo, hi) = if start < end {
            (Bound::Included(start), Bound::Excluded(end))
        } else {
            (Bound::Included(start), Bound::Excluded(start))
        };
        self.data.range::<Key, _>((lo, hi)).map(|(k, _)| k)
    }

    /// Initial population; bypasses routing.
    pub fn load_row(&mut self, key: Key, row: RowValue) {
        self.data.insert(key, row);
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub(crate) fn raw(&self) -> &BTreeMap<Key, RowValue> {
        &self.data
    }

    /// Snapshot of the whole store: one `hexkey<TAB>json-values` line per row.
    pub fn dump(&self) -> String {
        dump_rows(self.data.iter())
    }

    /// Replace the store contents with a [`Cluster::dump`] snapshot.
    pub fn load(&mut self, snapshot: &str) -> Result<()> {
        self.data = parse_dump(snapshot)?.into_iter().collect();
        Ok(())
    }
}

/// Piece of a key interval lying inside one range.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Segment {
    pub range: RangeId,
    pub leaseholder: NodeId,
    pub start: Key,
    pub end: Key,
}

fn boundary_ok(boundary: &Key, table: TableId, arity: usize) -> bool {
    match decode_key(boundary) {
        Ok(d) => d.table != table || (d.tail == KeyTail::None && d.values.len() <= arity),
        Err(_) => false,
    }
}

pub fn dump_rows<'a>(rows: impl Iterator<Item = (&'a Key, &'a RowValue)>) -> String {
    let mut out = String::new();
    for (k, v) in rows {
        let json = serde_json::to_string(&v.0).expect("scalars serialize");
        let _ = writeln!(out, "{}\t{}", k.to_hex(), json);
    }
    out
}

pub fn parse_dump(snapshot: &str) -> Result<Vec<(Key, RowValue)>> {
    let mut out = Vec::new();
    for (i, line) in snapshot.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let bad = |msg: String| Error::Parse { line: i + 1, msg };
        let (k, v) = line.split_once('\t').ok_or_else(|| bad("missing tab".into()))?;
        let key = Key::from_hex(k).map_err(|e| bad(e.to_string()))?;
        let values: Vec<Scalar> = serde_json::from_str(v).map_err(|e| bad(e.to_string()))?;
        out.push((key, RowValue(values)));
    }
    Ok(out)
}
