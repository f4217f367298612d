//! Table descriptors, migration specifications and per-migration state.

mod predicate;
mod spec_format;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use predicate::{BoundPredicate, CmpOp, Cond, Predicate, PredicateFilter, SourceColumn};
pub use spec_format::{format_spec, parse_spec};

use crate::error::{Error, Result};
use crate::kvstore::{
    encode_key, encode_prefixed_key, table_end, table_start, Cluster, ColumnType, DecodedKey, Key,
    KeyTail, Scalar, TableId,
};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ColumnDef {
    pub name: String,
    pub ty: ColumnType,
}

impl ColumnDef {
    pub fn new(name: impl Into<String>, ty: ColumnType) -> Self {
        ColumnDef {
            name: name.into(),
            ty,
        }
    }
}

/// How a table's rows are laid out in the keyspace.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KeyMode {
    /// `table_id / pk...`
    Plain,
    /// Interleaved under the old table's key: the first `prefix_arity`
    /// primary-key columns are the old table's leading key columns.
    Prefixed {
        old_table: TableId,
        prefix_arity: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TableDescriptor {
    pub id: TableId,
    pub name: String,
    pub columns: Vec<ColumnDef>,
    /// Column positions of the primary key, in key order.
    pub pk: Vec<usize>,
    pub key_mode: KeyMode,
}

impl TableDescriptor {
    pub fn column_index(&self, name: &str) -> Result<usize> {
        self.columns
            .iter()
            .position(|c| c.name == name)
            .ok_or_else(|| Error::UnknownColumn {
                table: self.name.clone(),
                column: name.to_string(),
            })
    }

    pub fn column_names(&self) -> impl Iterator<Item = &str> {
        self.columns.iter().map(|c| c.name.as_str())
    }

    pub fn pk_values(&self, row: &[Scalar]) -> Vec<Scalar> {
        self.pk.iter().map(|&i| row[i].clone()).collect()
    }

    pub fn check_row(&self, row: &[Scalar]) -> Result<()> {
        if row.len() != self.columns.len() {
            return Err(Error::TypeMismatch(format!(
                "{} expects {} columns, got {}",
                self.name,
                self.columns.len(),
                row.len()
            )));
        }
        for (v, c) in row.iter().zip(&self.columns) {
            if v.column_type() != c.ty {
                return Err(Error::TypeMismatch(format!(
                    "{}.{} is {:?}, got {v}",
                    self.name, c.name, c.ty
                )));
            }
        }
        Ok(())
    }

    /// Physical key of the row with primary key `pk`.
    pub fn key_for_pk(&self, pk: &[Scalar]) -> Key {
        match self.key_mode {
            KeyMode::Plain => encode_key(self.id, pk),
            KeyMode::Prefixed {
                old_table,
                prefix_arity,
            } => encode_prefixed_key(old_table, &pk[..prefix_arity], self.id, &pk[prefix_arity..]),
        }
    }

    pub fn row_key(&self, row: &[Scalar]) -> Key {
        self.key_for_pk(&self.pk_values(row))
    }

    /// Key as if the table were laid out plainly; used for layout-independent
    /// snapshots.
    pub fn canonical_key(&self, row: &[Scalar]) -> Key {
        encode_key(self.id, &self.pk_values(row))
    }

    /// Number of leading primary-key columns that determine physical placement.
    pub fn key_prefix_len(&self) -> usize {
        match self.key_mode {
            KeyMode::Plain => self.pk.len(),
            KeyMode::Prefixed { prefix_arity, .. } => prefix_arity,
        }
    }

    /// Physical key prefix covering all rows whose leading key columns equal
    /// `values` (at most [`TableDescriptor::key_prefix_len`] of them).
    pub fn physical_prefix(&self, values: &[Scalar]) -> Key {
        match self.key_mode {
            KeyMode::Plain => encode_key(self.id, values),
            KeyMode::Prefixed { old_table, .. } => encode_key(old_table, values),
        }
    }

    /// Physical interval that holds every row of this table.
    pub fn keyspace(&self) -> (Key, Key) {
        match self.key_mode {
            KeyMode::Plain => (table_start(self.id), table_end(self.id)),
            KeyMode::Prefixed { old_table, .. } => (table_start(old_table), table_end(old_table)),
        }
    }

    /// Whether a decoded physical key is a row of this table.
    pub fn owns(&self, d: &DecodedKey) -> bool {
        match self.key_mode {
            KeyMode::Plain => {
                d.table == self.id && d.tail == KeyTail::None && d.values.len() == self.pk.len()
            }
            KeyMode::Prefixed {
                old_table,
                prefix_arity,
            } => {
                d.table == old_table
                    && d.values.len() == prefix_arity
                    && matches!(&d.tail, KeyTail::Interleaved { table, suffix }
                        if *table == self.id && suffix.len() + prefix_arity == self.pk.len())
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MigrationClass {
    Split,
    Join,
    Preaggregate,
}

impl MigrationClass {
    pub const ALL: [MigrationClass; 3] = [
        MigrationClass::Split,
        MigrationClass::Join,
        MigrationClass::Preaggregate,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            MigrationClass::Split => "split",
            MigrationClass::Join => "join",
            MigrationClass::Preaggregate => "preaggregate",
        }
    }

    /// Whether migrated source units are deleted (move) rather than marked.
    pub fn moves_source(self) -> bool {
        self == MigrationClass::Split
    }

    /// Whether the driving old table stops serving statements once the new
    /// schema is live. A preaggregate keeps its base table.
    pub fn replaces_source(self) -> bool {
        self != MigrationClass::Preaggregate
    }
}

impl fmt::Display for MigrationClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MigrationClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        MigrationClass::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown migration class `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    /// Eager backfill through delete-only / write-only states.
    Osc,
    /// Lazy migration, whole-table background pass.
    Bullfrog,
    SlsmBasic,
    /// Lazy migration with new rows colocated under old keys.
    SlsmMigOpt,
    /// Lazy migration with fusion transactions.
    SlsmUserOpt,
    SlsmFull,
}

impl Strategy {
    pub const ALL: [Strategy; 6] = [
        Strategy::Osc,
        Strategy::Bullfrog,
        Strategy::SlsmBasic,
        Strategy::SlsmMigOpt,
        Strategy::SlsmUserOpt,
        Strategy::SlsmFull,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::Osc => "osc",
            Strategy::Bullfrog => "bullfrog",
            Strategy::SlsmBasic => "slsm_basic",
            Strategy::SlsmMigOpt => "slsm_mig_opt",
            Strategy::SlsmUserOpt => "slsm_user_opt",
            Strategy::SlsmFull => "slsm_full",
        }
    }

    pub fn is_lazy(self) -> bool {
        self != Strategy::Osc
    }

    pub fn colocates(self) -> bool {
        matches!(self, Strategy::SlsmMigOpt | Strategy::SlsmFull)
    }

    pub fn fuses(self) -> bool {
        matches!(self, Strategy::SlsmUserOpt | Strategy::SlsmFull)
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "basic" {
            return Ok(Strategy::SlsmBasic);
        }
        Strategy::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown strategy `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ColumnSource {
    Column(SourceColumn),
    Sum(SourceColumn),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NewColumnSpec {
    pub name: String,
    pub source: ColumnSource,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NewTableSpec {
    pub name: String,
    /// Fixed table id; allocated when `None`.
    pub id: Option<TableId>,
    pub columns: Vec<NewColumnSpec>,
    pub pk: Vec<String>,
}

/// Declarative description of one schema migration.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MigrationSpec {
    pub class: MigrationClass,
    pub strategy: Strategy,
    pub old_tables: Vec<String>,
    pub new_tables: Vec<NewTableSpec>,
    /// Equi-join pairs `(left, right)` for join migrations.
    pub join_keys: Vec<(SourceColumn, SourceColumn)>,
    /// Grouping columns of the old table for preaggregate migrations.
    pub group_keys: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct MigrationHandle(pub usize);

/// Where a target column value comes from, resolved to column positions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ColumnOrigin {
    Driving(usize),
    Dimension(usize),
    SumOfDriving(usize),
}

/// A registered migration, resolved against the catalog. Immutable.
#[derive(Debug, Clone)]
pub struct Migration {
    pub handle: MigrationHandle,
    pub spec: MigrationSpec,
    /// The old table whose rows (or row groups) are the unit of migration.
    pub driving: Arc<TableDescriptor>,
    /// The other side of a join, read but never consumed.
    pub dimension: Option<Arc<TableDescriptor>>,
    /// `(driving column, dimension column)` pairs, in dimension key order.
    pub join_pairs: Vec<(usize, usize)>,
    /// Leading driving-key columns forming one unit.
    pub unit_arity: usize,
    pub targets: Vec<Arc<TableDescriptor>>,
    pub target_columns: Vec<Vec<ColumnOrigin>>,
    pub filter: PredicateFilter,
}

impl Migration {
    pub fn class(&self) -> MigrationClass {
        self.spec.class
    }

    pub fn strategy(&self) -> Strategy {
        self.spec.strategy
    }

    pub fn target_index(&self, table: TableId) -> Option<usize> {
        self.targets.iter().position(|t| t.id == table)
    }

    pub fn unit_key(&self, unit_values: &[Scalar]) -> Key {
        encode_key(self.driving.id, unit_values)
    }

    /// Unit values of a driving-table row.
    pub fn unit_of_driving_row(&self, row: &[Scalar]) -> Vec<Scalar> {
        self.driving.pk[..self.unit_arity]
            .iter()
            .map(|&i| row[i].clone())
            .collect()
    }

    /// Unit values that a target row originates from.
    pub fn unit_of_target_row(&self, target: usize, row: &[Scalar]) -> Vec<Scalar> {
        let cols = &self.target_columns[target];
        self.driving.pk[..self.unit_arity]
            .iter()
            .map(|&dcol| {
                let pos = cols
                    .iter()
                    .position(|o| *o == ColumnOrigin::Driving(dcol))
                    .expect("validated: target carries the unit columns");
                row[pos].clone()
            })
            .collect()
    }

    /// Dimension columns whose values flow into target rows.
    pub fn contributing_dimension_columns(&self) -> BTreeSet<usize> {
        let mut out: BTreeSet<usize> = self.join_pairs.iter().map(|(_, d)| *d).collect();
        for cols in &self.target_columns {
            for o in cols {
                if let ColumnOrigin::Dimension(i) = o {
                    out.insert(*i);
                }
            }
        }
        out
    }

    pub fn rewrite_predicate(&self, table: &str, pred: &Predicate) -> Result<BTreeMap<String, Predicate>> {
        self.filter.rewrite(table, pred)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OscState {
    Absent,
    DeleteOnly,
    WriteOnly,
    Public,
}

/// Mutable progress of a migration.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MigrationState {
    pub osc_state: OscState,
    pub backfill_watermark: Option<Key>,
    pub drain_cursor: Option<Key>,
    pub done: bool,
    pub registered_at: u64,
    pub first_service_at: Option<u64>,
    pub done_at: Option<u64>,
    pub backfill_steps: u64,
    pub warnings: Vec<String>,
}

impl MigrationState {
    fn new(now: u64) -> Self {
        MigrationState {
            osc_state: OscState::Absent,
            backfill_watermark: None,
            drain_cursor: None,
            done: false,
            registered_at: now,
            first_service_at: None,
            done_at: None,
            backfill_steps: 0,
            warnings: Vec::new(),
        }
    }

    /// Move the OSC state machine forward; never backwards.
    pub fn advance_osc(&mut self, to: OscState) {
        debug_assert!(to >= self.osc_state, "OSC state may only move forward");
        if to > self.osc_state {
            self.osc_state = to;
        }
    }
}

/// What a statement on a table has to go through.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TableRole {
    Plain,
    /// New-schema table of a migration that is still in progress.
    Target(MigrationHandle, usize),
    /// Driving old table of a migration.
    Driving(MigrationHandle),
    /// Join side that contributes columns but is not consumed.
    Dimension(MigrationHandle),
}

#[derive(Debug, Clone, Default)]
pub struct Catalog {
    tables: BTreeMap<String, Arc<TableDescriptor>>,
    names: BTreeMap<TableId, String>,
    next_id: TableId,
    migrations: Vec<(Arc<Migration>, MigrationState)>,
}

impl Catalog {
    pub fn new() -> Self {
        Catalog {
            next_id: 100,
            ..Default::default()
        }
    }

    pub fn create_table(
        &mut self,
        name: &str,
        columns: Vec<ColumnDef>,
        pk: &[&str],
    ) -> Result<Arc<TableDescriptor>> {
        let id = self.alloc_id();
        self.create_table_with_id(id, name, columns, pk)
    }

    fn alloc_id(&mut self) -> TableId {
        while self.names.contains_key(&self.next_id) {
            self.next_id += 1;
        }
        self.next_id
    }

    pub fn create_table_with_id(
        &mut self,
        id: TableId,
        name: &str,
        columns: Vec<ColumnDef>,
        pk: &[&str],
    ) -> Result<Arc<TableDescriptor>> {
        let mut desc = TableDescriptor {
            id,
            name: name.to_string(),
            columns,
            pk: Vec::new(),
            key_mode: KeyMode::Plain,
        };
        desc.pk = pk.iter().map(|c| desc.column_index(c)).collect::<Result<_>>()?;
        self.install(desc)
    }

    fn install(&mut self, desc: TableDescriptor) -> Result<Arc<TableDescriptor>> {
        if desc.pk.is_empty() {
            return Err(Error::InvalidMigration(format!("{}: empty primary key", desc.name)));
        }
        if desc.id == u32::MAX {
            return Err(Error::Config("table id u32::MAX is reserved".into()));
        }
        let names: BTreeSet<&str> = desc.column_names().collect();
        if names.len() != desc.columns.len() {
            return Err(Error::InvalidMigration(format!("{}: duplicate column", desc.name)));
        }
        if self.tables.contains_key(&desc.name) || self.names.contains_key(&desc.id) {
            return Err(Error::InvalidMigration(format!(
                "table {} (id {}) already exists",
                desc.name, desc.id
            )));
        }
        let desc = Arc::new(desc);
        self.names.insert(desc.id, desc.name.clone());
        self.tables.insert(desc.name.clone(), desc.clone());
        Ok(desc)
    }

    pub fn table(&self, name: &str) -> Result<&Arc<TableDescriptor>> {
        self.tables
            .get(name)
            .ok_or_else(|| Error::UnknownTable(name.to_string()))
    }

    pub fn table_by_id(&self, id: TableId) -> Option<&Arc<TableDescriptor>> {
        self.names.get(&id).and_then(|n| self.tables.get(n))
    }

    pub fn tables(&self) -> impl Iterator<Item = &Arc<TableDescriptor>> {
        self.tables.values()
    }

    pub fn migration(&self, h: MigrationHandle) -> &Arc<Migration> {
        &self.migrations[h.0].0
    }

    pub fn state(&self, h: MigrationHandle) -> &MigrationState {
        &self.migrations[h.0].1
    }

    pub fn state_mut(&mut self, h: MigrationHandle) -> &mut MigrationState {
        &mut self.migrations[h.0].1
    }

    pub fn migrations(&self) -> impl Iterator<Item = (&Arc<Migration>, &MigrationState)> {
        self.migrations.iter().map(|(m, s)| (m, s))
    }

    pub fn rewrite_predicate(
        &self,
        h: MigrationHandle,
        table: &str,
        pred: &Predicate,
    ) -> Result<BTreeMap<String, Predicate>> {
        self.migration(h).rewrite_predicate(table, pred)
    }

    /// The most recent migration role of a table.
    pub fn role_of(&self, table: TableId) -> TableRole {
        for (m, st) in self.migrations.iter().rev() {
            if let Some(i) = m.target_index(table) {
                return if st.done {
                    TableRole::Plain
                } else {
                    TableRole::Target(m.handle, i)
                };
            }
            if m.driving.id == table {
                // a retained base table keeps feeding its aggregate after the migration
                return TableRole::Driving(m.handle);
            }
            if m.dimension.as_ref().is_some_and(|d| d.id == table) && !st.done {
                return TableRole::Dimension(m.handle);
            }
        }
        TableRole::Plain
    }

    fn ensure_available(&self, name: &str) -> Result<Arc<TableDescriptor>> {
        let desc = self.table(name)?.clone();
        match self.role_of(desc.id) {
            TableRole::Plain => Ok(desc),
            _ => Err(Error::MigrationConflict(name.to_string())),
        }
    }

    /// Install the new tables and predicate filter for `spec`. Nothing is
    /// copied; lazy strategies may serve the new schema right away.
    pub fn register_migration(
        &mut self,
        spec: MigrationSpec,
        cluster: &mut Cluster,
        now: u64,
    ) -> Result<MigrationHandle> {
        let handle = MigrationHandle(self.migrations.len());
        let olds: Vec<Arc<TableDescriptor>> = spec
            .old_tables
            .iter()
            .map(|n| self.ensure_available(n))
            .collect::<Result<_>>()?;
        let arity_ok = match spec.class {
            MigrationClass::Split => olds.len() == 1 && spec.new_tables.len() == 2,
            MigrationClass::Join => olds.len() == 2 && spec.new_tables.len() == 1,
            MigrationClass::Preaggregate => olds.len() == 1 && spec.new_tables.len() == 1,
        };
        if !arity_ok {
            return Err(Error::InvalidMigration(format!(
                "{} takes {} old and {} new tables",
                spec.class,
                if spec.class == MigrationClass::Join { 2 } else { 1 },
                if spec.class == MigrationClass::Split { 2 } else { 1 },
            )));
        }
        for t in &spec.new_tables {
            if self.tables.contains_key(&t.name) {
                return Err(Error::InvalidMigration(format!("table {} already exists", t.name)));
            }
        }

        let (driving, dimension) = pick_driving(&spec, &olds)?;
        let join_pairs = resolve_join(&spec, &driving, dimension.as_ref())?;
        let unit_arity = match spec.class {
            MigrationClass::Preaggregate => {
                let groups: Vec<usize> = spec
                    .group_keys
                    .iter()
                    .map(|c| driving.column_index(c))
                    .collect::<Result<_>>()?;
                if groups.is_empty() || groups[..] != driving.pk[..groups.len().min(driving.pk.len())] {
                    return Err(Error::InvalidMigration(
                        "group keys must be a leading run of the old primary key".into(),
                    ));
                }
                groups.len()
            }
            _ => driving.pk.len(),
        };

        let mut warnings = Vec::new();
        let mut resolved = Vec::new();
        for t in &spec.new_tables {
            resolved.push(resolve_target(t, &spec, &driving, dimension.as_ref(), unit_arity)?);
        }

        let mut colocate = spec.strategy.colocates();
        if colocate {
            if let Some((t, _)) = resolved.iter().find(|(_, r)| !r.prefix_contained) {
                warnings.push(format!(
                    "{}: primary key does not start with the key of {}; using plain keys",
                    t.name, driving.name
                ));
                colocate = false;
            }
        }
        if colocate {
            if let Err(e) = cluster.add_colocation(driving.id, unit_arity) {
                warnings.push(format!("{e}; using plain keys"));
                colocate = false;
            }
        }

        let mut filter = PredicateFilter::new(spec.old_tables.clone());
        let mut targets = Vec::new();
        let mut target_columns = Vec::new();
        for (t, r) in resolved {
            let id = match t.id {
                Some(id) => id,
                None => self.alloc_id(),
            };
            let key_mode = if colocate {
                KeyMode::Prefixed {
                    old_table: driving.id,
                    prefix_arity: unit_arity,
                }
            } else {
                KeyMode::Plain
            };
            let desc = self.install(TableDescriptor {
                id,
                name: t.name.clone(),
                columns: r.columns,
                pk: r.pk,
                key_mode,
            })?;
            for (col, origin) in desc.columns.iter().zip(&r.origins) {
                let src = match origin {
                    ColumnOrigin::SumOfDriving(_) => Vec::new(),
                    ColumnOrigin::Driving(i) => equivalents(&driving, *i, dimension.as_ref(), &join_pairs, true),
                    ColumnOrigin::Dimension(i) => equivalents(
                        dimension.as_ref().expect("dimension origin implies join"),
                        *i,
                        Some(&driving),
                        &join_pairs,
                        false,
                    ),
                };
                filter.add_rule(&desc.name, &col.name, src);
            }
            targets.push(desc);
            target_columns.push(r.origins);
        }

        let migration = Migration {
            handle,
            spec,
            driving,
            dimension,
            join_pairs,
            unit_arity,
            targets,
            target_columns,
            filter,
        };
        let mut state = MigrationState::new(now);
        state.warnings = warnings;
        self.migrations.push((Arc::new(migration), state));
        Ok(handle)
    }
}

fn pick_driving(
    spec: &MigrationSpec,
    olds: &[Arc<TableDescriptor>],
) -> Result<(Arc<TableDescriptor>, Option<Arc<TableDescriptor>>)> {
    if spec.class != MigrationClass::Join {
        return Ok((olds[0].clone(), None));
    }
    let new = &spec.new_tables[0];
    let pk_sources: BTreeSet<(&str, &str)> = new
        .pk
        .iter()
        .filter_map(|c| new.columns.iter().find(|nc| &nc.name == c))
        .filter_map(|nc| match &nc.source {
            ColumnSource::Column(s) => Some((s.table.as_str(), s.column.as_str())),
            ColumnSource::Sum(_) => None,
        })
        .collect();
    let covers = |t: &TableDescriptor| {
        t.pk
            .iter()
            .all(|&i| pk_sources.contains(&(t.name.as_str(), t.columns[i].name.as_str())))
    };
    match (covers(&olds[0]), covers(&olds[1])) {
        (true, _) => Ok((olds[0].clone(), Some(olds[1].clone()))),
        (false, true) => Ok((olds[1].clone(), Some(olds[0].clone()))),
        _ => Err(Error::InvalidMigration(
            "joined table's primary key must contain one old table's primary key".into(),
        )),
    }
}

fn resolve_join(
    spec: &MigrationSpec,
    driving: &TableDescriptor,
    dimension: Option<&Arc<TableDescriptor>>,
) -> Result<Vec<(usize, usize)>> {
    let Some(dim) = dimension else {
        return Ok(Vec::new());
    };
    let mut pairs = Vec::new();
    for (a, b) in &spec.join_keys {
        let (d, o) = if a.table == driving.name { (a, b) } else { (b, a) };
        if d.table != driving.name || o.table != dim.name {
            return Err(Error::InvalidMigration(format!(
                "join key {}.{} = {}.{} does not link {} and {}",
                a.table, a.column, b.table, b.column, driving.name, dim.name
            )));
        }
        pairs.push((driving.column_index(&d.column)?, dim.column_index(&o.column)?));
    }
    // the dimension row is fetched by point lookup, so the pairs must cover its key
    let mut ordered = Vec::new();
    for &k in &dim.pk {
        let p = pairs.iter().find(|(_, dc)| *dc == k).ok_or_else(|| {
            Error::InvalidMigration(format!(
                "join keys must cover the primary key of {}",
                dim.name
            ))
        })?;
        ordered.push(*p);
    }
    Ok(ordered)
}

struct ResolvedTarget {
    columns: Vec<ColumnDef>,
    origins: Vec<ColumnOrigin>,
    pk: Vec<usize>,
    prefix_contained: bool,
}

fn resolve_target(
    t: &NewTableSpec,
    spec: &MigrationSpec,
    driving: &TableDescriptor,
    dimension: Option<&Arc<TableDescriptor>>,
    unit_arity: usize,
) -> Result<(NewTableSpec, ResolvedTarget)> {
    let mut columns = Vec::new();
    let mut origins = Vec::new();
    for c in &t.columns {
        let (src, is_sum) = match &c.source {
            ColumnSource::Column(s) => (s, false),
            ColumnSource::Sum(s) => (s, true),
        };
        let (origin, ty) = if src.table == driving.name {
            let i = driving.column_index(&src.column)?;
            let ty = driving.columns[i].ty;
            if is_sum {
                if spec.class != MigrationClass::Preaggregate || ty == ColumnType::Text {
                    return Err(Error::InvalidMigration(format!("sum({}) not allowed here", src.column)));
                }
                (ColumnOrigin::SumOfDriving(i), ty)
            } else {
                (ColumnOrigin::Driving(i), ty)
            }
        } else if let Some(dim) = dimension.filter(|d| d.name == src.table) {
            if is_sum {
                return Err(Error::InvalidMigration("sum over the join dimension".into()));
            }
            let i = dim.column_index(&src.column)?;
            (ColumnOrigin::Dimension(i), dim.columns[i].ty)
        } else {
            return Err(Error::InvalidMigration(format!(
                "{}.{}: source table {} is not an old table",
                t.name, c.name, src.table
            )));
        };
        if spec.class == MigrationClass::Preaggregate && !is_sum {
            // non-aggregate columns of a preaggregate must be group keys
            let ColumnOrigin::Driving(i) = origin else { unreachable!() };
            if !driving.pk[..unit_arity].contains(&i) {
                return Err(Error::InvalidMigration(format!(
                    "{}.{} is neither a group key nor an aggregate",
                    t.name, c.name
                )));
            }
        }
        columns.push(ColumnDef::new(c.name.clone(), ty));
        origins.push(origin);
    }
    let pk: Vec<usize> = t
        .pk
        .iter()
        .map(|c| {
            columns
                .iter()
                .position(|cd| &cd.name == c)
                .ok_or_else(|| Error::UnknownColumn {
                    table: t.name.clone(),
                    column: c.clone(),
                })
        })
        .collect::<Result<_>>()?;
    if pk.is_empty() {
        return Err(Error::InvalidMigration(format!("{}: empty primary key", t.name)));
    }
    let unit_cols = &driving.pk[..unit_arity];
    let pk_origins: Vec<ColumnOrigin> = pk.iter().map(|&i| origins[i]).collect();
    for &u in unit_cols {
        if !pk_origins.contains(&ColumnOrigin::Driving(u)) {
            return Err(Error::InvalidMigration(format!(
                "{}: primary key must include {}.{}",
                t.name, driving.name, driving.columns[u].name
            )));
        }
    }
    let prefix_contained = pk_origins.len() >= unit_arity
        && unit_cols
            .iter()
            .zip(&pk_origins)
            .all(|(&u, o)| *o == ColumnOrigin::Driving(u));
    Ok((
        t.clone(),
        ResolvedTarget {
            columns,
            origins,
            pk,
            prefix_contained,
        },
    ))
}

/// Source columns equal to column `col` of `table` under the join condition.
fn equivalents(
    table: &TableDescriptor,
    col: usize,
    other: Option<&Arc<TableDescriptor>>,
    join_pairs: &[(usize, usize)],
    table_is_driving: bool,
) -> Vec<SourceColumn> {
    let mut out = vec![SourceColumn {
        table: table.name.clone(),
        column: table.columns[col].name.clone(),
    }];
    if let Some(other) = other {
        for &(d, m) in join_pairs {
            let (mine, theirs) = if table_is_driving { (d, m) } else { (m, d) };
            if mine == col {
                out.push(SourceColumn {
                    table: other.name.clone(),
                    column: other.columns[theirs].name.clone(),
                });
            }
        }
    }
    out
}
