//! Statements and their execution against a table with no migration logic.

use crate::catalog::{BoundPredicate, MigrationHandle, Predicate, TableDescriptor};
use crate::error::{Error, Result};
use crate::kvstore::{decode_key, Key, Scalar};

use super::{Database, LockMode, Phase, ScanRow, StmtCtx};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Assignment {
    Set(String, Scalar),
    Add(String, Scalar),
}

impl Assignment {
    pub fn column(&self) -> &str {
        match self {
            Assignment::Set(c, _) | Assignment::Add(c, _) => c,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Statement {
    /// Empty `columns` selects every column.
    Select {
        table: String,
        columns: Vec<String>,
        pred: Predicate,
    },
    /// Columns not named get the zero value of their type.
    Insert {
        table: String,
        columns: Vec<String>,
        values: Vec<Scalar>,
    },
    Update {
        table: String,
        pred: Predicate,
        set: Vec<Assignment>,
    },
    Delete {
        table: String,
        pred: Predicate,
    },
    /// Background drain: migrate every pending unit in `[start, end)`.
    MigrateRange {
        migration: MigrationHandle,
        start: Key,
        end: Key,
    },
    /// Eager backfill of the units in `[start, end)`.
    Backfill {
        migration: MigrationHandle,
        start: Key,
        end: Key,
    },
}

impl Statement {
    pub fn select(table: &str, columns: &[&str], pred: Predicate) -> Self {
        Statement::Select {
            table: table.into(),
            columns: columns.iter().map(|c| c.to_string()).collect(),
            pred,
        }
    }

    pub fn insert(table: &str, values: &[(&str, Scalar)]) -> Self {
        Statement::Insert {
            table: table.into(),
            columns: values.iter().map(|(c, _)| c.to_string()).collect(),
            values: values.iter().map(|(_, v)| v.clone()).collect(),
        }
    }

    pub fn update(table: &str, pred: Predicate, set: Vec<Assignment>) -> Self {
        Statement::Update {
            table: table.into(),
            pred,
            set,
        }
    }

    pub fn delete(table: &str, pred: Predicate) -> Self {
        Statement::Delete {
            table: table.into(),
            pred,
        }
    }

    /// Target table of a user statement.
    pub fn table(&self) -> Option<&str> {
        match self {
            Statement::Select { table, .. }
            | Statement::Insert { table, .. }
            | Statement::Update { table, .. }
            | Statement::Delete { table, .. } => Some(table),
            Statement::MigrateRange { .. } | Statement::Backfill { .. } => None,
        }
    }

    pub fn predicate(&self) -> Option<&Predicate> {
        match self {
            Statement::Select { pred, .. }
            | Statement::Update { pred, .. }
            | Statement::Delete { pred, .. } => Some(pred),
            _ => None,
        }
    }

    pub fn is_write(&self) -> bool {
        !matches!(self, Statement::Select { .. })
    }
}

/// A row-level effect of a write statement.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Change {
    pub key: Key,
    pub before: Option<Vec<Scalar>>,
    pub after: Option<Vec<Scalar>>,
}

#[derive(Debug, Clone, Default)]
pub(crate) struct Output {
    pub rows: Vec<Vec<Scalar>>,
    pub affected: usize,
}

pub(crate) fn project(desc: &TableDescriptor, columns: &[String], row: &[Scalar]) -> Result<Vec<Scalar>> {
    if columns.is_empty() {
        return Ok(row.to_vec());
    }
    columns
        .iter()
        .map(|c| Ok(row[desc.column_index(c)?].clone()))
        .collect()
}

pub(crate) fn apply_set(desc: &TableDescriptor, row: &[Scalar], set: &[Assignment]) -> Result<Vec<Scalar>> {
    let mut out = row.to_vec();
    for a in set {
        let i = desc.column_index(a.column())?;
        if desc.pk.contains(&i) {
            return Err(Error::Unsupported(format!(
                "update of primary-key column {}.{}",
                desc.name,
                a.column()
            )));
        }
        out[i] = match a {
            Assignment::Set(_, v) => v.clone(),
            Assignment::Add(_, d) => out[i].checked_add(d)?,
        };
    }
    desc.check_row(&out)?;
    Ok(out)
}

pub(crate) fn build_row(desc: &TableDescriptor, columns: &[String], values: &[Scalar]) -> Result<Vec<Scalar>> {
    if columns.len() != values.len() {
        return Err(Error::TypeMismatch(format!(
            "{} columns but {} values",
            columns.len(),
            values.len()
        )));
    }
    let mut row: Vec<Scalar> = desc.columns.iter().map(|c| Scalar::zero(c.ty)).collect();
    for (c, v) in columns.iter().zip(values) {
        row[desc.column_index(c)?] = v.clone();
    }
    desc.check_row(&row)?;
    Ok(row)
}

impl Database {
    /// Rows of `desc` matching `bound`, from the physical interval its key
    /// bounds select.
    pub(crate) fn select_rows(
        &mut self,
        ctx: &mut StmtCtx,
        desc: &TableDescriptor,
        bound: &BoundPredicate,
        mode: LockMode,
        phase: Phase,
    ) -> Result<Vec<ScanRow>> {
        let (start, end) = bound.key_bounds(desc);
        let from = ctx.gateway;
        let rows = self.scan(ctx, &start, &end, mode, phase, from, "scan")?;
        let mut out = Vec::new();
        for r in rows {
            if desc.owns(&decode_key(&r.key)?) && bound.matches(&r.row) {
                out.push(r);
            }
        }
        Ok(out)
    }

    /// Execute a user statement directly on `desc`.
    pub(crate) fn exec_plain(
        &mut self,
        ctx: &mut StmtCtx,
        desc: &TableDescriptor,
        stmt: &Statement,
    ) -> Result<(Output, Vec<Change>)> {
        let gw = ctx.gateway;
        match stmt {
            Statement::Select { columns, pred, .. } => {
                let bound = pred.bind(desc)?;
                let rows = self.select_rows(ctx, desc, &bound, LockMode::Shared, Phase::Usr)?;
                let rows = rows
                    .iter()
                    .map(|r| project(desc, columns, &r.row))
                    .collect::<Result<Vec<_>>>()?;
                let affected = rows.len();
                Ok((Output { rows, affected }, Vec::new()))
            }
            Statement::Insert { columns, values, .. } => {
                let row = build_row(desc, columns, values)?;
                let key = desc.row_key(&row);
                if self.exists(ctx, &key, LockMode::Exclusive)? {
                    return Err(Error::Constraint(format!("duplicate key {key} in {}", desc.name)));
                }
                self.write(ctx, key.clone(), Some(row.clone()), Phase::Usr, gw, "insert")?;
                let change = Change {
                    key,
                    before: None,
                    after: Some(row.clone()),
                };
                Ok((
                    Output {
                        rows: vec![row],
                        affected: 1,
                    },
                    vec![change],
                ))
            }
            Statement::Update { pred, set, .. } => {
                let bound = pred.bind(desc)?;
                let rows = self.select_rows(ctx, desc, &bound, LockMode::Exclusive, Phase::Usr)?;
                let mut out = Output::default();
                let mut changes = Vec::new();
                for r in rows {
                    let new = apply_set(desc, &r.row, set)?;
                    self.write(ctx, r.key.clone(), Some(new.clone()), Phase::Usr, gw, "update")?;
                    out.rows.push(new.clone());
                    changes.push(Change {
                        key: r.key,
                        before: Some(r.row),
                        after: Some(new),
                    });
                }
                out.affected = changes.len();
                Ok((out, changes))
            }
            Statement::Delete { pred, .. } => {
                let bound = pred.bind(desc)?;
                let rows = self.select_rows(ctx, desc, &bound, LockMode::Exclusive, Phase::Usr)?;
                let mut out = Output::default();
                let mut changes = Vec::new();
                for r in rows {
                    self.write(ctx, r.key.clone(), None, Phase::Usr, gw, "delete")?;
                    out.rows.push(r.row.clone());
                    changes.push(Change {
                        key: r.key,
                        before: Some(r.row),
                        after: None,
                    });
                }
                out.affected = changes.len();
                Ok((out, changes))
            }
            Statement::MigrateRange { .. } | Statement::Backfill { .. } => Err(Error::Unsupported(
                "internal statement executed as a user statement".into(),
            )),
        }
    }
}
