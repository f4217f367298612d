//! Conjunctive predicates and their rewrite from new-schema columns onto the
//! old schema.

use std::collections::BTreeMap;
use std::fmt;

use crate::error::{Error, Result};
use crate::kvstore::{Key, Scalar};

use super::TableDescriptor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CmpOp {
    Eq,
    Lt,
    Le,
    Gt,
    Ge,
}

impl CmpOp {
    pub fn eval(self, lhs: &Scalar, rhs: &Scalar) -> bool {
        match self {
            CmpOp::Eq => lhs == rhs,
            CmpOp::Lt => lhs < rhs,
            CmpOp::Le => lhs <= rhs,
            CmpOp::Gt => lhs > rhs,
            CmpOp::Ge => lhs >= rhs,
        }
    }

    fn symbol(self) -> &'static str {
        match self {
            CmpOp::Eq => "=",
            CmpOp::Lt => "<",
            CmpOp::Le => "<=",
            CmpOp::Gt => ">",
            CmpOp::Ge => ">=",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Cond {
    pub column: String,
    pub op: CmpOp,
    pub value: Scalar,
}

impl Cond {
    pub fn new(column: impl Into<String>, op: CmpOp, value: impl Into<Scalar>) -> Self {
        Cond {
            column: column.into(),
            op,
            value: value.into(),
        }
    }
}

impl fmt::Display for Cond {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {} {}", self.column, self.op.symbol(), self.value)
    }
}

/// A conjunction of column comparisons. The empty conjunction is true.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct Predicate {
    pub conds: Vec<Cond>,
}

impl Predicate {
    pub fn all() -> Self {
        Predicate::default()
    }

    pub fn eq(column: impl Into<String>, value: impl Into<Scalar>) -> Self {
        Predicate::all().and(column, CmpOp::Eq, value)
    }

    pub fn and(mut self, column: impl Into<String>, op: CmpOp, value: impl Into<Scalar>) -> Self {
        self.conds.push(Cond::new(column, op, value));
        self
    }

    pub fn is_tautology(&self) -> bool {
        self.conds.is_empty()
    }

    pub fn bind(&self, desc: &TableDescriptor) -> Result<BoundPredicate> {
        let conds = self
            .conds
            .iter()
            .map(|c| {
                let idx = desc.column_index(&c.column)?;
                let ty = desc.columns[idx].ty;
                if c.value.column_type() != ty {
                    return Err(Error::TypeMismatch(format!(
                        "{}.{} is {:?}, compared with {}",
                        desc.name, c.column, ty, c.value
                    )));
                }
                Ok((idx, c.op, c.value.clone()))
            })
            .collect::<Result<_>>()?;
        Ok(BoundPredicate { conds })
    }
}

impl fmt::Display for Predicate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.conds.is_empty() {
            return write!(f, "true");
        }
        for (i, c) in self.conds.iter().enumerate() {
            if i > 0 {
                write!(f, " AND ")?;
            }
            write!(f, "{c}")?;
        }
        Ok(())
    }
}

/// A predicate resolved against one table's column positions.
#[derive(Debug, Clone, Default)]
pub struct BoundPredicate {
    pub conds: Vec<(usize, CmpOp, Scalar)>,
}

impl BoundPredicate {
    pub fn matches(&self, row: &[Scalar]) -> bool {
        self.conds.iter().all(|(i, op, v)| op.eval(&row[*i], v))
    }

    /// Physical key interval that contains every row of `desc` matching the
    /// predicate: equality on a leading run of primary-key columns plus an
    /// optional range on the next one.
    pub fn key_bounds(&self, desc: &TableDescriptor) -> (Key, Key) {
        let key_cols = desc.key_prefix_len();
        let mut prefix = Vec::new();
        for &col in desc.pk.iter().take(key_cols) {
            match self.conds.iter().find(|(i, op, _)| *i == col && *op == CmpOp::Eq) {
                Some((_, _, v)) => prefix.push(v.clone()),
                None => break,
            }
        }
        let base = desc.physical_prefix(&prefix);
        let (mut start, mut end) = (base.clone(), base.prefix_end());
        if prefix.len() < key_cols {
            let col = desc.pk[prefix.len()];
            for (i, op, v) in &self.conds {
                if *i != col {
                    continue;
                }
                let mut with = prefix.clone();
                with.push(v.clone());
                let at = desc.physical_prefix(&with);
                match op {
                    CmpOp::Ge if at > start => start = at,
                    CmpOp::Gt if at.prefix_end() > start => start = at.prefix_end(),
                    CmpOp::Lt if at < end => end = at,
                    CmpOp::Le if at.prefix_end() < end => end = at.prefix_end(),
                    _ => {}
                }
            }
        }
        (start, end)
    }
}

/// Where a new-table column comes from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SourceColumn {
    pub table: String,
    pub column: String,
}

/// Rewrite rules from new-table columns to old-table columns. Join-key
/// columns map to both sides of the join. Aggregate outputs have no rule.
#[derive(Debug, Clone, Default)]
pub struct PredicateFilter {
    /// new table -> new column -> equivalent source columns
    rules: BTreeMap<String, BTreeMap<String, Vec<SourceColumn>>>,
    sources: Vec<String>,
}

impl PredicateFilter {
    pub(crate) fn new(sources: Vec<String>) -> Self {
        PredicateFilter {
            rules: BTreeMap::new(),
            sources,
        }
    }

    pub(crate) fn add_rule(&mut self, new_table: &str, new_column: &str, src: Vec<SourceColumn>) {
        self.rules
            .entry(new_table.to_string())
            .or_default()
            .insert(new_column.to_string(), src);
    }

    pub fn source_tables(&self) -> &[String] {
        &self.sources
    }

    pub fn rule(&self, new_table: &str, new_column: &str) -> Option<&[SourceColumn]> {
        self.rules.get(new_table)?.get(new_column).map(|v| v.as_slice())
    }

    /// Rewrite a predicate over `new_table` into one conjunction per source
    /// table. Fails on the first column without a rule.
    pub fn rewrite(&self, new_table: &str, pred: &Predicate) -> Result<BTreeMap<String, Predicate>> {
        let (out, dropped) = self.rewrite_widened(new_table, pred)?;
        match dropped.into_iter().next() {
            Some(c) => Err(Error::RewriteUnsupported { column: c.column }),
            None => Ok(out),
        }
    }

    /// Like [`PredicateFilter::rewrite`] but drops conditions that cannot be
    /// rewritten, which widens the selected source scope. The dropped
    /// conditions are returned.
    pub fn rewrite_widened(
        &self,
        new_table: &str,
        pred: &Predicate,
    ) -> Result<(BTreeMap<String, Predicate>, Vec<Cond>)> {
        let rules = self
            .rules
            .get(new_table)
            .ok_or_else(|| Error::UnknownTable(new_table.to_string()))?;
        let mut out: BTreeMap<String, Predicate> = self
            .sources
            .iter()
            .map(|s| (s.clone(), Predicate::all()))
            .collect();
        let mut dropped = Vec::new();
        for c in &pred.conds {
            match rules.get(&c.column) {
                Some(srcs) if !srcs.is_empty() => {
                    for s in srcs {
                        out.entry(s.table.clone()).or_default().conds.push(Cond {
                            column: s.column.clone(),
                            op: c.op,
                            value: c.value.clone(),
                        });
                    }
                }
                Some(_) => dropped.push(c.clone()),
                None => {
                    return Err(Error::UnknownColumn {
                        table: new_table.to_string(),
                        column: c.column.clone(),
                    })
                }
            }
        }
        Ok((out, dropped))
    }
}
