//! Line-oriented text format for migration specs.
//!
//! ```text
//! # split customer into two tables
//! class split
//! strategy slsm_full
//! old customer
//! table customer_private
//! pk c_w_id c_d_id c_id
//! col c_w_id = customer.c_w_id
//! col c_balance = customer.c_balance
//! table customer_public 211
//! ...
//! ```
//!
//! Directives:
//! - `class split|join|preaggregate`
//! - `strategy osc|bullfrog|slsm_basic|slsm_mig_opt|slsm_user_opt|slsm_full`
//! - `old TABLE` (once per old table)
//! - `table NAME [ID]` opens a new table; `pk` and `col` lines apply to it
//! - `pk COL...`
//! - `col NAME = TABLE.COLUMN` or `col NAME = sum(TABLE.COLUMN)`
//! - `join TABLE.COLUMN = TABLE.COLUMN`
//! - `group COL...`
//!
//! Blank lines and lines starting with `#` are ignored.

use std::fmt::Write as _;

use crate::error::{Error, Result};

use super::{ColumnSource, MigrationSpec, NewColumnSpec, NewTableSpec, SourceColumn};

fn source_column(s: &str, line: usize) -> Result<SourceColumn> {
    let (table, column) = s.split_once('.').ok_or_else(|| Error::Parse {
        line,
        msg: format!("expected TABLE.COLUMN, got `{s}`"),
    })?;
    if table.is_empty() || column.is_empty() {
        return Err(Error::Parse {
            line,
            msg: format!("expected TABLE.COLUMN, got `{s}`"),
        });
    }
    Ok(SourceColumn {
        table: table.to_string(),
        column: column.to_string(),
    })
}

pub fn parse_spec(text: &str) -> Result<MigrationSpec> {
    let mut class = None;
    let mut strategy = None;
    let mut old_tables = Vec::new();
    let mut new_tables: Vec<NewTableSpec> = Vec::new();
    let mut join_keys = Vec::new();
    let mut group_keys = Vec::new();

    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let l = raw.trim();
        if l.is_empty() || l.starts_with('#') {
            continue;
        }
        let (word, rest) = l.split_once(char::is_whitespace).unwrap_or((l, ""));
        let rest = rest.trim();
        let err = |msg: String| Error::Parse { line, msg };
        let args: Vec<&str> = rest.split_whitespace().collect();
        let current = |tables: &mut Vec<NewTableSpec>| -> Result<usize> {
            if tables.is_empty() {
                Err(Error::Parse {
                    line,
                    msg: format!("`{word}` before any `table`"),
                })
            } else {
                Ok(tables.len() - 1)
            }
        };
        match word {
            "class" => class = Some(rest.parse().map_err(|_| err(format!("unknown class `{rest}`")))?),
            "strategy" => strategy = Some(rest.parse().map_err(|_| err(format!("unknown strategy `{rest}`")))?),
            "old" => {
                if args.len() != 1 {
                    return Err(err("expected `old TABLE`".into()));
                }
                old_tables.push(args[0].to_string());
            }
            "table" => {
                let id = match args.as_slice() {
                    [_] => None,
                    [_, id] => Some(id.parse().map_err(|_| err(format!("bad table id `{id}`")))?),
                    _ => return Err(err("expected `table NAME [ID]`".into())),
                };
                new_tables.push(NewTableSpec {
                    name: args[0].to_string(),
                    id,
                    columns: Vec::new(),
                    pk: Vec::new(),
                });
            }
            "pk" => {
                let t = current(&mut new_tables)?;
                if args.is_empty() {
                    return Err(err("empty pk".into()));
                }
                new_tables[t].pk = args.iter().map(|s| s.to_string()).collect();
            }
            "col" => {
                let t = current(&mut new_tables)?;
                let (name, src) = rest
                    .split_once('=')
                    .ok_or_else(|| err("expected `col NAME = SOURCE`".into()))?;
                let (name, src) = (name.trim(), src.trim());
                if name.is_empty() || name.contains(char::is_whitespace) {
                    return Err(err(format!("bad column name `{name}`")));
                }
                let source = match src.strip_prefix("sum(").and_then(|s| s.strip_suffix(')')) {
                    Some(inner) => ColumnSource::Sum(source_column(inner.trim(), line)?),
                    None => ColumnSource::Column(source_column(src, line)?),
                };
                new_tables[t].columns.push(NewColumnSpec {
                    name: name.to_string(),
                    source,
                });
            }
            "join" => {
                let (l, r) = rest
                    .split_once('=')
                    .ok_or_else(|| err("expected `join T.C = T.C`".into()))?;
                join_keys.push((source_column(l.trim(), line)?, source_column(r.trim(), line)?));
            }
            "group" => group_keys.extend(args.iter().map(|s| s.to_string())),
            other => return Err(err(format!("unknown directive `{other}`"))),
        }
    }
    let missing = |what: &str| Error::Parse {
        line: 0,
        msg: format!("missing `{what}`"),
    };
    Ok(MigrationSpec {
        class: class.ok_or_else(|| missing("class"))?,
        strategy: strategy.ok_or_else(|| missing("strategy"))?,
        old_tables,
        new_tables,
        join_keys,
        group_keys,
    })
}

/// Inverse of [`parse_spec`].
pub fn format_spec(spec: &MigrationSpec) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "class {}", spec.class);
    let _ = writeln!(s, "strategy {}", spec.strategy);
    for t in &spec.old_tables {
        let _ = writeln!(s, "old {t}");
    }
    for (l, r) in &spec.join_keys {
        let _ = writeln!(s, "join {}.{} = {}.{}", l.table, l.column, r.table, r.column);
    }
    if !spec.group_keys.is_empty() {
        let _ = writeln!(s, "group {}", spec.group_keys.join(" "));
    }
    for t in &spec.new_tables {
        match t.id {
            Some(id) => {
                let _ = writeln!(s, "table {} {id}", t.name);
            }
            None => {
                let _ = writeln!(s, "table {}", t.name);
            }
        }
        let _ = writeln!(s, "pk {}", t.pk.join(" "));
        for c in &t.columns {
            let _ = match &c.source {
                ColumnSource::Column(sc) => writeln!(s, "col {} = {}.{}", c.name, sc.table, sc.column),
                ColumnSource::Sum(sc) => writeln!(s, "col {} = sum({}.{})", c.name, sc.table, sc.column),
            };
        }
    }
    s
}
