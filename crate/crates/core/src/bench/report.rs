//! Benchmark metrics and their CSV / text export.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::Serialize;

use crate::catalog::{MigrationClass, Strategy};
use crate::error::{Error, Result};
use crate::txn::sched::{ProgressRecord, StmtRecord, TxnRecord};

/// Width of a throughput window.
pub const TPS_WINDOW_US: u64 = 1_000_000;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TpsWindow {
    pub window_start_ms: u64,
    pub committed: u64,
    pub tps: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct Timeline {
    pub registered_at_us: Option<u64>,
    pub first_service_at_us: Option<u64>,
    pub done_at_us: Option<u64>,
    pub backfill_steps: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub strategy: Strategy,
    pub migration: MigrationClass,
    pub rtt_ms: f64,
    pub nodes: usize,
    pub seed: u64,
    pub txns: Vec<TxnRecord>,
    pub statements: Vec<StmtRecord>,
    pub progress: Vec<ProgressRecord>,
    pub tps: Vec<TpsWindow>,
    pub timeline: Timeline,
    pub end_us: u64,
    pub errors: Vec<String>,
    pub wounds: u64,
}

fn mean(xs: impl Iterator<Item = u64>) -> Option<f64> {
    let (n, sum) = xs.fold((0u64, 0u128), |(n, s), x| (n + 1, s + x as u128));
    (n > 0).then(|| sum as f64 / n as f64)
}

/// Committed transactions per window, by commit time.
pub fn tps_windows(txns: &[TxnRecord], end_us: u64) -> Vec<TpsWindow> {
    let n = (end_us / TPS_WINDOW_US + 1) as usize;
    let mut counts = vec![0u64; n];
    for t in txns.iter().filter(|t| t.committed) {
        let i = (t.end_us / TPS_WINDOW_US) as usize;
        if i < n {
            counts[i] += 1;
        }
    }
    let secs = TPS_WINDOW_US as f64 / 1e6;
    counts
        .into_iter()
        .enumerate()
        .map(|(i, c)| TpsWindow {
            window_start_ms: i as u64 * TPS_WINDOW_US / 1000,
            committed: c,
            tps: c as f64 / secs,
        })
        .collect()
}

impl MetricsReport {
    pub fn committed(&self) -> usize {
        self.txns.iter().filter(|t| t.committed).count()
    }

    /// Mean latency of statements served by the new schema.
    pub fn mean_new_schema_latency_us(&self) -> Option<f64> {
        mean(self.statements.iter().filter(|s| s.new_schema).map(|s| s.latency_us))
    }

    pub fn new_schema_statements(&self) -> usize {
        self.statements.iter().filter(|s| s.new_schema).count()
    }

    pub fn mean_txn_latency_us(&self) -> Option<f64> {
        mean(self.txns.iter().filter(|t| t.committed).map(|t| t.latency_us))
    }

    pub fn summary(&self) -> String {
        let mut s = String::new();
        let ms = |x: Option<f64>| x.map_or("-".to_string(), |v| format!("{:.3}", v / 1000.0));
        let tick = |x: Option<u64>| x.map_or("-".to_string(), |v| format!("{} ({} us)", v / 1000, v));
        let _ = writeln!(s, "strategy: {}", self.strategy);
        let _ = writeln!(s, "migration: {}", self.migration);
        let _ = writeln!(s, "rtt_ms: {}", self.rtt_ms);
        let _ = writeln!(s, "nodes: {}", self.nodes);
        let _ = writeln!(s, "seed: {}", self.seed);
        let _ = writeln!(s, "end_tick: {}", tick(Some(self.end_us)));
        let _ = writeln!(s, "committed: {}", self.committed());
        let _ = writeln!(s, "failed: {}", self.txns.len() - self.committed());
        let _ = writeln!(s, "restarts: {}", self.txns.iter().map(|t| t.restarts as u64).sum::<u64>());
        let _ = writeln!(s, "wounds: {}", self.wounds);
        let _ = writeln!(s, "mean_txn_latency_ms: {}", ms(self.mean_txn_latency_us()));
        let _ = writeln!(s, "new_schema_statements: {}", self.new_schema_statements());
        let _ = writeln!(s, "mean_new_schema_latency_ms: {}", ms(self.mean_new_schema_latency_us()));
        let _ = writeln!(s, "registration_tick: {}", tick(self.timeline.registered_at_us));
        let _ = writeln!(s, "first_service_tick: {}", tick(self.timeline.first_service_at_us));
        let _ = writeln!(s, "done_tick: {}", tick(self.timeline.done_at_us));
        let _ = writeln!(s, "backfill_steps: {}", self.timeline.backfill_steps);
        let migrated: u64 = self.progress.iter().map(|p| p.rows_migrated).sum();
        let _ = writeln!(s, "background_steps: {}", self.progress.len());
        let _ = writeln!(s, "background_units: {migrated}");
        for e in &self.errors {
            let _ = writeln!(s, "error: {e}");
        }
        s
    }
}

const TXN_HEADER: &[&str] = &[
    "seq",
    "session",
    "kind",
    "start_us",
    "end_us",
    "latency_us",
    "round_trips",
    "service_us",
    "statements",
    "restarts",
    "new_schema",
    "committed",
];
const STMT_HEADER: &[&str] = &[
    "txn_seq",
    "kind",
    "table",
    "at_us",
    "latency_us",
    "round_trips",
    "service_us",
    "fused",
    "migrated_units",
    "new_schema",
];
const TPS_HEADER: &[&str] = &["window_start_ms", "committed", "tps"];
const PROGRESS_HEADER: &[&str] = &["at_us", "task", "cursor", "rows_migrated"];
const TIMELINE_HEADER: &[&str] = &["event", "at_us", "at_tick"];

#[derive(Serialize)]
struct TimelineRow {
    event: &'static str,
    at_us: Option<u64>,
    at_tick: Option<u64>,
}

/// Write `rows` as CSV under an explicit header, so that empty tables still
/// get one.
fn write_csv<T: Serialize>(path: &Path, header: &[&str], rows: &[T]) -> Result<()> {
    let csv_err = |e| Error::Csv {
        path: path.into(),
        source: e,
    };
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_path(path)
        .map_err(csv_err)?;
    w.write_record(header).map_err(csv_err)?;
    for r in rows {
        w.serialize(r).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Write txns.csv, statements.csv, tps.csv, progress.csv, timeline.csv and
/// summary.txt into `dir`, creating it if needed.
pub fn export_report(report: &MetricsReport, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_csv(&dir.join("txns.csv"), TXN_HEADER, &report.txns)?;
    write_csv(&dir.join("statements.csv"), STMT_HEADER, &report.statements)?;
    write_csv(&dir.join("tps.csv"), TPS_HEADER, &report.tps)?;
    write_csv(&dir.join("progress.csv"), PROGRESS_HEADER, &report.progress)?;
    let t = &report.timeline;
    let timeline: Vec<TimelineRow> = [
        ("migration_start", t.registered_at_us),
        ("first_service", t.first_service_at_us),
        ("done", t.done_at_us),
    ]
    .into_iter()
    .map(|(event, at)| TimelineRow {
        event,
        at_us: at,
        at_tick: at.map(|x| x / 1000),
    })
    .collect();
    write_csv(&dir.join("timeline.csv"), TIMELINE_HEADER, &timeline)?;
    let path = dir.join("summary.txt");
    fs::write(&path, report.summary()).map_err(|e| Error::io(&path, e))
}
