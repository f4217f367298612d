//! TPC-C-lite benchmark with a schema migration started mid-run.

pub mod hop;
mod report;
pub mod tpcc;

use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

pub use report::{export_report, tps_windows, MetricsReport, Timeline, TpsWindow, TPS_WINDOW_US};
pub use tpcc::{load_tpcc_lite, Cardinalities, Mix, TpccWorkload, TxnKind};

use crate::background::{DrainConfig, DrainMode, Drainer};
use crate::catalog::{parse_spec, Catalog, MigrationClass, MigrationHandle, MigrationSpec, Strategy};
use crate::error::{Error, Result};
use crate::kvstore::{ClockMode, Cluster};
use crate::migration::{availability_probe, OscConfig, OscDriver};
use crate::txn::sched::{BackgroundTask, Scheduler, SchedulerConfig, Workload};
use crate::txn::{Database, ServiceCosts};

/// Per-hop latencies of the three measured deployments, in milliseconds.
pub const RTT_PRESETS_MS: [f64; 3] = [1.15, 11.78, 22.33];

/// Environment variable that overrides the output directory.
pub const OUT_DIR_ENV: &str = "BENCH_OUT_DIR";

const SPLIT_SPEC: &str = include_str!("../../migrations/split.mig");
const JOIN_SPEC: &str = include_str!("../../migrations/join.mig");
const PREAGGREGATE_SPEC: &str = include_str!("../../migrations/preaggregate.mig");

/// The built-in spec of a benchmark migration, run with `strategy`.
pub fn migration_spec(class: MigrationClass, strategy: Strategy) -> Result<MigrationSpec> {
    let text = match class {
        MigrationClass::Split => SPLIT_SPEC,
        MigrationClass::Join => JOIN_SPEC,
        MigrationClass::Preaggregate => PREAGGREGATE_SPEC,
    };
    let mut spec = parse_spec(text)?;
    spec.strategy = strategy;
    Ok(spec)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Population {
    /// Standard TPC-C cardinalities.
    Standard,
    /// Fewer customers, orders and items.
    Reduced,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorkloadConfig {
    /// Warehouses.
    pub scale: u32,
    pub population: Population,
    /// Overrides `scale` and `population` when set.
    pub cardinalities: Option<Cardinalities>,
    pub mix: Mix,
    /// No transaction starts after this point of simulated time.
    pub duration_ms: u64,
    pub seed: u64,
    /// Latency of one round trip between two nodes.
    pub rtt_ms: f64,
    pub nodes: usize,
    pub sessions: usize,
    pub strategy: Strategy,
    pub migration: MigrationClass,
    /// Migration spec file used instead of the built-in one.
    pub spec_file: Option<PathBuf>,
    pub migration_start_ms: u64,
    pub clock: ClockMode,
    pub costs: ServiceCosts,
    /// Run the drain (lazy) or backfill (OSC) session.
    pub background: bool,
    pub drain_batch: usize,
    pub drain_pace_us: u64,
    pub osc: OscConfig,
    pub max_txns: Option<u64>,
    /// Keep the background session running after the clients stop until
    /// the migration is done.
    pub finish_migration: bool,
}

impl Default for WorkloadConfig {
    fn default() -> Self {
        WorkloadConfig {
            scale: 1,
            population: Population::Standard,
            cardinalities: None,
            mix: Mix::default(),
            duration_ms: 10_000,
            seed: 1,
            rtt_ms: 22.33,
            nodes: 3,
            sessions: 9,
            strategy: Strategy::SlsmFull,
            migration: MigrationClass::Split,
            spec_file: None,
            migration_start_ms: 1000,
            clock: ClockMode::Virtual,
            costs: ServiceCosts::default(),
            background: true,
            drain_batch: DrainConfig::default().batch_size,
            drain_pace_us: DrainConfig::default().pace_us,
            osc: OscConfig::default(),
            max_txns: None,
            finish_migration: false,
        }
    }
}

impl WorkloadConfig {
    pub fn from_toml_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn cardinalities(&self) -> Result<Cardinalities> {
        match self.cardinalities {
            Some(c) => c.validated(),
            None => match self.population {
                Population::Standard => Cardinalities::standard(self.scale),
                Population::Reduced => Cardinalities::reduced(self.scale),
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.cardinalities()?;
        self.mix.validate()?;
        if self.nodes == 0 {
            return Err(Error::Config("nodes must be at least 1".into()));
        }
        if !(self.rtt_ms.is_finite() && self.rtt_ms >= 0.0) {
            return Err(Error::Config(format!("bad rtt {}", self.rtt_ms)));
        }
        if self.drain_batch == 0 || self.osc.batch_size == 0 {
            return Err(Error::Config("batch sizes must be at least 1".into()));
        }
        Ok(())
    }

    pub fn spec(&self) -> Result<MigrationSpec> {
        match &self.spec_file {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
                let mut spec = parse_spec(&text)?;
                spec.strategy = self.strategy;
                Ok(spec)
            }
            None => migration_spec(self.migration, self.strategy),
        }
    }

    pub fn drain_config(&self) -> DrainConfig {
        DrainConfig {
            batch_size: self.drain_batch,
            pace_us: self.drain_pace_us,
            mode: DrainMode::for_strategy(self.strategy),
        }
    }
}

/// An empty cluster per `cfg`, loaded with TPC-C-lite data.
pub fn prepare_database(cfg: &WorkloadConfig) -> Result<Database> {
    cfg.validate()?;
    let cluster = Cluster::new(cfg.nodes, cfg.rtt_ms, cfg.clock)?;
    let mut db = Database::new(cluster, Catalog::new(), cfg.costs);
    load_tpcc_lite(&mut db, &cfg.cardinalities()?, cfg.seed)?;
    Ok(db)
}

/// Register the configured migration now, place its new tables and return
/// the background session that completes it.
pub fn start_migration(
    db: &mut Database,
    cfg: &WorkloadConfig,
) -> Result<(MigrationHandle, Option<Box<dyn BackgroundTask>>)> {
    let spec = cfg.spec()?;
    let now = db.now();
    let h = db.catalog.register_migration(spec, &mut db.cluster, now)?;
    tpcc::place_new_tables(db, h, &cfg.cardinalities()?)?;
    let task: Option<Box<dyn BackgroundTask>> = if cfg.strategy.is_lazy() {
        availability_probe(db, h)?;
        match cfg.background {
            true => Some(Box::new(Drainer::new(h, cfg.drain_config())?)),
            false => None,
        }
    } else {
        cfg.background.then(|| Box::new(OscDriver::new(h, cfg.osc)) as Box<dyn BackgroundTask>)
    };
    Ok((h, task))
}

fn scheduler(cfg: &WorkloadConfig, db: &Database) -> Scheduler {
    let mut sched = Scheduler::new(SchedulerConfig {
        sessions: cfg.sessions,
        duration_us: cfg.duration_ms * 1000,
        max_txns: cfg.max_txns,
        gateways: db.cluster.nodes().to_vec(),
        retry_backoff_us: 100,
        finish_background: cfg.finish_migration,
    });
    let hook_cfg = cfg.clone();
    sched.at(
        cfg.migration_start_ms * 1000,
        Box::new(move |db: &mut Database| Ok(start_migration(db, &hook_cfg)?.1.into_iter().collect())),
    );
    sched
}

fn report(cfg: &WorkloadConfig, db: &Database, out: crate::txn::sched::SchedOutput) -> MetricsReport {
    let timeline = db
        .catalog
        .migrations()
        .last()
        .map(|(_, st)| Timeline {
            registered_at_us: Some(st.registered_at),
            first_service_at_us: st.first_service_at,
            done_at_us: st.done_at,
            backfill_steps: st.backfill_steps,
        })
        .unwrap_or_default();
    MetricsReport {
        strategy: cfg.strategy,
        migration: cfg.migration,
        rtt_ms: cfg.rtt_ms,
        nodes: cfg.nodes,
        seed: cfg.seed,
        tps: tps_windows(&out.txns, out.end_us),
        txns: out.txns,
        statements: out.statements,
        progress: out.progress,
        timeline,
        end_us: out.end_us,
        errors: out.errors,
        wounds: db.wounds(),
    }
}

/// Run the workload on a prepared database; returns the report and the
/// final database.
pub fn run_prepared(mut db: Database, cfg: &WorkloadConfig) -> Result<(MetricsReport, Database)> {
    cfg.validate()?;
    let mut workload = TpccWorkload::new(cfg.seed ^ 0x5eed, cfg.mix, cfg.cardinalities()?)?;
    let sched = scheduler(cfg, &db);
    let out = match cfg.clock {
        ClockMode::Virtual => sched.run(&mut db, &mut workload)?,
        ClockMode::Wall => {
            let shared = Mutex::new(db);
            let wl: Mutex<TpccWorkload> = Mutex::new(workload);
            let wl_dyn: &Mutex<dyn Workload> = &wl;
            let out = sched.run_wall(&shared, wl_dyn)?;
            db = shared.into_inner().map_err(|_| Error::Config("database lock poisoned".into()))?;
            out
        }
    };
    let r = report(cfg, &db, out);
    Ok((r, db))
}

pub fn run_benchmark(cfg: &WorkloadConfig) -> Result<MetricsReport> {
    let db = prepare_database(cfg)?;
    Ok(run_prepared(db, cfg)?.0)
}
