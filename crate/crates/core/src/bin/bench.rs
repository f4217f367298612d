use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use lazymig::bench::hop::{export_hop_ledger, hop_audit, Category, HopOutcome};
use lazymig::bench::{export_report, run_benchmark, Population, WorkloadConfig, OUT_DIR_ENV};
use lazymig::catalog::{MigrationClass, Strategy};
use lazymig::kvstore::ClockMode;
use lazymig::Result;

#[derive(Parser)]
#[command(name = "bench", about = "Online schema migration benchmark on a simulated cluster")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run TPC-C-lite with a migration started mid-run and write CSV metrics.
    Run(RunArgs),
    /// Count round trips of one lazy select per node placement.
    HopAudit {
        /// Strategies to audit; all lazy strategies when omitted.
        #[arg(long)]
        strategy: Vec<Strategy>,
        /// One placement category; all when omitted.
        #[arg(long)]
        category: Option<Category>,
        /// Write the hop ledger (txn_id, strategy, category, round_trips) here.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Complete a migration with no user load and report its progress.
    Drain(DrainArgs),
}

#[derive(Args)]
struct RunArgs {
    /// TOML file with a full workload config; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    scale: Option<u32>,
    /// Use the reduced population (fewer customers, orders and items).
    #[arg(long)]
    reduced: bool,
    #[arg(long)]
    strategy: Option<Strategy>,
    #[arg(long)]
    migration: Option<MigrationClass>,
    /// Migration spec file instead of the built-in one.
    #[arg(long)]
    spec: Option<PathBuf>,
    /// Round-trip latency between nodes, in ms.
    #[arg(long)]
    rtt: Option<f64>,
    #[arg(long)]
    nodes: Option<usize>,
    #[arg(long)]
    sessions: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Simulated run length, in ms.
    #[arg(long)]
    duration: Option<u64>,
    /// When the migration starts, in ms.
    #[arg(long)]
    migration_start: Option<u64>,
    #[arg(long)]
    clock: Option<ClockMode>,
    /// Output directory; defaults to $BENCH_OUT_DIR, then `bench_out`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct DrainArgs {
    /// Units per drain (or backfill) transaction.
    #[arg(long, default_value_t = 128)]
    batch: usize,
    /// Pause between batches, in ticks (ms).
    #[arg(long, default_value_t = 1)]
    pace: u64,
    #[arg(long, default_value = "slsm_full")]
    strategy: Strategy,
    #[arg(long, default_value = "split")]
    migration: MigrationClass,
    #[arg(long, default_value_t = 1)]
    scale: u32,
    /// Use the standard population instead of the reduced one.
    #[arg(long)]
    standard: bool,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

fn run(args: RunArgs) -> Result<()> {
    let mut cfg = match &args.config {
        Some(p) => WorkloadConfig::from_toml_file(p)?,
        None => WorkloadConfig::default(),
    };
    if let Some(x) = args.scale {
        cfg.scale = x;
    }
    if args.reduced {
        cfg.population = Population::Reduced;
    }
    if let Some(x) = args.strategy {
        cfg.strategy = x;
    }
    if let Some(x) = args.migration {
        cfg.migration = x;
    }
    if let Some(x) = args.spec {
        cfg.spec_file = Some(x);
    }
    if let Some(x) = args.rtt {
        cfg.rtt_ms = x;
    }
    if let Some(x) = args.nodes {
        cfg.nodes = x;
    }
    if let Some(x) = args.sessions {
        cfg.sessions = x;
    }
    if let Some(x) = args.seed {
        cfg.seed = x;
    }
    if let Some(x) = args.duration {
        cfg.duration_ms = x;
    }
    if let Some(x) = args.migration_start {
        cfg.migration_start_ms = x;
    }
    if let Some(x) = args.clock {
        cfg.clock = x;
    }
    let out = args
        .out
        .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("bench_out"));
    let report = run_benchmark(&cfg)?;
    export_report(&report, &out)?;
    print!("{}", report.summary());
    println!("output: {}", out.display());
    Ok(())
}

fn hop(strategies: Vec<Strategy>, category: Option<Category>, csv: Option<PathBuf>) -> Result<()> {
    let strategies: Vec<Strategy> = if strategies.is_empty() {
        Strategy::ALL.into_iter().filter(|s| s.is_lazy()).collect()
    } else {
        strategies
    };
    if let Some(path) = csv {
        export_hop_ledger(&strategies, &path)?;
        println!("ledger: {}", path.display());
    }
    let categories: Vec<Category> = category.map_or(Category::ALL.to_vec(), |c| vec![c]);
    for s in &strategies {
        for c in &categories {
            match hop_audit(*c, *s)? {
                HopOutcome::Measured(a) => println!("{s:<14} {c:<16} {}", a.round_trips),
                HopOutcome::Impossible => println!("{s:<14} {c:<16} impossible"),
            }
        }
    }
    Ok(())
}

fn drain(args: DrainArgs) -> Result<()> {
    let cfg = WorkloadConfig {
        scale: args.scale,
        population: if args.standard {
            Population::Standard
        } else {
            Population::Reduced
        },
        strategy: args.strategy,
        migration: args.migration,
        seed: args.seed,
        sessions: 0,
        duration_ms: 0,
        migration_start_ms: 0,
        drain_batch: args.batch,
        drain_pace_us: args.pace * 1000,
        osc: lazymig::migration::OscConfig {
            batch_size: args.batch,
            pace_us: args.pace * 1000,
        },
        finish_migration: true,
        ..WorkloadConfig::default()
    };
    let report = run_benchmark(&cfg)?;
    let units: u64 = report.progress.iter().map(|p| p.rows_migrated).sum();
    println!("strategy: {}", cfg.strategy);
    println!("migration: {}", cfg.migration);
    println!("steps: {}", report.progress.len());
    println!("units_migrated: {units}");
    let tick = |x: Option<u64>| x.map_or("-".into(), |v| (v / 1000).to_string());
    println!("first_service_tick: {}", tick(report.timeline.first_service_at_us));
    println!("done_tick: {}", tick(report.timeline.done_at_us));
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let r = match cli.cmd {
        Cmd::Run(a) => run(a),
        Cmd::HopAudit {
            strategy,
            category,
            csv,
        } => hop(strategy, category, csv),
        Cmd::Drain(a) => drain(a),
    };
    match r {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
