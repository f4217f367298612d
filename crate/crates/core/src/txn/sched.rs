//! Client sessions and background tasks on one timeline.
//!
//! In virtual mode the session with the smallest next-event time runs next
//! (ties go to the lowest session index, then to background tasks), so a run
//! is a pure function of its inputs. Wall mode runs each session on its own
//! thread and sleeps for the simulated cost of every statement.

use std::collections::BTreeMap;
use std::sync::Mutex;
use std::time::{Duration, Instant};

use serde::Serialize;

use crate::catalog::Catalog;
use crate::error::{Error, Result};
use crate::kvstore::{Key, NodeId};

use super::{Database, Statement, StatementResult, TxnId};

/// A transaction as a function of the results of its earlier statements.
/// Restarting it replays the function from the first statement.
pub trait TxnProgram: Send {
    fn kind(&self) -> &str;

    /// Statement `i`, given the results of statements `0..i`; `None` commits.
    fn statement(&self, i: usize, results: &[StatementResult], db: &Database) -> Option<Statement>;
}

/// Source of transactions for client sessions.
pub trait Workload: Send {
    fn next_program(&mut self, session: usize, db: &Database) -> Box<dyn TxnProgram>;
}

pub enum BgAction {
    Run(Statement),
    Sleep(u64),
    Done,
}

/// A background session: a sequence of single-statement transactions.
pub trait BackgroundTask: Send {
    fn name(&self) -> String;

    /// Pause after each committed step, in microseconds.
    fn pace_us(&self) -> u64;

    fn next_action(&mut self, db: &mut Database) -> Result<BgAction>;

    fn on_commit(&mut self, db: &mut Database, result: &StatementResult);

    fn cursor(&self, _db: &Database) -> Option<Key> {
        None
    }
}

/// One-shot action at a point in time; may start background tasks.
pub type Hook = Box<dyn FnOnce(&mut Database) -> Result<Vec<Box<dyn BackgroundTask>>> + Send>;

/// A background task with its in-flight statement, if any.
type ActiveTask = (Box<dyn BackgroundTask>, Option<(TxnId, Statement)>);

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SchedulerConfig {
    pub sessions: usize,
    /// No transaction starts at or after this time.
    pub duration_us: u64,
    pub max_txns: Option<u64>,
    /// Session `i` connects to `gateways[i % len]`.
    pub gateways: Vec<NodeId>,
    pub retry_backoff_us: u64,
    /// Keep running background tasks after the clients stop.
    pub finish_background: bool,
}

impl Default for SchedulerConfig {
    fn default() -> Self {
        SchedulerConfig {
            sessions: 1,
            duration_us: 1_000_000,
            max_txns: None,
            gateways: vec![1],
            retry_backoff_us: 100,
            finish_background: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TxnRecord {
    pub seq: u64,
    pub session: usize,
    pub kind: String,
    pub start_us: u64,
    pub end_us: u64,
    pub latency_us: u64,
    pub round_trips: u64,
    pub service_us: u64,
    pub statements: u32,
    pub restarts: u32,
    pub new_schema: bool,
    pub committed: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct StmtRecord {
    pub txn_seq: u64,
    pub kind: String,
    pub table: String,
    pub at_us: u64,
    pub latency_us: u64,
    pub round_trips: u64,
    pub service_us: u64,
    pub fused: bool,
    pub migrated_units: u64,
    pub new_schema: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ProgressRecord {
    pub at_us: u64,
    pub task: String,
    pub cursor: String,
    pub rows_migrated: u64,
}

#[derive(Debug, Clone, Default)]
pub struct SchedOutput {
    pub txns: Vec<TxnRecord>,
    pub statements: Vec<StmtRecord>,
    pub progress: Vec<ProgressRecord>,
    /// Failures that were not retried, with the error text.
    pub errors: Vec<String>,
    pub end_us: u64,
}

/// Whether `table` is a new table of any migration.
pub fn is_new_table(catalog: &Catalog, table: &str) -> bool {
    catalog
        .migrations()
        .any(|(m, _)| m.targets.iter().any(|t| t.name == table))
}

fn restartable(e: &Error) -> bool {
    matches!(
        e,
        Error::Aborted { .. } | Error::ObsoleteSchema(_) | Error::NotYetPublic(_)
    )
}

/// Bookkeeping for the transaction a client is running.
struct Attempt {
    seq: u64,
    program: Box<dyn TxnProgram>,
    txn: Option<TxnId>,
    priority: Option<u64>,
    results: Vec<StatementResult>,
    start: u64,
    restarts: u32,
    round_trips: u64,
    service_us: u64,
    statements: u32,
    new_schema: bool,
}

impl Attempt {
    fn new(seq: u64, program: Box<dyn TxnProgram>, start: u64) -> Self {
        Attempt {
            seq,
            program,
            txn: None,
            priority: None,
            results: Vec::new(),
            start,
            restarts: 0,
            round_trips: 0,
            service_us: 0,
            statements: 0,
            new_schema: false,
        }
    }

    fn record(&self, session: usize, end: u64, committed: bool) -> TxnRecord {
        TxnRecord {
            seq: self.seq,
            session,
            kind: self.program.kind().to_string(),
            start_us: self.start,
            end_us: end,
            latency_us: end - self.start,
            round_trips: self.round_trips,
            service_us: self.service_us,
            statements: self.statements,
            restarts: self.restarts,
            new_schema: self.new_schema,
            committed,
        }
    }

    fn begin(&mut self, db: &mut Database, gateway: NodeId) -> TxnId {
        if let Some(t) = self.txn {
            return t;
        }
        let id = match self.priority {
            Some(p) => db.begin_with_priority(gateway, p),
            None => db.begin(gateway),
        };
        self.priority = Some(db.transaction(id).expect("just begun").priority);
        self.txn = Some(id);
        id
    }

    fn restart(&mut self, db: &mut Database) {
        if let Some(t) = self.txn.take() {
            let _ = db.abort(t);
        }
        self.results.clear();
        self.restarts += 1;
    }
}

/// What one client step produced.
enum StepOutcome {
    /// Busy until the given time.
    Busy(u64),
    Blocked(TxnId),
    Restarted,
    Finished(TxnRecord),
}

fn client_step(
    db: &mut Database,
    a: &mut Attempt,
    session: usize,
    gateway: NodeId,
    now: u64,
    out: &mut SchedOutput,
) -> Result<StepOutcome> {
    let txn = a.begin(db, gateway);
    let Some(stmt) = a.program.statement(a.results.len(), &a.results, db) else {
        return match db.commit(txn) {
            Ok(_) => {
                a.txn = None;
                Ok(StepOutcome::Finished(a.record(session, now, true)))
            }
            Err(e) if restartable(&e) => {
                a.txn = None;
                a.restart(db);
                Ok(StepOutcome::Restarted)
            }
            Err(e) => Err(e),
        };
    };
    match db.execute(txn, &stmt) {
        Ok(r) => {
            let table = stmt.table().unwrap_or_default().to_string();
            let new_schema = is_new_table(&db.catalog, &table);
            a.new_schema |= new_schema;
            a.round_trips += r.cost.round_trips;
            a.service_us += r.cost.service_us;
            a.statements += 1;
            out.statements.push(StmtRecord {
                txn_seq: a.seq,
                kind: a.program.kind().to_string(),
                table,
                at_us: now,
                latency_us: r.cost.elapsed_us,
                round_trips: r.cost.round_trips,
                service_us: r.cost.service_us,
                fused: r.cost.fused,
                migrated_units: r.cost.migrated_units,
                new_schema,
            });
            let busy = now + r.cost.elapsed_us;
            a.results.push(r);
            Ok(StepOutcome::Busy(busy))
        }
        Err(Error::Blocked { holder, .. }) => Ok(StepOutcome::Blocked(holder)),
        Err(e) if restartable(&e) => {
            a.restart(db);
            Ok(StepOutcome::Restarted)
        }
        Err(e) => {
            if let Some(t) = a.txn.take() {
                db.abort(t)?;
            }
            out.errors.push(format!("{}: {e}", a.program.kind()));
            Ok(StepOutcome::Finished(a.record(session, now, false)))
        }
    }
}

struct Client {
    gateway: NodeId,
    next: u64,
    attempt: Option<Attempt>,
    finished: bool,
}

struct Task {
    task: Box<dyn BackgroundTask>,
    next: u64,
    txn: Option<TxnId>,
    priority: Option<u64>,
    stmt: Option<Statement>,
    done: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Actor {
    Client(usize),
    Task(usize),
}

pub struct Scheduler {
    cfg: SchedulerConfig,
    events: Vec<(u64, Hook)>,
    tasks: Vec<(u64, Box<dyn BackgroundTask>)>,
}

impl Scheduler {
    pub fn new(cfg: SchedulerConfig) -> Self {
        Scheduler {
            cfg,
            events: Vec::new(),
            tasks: Vec::new(),
        }
    }

    /// Run `hook` at time `at`.
    pub fn at(&mut self, at: u64, hook: Hook) {
        self.events.push((at, hook));
    }

    pub fn spawn(&mut self, start: u64, task: Box<dyn BackgroundTask>) {
        self.tasks.push((start, task));
    }

    /// Run on the virtual clock until the clients stop (and, if configured,
    /// every background task is done).
    pub fn run(self, db: &mut Database, workload: &mut dyn Workload) -> Result<SchedOutput> {
        let cfg = self.cfg;
        if cfg.gateways.is_empty() {
            return Err(Error::Config("no gateways".into()));
        }
        let mut events = self.events;
        events.sort_by_key(|(t, _)| *t);
        let mut events: std::collections::VecDeque<(u64, Hook)> = events.into();
        let mut clients: Vec<Client> = (0..cfg.sessions)
            .map(|i| Client {
                gateway: cfg.gateways[i % cfg.gateways.len()],
                next: db.now(),
                attempt: None,
                finished: false,
            })
            .collect();
        let mut tasks: Vec<Task> = self
            .tasks
            .into_iter()
            .map(|(next, task)| Task {
                task,
                next,
                txn: None,
                priority: None,
                stmt: None,
                done: false,
            })
            .collect();
        let mut owner: BTreeMap<TxnId, Actor> = BTreeMap::new();
        let mut out = SchedOutput::default();
        let mut started: u64 = 0;

        loop {
            let clients_left = clients.iter().any(|c| !c.finished);
            let tasks_left = tasks.iter().any(|t| !t.done);
            if !clients_left && !(cfg.finish_background && (tasks_left || !events.is_empty())) {
                break;
            }
            let next_actor = clients
                .iter()
                .enumerate()
                .filter(|(_, c)| !c.finished)
                .map(|(i, c)| (c.next, 0, i))
                .chain(
                    tasks
                        .iter()
                        .enumerate()
                        .filter(|(_, t)| !t.done)
                        .map(|(i, t)| (t.next, 1, i)),
                )
                .min();
            if let Some(&(te, _)) = events.front() {
                if next_actor.is_none_or(|(t, _, _)| te <= t) {
                    let (te, hook) = events.pop_front().expect("front exists");
                    db.set_now(te.max(db.now()));
                    for task in hook(db)? {
                        tasks.push(Task {
                            task,
                            next: db.now(),
                            txn: None,
                            priority: None,
                            stmt: None,
                            done: false,
                        });
                    }
                    continue;
                }
            }
            let Some((t, kind, i)) = next_actor else { break };
            db.set_now(t);
            out.end_us = out.end_us.max(t);
            let holder_time = |owner: &BTreeMap<TxnId, Actor>, clients: &[Client], tasks: &[Task], h: TxnId| match owner
                .get(&h)
            {
                Some(Actor::Client(j)) => clients[*j].next,
                Some(Actor::Task(j)) => tasks[*j].next,
                None => 0,
            };
            if kind == 0 {
                let c = &mut clients[i];
                if c.attempt.is_none() {
                    if t >= cfg.duration_us || cfg.max_txns.is_some_and(|m| started >= m) {
                        c.finished = true;
                        continue;
                    }
                    let program = workload.next_program(i, db);
                    started += 1;
                    c.attempt = Some(Attempt::new(started, program, t));
                }
                let gateway = c.gateway;
                let a = c.attempt.as_mut().expect("set above");
                let outcome = client_step(db, a, i, gateway, t, &mut out)?;
                if let Some(id) = a.txn {
                    owner.insert(id, Actor::Client(i));
                }
                match outcome {
                    StepOutcome::Busy(until) => clients[i].next = until,
                    StepOutcome::Blocked(h) => {
                        let ht = holder_time(&owner, &clients, &tasks, h);
                        clients[i].next = ht.max(t + cfg.retry_backoff_us);
                    }
                    StepOutcome::Restarted => clients[i].next = t + cfg.retry_backoff_us,
                    StepOutcome::Finished(rec) => {
                        out.txns.push(rec);
                        clients[i].attempt = None;
                        clients[i].next = t;
                    }
                }
                owner.retain(|id, _| db.transaction(*id).is_some());
            } else {
                let pace;
                let task = &mut tasks[i];
                if task.stmt.is_none() {
                    match task.task.next_action(db)? {
                        BgAction::Run(s) => task.stmt = Some(s),
                        BgAction::Sleep(d) => {
                            task.next = t + d;
                            continue;
                        }
                        BgAction::Done => {
                            task.done = true;
                            continue;
                        }
                    }
                }
                let gateway = cfg.gateways[0];
                let txn = match task.txn {
                    Some(x) => x,
                    None => {
                        let id = match task.priority {
                            Some(p) => db.begin_with_priority(gateway, p),
                            None => db.begin(gateway),
                        };
                        task.priority = db.transaction(id).map(|x| x.priority);
                        task.txn = Some(id);
                        owner.insert(id, Actor::Task(i));
                        id
                    }
                };
                let stmt = task.stmt.clone().expect("planned");
                match db.execute(txn, &stmt).and_then(|r| db.commit(txn).map(|_| r)) {
                    Ok(r) => {
                        let task = &mut tasks[i];
                        task.task.on_commit(db, &r);
                        pace = task.task.pace_us();
                        out.progress.push(ProgressRecord {
                            at_us: t,
                            task: task.task.name(),
                            cursor: task.task.cursor(db).map(|k| k.to_hex()).unwrap_or_default(),
                            rows_migrated: r.affected as u64,
                        });
                        task.txn = None;
                        task.priority = None;
                        task.stmt = None;
                        task.next = t + r.cost.elapsed_us + pace;
                    }
                    Err(Error::Blocked { holder, .. }) => {
                        let ht = holder_time(&owner, &clients, &tasks, holder);
                        tasks[i].next = ht.max(t + cfg.retry_backoff_us);
                    }
                    Err(e) if restartable(&e) => {
                        let task = &mut tasks[i];
                        let _ = db.abort(txn);
                        task.txn = None;
                        task.stmt = None;
                        task.next = t + cfg.retry_backoff_us;
                    }
                    Err(e) => return Err(e),
                }
                owner.retain(|id, _| db.transaction(*id).is_some());
            }
        }
        // transactions still open when the run stops are abandoned
        for c in &mut clients {
            if let Some(a) = c.attempt.as_mut() {
                if let Some(txn) = a.txn.take() {
                    db.abort(txn)?;
                }
            }
        }
        for task in &mut tasks {
            if let Some(txn) = task.txn.take() {
                db.abort(txn)?;
            }
        }
        Ok(out)
    }

    /// Run with one thread per session on the wall clock. Statement costs
    /// are slept outside the database lock.
    pub fn run_wall(self, db: &Mutex<Database>, workload: &Mutex<dyn Workload>) -> Result<SchedOutput> {
        let cfg = self.cfg;
        if cfg.gateways.is_empty() {
            return Err(Error::Config("no gateways".into()));
        }
        let origin = Instant::now();
        let clock = move || origin.elapsed().as_micros() as u64;
        let out = Mutex::new(SchedOutput::default());
        let started = Mutex::new(0u64);
        let failure: Mutex<Option<Error>> = Mutex::new(None);
        let sleep_us = |us: u64| std::thread::sleep(Duration::from_micros(us));
        let tasks = Mutex::new(self.tasks);
        let events = self.events;
        let fail = |e: Error| {
            failure.lock().expect("poisoned").get_or_insert(e);
        };

        std::thread::scope(|s| {
            s.spawn(|| {
                let mut events = events;
                events.sort_by_key(|(t, _)| *t);
                for (at, hook) in events {
                    let now = clock();
                    if at > now {
                        sleep_us(at - now);
                    }
                    let mut d = db.lock().expect("poisoned");
                    d.set_now(clock());
                    match hook(&mut d) {
                        Ok(new) => tasks
                            .lock()
                            .expect("poisoned")
                            .extend(new.into_iter().map(|t| (0, t))),
                        Err(e) => fail(e),
                    }
                }
            });
            for i in 0..cfg.sessions {
                let gateway = cfg.gateways[i % cfg.gateways.len()];
                let (out, started, cfg) = (&out, &started, &cfg);
                s.spawn(move || loop {
                    let now = clock();
                    {
                        let mut n = started.lock().expect("poisoned");
                        if now >= cfg.duration_us || cfg.max_txns.is_some_and(|m| *n >= m) {
                            return;
                        }
                        *n += 1;
                    }
                    let seq = *started.lock().expect("poisoned");
                    let program = {
                        let d = db.lock().expect("poisoned");
                        workload.lock().expect("poisoned").next_program(i, &d)
                    };
                    let mut a = Attempt::new(seq, program, now);
                    loop {
                        let (outcome, mut local) = {
                            let mut d = db.lock().expect("poisoned");
                            let t = clock();
                            d.set_now(t);
                            let mut local = SchedOutput::default();
                            (client_step(&mut d, &mut a, i, gateway, t, &mut local), local)
                        };
                        {
                            let mut o = out.lock().expect("poisoned");
                            o.statements.append(&mut local.statements);
                            o.errors.append(&mut local.errors);
                        }
                        match outcome {
                            Ok(StepOutcome::Busy(until)) => sleep_us(until.saturating_sub(clock())),
                            Ok(StepOutcome::Blocked(_)) | Ok(StepOutcome::Restarted) => {
                                sleep_us(cfg.retry_backoff_us)
                            }
                            Ok(StepOutcome::Finished(rec)) => {
                                out.lock().expect("poisoned").txns.push(rec);
                                break;
                            }
                            Err(e) => {
                                fail(e);
                                return;
                            }
                        }
                    }
                });
            }
            s.spawn(|| {
                // background tasks share one thread and run until the clients stop
                let mut active: Vec<ActiveTask> = Vec::new();
                loop {
                    active.extend(tasks.lock().expect("poisoned").drain(..).map(|(_, t)| (t, None)));
                    if clock() >= cfg.duration_us && (!cfg.finish_background || active.is_empty()) {
                        break;
                    }
                    if active.is_empty() {
                        sleep_us(cfg.retry_backoff_us);
                        continue;
                    }
                    let mut idx = 0;
                    while idx < active.len() {
                        let mut pause = 0;
                        let mut finished = false;
                        {
                            let mut d = db.lock().expect("poisoned");
                            d.set_now(clock());
                            let (task, pending) = &mut active[idx];
                            let planned = match pending.take() {
                                Some(p) => Some(p),
                                None => match task.next_action(&mut d) {
                                    Ok(BgAction::Run(stmt)) => Some((d.begin(cfg.gateways[0]), stmt)),
                                    Ok(BgAction::Sleep(us)) => {
                                        pause = us;
                                        None
                                    }
                                    Ok(BgAction::Done) => {
                                        finished = true;
                                        None
                                    }
                                    Err(e) => {
                                        fail(e);
                                        finished = true;
                                        None
                                    }
                                },
                            };
                            if let Some((txn, stmt)) = planned {
                                match d.execute(txn, &stmt).and_then(|r| d.commit(txn).map(|_| r)) {
                                    Ok(r) => {
                                        task.on_commit(&mut d, &r);
                                        let at = d.now();
                                        out.lock().expect("poisoned").progress.push(ProgressRecord {
                                            at_us: at,
                                            task: task.name(),
                                            cursor: task.cursor(&d).map(|k| k.to_hex()).unwrap_or_default(),
                                            rows_migrated: r.affected as u64,
                                        });
                                        pause = r.cost.elapsed_us + task.pace_us();
                                    }
                                    Err(Error::Blocked { .. }) => {
                                        *pending = Some((txn, stmt));
                                        pause = cfg.retry_backoff_us;
                                    }
                                    Err(e) if restartable(&e) => {
                                        let _ = d.abort(txn);
                                        pause = cfg.retry_backoff_us;
                                    }
                                    Err(e) => {
                                        let _ = d.abort(txn);
                                        fail(e);
                                        finished = true;
                                    }
                                }
                            }
                        }
                        if finished {
                            active.remove(idx);
                        } else {
                            idx += 1;
                        }
                        sleep_us(pause);
                    }
                }
                let mut d = db.lock().expect("poisoned");
                for (_, pending) in active {
                    if let Some((txn, _)) = pending {
                        let _ = d.abort(txn);
                    }
                }
            });
        });
        if let Some(e) = failure.into_inner().expect("poisoned") {
            return Err(e);
        }
        let mut out = out.into_inner().expect("poisoned");
        out.end_us = clock();
        out.txns.sort_by_key(|r| r.seq);
        Ok(out)
    }
}
