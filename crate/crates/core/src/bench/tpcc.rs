//! TPC-C-lite: seven tables, five transaction profiles with simplified
//! logic, and a district-partitioned placement over the cluster.

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::catalog::{CmpOp, ColumnDef, KeyMode, MigrationHandle, Predicate};
use crate::error::{Error, Result};
use crate::kvstore::{encode_key, table_end, table_start, ColumnType, Decimal, Key, NodeId, RowValue, Scalar, TableId};
use crate::migration::new_schema_live;
use crate::txn::sched::{TxnProgram, Workload};
use crate::txn::{Assignment, Database, Statement, StatementResult};

pub const WAREHOUSE: TableId = 11;
pub const DISTRICT: TableId = 12;
pub const CUSTOMER: TableId = 13;
pub const ITEM: TableId = 14;
pub const ORDERS: TableId = 15;
pub const ORDER_LINE: TableId = 16;
pub const STOCK: TableId = 17;

/// Fixed delivery date written by Delivery.
const DELIVERY_DATE: i64 = 20_240_101;
/// Item ranges per warehouse for `item` and `stock`.
const ITEM_CHUNKS: u32 = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Cardinalities {
    pub warehouses: u32,
    /// Per warehouse.
    pub districts: u32,
    /// Per district.
    pub customers: u32,
    pub items: u32,
    /// Initial orders per district.
    pub orders: u32,
    pub min_lines: u32,
    pub max_lines: u32,
}

impl Default for Cardinalities {
    fn default() -> Self {
        Cardinalities {
            warehouses: 1,
            districts: 10,
            customers: 3000,
            items: 100_000,
            orders: 3000,
            min_lines: 5,
            max_lines: 15,
        }
    }
}

impl Cardinalities {
    /// Standard TPC-C cardinalities for `scale` warehouses.
    pub fn standard(scale: u32) -> Result<Self> {
        Cardinalities {
            warehouses: scale,
            ..Default::default()
        }
        .validated()
    }

    /// A tenth of the standard customers and orders and a hundredth of the
    /// items, for quick runs.
    pub fn reduced(scale: u32) -> Result<Self> {
        Cardinalities {
            warehouses: scale,
            customers: 300,
            items: 1000,
            orders: 300,
            ..Default::default()
        }
        .validated()
    }

    pub fn validated(self) -> Result<Self> {
        if self.warehouses == 0 {
            return Err(Error::Config("scale must be at least 1".into()));
        }
        if self.districts == 0 || self.customers == 0 || self.items == 0 {
            return Err(Error::Config("districts, customers and items must be positive".into()));
        }
        if self.min_lines == 0 || self.min_lines > self.max_lines {
            return Err(Error::Config("need 1 <= min_lines <= max_lines".into()));
        }
        Ok(self)
    }

    /// First order id that is not yet delivered at load time.
    pub fn first_undelivered(&self) -> u32 {
        self.orders * 7 / 10 + 1
    }
}

/// Table id, name, columns and primary key.
type TableDef = (TableId, &'static str, &'static [(&'static str, ColumnType)], &'static [&'static str]);

fn create_schema(db: &mut Database) -> Result<()> {
    use ColumnType::{Decimal as Dec, Int, Text};
    let tables: [TableDef; 7] = [
        (
            WAREHOUSE,
            "warehouse",
            &[("w_id", Int), ("w_name", Text), ("w_ytd", Dec)],
            &["w_id"],
        ),
        (
            DISTRICT,
            "district",
            &[
                ("d_w_id", Int),
                ("d_id", Int),
                ("d_name", Text),
                ("d_ytd", Dec),
                ("d_next_o_id", Int),
                ("d_next_delivery_o_id", Int),
            ],
            &["d_w_id", "d_id"],
        ),
        (
            CUSTOMER,
            "customer",
            &[
                ("c_w_id", Int),
                ("c_d_id", Int),
                ("c_id", Int),
                ("c_first", Text),
                ("c_last", Text),
                ("c_street", Text),
                ("c_city", Text),
                ("c_state", Text),
                ("c_credit", Text),
                ("c_discount", Dec),
                ("c_balance", Dec),
                ("c_ytd_payment", Dec),
                ("c_payment_cnt", Int),
                ("c_delivery_cnt", Int),
            ],
            &["c_w_id", "c_d_id", "c_id"],
        ),
        (
            ITEM,
            "item",
            &[("i_id", Int), ("i_name", Text), ("i_price", Dec)],
            &["i_id"],
        ),
        (
            ORDERS,
            "orders",
            &[
                ("o_w_id", Int),
                ("o_d_id", Int),
                ("o_id", Int),
                ("o_c_id", Int),
                ("o_ol_cnt", Int),
                ("o_carrier_id", Int),
            ],
            &["o_w_id", "o_d_id", "o_id"],
        ),
        (
            ORDER_LINE,
            "order_line",
            &[
                ("ol_w_id", Int),
                ("ol_d_id", Int),
                ("ol_o_id", Int),
                ("ol_number", Int),
                ("ol_i_id", Int),
                ("ol_supply_w_id", Int),
                ("ol_quantity", Int),
                ("ol_amount", Dec),
                ("ol_delivery_d", Int),
            ],
            &["ol_w_id", "ol_d_id", "ol_o_id", "ol_number"],
        ),
        (
            STOCK,
            "stock",
            &[
                ("s_w_id", Int),
                ("s_i_id", Int),
                ("s_quantity", Int),
                ("s_ytd", Int),
                ("s_order_cnt", Int),
                ("s_dist_info", Text),
            ],
            &["s_w_id", "s_i_id"],
        ),
    ];
    for (id, name, cols, pk) in tables {
        let cols = cols.iter().map(|(n, t)| ColumnDef::new(*n, *t)).collect();
        db.catalog.create_table_with_id(id, name, cols, pk)?;
    }
    Ok(())
}

fn alnum(rng: &mut ChaCha8Rng, min: usize, max: usize) -> String {
    const CHARS: &[u8] = b"abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789";
    let len = rng.gen_range(min..=max);
    (0..len).map(|_| CHARS[rng.gen_range(0..CHARS.len())] as char).collect()
}

fn last_name(n: u32) -> String {
    const SYL: [&str; 10] = ["BAR", "OUGHT", "ABLE", "PRI", "PRES", "ESE", "ANTI", "CALLY", "ATION", "EING"];
    let n = n % 1000;
    format!("{}{}{}", SYL[(n / 100) as usize], SYL[(n / 10 % 10) as usize], SYL[(n % 10) as usize])
}

fn dec(cents: i64) -> Scalar {
    Scalar::Decimal(Decimal::from_cents(cents))
}

/// Create the schema, populate it from `seed`, and partition it by
/// district over the cluster's nodes. Expects an empty database.
pub fn load_tpcc_lite(db: &mut Database, card: &Cardinalities, seed: u64) -> Result<()> {
    let card = card.validated()?;
    if !db.cluster.is_empty() {
        return Err(Error::Config("load_tpcc_lite needs an empty cluster".into()));
    }
    create_schema(db)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let put = |db: &mut Database, table: TableId, row: Vec<Scalar>| {
        let desc = db.catalog.table_by_id(table).expect("schema created");
        let key = desc.row_key(&row);
        db.cluster.load_row(key, RowValue(row));
    };
    let int = |v: u32| Scalar::Int(v as i64);
    for i in 1..=card.items {
        let row = vec![int(i), Scalar::Text(alnum(&mut rng, 14, 24)), dec(rng.gen_range(100..=10_000))];
        put(db, ITEM, row);
    }
    let undelivered = card.first_undelivered();
    for w in 1..=card.warehouses {
        put(db, WAREHOUSE, vec![int(w), Scalar::Text(alnum(&mut rng, 6, 10)), dec(30_000_000)]);
        for i in 1..=card.items {
            let row = vec![
                int(w),
                int(i),
                Scalar::Int(rng.gen_range(10..=100)),
                Scalar::Int(0),
                Scalar::Int(0),
                Scalar::Text(alnum(&mut rng, 24, 24)),
            ];
            put(db, STOCK, row);
        }
        for d in 1..=card.districts {
            let row = vec![
                int(w),
                int(d),
                Scalar::Text(alnum(&mut rng, 6, 10)),
                dec(3_000_000),
                int(card.orders + 1),
                int(undelivered.min(card.orders + 1)),
            ];
            put(db, DISTRICT, row);
            for c in 1..=card.customers {
                let credit = if rng.gen_range(0..10) == 0 { "BC" } else { "GC" };
                let row = vec![
                    int(w),
                    int(d),
                    int(c),
                    Scalar::Text(alnum(&mut rng, 8, 16)),
                    Scalar::Text(last_name(c - 1)),
                    Scalar::Text(alnum(&mut rng, 10, 20)),
                    Scalar::Text(alnum(&mut rng, 10, 20)),
                    Scalar::Text(alnum(&mut rng, 2, 2)),
                    Scalar::Text(credit.into()),
                    dec(rng.gen_range(0..=50)),
                    dec(-1000),
                    dec(1000),
                    Scalar::Int(1),
                    Scalar::Int(0),
                ];
                put(db, CUSTOMER, row);
            }
            for o in 1..=card.orders {
                let lines = rng.gen_range(card.min_lines..=card.max_lines);
                let delivered = o < undelivered;
                let row = vec![
                    int(w),
                    int(d),
                    int(o),
                    int(rng.gen_range(1..=card.customers)),
                    int(lines),
                    Scalar::Int(if delivered { rng.gen_range(1..=10) } else { 0 }),
                ];
                put(db, ORDERS, row);
                for n in 1..=lines {
                    let row = vec![
                        int(w),
                        int(d),
                        int(o),
                        int(n),
                        int(rng.gen_range(1..=card.items)),
                        int(w),
                        Scalar::Int(5),
                        dec(if delivered { 0 } else { rng.gen_range(1..=999_999) }),
                        Scalar::Int(if delivered { DELIVERY_DATE } else { 0 }),
                    ];
                    put(db, ORDER_LINE, row);
                }
            }
        }
    }
    place_tables(db, &card)
}

/// Leaseholder of district `(w, d)` data; `shift` moves a table's ranges to
/// other nodes than the district's own.
pub fn district_node(nodes: &[NodeId], card: &Cardinalities, w: u32, d: u32, shift: usize) -> NodeId {
    let slot = ((w - 1) * card.districts + (d - 1)) as usize + shift;
    nodes[slot % nodes.len()]
}

fn split_at(db: &mut Database, key: Key, leaseholder: NodeId) -> Result<()> {
    let id = db.cluster.split_range(key)?;
    let replicas = db.cluster.nodes().to_vec();
    db.cluster.set_replicas(id, replicas, leaseholder)
}

fn place_by_district(db: &mut Database, table: TableId, card: &Cardinalities, shift: usize) -> Result<()> {
    let nodes = db.cluster.nodes().to_vec();
    db.cluster.split_range(table_end(table))?;
    split_at(db, table_start(table), district_node(&nodes, card, 1, 1, shift))?;
    for w in 1..=card.warehouses {
        for d in 1..=card.districts {
            let key = encode_key(table, &[Scalar::Int(w as i64), Scalar::Int(d as i64)]);
            split_at(db, key, district_node(&nodes, card, w, d, shift))?;
        }
    }
    Ok(())
}

fn place_tables(db: &mut Database, card: &Cardinalities) -> Result<()> {
    let nodes = db.cluster.nodes().to_vec();
    db.cluster.split_range(table_end(WAREHOUSE))?;
    split_at(db, table_start(WAREHOUSE), nodes[0])?;
    for t in [DISTRICT, CUSTOMER, ORDERS, ORDER_LINE] {
        place_by_district(db, t, card, 0)?;
    }
    for t in [ITEM, STOCK] {
        db.cluster.split_range(table_end(t))?;
        split_at(db, table_start(t), nodes[0])?;
        for w in 1..=card.warehouses {
            for k in 0..ITEM_CHUNKS {
                let first = 1 + (k * card.items / ITEM_CHUNKS) as i64;
                let key = match t {
                    ITEM if w == 1 => encode_key(t, &[Scalar::Int(first)]),
                    ITEM => continue,
                    _ => encode_key(t, &[Scalar::Int(w as i64), Scalar::Int(first)]),
                };
                let slot = ((w - 1) * ITEM_CHUNKS + k) as usize;
                split_at(db, key, nodes[slot % nodes.len()])?;
            }
        }
    }
    Ok(())
}

/// Give the plainly keyed new tables of `h` their own district ranges, on
/// different nodes than the old data. Colocated tables live in the old
/// table's ranges already.
pub fn place_new_tables(db: &mut Database, h: MigrationHandle, card: &Cardinalities) -> Result<()> {
    let m = db.catalog.migration(h).clone();
    for t in &m.targets {
        if t.key_mode == KeyMode::Plain {
            place_by_district(db, t.id, card, 1)?;
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TxnKind {
    NewOrder,
    Payment,
    OrderStatus,
    Delivery,
    StockLevel,
}

impl TxnKind {
    pub const ALL: [TxnKind; 5] = [
        TxnKind::NewOrder,
        TxnKind::Payment,
        TxnKind::OrderStatus,
        TxnKind::Delivery,
        TxnKind::StockLevel,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TxnKind::NewOrder => "new_order",
            TxnKind::Payment => "payment",
            TxnKind::OrderStatus => "order_status",
            TxnKind::Delivery => "delivery",
            TxnKind::StockLevel => "stock_level",
        }
    }
}

/// Transaction-type weights.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Mix {
    pub new_order: f64,
    pub payment: f64,
    pub order_status: f64,
    pub delivery: f64,
    pub stock_level: f64,
}

impl Default for Mix {
    fn default() -> Self {
        Mix {
            new_order: 0.45,
            payment: 0.43,
            order_status: 0.04,
            delivery: 0.04,
            stock_level: 0.04,
        }
    }
}

impl Mix {
    pub fn weights(&self) -> [(TxnKind, f64); 5] {
        [
            (TxnKind::NewOrder, self.new_order),
            (TxnKind::Payment, self.payment),
            (TxnKind::OrderStatus, self.order_status),
            (TxnKind::Delivery, self.delivery),
            (TxnKind::StockLevel, self.stock_level),
        ]
    }

    pub fn validate(&self) -> Result<()> {
        let w = self.weights();
        if w.iter().any(|(_, x)| !(x.is_finite() && *x >= 0.0)) {
            return Err(Error::Config("mix weights must be nonnegative".into()));
        }
        let sum: f64 = w.iter().map(|(_, x)| x).sum();
        if (sum - 1.0).abs() > 1e-6 {
            return Err(Error::Config(format!("mix weights sum to {sum}, not 1")));
        }
        Ok(())
    }
}

/// Which new tables serve statements right now.
#[derive(Debug, Clone, Copy, Default)]
struct Layout {
    split: bool,
    join: bool,
    agg: bool,
}

impl Layout {
    fn of(db: &Database) -> Self {
        let mut l = Layout::default();
        for (m, _) in db.catalog.migrations() {
            let live = new_schema_live(&db.catalog, m.handle);
            for t in &m.targets {
                match t.name.as_str() {
                    "customer_private" => l.split = live,
                    "order_line_stock" => l.join = live,
                    "order_line_agg" => l.agg = live,
                    _ => {}
                }
            }
        }
        l
    }

    fn cust_private(&self) -> &'static str {
        if self.split {
            "customer_private"
        } else {
            "customer"
        }
    }

    fn cust_public(&self) -> &'static str {
        if self.split {
            "customer_public"
        } else {
            "customer"
        }
    }

    fn lines(&self) -> &'static str {
        if self.join {
            "order_line_stock"
        } else {
            "order_line"
        }
    }
}

fn int(v: i64) -> Scalar {
    Scalar::Int(v)
}

fn cell(r: &StatementResult, row: usize, col: usize) -> Option<&Scalar> {
    r.rows.get(row)?.get(col)
}

fn cell_int(r: &StatementResult, row: usize, col: usize) -> Option<i64> {
    cell(r, row, col)?.as_int()
}

fn cell_cents(r: &StatementResult, row: usize, col: usize) -> Option<i64> {
    Some(cell(r, row, col)?.as_decimal()?.cents())
}

fn add(col: &str, v: impl Into<Scalar>) -> Assignment {
    Assignment::Add(col.into(), v.into())
}

fn set(col: &str, v: impl Into<Scalar>) -> Assignment {
    Assignment::Set(col.into(), v.into())
}

/// One TPC-C-lite transaction with its random inputs drawn up front.
#[derive(Debug, Clone)]
pub struct TpccProgram {
    pub kind: TxnKind,
    w: i64,
    d: i64,
    c: i64,
    amount_cents: i64,
    /// (item, quantity) per order line.
    lines: Vec<(i64, i64)>,
    pick: i64,
    carrier: i64,
}

impl TpccProgram {
    fn district(&self) -> Predicate {
        Predicate::eq("d_w_id", self.w).and("d_id", CmpOp::Eq, self.d)
    }

    fn customer(&self, c: i64) -> Predicate {
        Predicate::eq("c_w_id", self.w)
            .and("c_d_id", CmpOp::Eq, self.d)
            .and("c_id", CmpOp::Eq, c)
    }

    fn order(&self, o: i64) -> Predicate {
        Predicate::eq("o_w_id", self.w)
            .and("o_d_id", CmpOp::Eq, self.d)
            .and("o_id", CmpOp::Eq, o)
    }

    fn order_lines(&self, o: i64) -> Predicate {
        Predicate::eq("ol_w_id", self.w)
            .and("ol_d_id", CmpOp::Eq, self.d)
            .and("ol_o_id", CmpOp::Eq, o)
    }

    fn new_order(&self, i: usize, res: &[StatementResult], l: Layout) -> Option<Statement> {
        // district columns: d_w_id d_id d_name d_ytd d_next_o_id d_next_delivery_o_id
        let o_id = || cell_int(&res[0], 0, 4).map(|n| n - 1);
        Some(match i {
            0 => Statement::update("district", self.district(), vec![add("d_next_o_id", 1)]),
            1 => Statement::select(l.cust_private(), &["c_discount", "c_credit"], self.customer(self.c)),
            2 => Statement::insert(
                "orders",
                &[
                    ("o_w_id", int(self.w)),
                    ("o_d_id", int(self.d)),
                    ("o_id", int(o_id()?)),
                    ("o_c_id", int(self.c)),
                    ("o_ol_cnt", int(self.lines.len() as i64)),
                    ("o_carrier_id", int(0)),
                ],
            ),
            _ => {
                let (k, step) = ((i - 3) / 3, (i - 3) % 3);
                let &(item, qty) = self.lines.get(k)?;
                match step {
                    0 => Statement::select("item", &["i_price"], Predicate::eq("i_id", item)),
                    1 => Statement::update(
                        "stock",
                        Predicate::eq("s_w_id", self.w).and("s_i_id", CmpOp::Eq, item),
                        vec![add("s_quantity", -qty), add("s_ytd", qty), add("s_order_cnt", 1)],
                    ),
                    _ => {
                        let price = cell_cents(&res[i - 2], 0, 0)?;
                        let mut cols: Vec<(&str, Scalar)> = vec![
                            ("ol_w_id", int(self.w)),
                            ("ol_d_id", int(self.d)),
                            ("ol_o_id", int(o_id()?)),
                            ("ol_number", int(k as i64 + 1)),
                            ("ol_i_id", int(item)),
                            ("ol_supply_w_id", int(self.w)),
                            ("ol_quantity", int(qty)),
                            ("ol_amount", dec(price * qty)),
                            ("ol_delivery_d", int(0)),
                        ];
                        if l.join {
                            // stock columns: s_w_id s_i_id s_quantity s_ytd s_order_cnt s_dist_info
                            cols.push(("s_dist_info", cell(&res[i - 1], 0, 5)?.clone()));
                        }
                        Statement::insert(l.lines(), &cols)
                    }
                }
            }
        })
    }

    fn payment(&self, i: usize, l: Layout) -> Option<Statement> {
        let amt = self.amount_cents;
        Some(match i {
            0 => Statement::update(
                l.cust_private(),
                self.customer(self.c),
                vec![
                    add("c_balance", Decimal(-amt)),
                    add("c_ytd_payment", Decimal(amt)),
                    add("c_payment_cnt", 1),
                ],
            ),
            1 => Statement::select(l.cust_public(), &["c_first", "c_last", "c_city"], self.customer(self.c)),
            2 => Statement::update("district", self.district(), vec![add("d_ytd", Decimal(amt))]),
            3 => Statement::update("warehouse", Predicate::eq("w_id", self.w), vec![add("w_ytd", Decimal(amt))]),
            _ => return None,
        })
    }

    fn order_status(&self, i: usize, res: &[StatementResult], l: Layout) -> Option<Statement> {
        let o = || {
            let next = cell_int(&res[1], 0, 0)?;
            (next > 1).then(|| (next - 1 - self.pick % 20).max(1))
        };
        Some(match i {
            0 => Statement::select(l.cust_public(), &["c_first", "c_last"], self.customer(self.c)),
            1 => Statement::select("district", &["d_next_o_id"], self.district()),
            2 => Statement::select("orders", &["o_id", "o_ol_cnt", "o_carrier_id"], self.order(o()?)),
            3 if l.agg => Statement::select("order_line_agg", &["ol_total"], self.order_lines(o()?)),
            3 => Statement::select(
                l.lines(),
                &["ol_i_id", "ol_amount", "ol_delivery_d"],
                self.order_lines(o()?),
            ),
            _ => return None,
        })
    }

    fn delivery(&self, i: usize, res: &[StatementResult], l: Layout) -> Option<Statement> {
        let o = || {
            let (next, deliv) = (cell_int(&res[0], 0, 0)?, cell_int(&res[0], 0, 1)?);
            (deliv < next).then_some(deliv)
        };
        Some(match i {
            0 => Statement::select("district", &["d_next_o_id", "d_next_delivery_o_id"], self.district()),
            1 => Statement::update("district", self.district(), vec![set("d_next_delivery_o_id", o()? + 1)]),
            2 => Statement::update("orders", self.order(o()?), vec![set("o_carrier_id", self.carrier)]),
            3 => {
                res[2].rows.first()?;
                Statement::update(l.lines(), self.order_lines(o()?), vec![set("ol_delivery_d", DELIVERY_DATE)])
            }
            4 if l.agg => Statement::select("order_line_agg", &["ol_total"], self.order_lines(o()?)),
            4 => Statement::select(l.lines(), &["ol_amount"], self.order_lines(o()?)),
            5 => {
                // orders columns: o_w_id o_d_id o_id o_c_id ...
                let c = cell_int(&res[2], 0, 3)?;
                let total: i64 = res[4]
                    .rows
                    .iter()
                    .filter_map(|r| r.first()?.as_decimal())
                    .map(|x| x.cents())
                    .sum();
                Statement::update(
                    l.cust_private(),
                    self.customer(c),
                    vec![add("c_balance", Decimal(total)), add("c_delivery_cnt", 1)],
                )
            }
            _ => return None,
        })
    }

    fn stock_level(&self, i: usize, res: &[StatementResult], l: Layout) -> Option<Statement> {
        Some(match i {
            0 => Statement::select("district", &["d_next_o_id"], self.district()),
            1 => {
                let next = cell_int(&res[0], 0, 0)?;
                Statement::select(
                    l.lines(),
                    &["ol_i_id"],
                    Predicate::eq("ol_w_id", self.w)
                        .and("ol_d_id", CmpOp::Eq, self.d)
                        .and("ol_o_id", CmpOp::Ge, next - 20)
                        .and("ol_o_id", CmpOp::Lt, next),
                )
            }
            _ => {
                let items: BTreeSet<i64> = res[1].rows.iter().filter_map(|r| r.first()?.as_int()).collect();
                let item = *items.iter().nth(i - 2).filter(|_| i - 2 < 10)?;
                Statement::select(
                    "stock",
                    &["s_quantity"],
                    Predicate::eq("s_w_id", self.w).and("s_i_id", CmpOp::Eq, item),
                )
            }
        })
    }
}

impl TxnProgram for TpccProgram {
    fn kind(&self) -> &str {
        self.kind.as_str()
    }

    fn statement(&self, i: usize, res: &[StatementResult], db: &Database) -> Option<Statement> {
        let l = Layout::of(db);
        match self.kind {
            TxnKind::NewOrder => self.new_order(i, res, l),
            TxnKind::Payment => self.payment(i, l),
            TxnKind::OrderStatus => self.order_status(i, res, l),
            TxnKind::Delivery => self.delivery(i, res, l),
            TxnKind::StockLevel => self.stock_level(i, res, l),
        }
    }
}

/// Seeded generator of TPC-C-lite transactions.
#[derive(Debug, Clone)]
pub struct TpccWorkload {
    rng: ChaCha8Rng,
    mix: Mix,
    card: Cardinalities,
}

impl TpccWorkload {
    pub fn new(seed: u64, mix: Mix, card: Cardinalities) -> Result<Self> {
        mix.validate()?;
        Ok(TpccWorkload {
            rng: ChaCha8Rng::seed_from_u64(seed),
            mix,
            card: card.validated()?,
        })
    }

    pub fn next_kind(&mut self) -> TxnKind {
        let x: f64 = self.rng.gen();
        let mut acc = 0.0;
        for (k, w) in self.mix.weights() {
            acc += w;
            if x < acc {
                return k;
            }
        }
        // rounding slack goes to the last type with weight
        self.mix
            .weights()
            .iter()
            .rev()
            .find(|(_, w)| *w > 0.0)
            .map_or(TxnKind::NewOrder, |(k, _)| *k)
    }

    pub fn next_program(&mut self) -> TpccProgram {
        let kind = self.next_kind();
        let card = self.card;
        let r = &mut self.rng;
        let n_lines = r.gen_range(card.min_lines..=card.max_lines);
        let mut items = BTreeSet::new();
        let mut lines = Vec::new();
        if kind == TxnKind::NewOrder {
            while lines.len() < n_lines as usize {
                let item = r.gen_range(1..=card.items as i64);
                // one line per item, as stock rows are updated per line
                if items.insert(item) || items.len() as u32 >= card.items {
                    lines.push((item, r.gen_range(1..=10)));
                }
            }
        }
        TpccProgram {
            kind,
            w: r.gen_range(1..=card.warehouses as i64),
            d: r.gen_range(1..=card.districts as i64),
            c: r.gen_range(1..=card.customers as i64),
            amount_cents: r.gen_range(100..=500_000),
            lines,
            pick: r.gen_range(0..1000),
            carrier: r.gen_range(1..=10),
        }
    }
}

impl Workload for TpccWorkload {
    fn next_program(&mut self, _session: usize, _db: &Database) -> Box<dyn TxnProgram> {
        Box::new(TpccWorkload::next_program(self))
    }
}
