//! Order-preserving key encoding.
//!
//! Layout of a plain row key:
//!
//! ```text
//! table_id (u32, big endian) | value*
//! value := TAG_INT  i64 ^ sign-bit (8 bytes BE)
//!        | TAG_DEC  i64 ^ sign-bit (8 bytes BE)    hundredths
//!        | TAG_TEXT bytes with 0x00 escaped as 0x00 0xFF, then 0x00 0x01
//! ```
//!
//! A prefixed (interleaved) key appends `TAG_INTERLEAVE | new_table_id | value*`
//! to the old row key, and a migration marker appends `TAG_MARKER` to the key
//! of the unit it marks. Every tag byte is below `0xFF`, so `key ++ [0xFF]`
//! bounds every key that extends a complete key.

use std::cmp::Ordering;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type TableId = u32;

const TAG_INT: u8 = 0x10;
const TAG_DEC: u8 = 0x11;
const TAG_TEXT: u8 = 0x12;
pub(crate) const TAG_MARKER: u8 = 0xFD;
pub(crate) const TAG_INTERLEAVE: u8 = 0xFE;
const PREFIX_END: u8 = 0xFF;

const SIGN: u64 = 1 << 63;

/// Fixed-point decimal with two fractional digits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Decimal(pub i64);

impl Decimal {
    pub fn from_cents(cents: i64) -> Self {
        Decimal(cents)
    }

    pub fn cents(self) -> i64 {
        self.0
    }
}

impl fmt::Display for Decimal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sign = if self.0 < 0 { "-" } else { "" };
        let abs = self.0.unsigned_abs();
        write!(f, "{sign}{}.{:02}", abs / 100, abs % 100)
    }
}

impl std::str::FromStr for Decimal {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::TypeMismatch(format!("not a decimal: {s}"));
        let (neg, body) = match s.strip_prefix('-') {
            Some(rest) => (true, rest),
            None => (false, s),
        };
        let (int, frac) = body.split_once('.').unwrap_or((body, ""));
        if int.is_empty() || frac.len() > 2 {
            return Err(bad());
        }
        let int: i64 = int.parse().map_err(|_| bad())?;
        let mut frac_val: i64 = if frac.is_empty() {
            0
        } else {
            frac.parse().map_err(|_| bad())?
        };
        if frac.len() == 1 {
            frac_val *= 10;
        }
        let cents = int
            .checked_mul(100)
            .and_then(|v| v.checked_add(frac_val))
            .ok_or_else(bad)?;
        Ok(Decimal(if neg { -cents } else { cents }))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ColumnType {
    Int,
    Decimal,
    Text,
}

/// A typed column value.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Scalar {
    Int(i64),
    Decimal(Decimal),
    Text(String),
}

impl Scalar {
    pub fn column_type(&self) -> ColumnType {
        match self {
            Scalar::Int(_) => ColumnType::Int,
            Scalar::Decimal(_) => ColumnType::Decimal,
            Scalar::Text(_) => ColumnType::Text,
        }
    }

    pub fn zero(ty: ColumnType) -> Scalar {
        match ty {
            ColumnType::Int => Scalar::Int(0),
            ColumnType::Decimal => Scalar::Decimal(Decimal(0)),
            ColumnType::Text => Scalar::Text(String::new()),
        }
    }

    pub fn as_int(&self) -> Option<i64> {
        match self {
            Scalar::Int(v) => Some(*v),
            _ => None,
        }
    }

    pub fn as_decimal(&self) -> Option<Decimal> {
        match self {
            Scalar::Decimal(v) => Some(*v),
            _ => None,
        }
    }

    pub fn as_text(&self) -> Option<&str> {
        match self {
            Scalar::Text(v) => Some(v),
            _ => None,
        }
    }

    /// Numeric addition for `SET col = col + delta`.
    pub fn checked_add(&self, delta: &Scalar) -> Result<Scalar> {
        match (self, delta) {
            (Scalar::Int(a), Scalar::Int(b)) => Ok(Scalar::Int(a.wrapping_add(*b))),
            (Scalar::Decimal(a), Scalar::Decimal(b)) => {
                Ok(Scalar::Decimal(Decimal(a.0.wrapping_add(b.0))))
            }
            _ => Err(Error::TypeMismatch(format!("cannot add {delta:?} to {self:?}"))),
        }
    }
}

impl PartialOrd for Scalar {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Values of the same type compare naturally; across types the order is
/// Int < Decimal < Text, matching the tag bytes.
impl Ord for Scalar {
    fn cmp(&self, other: &Self) -> Ordering {
        match (self, other) {
            (Scalar::Int(a), Scalar::Int(b)) => a.cmp(b),
            (Scalar::Decimal(a), Scalar::Decimal(b)) => a.cmp(b),
            (Scalar::Text(a), Scalar::Text(b)) => a.as_bytes().cmp(b.as_bytes()),
            _ => tag_of(self).cmp(&tag_of(other)),
        }
    }
}

impl fmt::Display for Scalar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Scalar::Int(v) => write!(f, "{v}"),
            Scalar::Decimal(v) => write!(f, "{v}"),
            Scalar::Text(v) => write!(f, "'{v}'"),
        }
    }
}

impl From<i64> for Scalar {
    fn from(v: i64) -> Self {
        Scalar::Int(v)
    }
}

impl From<Decimal> for Scalar {
    fn from(v: Decimal) -> Self {
        Scalar::Decimal(v)
    }
}

impl From<&str> for Scalar {
    fn from(v: &str) -> Self {
        Scalar::Text(v.to_string())
    }
}

fn tag_of(v: &Scalar) -> u8 {
    match v {
        Scalar::Int(_) => TAG_INT,
        Scalar::Decimal(_) => TAG_DEC,
        Scalar::Text(_) => TAG_TEXT,
    }
}

/// An encoded storage key. Byte order is the storage order.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Key(pub Vec<u8>);

impl Key {
    pub fn as_bytes(&self) -> &[u8] {
        &self.0
    }

    pub fn to_hex(&self) -> String {
        hex::encode(&self.0)
    }

    pub fn from_hex(s: &str) -> Result<Key> {
        hex::decode(s)
            .map(Key)
            .map_err(|e| Error::Encoding(format!("bad hex key {s}: {e}")))
    }

    pub fn starts_with(&self, prefix: &Key) -> bool {
        self.0.starts_with(&prefix.0)
    }

    /// Exclusive upper bound of every key that has `self` as a prefix.
    pub fn prefix_end(&self) -> Key {
        let mut v = self.0.clone();
        v.push(PREFIX_END);
        Key(v)
    }

    /// Key of the migration marker attached to this unit key.
    pub fn marker(&self) -> Key {
        let mut v = self.0.clone();
        v.push(TAG_MARKER);
        Key(v)
    }

    /// Table id in the first four bytes, if present.
    pub fn table_id(&self) -> Option<TableId> {
        let b: [u8; 4] = self.0.get(..4)?.try_into().ok()?;
        Some(TableId::from_be_bytes(b))
    }

    /// Smallest key strictly greater than `self`.
    pub fn successor(&self) -> Key {
        let mut v = self.0.clone();
        v.push(0);
        Key(v)
    }
}

impl fmt::Debug for Key {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match decode_key(self) {
            Ok(d) => write!(f, "{d}"),
            Err(_) => write!(f, "Key({})", self.to_hex()),
        }
    }
}

impl fmt::Display for Key {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

fn push_value(out: &mut Vec<u8>, v: &Scalar) {
    match v {
        Scalar::Int(i) => {
            out.push(TAG_INT);
            out.extend_from_slice(&((*i as u64) ^ SIGN).to_be_bytes());
        }
        Scalar::Decimal(d) => {
            out.push(TAG_DEC);
            out.extend_from_slice(&((d.0 as u64) ^ SIGN).to_be_bytes());
        }
        Scalar::Text(s) => {
            out.push(TAG_TEXT);
            for &b in s.as_bytes() {
                out.push(b);
                if b == 0 {
                    out.push(0xFF);
                }
            }
            out.extend_from_slice(&[0x00, 0x01]);
        }
    }
}

fn push_values(out: &mut Vec<u8>, values: &[Scalar]) {
    for v in values {
        push_value(out, v);
    }
}

/// Encode `(table_id, pk)` as a plain row key.
pub fn encode_key(table_id: TableId, pk: &[Scalar]) -> Key {
    let mut out = Vec::with_capacity(4 + pk.len() * 9);
    out.extend_from_slice(&table_id.to_be_bytes());
    push_values(&mut out, pk);
    Key(out)
}

/// Encode a new-table key under the key of the old row it was derived from,
/// so that both live in the same prefix group.
pub fn encode_prefixed_key(
    old_tid: TableId,
    old_pk: &[Scalar],
    new_tid: TableId,
    suffix: &[Scalar],
) -> Key {
    let mut key = encode_key(old_tid, old_pk);
    key.0.push(TAG_INTERLEAVE);
    key.0.extend_from_slice(&new_tid.to_be_bytes());
    push_values(&mut key.0, suffix);
    key
}

/// Key of the first position of a table's keyspace.
pub fn table_start(table_id: TableId) -> Key {
    encode_key(table_id, &[])
}

/// Exclusive end of a table's keyspace.
pub fn table_end(table_id: TableId) -> Key {
    table_start(table_id).prefix_end()
}

/// What follows the primary-key values of a decoded key.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum KeyTail {
    /// A plain row (or a bare prefix).
    None,
    /// A migration marker for the unit `(table, values)`.
    Marker,
    /// A new-table row interleaved under `(table, values)`.
    Interleaved { table: TableId, suffix: Vec<Scalar> },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DecodedKey {
    pub table: TableId,
    pub values: Vec<Scalar>,
    pub tail: KeyTail,
}

impl fmt::Display for DecodedKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "/{}", self.table)?;
        for v in &self.values {
            write!(f, "/{v}")?;
        }
        match &self.tail {
            KeyTail::None => Ok(()),
            KeyTail::Marker => write!(f, "/#marker"),
            KeyTail::Interleaved { table, suffix } => {
                write!(f, "/@{table}")?;
                for v in suffix {
                    write!(f, "/{v}")?;
                }
                Ok(())
            }
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn err(&self, msg: &str) -> Error {
        Error::Encoding(format!("{msg} at byte {} of {}", self.pos, hex::encode(self.buf)))
    }

    fn peek(&self) -> Option<u8> {
        self.buf.get(self.pos).copied()
    }

    fn take<const N: usize>(&mut self) -> Result<[u8; N]> {
        let end = self.pos + N;
        let slice = self.buf.get(self.pos..end).ok_or_else(|| self.err("truncated"))?;
        self.pos = end;
        Ok(slice.try_into().expect("length checked"))
    }

    fn value(&mut self) -> Result<Scalar> {
        let tag = self.take::<1>()?[0];
        match tag {
            TAG_INT => Ok(Scalar::Int((u64::from_be_bytes(self.take()?) ^ SIGN) as i64)),
            TAG_DEC => Ok(Scalar::Decimal(Decimal(
                (u64::from_be_bytes(self.take()?) ^ SIGN) as i64,
            ))),
            TAG_TEXT => {
                let mut bytes = Vec::new();
                loop {
                    let b = self.take::<1>()?[0];
                    if b != 0 {
                        bytes.push(b);
                        continue;
                    }
                    match self.take::<1>()?[0] {
                        0xFF => bytes.push(0),
                        0x01 => break,
                        _ => return Err(self.err("bad text escape")),
                    }
                }
                String::from_utf8(bytes)
                    .map(Scalar::Text)
                    .map_err(|_| self.err("text is not utf-8"))
            }
            _ => Err(self.err("unknown value tag")),
        }
    }

    fn values(&mut self) -> Result<Vec<Scalar>> {
        let mut out = Vec::new();
        while matches!(self.peek(), Some(TAG_INT | TAG_DEC | TAG_TEXT)) {
            out.push(self.value()?);
        }
        Ok(out)
    }
}

/// Inverse of [`encode_key`] / [`encode_prefixed_key`] / [`Key::marker`].
pub fn decode_key(key: &Key) -> Result<DecodedKey> {
    let mut r = Reader {
        buf: &key.0,
        pos: 0,
    };
    let table = u32::from_be_bytes(r.take()?);
    let values = r.values()?;
    let tail = match r.peek() {
        None => KeyTail::None,
        Some(TAG_MARKER) => {
            r.pos += 1;
            KeyTail::Marker
        }
        Some(TAG_INTERLEAVE) => {
            r.pos += 1;
            let table = u32::from_be_bytes(r.take()?);
            let suffix = r.values()?;
            KeyTail::Interleaved { table, suffix }
        }
        Some(_) => return Err(r.err("unexpected byte")),
    };
    if r.pos != key.0.len() {
        return Err(r.err("trailing bytes"));
    }
    Ok(DecodedKey {
        table,
        values,
        tail,
    })
}
