//! Simulator of online schema migration on a range-partitioned,
//! shared-nothing key-value store.
//!
//! Strategies: eager OSC backfill, Bullfrog-style lazy migration, and lazy
//! migration with key-prefix colocation and fused migration/user plans.

pub mod background;
pub mod bench;
pub mod catalog;
pub mod error;
pub mod kvstore;
pub mod migration;
pub mod txn;

pub use error::{Error, Result};
