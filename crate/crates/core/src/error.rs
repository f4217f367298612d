use std::path::PathBuf;

use crate::kvstore::NodeId;
use crate::txn::TxnId;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Why a transaction was aborted by the engine.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AbortReason {
    /// Wounded by an older transaction (wound-wait).
    Wounded { by: TxnId },
    /// The client asked for it.
    User,
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("key encoding: {0}")]
    Encoding(String),

    #[error("key colocation unsupported: {0}")]
    ColocationUnsupported(String),

    #[error("routing violation: key {key} accessed at node {node}, leaseholder is {leaseholder}")]
    RoutingViolation {
        key: String,
        node: NodeId,
        leaseholder: NodeId,
    },

    #[error("invalid range split at {0}: boundary falls inside a colocation group")]
    InvalidSplit(String),

    #[error("unknown range {0}")]
    UnknownRange(u64),

    #[error("node {0} is not a replica of the range")]
    NotAReplica(NodeId),

    #[error("unknown table `{0}`")]
    UnknownTable(String),

    #[error("unknown column `{column}` in `{table}`")]
    UnknownColumn { table: String, column: String },

    #[error("type mismatch: {0}")]
    TypeMismatch(String),

    #[error("invalid migration: {0}")]
    InvalidMigration(String),

    #[error("table `{0}` already takes part in an active migration")]
    MigrationConflict(String),

    #[error("predicate on `{column}` cannot be rewritten onto the old schema")]
    RewriteUnsupported { column: String },

    #[error("table `{0}` belongs to the obsolete schema")]
    ObsoleteSchema(String),

    #[error("table `{0}` is not public yet")]
    NotYetPublic(String),

    #[error("constraint violation: {0}")]
    Constraint(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("transaction {txn} would block on {holder}")]
    Blocked { txn: TxnId, holder: TxnId },

    #[error("transaction {txn} aborted: {reason:?}")]
    Aborted { txn: TxnId, reason: AbortReason },

    #[error("transaction {0} is not active")]
    TxnNotActive(TxnId),

    #[error("lock not held by {txn} for {key}")]
    LockNotHeld { txn: TxnId, key: String },

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("invalid config: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
}

impl Error {
    /// Errors after which the transaction can be retried from the start.
    pub fn is_retryable(&self) -> bool {
        matches!(self, Error::Aborted { .. } | Error::Blocked { .. })
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
