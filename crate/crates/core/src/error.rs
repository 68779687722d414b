use thiserror::Error;

/// Errors produced by table ingestion, the analytic calculators, the
/// optimizer and the simulator.
#[derive(Debug, Error)]
pub enum Error {
    #[error("unknown MCS index {0}")]
    UnknownMcs(u32),

    #[error("invalid table: {0}")]
    InvalidTable(String),

    #[error("{source_name}:{line}: {message}")]
    Parse {
        source_name: String,
        line: u64,
        message: String,
    },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("expected service time diverges: erasure probability is 1")]
    Divergent,

    #[error("series truncated with residual mass {residual:e} above epsilon {epsilon:e}")]
    Truncation { residual: f64, epsilon: f64 },

    #[error("no feasible MCS at {snr_db} dB")]
    NoFeasibleMcs { snr_db: f64 },

    #[error("singular linear system")]
    Singular,

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
