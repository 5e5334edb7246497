use crate::attack::AttackResult;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension error at layer {layer}: {message}")]
    Dimension { layer: String, message: String },

    #[error("shape error: {0}")]
    Shape(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("input error: {0}")]
    Input(String),

    #[error("format error at byte offset {offset}: {message}")]
    Format { offset: u64, message: String },

    #[error("capability error: {0}")]
    Capability(String),

    #[error("query budget exhausted: {used} of {budget} queries used, {requested} more requested")]
    BudgetExhausted { used: u64, budget: u64, requested: u64 },

    /// The attack ran past its wall-clock budget. Carries the iterate reached so far.
    #[error("attack exceeded its time budget of {budget_seconds} s")]
    Timeout {
        budget_seconds: f64,
        partial: Option<Box<AttackResult>>,
    },

    #[error("degenerate model: {0}")]
    DegenerateModel(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("incomplete war matrix, missing matchups: {}", format_pairs(.missing))]
    IncompleteMatrix { missing: Vec<(String, String)> },

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
}

fn format_pairs(pairs: &[(String, String)]) -> String {
    pairs
        .iter()
        .map(|(a, d)| format!("{a} vs {d}"))
        .collect::<Vec<_>>()
        .join(", ")
}
