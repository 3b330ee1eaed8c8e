use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("syntax error at offset {offset}: {message}")]
    Syntax { offset: usize, message: String },

    #[error("predicate {name} declared with arity {declared}, used with arity {found}")]
    ArityConflict {
        name: String,
        declared: usize,
        found: usize,
    },

    #[error("unsafe clause `{0}`: head variable does not occur in the body")]
    UnsafeClause(String),

    #[error("clause body must have 1 or 2 atoms, found {0}")]
    BodyWidth(usize),

    #[error("invalid language: {0}")]
    Language(String),

    #[error("constant list is empty")]
    EmptyConstants,

    #[error("duplicate constant `{0}`")]
    DuplicateConstant(String),

    #[error("atom `{0}` is not in the ground index")]
    UnknownAtom(String),

    #[error("clause pool has {count} clauses, over the budget of {budget}; try a lower v")]
    ClauseBudget { count: usize, budget: usize },

    #[error("invalid sample: {0}")]
    InvalidSample(String),

    #[error("training diverged at step {step}: loss = {loss}")]
    Divergence { step: usize, loss: f64 },

    #[error("numeric check failed: {0}")]
    Numeric(String),

    #[error("unknown background library `{0}`")]
    UnknownLibrary(String),

    #[error("dialog error: {0}")]
    Dialog(String),

    #[error("schema violation at turn {turn}: {message}")]
    Schema { turn: usize, message: String },

    #[error("invalid config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit code for the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Divergence { .. } | Error::Numeric(_) => 3,
            _ => 2,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Error::Syntax { .. } => "syntax",
            Error::ArityConflict { .. } => "arity_conflict",
            Error::UnsafeClause(_) => "unsafe_clause",
            Error::BodyWidth(_) => "body_width",
            Error::Language(_) => "language",
            Error::EmptyConstants => "empty_constants",
            Error::DuplicateConstant(_) => "duplicate_constant",
            Error::UnknownAtom(_) => "unknown_atom",
            Error::ClauseBudget { .. } => "clause_budget",
            Error::InvalidSample(_) => "invalid_sample",
            Error::Divergence { .. } => "divergence",
            Error::Numeric(_) => "numeric",
            Error::UnknownLibrary(_) => "unknown_library",
            Error::Dialog(_) => "dialog",
            Error::Schema { .. } => "schema",
            Error::Config(_) => "config",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
