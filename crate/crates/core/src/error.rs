use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("dimension mismatch for {what}: expected {expected}, found {found}")]
    Dimension {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("non-finite {quantity} at t = {time} s (fine step {step})")]
    NonFinite {
        step: usize,
        time: f64,
        quantity: String,
    },

    #[error("filter collapse at observation {observation_index}: every particle has zero likelihood")]
    FilterCollapse { observation_index: usize },

    #[error("degenerate filter: {0}")]
    DegenerateFilter(String),

    #[error("non-finite gradient at fine step {step}: terms {terms:?}")]
    NonFiniteGradient { step: usize, terms: [Vec<f64>; 3] },

    #[error("enumeration too large: {trajectories} trajectories (limit {limit})")]
    TooLarge { trajectories: u64, limit: u64 },

    #[error("decomposition mismatch: max |exact - sum of terms| = {max_abs_diff:e}")]
    DecompositionMismatch { max_abs_diff: f64 },

    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn context(self, context: impl Into<String>) -> Self {
        Error::Context {
            context: context.into(),
            source: Box::new(self),
        }
    }

    /// True for failures of the numerics (as opposed to bad input).
    pub fn is_numerical(&self) -> bool {
        match self {
            Error::NonFinite { .. }
            | Error::FilterCollapse { .. }
            | Error::DegenerateFilter(_)
            | Error::NonFiniteGradient { .. }
            | Error::DecompositionMismatch { .. } => true,
            Error::Context { source, .. } => source.is_numerical(),
            _ => false,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
