use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    Parameter { name: &'static str, reason: String },

    /// Building the hierarchy left the representable range.
    #[error("stage {stage} cannot be built: {reason}")]
    StageDepth { stage: usize, reason: String },

    /// A flow or set operation needs more stages than were built.
    #[error("depth exhausted at stage {stage}; largest safe |t| is {max_safe_t}")]
    DepthExhausted { stage: usize, max_safe_t: f64 },

    #[error("degenerate dictionary: {0}")]
    DegenerateDictionary(String),

    #[error("basis Gram matrix is degenerate (condition number {condition:e})")]
    BasisDegeneracy { condition: f64 },

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("{}{field}: {message}", line.map(|l| format!("line {l}: ")).unwrap_or_default())]
    Config { line: Option<usize>, field: String, message: String },
}

impl Error {
    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::Parameter { name, reason: reason.into() }
    }
}
