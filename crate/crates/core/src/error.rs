use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("non-finite value produced by node {node} ({op})")]
    NonFinite { node: usize, op: &'static str },

    #[error("numeric failure in score network layer {layer}: {source}")]
    Layer {
        layer: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("empty system: at least one body is required")]
    EmptySystem,

    #[error("configuration error for `{key}`: {msg}")]
    Config { key: String, msg: String },

    #[error("singular geometry: bodies {i} and {j} are {distance:.3e} apart")]
    Singularity { i: usize, j: usize, distance: f64 },

    #[error("training diverged at epoch {epoch}")]
    Diverged { epoch: usize },

    #[error("step {t} is too close to the prior (alpha = {alpha:.3e})")]
    NearPrior { t: usize, alpha: f64 },

    #[error("degenerate Gibbs tilt: normalizer underflowed")]
    DegenerateTilt,

    #[error("insufficient samples: got {got}, need at least {need}")]
    InsufficientSamples { got: usize, need: usize },

    #[error("checkpoint schema error: {0}")]
    Schema(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub fn config(key: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            msg: msg.into(),
        }
    }

    /// True for failures caused by non-finite arithmetic or divergence.
    pub fn is_numeric(&self) -> bool {
        match self {
            Error::NonFinite { .. } | Error::Diverged { .. } | Error::DegenerateTilt => true,
            Error::Layer { source, .. } => source.is_numeric(),
            _ => false,
        }
    }
}
