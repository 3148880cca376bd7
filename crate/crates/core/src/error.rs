use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("shape mismatch for {what}: expected {expected}, got {got}")]
    Shape {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("implicit midpoint solve did not converge after {iterations} iterations (residual {residual:e})")]
    Integration { iterations: usize, residual: f64 },

    #[error("fixed-point prediction did not converge after {iterations} iterations (residual {residual:e})")]
    Prediction { iterations: usize, residual: f64 },

    #[error("training diverged at epoch {epoch}, batch {batch}: loss is {loss}")]
    Divergence { epoch: usize, batch: usize, loss: f64 },

    #[error("trajectory {trajectory}, step {step}: {source}")]
    AtStep {
        trajectory: usize,
        step: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("malformed file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Wraps a step-level failure with its position in an ensemble.
    pub fn at(self, trajectory: usize, step: usize) -> Self {
        Error::AtStep {
            trajectory,
            step,
            source: Box::new(self),
        }
    }

    /// True for failures of the numerics (non-convergence, divergence) as
    /// opposed to bad input or I/O.
    pub fn is_numeric(&self) -> bool {
        match self {
            Error::Integration { .. } | Error::Prediction { .. } | Error::Divergence { .. } => true,
            Error::AtStep { source, .. } => source.is_numeric(),
            _ => false,
        }
    }

    pub fn is_io(&self) -> bool {
        match self {
            Error::Io(_) => true,
            Error::Csv(e) => e.is_io_error(),
            Error::AtStep { source, .. } => source.is_io(),
            _ => false,
        }
    }
}

pub(crate) fn check_len(what: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::Shape {
            what,
            expected,
            got,
        })
    }
}
