use thiserror::Error;

/// Errors raised by the modelling pipeline.
#[derive(Debug, Error)]
pub enum Error {
    /// Malformed or out-of-domain input data.
    #[error("input error: {0}")]
    Input(String),
    /// A model parameter outside its admissible range.
    #[error("parameter error: {0}")]
    Parameter(String),
    /// Site geometry that admits no usable spatial basis.
    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),
    /// Inconsistent configuration (method names, feature layout, area roster).
    #[error("configuration error: {0}")]
    Config(String),
    /// A linear system that could not be solved even after regularization.
    #[error("numerical failure: {0}")]
    Numerical(String),
    /// An error attributed to one area of a transfer problem.
    #[error("area `{area}`: {source}")]
    Area {
        area: String,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn in_area(self, area: &str) -> Self {
        Error::Area {
            area: area.to_string(),
            source: Box::new(self),
        }
    }

    /// The innermost error, with area tags removed.
    pub fn root(&self) -> &Error {
        match self {
            Error::Area { source, .. } => source.root(),
            other => other,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
