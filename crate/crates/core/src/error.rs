use thiserror::Error;

/// Errors produced by the reconstruction toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input `{field}`: {message}")]
    InvalidInput { field: String, message: String },
    #[error("degenerate camera: {0}")]
    DegenerateCamera(String),
    #[error("point projects to infinity (w = {0:e})")]
    PointAtInfinity(f64),
    #[error("insufficient views: got {got}, need at least {need}")]
    InsufficientViews { got: usize, need: usize },
    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),
    #[error("insufficient points: got {got}, need at least {need}")]
    InsufficientPoints { got: usize, need: usize },
    #[error("degenerate configuration: {0}")]
    DegenerateConfiguration(String),
    #[error("no valid correspondence found")]
    NoSolution,
    #[error("format error in `{field}`: {message}")]
    Format { field: String, message: String },
    #[error("unsupported configuration: {0}")]
    UnsupportedConfiguration(String),
    #[error("crop window too small: side {side:.2} px < {min} px")]
    TooSmall { side: f64, min: f64 },
    #[error("incompatible grids: {0}")]
    IncompatibleGrids(String),
    #[error("empty surface: {0}")]
    EmptySurface(String),
    #[error("nothing to summarize: {0}")]
    EmptySummary(String),
    #[error("content hash mismatch for {path}: expected {expected}, found {found}")]
    HashMismatch {
        path: String,
        expected: String,
        found: String,
    },
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
    #[error("json error in {context}: {source}")]
    Json {
        context: String,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub fn invalid(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::InvalidInput {
            field: field.into(),
            message: message.into(),
        }
    }

    pub fn format(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Format {
            field: field.into(),
            message: message.into(),
        }
    }

    pub fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }

    pub fn json(context: impl Into<String>, source: serde_json::Error) -> Self {
        Error::Json {
            context: context.into(),
            source,
        }
    }

    /// Stable machine-readable code, used by the HTTP facade.
    pub fn code(&self) -> &'static str {
        match self {
            Error::InvalidInput { .. } => "invalid-input",
            Error::DegenerateCamera(_) => "degenerate-camera",
            Error::PointAtInfinity(_) => "point-at-infinity",
            Error::InsufficientViews { .. } => "insufficient-views",
            Error::DegenerateGeometry(_) => "degenerate-geometry",
            Error::InsufficientPoints { .. } => "insufficient-points",
            Error::DegenerateConfiguration(_) => "degenerate-configuration",
            Error::NoSolution => "no-solution",
            Error::Format { .. } => "format",
            Error::UnsupportedConfiguration(_) => "unsupported-configuration",
            Error::TooSmall { .. } => "too-small",
            Error::IncompatibleGrids(_) => "incompatible-grids",
            Error::EmptySurface(_) => "empty-surface",
            Error::EmptySummary(_) => "empty-summary",
            Error::HashMismatch { .. } => "hash-mismatch",
            Error::Io { .. } => "io",
            Error::Json { .. } => "json",
        }
    }

    /// Offending field name, when the error is attributable to one.
    pub fn field(&self) -> Option<&str> {
        match self {
            Error::InvalidInput { field, .. } | Error::Format { field, .. } => Some(field),
            _ => None,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
