use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("usage error: {0}")]
    Usage(String),
    #[error("geometry error: {0}")]
    Geometry(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("topology error: {0}")]
    Topology(String),
    #[error("stability diagnostic on element {element}: {detail}")]
    Stability { element: usize, detail: String },
    #[error("solver error: {0}")]
    Solver(String),
    #[error("station error: {0}")]
    Station(String),
    #[error("calibration error: {0}")]
    Calibration(String),
    #[error("singular stretch: {0}")]
    SingularStretch(String),
    #[error("step-size error: {0}")]
    StepSize(String),
    #[error("division by zero: {0}")]
    DivisionByZero(String),
    #[error("unsupported configuration: {0}")]
    Unsupported(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
