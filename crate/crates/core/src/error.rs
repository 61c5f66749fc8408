use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("harmonic {harmonic} magnitude {ratio:.4}·a1 exceeds dominance bound {delta}")]
    DominanceViolation {
        harmonic: usize,
        ratio: f64,
        delta: f64,
    },
    #[error("fundamental harmonic has zero magnitude")]
    ZeroFundamental,
    #[error("highest harmonic reaches {freq_hz:.3} Hz, above Nyquist {nyquist_hz:.3} Hz")]
    AliasingRisk { freq_hz: f64, nyquist_hz: f64 },
    #[error("Student-t degrees of freedom must exceed 2, got {0}")]
    BadDof(f64),
    #[error("zero variance over the {0} interval")]
    ZeroVariance(&'static str),
    #[error("empty signal")]
    EmptySignal,
    #[error("time-frequency grids do not match: {0}")]
    GridMismatch(String),
    #[error("no frequency bins inside the requested band")]
    EmptyBand,
    #[error("no energy above the numerical floor")]
    AllBelowFloor,
    #[error("too few frames for regression: {frames} < {required}")]
    TooShort { frames: usize, required: usize },
    #[error("Gram matrix is ill-conditioned (condition number {0:.3e})")]
    IllConditioned(f64),
    #[error("only one class present")]
    SingleClass,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("too few samples: {0}")]
    TooFewSamples(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("non-uniform sampling: step {step} deviates from {expected} at row {row}")]
    NonUniformSampling {
        row: usize,
        step: f64,
        expected: f64,
    },
    #[error("empty file")]
    EmptyFile,
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Short stable name of the variant, used in reports.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::NonFinite(_) => "NonFinite",
            Error::InvalidArgument(_) => "InvalidArgument",
            Error::DominanceViolation { .. } => "DominanceViolation",
            Error::ZeroFundamental => "ZeroFundamental",
            Error::AliasingRisk { .. } => "AliasingRisk",
            Error::BadDof(_) => "BadDof",
            Error::ZeroVariance(_) => "ZeroVariance",
            Error::EmptySignal => "EmptySignal",
            Error::GridMismatch(_) => "GridMismatch",
            Error::EmptyBand => "EmptyBand",
            Error::AllBelowFloor => "AllBelowFloor",
            Error::TooShort { .. } => "TooShort",
            Error::IllConditioned(_) => "IllConditioned",
            Error::SingleClass => "SingleClass",
            Error::DimensionMismatch { .. } => "DimensionMismatch",
            Error::TooFewSamples(_) => "TooFewSamples",
            Error::Parse(_) => "ParseError",
            Error::NonUniformSampling { .. } => "NonUniformSampling",
            Error::EmptyFile => "EmptyFile",
            Error::Io(_) => "Io",
            Error::Json(_) => "Json",
        }
    }
}
