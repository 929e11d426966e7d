use thiserror::Error;

/// Errors raised anywhere in the estimation / index / simulation pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid matrix: {0}")]
    InvalidMatrix(String),

    #[error("matrix is not diagonalizable (eigenvector condition number {condition:.3e})")]
    NonDiagonalizable { condition: f64 },

    #[error("transition matrix is not embeddable: {0}")]
    NotEmbeddable(String),

    #[error("matrix is not irreducible")]
    NotIrreducible,

    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),

    #[error("invalid thresholds: {0}")]
    InvalidThresholds(String),

    #[error("invalid class income moments: {0}")]
    InvalidMoments(String),

    #[error("unsupported moment order {0} (only 1 and 2 are stored)")]
    UnsupportedOrder(u32),

    #[error("negative variance {value:.6e} ({what})")]
    NegativeVariance { what: &'static str, value: f64 },

    #[error("no poor mass at t = {t}")]
    NoPoorMass { t: f64 },

    #[error("mean poor income is zero at t = {t}")]
    ZeroPoorIncome { t: f64 },

    #[error("negative income {0}")]
    NegativeIncome(f64),

    #[error("cross-section has no poor households")]
    NoPoor,

    #[error("cross-section has no households")]
    EmptyCrossSection,

    #[error("poor households have zero total income")]
    ZeroIncomeMass,

    #[error("household {household} has an incomplete class path")]
    IncompletePath { household: String },

    #[error("class C{class} is never observed as a transition origin")]
    EmptyRow { class: usize },

    #[error("class C{class} has {count} observations, at least {needed} required")]
    InsufficientClassData {
        class: usize,
        count: usize,
        needed: usize,
    },

    #[error("no poverty threshold for {components} components in {year}")]
    MissingThreshold { components: u32, year: i32 },

    #[error("threshold file not readable: {path}: {source}")]
    MissingThresholdFile {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("cohort is empty: no household observed at every wave")]
    EmptyCohort,

    #[error("parse error: {0}")]
    Parse(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Stable, machine-readable name of the error kind.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidMatrix(_) => "InvalidMatrix",
            Error::NonDiagonalizable { .. } => "NonDiagonalizable",
            Error::NotEmbeddable(_) => "NotEmbeddable",
            Error::NotIrreducible => "NotIrreducible",
            Error::InvalidDistribution(_) => "InvalidDistribution",
            Error::InvalidThresholds(_) => "InvalidThresholds",
            Error::InvalidMoments(_) => "InvalidMoments",
            Error::UnsupportedOrder(_) => "UnsupportedOrder",
            Error::NegativeVariance { .. } => "NegativeVariance",
            Error::NoPoorMass { .. } => "NoPoorMass",
            Error::ZeroPoorIncome { .. } => "ZeroPoorIncome",
            Error::NegativeIncome(_) => "NegativeIncome",
            Error::NoPoor => "NoPoor",
            Error::EmptyCrossSection => "EmptyCrossSection",
            Error::ZeroIncomeMass => "ZeroIncomeMass",
            Error::IncompletePath { .. } => "IncompletePath",
            Error::EmptyRow { .. } => "EmptyRow",
            Error::InsufficientClassData { .. } => "InsufficientClassData",
            Error::MissingThreshold { .. } | Error::MissingThresholdFile { .. } => "MissingThreshold",
            Error::EmptyCohort => "EmptyCohort",
            Error::Parse(_) => "ParseError",
            Error::InvalidParameter(_) => "InvalidParameter",
            Error::Io(_) => "Io",
            Error::Json(_) => "Json",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
