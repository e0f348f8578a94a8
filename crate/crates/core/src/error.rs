use std::path::PathBuf;

/// Errors raised by every module of the crate.
#[derive(Debug, thiserror::Error)]
pub enum ScosError {
    #[error("rank deficient view: singular value ratio {ratio:e} below tolerance {tol:e}")]
    RankDeficient { ratio: f64, tol: f64 },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("infeasible configuration: {0}")]
    InfeasibleConfig(String),

    #[error("cluster {0} has an empty assignment column")]
    EmptyCluster(usize),

    #[error("non-finite value encountered in {0}")]
    NonFiniteValue(&'static str),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("scenario lacks ground truth: {0}")]
    MissingGroundTruth(String),

    #[error("label length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("format error at byte offset {offset}: {msg}")]
    FormatError { offset: u64, msg: String },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("file not found: {}", .0.display())]
    FileNotFound(PathBuf),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl ScosError {
    /// Stable variant name, printed by the command-line front end.
    pub fn name(&self) -> &'static str {
        match self {
            Self::RankDeficient { .. } => "RankDeficient",
            Self::DimensionMismatch(_) => "DimensionMismatch",
            Self::InfeasibleConfig(_) => "InfeasibleConfig",
            Self::EmptyCluster(_) => "EmptyCluster",
            Self::NonFiniteValue(_) => "NonFiniteValue",
            Self::InvalidArgument(_) => "InvalidArgument",
            Self::MissingGroundTruth(_) => "MissingGroundTruth",
            Self::LengthMismatch { .. } => "LengthMismatch",
            Self::FormatError { .. } => "FormatError",
            Self::ShapeMismatch(_) => "ShapeMismatch",
            Self::FileNotFound(_) => "FileNotFound",
            Self::Io(_) => "IOError",
        }
    }
}

pub type Result<T> = std::result::Result<T, ScosError>;
