use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

/// Crate-wide error type. `exit_code` distinguishes input/config problems
/// (exit 1) from runtime failures (exit 2) for the CLI.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("duplicate patient_id {id} at line {line}")]
    DuplicatePatientId { id: String, line: usize },

    #[error("malformed record at line {line}: {message}")]
    MalformedRecord { line: usize, message: String },

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("invalid rule: {0}")]
    InvalidRule(String),

    #[error("class {class} has {count} members, fewer than k={k} folds")]
    ClassSmallerThanK { class: u8, count: usize, k: usize },

    #[error("single-class training set")]
    SingleClassTrainingSet,

    #[error("scores contain only one class; AUC is undefined")]
    SingleClassScores,

    #[error("non-finite {what}")]
    NonFinite { what: String },

    #[error("missing embedding for key {key}")]
    MissingEmbeddingKey { key: String },

    #[error("dimension mismatch: {0}")]
    DimMismatch(String),

    #[error("every classifier abstained for patients: {}", .0.join(", "))]
    AllAbstained(Vec<String>),

    #[error("bad file format in {path}: {message}")]
    BadFileFormat { path: PathBuf, message: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("fold {fold}, stage {stage}: {source}")]
    FoldStage {
        fold: usize,
        stage: String,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn in_fold(self, fold: usize, stage: &str) -> Self {
        Error::FoldStage {
            fold,
            stage: stage.to_string(),
            source: Box::new(self),
        }
    }

    /// Exit status for the CLI: 1 for bad inputs, 2 for runtime failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::DuplicatePatientId { .. }
            | Error::MalformedRecord { .. }
            | Error::InvalidConfig(_)
            | Error::InvalidRule(_)
            | Error::ClassSmallerThanK { .. }
            | Error::BadFileFormat { .. } => 1,
            Error::FoldStage { source, .. } => source.exit_code(),
            _ => 2,
        }
    }
}
