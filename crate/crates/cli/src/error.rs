use std::fmt;
use std::path::PathBuf;

/// Pipeline stage that produced an error.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Config,
    GridGen,
    Generate,
    Solve,
    Label,
    Train,
    Predict,
    Ese,
    Validate,
    Bench,
    Report,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Stage::Config => "config",
            Stage::GridGen => "grid-gen",
            Stage::Generate => "generate",
            Stage::Solve => "solve",
            Stage::Label => "label",
            Stage::Train => "train",
            Stage::Predict => "predict",
            Stage::Ese => "ese",
            Stage::Validate => "validate",
            Stage::Bench => "bench",
            Stage::Report => "report",
        };
        f.write_str(name)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{stage} stage failed: {source}")]
    Stage {
        stage: Stage,
        #[source]
        source: asopf_core::Error,
    },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{}: {source}", path.display())]
    File {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("toml: {0}")]
    Toml(#[from] toml::de::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("{stage} stage failed: {message}")]
    Failed { stage: Stage, message: String },
}

impl CliError {
    /// 2 for invalid input, 3 for numerical failure, 4 for any other stage failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Toml(_) => 2,
            CliError::Stage { source, .. } if source.is_validation() => 2,
            CliError::Stage { source, .. } if source.is_numerical() => 3,
            _ => 4,
        }
    }

    pub fn file(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::File {
            path: path.into(),
            source,
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

/// Tag a core result with the stage it belongs to.
pub fn at<T>(stage: Stage, r: asopf_core::Result<T>) -> CliResult<T> {
    r.map_err(|source| CliError::Stage { stage, source })
}
