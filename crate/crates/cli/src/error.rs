use serde_json::json;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),

    #[error("config error at `{path}`: {message}")]
    Config { path: String, message: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Core(#[from] stochloc::Error),

    /// An invariant or inequality check failed; the outputs were still written.
    #[error("{0}")]
    Verdict(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Config { .. } | CliError::Io { .. } => 1,
            CliError::Core(e) => match e {
                stochloc::Error::Singular { .. } | stochloc::Error::ProjectionFailed { .. } | stochloc::Error::State(_) => 2,
                stochloc::Error::Invariant(_) => 3,
                _ => 1,
            },
            CliError::Verdict(_) => 3,
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "usage",
            CliError::Config { .. } => "config",
            CliError::Io { .. } => "io",
            CliError::Core(stochloc::Error::Validation { .. }) => "config",
            CliError::Core(e) if e.is_numerical() => "numerical",
            CliError::Core(stochloc::Error::Invariant(_)) => "invariant",
            CliError::Core(_) => "domain",
            CliError::Verdict(_) => "verdict",
        }
    }

    /// Machine-readable form for standard error.
    pub fn to_json(&self) -> serde_json::Value {
        let mut v = json!({
            "error": self.kind(),
            "exit_code": self.exit_code(),
            "message": self.to_string(),
        });
        let path = match self {
            CliError::Config { path, .. } => Some(path.clone()),
            CliError::Core(stochloc::Error::Validation { path, .. }) => Some(path.clone()),
            CliError::Io { path, .. } => Some(path.clone()),
            _ => None,
        };
        if let Some(p) = path {
            v["path"] = json!(p);
        }
        v
    }
}
