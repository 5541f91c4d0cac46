use thiserror::Error;

use crate::adapters::AdapterError;
use crate::attribution::AttributionError;
use crate::config::ConfigError;
use crate::corpus::CorpusError;
use crate::llm::LlmError;
use crate::metrics::MetricError;
use crate::pipelines::PipelineError;
use crate::report::ReportError;

/// Crate-level error. Each module keeps its own error enum; this wraps them
/// for callers that drive several stages at once.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Adapter(#[from] AdapterError),
    #[error(transparent)]
    Attribution(#[from] AttributionError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Report(#[from] ReportError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("io error at {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    /// True for errors caused by invalid configuration rather than runtime failure.
    pub fn is_config_error(&self) -> bool {
        matches!(self, Error::Config(_))
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
