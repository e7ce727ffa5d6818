use thiserror::Error;

use crate::annotate::AnnotateError;
use crate::eval::EvalError;
use crate::flow::FlowError;
use crate::graph::GraphError;
use crate::kde::KdeError;
use crate::table::TableError;

/// Any pipeline failure, tagged with a stable category code.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid config: {0}")]
    Config(String),
    #[error(transparent)]
    Table(#[from] TableError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Kde(#[from] KdeError),
    #[error(transparent)]
    Flow(#[from] FlowError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Annotate(#[from] AnnotateError),
    #[error("artifact rejected: {0}")]
    Artifact(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    /// Machine-readable category, e.g. `E_INGEST`.
    pub fn code(&self) -> &'static str {
        match self {
            Self::Config(_) => "E_CONFIG",
            Self::Table(_) => "E_INGEST",
            Self::Graph(_) => "E_GRAPH",
            Self::Kde(_) => "E_SAMPLER",
            Self::Flow(FlowError::Diverged { .. } | FlowError::InvalidConfig(_)) => "E_TRAIN",
            Self::Flow(FlowError::HashMismatch { .. } | FlowError::Archive(_) | FlowError::Json(_)) => "E_ARTIFACT",
            Self::Flow(FlowError::Io(_)) => "E_IO",
            Self::Flow(_) => "E_SAMPLER",
            Self::Eval(EvalError::RulesFile { .. }) => "E_RULES",
            Self::Eval(_) => "E_EVAL",
            Self::Annotate(_) => "E_ANNOTATE",
            Self::Artifact(_) => "E_ARTIFACT",
            Self::Io { .. } => "E_IO",
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn codes() {
        assert_eq!(Error::from(TableError::EmptyTable).code(), "E_INGEST");
        assert_eq!(Error::from(FlowError::HashMismatch { what: "payload" }).code(), "E_ARTIFACT");
        let e = Error::from(FlowError::Diverged { feature: "a".into(), epoch: 3 });
        assert_eq!(e.code(), "E_TRAIN");
        assert_eq!(e.to_string(), "training diverged for `a` at epoch 3");
        assert_eq!(Error::from(AnnotateError::EmptyResponse).code(), "E_ANNOTATE");
    }
}
