//! Crate-level error type.

use crate::evaluator::EvalError;
use crate::graph::GraphError;
use crate::provider::{PromptError, ProviderError};

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    /// A completion did not have the expected shape. `raw` holds the full
    /// completion for logging.
    #[error("parse error: {message}")]
    Parse { message: String, raw: String },
    #[error("validation error: {0}")]
    Validation(String),
    #[error("memory insertion is disabled")]
    InsertionDisabled,
    #[error("step {step}: {source}")]
    AtStep {
        step: usize,
        #[source]
        source: Box<Error>,
    },
    #[error("hop {hop}: {source}")]
    AtHop {
        hop: usize,
        #[source]
        source: Box<Error>,
    },
    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub fn parse(message: impl Into<String>, raw: impl Into<String>) -> Self {
        Error::Parse {
            message: message.into(),
            raw: raw.into(),
        }
    }

    pub fn at_step(self, step: usize) -> Self {
        Error::AtStep {
            step,
            source: Box::new(self),
        }
    }

    pub fn at_hop(self, hop: usize) -> Self {
        Error::AtHop {
            hop,
            source: Box::new(self),
        }
    }

    pub fn in_stage(self, stage: &'static str) -> Self {
        match self {
            // keep the innermost stage label
            e @ Error::Stage { .. } => e,
            e => Error::Stage {
                stage,
                source: Box::new(e),
            },
        }
    }

    /// Innermost error with step/hop/stage wrappers removed.
    pub fn root(&self) -> &Error {
        match self {
            Error::AtStep { source, .. }
            | Error::AtHop { source, .. }
            | Error::Stage { source, .. } => source.root(),
            e => e,
        }
    }

    pub fn stage(&self) -> Option<&'static str> {
        match self {
            Error::Stage { stage, .. } => Some(stage),
            Error::AtStep { source, .. } | Error::AtHop { source, .. } => source.stage(),
            _ => None,
        }
    }

    /// True for errors caused by caller input rather than a backend failure.
    pub fn is_validation(&self) -> bool {
        match self.root() {
            Error::Validation(_) | Error::InsertionDisabled | Error::Prompt(_) | Error::Eval(_) => {
                true
            }
            Error::Provider(ProviderError::Validation(_)) => true,
            Error::Graph(g) => matches!(
                g,
                GraphError::Validation(_)
                    | GraphError::NodeNotFound(_)
                    | GraphError::WrongKind { .. }
                    | GraphError::EdgeKinds { .. }
                    | GraphError::Dimension { .. }
                    | GraphError::Inactive(_)
            ),
            _ => false,
        }
    }
}
