use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CoreError {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid data: {0}")]
    Data(String),

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("training diverged at epoch {epoch}: {detail}")]
    Diverged { epoch: usize, detail: String },

    #[error(transparent)]
    Autograd(#[from] trackcast_autograd::Error),

    #[error(transparent)]
    Eval(#[from] trackcast_eval::EvalError),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CoreError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CoreError::Io {
            path: path.into(),
            source,
        }
    }

    /// Whether the failure is numerical (non-finite values, divergence).
    pub fn is_numeric(&self) -> bool {
        use trackcast_autograd::Error as A;
        matches!(
            self,
            CoreError::Diverged { .. }
                | CoreError::Autograd(A::Numeric { .. } | A::NonFiniteGradient { .. })
        )
    }
}

pub type Result<T, E = CoreError> = std::result::Result<T, E>;
