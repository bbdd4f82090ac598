use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("degenerate element {element}: signed area {area:e}")]
    DegenerateElement { element: usize, area: f64 },

    #[error("singular system: {0}")]
    Singular(String),

    #[error("solver did not converge after {iterations} iterations (relative residual {:e})", residuals.last().copied().unwrap_or(f64::NAN))]
    NonConvergence {
        iterations: usize,
        residuals: Vec<f64>,
    },

    #[error("local basis solve failed on coarse element {element}: {source}")]
    LocalSolve {
        element: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("hemivariational problem infeasible: {0}")]
    Infeasible(String),

    #[error("fixed-point iteration diverged: increment ratio {ratio:.4} exceeds {bound:.4} at iteration {iteration}")]
    Divergence {
        iteration: usize,
        ratio: f64,
        bound: f64,
    },

    #[error("meshes are not nested: {0}")]
    NonNested(String),

    #[error("inconsistent homogenized tensor: asymmetry {0:e}")]
    Asymmetric(f64),

    #[error("study entries failed: {0}")]
    StudyFailed(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Input, configuration and I/O failures, as opposed to numerical ones.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            Error::InvalidInput(_) | Error::Config(_) | Error::Io(_) | Error::Json(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidInput(msg.into()))
}
