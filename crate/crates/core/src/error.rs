use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid emission model: {0}")]
    InvalidModel(String),
    #[error("invalid detector geometry: {0}")]
    InvalidGeometry(String),
    #[error("invalid label: {0}")]
    InvalidLabel(String),
    #[error("{num_ions} ions requested; at most {max} are supported by the exclusive-label classifiers")]
    TooManyIons { num_ions: usize, max: usize },
    #[error("dataset of {requested} samples exceeds the configured budget of {budget}")]
    DatasetTooLarge { requested: usize, budget: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("shape mismatch: expected {expected}, got {actual}")]
    ShapeMismatch { expected: usize, actual: usize },
    #[error("non-finite input at position {0}")]
    NonFiniteInput(usize),
    #[error("ion {ion} has only one class in the training data")]
    SingleClass { ion: usize },
    #[error("confusion row for prepared state {0} is empty")]
    EmptyRow(String),
    #[error("improvement undefined: baseline fidelity is 1")]
    UndefinedImprovement,
    #[error("training diverged at epoch {epoch}, batch {batch}: loss = {loss}")]
    Divergence { epoch: usize, batch: usize, loss: f64 },
    #[error("calibration did not converge after {iterations} iterations (best fidelity {best:.6}, target {target:.6})")]
    NoConvergence { iterations: usize, best: f64, target: f64 },
    #[error("calibration target {target:.6} is outside the reachable range [{low:.6}, {high:.6}]")]
    TargetOutOfRange { target: f64, low: f64, high: f64 },
    #[error("config: {0}")]
    Config(String),
    #[error("parse error on line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Short machine-readable category, used in CLI error reports.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidModel(_) => "invalid_model",
            Error::InvalidGeometry(_) => "invalid_geometry",
            Error::InvalidLabel(_) => "invalid_label",
            Error::TooManyIons { .. } => "too_many_ions",
            Error::DatasetTooLarge { .. } => "dataset_too_large",
            Error::InvalidArgument(_) => "invalid_argument",
            Error::ShapeMismatch { .. } => "shape_mismatch",
            Error::NonFiniteInput(_) => "non_finite_input",
            Error::SingleClass { .. } => "single_class",
            Error::EmptyRow(_) => "empty_row",
            Error::UndefinedImprovement => "undefined_improvement",
            Error::Divergence { .. } => "divergence",
            Error::NoConvergence { .. } => "no_convergence",
            Error::TargetOutOfRange { .. } => "target_out_of_range",
            Error::Config(_) => "config",
            Error::Parse { .. } => "parse",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
