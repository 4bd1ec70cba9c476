use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidSpec(String),
    #[error("graph generation failed after {attempts} attempts: {last}")]
    RetryExhausted { attempts: usize, last: String },
    #[error("weak-graph structure violated: {0}")]
    StructureViolation(String),
    #[error("power iteration did not converge within {max_iter} iterations (residual {residual:e})")]
    NoConvergence { max_iter: usize, residual: f64 },
    #[error("singular system: {0}")]
    SingularSystem(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("observation {value} outside the support of {family}")]
    OutOfSupport { value: f64, family: &'static str },
    #[error("divergence is infinite: {0}")]
    DivergenceInfinite(String),
    #[error("degenerate means: {0}")]
    DegenerateMeans(String),
    #[error("invalid correlation {correlation} for {count} equicorrelated variables")]
    InvalidCorrelation { correlation: f64, count: usize },
    #[error("invalid shape parameter: {0}")]
    InvalidShape(String),
    #[error("every likelihood vanished at agent {agent} (observation {value})")]
    AllZeroLikelihood { agent: usize, value: f64 },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("minimizer is not unique: hypotheses {0:?} tie")]
    AmbiguousMinimizer(Vec<usize>),
    #[error("wrong configuration: {0}")]
    WrongConfiguration(String),
    #[error("inconsistent data: {0}")]
    InconsistentData(String),
    #[error("missing record: {0}")]
    MissingRecord(String),
    #[error("degenerate points: {0}")]
    DegeneratePoints(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}
