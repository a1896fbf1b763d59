use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid model: {0}")]
    Model(String),
    #[error("schedule degenerate: empty survival set at time {time}")]
    DegenerateSchedule { time: usize },
    #[error("state {state} is inside the absorbing set at time {time}")]
    StartInBoundary { state: String, time: usize },
    #[error("survival probability underflow below 1e-300 at horizon {horizon}")]
    HorizonTooDeep { horizon: usize },
    #[error("conditioning on an event of mass {mass:.3e} (below 1e-250)")]
    ConditioningOnNull { mass: f64 },
    #[error("valid certificate required: {0}")]
    CertificateRequired(String),
    #[error("time {time} outside tabulated window [0, {max}]")]
    Window { time: usize, max: usize },
    #[error("power iteration failed after {iterations} iterations (residual {residual:.3e})")]
    PowerIteration { iterations: usize, residual: f64 },
    #[error("schedule kind mismatch: {0}")]
    Kind(String),
    #[error("assumption violated: {0}")]
    Assumption(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("drift too strong: scale-function integrand overflows at y = {0}")]
    DriftTooStrong(f64),
    #[error("too few survivors: {survivors}/{total} (survival fraction {fraction:.4e})")]
    TooFewSurvivors {
        survivors: usize,
        total: usize,
        fraction: f64,
    },
    #[error("config error: {0}")]
    Config(String),
    #[error("config validation failed:\n{}", .0.join("\n"))]
    ConfigValidation(Vec<String>),
    #[error("unknown series id: {0}")]
    UnknownSeries(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
