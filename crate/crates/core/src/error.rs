use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GridError {
    #[error("torus sides must be finite and positive (a = {a}, b = {b})")]
    NonPositiveSide { a: f64, b: f64 },
    #[error("grid resolution {0} is odd; nx and ny must be even")]
    OddResolution(usize),
    #[error("grid resolution {0} is below the minimum of 4")]
    TooCoarse(usize),
}

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error("density is not positive (min u = {min})")]
    NonPositiveDensity { min: f64 },
    #[error("potential is not zero-mean (mean = {mean:e})")]
    NotZeroMean { mean: f64 },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("step rejected: {0}")]
    StepRejected(String),
    #[error("positivity lost at t = {t} after {retries} step retries")]
    PositivityLost { t: f64, retries: usize },
    #[error("non-finite state at t = {t}")]
    NonFiniteState { t: f64 },
    #[error("Newton iteration diverged after {iters} iterations (residual {residual:e})")]
    NewtonDiverged { iters: usize, residual: f64 },
    #[error(
        "singular Jacobian at lambda = {lambda}: linear solve stagnated (relative residual {relative_residual:e})"
    )]
    SingularJacobian { lambda: f64, relative_residual: f64 },
    #[error("eigensolver did not converge after {iters} iterations (worst residual {residual:e})")]
    EigsNotConverged { iters: usize, residual: f64 },
    #[error("state is degenerate: coercivity estimate {estimate:e} exceeds the bound")]
    DegenerateState { estimate: f64 },
    #[error("coordinates outside the chart: {0}")]
    ChartExceeded(String),
    #[error("insufficient data: {have} usable records, need {need}")]
    InsufficientData { have: usize, need: usize },
    #[error("energy is not monotone at record {index}")]
    NonMonotoneEnergy { index: usize },
    #[error("malformed checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
