use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum Error {
    #[error("point {point:?} lies outside the domain of chart `{chart}`")]
    OutOfDomain { chart: String, point: Vec<f64> },

    #[error("metric of chart `{chart}` is singular at {point:?}")]
    SingularMetric { chart: String, point: Vec<f64> },

    #[error("finite-difference stencil around {point:?} leaves the domain of chart `{chart}`")]
    StencilClipped { chart: String, point: Vec<f64> },

    #[error("no transition registered from chart `{from}` to chart `{to}`")]
    NoTransition { from: String, to: String },

    #[error("point {point:?} is not in the overlap of charts `{from}` and `{to}`")]
    OutOfOverlap {
        from: String,
        to: String,
        point: Vec<f64>,
    },

    #[error("geodesic left the domain of chart `{chart}` at affine parameter {s}")]
    LeftDomain { chart: String, s: f64 },

    #[error("adaptive step size underflow at affine parameter {s}")]
    StepFailure { s: f64 },

    #[error("exceptional pair: {found} distinct connecting geodesics (cap {cap})")]
    ExceptionalPair { found: usize, cap: usize },

    #[error("tangent vector is not based at the start of the geodesic")]
    MismatchedBase,

    #[error("wavevector component {value} is not a multiple of 2π/{length}")]
    IncommensurateWavevector { value: f64, length: f64 },

    #[error("grid specification mismatch: {0}")]
    SpecMismatch(String),

    #[error("imaginary residual {residual:e} exceeds the hermiticity tolerance")]
    NumericalHermiticityFailure { residual: f64 },

    #[error("operation is not supported on this geometry: {0}")]
    UnsupportedGeometry(String),

    #[error("time step {dt} violates the CFL bound dx = {dx}")]
    CflViolation { dt: f64, dx: f64 },

    #[error("invalid chart specification: {0}")]
    InvalidChart(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(err: std::io::Error) -> Self {
        Error::Io(err.to_string())
    }
}
