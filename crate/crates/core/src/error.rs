use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("degenerate profile: derivative root at x = {x} has |next derivative| = {value:e} below tolerance")]
    DegenerateProfile { x: f64, value: f64 },

    #[error("invalid profile table: {0}")]
    InvalidProfileTable(String),

    #[error("unknown profile `{0}`")]
    UnknownProfile(String),

    #[error("invalid kappa {0}: expected 0 < kappa <= 1/4 with a representable 1/kappa")]
    InvalidKappa(f64),

    #[error("invalid amplitude {0}: expected a finite non-negative value")]
    InvalidAmplitude(f64),

    #[error("invalid horizon {0}: at least two legs are required")]
    InvalidHorizon(usize),

    #[error("quadrature too coarse: {points} points for {supports} support intervals (need >= 1024 per interval)")]
    QuadratureTooCoarse { points: usize, supports: usize },

    #[error("time {requested} exceeds the sampled horizon {horizon}")]
    HorizonExceeded { requested: f64, horizon: f64 },

    #[error("grid size {0} must be a power of two >= 4")]
    InvalidGrid(usize),

    #[error("field is not mean-zero: |f(0,0)| = {0:e}")]
    NotMeanZero(f64),

    #[error("grid mismatch: {0} vs {1}")]
    GridMismatch(usize, usize),

    #[error("p = {0} outside (0, 1/12)")]
    InvalidExponent(f64),

    #[error("pair lies on the diagonal")]
    OnDiagonal,

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("no decay within horizon: operator norm {norm} > 1/2 at t = {t}")]
    NoDecayWithinHorizon { t: f64, norm: f64 },

    #[error("threshold not crossed below the search cap {cap}")]
    NoRoot { cap: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

pub type Result<T> = std::result::Result<T, Error>;
