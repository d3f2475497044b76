use thiserror::Error;

/// Errors shared by the geometry, projection, and simulation layers.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("ambient dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("point is off the surface (constraint residual {residual:.3e})")]
    OffSurface { residual: f64 },

    #[error("equator singularity: last coordinate {0:.3e} is not strictly negative")]
    EquatorSingular(f64),

    #[error("point lies outside the Klein ball (|u|^2 = {0:.6})")]
    OutsideKleinBall(f64),

    #[error("collision with Kepler center {center} (chart distance {distance:.3e})")]
    CenterCollision { center: usize, distance: f64 },

    #[error("evaluation at a singular point of {what}")]
    SingularEvaluation { what: &'static str },

    #[error("no real focal parameter for shape ({a_axis}, {b_axis}) in this geometry")]
    NoFocalParameter { a_axis: f64, b_axis: f64 },

    #[error("walls do not share a focal parameter: expected a = {expected}, wall `{wall}` has a = {got}")]
    FocusMismatch { expected: f64, got: f64, wall: String },

    #[error("grazing wall hit: |<v,n>|/(|v||n|) = {0:.3e}")]
    GrazingHit(f64),

    #[error("degenerate wall normal at the evaluation point")]
    DegenerateNormal,

    #[error("step size underflow below {h_min:.3e} at t = {t}")]
    StepSizeUnderflow { t: f64, h_min: f64 },

    #[error("step budget exceeded ({0} accepted steps)")]
    StepBudgetExceeded(usize),

    #[error("angular momentum index out of range: ({i}, {j}) for dimension n = {n}")]
    IndexOutOfRange { i: usize, j: usize, n: usize },

    #[error("focal parameter must satisfy a^2 < 1 in hyperbolic geometry, got a = {0}")]
    FocalParameterTooLarge(f64),

    #[error("{0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, Error>;
