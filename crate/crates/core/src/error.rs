use thiserror::Error;

use crate::expr::ParseError;
use crate::integrator::{SegmentStatus, TrajectorySegment};

pub type Result<T> = std::result::Result<T, Error>;

/// Why a successor computation did not return to the positive y half-axis.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum SuccessorFailure {
    RadiusGuard,
    TimeGuard,
    StepFailure,
    AngularStall,
    NegativeReturn,
    Field,
}

#[derive(Debug, Error)]
#[error("successor failed at turn {turn}: {kind:?}")]
pub struct SuccessorError {
    pub turn: usize,
    pub kind: SuccessorFailure,
    pub partial: TrajectorySegment,
}

impl SuccessorFailure {
    pub fn from_status(status: SegmentStatus) -> Self {
        match status {
            SegmentStatus::RadiusGuard => SuccessorFailure::RadiusGuard,
            SegmentStatus::TimeGuard => SuccessorFailure::TimeGuard,
            SegmentStatus::AngularStall => SuccessorFailure::AngularStall,
            SegmentStatus::FieldError => SuccessorFailure::Field,
            _ => SuccessorFailure::StepFailure,
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error("non-finite field value at t={t}, x={x}, y={y}")]
    FieldEval { t: f64, x: f64, y: f64 },
    #[error("domain error: {0}")]
    Domain(String),
    #[error("angular velocity {omega:e} below floor at t={t}")]
    AngularStall { t: f64, omega: f64 },
    #[error("no bracket found: {0}")]
    Bracket(String),
    #[error(transparent)]
    Successor(Box<SuccessorError>),
    #[error("no sign change of the time residual at t0={t0}")]
    NoSignChange { t0: f64 },
    #[error("residual is flat (max |F| = {max_abs:e}); the problem is degenerate")]
    FlatResidual { max_abs: f64 },
    #[error("zero at t={t} is not simple (|x'| = {slope:e})")]
    NonSimpleZero { t: f64, slope: f64 },
    #[error("barrier violated: {0}")]
    BarrierViolation(String),
    #[error("root bracket error: {0}")]
    RootBracket(String),
    #[error("no admissible E0 up to {0:e}")]
    E0NotFound(f64),
    #[error("offset error: {0}")]
    Offset(String),
    #[error("cannot reach M = {0:e} within the sampled range")]
    MNotAchievable(f64),
    #[error("not found: {0}")]
    NotFound(String),
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn successor(turn: usize, kind: SuccessorFailure, partial: TrajectorySegment) -> Self {
        Error::Successor(Box::new(SuccessorError { turn, kind, partial }))
    }
}
