//! Mechanical billiards of the Lagrange problem — two Kepler centers plus a
//! Hooke center — in Euclidean, spherical, and hyperbolic space of dimension
//! `n >= 2`, with confocal quadric reflection walls.
//!
//! The crate integrates the flow in the flat chart and on the curved models,
//! transports states across the central projection, detects and applies
//! elastic reflections, and evaluates the first integrals of the system
//! together with numerical Poisson brackets and independence checks.

pub mod error;
pub mod flow;
pub mod forces;
pub mod integrals;
pub mod projection;
pub mod quadrics;
pub mod sampling;
pub mod spaceform;

pub use error::{Error, Result};
pub use flow::{
    simulate, IntegratorOptions, PhaseState, ReflectionEvent, SimOptions, StopCondition,
    Termination, Trajectory,
};
pub use forces::LagrangeParams;
pub use integrals::{DriftReport, FirstIntegral};
pub use projection::CentralProjection;
pub use quadrics::{QuadricWall, Sheet, WallKind};
pub use spaceform::{ChartTarget, Point, SpaceForm, SpaceKind, Vector};
