//! Exact event-driven simulation of a spatially explicit plant population
//! with zone-of-influence competition, and the deterministic mean-field limit
//! of its large-population scaling.
//!
//! The stochastic model tracks each plant's position and zone-of-influence
//! radius. Births, natural deaths and competition deaths are simulated with a
//! dominating exponential clock and acceptance/rejection; radii grow along a
//! Richards law between events.

pub mod engine;
pub mod error;
pub mod geometry;
pub mod io;
pub mod kernels;
pub mod meanfield;
pub mod model;
pub mod observables;
pub mod quadrature;
pub mod rng;

pub use engine::{global_rates, Engine, GlobalRates, Trajectory};
pub use error::{Error, Result};
pub use geometry::{lens_area, torus_delta, Domain, SpatialGrid, TorusVec};
pub use model::{
    DispersalMode, EventKind, EventRecord, Individual, KernelMode, ModelParams, Population,
    Position, RadiusLaw, Snapshot,
};
