use thiserror::Error;

/// Errors raised by model construction, the event engine and the solvers.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// A model parameter violates one of its constraints.
    #[error("invalid parameter `{field}`: {constraint}")]
    Validation {
        field: &'static str,
        constraint: String,
    },

    /// An entry of an initial population is out of range.
    #[error("initial individual #{index}: {reason}")]
    InitialEntry { index: usize, reason: String },

    /// The population exceeded the configured hard cap (runaway growth).
    #[error("population size {size} exceeded the hard cap {cap} at t = {time}")]
    PopulationCap { size: usize, cap: usize, time: f64 },

    /// `step` was called on an extinct population.
    #[error("cannot draw an event from an empty population")]
    Extinct,

    /// Upwind transport would violate the CFL condition.
    #[error("CFL condition violated (courant number {courant:.3}); use dt <= {suggested_dt:e}")]
    Cfl { courant: f64, suggested_dt: f64 },

    /// The weighted-particle solver cannot keep its particle count under the cap.
    #[error("particle count {count} exceeds cap {cap} even after merging")]
    ParticleCap { count: usize, cap: usize },

    /// Numerical quadrature setup failed.
    #[error("quadrature failure: {0}")]
    Quadrature(String),

    /// A solver option is inconsistent.
    #[error("invalid solver option `{option}`: {reason}")]
    SolverOption { option: &'static str, reason: String },
}

pub type Result<T> = std::result::Result<T, Error>;
