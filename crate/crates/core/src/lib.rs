//! Covariant quantum mechanics on a curved spacetime fibred over absolute
//! time.
//!
//! The crate is organised bottom-up:
//!
//! * [`units`] tags constants with their unit spaces and performs the
//!   rescalings of the metric and the electromagnetic field.
//! * [`expr`] is the scalar expression engine used for every analytic field.
//! * [`geometry`] holds the spacelike metric, the gravitational and total
//!   spacetime connections and their structural checks.
//! * [`phase`] builds the cosymplectic form on the jet space, the second
//!   order connection, classical trajectories and the Poisson bracket.
//! * [`falg`] is the Lie algebra of special quadratic functions.
//! * [`quantum`] contains the grid operators acting on wave functions.
//! * [`solver`] evolves wave functions and extracts spectra.

pub mod expr;
pub mod falg;
pub mod geometry;
pub mod grid;
pub mod phase;
pub mod quantum;
pub mod solver;
pub mod sparse;
pub mod units;

pub use expr::{Expr, Var};
pub use geometry::{
    EMField, FibredChart, GeometryBundle, ResidualReport, SpacelikeMetric, SpacetimeConnection,
};
pub use grid::{Grid, GridField};
pub use units::{DimTag, ScaledScalar};
pub use falg::{Classification, SpecialQuadratic};
pub use phase::{CosymplecticForm, PhasePoint, SecondOrderConnection};
pub use quantum::{QuantumOperator, WaveFunction, C64};
pub use solver::{EvolutionConfig, SpectrumConfig, SpectrumResult};
