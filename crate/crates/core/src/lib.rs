//! Wave-packet transit through a channel cut in a reflecting barrier.
//!
//! The crate propagates a 2D Gaussian packet with a Crank-Nicolson ADI
//! scheme, measures the beam momentum and the forces the barrier exerts on
//! it, and compares the confinement phase shift against closed-form
//! predictions. Units are hbar = m = 1 throughout; the beam runs along +x.

pub mod analytic;
pub mod config;
pub mod error;
pub mod experiments;
pub mod geometry;
pub mod grid;
pub mod observables;
pub mod propagator;
pub mod report;
pub mod tridiag;

pub use error::{Error, Result};
pub use geometry::{BarrierModel, ChannelGeometry, RealField, WallMask};
pub use grid::{ComplexField, Grid, PacketSpec, Region};
pub use observables::{ForceStencil, ObservableRecord, PotentialStencil};
pub use propagator::{AbsorbingLayer, Medium, Observer, Propagator, StepperConfig};
pub use config::{parse_config, RunConfig};
pub use experiments::{MomentumBudget, RunResult};
