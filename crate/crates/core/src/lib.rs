//! Simulation engine for a continuous, non-demolition detector of itinerant microwave
//! photons: a source mode cascaded into an inhomogeneous absorber ensemble whose
//! excitation number is read out by homodyne detection of a measurement resonator.

pub mod hilbert;
pub mod model;
pub mod integrator;
pub mod detection;
pub mod metrics;
pub mod experiment;
pub mod optimizer;
pub mod cli;
