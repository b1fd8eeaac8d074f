//! Simulation and analysis of a satellite-ground delayed-choice experiment.
//!
//! The library covers the full chain: LEO pass kinematics and laser-ranging
//! Doppler estimation, propagation of a hybrid time-bin/polarization photon
//! state through the interferometer, the shutter/choice timing protocol with
//! light-cone verification, Monte Carlo time-tag generation, and the
//! statistical analysis (phase binning, peak fitting, visibility and
//! which-path extraction).

pub mod analysis;
pub mod constants;
pub mod event_gen;
pub mod orbit;
pub mod photonics;
pub mod protocol;

pub use constants::PhysicalConstants;
