//! Simulation and estimation toolkit for adiabatic inversion of a single
//! electron spin under a chirped microwave drive.
//!
//! The crate models the full chain from instrument settings to measured
//! spin-up fractions:
//!
//! - [`units`] — physical constants and the power → drive-amplitude
//!   calibration chain,
//! - [`model`] — shared domain types (density matrix, sweep protocol,
//!   device parameters, readout model),
//! - [`lz`] — closed-form Landau-Zener results,
//! - [`dynamics`] — density-matrix time evolution under the swept
//!   Hamiltonian with σ_z dephasing,
//! - [`readout`] — mapping between ideal spin-up probability and measured
//!   fractions, including binomial shot synthesis,
//! - [`spectrum`] — Gaussian line-shape models, drifting-center snapshot
//!   series, and shared-width bimodal fitting,
//! - [`estimation`] — joint recovery of drive amplitude, readout fidelity,
//!   and coherence time from sweep datasets.
//!
//! All internal frequencies are in Hz, times in seconds, and fields in
//! Tesla; conversions happen only at I/O boundaries.

pub mod dynamics;
pub mod estimation;
pub mod fit;
pub mod lz;
pub mod mat2;
pub mod model;
pub mod readout;
pub mod rng;
pub mod spectrum;
pub mod units;
