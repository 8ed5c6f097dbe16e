//! Mapping between the ideal spin-up probability and the measured spin-up
//! fraction, forward (simulation) and inverse (data correction), plus
//! binomial shot-noise synthesis.
//!
//! The expected measured fraction is
//!
//! ```text
//! R↑ = F↑·[P↑ + (1 − P↑)·P↑I]
//! ```
//!
//! the simplest mixing law that matches both endpoints: R↑(0) = F↑·P↑I
//! (the dark-count background) and R↑(1) = F↑. Up-state misses and
//! down-state dark counts are not separated.

use rand_distr::{Binomial, Distribution};
use thiserror::Error;

use crate::model::ReadoutModel;
use crate::rng;

#[derive(Debug, Error, PartialEq)]
pub enum ReadoutError {
    #[error("{name} = {value} is outside [0, 1]")]
    ProbabilityOutOfRange { name: &'static str, value: f64 },
    #[error("readout model is degenerate (f_up = {f_up}, p_up_i = {p_up_i}): not invertible")]
    DegenerateModel { f_up: f64, p_up_i: f64 },
}

/// One measured point of a sweep dataset.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeasuredPoint {
    /// Sweep duration T_S this point was recorded at, seconds.
    pub sweep_time: f64,
    /// Measured spin-up fraction, in [0, 1].
    pub r_up: f64,
    /// Number of single-shot repetitions behind `r_up`.
    pub shots: u32,
}

fn check_prob(name: &'static str, value: f64) -> Result<(), ReadoutError> {
    if !(0.0..=1.0).contains(&value) {
        return Err(ReadoutError::ProbabilityOutOfRange { name, value });
    }
    Ok(())
}

/// Expected measured spin-up fraction for ideal spin-up probability `p_up`.
pub fn observe(p_up: f64, m: &ReadoutModel) -> Result<f64, ReadoutError> {
    check_prob("p_up", p_up)?;
    Ok(m.f_up * (p_up + (1.0 - p_up) * m.p_up_i))
}

/// Result of inverting the readout map, clamped to [0, 1].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Corrected {
    pub p_up: f64,
    /// Set when the raw inverse fell outside [0, 1].
    pub clamped: bool,
}

/// Invert [`observe`]: recover the ideal spin-up probability from a
/// measured fraction. Exact inverse inside the physical range; values
/// outside are clamped and flagged.
pub fn correct(r_up: f64, m: &ReadoutModel) -> Result<Corrected, ReadoutError> {
    check_prob("r_up", r_up)?;
    if m.f_up == 0.0 || m.p_up_i >= 1.0 {
        return Err(ReadoutError::DegenerateModel {
            f_up: m.f_up,
            p_up_i: m.p_up_i,
        });
    }
    let raw = (r_up / m.f_up - m.p_up_i) / (1.0 - m.p_up_i);
    let p_up = raw.clamp(0.0, 1.0);
    Ok(Corrected {
        p_up,
        clamped: p_up != raw,
    })
}

/// Draw a binomial sample of `m.shots` single-shot outcomes with success
/// probability `observe(p_up)`. Deterministic given the seed.
pub fn synthesize_shots(
    sweep_time: f64,
    p_up: f64,
    m: &ReadoutModel,
    seed: u64,
) -> Result<MeasuredPoint, ReadoutError> {
    let r_expected = observe(p_up, m)?;
    let mut rng = rng::stream(seed, "readout-shots", 0);
    let k = Binomial::new(u64::from(m.shots), r_expected)
        .expect("probability already validated")
        .sample(&mut rng);
    Ok(MeasuredPoint {
        sweep_time,
        r_up: k as f64 / f64::from(m.shots),
        shots: m.shots,
    })
}

/// Inversion fidelity equivalent to a given angle-control fidelity for
/// resonant pulses: `F_I = ½·cos((1 − F_C)·π) + ½`.
pub fn inversion_fidelity_from_angle_control(f_c: f64) -> Result<f64, ReadoutError> {
    check_prob("f_c", f_c)?;
    Ok(0.5 * ((1.0 - f_c) * std::f64::consts::PI).cos() + 0.5)
}
