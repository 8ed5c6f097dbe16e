//! Closed-form Landau-Zener results, used both as the oracle for the
//! numerical dynamics and for fast design calculations.
//!
//! For a linear sweep of the detuning at rate `r = ∂(Δν)/∂t` through a
//! crossing with coupling ν₁ (in Hz, with 2ν₁ the Rabi frequency), the
//! probability of a diabatic transition is
//!
//! ```text
//! P_D = exp(−4π²·ν₁²/r)
//! ```
//!
//! valid in the limit of a sweep much wider than the transition window.

use thiserror::Error;

const FOUR_PI_SQ: f64 = 4.0 * std::f64::consts::PI * std::f64::consts::PI;

#[derive(Debug, Error, PartialEq)]
pub enum LzError {
    #[error("sweep rate must be positive, got {0} Hz/s")]
    NonPositiveRate(f64),
    #[error("coupling must be non-negative, got {0} Hz")]
    NegativeCoupling(f64),
    #[error("target probability must lie strictly inside (0, 1), got {0}")]
    ProbabilityOutOfRange(f64),
    #[error("no finite sweep time exists for zero coupling")]
    ZeroCoupling,
}

/// One evaluated point on a Landau-Zener curve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LzPoint {
    pub nu1: f64,
    pub rate: f64,
    pub p_diabatic: f64,
}

impl LzPoint {
    pub fn evaluate(nu1: f64, rate: f64) -> Result<Self, LzError> {
        Ok(LzPoint {
            nu1,
            rate,
            p_diabatic: landau_zener_pd(nu1, rate)?,
        })
    }
}

fn check_domain(nu1: f64, rate: f64) -> Result<(), LzError> {
    if !(nu1 >= 0.0) {
        return Err(LzError::NegativeCoupling(nu1));
    }
    if !(rate > 0.0) {
        return Err(LzError::NonPositiveRate(rate));
    }
    Ok(())
}

/// Diabatic transition probability `exp(−4π²ν₁²/rate)`.
pub fn landau_zener_pd(nu1: f64, rate: f64) -> Result<f64, LzError> {
    check_domain(nu1, rate)?;
    Ok((-FOUR_PI_SQ * nu1 * nu1 / rate).exp())
}

/// Probability that a sweep inverts an initial eigenstate, `1 − P_D`.
pub fn inversion_prob_coherent(nu1: f64, rate: f64) -> Result<f64, LzError> {
    Ok(1.0 - landau_zener_pd(nu1, rate)?)
}

/// Exponent magnitude `4π²ν₁²/rate`; the sweep is adiabatic when this is
/// large against one.
pub fn adiabaticity(nu1: f64, rate: f64) -> Result<f64, LzError> {
    check_domain(nu1, rate)?;
    Ok(FOUR_PI_SQ * nu1 * nu1 / rate)
}

/// Sweep duration that leaves the spin inverted with probability `p` for a
/// sweep of the given span: inverts the transition formula for T_S.
pub fn sweep_time_for_up_prob(p: f64, nu1: f64, span: f64) -> Result<f64, LzError> {
    if !(p > 0.0 && p < 1.0) {
        return Err(LzError::ProbabilityOutOfRange(p));
    }
    if !(nu1 >= 0.0) {
        return Err(LzError::NegativeCoupling(nu1));
    }
    if nu1 == 0.0 {
        return Err(LzError::ZeroCoupling);
    }
    if !(span > 0.0) {
        return Err(LzError::NonPositiveRate(span));
    }
    // P_D = 1 - p  =>  T_S = -span·ln(1-p)/(4π²ν₁²)
    Ok(-span * (-p).ln_1p() / (FOUR_PI_SQ * nu1 * nu1))
}

/// Detuning range over which the crossing acts: the coupling region
/// extends to ~±2ν₁ and the phase-jump region has width ~√rate. Sweeps
/// spanning many windows are in the wide-sweep regime where the
/// closed-form transition probability applies.
pub fn transition_window(nu1: f64, rate: f64) -> f64 {
    (4.0 * nu1).max(rate.sqrt())
}
