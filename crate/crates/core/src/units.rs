//! Physical constants, unit conversions, and the microwave-power →
//! drive-amplitude calibration chain.
//!
//! The drive amplitude seen by the spin scales as the square root of the
//! delivered microwave power, `B₁ = cal·√P_mW`, with a single scalar
//! attenuation between source and antenna.

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum UnitsError {
    #[error("gyromagnetic ratio must be positive, got {0}")]
    NonPositiveGamma(f64),
    #[error("line attenuation must be non-negative, got {0} dB")]
    NegativeAttenuation(f64),
    #[error("calibration constant must be positive, got {0}")]
    NonPositiveCalibration(f64),
    #[error("field amplitude must be non-negative, got {0} T")]
    NegativeField(f64),
}

/// Physical constants of the spin system.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhysConstants {
    /// Electron gyromagnetic ratio, Hz per Tesla.
    pub gamma_e: f64,
}

impl Default for PhysConstants {
    fn default() -> Self {
        PhysConstants { gamma_e: 27.97e9 }
    }
}

impl PhysConstants {
    pub fn new(gamma_e: f64) -> Result<Self, UnitsError> {
        if !(gamma_e > 0.0) {
            return Err(UnitsError::NonPositiveGamma(gamma_e));
        }
        Ok(PhysConstants { gamma_e })
    }
}

/// Microwave source power plus the fixed line attenuation between the
/// source and the antenna.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerSetting {
    /// Source power in dBm.
    pub p_mw_dbm: f64,
    /// Line attenuation in dB.
    pub attenuation_db: f64,
}

impl PowerSetting {
    pub const DEFAULT_ATTENUATION_DB: f64 = 30.0;

    pub fn new(p_mw_dbm: f64, attenuation_db: f64) -> Result<Self, UnitsError> {
        if !(attenuation_db >= 0.0) {
            return Err(UnitsError::NegativeAttenuation(attenuation_db));
        }
        Ok(PowerSetting {
            p_mw_dbm,
            attenuation_db,
        })
    }

    /// Source power with the default 30 dB line attenuation.
    pub fn with_default_attenuation(p_mw_dbm: f64) -> Self {
        PowerSetting {
            p_mw_dbm,
            attenuation_db: Self::DEFAULT_ATTENUATION_DB,
        }
    }

    pub fn delivered_dbm(&self) -> f64 {
        self.p_mw_dbm - self.attenuation_db
    }

    /// Power delivered past the attenuator, in milliwatts.
    pub fn delivered_mw(&self) -> f64 {
        dbm_to_mw(self.delivered_dbm())
    }
}

/// dBm → milliwatts: `10^(p/10)`.
pub fn dbm_to_mw(p_dbm: f64) -> f64 {
    10.0_f64.powf(p_dbm / 10.0)
}

/// Drive amplitude from a power setting, `B₁ = cal·√P_delivered`.
///
/// `cal` is in Tesla per √mW and must be positive.
pub fn b1_from_power(p: PowerSetting, cal_t_per_sqrt_mw: f64) -> Result<f64, UnitsError> {
    if !(cal_t_per_sqrt_mw > 0.0) {
        return Err(UnitsError::NonPositiveCalibration(cal_t_per_sqrt_mw));
    }
    Ok(cal_t_per_sqrt_mw * p.delivered_mw().sqrt())
}

/// Calibration constant that maps the given power setting to the given
/// drive amplitude under the √P law.
pub fn calibration_from_anchor(p: PowerSetting, b1_tesla: f64) -> Result<f64, UnitsError> {
    if !(b1_tesla > 0.0) {
        return Err(UnitsError::NegativeField(b1_tesla));
    }
    Ok(b1_tesla / p.delivered_mw().sqrt())
}

/// Drive coupling in frequency units: `ν₁ = γ_e·B₁`.
///
/// `2ν₁` is the on-resonance Rabi frequency; this is the convention under
/// which the diabatic transition probability `exp(−4π²ν₁²/rate)` reproduces
/// the measured π/2 sweep times.
pub fn nu1_from_b1(b1_tesla: f64, c: &PhysConstants) -> Result<f64, UnitsError> {
    if !(b1_tesla >= 0.0) {
        return Err(UnitsError::NegativeField(b1_tesla));
    }
    Ok(c.gamma_e * b1_tesla)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn dbm_reference_points() {
        assert_eq!(dbm_to_mw(0.0), 1.0);
        assert_relative_eq!(dbm_to_mw(-4.0), 0.3981071705534972, max_relative = 1e-12);
        assert_relative_eq!(dbm_to_mw(5.0), 3.1622776601683795, max_relative = 1e-12);
    }

    #[test]
    fn b1_from_anchored_calibration() {
        // calibration pinned so that -4 dBm after 30 dB attenuation gives 8.8 µT
        let anchor = PowerSetting::with_default_attenuation(-4.0);
        let cal = calibration_from_anchor(anchor, 8.8e-6).unwrap();
        assert_relative_eq!(cal, 4.4104476559199955e-4, max_relative = 1e-10);
        let b1 = b1_from_power(PowerSetting::with_default_attenuation(5.0), cal).unwrap();
        // 8.8 µT · 10^(9/20)
        assert_relative_eq!(b1, 2.480176979512719e-5, max_relative = 1e-10);
    }

    #[test]
    fn b1_vanishes_at_zero_power() {
        let p = PowerSetting::with_default_attenuation(-3000.0);
        let b1 = b1_from_power(p, 4.4e-4).unwrap();
        assert!(b1 < 1e-12);
        assert!(b1 >= 0.0);
    }

    #[test]
    fn nu1_reference_points() {
        let c = PhysConstants::default();
        assert_relative_eq!(nu1_from_b1(8.8e-6, &c).unwrap(), 246136.0, max_relative = 1e-9);
        assert_relative_eq!(nu1_from_b1(30e-6, &c).unwrap(), 839100.0, max_relative = 1e-9);
        assert_eq!(nu1_from_b1(0.0, &c).unwrap(), 0.0);
    }

    #[test]
    fn rejects_bad_domain() {
        assert!(b1_from_power(PowerSetting::with_default_attenuation(0.0), 0.0).is_err());
        assert!(b1_from_power(PowerSetting::with_default_attenuation(0.0), -1.0).is_err());
        assert!(nu1_from_b1(-1e-6, &PhysConstants::default()).is_err());
        assert!(PowerSetting::new(0.0, -1.0).is_err());
        assert!(PhysConstants::new(0.0).is_err());
    }

    proptest! {
        #[test]
        fn dbm_is_monotone_with_3db_doubling(p in -60.0..30.0f64) {
            let lo = dbm_to_mw(p);
            let hi = dbm_to_mw(p + 3.0);
            prop_assert!(hi > lo);
            prop_assert!((hi / lo - 1.9952623149688795).abs() < 1e-9);
        }

        #[test]
        fn b1_squared_is_linear_in_power(p in -40.0..10.0f64, cal in 1e-5..1e-2f64) {
            // doubling delivered power scales B1 by sqrt(2)
            let base = PowerSetting::with_default_attenuation(p);
            let doubled = PowerSetting::with_default_attenuation(p + 10.0 * 2.0f64.log10());
            let b1 = b1_from_power(base, cal).unwrap();
            let b2 = b1_from_power(doubled, cal).unwrap();
            prop_assert!((b2 / b1 - 2.0f64.sqrt()).abs() < 1e-9);
        }

        #[test]
        fn nu1_is_linear_and_homogeneous(b1 in 0.0..1e-3f64, k in 0.1..10.0f64) {
            let c = PhysConstants::default();
            let lhs = nu1_from_b1(k * b1, &c).unwrap();
            let rhs = k * nu1_from_b1(b1, &c).unwrap();
            prop_assert!((lhs - rhs).abs() <= 1e-9 * rhs.abs().max(1e-30));
        }
    }
}
