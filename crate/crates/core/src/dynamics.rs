//! Numerical time evolution of the spin density matrix under the swept
//! Hamiltonian with σ_z dephasing.
//!
//! In the frame rotating at the spin's resonance frequency the Hamiltonian
//! is, in frequency units,
//!
//! ```text
//! H(t) = ½·Δν(t)·σ_z + ν₁·σ_x
//! ```
//!
//! and the equation of motion carries an explicit angular-frequency
//! conversion in the coherent term:
//!
//! ```text
//! dρ/dt = −i·2π·[H, ρ] + L(ρ),
//! L(ρ)  = (1/2T₂)·(2σ_zρσ_z − σ_zσ_zρ − ρσ_zσ_z)
//! ```
//!
//! With this convention the wide-sweep limit reproduces the closed-form
//! diabatic transition probability `exp(−4π²ν₁²/rate)` (checked against
//! [`crate::lz`] as an oracle). No lab-frame oscillation is ever
//! represented, so step sizes track the detuning, not the carrier.
//!
//! Integration uses the Dormand-Prince 5(4) embedded pair, adaptive by
//! default. The state is re-symmetrized (ρ ← (ρ+ρ†)/2) after every
//! accepted step and the density-matrix invariants are enforced at each
//! step; a violation beyond tolerance aborts with a numerical-instability
//! error rather than returning a corrupt state.

use num_complex::Complex64;
use thiserror::Error;

use crate::mat2::{commutator, Mat2};
use crate::model::{DensityMatrix2, ModelError, SpinSystemParams, SweepProtocol};

const TWO_PI: f64 = std::f64::consts::TAU;

#[derive(Debug, Error, PartialEq)]
pub enum EvolveError {
    #[error("step size underflow at t = {t:.6e} s")]
    StepUnderflow { t: f64 },
    #[error("numerical instability at t = {t:.6e} s: {source}")]
    NumericalInstability { t: f64, source: ModelError },
    #[error("invalid evolution settings: {0}")]
    InvalidSettings(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// How T₂ maps to the decay rate of the off-diagonal elements.
///
/// `TwoOverT2` applies the dephasing superoperator with a bare σ_z jump
/// operator and prefactor 1/(2T₂), which decays coherences at 2/T₂; this
/// is the convention the fitted T₂ values in this crate refer to.
/// `OneOverT2` is the textbook convention with coherence decay 1/T₂.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DephasingConvention {
    TwoOverT2,
    OneOverT2,
}

impl DephasingConvention {
    /// Off-diagonal decay rate for a given T₂ (zero when T₂ is infinite,
    /// which skips the dissipator entirely).
    fn off_diagonal_rate(self, t2: f64) -> f64 {
        if !t2.is_finite() {
            return 0.0;
        }
        match self {
            DephasingConvention::TwoOverT2 => 2.0 / t2,
            DephasingConvention::OneOverT2 => 1.0 / t2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepMode {
    /// Embedded pair with error-controlled step size.
    Adaptive,
    /// Embedded pair stepped at `max_step` with no rejection.
    Fixed,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvolutionSettings {
    pub mode: StepMode,
    pub rel_tol: f64,
    pub abs_tol: f64,
    /// Upper bound on the step size; `None` means duration/1000.
    pub max_step: Option<f64>,
    /// Record every accepted step; otherwise only the endpoints.
    pub store_trajectory: bool,
    pub dephasing: DephasingConvention,
}

impl Default for EvolutionSettings {
    fn default() -> Self {
        EvolutionSettings {
            mode: StepMode::Adaptive,
            rel_tol: 1e-8,
            abs_tol: 1e-10,
            max_step: None,
            store_trajectory: false,
            dephasing: DephasingConvention::TwoOverT2,
        }
    }
}

impl EvolutionSettings {
    fn validate(&self) -> Result<(), EvolveError> {
        if !(self.rel_tol > 0.0) || !(self.abs_tol > 0.0) {
            return Err(EvolveError::InvalidSettings(format!(
                "tolerances must be positive (rel {}, abs {})",
                self.rel_tol, self.abs_tol
            )));
        }
        if let Some(h) = self.max_step {
            if !(h > 0.0) {
                return Err(EvolveError::InvalidSettings(format!(
                    "max_step must be positive, got {h}"
                )));
            }
        }
        Ok(())
    }
}

/// Time-resolved evolution record. `times` are strictly increasing and
/// every stored state satisfies the density-matrix invariants.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<DensityMatrix2>,
    pub p_up: Vec<f64>,
}

impl Trajectory {
    pub fn final_state(&self) -> &DensityMatrix2 {
        self.states.last().expect("trajectory is never empty")
    }

    pub fn final_p_up(&self) -> f64 {
        *self.p_up.last().expect("trajectory is never empty")
    }

    /// CSV rows `time_s,rho00_re,rho01_re,rho01_im,rho11_re,p_up`.
    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "time_s,rho00_re,rho01_re,rho01_im,rho11_re,p_up")?;
        for (i, t) in self.times.iter().enumerate() {
            let m = self.states[i].matrix();
            writeln!(
                w,
                "{},{},{},{},{},{}",
                t, m.e[0][0].re, m.e[0][1].re, m.e[0][1].im, m.e[1][1].re, self.p_up[i]
            )?;
        }
        Ok(())
    }
}

/// Hamiltonian at time `t` of the sweep, in frequency units (Hz):
/// `½·Δν(t)·σ_z + ν₁·σ_x`. Traceless; gap at Δν = 0 equals 2ν₁.
pub fn hamiltonian_at(t: f64, s: &SweepProtocol, nu1: f64) -> Result<Mat2, EvolveError> {
    if !(nu1 >= 0.0) {
        return Err(EvolveError::Model(ModelError::InvalidNu1(nu1)));
    }
    let half_detuning = 0.5 * s.detuning_at(t)?;
    Ok(Mat2::new(
        half_detuning.into(),
        nu1.into(),
        nu1.into(),
        (-half_detuning).into(),
    ))
}

/// Right-hand side of the master equation for state `rho` under
/// Hamiltonian `h` (Hz) with coherence time `t2`.
///
/// The returned derivative is traceless; the dissipator leaves the
/// diagonal untouched and damps ρ₀₁ at `2/T₂` (or `1/T₂` under
/// [`DephasingConvention::OneOverT2`]).
pub fn lindblad_rhs(
    rho: &DensityMatrix2,
    h: &Mat2,
    t2: f64,
    convention: DephasingConvention,
) -> Result<Mat2, EvolveError> {
    if !(t2 > 0.0) || t2.is_nan() {
        return Err(EvolveError::Model(ModelError::InvalidT2(t2)));
    }
    Ok(rhs_raw(
        rho.matrix(),
        h,
        convention.off_diagonal_rate(t2),
    ))
}

#[inline(always)]
fn rhs_raw(rho: &Mat2, h: &Mat2, gamma: f64) -> Mat2 {
    // −i·2π·[H, ρ]; σ_z dephasing only touches the off-diagonals
    let mut d = commutator(h, rho) * Complex64::new(0.0, -TWO_PI);
    d.e[0][1] -= rho.e[0][1] * gamma;
    d.e[1][0] -= rho.e[1][0] * gamma;
    d
}

// Dormand-Prince 5(4) tableau.
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const B1: f64 = 35.0 / 384.0;
const B3: f64 = 500.0 / 1113.0;
const B4: f64 = 125.0 / 192.0;
const B5: f64 = -2187.0 / 6784.0;
const B6: f64 = 11.0 / 84.0;
// b − b̂: error estimator weights
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

struct StepResult {
    y_new: Mat2,
    /// RMS of the componentwise error against `abs_tol + rel_tol·|y|`.
    err_norm: f64,
    k_last: Mat2,
}

#[inline(always)]
fn dopri5_step<F: Fn(f64, &Mat2) -> Mat2>(
    f: &F,
    t: f64,
    h: f64,
    y: &Mat2,
    k1: &Mat2,
    abs_tol: f64,
    rel_tol: f64,
) -> StepResult {
    let k2 = f(t + h * A21, &(*y + *k1 * (h * A21)));
    let k3 = f(t + h * 0.3, &(*y + *k1 * (h * A31) + k2 * (h * A32)));
    let k4 = f(
        t + h * 0.8,
        &(*y + *k1 * (h * A41) + k2 * (h * A42) + k3 * (h * A43)),
    );
    let k5 = f(
        t + h * (8.0 / 9.0),
        &(*y + *k1 * (h * A51) + k2 * (h * A52) + k3 * (h * A53) + k4 * (h * A54)),
    );
    let k6 = f(
        t + h,
        &(*y + *k1 * (h * A61) + k2 * (h * A62) + k3 * (h * A63) + k4 * (h * A64) + k5 * (h * A65)),
    );
    let y_new = *y + *k1 * (h * B1) + k3 * (h * B3) + k4 * (h * B4) + k5 * (h * B5) + k6 * (h * B6);
    let k7 = f(t + h, &y_new);
    let err =
        *k1 * (h * E1) + k3 * (h * E3) + k4 * (h * E4) + k5 * (h * E5) + k6 * (h * E6) + k7 * (h * E7);

    let mut acc = 0.0;
    for i in 0..2 {
        for j in 0..2 {
            let sc_re = abs_tol + rel_tol * y.e[i][j].re.abs().max(y_new.e[i][j].re.abs());
            let sc_im = abs_tol + rel_tol * y.e[i][j].im.abs().max(y_new.e[i][j].im.abs());
            let er = err.e[i][j].re / sc_re;
            let ei = err.e[i][j].im / sc_im;
            acc += er * er + ei * ei;
        }
    }
    StepResult {
        y_new,
        err_norm: (acc / 8.0).sqrt(),
        k_last: k7,
    }
}

/// Evolve `rho0` through the sweep. Trace is preserved to 1e-9 over the
/// whole trajectory and, with T₂ = ∞, purity to 1e-6.
pub fn evolve(
    rho0: &DensityMatrix2,
    s: &SweepProtocol,
    p: &SpinSystemParams,
    opts: &EvolutionSettings,
) -> Result<Trajectory, EvolveError> {
    opts.validate()?;
    let duration = s.duration;
    let gamma = opts.dephasing.off_diagonal_rate(p.t2);
    let nu1 = p.nu1;
    let rhs = |t: f64, y: &Mat2| -> Mat2 {
        let half_detuning = 0.5 * s.detuning_unchecked(t);
        let h = Mat2::new(
            half_detuning.into(),
            nu1.into(),
            nu1.into(),
            (-half_detuning).into(),
        );
        rhs_raw(y, &h, gamma)
    };

    let h_max = opts.max_step.unwrap_or(duration / 1000.0).min(duration);
    let h_min = duration * 1e-15;

    let mut times = Vec::new();
    let mut states = Vec::new();
    let mut p_ups = Vec::new();
    let mut store = |t: f64, m: &Mat2| -> Result<(), EvolveError> {
        let dm = DensityMatrix2::new(*m)
            .map_err(|source| EvolveError::NumericalInstability { t, source })?;
        times.push(t);
        p_ups.push(dm.p_up());
        states.push(dm);
        Ok(())
    };

    let mut y = *rho0.matrix();
    let mut t = 0.0_f64;
    store(t, &y)?;

    match opts.mode {
        StepMode::Fixed => {
            let n_steps = (duration / h_max).ceil().max(1.0) as u64;
            let h = duration / n_steps as f64;
            let mut k1 = rhs(t, &y);
            for i in 0..n_steps {
                let res = dopri5_step(&rhs, t, h, &y, &k1, opts.abs_tol, opts.rel_tol);
                y = res.y_new.symmetrize();
                t = if i + 1 == n_steps {
                    duration
                } else {
                    (i + 1) as f64 * h
                };
                k1 = rhs(t, &y);
                if opts.store_trajectory || i + 1 == n_steps {
                    store(t, &y)?;
                } else {
                    validate_state(t, &y)?;
                }
            }
        }
        StepMode::Adaptive => {
            let mut h = initial_step(duration, h_max);
            let mut k1 = rhs(t, &y);
            while t < duration {
                h = h.min(duration - t).min(h_max);
                if h < h_min {
                    return Err(EvolveError::StepUnderflow { t });
                }
                let res = dopri5_step(&rhs, t, h, &y, &k1, opts.abs_tol, opts.rel_tol);
                if res.err_norm <= 1.0 {
                    t += h;
                    // land exactly on the endpoint despite rounding
                    if duration - t < h_min {
                        t = duration;
                    }
                    y = res.y_new.symmetrize();
                    // symmetrization shifts the state off the FSAL stage by
                    // O(roundoff); reuse is still within the error estimate
                    k1 = res.k_last;
                    if opts.store_trajectory || t >= duration {
                        store(t, &y)?;
                    } else {
                        validate_state(t, &y)?;
                    }
                    let factor = if res.err_norm == 0.0 {
                        5.0
                    } else {
                        (0.9 * res.err_norm.powf(-0.2)).clamp(0.2, 5.0)
                    };
                    h *= factor;
                } else {
                    h *= (0.9 * res.err_norm.powf(-0.2)).clamp(0.2, 0.9);
                }
            }
        }
    }

    Ok(Trajectory {
        times,
        states,
        p_up: p_ups,
    })
}

/// Invariant check for unstored intermediate states.
fn validate_state(t: f64, m: &Mat2) -> Result<(), EvolveError> {
    DensityMatrix2::new(*m)
        .map(|_| ())
        .map_err(|source| EvolveError::NumericalInstability { t, source })
}

/// Conservative first step; the controller corrects it within a few steps.
fn initial_step(duration: f64, h_max: f64) -> f64 {
    (duration * 1e-4).min(h_max)
}

/// Final spin-up probability of a sweep starting from |↓⟩.
pub fn simulate_sweep_pup(
    s: &SweepProtocol,
    p: &SpinSystemParams,
    opts: &EvolutionSettings,
) -> Result<f64, EvolveError> {
    let traj = evolve(&DensityMatrix2::spin_down(), s, p, opts)?;
    Ok(traj.final_p_up())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lz;
    use crate::model::{NuclearSpin, SweepDirection};
    use approx::{assert_abs_diff_eq, assert_relative_eq};

    fn params(nu1: f64, t2: f64) -> SpinSystemParams {
        SpinSystemParams::with_drive(nu1, t2).unwrap()
    }

    #[test]
    fn hamiltonian_reference_points() {
        // on resonance: pure σ_x with eigenvalues ±ν₁
        let s = SweepProtocol::centered(25e6, 6e-6).unwrap();
        let h = hamiltonian_at(3e-6, &s, 839100.0).unwrap();
        let (lo, hi) = h.eigvals_hermitian();
        assert_relative_eq!(lo, -839100.0, max_relative = 1e-12);
        assert_relative_eq!(hi, 839100.0, max_relative = 1e-12);
        assert_abs_diff_eq!(h.trace().norm(), 0.0, epsilon = 1e-9);

        // no drive: pure σ_z, diag(+Δν/2, −Δν/2)
        let s = SweepProtocol::new(20e6, 10e-6, 0.0, SweepDirection::Up).unwrap();
        let h = hamiltonian_at(10e-6, &s, 0.0).unwrap();
        assert_eq!(h.e[0][0].re, 5e6);
        assert_eq!(h.e[1][1].re, -5e6);
        assert_eq!(h.e[0][1].norm(), 0.0);
    }

    #[test]
    fn hamiltonian_gap_closed_form() {
        let s = SweepProtocol::centered(25e6, 6e-6).unwrap();
        for (frac, nu1) in [(0.1, 2e5), (0.37, 8e5), (0.9, 1.3e6)] {
            let t = frac * 6e-6;
            let h = hamiltonian_at(t, &s, nu1).unwrap();
            let (lo, hi) = h.eigvals_hermitian();
            let d = s.detuning_at(t).unwrap();
            let gap = 2.0 * (0.25 * d * d + nu1 * nu1).sqrt();
            assert_relative_eq!(hi - lo, gap, max_relative = 1e-12);
        }
    }

    #[test]
    fn rhs_stationary_under_diagonal_hamiltonian() {
        let rho = DensityMatrix2::spin_down();
        let h = Mat2::diag(3e6, -3e6);
        let d = lindblad_rhs(&rho, &h, 44e-6, DephasingConvention::TwoOverT2).unwrap();
        assert_eq!(d.max_abs(), 0.0);
    }

    #[test]
    fn rhs_coherence_decay_rate() {
        // ρ with off-diagonal c decays at 2/T₂ (dissipator expanded with
        // σ_z σ_z = 1), diagonal untouched
        let c = Complex64::new(0.21, -0.13);
        let rho = DensityMatrix2::new(Mat2::new(0.5.into(), c, c.conj(), 0.5.into())).unwrap();
        let t2 = 44e-6;
        let d = lindblad_rhs(&rho, &Mat2::ZERO, t2, DephasingConvention::TwoOverT2).unwrap();
        assert_abs_diff_eq!(d.e[0][0].norm(), 0.0, epsilon = 1e-18);
        assert_abs_diff_eq!(d.e[1][1].norm(), 0.0, epsilon = 1e-18);
        assert!((d.e[0][1] - c * (-2.0 / t2)).norm() < 1e-9 * (c.norm() * 2.0 / t2));
        // textbook convention: half the rate
        let d = lindblad_rhs(&rho, &Mat2::ZERO, t2, DephasingConvention::OneOverT2).unwrap();
        assert!((d.e[0][1] - c * (-1.0 / t2)).norm() < 1e-9 * (c.norm() / t2));
    }

    #[test]
    fn rhs_matches_literal_superoperator() {
        // independent route: assemble (1/2T₂)(2σρσ − σσρ − ρσσ) − i2π[H,ρ]
        // from explicit matrix products
        let c = Complex64::new(0.11, 0.07);
        let rho_m = Mat2::new(0.4.into(), c, c.conj(), 0.6.into());
        let rho = DensityMatrix2::new(rho_m).unwrap();
        let h = Mat2::new(2e6.into(), 5e5.into(), 5e5.into(), (-2e6).into());
        let t2 = 10e-6;
        let got = lindblad_rhs(&rho, &h, t2, DephasingConvention::TwoOverT2).unwrap();

        let sz = Mat2::sigma_z();
        let dissipator =
            (sz * rho_m * sz * 2.0 - sz * sz * rho_m - rho_m * sz * sz) * (0.5 / t2);
        let expected =
            commutator(&h, &rho_m) * Complex64::new(0.0, -TWO_PI) + dissipator;
        assert!((got - expected).max_abs() < 1e-6);
    }

    #[test]
    fn rhs_commutator_drives_coherence() {
        // on-resonance drive from |↓⟩: populations stationary at t=0, the
        // coherence grows at |dρ₀₁/dt| = 2πν₁ (phase −i in this basis)
        let nu1 = 5e5;
        let h = Mat2::new(0.0.into(), nu1.into(), nu1.into(), 0.0.into());
        let d = lindblad_rhs(
            &DensityMatrix2::spin_down(),
            &h,
            f64::INFINITY,
            DephasingConvention::TwoOverT2,
        )
        .unwrap();
        assert_abs_diff_eq!(d.e[0][0].norm(), 0.0, epsilon = 1e-18);
        let expected = Complex64::new(0.0, -TWO_PI * nu1);
        assert!((d.e[0][1] - expected).norm() < 1e-9 * TWO_PI * nu1);
    }

    #[test]
    fn rhs_is_traceless() {
        let c = Complex64::new(0.2, 0.1);
        let rho = DensityMatrix2::new(Mat2::new(0.3.into(), c, c.conj(), 0.7.into())).unwrap();
        let h = Mat2::new(1e6.into(), 3e5.into(), 3e5.into(), (-1e6).into());
        let d = lindblad_rhs(&rho, &h, 5e-6, DephasingConvention::TwoOverT2).unwrap();
        assert_abs_diff_eq!(d.trace().norm(), 0.0, epsilon = 1e-4);
    }

    #[test]
    fn no_drive_leaves_spin_down_exactly() {
        let s = SweepProtocol::centered(25e6, 5e-6).unwrap();
        let p = params(0.0, 44e-6);
        let pup = simulate_sweep_pup(&s, &p, &EvolutionSettings::default()).unwrap();
        assert_eq!(pup, 0.0);
    }

    #[test]
    fn rabi_oscillation_against_closed_form() {
        // constant on-resonance drive via a negligible span: p↑(T) = sin²(2πν₁T),
        // i.e. the population oscillates at the Rabi frequency 2ν₁
        let nu1 = 2.5e5;
        let t_total = 0.6e-6;
        let s = SweepProtocol::new(1e-3, t_total, 0.0, SweepDirection::Up).unwrap();
        let p = params(nu1, f64::INFINITY);
        let pup = simulate_sweep_pup(&s, &p, &EvolutionSettings::default()).unwrap();
        let exact = (TWO_PI * nu1 * t_total).sin().powi(2);
        assert_abs_diff_eq!(pup, exact, epsilon = 1e-7);
    }

    #[test]
    fn half_crossing_sweep() {
        // the π/2 protocol leaves p↑ = 0.5 up to finite-span effects
        let t_s = 7.245284707e-6;
        let s = SweepProtocol::centered(25e6, t_s).unwrap();
        let p = params(246136.0, f64::INFINITY);
        let pup = simulate_sweep_pup(&s, &p, &EvolutionSettings::default()).unwrap();
        assert!((pup - 0.5).abs() < 0.02, "p_up = {pup}");
    }

    #[test]
    fn off_resonant_sweep_stays_down() {
        let s = SweepProtocol::new(25e6, 6e-6, 114.4e6, SweepDirection::Up).unwrap();
        let p = params(839100.0, 44e-6);
        let pup = simulate_sweep_pup(&s, &p, &EvolutionSettings::default()).unwrap();
        assert!(pup < 0.01, "p_up = {pup}");
    }

    #[test]
    fn optimal_inversion_with_dephasing() {
        // ν₁ for 30 µT, 25 MHz in 6 µs, T₂ = 44 µs
        let s = SweepProtocol::centered(25e6, 6e-6).unwrap();
        let p = params(839100.0, 44e-6);
        let pup = simulate_sweep_pup(&s, &p, &EvolutionSettings::default()).unwrap();
        assert!((0.95..=0.99).contains(&pup), "p_up = {pup}");
    }

    #[test]
    fn sudden_limit_leaves_spin_down() {
        let s = SweepProtocol::centered(25e6, 1e-9).unwrap();
        let p = params(839100.0, f64::INFINITY);
        let pup = simulate_sweep_pup(&s, &p, &EvolutionSettings::default()).unwrap();
        assert!(pup < 1e-3, "p_up = {pup}");
    }

    #[test]
    fn slow_sweep_is_dephasing_limited() {
        let s = SweepProtocol::centered(25e6, 50e-6).unwrap();
        let p = params(246136.0, 44e-6);
        let pup = simulate_sweep_pup(&s, &p, &EvolutionSettings::default()).unwrap();
        assert!(pup < 0.95, "p_up = {pup}");
        // and strictly worse than the coherent limit
        let coherent = lz::inversion_prob_coherent(246136.0, 25e6 / 50e-6).unwrap();
        assert!(pup < coherent);
    }

    #[test]
    fn matches_lz_oracle_on_wide_sweeps() {
        // small grid here; the acceptance suite runs the full one
        for (nu1, rate) in [(1e5, 1e12), (4e5, 1e13), (1e6, 3e13), (2e5, 3e12)] {
            let span = 50.0 * lz::transition_window(nu1, rate);
            let s = SweepProtocol::centered(span, span / rate).unwrap();
            let p = params(nu1, f64::INFINITY);
            let pup = simulate_sweep_pup(&s, &p, &EvolutionSettings::default()).unwrap();
            let oracle = lz::inversion_prob_coherent(nu1, rate).unwrap();
            assert!(
                (pup - oracle).abs() < 1e-3,
                "nu1 {nu1} rate {rate}: {pup} vs {oracle}"
            );
        }
    }

    #[test]
    fn trajectory_invariants_hold() {
        let s = SweepProtocol::centered(25e6, 6e-6).unwrap();
        let p = params(839100.0, 44e-6);
        let opts = EvolutionSettings {
            store_trajectory: true,
            ..EvolutionSettings::default()
        };
        let traj = evolve(&DensityMatrix2::spin_down(), &s, &p, &opts).unwrap();
        assert!(traj.times.len() > 100);
        assert!(traj.times.windows(2).all(|w| w[1] > w[0]));
        assert_eq!(*traj.times.last().unwrap(), 6e-6);
        for state in &traj.states {
            let m = state.matrix();
            assert!((m.trace().re - 1.0).abs() < 1e-9);
            assert!(m.hermiticity_defect() < 1e-10);
            assert!(m.eigvals_hermitian().0 >= -1e-8);
        }
    }

    #[test]
    fn purity_preserved_without_dephasing() {
        let s = SweepProtocol::centered(25e6, 6e-6).unwrap();
        let p = params(839100.0, f64::INFINITY);
        let opts = EvolutionSettings {
            store_trajectory: true,
            ..EvolutionSettings::default()
        };
        let traj = evolve(&DensityMatrix2::spin_down(), &s, &p, &opts).unwrap();
        for state in &traj.states {
            assert!((state.purity() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn direction_symmetry() {
        let tight = EvolutionSettings {
            rel_tol: 1e-11,
            abs_tol: 1e-13,
            ..EvolutionSettings::default()
        };
        for t2 in [f64::INFINITY, 44e-6] {
            let p = params(246136.0, t2);
            let up = SweepProtocol::new(25e6, 7.2e-6, 0.0, SweepDirection::Up).unwrap();
            let down = SweepProtocol::new(25e6, 7.2e-6, 0.0, SweepDirection::Down).unwrap();
            let a = simulate_sweep_pup(&up, &p, &tight).unwrap();
            let b = simulate_sweep_pup(&down, &p, &tight).unwrap();
            assert!((a - b).abs() < 1e-9, "t2 {t2}: {a} vs {b}");
        }
    }

    #[test]
    fn dephasing_monotonicity() {
        let s = SweepProtocol::centered(25e6, 6e-6).unwrap();
        let mut last = f64::INFINITY;
        for t2 in [f64::INFINITY, 200e-6, 44e-6, 10e-6, 3e-6] {
            let p = params(839100.0, t2);
            let pup = simulate_sweep_pup(&s, &p, &EvolutionSettings::default()).unwrap();
            assert!(
                pup <= last + 1e-9,
                "p_up not monotone in 1/T₂: {pup} after {last} at T₂ = {t2}"
            );
            last = pup;
        }
    }

    #[test]
    fn fixed_step_agrees_with_adaptive() {
        let s = SweepProtocol::centered(25e6, 6e-6).unwrap();
        let p = params(839100.0, 44e-6);
        let adaptive = simulate_sweep_pup(&s, &p, &EvolutionSettings::default()).unwrap();
        let fixed = EvolutionSettings {
            mode: StepMode::Fixed,
            max_step: Some(6e-6 / 20000.0),
            ..EvolutionSettings::default()
        };
        let fixed_pup = simulate_sweep_pup(&s, &p, &fixed).unwrap();
        assert_abs_diff_eq!(adaptive, fixed_pup, epsilon = 1e-6);
    }

    #[test]
    fn step_underflow_is_reported() {
        // an impossible tolerance forces the controller below the floor
        let s = SweepProtocol::centered(25e6, 6e-6).unwrap();
        let p = params(839100.0, f64::INFINITY);
        let opts = EvolutionSettings {
            rel_tol: 1e-300,
            abs_tol: 1e-300,
            ..EvolutionSettings::default()
        };
        let res = simulate_sweep_pup(&s, &p, &opts);
        assert!(
            matches!(res, Err(EvolveError::StepUnderflow { .. })),
            "{res:?}"
        );
    }

    #[test]
    fn rejects_invalid_settings() {
        let s = SweepProtocol::centered(25e6, 6e-6).unwrap();
        let p = params(839100.0, 44e-6);
        for bad in [
            EvolutionSettings {
                rel_tol: 0.0,
                ..EvolutionSettings::default()
            },
            EvolutionSettings {
                abs_tol: -1.0,
                ..EvolutionSettings::default()
            },
            EvolutionSettings {
                max_step: Some(0.0),
                ..EvolutionSettings::default()
            },
        ] {
            assert!(matches!(
                simulate_sweep_pup(&s, &p, &bad),
                Err(EvolveError::InvalidSettings(_))
            ));
        }
    }

    #[test]
    fn nuclear_state_does_not_enter_rotating_frame() {
        // the frame absorbs the resonance; only ν₁, T₂ and the protocol matter
        let s = SweepProtocol::centered(25e6, 2e-6).unwrap();
        let a = SpinSystemParams::new(1.3, 114.4e6, NuclearSpin::Down, 5e5, 44e-6).unwrap();
        let b = SpinSystemParams::new(1.3, 114.4e6, NuclearSpin::Up, 5e5, 44e-6).unwrap();
        let opts = EvolutionSettings::default();
        assert_eq!(
            simulate_sweep_pup(&s, &a, &opts).unwrap(),
            simulate_sweep_pup(&s, &b, &opts).unwrap()
        );
    }
}
