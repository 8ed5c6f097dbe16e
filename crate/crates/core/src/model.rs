//! Shared domain types: spin state, sweep protocol, device parameters, and
//! the readout model.
//!
//! Basis convention: (|↑⟩, |↓⟩), with |↑⟩ the +1 eigenstate of σ_z. A
//! freshly loaded electron is |↓⟩, i.e. ρ = diag(0, 1). All modules share
//! this convention.

use thiserror::Error;

use crate::mat2::Mat2;
use crate::units::PhysConstants;

/// Maximum tolerated deviation from the conjugate transpose.
pub const HERMITICITY_TOL: f64 = 1e-12;
/// Maximum tolerated deviation of the trace from one.
pub const TRACE_TOL: f64 = 1e-9;
/// Most negative tolerated eigenvalue.
pub const EIGENVALUE_FLOOR: f64 = -1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("density matrix is not Hermitian (defect {0:.3e})")]
    NotHermitian(f64),
    #[error("density matrix trace deviates from one by {0:.3e}")]
    TraceNotOne(f64),
    #[error("density matrix has eigenvalue {0:.3e} below the positivity floor")]
    NotPositive(f64),
    #[error("sweep span must be positive and finite, got {0} Hz")]
    InvalidSpan(f64),
    #[error("sweep duration must be positive and finite, got {0} s")]
    InvalidDuration(f64),
    #[error("sweep center offset must be finite, got {0} Hz")]
    InvalidOffset(f64),
    #[error("time {t:.6e} s outside the sweep window [0, {duration:.6e}] s")]
    TimeOutsideSweep { t: f64, duration: f64 },
    #[error("static field must be positive, got {0} T")]
    InvalidStaticField(f64),
    #[error("hyperfine coupling must be non-negative, got {0} Hz")]
    InvalidHyperfine(f64),
    #[error("drive coupling must be non-negative, got {0} Hz")]
    InvalidNu1(f64),
    #[error("coherence time must be positive (or infinite), got {0} s")]
    InvalidT2(f64),
    #[error("probability {value} out of range for {name}")]
    ProbabilityOutOfRange { name: &'static str, value: f64 },
    #[error("shot count must be at least one")]
    NoShots,
}

/// Electron spin density matrix: 2×2, Hermitian, unit trace, positive
/// semidefinite, in the (|↑⟩, |↓⟩) basis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DensityMatrix2 {
    m: Mat2,
}

impl DensityMatrix2 {
    /// Validate and wrap a matrix. Hermiticity within [`HERMITICITY_TOL`],
    /// trace within [`TRACE_TOL`] of one, eigenvalues above
    /// [`EIGENVALUE_FLOOR`].
    pub fn new(m: Mat2) -> Result<Self, ModelError> {
        let defect = m.hermiticity_defect();
        if !(defect <= HERMITICITY_TOL) {
            return Err(ModelError::NotHermitian(defect));
        }
        let tr = m.trace();
        let tr_dev = (tr.re - 1.0).hypot(tr.im);
        if !(tr_dev <= TRACE_TOL) {
            return Err(ModelError::TraceNotOne(tr_dev));
        }
        let (lo, _) = m.eigvals_hermitian();
        if !(lo >= EIGENVALUE_FLOOR) {
            return Err(ModelError::NotPositive(lo));
        }
        Ok(DensityMatrix2 { m })
    }

    /// ρ = |↓⟩⟨↓| = diag(0, 1): a freshly loaded electron.
    pub fn spin_down() -> Self {
        DensityMatrix2 {
            m: Mat2::diag(0.0, 1.0),
        }
    }

    /// ρ = |↑⟩⟨↑| = diag(1, 0).
    pub fn spin_up() -> Self {
        DensityMatrix2 {
            m: Mat2::diag(1.0, 0.0),
        }
    }

    pub fn matrix(&self) -> &Mat2 {
        &self.m
    }

    /// Spin-up population, ρ₀₀.
    pub fn p_up(&self) -> f64 {
        self.m.e[0][0].re
    }

    /// tr(ρ²); equals one for a pure state.
    pub fn purity(&self) -> f64 {
        (self.m * self.m).trace().re
    }
}

/// State of the host nuclear spin: it only shifts the electron resonance.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NuclearSpin {
    Down,
    Up,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepDirection {
    /// Detuning runs from −span/2 to +span/2 (plus the center offset).
    Up,
    /// Mirror image of `Up`.
    Down,
}

/// Linear frequency chirp of the drive.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepProtocol {
    /// Total swept range Δν_sweep, Hz.
    pub span: f64,
    /// Sweep duration T_S, seconds.
    pub duration: f64,
    /// Sweep center minus the spin's resonance frequency, Hz.
    pub center_offset: f64,
    pub direction: SweepDirection,
}

impl SweepProtocol {
    pub fn new(
        span: f64,
        duration: f64,
        center_offset: f64,
        direction: SweepDirection,
    ) -> Result<Self, ModelError> {
        if !(span > 0.0 && span.is_finite()) {
            return Err(ModelError::InvalidSpan(span));
        }
        if !(duration > 0.0 && duration.is_finite()) {
            return Err(ModelError::InvalidDuration(duration));
        }
        if !center_offset.is_finite() {
            return Err(ModelError::InvalidOffset(center_offset));
        }
        Ok(SweepProtocol {
            span,
            duration,
            center_offset,
            direction,
        })
    }

    /// Sweep centered on resonance, running upward.
    pub fn centered(span: f64, duration: f64) -> Result<Self, ModelError> {
        SweepProtocol::new(span, duration, 0.0, SweepDirection::Up)
    }

    /// Magnitude of ∂(Δν)/∂t, Hz/s.
    pub fn sweep_rate(&self) -> f64 {
        self.span / self.duration
    }

    /// Instantaneous detuning Δν(t). Affine in `t` with slope
    /// ±span/duration; equals `center_offset` at mid-sweep.
    pub fn detuning_at(&self, t: f64) -> Result<f64, ModelError> {
        if !(0.0..=self.duration).contains(&t) {
            return Err(ModelError::TimeOutsideSweep {
                t,
                duration: self.duration,
            });
        }
        Ok(self.detuning_unchecked(t))
    }

    #[inline]
    pub(crate) fn detuning_unchecked(&self, t: f64) -> f64 {
        let ramp = self.span * (t / self.duration - 0.5);
        match self.direction {
            SweepDirection::Up => ramp + self.center_offset,
            SweepDirection::Down => -ramp + self.center_offset,
        }
    }
}

/// Static-device and drive parameters of the spin system.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpinSystemParams {
    /// Static field B₀, Tesla.
    pub b0: f64,
    /// Hyperfine coupling A, Hz.
    pub a_hf: f64,
    pub nuclear_state: NuclearSpin,
    /// Drive coupling ν₁, Hz.
    pub nu1: f64,
    /// Coherence time T₂, seconds; `f64::INFINITY` disables dephasing.
    pub t2: f64,
}

impl SpinSystemParams {
    pub const DEFAULT_B0: f64 = 1.3;
    pub const DEFAULT_A_HF: f64 = 114.4e6;

    pub fn new(
        b0: f64,
        a_hf: f64,
        nuclear_state: NuclearSpin,
        nu1: f64,
        t2: f64,
    ) -> Result<Self, ModelError> {
        if !(b0 > 0.0 && b0.is_finite()) {
            return Err(ModelError::InvalidStaticField(b0));
        }
        if !(a_hf >= 0.0 && a_hf.is_finite()) {
            return Err(ModelError::InvalidHyperfine(a_hf));
        }
        if !(nu1 >= 0.0 && nu1.is_finite()) {
            return Err(ModelError::InvalidNu1(nu1));
        }
        if !(t2 > 0.0) || t2.is_nan() {
            return Err(ModelError::InvalidT2(t2));
        }
        Ok(SpinSystemParams {
            b0,
            a_hf,
            nuclear_state,
            nu1,
            t2,
        })
    }

    /// Default device values with the given drive coupling and coherence
    /// time, nucleus in ⇓.
    pub fn with_drive(nu1: f64, t2: f64) -> Result<Self, ModelError> {
        SpinSystemParams::new(
            Self::DEFAULT_B0,
            Self::DEFAULT_A_HF,
            NuclearSpin::Down,
            nu1,
            t2,
        )
    }
}

/// ESR transition frequency `ν_e = γ_e·B₀ ± A/2`, the sign set by the
/// nuclear spin state.
pub fn esr_frequency(p: &SpinSystemParams, c: &PhysConstants) -> f64 {
    let zeeman = c.gamma_e * p.b0;
    let half_a = 0.5 * p.a_hf;
    match p.nuclear_state {
        NuclearSpin::Down => zeeman - half_a,
        NuclearSpin::Up => zeeman + half_a,
    }
}

/// Single-shot readout model: fidelity F↑ and dark-count probability P↑I.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReadoutModel {
    /// Probability that a spin-up electron is registered as up.
    pub f_up: f64,
    /// Probability of a false up-count with no excitation; only the
    /// product P↑I·F↑ is experimentally constrained.
    pub p_up_i: f64,
    /// Repetitions per measured point.
    pub shots: u32,
}

impl ReadoutModel {
    pub fn new(f_up: f64, p_up_i: f64, shots: u32) -> Result<Self, ModelError> {
        for (name, value) in [("f_up", f_up), ("p_up_i", p_up_i)] {
            if !(0.0..=1.0).contains(&value) {
                return Err(ModelError::ProbabilityOutOfRange { name, value });
            }
        }
        if shots < 1 {
            return Err(ModelError::NoShots);
        }
        Ok(ReadoutModel {
            f_up,
            p_up_i,
            shots,
        })
    }

    /// Build the model from the measured background rate `F↑·P↑I`,
    /// resolving the P↑I degeneracy as `background / f_up`.
    pub fn from_background(f_up: f64, background: f64, shots: u32) -> Result<Self, ModelError> {
        if !(f_up > 0.0 && f_up <= 1.0) {
            return Err(ModelError::ProbabilityOutOfRange {
                name: "f_up",
                value: f_up,
            });
        }
        ReadoutModel::new(f_up, background / f_up, shots)
    }
}
