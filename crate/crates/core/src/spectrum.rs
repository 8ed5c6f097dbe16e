//! ESR line-shape modeling: sum-of-Gaussians spectra, drifting-center
//! snapshot series, numeric FWHM extraction, and shared-width bimodal
//! fitting.
//!
//! A time-averaged resonance line is modeled as two Gaussian peaks of
//! equal width on a flat baseline. Individual snapshots are narrow lines
//! whose common center wanders with the slowly evolving nuclear field,
//! modeled as an Ornstein-Uhlenbeck process; averaging many snapshots
//! rebuilds the broad envelope.

use rand::Rng;
use rand_distr::{Binomial, Distribution};
use thiserror::Error;

use crate::fit::{self, FitError, LeastSquaresProblem, LmConfig};
use crate::model::ReadoutModel;
use crate::readout::{self, ReadoutError};
use crate::rng;

const FOUR_LN2: f64 = 4.0 * std::f64::consts::LN_2;
/// FWHM of a Gaussian is 2·√(2·ln2) standard deviations.
pub const FWHM_PER_SIGMA: f64 = 2.3548200450309493;

#[derive(Debug, Error, PartialEq)]
pub enum SpectrumError {
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("need at least {needed} points, got {got}")]
    TooFewPoints { needed: usize, got: usize },
    #[error("frequency grid must be sorted and finite")]
    BadGrid,
    #[error("curve has no half-maximum crossing ({0})")]
    NoHalfCrossing(&'static str),
    #[error("drift parameters invalid: {0}")]
    InvalidDrift(String),
    #[error(transparent)]
    Readout(#[from] ReadoutError),
    #[error(transparent)]
    Fit(#[from] FitError),
}

/// Single Gaussian line: `value(f) = amplitude·exp(−4ln2·(f−center)²/fwhm²)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianPeak {
    pub amplitude: f64,
    pub center: f64,
    pub fwhm: f64,
}

impl GaussianPeak {
    pub fn new(amplitude: f64, center: f64, fwhm: f64) -> Result<Self, SpectrumError> {
        if !(amplitude >= 0.0) {
            return Err(SpectrumError::InvalidModel(format!(
                "amplitude must be non-negative, got {amplitude}"
            )));
        }
        if !(fwhm > 0.0) {
            return Err(SpectrumError::InvalidModel(format!(
                "fwhm must be positive, got {fwhm}"
            )));
        }
        Ok(GaussianPeak {
            amplitude,
            center,
            fwhm,
        })
    }

    pub fn value(&self, f: f64) -> f64 {
        let d = (f - self.center) / self.fwhm;
        self.amplitude * (-FOUR_LN2 * d * d).exp()
    }
}

/// Two Gaussian peaks of equal width on a flat baseline. Canonical order
/// `center1 ≤ center2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BimodalModel {
    pub amplitude1: f64,
    pub center1: f64,
    pub amplitude2: f64,
    pub center2: f64,
    pub fwhm: f64,
    pub baseline: f64,
}

impl BimodalModel {
    pub fn new(
        amplitude1: f64,
        center1: f64,
        amplitude2: f64,
        center2: f64,
        fwhm: f64,
        baseline: f64,
    ) -> Result<Self, SpectrumError> {
        for (name, a) in [("amplitude1", amplitude1), ("amplitude2", amplitude2)] {
            if !(a >= 0.0) {
                return Err(SpectrumError::InvalidModel(format!(
                    "{name} must be non-negative, got {a}"
                )));
            }
        }
        if !(fwhm > 0.0) {
            return Err(SpectrumError::InvalidModel(format!(
                "fwhm must be positive, got {fwhm}"
            )));
        }
        if !(baseline >= 0.0) {
            return Err(SpectrumError::InvalidModel(format!(
                "baseline must be non-negative, got {baseline}"
            )));
        }
        let m = if center1 <= center2 {
            BimodalModel {
                amplitude1,
                center1,
                amplitude2,
                center2,
                fwhm,
                baseline,
            }
        } else {
            BimodalModel {
                amplitude1: amplitude2,
                center1: center2,
                amplitude2: amplitude1,
                center2: center1,
                fwhm,
                baseline,
            }
        };
        Ok(m)
    }

    /// Symmetric model: peaks of equal amplitude split by `splitting`
    /// around `center`.
    pub fn symmetric(
        center: f64,
        splitting: f64,
        amplitude: f64,
        fwhm: f64,
        baseline: f64,
    ) -> Result<Self, SpectrumError> {
        if !(splitting >= 0.0) {
            return Err(SpectrumError::InvalidModel(format!(
                "splitting must be non-negative, got {splitting}"
            )));
        }
        BimodalModel::new(
            amplitude,
            center - 0.5 * splitting,
            amplitude,
            center + 0.5 * splitting,
            fwhm,
            baseline,
        )
    }

    /// Peak separation δν = center2 − center1 ≥ 0.
    pub fn splitting(&self) -> f64 {
        self.center2 - self.center1
    }

    pub fn peaks(&self) -> [GaussianPeak; 2] {
        [
            GaussianPeak {
                amplitude: self.amplitude1,
                center: self.center1,
                fwhm: self.fwhm,
            },
            GaussianPeak {
                amplitude: self.amplitude2,
                center: self.center2,
                fwhm: self.fwhm,
            },
        ]
    }
}

/// `baseline + Σᵢ amplitudeᵢ·exp(−4ln2·(f−centerᵢ)²/fwhm²)`.
pub fn spectrum_value(f: f64, m: &BimodalModel) -> f64 {
    let [p1, p2] = m.peaks();
    m.baseline + p1.value(f) + p2.value(f)
}

fn bimodal_raw(f: f64, p: &[f64; 6]) -> f64 {
    // p = [amp1, amp2, c1, c2, fwhm, baseline]; symmetric in the sign of fwhm
    let w2 = p[4] * p[4];
    let d1 = f - p[2];
    let d2 = f - p[3];
    p[5] + p[0] * (-FOUR_LN2 * d1 * d1 / w2).exp() + p[1] * (-FOUR_LN2 * d2 * d2 / w2).exp()
}

/// Full width at half maximum of a sampled curve: distance between the
/// outermost crossings of the level midway between the curve's minimum
/// and maximum, linearly interpolated between samples.
pub fn fwhm_numeric(curve: &[(f64, f64)]) -> Result<f64, SpectrumError> {
    if curve.len() < 100 {
        return Err(SpectrumError::TooFewPoints {
            needed: 100,
            got: curve.len(),
        });
    }
    if curve
        .windows(2)
        .any(|w| !(w[1].0 > w[0].0) || !w[0].1.is_finite())
    {
        return Err(SpectrumError::BadGrid);
    }
    let vmax = curve.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
    let vmin = curve.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
    if !(vmax > vmin + f64::EPSILON * vmax.abs().max(1.0)) {
        return Err(SpectrumError::NoHalfCrossing("flat curve"));
    }
    let level = 0.5 * (vmax + vmin);

    let cross = |a: (f64, f64), b: (f64, f64)| -> f64 {
        a.0 + (level - a.1) * (b.0 - a.0) / (b.1 - a.1)
    };
    let mut left = None;
    for w in curve.windows(2) {
        if w[0].1 < level && w[1].1 >= level {
            left = Some(cross(w[0], w[1]));
            break;
        }
    }
    let mut right = None;
    for w in curve.windows(2).rev() {
        if w[1].1 < level && w[0].1 >= level {
            right = Some(cross(w[0], w[1]));
            break;
        }
    }
    match (left, right) {
        (Some(l), Some(r)) if r > l => Ok(r - l),
        _ => Err(SpectrumError::NoHalfCrossing("curve never drops below half maximum")),
    }
}

/// Ornstein-Uhlenbeck drift of the snapshot line center: stationary,
/// Gaussian, with the given standard deviation and correlation time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DriftProcess {
    /// Stationary standard deviation, Hz.
    pub stddev: f64,
    /// Correlation time, seconds.
    pub correlation_time: f64,
    pub seed: u64,
}

impl DriftProcess {
    pub fn new(stddev: f64, correlation_time: f64, seed: u64) -> Result<Self, SpectrumError> {
        if !(stddev >= 0.0) {
            return Err(SpectrumError::InvalidDrift(format!(
                "stddev must be non-negative, got {stddev}"
            )));
        }
        if !(correlation_time > 0.0) {
            return Err(SpectrumError::InvalidDrift(format!(
                "correlation time must be positive, got {correlation_time}"
            )));
        }
        Ok(DriftProcess {
            stddev,
            correlation_time,
            seed,
        })
    }

    /// Sample the process at equally spaced times using the exact
    /// transition density, starting from the stationary distribution.
    pub fn sample(&self, n: usize, dt: f64) -> Vec<f64> {
        let mut rng = rng::stream(self.seed, "spectrum-drift", 0);
        let phi = (-dt / self.correlation_time).exp();
        let innovation = self.stddev * (1.0 - phi * phi).sqrt();
        let mut out = Vec::with_capacity(n);
        let mut x = self.stddev * rng.sample::<f64, _>(rand_distr::StandardNormal);
        out.push(x);
        for _ in 1..n {
            x = phi * x + innovation * rng.sample::<f64, _>(rand_distr::StandardNormal);
            out.push(x);
        }
        out
    }
}

/// One synthesized spectrum snapshot.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub index: u32,
    pub wallclock_min: f64,
    /// Drift offset applied to both peak centers, Hz.
    pub center_shift: f64,
    /// `(freq_hz, r_up, shots)` rows; `shots = 0` marks noiseless values.
    pub points: Vec<(f64, f64, u32)>,
}

/// A series of snapshots over a common frequency grid.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumSeries {
    pub freq_grid: Vec<f64>,
    pub snapshots: Vec<Snapshot>,
}

impl SpectrumSeries {
    /// Shot-weighted average over snapshots, as `(freq, r_up, pooled shots)`.
    pub fn average(&self) -> Vec<SpectrumPoint> {
        let n_pts = self.freq_grid.len();
        let mut out = Vec::with_capacity(n_pts);
        for j in 0..n_pts {
            let mut acc = 0.0;
            let mut w = 0.0;
            let mut shots_total = 0u64;
            for snap in &self.snapshots {
                let (_, r, shots) = snap.points[j];
                let wi = if shots == 0 { 1.0 } else { f64::from(shots) };
                acc += r * wi;
                w += wi;
                shots_total += u64::from(shots);
            }
            out.push(SpectrumPoint {
                freq_hz: self.freq_grid[j],
                r_up: acc / w,
                shots: shots_total.min(u64::from(u32::MAX)) as u32,
            });
        }
        out
    }
}

/// One point of a measured or synthesized spectrum. `shots = 0` marks an
/// exact (noiseless) value and gets unit weight in fits.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectrumPoint {
    pub freq_hz: f64,
    pub r_up: f64,
    pub shots: u32,
}

/// Synthesize a series of snapshot spectra: the line `m` (pre-readout
/// spin-up probability units) drifts as `d`, every point is passed
/// through the readout model, and `per_point_shots` binomial samples are
/// drawn per point (`0` keeps exact expectations). Deterministic given
/// `d.seed`.
pub fn synth_spectrum_series(
    m: &BimodalModel,
    d: &DriftProcess,
    n_spectra: u32,
    freq_grid: &[f64],
    readout_model: &ReadoutModel,
    per_point_shots: u32,
    snapshot_interval: f64,
) -> Result<SpectrumSeries, SpectrumError> {
    if n_spectra < 1 {
        return Err(SpectrumError::InvalidModel("n_spectra must be at least 1".into()));
    }
    if freq_grid.is_empty() || freq_grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(SpectrumError::BadGrid);
    }
    if !(snapshot_interval > 0.0) {
        return Err(SpectrumError::InvalidDrift(format!(
            "snapshot interval must be positive, got {snapshot_interval}"
        )));
    }
    let shifts = d.sample(n_spectra as usize, snapshot_interval);
    let mut snapshots = Vec::with_capacity(n_spectra as usize);
    for (i, &shift) in shifts.iter().enumerate() {
        let mut points = Vec::with_capacity(freq_grid.len());
        for (j, &f) in freq_grid.iter().enumerate() {
            let p_up = spectrum_value(f - shift, m).min(1.0);
            let expected = readout::observe(p_up, readout_model)?;
            let (r_up, shots) = if per_point_shots == 0 {
                (expected, 0)
            } else {
                let seed = rng::derive_seed(
                    d.seed,
                    "spectrum-shots",
                    ((i as u64) << 32) | j as u64,
                );
                let mut shot_rng = rng::stream(seed, "binomial", 0);
                let k = Binomial::new(u64::from(per_point_shots), expected)
                    .expect("probability in range")
                    .sample(&mut shot_rng);
                (k as f64 / f64::from(per_point_shots), per_point_shots)
            };
            points.push((f, r_up, shots));
        }
        snapshots.push(Snapshot {
            index: i as u32,
            wallclock_min: i as f64 * snapshot_interval / 60.0,
            center_shift: shift,
            points,
        });
    }
    Ok(SpectrumSeries {
        freq_grid: freq_grid.to_vec(),
        snapshots,
    })
}

/// Fitted bimodal model with per-parameter standard errors.
#[derive(Debug, Clone)]
pub struct BimodalFit {
    pub model: BimodalModel,
    pub residual_norm: f64,
    pub amplitude1_err: f64,
    pub amplitude2_err: f64,
    pub center1_err: f64,
    pub center2_err: f64,
    pub fwhm_err: f64,
    pub baseline_err: f64,
    /// Standard error of the splitting, treating the centers as
    /// independent.
    pub splitting_err: f64,
    pub iterations: usize,
    /// Some directions were unconstrained by the data; standard errors
    /// along them are unreliable.
    pub rank_warning: bool,
}

struct BimodalProblem<'a> {
    data: &'a [SpectrumPoint],
    sqrt_w: Vec<f64>,
}

impl LeastSquaresProblem for BimodalProblem<'_> {
    fn residuals(&mut self, p: &[f64], out: &mut Vec<f64>) -> Result<(), FitError> {
        let p: &[f64; 6] = p.try_into().expect("six parameters");
        out.clear();
        out.extend(
            self.data
                .iter()
                .zip(self.sqrt_w.iter())
                .map(|(pt, w)| (bimodal_raw(pt.freq_hz, p) - pt.r_up) * w),
        );
        Ok(())
    }
}

/// Binomial variance weight: `max(R(1−R), 1/shots²)/shots`; unit weight
/// for noiseless points.
fn point_weight(pt: &SpectrumPoint) -> f64 {
    if pt.shots == 0 {
        return 1.0;
    }
    let shots = f64::from(pt.shots);
    let var = (pt.r_up * (1.0 - pt.r_up)).max(1.0 / (shots * shots)) / shots;
    1.0 / var.sqrt()
}

/// Weighted least-squares fit of a shared-width bimodal model. The output
/// is canonicalized (`center1 ≤ center2`, positive width); amplitudes are
/// floored at zero.
pub fn fit_bimodal(data: &[SpectrumPoint], init: &BimodalModel) -> Result<BimodalFit, SpectrumError> {
    fit_bimodal_with(data, init, &LmConfig::default())
}

pub fn fit_bimodal_with(
    data: &[SpectrumPoint],
    init: &BimodalModel,
    cfg: &LmConfig,
) -> Result<BimodalFit, SpectrumError> {
    if data.len() < 8 {
        return Err(SpectrumError::TooFewPoints {
            needed: 8,
            got: data.len(),
        });
    }
    let mut problem = BimodalProblem {
        data,
        sqrt_w: data.iter().map(point_weight).collect(),
    };
    let init_params = [
        init.amplitude1,
        init.amplitude2,
        init.center1,
        init.center2,
        init.fwhm,
        init.baseline,
    ];
    let report = fit::minimize(&mut problem, &init_params, cfg)?;
    let p = &report.params;
    let e = &report.std_errors;
    let (mut pairs, fwhm, baseline) = (
        [(p[0], p[2], e[0], e[2]), (p[1], p[3], e[1], e[3])],
        p[4].abs(),
        p[5],
    );
    if pairs[0].1 > pairs[1].1 {
        pairs.swap(0, 1);
    }
    let model = BimodalModel::new(
        pairs[0].0.max(0.0),
        pairs[0].1,
        pairs[1].0.max(0.0),
        pairs[1].1,
        fwhm,
        baseline.max(0.0),
    )?;
    Ok(BimodalFit {
        model,
        residual_norm: report.residual_norm,
        amplitude1_err: pairs[0].2,
        amplitude2_err: pairs[1].2,
        center1_err: pairs[0].3,
        center2_err: pairs[1].3,
        fwhm_err: e[4],
        baseline_err: e[5],
        splitting_err: (pairs[0].3 * pairs[0].3 + pairs[1].3 * pairs[1].3).sqrt(),
        iterations: report.iterations,
        rank_warning: report.covariance_rank_deficient,
    })
}

/// Starting model for [`fit_bimodal`]: centers at the two highest local
/// maxima after 5-point smoothing (symmetric split around the single
/// maximum if the peaks are merged), width from the numeric FWHM halved.
pub fn initial_guess(data: &[SpectrumPoint]) -> Result<BimodalModel, SpectrumError> {
    if data.len() < 8 {
        return Err(SpectrumError::TooFewPoints {
            needed: 8,
            got: data.len(),
        });
    }
    let n = data.len();
    let smoothed: Vec<f64> = (0..n)
        .map(|i| {
            let lo = i.saturating_sub(2);
            let hi = (i + 2).min(n - 1);
            data[lo..=hi].iter().map(|p| p.r_up).sum::<f64>() / (hi - lo + 1) as f64
        })
        .collect();
    let baseline = smoothed.iter().cloned().fold(f64::INFINITY, f64::min);

    let curve: Vec<(f64, f64)> = data
        .iter()
        .zip(smoothed.iter())
        .map(|(p, &v)| (p.freq_hz, v))
        .collect();
    let width_estimate = fwhm_numeric(&curve).unwrap_or_else(|_| {
        // fall back to a quarter of the grid span
        0.25 * (data[n - 1].freq_hz - data[0].freq_hz)
    });

    let mut maxima: Vec<(f64, f64)> = Vec::new(); // (value, freq)
    for i in 1..n - 1 {
        if smoothed[i] >= smoothed[i - 1] && smoothed[i] >= smoothed[i + 1] {
            maxima.push((smoothed[i], data[i].freq_hz));
        }
    }
    maxima.sort_by(|a, b| b.0.total_cmp(&a.0));
    let primary = maxima
        .first()
        .copied()
        .unwrap_or((smoothed[n / 2], data[n / 2].freq_hz));
    // the partner peak must not be the same bump
    let secondary = maxima
        .iter()
        .find(|(_, f)| (f - primary.1).abs() > 0.5 * width_estimate.max(f64::MIN_POSITIVE))
        .copied();

    let (c1, a1, c2, a2) = match secondary {
        Some((v, f)) => (primary.1, primary.0 - baseline, f, v - baseline),
        None => {
            // merged peaks: tie-break toward a symmetric split
            let split = 0.25 * width_estimate;
            (
                primary.1 - split,
                0.5 * (primary.0 - baseline),
                primary.1 + split,
                0.5 * (primary.0 - baseline),
            )
        }
    };
    BimodalModel::new(
        a1.max(0.0),
        c1,
        a2.max(0.0),
        c2,
        0.5 * width_estimate,
        baseline.max(0.0),
    )
}
