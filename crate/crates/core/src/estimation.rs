//! Joint recovery of physical parameters from sweep-time datasets.
//!
//! Several datasets, each recorded at one microwave power, are fitted
//! simultaneously: every power group gets its own drive amplitude B₁
//! while the readout fidelity F↑ and the coherence time T₂ are shared
//! across all of them. The background count rate F↑·P↑I is fixed from
//! control data, not fitted; P↑I follows from it given the current F↑
//! iterate.
//!
//! The optimizer works in transformed coordinates (log for B₁ and T₂,
//! logistic for F↑) so box constraints never need explicit handling. The
//! Jacobian is a forward difference that exploits structure: perturbing a
//! B₁ only re-solves its own group's points, and perturbing F↑ re-solves
//! nothing (the readout map composes on top of cached populations).

use rayon::prelude::*;
use thiserror::Error;

use crate::dynamics::{simulate_sweep_pup, EvolutionSettings, EvolveError};
use crate::fit::{self, FitError, LeastSquaresProblem, LmConfig};
use crate::model::{ModelError, ReadoutModel, SpinSystemParams, SweepDirection, SweepProtocol};
use crate::readout::{self, MeasuredPoint, ReadoutError};
use crate::rng;
use crate::units::{nu1_from_b1, PhysConstants, PowerSetting, UnitsError};

#[derive(Debug, Error)]
pub enum EstimationError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("parameter {param} is not identifiable from the data")]
    Unidentifiable { param: String },
    #[error(transparent)]
    Evolve(#[from] EvolveError),
    #[error(transparent)]
    Readout(#[from] ReadoutError),
    #[error(transparent)]
    Units(#[from] UnitsError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Fit(#[from] FitError),
}

/// Measured spin-up fractions versus sweep time at one power setting.
#[derive(Debug, Clone)]
pub struct SweepDataset {
    pub power: PowerSetting,
    pub points: Vec<MeasuredPoint>,
    /// Sweep span used for every point, Hz.
    pub protocol_span: f64,
    /// Sweep-center offset from resonance, Hz.
    pub center_offset: f64,
}

impl SweepDataset {
    pub fn new(
        power: PowerSetting,
        points: Vec<MeasuredPoint>,
        protocol_span: f64,
        center_offset: f64,
    ) -> Result<Self, EstimationError> {
        if points.len() < 5 {
            return Err(EstimationError::InvalidInput(format!(
                "need at least 5 points per dataset, got {}",
                points.len()
            )));
        }
        if !(protocol_span > 0.0) {
            return Err(EstimationError::InvalidInput(format!(
                "protocol span must be positive, got {protocol_span}"
            )));
        }
        let mut times: Vec<f64> = points.iter().map(|p| p.sweep_time).collect();
        if times.iter().any(|t| !(*t > 0.0)) {
            return Err(EstimationError::InvalidInput(
                "sweep times must be positive".into(),
            ));
        }
        times.sort_by(f64::total_cmp);
        if times.windows(2).any(|w| w[0] == w[1]) {
            return Err(EstimationError::InvalidInput(
                "sweep times must be distinct".into(),
            ));
        }
        Ok(SweepDataset {
            power,
            points,
            protocol_span,
            center_offset,
        })
    }
}

/// Starting values for [`fit_global`].
#[derive(Debug, Clone)]
pub struct FitInit {
    /// One B₁ per power group, in first-appearance order of the powers.
    pub b1_per_power: Vec<f64>,
    pub f_up: f64,
    pub t2: f64,
}

#[derive(Debug, Clone)]
pub struct FitStdErrors {
    pub b1_per_power: Vec<f64>,
    pub f_up: f64,
    pub t2: f64,
}

#[derive(Debug, Clone)]
pub struct FitResult {
    /// Power groups in first-appearance order.
    pub powers: Vec<PowerSetting>,
    pub b1_per_power: Vec<f64>,
    pub f_up: f64,
    pub t2: f64,
    /// Sum of squared weighted residuals at the optimum.
    pub residual_norm: f64,
    pub std_errors: FitStdErrors,
    pub converged: bool,
    pub iterations: usize,
    /// Objective after each accepted step; non-increasing.
    pub objective_trace: Vec<f64>,
    /// F↑ ran into its (0, 1) box.
    pub f_up_at_bound: bool,
}

#[derive(Debug, Clone)]
pub struct FitOptions {
    pub evolution: EvolutionSettings,
    pub lm: LmConfig,
    /// Fit T₂ in log scale (the default) or linearly.
    pub t2_log_scale: bool,
    pub constants: PhysConstants,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            evolution: EvolutionSettings {
                rel_tol: 1e-6,
                abs_tol: 1e-9,
                ..EvolutionSettings::default()
            },
            lm: LmConfig {
                max_iterations: 100,
                ftol: 1e-8,
                xtol: 1e-8,
                ..LmConfig::default()
            },
            t2_log_scale: true,
            constants: PhysConstants::default(),
        }
    }
}

/// Expected measured fraction after a sweep of duration `sweep_time`:
/// readout applied to the simulated final spin-up probability.
#[allow(clippy::too_many_arguments)]
pub fn forward_model(
    sweep_time: f64,
    b1: f64,
    f_up: f64,
    t2: f64,
    span: f64,
    center_offset: f64,
    background: f64,
    consts: &PhysConstants,
    evolution: &EvolutionSettings,
) -> Result<f64, EstimationError> {
    let nu1 = nu1_from_b1(b1, consts)?;
    let protocol = SweepProtocol::new(span, sweep_time, center_offset, SweepDirection::Up)?;
    let params = SpinSystemParams::with_drive(nu1, t2)?;
    let p_up = simulate_sweep_pup(&protocol, &params, evolution)?;
    let model = ReadoutModel::from_background(f_up, background, 1)?;
    Ok(readout::observe(p_up.clamp(0.0, 1.0), &model)?)
}

/// Slope and goodness of the zero-intercept law B₁ = slope·√P.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SqrtPFit {
    /// Tesla per √mW.
    pub slope: f64,
    /// Uncentered R² of the through-origin fit.
    pub r_squared: f64,
    /// Largest |B₁ − fit| relative to the fitted line.
    pub max_rel_deviation: f64,
}

/// Least-squares line through the origin for B₁ versus the square root of
/// the delivered power.
pub fn fit_sqrtp_law(
    b1_values: &[f64],
    powers: &[PowerSetting],
) -> Result<SqrtPFit, EstimationError> {
    if b1_values.is_empty() || b1_values.len() != powers.len() {
        return Err(EstimationError::InvalidInput(format!(
            "need matching non-empty value/power lists, got {} and {}",
            b1_values.len(),
            powers.len()
        )));
    }
    if b1_values.iter().any(|b| !(*b > 0.0)) {
        return Err(EstimationError::InvalidInput(
            "B1 values must be positive".into(),
        ));
    }
    let xs: Vec<f64> = powers.iter().map(|p| p.delivered_mw().sqrt()).collect();
    let sxy: f64 = xs.iter().zip(b1_values).map(|(x, y)| x * y).sum();
    let sxx: f64 = xs.iter().map(|x| x * x).sum();
    let slope = sxy / sxx;
    let ss_res: f64 = xs
        .iter()
        .zip(b1_values)
        .map(|(x, y)| (y - slope * x).powi(2))
        .sum();
    let ss_tot: f64 = b1_values.iter().map(|y| y * y).sum();
    let max_rel_deviation = xs
        .iter()
        .zip(b1_values)
        .map(|(x, y)| ((y - slope * x) / (slope * x)).abs())
        .fold(0.0f64, f64::max);
    Ok(SqrtPFit {
        slope,
        r_squared: 1.0 - ss_res / ss_tot,
        max_rel_deviation,
    })
}

/// Synthesize a dataset from the forward model: per-point binomial shot
/// noise, deterministic given `master_seed`.
#[allow(clippy::too_many_arguments)]
pub fn synthesize_dataset(
    power: PowerSetting,
    span: f64,
    center_offset: f64,
    sweep_times: &[f64],
    b1: f64,
    f_up: f64,
    t2: f64,
    background: f64,
    shots: u32,
    opts: &FitOptions,
    master_seed: u64,
) -> Result<SweepDataset, EstimationError> {
    let model = ReadoutModel::from_background(f_up, background, shots)?;
    let points: Vec<MeasuredPoint> = sweep_times
        .par_iter()
        .enumerate()
        .map(|(i, &ts)| -> Result<MeasuredPoint, EstimationError> {
            let nu1 = nu1_from_b1(b1, &opts.constants)?;
            let protocol = SweepProtocol::new(span, ts, center_offset, SweepDirection::Up)?;
            let params = SpinSystemParams::with_drive(nu1, t2)?;
            let p_up = simulate_sweep_pup(&protocol, &params, &opts.evolution)?;
            Ok(readout::synthesize_shots(
                ts,
                p_up.clamp(0.0, 1.0),
                &model,
                rng::derive_seed(master_seed, "sweep-point", i as u64),
            )?)
        })
        .collect::<Result<_, _>>()?;
    SweepDataset::new(power, points, span, center_offset)
}

// --- global fit internals ---

#[derive(Clone, Copy)]
struct PointRef {
    group: usize,
    span: f64,
    offset: f64,
    sweep_time: f64,
    r_up: f64,
    sqrt_w: f64,
}

fn binomial_sqrt_weight(p: &MeasuredPoint) -> f64 {
    if p.shots == 0 {
        return 1.0;
    }
    let shots = f64::from(p.shots);
    let var = (p.r_up * (1.0 - p.r_up)).max(1.0 / (shots * shots)) / shots;
    1.0 / var.sqrt()
}

fn logistic(u: f64) -> f64 {
    1.0 / (1.0 + (-u).exp())
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

struct GlobalProblem {
    points: Vec<PointRef>,
    n_groups: usize,
    background: f64,
    constants: PhysConstants,
    evolution: EvolutionSettings,
    t2_log: bool,
    /// Populations for the parameter vector they were computed at.
    cache: Option<(Vec<f64>, Vec<f64>)>,
}

impl GlobalProblem {
    fn n_params(&self) -> usize {
        self.n_groups + 2
    }

    fn decode(&self, u: &[f64]) -> (Vec<f64>, f64, f64) {
        let b1s: Vec<f64> = u[..self.n_groups].iter().map(|v| v.exp()).collect();
        let f_up = logistic(u[self.n_groups]);
        let t2 = if self.t2_log {
            u[self.n_groups + 1].exp()
        } else {
            u[self.n_groups + 1]
        };
        (b1s, f_up, t2)
    }

    fn solve_points(
        &self,
        idx: &[usize],
        b1s: &[f64],
        t2: f64,
    ) -> Result<Vec<f64>, FitError> {
        if !(t2 > 0.0) {
            return Err(FitError::Aborted(format!(
                "coherence time left the physical domain ({t2})"
            )));
        }
        idx.par_iter()
            .map(|&i| -> Result<f64, FitError> {
                let pt = self.points[i];
                let run = || -> Result<f64, EstimationError> {
                    let nu1 = nu1_from_b1(b1s[pt.group], &self.constants)?;
                    let protocol = SweepProtocol::new(
                        pt.span,
                        pt.sweep_time,
                        pt.offset,
                        SweepDirection::Up,
                    )?;
                    let params = SpinSystemParams::with_drive(nu1, t2)?;
                    simulate_sweep_pup(&protocol, &params, &self.evolution)
                        .map_err(EstimationError::from)
                };
                run().map_err(|e| FitError::Aborted(e.to_string()))
            })
            .collect()
    }

    fn populations(&mut self, u: &[f64]) -> Result<Vec<f64>, FitError> {
        if let Some((cached_u, pups)) = &self.cache {
            if cached_u.as_slice() == u {
                return Ok(pups.clone());
            }
        }
        let (b1s, _, t2) = self.decode(u);
        let all: Vec<usize> = (0..self.points.len()).collect();
        let pups = self.solve_points(&all, &b1s, t2)?;
        self.cache = Some((u.to_vec(), pups.clone()));
        Ok(pups)
    }

    fn compose(&self, pups: &[f64], f_up: f64, out: &mut Vec<f64>) -> Result<(), FitError> {
        let model = ReadoutModel::from_background(f_up, self.background, 1)
            .map_err(|e| FitError::Aborted(e.to_string()))?;
        out.clear();
        for (pt, &p_up) in self.points.iter().zip(pups) {
            let r = readout::observe(p_up.clamp(0.0, 1.0), &model)
                .map_err(|e| FitError::Aborted(e.to_string()))?;
            out.push((r - pt.r_up) * pt.sqrt_w);
        }
        Ok(())
    }
}

impl LeastSquaresProblem for GlobalProblem {
    fn residuals(&mut self, u: &[f64], out: &mut Vec<f64>) -> Result<(), FitError> {
        let pups = self.populations(u)?;
        let (_, f_up, _) = self.decode(u);
        self.compose(&pups, f_up, out)
    }

    fn jacobian(
        &mut self,
        u: &[f64],
        base: &[f64],
        step_rel: f64,
        cols: &mut Vec<Vec<f64>>,
    ) -> Result<(), FitError> {
        let pups = self.populations(u)?;
        let (b1s, _, t2) = self.decode(u);
        cols.clear();
        let mut pert_res = Vec::with_capacity(base.len());
        for j in 0..self.n_params() {
            let h = step_rel * u[j].abs().max(1.0);
            let mut up = u.to_vec();
            up[j] += h;
            let (b1s_p, f_up_p, t2_p) = self.decode(&up);

            let pups_pert: Vec<f64> = if j == self.n_groups {
                // readout-only parameter: populations unchanged
                pups.clone()
            } else if j < self.n_groups {
                // re-solve just this drive group's points
                let idx: Vec<usize> = self
                    .points
                    .iter()
                    .enumerate()
                    .filter(|(_, p)| p.group == j)
                    .map(|(i, _)| i)
                    .collect();
                let solved = self.solve_points(&idx, &b1s_p, t2_p)?;
                let mut v = pups.clone();
                for (&i, s) in idx.iter().zip(solved) {
                    v[i] = s;
                }
                v
            } else {
                // T₂ touches every point
                let all: Vec<usize> = (0..self.points.len()).collect();
                self.solve_points(&all, &b1s, t2_p)?
            };
            let _ = t2;
            self.compose(&pups_pert, f_up_p, &mut pert_res)?;
            cols.push(
                base.iter()
                    .zip(pert_res.iter())
                    .map(|(b, p)| (p - b) / h)
                    .collect(),
            );
        }
        Ok(())
    }
}

/// Fit all datasets jointly: shared F↑ and T₂, one B₁ per power group.
/// The background product F↑·P↑I is held fixed at `fixed_background`.
pub fn fit_global(
    datasets: &[SweepDataset],
    init: &FitInit,
    fixed_background: f64,
    opts: &FitOptions,
) -> Result<FitResult, EstimationError> {
    if datasets.is_empty() {
        return Err(EstimationError::InvalidInput("no datasets".into()));
    }
    if !(0.0..1.0).contains(&fixed_background) {
        return Err(EstimationError::InvalidInput(format!(
            "background must be in [0, 1), got {fixed_background}"
        )));
    }
    if !(init.f_up > fixed_background && init.f_up < 1.0) {
        return Err(EstimationError::InvalidInput(format!(
            "initial F↑ must be in (background, 1), got {}",
            init.f_up
        )));
    }
    if !(init.t2 > 0.0) || !init.t2.is_finite() {
        return Err(EstimationError::InvalidInput(format!(
            "initial T₂ must be positive and finite, got {}",
            init.t2
        )));
    }

    // group datasets by power, first appearance order
    let mut powers: Vec<PowerSetting> = Vec::new();
    let mut points: Vec<PointRef> = Vec::new();
    for ds in datasets {
        let group = match powers.iter().position(|p| p == &ds.power) {
            Some(g) => g,
            None => {
                powers.push(ds.power);
                powers.len() - 1
            }
        };
        for p in &ds.points {
            points.push(PointRef {
                group,
                span: ds.protocol_span,
                offset: ds.center_offset,
                sweep_time: p.sweep_time,
                r_up: p.r_up,
                sqrt_w: binomial_sqrt_weight(p),
            });
        }
    }
    let n_groups = powers.len();
    if init.b1_per_power.len() != n_groups {
        return Err(EstimationError::InvalidInput(format!(
            "init has {} B1 values but the data contain {} power groups",
            init.b1_per_power.len(),
            n_groups
        )));
    }
    if init.b1_per_power.iter().any(|b| !(*b > 0.0)) {
        return Err(EstimationError::InvalidInput(
            "initial B1 values must be positive".into(),
        ));
    }

    let mut problem = GlobalProblem {
        points,
        n_groups,
        background: fixed_background,
        constants: opts.constants,
        evolution: opts.evolution,
        t2_log: opts.t2_log_scale,
        cache: None,
    };

    let mut u0: Vec<f64> = init.b1_per_power.iter().map(|b| b.ln()).collect();
    u0.push(logit(init.f_up));
    u0.push(if opts.t2_log_scale {
        init.t2.ln()
    } else {
        init.t2
    });

    let report = fit::minimize(&mut problem, &u0, &opts.lm)?;

    let (b1s, f_up, t2) = problem.decode(&report.params);
    // back-transformed standard errors
    let b1_errs: Vec<f64> = b1s
        .iter()
        .zip(&report.std_errors[..n_groups])
        .map(|(b, e)| b * e)
        .collect();
    let f_up_err = f_up * (1.0 - f_up) * report.std_errors[n_groups];
    let t2_err = if opts.t2_log_scale {
        t2 * report.std_errors[n_groups + 1]
    } else {
        report.std_errors[n_groups + 1]
    };

    // a drive amplitude whose relative uncertainty exceeds unity by an
    // order of magnitude is not determined by the data
    for (g, err) in report.std_errors[..n_groups].iter().enumerate() {
        if *err > 10.0 || (report.covariance_rank_deficient && *err == 0.0) {
            return Err(EstimationError::Unidentifiable {
                param: format!("B1[{g}] ({} dBm)", powers[g].p_mw_dbm),
            });
        }
    }

    let f_up_at_bound = f_up <= 1e-6 || f_up >= 1.0 - 1e-6;

    Ok(FitResult {
        powers,
        b1_per_power: b1s,
        f_up,
        t2,
        residual_norm: report.residual_norm,
        std_errors: FitStdErrors {
            b1_per_power: b1_errs,
            f_up: f_up_err,
            t2: t2_err,
        },
        converged: report.converged,
        iterations: report.iterations,
        objective_trace: report.objective_trace,
        f_up_at_bound,
    })
}
