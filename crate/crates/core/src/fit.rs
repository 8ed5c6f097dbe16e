//! Dense Levenberg-Marquardt for small weighted least-squares problems.
//!
//! Problems implement [`LeastSquaresProblem`]; the default Jacobian is a
//! forward difference, and problems with structure (cached sub-solves,
//! parameters that touch only part of the residual vector) override it.
//! Weighting is the caller's job: residuals should already carry their
//! √weight factors.

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum FitError {
    #[error("residual evaluation produced a non-finite value")]
    NonFiniteResidual,
    #[error("normal equations are rank-deficient")]
    RankDeficient,
    #[error("no convergence after {0} iterations")]
    NonConvergence(usize),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("{0}")]
    Aborted(String),
}

#[derive(Debug, Clone, Copy)]
pub struct LmConfig {
    pub max_iterations: usize,
    /// Relative reduction of the objective that counts as converged.
    pub ftol: f64,
    /// Relative step size that counts as converged.
    pub xtol: f64,
    pub lambda_init: f64,
    pub lambda_max: f64,
    /// Relative forward-difference step for the default Jacobian.
    pub jacobian_step_rel: f64,
}

impl Default for LmConfig {
    fn default() -> Self {
        LmConfig {
            max_iterations: 200,
            ftol: 1e-10,
            xtol: 1e-10,
            lambda_init: 1e-3,
            lambda_max: 1e12,
            jacobian_step_rel: 1e-6,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LmReport {
    pub params: Vec<f64>,
    /// Sum of squared (weighted) residuals at the solution.
    pub residual_norm: f64,
    /// Standard errors from the Jacobian, scaled by the reduced chi-square.
    pub std_errors: Vec<f64>,
    /// Set when the normal matrix needed a pseudo-inverse for the
    /// covariance (some directions unconstrained by the data).
    pub covariance_rank_deficient: bool,
    pub iterations: usize,
    pub converged: bool,
    /// Objective value after every accepted step, starting at the initial
    /// point; non-increasing by construction.
    pub objective_trace: Vec<f64>,
}

pub trait LeastSquaresProblem {
    /// Fill `out` with the weighted residuals at `params`.
    fn residuals(&mut self, params: &[f64], out: &mut Vec<f64>) -> Result<(), FitError>;

    /// Jacobian columns ∂r/∂p_j at `params`, given the residuals `base`
    /// already evaluated there. Forward difference by default.
    fn jacobian(
        &mut self,
        params: &[f64],
        base: &[f64],
        step_rel: f64,
        cols: &mut Vec<Vec<f64>>,
    ) -> Result<(), FitError> {
        let mut pert = params.to_vec();
        let mut r = Vec::with_capacity(base.len());
        cols.clear();
        for j in 0..params.len() {
            let h = step_rel * params[j].abs().max(1.0);
            pert[j] = params[j] + h;
            self.residuals(&pert, &mut r)?;
            pert[j] = params[j];
            cols.push(
                base.iter()
                    .zip(r.iter())
                    .map(|(b, rp)| (rp - b) / h)
                    .collect(),
            );
        }
        Ok(())
    }
}

/// Adapter for plain closures.
pub struct FnProblem<F>(pub F);

impl<F> LeastSquaresProblem for FnProblem<F>
where
    F: FnMut(&[f64], &mut Vec<f64>) -> Result<(), FitError>,
{
    fn residuals(&mut self, params: &[f64], out: &mut Vec<f64>) -> Result<(), FitError> {
        (self.0)(params, out)
    }
}

fn ssr(r: &[f64]) -> Result<f64, FitError> {
    let mut acc = 0.0;
    for v in r {
        acc += v * v;
    }
    if acc.is_finite() {
        Ok(acc)
    } else {
        Err(FitError::NonFiniteResidual)
    }
}

/// Minimize the sum of squared residuals starting from `init`.
pub fn minimize<P: LeastSquaresProblem>(
    problem: &mut P,
    init: &[f64],
    cfg: &LmConfig,
) -> Result<LmReport, FitError> {
    let n_par = init.len();
    if n_par == 0 {
        return Err(FitError::InvalidInput("no parameters to fit".into()));
    }
    let mut x = init.to_vec();
    let mut r = Vec::new();
    problem.residuals(&x, &mut r)?;
    let n_res = r.len();
    if n_res == 0 {
        return Err(FitError::InvalidInput("no residuals".into()));
    }
    let mut best = ssr(&r)?;
    let mut trace = vec![best];
    let mut lambda = cfg.lambda_init;
    let mut converged = best == 0.0;
    let mut iterations = 0;

    let mut cols: Vec<Vec<f64>> = Vec::new();
    let mut r_trial = Vec::with_capacity(n_res);

    while !converged && iterations < cfg.max_iterations {
        iterations += 1;
        problem.jacobian(&x, &r, cfg.jacobian_step_rel, &mut cols)?;
        if cols.len() != n_par || cols.iter().any(|c| c.len() != n_res) {
            return Err(FitError::InvalidInput("jacobian shape mismatch".into()));
        }
        if cols.iter().flatten().any(|v| !v.is_finite()) {
            return Err(FitError::NonFiniteResidual);
        }

        // normal equations
        let mut jtj = vec![0.0; n_par * n_par];
        let mut jtr = vec![0.0; n_par];
        for a in 0..n_par {
            for b in a..n_par {
                let dot: f64 = cols[a].iter().zip(cols[b].iter()).map(|(x, y)| x * y).sum();
                jtj[a * n_par + b] = dot;
                jtj[b * n_par + a] = dot;
            }
            jtr[a] = cols[a].iter().zip(r.iter()).map(|(x, y)| x * y).sum();
        }

        // inner damping loop: grow λ until a downhill step appears
        loop {
            let mut damped = jtj.clone();
            for a in 0..n_par {
                let d = jtj[a * n_par + a];
                damped[a * n_par + a] = d + lambda * d.max(1e-300);
            }
            let neg_g: Vec<f64> = jtr.iter().map(|v| -v).collect();
            let step = match cholesky_solve(&mut damped, &neg_g, n_par) {
                Some(s) => s,
                None => {
                    lambda *= 10.0;
                    if lambda > cfg.lambda_max {
                        return Err(FitError::RankDeficient);
                    }
                    continue;
                }
            };
            let x_trial: Vec<f64> = x.iter().zip(step.iter()).map(|(a, d)| a + d).collect();
            let trial = match problem.residuals(&x_trial, &mut r_trial) {
                Ok(()) => ssr(&r_trial),
                Err(FitError::NonFiniteResidual) => Err(FitError::NonFiniteResidual),
                Err(e) => return Err(e),
            };
            match trial {
                Ok(s_new) if s_new <= best => {
                    let rel_red = (best - s_new) / best.max(1e-300);
                    let rel_step = step
                        .iter()
                        .zip(x.iter())
                        .map(|(d, xv)| d.abs() / xv.abs().max(1.0))
                        .fold(0.0f64, f64::max);
                    x = x_trial;
                    std::mem::swap(&mut r, &mut r_trial);
                    best = s_new;
                    trace.push(best);
                    lambda = (lambda / 3.0).max(1e-14);
                    if rel_red < cfg.ftol || rel_step < cfg.xtol || best == 0.0 {
                        converged = true;
                    }
                    break;
                }
                _ => {
                    lambda *= 10.0;
                    if lambda > cfg.lambda_max {
                        // no downhill direction left at maximal damping
                        converged = true;
                        break;
                    }
                }
            }
        }
    }

    if !converged {
        return Err(FitError::NonConvergence(iterations));
    }

    // covariance from the Jacobian at the solution
    problem.jacobian(&x, &r, cfg.jacobian_step_rel, &mut cols)?;
    let mut jtj = vec![0.0; n_par * n_par];
    for a in 0..n_par {
        for b in a..n_par {
            let dot: f64 = cols[a].iter().zip(cols[b].iter()).map(|(x, y)| x * y).sum();
            jtj[a * n_par + b] = dot;
            jtj[b * n_par + a] = dot;
        }
    }
    let dof = n_res.saturating_sub(n_par).max(1) as f64;
    let sigma2 = best / dof;
    let (cov, rank_deficient) = pseudo_inverse_spd(&jtj, n_par);
    let std_errors: Vec<f64> = (0..n_par)
        .map(|a| (cov[a * n_par + a] * sigma2).max(0.0).sqrt())
        .collect();

    Ok(LmReport {
        params: x,
        residual_norm: best,
        std_errors,
        covariance_rank_deficient: rank_deficient,
        iterations,
        converged,
        objective_trace: trace,
    })
}

/// Solve `a x = b` for symmetric positive-definite `a` (overwritten).
fn cholesky_solve(a: &mut [f64], b: &[f64], n: usize) -> Option<Vec<f64>> {
    // in-place lower Cholesky
    for j in 0..n {
        let mut d = a[j * n + j];
        for k in 0..j {
            d -= a[j * n + k] * a[j * n + k];
        }
        if !(d > 0.0) || !d.is_finite() {
            return None;
        }
        let l_jj = d.sqrt();
        a[j * n + j] = l_jj;
        for i in (j + 1)..n {
            let mut v = a[i * n + j];
            for k in 0..j {
                v -= a[i * n + k] * a[j * n + k];
            }
            a[i * n + j] = v / l_jj;
        }
    }
    // forward/back substitution
    let mut y = b.to_vec();
    for i in 0..n {
        for k in 0..i {
            y[i] -= a[i * n + k] * y[k];
        }
        y[i] /= a[i * n + i];
    }
    for i in (0..n).rev() {
        for k in (i + 1)..n {
            y[i] -= a[k * n + i] * y[k];
        }
        y[i] /= a[i * n + i];
    }
    Some(y)
}

/// Pseudo-inverse of a symmetric PSD matrix via Jacobi eigendecomposition.
/// Returns the inverse and whether any eigen-direction had to be dropped.
fn pseudo_inverse_spd(a: &[f64], n: usize) -> (Vec<f64>, bool) {
    let (vals, vecs) = jacobi_eigh(a, n);
    let max_val = vals.iter().cloned().fold(0.0f64, f64::max);
    let tol = max_val * 1e-12;
    let mut dropped = false;
    let mut inv = vec![0.0; n * n];
    for k in 0..n {
        if vals[k] <= tol {
            dropped = true;
            continue;
        }
        let w = 1.0 / vals[k];
        for i in 0..n {
            for j in 0..n {
                inv[i * n + j] += w * vecs[i * n + k] * vecs[j * n + k];
            }
        }
    }
    (inv, dropped)
}

/// Cyclic Jacobi eigendecomposition of a symmetric matrix. Returns
/// eigenvalues and eigenvectors (columns of the returned matrix).
fn jacobi_eigh(a: &[f64], n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut m = a.to_vec();
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }
    for _sweep in 0..100 {
        let mut off = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                off += m[i * n + j] * m[i * n + j];
            }
        }
        let scale: f64 = (0..n).map(|i| m[i * n + i].abs()).fold(0.0, f64::max);
        if off <= (scale * 1e-15).powi(2) * (n * n) as f64 {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let theta = (m[q * n + q] - m[p * n + p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m[k * n + p];
                    let mkq = m[k * n + q];
                    m[k * n + p] = c * mkp - s * mkq;
                    m[k * n + q] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[p * n + k];
                    let mqk = m[q * n + k];
                    m[p * n + k] = c * mpk - s * mqk;
                    m[q * n + k] = s * mpk + c * mqk;
                }
                for k in 0..n {
                    let vkp = v[k * n + p];
                    let vkq = v[k * n + q];
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }
    let vals: Vec<f64> = (0..n).map(|i| m[i * n + i]).collect();
    (vals, v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn exact_linear_fit() {
        let xs: Vec<f64> = (0..10).map(f64::from).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 2.0 * x + 1.0).collect();
        let mut problem = FnProblem(|p: &[f64], out: &mut Vec<f64>| {
            out.clear();
            out.extend(xs.iter().zip(ys.iter()).map(|(x, y)| p[0] * x + p[1] - y));
            Ok(())
        });
        let report = minimize(&mut problem, &[0.5, 0.0], &LmConfig::default()).unwrap();
        assert!(report.converged);
        assert_relative_eq!(report.params[0], 2.0, max_relative = 1e-8);
        assert_relative_eq!(report.params[1], 1.0, max_relative = 1e-8);
        assert!(report.residual_norm < 1e-16);
    }

    #[test]
    fn exponential_recovery_and_monotone_objective() {
        let truth = (1.7, 0.35);
        let ts: Vec<f64> = (0..40).map(|i| f64::from(i) * 0.25).collect();
        // deterministic pseudo-noise, small against the signal
        let ys: Vec<f64> = ts
            .iter()
            .enumerate()
            .map(|(i, t)| truth.0 * (-truth.1 * t).exp() + 1e-3 * ((i * 37 % 17) as f64 - 8.0))
            .collect();
        let mut problem = FnProblem(|p: &[f64], out: &mut Vec<f64>| {
            out.clear();
            out.extend(
                ts.iter()
                    .zip(ys.iter())
                    .map(|(t, y)| p[0] * (-p[1] * t).exp() - y),
            );
            Ok(())
        });
        let report = minimize(&mut problem, &[0.5, 1.0], &LmConfig::default()).unwrap();
        assert!(report.converged);
        assert_relative_eq!(report.params[0], truth.0, max_relative = 0.01);
        assert_relative_eq!(report.params[1], truth.1, max_relative = 0.02);
        for w in report.objective_trace.windows(2) {
            assert!(w[1] <= w[0], "objective increased: {:?}", w);
        }
        assert!(report.std_errors.iter().all(|e| e.is_finite()));
    }

    #[test]
    fn degenerate_parameters_flag_covariance() {
        // residuals depend only on p0 + p1
        let ys = [1.0, 2.0, 3.0, 2.5];
        let mut problem = FnProblem(|p: &[f64], out: &mut Vec<f64>| {
            out.clear();
            out.extend(ys.iter().map(|y| p[0] + p[1] - y));
            Ok(())
        });
        let report = minimize(&mut problem, &[0.0, 0.0], &LmConfig::default()).unwrap();
        assert!(report.covariance_rank_deficient);
        assert_relative_eq!(report.params[0] + report.params[1], 2.125, max_relative = 1e-6);
    }

    #[test]
    fn non_convergence_is_reported() {
        let ts: Vec<f64> = (0..30).map(|i| f64::from(i) * 0.3).collect();
        let ys: Vec<f64> = ts.iter().map(|t| 2.0 * (-1.3 * t).exp()).collect();
        let mut problem = FnProblem(|p: &[f64], out: &mut Vec<f64>| {
            out.clear();
            out.extend(
                ts.iter()
                    .zip(ys.iter())
                    .map(|(t, y)| p[0] * (-p[1] * t).exp() - y),
            );
            Ok(())
        });
        let cfg = LmConfig {
            max_iterations: 1,
            ftol: 1e-16,
            xtol: 1e-16,
            ..LmConfig::default()
        };
        let res = minimize(&mut problem, &[30.0, 4.0], &cfg);
        assert!(matches!(res, Err(FitError::NonConvergence(1))), "{res:?}");
    }

    #[test]
    fn jacobi_eigh_recovers_spectrum() {
        // symmetric 3x3 with known eigenvalues {1, 2, 4}
        let v = [
            2.0, 1.0, 0.0, //
            1.0, 3.0, 1.0, //
            0.0, 1.0, 2.0,
        ];
        let (mut vals, _) = jacobi_eigh(&v, 3);
        vals.sort_by(f64::total_cmp);
        assert_relative_eq!(vals[0], 1.0, max_relative = 1e-10);
        assert_relative_eq!(vals[1], 2.0, max_relative = 1e-10);
        assert_relative_eq!(vals[2], 4.0, max_relative = 1e-10);
    }
}
