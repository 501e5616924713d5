//! Bounded damped least squares (Levenberg–Marquardt) for small dense problems.
//!
//! Used by field-map calibration and decay fitting. Jacobians are taken by
//! central finite differences; parameter counts here are 2–3, so the cost is
//! dominated by residual evaluation.

use nalgebra::{DMatrix, DVector};

/// Knobs for [`minimize`].
#[derive(Debug, Clone, Copy)]
pub struct LsqOptions {
    pub max_iterations: usize,
    /// Relative tolerance on cost decrease and parameter step.
    pub tolerance: f64,
    pub initial_damping: f64,
}

impl Default for LsqOptions {
    fn default() -> Self {
        Self {
            max_iterations: 500,
            tolerance: 1e-10,
            initial_damping: 1e-3,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LsqSolution {
    pub params: Vec<f64>,
    /// Half the sum of squared residuals.
    pub cost: f64,
    pub residuals: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Gauss–Newton normal matrix JᵀJ at the solution.
    pub normal_matrix: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum LsqError {
    #[error("residual function is not finite at the initial point")]
    BadStart,
    #[error("parameter and bound counts differ ({params} vs {bounds})")]
    BoundsMismatch { params: usize, bounds: usize },
}

fn clamp_into(p: &mut [f64], bounds: &[(f64, f64)]) {
    for (x, &(lo, hi)) in p.iter_mut().zip(bounds) {
        *x = x.clamp(lo, hi);
    }
}

fn finite(v: &[f64]) -> bool {
    v.iter().all(|x| x.is_finite())
}

fn jacobian<F>(f: &F, p: &[f64], r0: &[f64], bounds: &[(f64, f64)]) -> Option<DMatrix<f64>>
where
    F: Fn(&[f64]) -> Option<Vec<f64>>,
{
    let m = r0.len();
    let n = p.len();
    let mut jac = DMatrix::zeros(m, n);
    let mut probe = p.to_vec();
    for j in 0..n {
        let h = 1e-7 * p[j].abs().max(1e-8);
        let (lo, hi) = bounds[j];
        let up = (p[j] + h).min(hi);
        let down = (p[j] - h).max(lo);
        let span = up - down;
        if span <= 0.0 {
            continue;
        }
        probe[j] = up;
        let r_up = f(&probe)?;
        probe[j] = down;
        let r_down = f(&probe)?;
        probe[j] = p[j];
        if !finite(&r_up) || !finite(&r_down) {
            return None;
        }
        for i in 0..m {
            jac[(i, j)] = (r_up[i] - r_down[i]) / span;
        }
    }
    Some(jac)
}

fn half_sq(r: &[f64]) -> f64 {
    0.5 * r.iter().map(|x| x * x).sum::<f64>()
}

/// Minimizes ½‖r(p)‖² over the box `bounds` starting from `start`.
///
/// `residuals` may return `None` to reject a trial point (treated as an
/// uphill step). The iteration is fully deterministic.
pub fn minimize<F>(
    residuals: F,
    start: &[f64],
    bounds: &[(f64, f64)],
    opts: LsqOptions,
) -> Result<LsqSolution, LsqError>
where
    F: Fn(&[f64]) -> Option<Vec<f64>>,
{
    if start.len() != bounds.len() {
        return Err(LsqError::BoundsMismatch {
            params: start.len(),
            bounds: bounds.len(),
        });
    }
    let mut p = start.to_vec();
    clamp_into(&mut p, bounds);
    let mut r = residuals(&p).filter(|r| finite(r)).ok_or(LsqError::BadStart)?;
    let mut cost = half_sq(&r);
    let mut lambda = opts.initial_damping;
    let mut converged = false;
    let mut iterations = 0;
    let n = p.len();

    while iterations < opts.max_iterations {
        iterations += 1;
        if cost <= 1e-300 {
            converged = true;
            break;
        }
        let Some(jac) = jacobian(&residuals, &p, &r, bounds) else {
            break;
        };
        let jt = jac.transpose();
        let normal = &jt * &jac;
        let grad = &jt * DVector::from_column_slice(&r);

        let mut improved = false;
        while lambda < 1e16 {
            let mut damped = normal.clone();
            for k in 0..n {
                damped[(k, k)] += lambda * normal[(k, k)].max(1e-12);
            }
            let Some(step) = damped.lu().solve(&(-&grad)) else {
                lambda *= 10.0;
                continue;
            };
            let mut trial = p.clone();
            for k in 0..n {
                trial[k] += step[k];
            }
            clamp_into(&mut trial, bounds);
            let accepted = residuals(&trial).filter(|rt| finite(rt)).and_then(|rt| {
                let c = half_sq(&rt);
                (c < cost).then_some((rt, c))
            });
            match accepted {
                Some((rt, c)) => {
                    let step_norm: f64 = p
                        .iter()
                        .zip(&trial)
                        .map(|(a, b)| (a - b).powi(2))
                        .sum::<f64>()
                        .sqrt();
                    let p_norm: f64 = p.iter().map(|a| a * a).sum::<f64>().sqrt();
                    let small_cost = (cost - c) <= opts.tolerance * cost;
                    let small_step = step_norm <= opts.tolerance * (p_norm + opts.tolerance);
                    p = trial;
                    r = rt;
                    cost = c;
                    lambda = (lambda / 10.0).max(1e-15);
                    improved = true;
                    if small_cost || small_step {
                        converged = true;
                    }
                    break;
                }
                None => lambda *= 10.0,
            }
        }
        if !improved {
            // No downhill step exists at any damping: stationary within the box.
            converged = true;
            break;
        }
        if converged {
            break;
        }
    }

    let normal_matrix = jacobian(&residuals, &p, &r, bounds)
        .map(|j| j.transpose() * j)
        .unwrap_or_else(|| DMatrix::zeros(n, n));
    Ok(LsqSolution {
        params: p,
        cost,
        residuals: r,
        iterations,
        converged,
        normal_matrix,
    })
}
