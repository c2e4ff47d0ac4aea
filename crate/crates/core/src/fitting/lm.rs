//! Damped least squares (Levenberg–Marquardt with Marquardt scaling).

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, FitFailure, Result};

/// Stopping rules.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LmOptions {
    pub max_iterations: usize,
    /// Relative cost decrease below which an accepted step ends the fit.
    pub ftol: f64,
    /// Relative step size below which an accepted step ends the fit.
    pub xtol: f64,
    pub initial_lambda: f64,
}

impl Default for LmOptions {
    fn default() -> Self {
        LmOptions {
            max_iterations: 200,
            ftol: 1e-15,
            xtol: 1e-13,
            initial_lambda: 1e-3,
        }
    }
}

/// A weighted residual vector `r(p) = √w (f(p) − y)` and, optionally, its
/// Jacobian. Without one, central finite differences are used.
pub trait Residuals {
    fn residuals(&self, p: &[f64]) -> Result<DVector<f64>>;

    fn jacobian(&self, p: &[f64]) -> Result<DMatrix<f64>> {
        finite_difference_jacobian(self, p, 1e-6)
    }
}

/// Central-difference Jacobian with relative step `rel`.
pub fn finite_difference_jacobian<R: Residuals + ?Sized>(
    r: &R,
    p: &[f64],
    rel: f64,
) -> Result<DMatrix<f64>> {
    let r0 = r.residuals(p)?;
    let mut j = DMatrix::zeros(r0.len(), p.len());
    let mut q = p.to_vec();
    for k in 0..p.len() {
        let h = rel * p[k].abs().max(1e-3);
        q[k] = p[k] + h;
        let up = r.residuals(&q)?;
        q[k] = p[k] - h;
        let down = r.residuals(&q)?;
        q[k] = p[k];
        j.set_column(k, &((up - down) / (2.0 * h)));
    }
    Ok(j)
}

#[derive(Debug, Clone)]
pub struct LmOutcome {
    pub params: Vec<f64>,
    /// `Σ r²` at the optimum.
    pub cost: f64,
    /// `(Jᵀ J)⁻¹` at the optimum.
    pub inverse_hessian: DMatrix<f64>,
    pub iterations: usize,
    pub status: &'static str,
    /// Cost after every accepted step, starting with the initial cost.
    pub history: Vec<f64>,
}

impl LmOutcome {
    /// 1σ uncertainties scaled by the reduced chi-square.
    pub fn sigmas(&self, n_data: usize) -> Vec<f64> {
        let dof = n_data.saturating_sub(self.params.len()).max(1) as f64;
        let s2 = self.cost / dof;
        (0..self.params.len())
            .map(|k| (s2 * self.inverse_hessian[(k, k)]).max(0.0).sqrt())
            .collect()
    }
}

fn cost_of(r: &DVector<f64>) -> f64 {
    r.norm_squared()
}

fn failure(reason: impl Into<String>, p: &[f64], iterations: usize) -> Error {
    Error::Fit(FitFailure {
        reason: reason.into(),
        parameters: p.to_vec(),
        iterations,
    })
}

pub fn minimize<R: Residuals + ?Sized>(
    problem: &R,
    start: &[f64],
    opts: &LmOptions,
) -> Result<LmOutcome> {
    let mut p = start.to_vec();
    let mut r = problem.residuals(&p)?;
    if r.len() < p.len() {
        return Err(failure(
            format!("{} residuals for {} parameters", r.len(), p.len()),
            &p,
            0,
        ));
    }
    let mut cost = cost_of(&r);
    if !cost.is_finite() {
        return Err(failure("non-finite residuals at the starting point", &p, 0));
    }
    let mut history = vec![cost];
    let mut lambda = opts.initial_lambda;
    let mut status = None;
    let mut iterations = 0;
    let mut jac = problem.jacobian(&p)?;

    while iterations < opts.max_iterations {
        iterations += 1;
        let a = jac.transpose() * &jac;
        let g = jac.transpose() * &r;
        if g.amax() <= 1e-300 || cost == 0.0 {
            status = Some("converged: zero gradient");
            break;
        }
        let dmax = a.diagonal().amax().max(1e-300);
        let mut accepted = false;
        while lambda < 1e20 {
            let mut m = a.clone();
            for k in 0..p.len() {
                m[(k, k)] += lambda * a[(k, k)].max(1e-12 * dmax);
            }
            let Some(step) = m.cholesky().map(|c| c.solve(&(-&g))) else {
                lambda *= 10.0;
                continue;
            };
            let trial: Vec<f64> = p.iter().zip(step.iter()).map(|(a, b)| a + b).collect();
            let rt = match problem.residuals(&trial) {
                Ok(v) => v,
                Err(_) => {
                    lambda *= 10.0;
                    continue;
                }
            };
            let ct = cost_of(&rt);
            if ct.is_finite() && ct <= cost {
                let step_norm = step.norm();
                let p_norm = p.iter().map(|v| v * v).sum::<f64>().sqrt();
                let decrease = cost - ct;
                p = trial;
                r = rt;
                cost = ct;
                history.push(cost);
                lambda = (lambda / 10.0).max(1e-15);
                accepted = true;
                if decrease <= opts.ftol * cost_of(&r).max(1e-300)
                    || step_norm <= opts.xtol * (p_norm + opts.xtol)
                {
                    status = Some("converged: small step");
                }
                break;
            }
            lambda *= 10.0;
        }
        if !accepted {
            status = Some("converged: no further decrease");
            break;
        }
        jac = problem.jacobian(&p)?;
        if status.is_some() {
            break;
        }
    }
    let Some(status) = status else {
        return Err(failure(
            format!("no convergence within {} iterations", opts.max_iterations),
            &p,
            iterations,
        ));
    };
    let a = jac.transpose() * &jac;
    let inverse_hessian = a
        .clone()
        .try_inverse()
        .or_else(|| a.pseudo_inverse(1e-300).ok())
        .ok_or_else(|| failure("singular normal matrix at the optimum", &p, iterations))?;
    Ok(LmOutcome {
        params: p,
        cost,
        inverse_hessian,
        iterations,
        status,
        history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Line {
        x: Vec<f64>,
        y: Vec<f64>,
    }

    impl Residuals for Line {
        fn residuals(&self, p: &[f64]) -> Result<DVector<f64>> {
            Ok(DVector::from_iterator(
                self.x.len(),
                self.x
                    .iter()
                    .zip(&self.y)
                    .map(|(x, y)| p[0] * (p[1] * x).exp() - y),
            ))
        }
    }

    #[test]
    fn recovers_exponential() {
        let x: Vec<f64> = (0..20).map(|k| k as f64 * 0.1).collect();
        let y = x.iter().map(|x| 2.5 * (-0.7 * x).exp()).collect();
        let out = minimize(&Line { x, y }, &[1.0, 0.0], &LmOptions::default()).unwrap();
        assert!((out.params[0] - 2.5).abs() < 1e-10);
        assert!((out.params[1] + 0.7).abs() < 1e-10);
        assert!(out.history.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn iteration_cap_reports_last_state() {
        let x: Vec<f64> = (0..20).map(|k| k as f64 * 0.1).collect();
        let y = x.iter().map(|x| 2.5 * (-0.7 * x).exp()).collect();
        let opts = LmOptions {
            max_iterations: 1,
            ..Default::default()
        };
        match minimize(&Line { x, y }, &[1.0, 0.0], &opts) {
            Err(Error::Fit(f)) => {
                assert_eq!(f.iterations, 1);
                assert_eq!(f.parameters.len(), 2);
            }
            other => panic!("{other:?}"),
        }
    }
}
