//! Saturation curve `S(P) = s_max P / (P + p_sat) + background`.

use nalgebra::{DMatrix, DVector};

use super::lm::{minimize, LmOptions, Residuals};
use super::{FitResult, Weighting};
use crate::error::{Error, FitFailure, Result};
use crate::spectra::Spectrum;

pub const PARAMETERS: [&str; 3] = ["s_max", "p_sat", "background"];

pub fn saturation_model(power: f64, p: &[f64]) -> f64 {
    p[0] * power / (power + p[1]) + p[2]
}

struct Problem<'a> {
    x: &'a [f64],
    y: &'a [f64],
    sw: Vec<f64>,
}

impl Residuals for Problem<'_> {
    fn residuals(&self, p: &[f64]) -> Result<DVector<f64>> {
        Ok(DVector::from_iterator(
            self.x.len(),
            self.x
                .iter()
                .zip(self.y)
                .zip(&self.sw)
                .map(|((x, y), w)| w * (saturation_model(*x, p) - y)),
        ))
    }

    fn jacobian(&self, p: &[f64]) -> Result<DMatrix<f64>> {
        let mut j = DMatrix::zeros(self.x.len(), 3);
        for (i, (&x, w)) in self.x.iter().zip(&self.sw).enumerate() {
            let d = x + p[1];
            j[(i, 0)] = w * x / d;
            j[(i, 1)] = -w * p[0] * x / (d * d);
            j[(i, 2)] = *w;
        }
        Ok(j)
    }
}

fn fail(reason: &str, parameters: Vec<f64>, iterations: usize) -> Error {
    Error::Fit(FitFailure {
        reason: reason.into(),
        parameters,
        iterations,
    })
}

/// Fits `data` (x = power in pW, value = counts/s).
///
/// Curves that never bend over (fitted `p_sat` beyond ten times the largest
/// power, or not resolved by the data) are reported as failures.
pub fn fit_saturation(data: &Spectrum, weighting: Weighting) -> Result<FitResult> {
    let (x, y) = (&data.x, &data.y);
    if x.len() < 6 {
        return Err(Error::Domain(format!(
            "a saturation fit needs at least 6 powers, got {}",
            x.len()
        )));
    }
    if x.iter().any(|p| *p < 0.0) {
        return Err(Error::Domain("powers must be >= 0".into()));
    }
    let pmax = x[x.len() - 1];

    // Start from the half-height crossing of the raw data.
    let background = if x[0] == 0.0 {
        y[0]
    } else {
        y[0].min(y[1]) * 0.5
    };
    let top = y.iter().cloned().fold(f64::MIN, f64::max);
    let half = background + 0.5 * (top - background);
    let k = (0..x.len()).find(|&k| y[k] >= half).unwrap_or(x.len() - 1);
    let start = [1.5 * (top - background), x[k].max(pmax * 1e-3), background];

    let problem = Problem {
        x,
        y,
        sw: weighting.sqrt_weights(y),
    };
    let out = minimize(&problem, &start, &LmOptions::default())?;
    let fit = FitResult::from_outcome(&PARAMETERS, &out, x.len());
    let (s_max, p_sat) = (fit.values[0], fit.values[1]);
    if !(p_sat > 0.0) || !(s_max > 0.0) {
        return Err(fail(
            "fitted saturation parameters are not positive",
            fit.values,
            fit.iterations,
        ));
    }
    if p_sat > 10.0 * pmax || fit.sigmas[1] > p_sat {
        return Err(fail(
            "p_sat unbounded: the data stay in the linear regime",
            fit.values,
            fit.iterations,
        ));
    }
    Ok(fit)
}
