//! Single Lorentzian line on a constant offset.

use nalgebra::{DMatrix, DVector};

use super::lm::{minimize, LmOptions, Residuals};
use super::{crossing, median, FitResult, Weighting};
use crate::error::{Error, FitFailure, Result};
use crate::spectra::Spectrum;

pub const PARAMETERS: [&str; 4] = ["center", "fwhm", "amplitude", "offset"];

/// Starting point; peak or dip sign is taken from `amplitude`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LorentzianInit {
    pub center: f64,
    pub fwhm: f64,
    pub amplitude: f64,
    pub offset: f64,
}

/// `amplitude / (1 + (2 (x − center) / fwhm)²) + offset`.
pub fn lorentzian_model(x: f64, p: &[f64]) -> f64 {
    let u = 2.0 * (x - p[0]) / p[1];
    p[2] / (1.0 + u * u) + p[3]
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
                .map(|((x, y), w)| w * (lorentzian_model(*x, p) - y)),
        ))
    }

    fn jacobian(&self, p: &[f64]) -> Result<DMatrix<f64>> {
        let mut j = DMatrix::zeros(self.x.len(), 4);
        for (i, (&x, w)) in self.x.iter().zip(&self.sw).enumerate() {
            let u = 2.0 * (x - p[0]) / p[1];
            let l = 1.0 / (1.0 + u * u);
            let dl_du = -2.0 * u * l * l;
            j[(i, 0)] = w * p[2] * dl_du * (-2.0 / p[1]);
            j[(i, 1)] = w * p[2] * dl_du * (-u / p[1]);
            j[(i, 2)] = w * l;
            j[(i, 3)] = *w;
        }
        Ok(j)
    }
}

/// Peak (or dip) position, half-max width and height from the samples.
pub fn initial_guess(x: &[f64], y: &[f64]) -> Result<LorentzianInit> {
    let offset = median(y);
    let (imax, imin) = (0..y.len()).fold((0, 0), |(a, b), k| {
        (
            if y[k] > y[a] { k } else { a },
            if y[k] < y[b] { k } else { b },
        )
    });
    let peak = (y[imax] - offset).abs() >= (offset - y[imin]).abs();
    let k = if peak { imax } else { imin };
    let amplitude = y[k] - offset;
    if amplitude == 0.0 || !amplitude.is_finite() {
        return Err(Error::Fit(FitFailure {
            reason: "data are flat".into(),
            parameters: vec![],
            iterations: 0,
        }));
    }
    let half = offset + amplitude / 2.0;
    let left = crossing(x, y, k, -1, half, peak);
    let right = crossing(x, y, k, 1, half, peak);
    let step = (x[x.len() - 1] - x[0]) / (x.len() - 1) as f64;
    let fwhm = match (left, right) {
        (Some(l), Some(r)) => r - l,
        (Some(l), None) => 2.0 * (x[k] - l),
        (None, Some(r)) => 2.0 * (r - x[k]),
        (None, None) => 0.25 * (x[x.len() - 1] - x[0]),
    }
    .max(step);
    Ok(LorentzianInit {
        center: x[k],
        fwhm,
        amplitude,
        offset,
    })
}

pub fn fit_lorentzian(
    data: &Spectrum,
    init: Option<LorentzianInit>,
    weighting: Weighting,
) -> Result<FitResult> {
    fit_lorentzian_xy(&data.x, &data.y, init, weighting)
}

pub fn fit_lorentzian_xy(
    x: &[f64],
    y: &[f64],
    init: Option<LorentzianInit>,
    weighting: Weighting,
) -> Result<FitResult> {
    if x.len() != y.len() {
        return Err(Error::Structure(format!(
            "{} x values but {} samples",
            x.len(),
            y.len()
        )));
    }
    if x.len() < 8 {
        return Err(Error::Domain(format!(
            "a line fit needs at least 8 samples, got {}",
            x.len()
        )));
    }
    let init = match init {
        Some(i) => i,
        None => initial_guess(x, y)?,
    };
    let problem = Problem {
        x,
        y,
        sw: weighting.sqrt_weights(y),
    };
    let start = [init.center, init.fwhm, init.amplitude, init.offset];
    let out = minimize(&problem, &start, &LmOptions::default())?;
    let mut fit = FitResult::from_outcome(&PARAMETERS, &out, x.len());
    fit.values[1] = fit.values[1].abs();
    if fit.values[1] == 0.0 || fit.values[2] == 0.0 {
        return Err(Error::Fit(FitFailure {
            reason: "degenerate line (zero width or amplitude)".into(),
            parameters: fit.values,
            iterations: fit.iterations,
        }));
    }
    Ok(fit)
}
