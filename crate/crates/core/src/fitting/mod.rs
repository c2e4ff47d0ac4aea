//! Nonlinear least-squares fits of lines, hyperfine spectra, saturation
//! curves and fluorescence spots.

pub mod hyperfine;
pub mod lm;
pub mod lorentzian;
pub mod saturation;
pub mod spot;
pub mod stats;

pub use hyperfine::{
    envelope_fwhm, fit_hyperfine_joint, fit_hyperfine_multipeak, HyperfineForward,
};
pub use lm::{LmOptions, Residuals};
pub use lorentzian::{fit_lorentzian, lorentzian_model, LorentzianInit};
pub use saturation::{fit_saturation, saturation_model};
pub use spot::{colocalize, fit_spot_2d, render_spot, CoLocalization, ScanImage, SpotSpec};
pub use stats::{stability_statistics, Stability};

use crate::error::{Error, Result};

/// How residuals are weighted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Weighting {
    /// Count data: weight `1 / max(y, 1)`.
    #[default]
    Poisson,
    Uniform,
}

impl Weighting {
    pub(crate) fn sqrt_weights(self, y: &[f64]) -> Vec<f64> {
        match self {
            Weighting::Poisson => y.iter().map(|v| 1.0 / v.max(1.0).sqrt()).collect(),
            Weighting::Uniform => vec![1.0; y.len()],
        }
    }
}

/// Converged fit: named parameters with 1σ uncertainties.
#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub names: Vec<String>,
    pub values: Vec<f64>,
    pub sigmas: Vec<f64>,
    /// `√Σ r²` of the weighted residuals.
    pub residual_norm: f64,
    pub reduced_chi2: f64,
    pub status: String,
    pub iterations: usize,
    /// Derived quantities (e.g. an envelope width), by name.
    pub extras: Vec<(String, f64)>,
}

impl FitResult {
    pub(crate) fn from_outcome(names: &[&str], out: &lm::LmOutcome, n_data: usize) -> Self {
        let dof = n_data.saturating_sub(names.len()).max(1) as f64;
        FitResult {
            names: names.iter().map(|s| s.to_string()).collect(),
            values: out.params.clone(),
            sigmas: out.sigmas(n_data),
            residual_norm: out.cost.sqrt(),
            reduced_chi2: out.cost / dof,
            status: out.status.to_string(),
            iterations: out.iterations,
            extras: Vec::new(),
        }
    }

    fn index(&self, name: &str) -> Result<usize> {
        self.names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| Error::Domain(format!("fit has no parameter `{name}`")))
    }

    pub fn value(&self, name: &str) -> Result<f64> {
        Ok(self.values[self.index(name)?])
    }

    pub fn sigma(&self, name: &str) -> Result<f64> {
        Ok(self.sigmas[self.index(name)?])
    }

    pub fn extra(&self, name: &str) -> Option<f64> {
        self.extras.iter().find(|(k, _)| k == name).map(|(_, v)| *v)
    }

    /// Human-readable multi-line report.
    pub fn report(&self) -> String {
        let mut s = format!(
            "status: {}\niterations: {}\nresidual_norm: {:.6e}\nreduced_chi2: {:.6e}\n",
            self.status, self.iterations, self.residual_norm, self.reduced_chi2
        );
        for ((n, v), e) in self.names.iter().zip(&self.values).zip(&self.sigmas) {
            s.push_str(&format!("{n} = {v:.9e} +/- {e:.3e}\n"));
        }
        for (n, v) in &self.extras {
            s.push_str(&format!("{n} = {v:.9e}\n"));
        }
        s
    }

    pub fn csv_header(&self) -> String {
        let mut cols = vec![
            "status".to_string(),
            "iterations".into(),
            "residual_norm".into(),
            "reduced_chi2".into(),
        ];
        for n in &self.names {
            cols.push(n.clone());
            cols.push(format!("{n}_sigma"));
        }
        cols.extend(self.extras.iter().map(|(n, _)| n.clone()));
        cols.join(",")
    }

    pub fn csv_row(&self) -> String {
        let mut cols = vec![
            self.status.replace(',', ";"),
            self.iterations.to_string(),
            format!("{:e}", self.residual_norm),
            format!("{:e}", self.reduced_chi2),
        ];
        for (v, e) in self.values.iter().zip(&self.sigmas) {
            cols.push(format!("{v:e}"));
            cols.push(format!("{e:e}"));
        }
        cols.extend(self.extras.iter().map(|(_, v)| format!("{v:e}")));
        cols.join(",")
    }
}

/// Abscissa at which `y` first falls to `level` walking from `start` in
/// direction `dir`, linearly interpolated.
pub(crate) fn crossing(
    x: &[f64],
    y: &[f64],
    start: usize,
    dir: isize,
    level: f64,
    above: bool,
) -> Option<f64> {
    let beyond = |v: f64| if above { v <= level } else { v >= level };
    let mut k = start as isize;
    loop {
        let next = k + dir;
        if next < 0 || next as usize >= x.len() {
            return None;
        }
        let (a, b) = (k as usize, next as usize);
        if beyond(y[b]) {
            let t = if y[b] == y[a] {
                0.0
            } else {
                (level - y[a]) / (y[b] - y[a])
            };
            return Some(x[a] + t * (x[b] - x[a]));
        }
        k = next;
    }
}

pub(crate) fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n == 0 {
        0.0
    } else if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

/// Largest column-scaled gap between the analytic and the central-difference
/// Jacobian.
#[cfg(test)]
pub(crate) fn jacobian_gap<R: lm::Residuals>(r: &R, p: &[f64]) -> f64 {
    let a = r.jacobian(p).unwrap();
    let f = lm::finite_difference_jacobian(r, p, 1e-6).unwrap();
    (0..a.ncols())
        .map(|c| {
            let scale = a.column(c).amax().max(1e-12);
            (a.column(c) - f.column(c)).amax() / scale
        })
        .fold(0.0, f64::max)
}
