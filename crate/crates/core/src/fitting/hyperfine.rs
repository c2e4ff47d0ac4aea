//! Fits of multi-peak hyperfine excitation spectra through the rate-equation
//! simulator. Only the shared transition width, a global shift, amplitude and
//! offset float; the line positions come from the ion model.

use nalgebra::{DMatrix, DVector};

use super::lm::{minimize, LmOptions, Residuals};
use super::{FitResult, Weighting};
use crate::dynamics::{DriveConfig, LevelScheme};
use crate::error::{Error, FitFailure, Result};
use crate::levels::IonModel;
use crate::spectra::{emitted_spectrum, Spectrum};

/// Simulated emitted photons/s as a function of scan detuning and width.
#[derive(Debug, Clone)]
pub struct HyperfineForward {
    pub model: IonModel,
    pub drive: DriveConfig,
    pub scheme: LevelScheme,
}

impl HyperfineForward {
    pub fn new(model: &IonModel, drive: &DriveConfig, scheme: LevelScheme) -> Self {
        HyperfineForward {
            model: model.clone(),
            drive: drive.clone(),
            scheme,
        }
    }

    /// Emitted photons/s at each `x` for per-transition width `width`.
    pub fn emitted(&self, x: &[f64], width: f64) -> Result<Vec<f64>> {
        if !(width > 0.0 && width.is_finite()) {
            return Err(Error::Domain(format!(
                "transition width must be > 0, got {width}"
            )));
        }
        let m = IonModel {
            gamma_hom: width,
            ..self.model.clone()
        };
        emitted_spectrum(&m, &self.drive, x, self.scheme)
    }

    /// `amplitude · emitted(x − center) + offset`.
    pub fn curve(&self, x: &[f64], p: &[f64]) -> Result<Vec<f64>> {
        let shifted: Vec<f64> = x.iter().map(|v| v - p[1]).collect();
        Ok(self
            .emitted(&shifted, p[0])?
            .into_iter()
            .map(|e| p[2] * e + p[3])
            .collect())
    }
}

struct Dataset<'a> {
    x: &'a [f64],
    y: &'a [f64],
    sw: Vec<f64>,
    forward: HyperfineForward,
}

/// Parameters: `[width, center, (amplitude, offset) per dataset]`.
struct Joint<'a> {
    sets: Vec<Dataset<'a>>,
    n: usize,
}

const WIDTH_STEP: f64 = 1e-5;
const CENTER_STEP: f64 = 1e-5;

impl Joint<'_> {
    fn emitted(&self, d: &Dataset, width: f64, center: f64) -> Result<Vec<f64>> {
        let shifted: Vec<f64> = d.x.iter().map(|v| v - center).collect();
        d.forward.emitted(&shifted, width)
    }
}

impl Residuals for Joint<'_> {
    fn residuals(&self, p: &[f64]) -> Result<DVector<f64>> {
        let mut r = Vec::with_capacity(self.n);
        for (k, d) in self.sets.iter().enumerate() {
            let (a, b) = (p[2 + 2 * k], p[3 + 2 * k]);
            let e = self.emitted(d, p[0], p[1])?;
            r.extend(
                e.iter()
                    .zip(d.y)
                    .zip(&d.sw)
                    .map(|((e, y), w)| w * (a * e + b - y)),
            );
        }
        Ok(DVector::from_vec(r))
    }

    fn jacobian(&self, p: &[f64]) -> Result<DMatrix<f64>> {
        let mut j = DMatrix::zeros(self.n, p.len());
        let hw = WIDTH_STEP * p[0].abs().max(1e-3);
        let mut row = 0;
        for (k, d) in self.sets.iter().enumerate() {
            let a = p[2 + 2 * k];
            let e = self.emitted(d, p[0], p[1])?;
            let wp = self.emitted(d, p[0] + hw, p[1])?;
            let wm = self.emitted(d, p[0] - hw, p[1])?;
            let cp = self.emitted(d, p[0], p[1] + CENTER_STEP)?;
            let cm = self.emitted(d, p[0], p[1] - CENTER_STEP)?;
            for i in 0..d.x.len() {
                let w = d.sw[i];
                j[(row, 0)] = w * a * (wp[i] - wm[i]) / (2.0 * hw);
                j[(row, 1)] = w * a * (cp[i] - cm[i]) / (2.0 * CENTER_STEP);
                j[(row, 2 + 2 * k)] = w * e[i];
                j[(row, 3 + 2 * k)] = w;
                row += 1;
            }
        }
        Ok(j)
    }
}

/// Weighted linear least squares for `y ≈ a e + b`.
fn linear_amplitude(e: &[f64], y: &[f64], sw: &[f64]) -> (f64, f64, f64) {
    let (mut s, mut se, mut see, mut sy, mut sey) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for ((e, y), w) in e.iter().zip(y).zip(sw) {
        let w2 = w * w;
        s += w2;
        se += w2 * e;
        see += w2 * e * e;
        sy += w2 * y;
        sey += w2 * e * y;
    }
    let det = s * see - se * se;
    if det.abs() < 1e-300 {
        return (0.0, sy / s, f64::INFINITY);
    }
    let a = (s * sey - se * sy) / det;
    let b = (see * sy - se * sey) / det;
    let cost = e
        .iter()
        .zip(y)
        .zip(sw)
        .map(|((e, y), w)| (w * (a * e + b - y)).powi(2))
        .sum();
    (a, b, cost)
}

/// Log-spaced trial widths, MHz, used to seed the width.
fn width_grid() -> Vec<f64> {
    (0..=24)
        .map(|k| 0.02 * 10f64.powf(k as f64 / 8.0))
        .collect()
}

fn fit_sets(sets: Vec<Dataset>, init_width: Option<f64>) -> Result<FitResult> {
    let n: usize = sets.iter().map(|d| d.x.len()).sum();
    for d in &sets {
        if d.x.len() < 8 {
            return Err(Error::Domain(format!(
                "a multi-peak fit needs at least 8 samples, got {}",
                d.x.len()
            )));
        }
    }
    let problem = Joint { sets, n };

    // Seed: best width on a coarse grid with amplitudes solved linearly.
    let candidates = match init_width {
        Some(w) => vec![w],
        None => width_grid(),
    };
    let mut best: Option<(f64, Vec<f64>)> = None;
    for w in candidates {
        let mut cost = 0.0;
        let mut lin = Vec::new();
        for d in &problem.sets {
            let e = d.forward.emitted(d.x, w)?;
            let (a, b, c) = linear_amplitude(&e, d.y, &d.sw);
            cost += c;
            lin.extend([a, b]);
        }
        if best.as_ref().is_none_or(|(c, _)| cost < *c) {
            let mut p = vec![w, 0.0];
            p.extend(lin);
            best = Some((cost, p));
        }
    }
    let (_, start) = best.expect("at least one trial width");
    if start.iter().skip(2).step_by(2).all(|a| *a <= 0.0) {
        return Err(Error::Fit(FitFailure {
            reason: "data show no resolvable hyperfine structure".into(),
            parameters: start,
            iterations: 0,
        }));
    }
    let out = minimize(&problem, &start, &LmOptions::default())?;
    let mut names = vec!["fwhm".to_string(), "center".to_string()];
    if problem.sets.len() == 1 {
        names.extend(["amplitude".to_string(), "offset".to_string()]);
    } else {
        for k in 0..problem.sets.len() {
            names.extend([format!("amplitude_{}", k + 1), format!("offset_{}", k + 1)]);
        }
    }
    let refs: Vec<&str> = names.iter().map(String::as_str).collect();
    Ok(FitResult::from_outcome(&refs, &out, n))
}

/// Fits the shared transition width, global shift, amplitude and offset of a
/// single spectrum, and reports the envelope FWHM of the fitted curve as the
/// extra `envelope_fwhm`.
pub fn fit_hyperfine_multipeak(
    data: &Spectrum,
    model: &IonModel,
    drive: &DriveConfig,
    scheme: LevelScheme,
    weighting: Weighting,
    init_width: Option<f64>,
) -> Result<FitResult> {
    let forward = HyperfineForward::new(model, drive, scheme);
    let set = Dataset {
        x: &data.x,
        y: &data.y,
        sw: weighting.sqrt_weights(&data.y),
        forward: forward.clone(),
    };
    let mut fit = fit_sets(vec![set], init_width)?;
    // Evaluate well past the data so broad wings still cross half height.
    let pad = 10.0 * fit.values[0].abs();
    let lo = data.x[0] - pad;
    let hi = data.x[data.x.len() - 1] + pad;
    let fine: Vec<f64> = (0..=4000)
        .map(|k| lo + (hi - lo) * k as f64 / 4000.0)
        .collect();
    let curve = forward.curve(&fine, &fit.values)?;
    if let Some(w) = envelope_fwhm(&fine, &curve, fit.values[3]) {
        fit.extras.push(("envelope_fwhm".into(), w));
    }
    Ok(fit)
}

/// Joint fit of several spectra taken under different tone sets, sharing
/// width and shift; each spectrum keeps its own amplitude and offset.
pub fn fit_hyperfine_joint(
    data: &[(Spectrum, DriveConfig)],
    model: &IonModel,
    scheme: LevelScheme,
    weighting: Weighting,
    init_width: Option<f64>,
) -> Result<FitResult> {
    if data.is_empty() {
        return Err(Error::Domain(
            "joint fit needs at least one spectrum".into(),
        ));
    }
    let sets = data
        .iter()
        .map(|(s, d)| Dataset {
            x: &s.x,
            y: &s.y,
            sw: weighting.sqrt_weights(&s.y),
            forward: HyperfineForward::new(model, d, scheme),
        })
        .collect();
    fit_sets(sets, init_width)
}

/// Full width between the outermost crossings of the half-height level
/// `offset + (max − offset) / 2`.
pub fn envelope_fwhm(x: &[f64], y: &[f64], offset: f64) -> Option<f64> {
    let top = y.iter().cloned().fold(f64::MIN, f64::max);
    let level = offset + 0.5 * (top - offset);
    let first = y.iter().position(|v| *v >= level)?;
    let last = y.iter().rposition(|v| *v >= level)?;
    if first == 0 || last + 1 == y.len() {
        return None;
    }
    let interp = |a: usize, b: usize| x[a] + (level - y[a]) / (y[b] - y[a]) * (x[b] - x[a]);
    Some(interp(last, last + 1) - interp(first - 1, first))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn envelope_of_single_lorentzian() {
        let x: Vec<f64> = (0..=2000).map(|k| -10.0 + k as f64 * 0.01).collect();
        let y: Vec<f64> = x
            .iter()
            .map(|v| 3.0 / (1.0 + (2.0 * v / 2.0).powi(2)) + 1.0)
            .collect();
        let w = envelope_fwhm(&x, &y, 1.0).unwrap();
        assert!((w - 2.0).abs() < 1e-3);
        assert!(envelope_fwhm(&x[..900], &y[..900], 1.0).is_none());
    }

    #[test]
    fn linear_amplitude_exact() {
        let e = [1.0, 2.0, 3.0, 5.0];
        let y: Vec<f64> = e.iter().map(|v| 0.3 * v + 7.0).collect();
        let (a, b, c) = linear_amplitude(&e, &y, &[1.0; 4]);
        assert!((a - 0.3).abs() < 1e-12 && (b - 7.0).abs() < 1e-12 && c < 1e-20);
    }
}
