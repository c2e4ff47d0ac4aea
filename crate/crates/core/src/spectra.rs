//! Excitation spectra, saturation curves and ensemble hole burning.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dynamics::{
    build_rate_matrix, detected_rate, emitted_photon_rate, rate_matrix_at, steady_state,
    DetectionModel, DriveConfig, LevelScheme, Populations, Propagator,
};
use crate::error::{Error, Result};
use crate::levels::{
    lorentzian_unchecked, transition_table, IonModel, EXCITED_LEVELS, GROUND_LEVELS,
};
use crate::rng;

/// Sampled `(x, value)` series with unit labels and provenance metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    pub x_unit: String,
    pub value_unit: String,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub metadata: Vec<(String, String)>,
}

impl Spectrum {
    pub fn new(x_unit: &str, value_unit: &str, x: Vec<f64>, y: Vec<f64>) -> Result<Self> {
        if x.len() != y.len() {
            return Err(Error::Structure(format!(
                "{} x values but {} samples",
                x.len(),
                y.len()
            )));
        }
        if x.iter().chain(&y).any(|v| !v.is_finite()) {
            return Err(Error::Domain("spectrum samples must be finite".into()));
        }
        if x.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Domain(
                "spectrum x values must be strictly increasing".into(),
            ));
        }
        Ok(Spectrum {
            x_unit: x_unit.to_string(),
            value_unit: value_unit.to_string(),
            x,
            y,
            metadata: Vec::new(),
        })
    }

    pub fn with_meta(mut self, key: &str, value: impl ToString) -> Self {
        self.metadata.push((key.to_string(), value.to_string()));
        self
    }

    pub fn meta(&self, key: &str) -> Option<&str> {
        self.metadata
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn argmax(&self) -> Option<usize> {
        (0..self.len()).max_by(|&a, &b| self.y[a].total_cmp(&self.y[b]))
    }

    pub fn argmin(&self) -> Option<usize> {
        (0..self.len()).min_by(|&a, &b| self.y[a].total_cmp(&self.y[b]))
    }

    /// Interior local maxima, strongest first.
    pub fn peaks(&self) -> Vec<usize> {
        let mut idx = local_extrema(&self.y, true);
        idx.sort_by(|&a, &b| self.y[b].total_cmp(&self.y[a]));
        idx
    }

    /// Interior local minima, deepest first.
    pub fn dips(&self) -> Vec<usize> {
        let mut idx = local_extrema(&self.y, false);
        idx.sort_by(|&a, &b| self.y[a].total_cmp(&self.y[b]));
        idx
    }

    /// Trapezoid integral of the values over x.
    pub fn integral(&self) -> f64 {
        self.x
            .windows(2)
            .zip(self.y.windows(2))
            .map(|(x, y)| 0.5 * (x[1] - x[0]) * (y[0] + y[1]))
            .sum()
    }
}

fn local_extrema(y: &[f64], maxima: bool) -> Vec<usize> {
    let sign = if maxima { 1.0 } else { -1.0 };
    (1..y.len().saturating_sub(1))
        .filter(|&i| {
            let (l, c, r) = (sign * y[i - 1], sign * y[i], sign * y[i + 1]);
            c > l && c >= r
        })
        .collect()
}

/// Regular scan grid, `start..=stop` in steps of `step` (MHz).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScanRange {
    pub start: f64,
    pub stop: f64,
    pub step: f64,
}

impl ScanRange {
    pub fn new(start: f64, stop: f64, step: f64) -> Self {
        ScanRange { start, stop, step }
    }

    pub fn points(&self) -> Result<Vec<f64>> {
        if !(self.step > 0.0) || !self.start.is_finite() || !self.stop.is_finite() {
            return Err(Error::Domain(format!(
                "scan step must be > 0, got {}",
                self.step
            )));
        }
        if self.stop < self.start {
            return Err(Error::Domain(format!(
                "scan stop {} precedes start {}",
                self.stop, self.start
            )));
        }
        let n = ((self.stop - self.start) / self.step + 1e-9).floor() as usize;
        Ok((0..=n).map(|k| self.start + k as f64 * self.step).collect())
    }
}

/// Photon-counting noise: each sample is a Poisson draw over `integration_s`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub seed: u64,
    pub integration_s: f64,
}

/// Short content hash of the ion model, for provenance.
pub fn model_hash(model: &IonModel) -> String {
    let text = toml::to_string(model).expect("ion model serializes");
    let digest = Sha256::digest(text.as_bytes());
    digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
}

fn describe_tones(drive: &DriveConfig) -> String {
    drive
        .tones
        .iter()
        .map(|t| {
            format!(
                "{}@{:+}MHz/{}pW{}",
                t.name,
                t.offset,
                t.power,
                if t.active { "" } else { "(off)" }
            )
        })
        .collect::<Vec<_>>()
        .join(" ")
}

fn apply_noise(values: &mut [f64], noise: Option<NoiseSpec>) -> Result<()> {
    let Some(n) = noise else { return Ok(()) };
    if !(n.integration_s > 0.0) {
        return Err(Error::Domain(format!(
            "integration time must be > 0 s, got {}",
            n.integration_s
        )));
    }
    values.par_iter_mut().enumerate().for_each(|(k, v)| {
        let mut r = rng::stream(n.seed, k as u64);
        *v = rng::poisson(&mut r, *v * n.integration_s) as f64 / n.integration_s;
    });
    Ok(())
}

/// Steady-state emitted photons/s at each scan detuning.
pub fn emitted_spectrum(
    model: &IonModel,
    drive: &DriveConfig,
    xs: &[f64],
    scheme: LevelScheme,
) -> Result<Vec<f64>> {
    xs.par_iter()
        .map(|&x| {
            let q = rate_matrix_at(model, drive, x, scheme)?;
            Ok(emitted_photon_rate(&steady_state(&q)?, model))
        })
        .collect()
}

/// Detected count rate versus scan detuning under the drive's active tones.
pub fn excitation_spectrum(
    model: &IonModel,
    drive: &DriveConfig,
    scan: &ScanRange,
    scheme: LevelScheme,
    det: &DetectionModel,
    noise: Option<NoiseSpec>,
) -> Result<Spectrum> {
    model.validate()?;
    drive.validate()?;
    if drive.active_count() == 0 {
        return Err(Error::Domain(
            "excitation spectrum needs at least one active tone with power > 0".into(),
        ));
    }
    let xs = scan.points()?;
    let mut ys: Vec<f64> = emitted_spectrum(model, drive, &xs, scheme)?
        .into_iter()
        .map(|e| detected_rate(e, det))
        .collect();
    apply_noise(&mut ys, noise)?;
    let mut s = Spectrum::new("MHz", "cps", xs, ys)?
        .with_meta("kind", "excitation")
        .with_meta("model_hash", model_hash(model))
        .with_meta("scheme", scheme.name())
        .with_meta("gamma_hom_MHz", model.gamma_hom)
        .with_meta("tones", describe_tones(drive));
    if let Some(n) = noise {
        s = s
            .with_meta("seed", n.seed)
            .with_meta("integration_s", n.integration_s);
    }
    Ok(s)
}

/// Detected steady-state counts versus per-tone power at a fixed scan
/// detuning (default placement puts all tones on resonance with e₁).
pub fn saturation_curve(
    model: &IonModel,
    drive: &DriveConfig,
    powers: &[f64],
    scan_detuning: f64,
    scheme: LevelScheme,
    det: &DetectionModel,
    noise: Option<NoiseSpec>,
) -> Result<Spectrum> {
    model.validate()?;
    drive.validate()?;
    if powers.iter().any(|p| !(*p >= 0.0)) {
        return Err(Error::Domain("powers must be >= 0 pW".into()));
    }
    let mut ys = powers
        .par_iter()
        .map(|&p| {
            if p == 0.0 {
                return Ok(det.background);
            }
            let d = drive.with_power(p);
            let q = rate_matrix_at(model, &d, scan_detuning, scheme)?;
            Ok(detected_rate(
                emitted_photon_rate(&steady_state(&q)?, model),
                det,
            ))
        })
        .collect::<Result<Vec<f64>>>()?;
    apply_noise(&mut ys, noise)?;
    let mut s = Spectrum::new("pW", "cps", powers.to_vec(), ys)?
        .with_meta("kind", "saturation")
        .with_meta("model_hash", model_hash(model))
        .with_meta("scheme", scheme.name())
        .with_meta("scan_detuning_MHz", scan_detuning)
        .with_meta("p_sat_pW", drive.p_sat);
    if let Some(n) = noise {
        s = s
            .with_meta("seed", n.seed)
            .with_meta("integration_s", n.integration_s);
    }
    Ok(s)
}

/// Inhomogeneous offsets of the ensemble's spectral classes, MHz.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ClassSpec {
    /// `count` evenly spaced offsets over `[-span, span]`.
    Grid {
        count: usize,
        span: f64,
    },
    /// `count` uniform random offsets over `[-span, span]`.
    Uniform {
        count: usize,
        span: f64,
        seed: u64,
    },
    Explicit {
        offsets: Vec<f64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleConfig {
    pub classes: ClassSpec,
    /// Per-class weight; uniform when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<Vec<f64>>,
    #[serde(default = "unit")]
    pub optical_depth: f64,
}

fn unit() -> f64 {
    1.0
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        EnsembleConfig {
            classes: ClassSpec::Grid {
                count: 2001,
                span: 40.0,
            },
            weights: None,
            optical_depth: 1.0,
        }
    }
}

impl EnsembleConfig {
    pub fn grid(count: usize, span: f64) -> Self {
        EnsembleConfig {
            classes: ClassSpec::Grid { count, span },
            ..Default::default()
        }
    }

    pub fn offsets(&self) -> Result<Vec<f64>> {
        let offsets = match &self.classes {
            ClassSpec::Grid { count, span } | ClassSpec::Uniform { count, span, .. } => {
                if *count == 0 {
                    return Err(Error::Domain(
                        "ensemble must hold at least one class".into(),
                    ));
                }
                if !(*span > 0.0) {
                    return Err(Error::Domain(format!(
                        "ensemble span must be > 0 MHz, got {span}"
                    )));
                }
                match &self.classes {
                    ClassSpec::Uniform { seed, .. } => {
                        use rand::Rng;
                        let mut r = rng::stream(*seed, 0);
                        let mut v: Vec<f64> = (0..*count)
                            .map(|_| r.random_range(-*span..=*span))
                            .collect();
                        v.sort_by(f64::total_cmp);
                        v
                    }
                    _ if *count == 1 => vec![0.0],
                    _ => (0..*count)
                        .map(|k| -span + 2.0 * span * k as f64 / (*count - 1) as f64)
                        .collect(),
                }
            }
            ClassSpec::Explicit { offsets } => {
                if offsets.is_empty() {
                    return Err(Error::Domain(
                        "ensemble must hold at least one class".into(),
                    ));
                }
                offsets.clone()
            }
        };
        if let Some(w) = &self.weights {
            if w.len() != offsets.len() {
                return Err(Error::Structure(format!(
                    "{} weights for {} classes",
                    w.len(),
                    offsets.len()
                )));
            }
        }
        Ok(offsets)
    }

    fn weight(&self, k: usize) -> f64 {
        self.weights.as_ref().map_or(1.0, |w| w[k])
    }
}

/// Burn pulse: a single tone at `offset` MHz.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BurnSpec {
    pub offset: f64,
    /// pW
    pub power: f64,
    pub duration_ms: f64,
}

/// Weak probe scanned after the burn.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeSpec {
    pub scan: ScanRange,
    /// pW
    pub power: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HoleBurnSetup {
    pub ensemble: EnsembleConfig,
    pub burn: BurnSpec,
    pub probe: ProbeSpec,
    /// MHz
    pub laser_fwhm: f64,
    /// pW
    pub p_sat: f64,
}

impl Default for HoleBurnSetup {
    fn default() -> Self {
        HoleBurnSetup {
            ensemble: EnsembleConfig::grid(8001, 40.0),
            burn: BurnSpec {
                offset: 0.0,
                power: 0.01 * 98.0,
                duration_ms: 1.0,
            },
            probe: ProbeSpec {
                scan: ScanRange::new(-30.0, 30.0, 0.02),
                power: 1e-4 * 98.0,
            },
            laser_fwhm: 0.004,
            p_sat: 98.0,
        }
    }
}

/// Ground populations of each class after the burn and full relaxation of
/// the excited manifold, minus the unburnt `1/3`.
fn burnt_ground_change(
    model: &IonModel,
    setup: &HoleBurnSetup,
    offsets: &[f64],
) -> Result<Vec<[f64; GROUND_LEVELS]>> {
    let table = transition_table(model);
    let fwhm = model.gamma_hom + setup.laser_fwhm;
    let scheme = LevelScheme::SixLevel;
    let unit = 1.0 / (2.0 * model.tau_excited * 1e-6) * setup.burn.power / setup.p_sat;
    let duration_us = setup.burn.duration_ms * 1e3;
    offsets
        .par_iter()
        .map(|&delta| {
            let mut rates = [[0.0; EXCITED_LEVELS]; GROUND_LEVELS];
            let mut strongest: f64 = 0.0;
            for tr in table.iter() {
                let (g, e) = (tr.ground_index, tr.excited_index);
                let w = unit
                    * model.transition_strengths[g][e]
                    * lorentzian_unchecked(setup.burn.offset - (delta + tr.detuning_offset), fwhm);
                rates[g][e] = w;
                strongest = strongest.max(w);
            }
            if duration_us == 0.0 || strongest * duration_us * 1e-6 < 1e-16 {
                return Ok([0.0; GROUND_LEVELS]);
            }
            let q = build_rate_matrix(model, &rates, scheme)?;
            let p = Propagator::new(&q, duration_us).apply(&Populations::uniform_ground(scheme));
            let excited = p.excited_total();
            let ground = p.ground();
            Ok(std::array::from_fn(|g| {
                ground[g] + excited * model.ground_decay_branching[g] - 1.0 / GROUND_LEVELS as f64
            }))
        })
        .collect()
}

/// Probe absorption change after burning, relative to the unburnt absorption
/// at the burn frequency and scaled by the ensemble's optical depth.
///
/// Each class is burnt on the six-level model, its excited population is
/// returned to the ground manifold, and the probe absorption is the
/// population-weighted sum of the nine Lorentzian lines.
pub fn holeburn_simulate(model: &IonModel, setup: &HoleBurnSetup) -> Result<Spectrum> {
    model.validate()?;
    let offsets = setup.ensemble.offsets()?;
    if !(setup.burn.duration_ms >= 0.0) {
        return Err(Error::Domain(format!(
            "burn duration must be >= 0 ms, got {}",
            setup.burn.duration_ms
        )));
    }
    if !(setup.burn.power >= 0.0) || !(setup.probe.power >= 0.0) || !(setup.p_sat > 0.0) {
        return Err(Error::Domain(
            "burn/probe powers must be >= 0 and p_sat > 0".into(),
        ));
    }
    if !(setup.laser_fwhm >= 0.0) {
        return Err(Error::Domain(format!(
            "laser FWHM must be >= 0, got {}",
            setup.laser_fwhm
        )));
    }
    let mut warnings = Vec::new();
    if setup.probe.power > 0.1 * setup.burn.power {
        warnings.push(format!(
            "probe power {} pW is not much weaker than burn power {} pW; probe-induced pumping is ignored",
            setup.probe.power, setup.burn.power
        ));
    }

    let table = transition_table(model);
    let fwhm = model.gamma_hom + setup.laser_fwhm;
    let changes = burnt_ground_change(model, setup, &offsets)?;

    let lines: Vec<(f64, [f64; GROUND_LEVELS * EXCITED_LEVELS])> = offsets
        .iter()
        .enumerate()
        .filter(|(k, _)| changes[*k].iter().any(|d| *d != 0.0))
        .map(|(k, &delta)| {
            let w = setup.ensemble.weight(k);
            let mut amps = [0.0; GROUND_LEVELS * EXCITED_LEVELS];
            for (n, tr) in table.iter().enumerate() {
                amps[n] = w
                    * changes[k][tr.ground_index]
                    * model.transition_strengths[tr.ground_index][tr.excited_index];
            }
            (delta, amps)
        })
        .collect();

    let reference: f64 = offsets
        .iter()
        .enumerate()
        .map(|(k, &delta)| {
            setup.ensemble.weight(k)
                * table
                    .iter()
                    .map(|tr| {
                        model.transition_strengths[tr.ground_index][tr.excited_index]
                            * lorentzian_unchecked(
                                setup.burn.offset - delta - tr.detuning_offset,
                                fwhm,
                            )
                    })
                    .sum::<f64>()
                / GROUND_LEVELS as f64
        })
        .sum();
    if !(reference > 0.0) {
        return Err(Error::Domain(
            "ensemble has no absorption at the burn frequency".into(),
        ));
    }
    let scale = setup.ensemble.optical_depth / reference;

    let xs = setup.probe.scan.points()?;
    let ys: Vec<f64> = xs
        .par_iter()
        .map(|&nu| {
            let mut acc = 0.0;
            for (delta, amps) in &lines {
                for (tr, a) in table.iter().zip(amps) {
                    acc += a * lorentzian_unchecked(nu - delta - tr.detuning_offset, fwhm);
                }
            }
            acc * scale
        })
        .collect();

    let mut s = Spectrum::new("MHz", "rel", xs, ys)?
        .with_meta("kind", "holeburn")
        .with_meta("model_hash", model_hash(model))
        .with_meta("classes", offsets.len())
        .with_meta(
            "burn",
            format!(
                "{:+}MHz/{}pW/{}ms",
                setup.burn.offset, setup.burn.power, setup.burn.duration_ms
            ),
        )
        .with_meta("laser_fwhm_MHz", setup.laser_fwhm);
    for w in warnings {
        s = s.with_meta("warning", w);
    }
    Ok(s)
}

/// Nominal hole-burning comb around the burn frequency: side holes at the
/// excited splittings and anti-holes at the ground splittings, MHz.
pub fn hole_comb(model: &IonModel) -> (Vec<f64>, Vec<f64>) {
    let diffs = |v: &[f64; 3]| {
        let mut d = vec![v[1] - v[0], v[2] - v[1], v[2] - v[0]];
        d.sort_by(f64::total_cmp);
        d
    };
    (
        diffs(&model.excited_splittings),
        diffs(&model.ground_splittings),
    )
}

/// Total width of a burnt-and-probed hole, `2 (Γ_laser + Γ_hom)`, in the
/// units of the inputs (kHz by convention).
pub fn hole_width(gamma_laser: f64, gamma_hom: f64) -> Result<f64> {
    if !(gamma_laser >= 0.0) || !(gamma_hom >= 0.0) {
        return Err(Error::Domain("linewidths must be >= 0".into()));
    }
    Ok(2.0 * (gamma_laser + gamma_hom))
}

/// Laser linewidth implied by a measured hole width.
pub fn laser_width_from_hole(hole: f64, gamma_hom: f64) -> Result<f64> {
    if hole < 2.0 * gamma_hom {
        return Err(Error::Inconsistent(format!(
            "hole width {hole} is narrower than twice the homogeneous width {gamma_hom}"
        )));
    }
    Ok(hole / 2.0 - gamma_hom)
}

/// Homogeneous linewidth implied by a measured hole width.
pub fn hom_width_from_hole(hole: f64, gamma_laser: f64) -> Result<f64> {
    if hole < 2.0 * gamma_laser {
        return Err(Error::Inconsistent(format!(
            "hole width {hole} is narrower than twice the laser width {gamma_laser}"
        )));
    }
    Ok(hole / 2.0 - gamma_laser)
}
