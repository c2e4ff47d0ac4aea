//! Task execution. Every runner computes all of its outputs in memory and
//! returns them; nothing touches the disk until the whole task succeeded.

use std::fmt::Write as _;
use std::path::Path;

use ionspec::config::{
    FitKind, FitTask, LocalizeTask, RunConfig, SaturationTask, SpectrumTask, Task, WeightingKind,
};
use ionspec::dynamics::DriveConfig;
use ionspec::fitting::{
    colocalize, fit_hyperfine_joint, fit_hyperfine_multipeak, fit_lorentzian, fit_saturation,
    fit_spot_2d, lorentzian_model, saturation_model, FitResult, HyperfineForward, ScanImage,
    Weighting,
};
use ionspec::io::{readout_to_csv, spectrum_from_csv, spectrum_to_csv, write_atomic};
use ionspec::pulses::{run_sequence, PulseSequence};
use ionspec::spectra::{
    excitation_spectrum, hole_comb, holeburn_simulate, saturation_curve, HoleBurnSetup, NoiseSpec,
    Spectrum,
};

use crate::error::{parse_file, CliError, CliResult};
use crate::svg::{Plot, Series};

/// Files produced by a task plus its one-line summary.
#[derive(Debug, Default)]
pub struct Outcome {
    pub files: Vec<(String, String)>,
    pub summary: String,
}

impl Outcome {
    pub fn new(summary: impl Into<String>) -> Self {
        Outcome {
            files: Vec::new(),
            summary: summary.into(),
        }
    }

    pub fn file(mut self, name: impl Into<String>, contents: String) -> Self {
        self.files.push((name.into(), contents));
        self
    }

    /// Adds `<stem>.svg` when plots were requested.
    pub fn plot(self, enabled: bool, stem: &str, plot: impl FnOnce() -> Plot) -> Self {
        if enabled {
            let svg = plot().render();
            self.file(format!("{stem}.svg"), svg)
        } else {
            self
        }
    }

    /// Creates `dir` and writes every file atomically.
    pub fn write(&self, dir: &Path) -> CliResult<()> {
        std::fs::create_dir_all(dir).map_err(|e| CliError::in_file(dir, e.into()))?;
        for (name, contents) in &self.files {
            let path = dir.join(name);
            write_atomic(&path, contents).map_err(|e| CliError::in_file(&path, e))?;
        }
        Ok(())
    }
}

fn noise(seed: u64, integration_s: Option<f64>) -> Option<NoiseSpec> {
    integration_s.map(|t| NoiseSpec {
        seed,
        integration_s: t,
    })
}

fn weighting(w: WeightingKind) -> Weighting {
    match w {
        WeightingKind::Poisson => Weighting::Poisson,
        WeightingKind::Uniform => Weighting::Uniform,
    }
}

/// Positions of the `n` strongest peaks, in ascending detuning.
pub fn top_peaks(s: &Spectrum, n: usize) -> Vec<f64> {
    let mut x: Vec<f64> = s.peaks().into_iter().take(n).map(|k| s.x[k]).collect();
    x.sort_by(f64::total_cmp);
    x
}

fn join_mhz(xs: &[f64]) -> String {
    xs.iter()
        .map(|x| format!("{x:+.2}"))
        .collect::<Vec<_>>()
        .join(" ")
}

pub fn spectrum_plot(title: &str, s: &Spectrum) -> Plot {
    Plot::new(
        title,
        &format!("detuning ({})", s.x_unit),
        &format!("signal ({})", s.value_unit),
    )
    .with(Series::line(title, &s.x, &s.y))
}

pub fn spectrum(cfg: &RunConfig, task: &SpectrumTask, svg: bool) -> CliResult<Outcome> {
    let drive = if task.active.is_empty() {
        cfg.drive.clone()
    } else {
        let names: Vec<&str> = task.active.iter().map(String::as_str).collect();
        cfg.drive.with_active(&names)?
    };
    let s = excitation_spectrum(
        &cfg.ion,
        &drive,
        &task.scan,
        cfg.scheme(),
        &cfg.detection,
        noise(cfg.seed, task.integration_s),
    )?;
    let k = s.argmax().expect("non-empty scan");
    let summary = format!(
        "spectrum: {} points, max {:.4} cps at {:+.3} MHz, peaks at {} MHz",
        s.len(),
        s.y[k],
        s.x[k],
        join_mhz(&top_peaks(&s, 3))
    );
    Ok(Outcome::new(summary)
        .file("spectrum.csv", spectrum_to_csv(&s))
        .plot(svg, "spectrum", || spectrum_plot("excitation spectrum", &s)))
}

/// Annotates a hole-burning spectrum with the nearest dip to every nominal
/// side-hole position and the nearest peak to every anti-hole position.
pub fn label_hole_comb(mut s: Spectrum, cfg: &RunConfig, burn_offset: f64) -> Spectrum {
    let (side, anti) = hole_comb(&cfg.ion);
    let step = s.x.get(1).map_or(0.0, |b| b - s.x[0]);
    let window = (0.5f64).max(3.0 * step);
    let locate = |s: &Spectrum, pos: f64, dip: bool| {
        let idx = if dip { s.dips() } else { s.peaks() };
        idx.into_iter().find(|&k| (s.x[k] - pos).abs() <= window)
    };
    let mut labels = Vec::new();
    for (kind, list, dip) in [("side_hole", &side, true), ("anti_hole", &anti, false)] {
        for d in list.iter() {
            for sign in [-1.0, 1.0] {
                let nominal = burn_offset + sign * d;
                let value = match locate(&s, nominal, dip) {
                    Some(k) => format!(
                        "{:+.3} MHz (nominal {nominal:+.3}, change {:.4e})",
                        s.x[k], s.y[k]
                    ),
                    None => format!("not resolved (nominal {nominal:+.3})"),
                };
                labels.push((kind, value));
            }
        }
    }
    for (k, v) in labels {
        s = s.with_meta(k, v);
    }
    s
}

pub fn holeburn(cfg: &RunConfig, setup: &HoleBurnSetup, svg: bool) -> CliResult<Outcome> {
    let s = holeburn_simulate(&cfg.ion, setup)?;
    let s = label_hole_comb(s, cfg, setup.burn.offset);
    let k = s.argmin().expect("non-empty probe scan");
    let resolved = s
        .metadata
        .iter()
        .filter(|(k, v)| k.ends_with("_hole") && !v.starts_with("not"))
        .count();
    let summary = format!(
        "holeburn: {} points, deepest change {:.4e} at {:+.3} MHz, {resolved} comb features labelled",
        s.len(),
        s.y[k],
        s.x[k]
    );
    Ok(Outcome::new(summary)
        .file("holeburn.csv", spectrum_to_csv(&s))
        .plot(svg, "holeburn", || spectrum_plot("hole burning", &s)))
}

pub fn saturation(cfg: &RunConfig, task: &SaturationTask, svg: bool) -> CliResult<Outcome> {
    let s = saturation_curve(
        &cfg.ion,
        &cfg.drive,
        &task.powers,
        task.scan_detuning,
        cfg.scheme(),
        &cfg.detection,
        noise(cfg.seed, task.integration_s),
    )?;
    let max = s.y.iter().cloned().fold(f64::MIN, f64::max);
    let mut summary = format!("saturation: {} powers, max {max:.4} cps", s.len());
    let mut out = Outcome::default().file("saturation.csv", spectrum_to_csv(&s));
    match fit_saturation(&s, Weighting::Poisson) {
        Ok(f) => {
            write!(
                summary,
                ", fit s_max {:.4} ± {:.2e} cps, p_sat {:.4} ± {:.2e} pW",
                f.values[0], f.sigmas[0], f.values[1], f.sigmas[1]
            )
            .unwrap();
            out = out.file("saturation_fit.csv", fit_csv(&f));
        }
        Err(e) => write!(summary, ", fit skipped ({e})").unwrap(),
    }
    out.summary = summary;
    Ok(out.plot(svg, "saturation", || {
        Plot::new("saturation", "power (pW)", "signal (cps)")
            .with(Series::points("data", &s.x, &s.y))
    }))
}

pub fn pulse(cfg: &RunConfig, seq: &PulseSequence, svg: bool) -> CliResult<Outcome> {
    let r = run_sequence(&cfg.ion, &cfg.drive, seq, &cfg.detection, cfg.scheme())?;
    let summary = format!(
        "pulse: {} cycles of {:.1} µs, {} counts, {:.4} per cycle, {:.4} cps in gate",
        r.counts.len(),
        seq.cycle_us(),
        r.total,
        r.total as f64 / r.counts.len() as f64,
        r.mean_rate
    );
    Ok(Outcome::new(summary)
        .file("readout.csv", readout_to_csv(&r))
        .plot(svg, "readout", || {
            let x: Vec<f64> = (0..r.counts.len()).map(|c| c as f64).collect();
            let y: Vec<f64> = r.counts.iter().map(|c| *c as f64).collect();
            Plot::new("gated counts per cycle", "cycle", "counts")
                .with(Series::points("counts", &x, &y))
        }))
}

pub fn fit_csv(f: &FitResult) -> String {
    format!("{}\n{}\n", f.csv_header(), f.csv_row())
}

fn fit_line(f: &FitResult) -> String {
    let mut parts: Vec<String> = f
        .names
        .iter()
        .zip(&f.values)
        .zip(&f.sigmas)
        .map(|((n, v), e)| format!("{n} {v:.6} ± {e:.3e}"))
        .collect();
    parts.extend(f.extras.iter().map(|(n, v)| format!("{n} {v:.6}")));
    parts.push(format!("reduced_chi2 {:.4}", f.reduced_chi2));
    parts.join(", ")
}

/// Drive that reproduces a spectrum's recorded tone set: tones listed as
/// `name@…` in the `tones` metadata are active unless marked `(off)`.
pub fn drive_for(s: &Spectrum, base: &DriveConfig) -> ionspec::Result<DriveConfig> {
    let Some(tones) = s.meta("tones") else {
        return Ok(base.clone());
    };
    let active: Vec<&str> = tones
        .split_whitespace()
        .filter(|t| !t.ends_with("(off)"))
        .filter_map(|t| t.split('@').next())
        .collect();
    base.with_active(&active)
}

fn curve_csv(x: &[f64], data: &[f64], model: &[f64]) -> String {
    let mut out = String::from("x,data,model\n");
    for ((x, d), m) in x.iter().zip(data).zip(model) {
        writeln!(out, "{x},{d},{m}").unwrap();
    }
    out
}

pub fn fit(cfg: &RunConfig, task: &FitTask, svg: bool) -> CliResult<Outcome> {
    let input = Path::new(&task.input);
    let w = weighting(task.weighting);
    let (f, curve) = match task.model {
        FitKind::Spot => {
            let img = parse_file(input, ScanImage::from_text)?;
            (fit_spot_2d(&img)?, None)
        }
        kind => {
            let data = parse_file(input, spectrum_from_csv)?;
            match kind {
                FitKind::Lorentzian => {
                    let f = fit_lorentzian(&data, None, w)?;
                    let m: Vec<f64> = data
                        .x
                        .iter()
                        .map(|x| lorentzian_model(*x, &f.values))
                        .collect();
                    (f, Some((data, m)))
                }
                FitKind::Saturation => {
                    let f = fit_saturation(&data, w)?;
                    let m: Vec<f64> = data
                        .x
                        .iter()
                        .map(|x| saturation_model(*x, &f.values))
                        .collect();
                    (f, Some((data, m)))
                }
                _ if task.joint_with.is_empty() => {
                    let drive = drive_for(&data, &cfg.drive)?;
                    let f = fit_hyperfine_multipeak(
                        &data,
                        &cfg.ion,
                        &drive,
                        cfg.scheme(),
                        w,
                        task.init_width,
                    )?;
                    let m = HyperfineForward::new(&cfg.ion, &drive, cfg.scheme())
                        .curve(&data.x, &f.values)?;
                    (f, Some((data, m)))
                }
                _ => {
                    let mut sets = vec![(drive_for(&data, &cfg.drive)?, data)];
                    for p in &task.joint_with {
                        let path = Path::new(p);
                        let s = parse_file(path, spectrum_from_csv)?;
                        let d =
                            drive_for(&s, &cfg.drive).map_err(|e| CliError::in_file(path, e))?;
                        sets.push((d, s));
                    }
                    let pairs: Vec<(Spectrum, DriveConfig)> =
                        sets.into_iter().map(|(d, s)| (s, d)).collect();
                    (
                        fit_hyperfine_joint(&pairs, &cfg.ion, cfg.scheme(), w, task.init_width)?,
                        None,
                    )
                }
            }
        }
    };
    let summary = format!("fit {}: {}", model_name(task.model), fit_line(&f));
    let mut out = Outcome::new(summary).file("fit.csv", fit_csv(&f));
    if let Some((data, m)) = curve {
        out = out
            .file("fit_curve.csv", curve_csv(&data.x, &data.y, &m))
            .plot(svg, "fit", || {
                Plot::new(
                    &format!("{} fit", model_name(task.model)),
                    &data.x_unit,
                    &data.value_unit,
                )
                .with(Series::points("data", &data.x, &data.y))
                .with(Series::line("fit", &data.x, &m))
            });
    }
    Ok(out)
}

fn model_name(k: FitKind) -> &'static str {
    match k {
        FitKind::Lorentzian => "lorentzian",
        FitKind::Hyperfine => "hyperfine",
        FitKind::Saturation => "saturation",
        FitKind::Spot => "spot",
    }
}

pub fn localize(task: &LocalizeTask, svg: bool) -> CliResult<Outcome> {
    let fits = task
        .inputs
        .iter()
        .map(|p| {
            let path = Path::new(p);
            let img = parse_file(path, ScanImage::from_text)?;
            fit_spot_2d(&img).map_err(|e| CliError::in_file(path, e))
        })
        .collect::<CliResult<Vec<_>>>()?;
    let co = colocalize(&fits)?;
    let mut positions = String::from("emitter,x_nm,y_nm,sigma_x_nm,sigma_y_nm\n");
    for (k, (x, y, sx, sy)) in co.positions.iter().enumerate() {
        writeln!(positions, "{},{x},{y},{sx},{sy}", k + 1).unwrap();
    }
    let mut distances = String::from("emitter_a,emitter_b,distance_nm,sigma_nm\n");
    for (i, j, d, s) in &co.distances {
        writeln!(distances, "{},{},{d},{s}", i + 1, j + 1).unwrap();
    }
    let mut summary = format!("localize: {} emitters", co.positions.len());
    for (k, (x, y, sx, sy)) in co.positions.iter().enumerate() {
        write!(
            summary,
            ", #{} ({x:.1} ± {sx:.1}, {y:.1} ± {sy:.1}) nm",
            k + 1
        )
        .unwrap();
    }
    for (i, j, d, s) in &co.distances {
        write!(summary, ", d{}{} {d:.1} ± {s:.1} nm", i + 1, j + 1).unwrap();
    }
    Ok(Outcome::new(summary)
        .file("localize.csv", positions)
        .file("distances.csv", distances)
        .plot(svg, "localize", || {
            let x: Vec<f64> = co.positions.iter().map(|p| p.0).collect();
            let y: Vec<f64> = co.positions.iter().map(|p| p.1).collect();
            Plot::new("emitter positions", "x (nm)", "y (nm)")
                .with(Series::points("emitters", &x, &y))
        }))
}

/// Runs the configured task.
pub fn task(cfg: &RunConfig, svg: bool) -> CliResult<Outcome> {
    match &cfg.task {
        Some(Task::Spectrum(t)) => spectrum(cfg, t, svg),
        Some(Task::Holeburn(h)) => holeburn(cfg, h, svg),
        Some(Task::Saturation(t)) => saturation(cfg, t, svg),
        Some(Task::Pulse(p)) => pulse(cfg, p, svg),
        Some(Task::Fit(f)) => fit(cfg, f, svg),
        Some(Task::Localize(l)) => localize(l, svg),
        None => Err(ionspec::Error::Invalid(vec![ionspec::Violation::new(
            "task",
            "no task configured",
        )])
        .into()),
    }
}
