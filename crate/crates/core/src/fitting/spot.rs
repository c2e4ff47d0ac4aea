//! Symmetric 2D Gaussian spot fits on laser-scanning images and
//! co-localization of several fitted emitters.

use nalgebra::{DMatrix, DVector};

use super::lm::{minimize, LmOptions, Residuals};
use super::{median, FitResult, Weighting};
use crate::error::{Error, FitFailure, Result};
use crate::rng;

pub const PARAMETERS: [&str; 5] = ["x", "y", "fwhm", "amplitude", "offset"];

const FOUR_LN2: f64 = 4.0 * std::f64::consts::LN_2;

/// Counts per pixel on a square grid. Pixel `(row, col)` is centred at
/// `x = col · pitch`, `y = row · pitch` (nm).
#[derive(Debug, Clone, PartialEq)]
pub struct ScanImage {
    pub rows: usize,
    pub cols: usize,
    /// Row-major.
    pub counts: Vec<f64>,
    pub pitch_nm: f64,
    /// Integration time per pixel, s.
    pub dwell_s: f64,
}

impl ScanImage {
    pub fn new(
        rows: usize,
        cols: usize,
        counts: Vec<f64>,
        pitch_nm: f64,
        dwell_s: f64,
    ) -> Result<Self> {
        if counts.len() != rows * cols {
            return Err(Error::Structure(format!(
                "{} pixels for a {rows}x{cols} image",
                counts.len()
            )));
        }
        if !(pitch_nm > 0.0) {
            return Err(Error::Domain(format!(
                "pitch must be > 0 nm, got {pitch_nm}"
            )));
        }
        if !(dwell_s > 0.0) {
            return Err(Error::Domain(format!(
                "dwell time must be > 0 s, got {dwell_s}"
            )));
        }
        if counts.iter().any(|c| !(*c >= 0.0 && c.is_finite())) {
            return Err(Error::Domain("pixel counts must be finite and >= 0".into()));
        }
        Ok(ScanImage {
            rows,
            cols,
            counts,
            pitch_nm,
            dwell_s,
        })
    }

    pub fn at(&self, row: usize, col: usize) -> f64 {
        self.counts[row * self.cols + col]
    }

    /// Plain-text matrix with `# pitch_nm=` and `# dwell_s=` headers.
    pub fn to_text(&self) -> String {
        let mut s = format!("# pitch_nm={}\n# dwell_s={}\n", self.pitch_nm, self.dwell_s);
        for r in 0..self.rows {
            let row: Vec<String> = (0..self.cols).map(|c| self.at(r, c).to_string()).collect();
            s.push_str(&row.join(" "));
            s.push('\n');
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut pitch = None;
        let mut dwell = None;
        let mut rows: Vec<Vec<f64>> = Vec::new();
        for (k, line) in text.lines().enumerate() {
            let line_no = k + 1;
            let t = line.trim();
            if t.is_empty() {
                continue;
            }
            if let Some(h) = t.strip_prefix('#') {
                if let Some((key, value)) = h.trim().split_once('=') {
                    let v: f64 = value.trim().parse().map_err(|_| Error::Parse {
                        line: line_no,
                        message: format!("bad number `{}`", value.trim()),
                    })?;
                    match key.trim() {
                        "pitch_nm" => pitch = Some(v),
                        "dwell_s" => dwell = Some(v),
                        _ => {}
                    }
                }
                continue;
            }
            let row = t
                .split(|c: char| c.is_whitespace() || c == ',')
                .filter(|s| !s.is_empty())
                .map(|s| {
                    s.parse::<f64>().map_err(|_| Error::Parse {
                        line: line_no,
                        message: format!("bad pixel value `{s}`"),
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            if let Some(first) = rows.first() {
                if first.len() != row.len() {
                    return Err(Error::Parse {
                        line: line_no,
                        message: format!("row has {} pixels, expected {}", row.len(), first.len()),
                    });
                }
            }
            rows.push(row);
        }
        let pitch = pitch.ok_or(Error::Parse {
            line: 1,
            message: "missing `# pitch_nm=` header".into(),
        })?;
        let cols = rows.first().map_or(0, Vec::len);
        let n = rows.len();
        ScanImage::new(n, cols, rows.concat(), pitch, dwell.unwrap_or(1.0))
    }
}

/// Ground truth for a synthetic spot. Rates are counts/s per pixel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpotSpec {
    pub x_nm: f64,
    pub y_nm: f64,
    pub fwhm_nm: f64,
    pub peak: f64,
    pub background: f64,
}

impl Default for SpotSpec {
    /// Single-ion image: 250 nm spot, 60 counts/s peak over 25 counts/s.
    fn default() -> Self {
        SpotSpec {
            x_nm: 250.0,
            y_nm: 250.0,
            fwhm_nm: 250.0,
            peak: 60.0,
            background: 25.0,
        }
    }
}

pub fn gaussian_model(x: f64, y: f64, p: &[f64]) -> f64 {
    let r2 = (x - p[0]).powi(2) + (y - p[1]).powi(2);
    p[3] * (-FOUR_LN2 * r2 / (p[2] * p[2])).exp() + p[4]
}

/// Renders `spots` on a `size × size` grid; Poisson counts when `seed` is
/// given, expected counts otherwise.
pub fn render_spot(
    spots: &[SpotSpec],
    size: usize,
    pitch_nm: f64,
    dwell_s: f64,
    seed: Option<u64>,
) -> Result<ScanImage> {
    let mut counts = Vec::with_capacity(size * size);
    let mut r = seed.map(|s| rng::stream(s, 0));
    for row in 0..size {
        for col in 0..size {
            let (x, y) = (col as f64 * pitch_nm, row as f64 * pitch_nm);
            let rate: f64 = spots
                .iter()
                .map(|s| gaussian_model(x, y, &[s.x_nm, s.y_nm, s.fwhm_nm, s.peak, 0.0]))
                .sum::<f64>()
                + spots.first().map_or(0.0, |s| s.background);
            let mean = rate * dwell_s;
            counts.push(match r.as_mut() {
                Some(g) => rng::poisson(g, mean) as f64,
                None => mean,
            });
        }
    }
    ScanImage::new(size, size, counts, pitch_nm, dwell_s)
}

struct Problem<'a> {
    img: &'a ScanImage,
    sw: Vec<f64>,
}

impl Residuals for Problem<'_> {
    fn residuals(&self, p: &[f64]) -> Result<DVector<f64>> {
        let img = self.img;
        Ok(DVector::from_fn(img.counts.len(), |i, _| {
            let (x, y) = (
                (i % img.cols) as f64 * img.pitch_nm,
                (i / img.cols) as f64 * img.pitch_nm,
            );
            self.sw[i] * (gaussian_model(x, y, p) - img.counts[i])
        }))
    }

    fn jacobian(&self, p: &[f64]) -> Result<DMatrix<f64>> {
        let img = self.img;
        let mut j = DMatrix::zeros(img.counts.len(), 5);
        for i in 0..img.counts.len() {
            let (x, y) = (
                (i % img.cols) as f64 * img.pitch_nm,
                (i / img.cols) as f64 * img.pitch_nm,
            );
            let (dx, dy) = (x - p[0], y - p[1]);
            let s2 = p[2] * p[2];
            let g = (-FOUR_LN2 * (dx * dx + dy * dy) / s2).exp();
            let w = self.sw[i];
            j[(i, 0)] = w * p[3] * g * 2.0 * FOUR_LN2 * dx / s2;
            j[(i, 1)] = w * p[3] * g * 2.0 * FOUR_LN2 * dy / s2;
            j[(i, 2)] = w * p[3] * g * 2.0 * FOUR_LN2 * (dx * dx + dy * dy) / (s2 * p[2]);
            j[(i, 3)] = w * g;
            j[(i, 4)] = w;
        }
        Ok(j)
    }
}

/// 3 × 3 box average, edges clamped.
fn smooth(img: &ScanImage, values: &[f64]) -> Vec<f64> {
    let (rows, cols) = (img.rows as isize, img.cols as isize);
    (0..values.len())
        .map(|i| {
            let (r, c) = ((i / img.cols) as isize, (i % img.cols) as isize);
            let mut sum = 0.0;
            let mut n = 0.0;
            for dr in -1..=1 {
                for dc in -1..=1 {
                    let (rr, cc) = (r + dr, c + dc);
                    if rr >= 0 && rr < rows && cc >= 0 && cc < cols {
                        sum += values[(rr * cols + cc) as usize];
                        n += 1.0;
                    }
                }
            }
            sum / n
        })
        .collect()
}

fn fail(reason: impl Into<String>, parameters: Vec<f64>, iterations: usize) -> Error {
    Error::Fit(FitFailure {
        reason: reason.into(),
        parameters,
        iterations,
    })
}

/// Fits one symmetric Gaussian spot; positions and width in nm.
///
/// Starts from the brightest pixel of the 3 × 3-smoothed image, the median
/// as offset and the area above half height for the width. Fails on flat
/// images, spots without significant amplitude and images whose residual
/// still holds a second spot.
pub fn fit_spot_2d(img: &ScanImage) -> Result<FitResult> {
    if img.rows < 5 || img.cols < 5 {
        return Err(Error::Domain(format!(
            "spot fit needs at least 5x5 pixels, got {}x{}",
            img.rows, img.cols
        )));
    }
    let sm = smooth(img, &img.counts);
    let offset = median(&img.counts);
    let k = (0..sm.len())
        .max_by(|&a, &b| sm[a].total_cmp(&sm[b]))
        .expect("non-empty");
    let amplitude = img.counts[k].max(sm[k]) - offset;
    if !(amplitude > 0.0) {
        return Err(fail("image is flat", vec![], 0));
    }
    let above = sm
        .iter()
        .filter(|v| **v >= offset + amplitude / 2.0)
        .count() as f64;
    let fwhm = (2.0 * (above / std::f64::consts::PI).sqrt()).max(1.0) * img.pitch_nm;
    let start = [
        (k % img.cols) as f64 * img.pitch_nm,
        (k / img.cols) as f64 * img.pitch_nm,
        fwhm,
        amplitude,
        offset,
    ];
    let problem = Problem {
        img,
        sw: Weighting::Poisson.sqrt_weights(&img.counts),
    };
    let out = minimize(&problem, &start, &LmOptions::default())?;
    let mut fit = FitResult::from_outcome(&PARAMETERS, &out, img.counts.len());
    fit.values[2] = fit.values[2].abs();
    let p = fit.values.clone();
    if !(p[3] > 0.0) || p[3] < 3.0 * fit.sigmas[3] {
        return Err(fail("no significant spot in the image", p, fit.iterations));
    }
    let (w, h) = (
        (img.cols - 1) as f64 * img.pitch_nm,
        (img.rows - 1) as f64 * img.pitch_nm,
    );
    if p[0] < 0.0 || p[0] > w || p[1] < 0.0 || p[1] > h {
        return Err(fail(
            "fitted spot centre lies outside the image",
            p,
            fit.iterations,
        ));
    }
    let residual: Vec<f64> = (0..img.counts.len())
        .map(|i| {
            let (x, y) = (
                (i % img.cols) as f64 * img.pitch_nm,
                (i / img.cols) as f64 * img.pitch_nm,
            );
            img.counts[i] - gaussian_model(x, y, &p)
        })
        .collect();
    let worst = smooth(img, &residual).into_iter().fold(f64::MIN, f64::max);
    if worst > 0.5 * p[3] {
        return Err(fail(
            format!(
                "residual holds a second spot ({worst:.3} against amplitude {:.3})",
                p[3]
            ),
            p,
            fit.iterations,
        ));
    }
    Ok(fit)
}

/// Fitted emitter positions and their pairwise distances, nm.
#[derive(Debug, Clone, PartialEq)]
pub struct CoLocalization {
    /// `(x, y, σx, σy)` per spot.
    pub positions: Vec<(f64, f64, f64, f64)>,
    /// `(i, j, distance, σ)` for every pair `i < j`.
    pub distances: Vec<(usize, usize, f64, f64)>,
}

pub fn colocalize(spots: &[FitResult]) -> Result<CoLocalization> {
    if spots.is_empty() {
        return Err(Error::Domain(
            "co-localization needs at least one spot".into(),
        ));
    }
    let positions = spots
        .iter()
        .map(|f| Ok((f.value("x")?, f.value("y")?, f.sigma("x")?, f.sigma("y")?)))
        .collect::<Result<Vec<_>>>()?;
    let mut distances = Vec::new();
    for i in 0..positions.len() {
        for j in i + 1..positions.len() {
            let (a, b) = (positions[i], positions[j]);
            let (dx, dy) = (b.0 - a.0, b.1 - a.1);
            let d = dx.hypot(dy);
            let (vx, vy) = (a.2 * a.2 + b.2 * b.2, a.3 * a.3 + b.3 * b.3);
            let sigma = if d > 0.0 {
                ((dx * dx * vx + dy * dy * vy) / (d * d)).sqrt()
            } else {
                (0.5 * (vx + vy)).sqrt()
            };
            distances.push((i, j, d, sigma));
        }
    }
    Ok(CoLocalization {
        positions,
        distances,
    })
}
