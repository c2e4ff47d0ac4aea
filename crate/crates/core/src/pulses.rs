//! Timed multi-tone pulse sequences: optical pumping into one ground level
//! and gated fluorescence readout with photon-counting statistics.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{
    build_rate_matrix, emission_vector, pump_rates, steady_state, DetectionModel, DriveConfig,
    LevelScheme, Populations, Propagator, RateMatrix,
};
use crate::error::{Error, Result, Violation};
use crate::levels::{IonModel, GROUND_LEVELS};
use crate::rng;

/// Delay between pump and readout, µs.
pub const DEFAULT_DELAY_US: f64 = 378.0;
/// Gated readout window, µs.
pub const DEFAULT_READOUT_US: f64 = 378.0;
/// Scan detuning at which pulse sequences park the tones: each tone sits on
/// its ground level's transition to the second excited level.
pub const DEFAULT_PARKING_MHZ: f64 = 2.9;
/// Readout tone power as a fraction of the pump power.
pub const READOUT_POWER_FRACTION: f64 = 0.25;
/// Per-tone pump power, pW, that brings ground level 1 to 90 % of the ground
/// population in 344 µs on [`pulse_reference_model`] with the default drive,
/// at the default parking detuning. Reproduced by [`calibrate_pump_power`].
pub const REFERENCE_PUMP_POWER: f64 = 6.1933;
/// Pump duration the reference power is calibrated to, µs.
pub const REFERENCE_PUMP_US: f64 = 344.0;

/// Canonical ion with the single-ion broadened linewidth of 3.3 MHz used for
/// state preparation.
pub fn pulse_reference_model() -> IonModel {
    IonModel {
        gamma_hom: 3.3,
        ..IonModel::default()
    }
}

/// One piecewise-constant interval of a sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Segment {
    pub duration_us: f64,
    /// Names of the tones switched on.
    #[serde(default)]
    pub tones: Vec<String>,
    /// Per-tone power override, pW; the drive's tone powers otherwise.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub power: Option<f64>,
    /// Photon counter gate.
    #[serde(default)]
    pub gate: bool,
}

impl Segment {
    pub fn new(duration_us: f64, tones: &[&str], power: Option<f64>, gate: bool) -> Self {
        Segment {
            duration_us,
            tones: tones.iter().map(|t| t.to_string()).collect(),
            power,
            gate,
        }
    }

    pub fn delay(duration_us: f64) -> Self {
        Segment::new(duration_us, &[], None, false)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PulseSequence {
    #[serde(rename = "segment")]
    pub segments: Vec<Segment>,
    pub cycles: usize,
    #[serde(default = "default_seed")]
    pub seed: u64,
    /// Scan detuning of tone f₂ during the whole sequence, MHz.
    #[serde(default = "default_parking")]
    pub scan_detuning: f64,
}

fn default_seed() -> u64 {
    rng::DEFAULT_SEED
}

fn default_parking() -> f64 {
    DEFAULT_PARKING_MHZ
}

impl PulseSequence {
    pub fn violations(&self, prefix: &str, drive: &DriveConfig) -> Vec<Violation> {
        let mut out = Vec::new();
        if self.segments.is_empty() {
            out.push(Violation::new(
                format!("{prefix}.segment"),
                "at least one segment is required",
            ));
        }
        if !self.segments.iter().any(|s| s.gate) {
            out.push(Violation::new(
                format!("{prefix}.segment"),
                "no segment opens the gate",
            ));
        }
        if self.cycles == 0 {
            out.push(Violation::new(format!("{prefix}.cycles"), "must be >= 1"));
        }
        if !self.scan_detuning.is_finite() {
            out.push(Violation::new(
                format!("{prefix}.scan_detuning"),
                "must be finite",
            ));
        }
        for (k, s) in self.segments.iter().enumerate() {
            if !(s.duration_us > 0.0 && s.duration_us.is_finite()) {
                out.push(Violation::new(
                    format!("{prefix}.segment.{k}.duration_us"),
                    format!("must be > 0 µs, got {}", s.duration_us),
                ));
            }
            if let Some(p) = s.power {
                if !(p >= 0.0 && p.is_finite()) {
                    out.push(Violation::new(
                        format!("{prefix}.segment.{k}.power"),
                        format!("must be >= 0 pW, got {p}"),
                    ));
                }
            }
            for t in &s.tones {
                if drive.tone_index(t).is_err() {
                    out.push(Violation::new(
                        format!("{prefix}.segment.{k}.tones"),
                        format!("unknown tone `{t}`"),
                    ));
                }
            }
        }
        out
    }

    /// Total duration of one cycle, µs.
    pub fn cycle_us(&self) -> f64 {
        self.segments.iter().map(|s| s.duration_us).sum()
    }

    /// Gate-open time per cycle, µs.
    pub fn gate_us(&self) -> f64 {
        self.segments
            .iter()
            .filter(|s| s.gate)
            .map(|s| s.duration_us)
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReadoutResult {
    /// Gated counts in each cycle.
    pub counts: Vec<u64>,
    /// Poisson mean of each cycle's counts.
    pub expected: Vec<f64>,
    pub total: u64,
    /// Total counts per second of gate-open time.
    pub mean_rate: f64,
    /// Populations at the end of each cycle.
    pub final_populations: Vec<Populations>,
}

fn segment_generator(
    model: &IonModel,
    drive: &DriveConfig,
    seg: &Segment,
    scan: f64,
    scheme: LevelScheme,
) -> Result<RateMatrix> {
    let names: Vec<&str> = seg.tones.iter().map(String::as_str).collect();
    let mut d = drive.with_active(&names)?;
    if let Some(p) = seg.power {
        for t in d.tones.iter_mut().filter(|t| t.active) {
            t.power = p;
        }
    }
    build_rate_matrix(model, &pump_rates(model, &d, scan), scheme)
}

/// Runs `seq.cycles` back-to-back cycles from uniform ground occupation.
///
/// Populations carry across segments and cycles. Each cycle's gated counts
/// are a Poisson draw whose mean is the detected photon integral over the
/// gate-open segments plus background.
pub fn run_sequence(
    model: &IonModel,
    drive: &DriveConfig,
    seq: &PulseSequence,
    det: &DetectionModel,
    scheme: LevelScheme,
) -> Result<ReadoutResult> {
    model.validate()?;
    drive.validate()?;
    let v = seq.violations("pulse", drive);
    if !v.is_empty() {
        return Err(Error::Structure(
            v.iter()
                .map(Violation::to_string)
                .collect::<Vec<_>>()
                .join("; "),
        ));
    }
    let c = emission_vector(model, scheme) * det.efficiency();
    let steps = seq
        .segments
        .iter()
        .map(|s| {
            let q = segment_generator(model, drive, s, seq.scan_detuning, scheme)?;
            let prop = if s.gate {
                Propagator::with_observable(&q, s.duration_us, &c)
            } else {
                Propagator::new(&q, s.duration_us)
            };
            Ok((prop, s.gate, s.duration_us))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut p = Populations::uniform_ground(scheme);
    let mut expected = Vec::with_capacity(seq.cycles);
    let mut final_populations = Vec::with_capacity(seq.cycles);
    for _ in 0..seq.cycles {
        let mut mean = 0.0;
        for (prop, gate, dur) in &steps {
            if *gate {
                mean += prop.integral(&p) + det.background * dur * 1e-6;
            }
            p = prop.apply(&p);
        }
        expected.push(mean);
        final_populations.push(p.clone());
    }

    let counts: Vec<u64> = expected
        .par_iter()
        .enumerate()
        .map(|(k, &m)| rng::poisson(&mut rng::stream(seq.seed, k as u64), m))
        .collect();
    let total = counts.iter().sum();
    let gate_s = seq.gate_us() * 1e-6 * seq.cycles as f64;
    Ok(ReadoutResult {
        counts,
        expected,
        total,
        mean_rate: total as f64 / gate_s,
        final_populations,
    })
}

/// Sequence timing and drive settings shared by state preparation and readout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PrepSettings {
    pub delay_us: f64,
    pub readout_us: f64,
    pub scan_detuning: f64,
    /// Readout tone power, pW; a quarter of the pump power when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub readout_power: Option<f64>,
    pub scheme: LevelScheme,
}

impl Default for PrepSettings {
    fn default() -> Self {
        PrepSettings {
            delay_us: DEFAULT_DELAY_US,
            readout_us: DEFAULT_READOUT_US,
            scan_detuning: DEFAULT_PARKING_MHZ,
            readout_power: None,
            scheme: LevelScheme::CascadeTrap,
        }
    }
}

/// Names of the tone addressing `target` and of the two pump tones.
fn tone_roles(
    model: &IonModel,
    drive: &DriveConfig,
    target: usize,
) -> Result<(String, Vec<String>)> {
    if target >= GROUND_LEVELS {
        return Err(Error::Domain(format!(
            "target level must be 0, 1 or 2, got {target}"
        )));
    }
    let readout = drive
        .tone_for_level(model, target)
        .ok_or_else(|| Error::Domain(format!("no tone addresses ground level {}", target + 1)))?;
    let pumps: Vec<String> = (0..GROUND_LEVELS)
        .filter(|&g| g != target)
        .map(|g| {
            drive
                .tone_for_level(model, g)
                .map(|t| drive.tones[t].name.clone())
                .ok_or_else(|| Error::Domain(format!("no tone addresses ground level {}", g + 1)))
        })
        .collect::<Result<_>>()?;
    Ok((drive.tones[readout].name.clone(), pumps))
}

/// Generator of the two-tone pump that empties every level except `target`.
pub fn pump_generator(
    model: &IonModel,
    drive: &DriveConfig,
    target: usize,
    pump_power: f64,
    settings: &PrepSettings,
) -> Result<RateMatrix> {
    let (_, pumps) = tone_roles(model, drive, target)?;
    let names: Vec<&str> = pumps.iter().map(String::as_str).collect();
    let seg = Segment::new(1.0, &names, Some(pump_power), false);
    segment_generator(model, drive, &seg, settings.scan_detuning, settings.scheme)
}

/// Share of the ground population in `target` after pumping for
/// `duration_us` from uniform ground occupation.
pub fn transfer_after(q: &RateMatrix, target: usize, duration_us: f64) -> f64 {
    let p0 = Populations::uniform_ground(q.scheme());
    if duration_us <= 0.0 {
        return p0.ground_fraction(target);
    }
    Propagator::new(q, duration_us)
        .apply(&p0)
        .ground_fraction(target)
}

/// Shortest pump duration reaching `goal`, µs.
///
/// Fails with [`Error::Unreachable`] when the pumped steady state holds less
/// than `goal` of the ground population in `target`.
pub fn pump_duration_for(q: &RateMatrix, target: usize, goal: f64) -> Result<f64> {
    const MIN_US: f64 = 1e-3;
    const TOL_US: f64 = 1e-4;
    if !(goal > 0.0 && goal < 1.0) {
        return Err(Error::Domain(format!(
            "transfer goal must lie in (0, 1), got {goal}"
        )));
    }
    if transfer_after(q, target, MIN_US) >= goal {
        return Ok(MIN_US);
    }
    let achievable = steady_state(q)?.ground_fraction(target);
    if achievable < goal {
        return Err(Error::Unreachable { goal, achievable });
    }
    let mut hi = 1.0;
    while transfer_after(q, target, hi) < goal {
        hi *= 2.0;
        if hi > 1e9 {
            return Err(Error::Unreachable { goal, achievable });
        }
    }
    let mut lo = MIN_US;
    while hi - lo > TOL_US * hi.max(1.0) {
        let mid = 0.5 * (lo + hi);
        if transfer_after(q, target, mid) >= goal {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

/// Pump / delay / gated single-tone readout sequence that prepares ground
/// level `target` (0-based) with at least `goal` of the ground population.
pub fn prepare_state(
    model: &IonModel,
    drive: &DriveConfig,
    target: usize,
    pump_power: f64,
    goal: f64,
    settings: &PrepSettings,
) -> Result<PulseSequence> {
    if !(pump_power > 0.0) {
        return Err(Error::Domain(format!(
            "pump power must be > 0 pW, got {pump_power}"
        )));
    }
    let q = pump_generator(model, drive, target, pump_power, settings)?;
    let duration = pump_duration_for(&q, target, goal)?;
    let (readout, _) = tone_roles(model, drive, target)?;
    prep_sequence(
        model, drive, target, &readout, pump_power, duration, settings, 1,
    )
}

#[allow(clippy::too_many_arguments)]
fn prep_sequence(
    model: &IonModel,
    drive: &DriveConfig,
    target: usize,
    readout_tone: &str,
    pump_power: f64,
    pump_us: f64,
    settings: &PrepSettings,
    cycles: usize,
) -> Result<PulseSequence> {
    let (_, pumps) = tone_roles(model, drive, target)?;
    let names: Vec<&str> = pumps.iter().map(String::as_str).collect();
    let readout_power = settings
        .readout_power
        .unwrap_or(pump_power * READOUT_POWER_FRACTION);
    Ok(PulseSequence {
        segments: vec![
            Segment::new(pump_us, &names, Some(pump_power), false),
            Segment::delay(settings.delay_us),
            Segment::new(
                settings.readout_us,
                &[readout_tone],
                Some(readout_power),
                true,
            ),
        ],
        cycles,
        seed: rng::DEFAULT_SEED,
        scan_detuning: settings.scan_detuning,
    })
}

/// Per-tone pump power at which preparing `target` to `goal` takes
/// `duration_us`.
pub fn calibrate_pump_power(
    model: &IonModel,
    drive: &DriveConfig,
    target: usize,
    goal: f64,
    duration_us: f64,
    settings: &PrepSettings,
) -> Result<f64> {
    if !(duration_us > 0.0) {
        return Err(Error::Domain(format!(
            "duration must be > 0 µs, got {duration_us}"
        )));
    }
    let time_at = |p: f64| -> Result<f64> {
        let q = pump_generator(model, drive, target, p, settings)?;
        match pump_duration_for(&q, target, goal) {
            Ok(t) => Ok(t),
            Err(Error::Unreachable { .. }) => Ok(f64::INFINITY),
            Err(e) => Err(e),
        }
    };
    // Pumping speeds up with power until the pump tones saturate; search the
    // rising branch in log power.
    let (mut lo, mut hi) = (1e-4 * drive.p_sat, 1e-4 * drive.p_sat);
    while time_at(hi)? > duration_us {
        lo = hi;
        hi *= 2.0;
        if hi > 1e4 * drive.p_sat {
            return Err(Error::Domain(format!(
                "no pump power reaches {goal} within {duration_us} µs"
            )));
        }
    }
    for _ in 0..100 {
        let mid = (lo * hi).sqrt();
        if time_at(mid)? > duration_us {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi / lo - 1.0 < 1e-9 {
            break;
        }
    }
    Ok(hi)
}

/// Counts of every (prepared level, readout tone) pair.
#[derive(Debug, Clone, PartialEq)]
pub struct ReadoutMatrix {
    /// `counts[prepared][readout]`
    pub counts: [[u64; GROUND_LEVELS]; GROUND_LEVELS],
    pub expected: [[f64; GROUND_LEVELS]; GROUND_LEVELS],
    pub pump_us: f64,
    pub cycles: usize,
}

impl ReadoutMatrix {
    pub fn sigma(&self, row: usize, col: usize) -> f64 {
        (self.counts[row][col] as f64).sqrt()
    }

    /// Significance of the diagonal cell exceeding the largest other cell of
    /// its row, in combined standard deviations.
    pub fn row_significance(&self, row: usize) -> f64 {
        let d = self.counts[row][row] as f64;
        let o = (0..GROUND_LEVELS)
            .filter(|&c| c != row)
            .map(|c| self.counts[row][c] as f64)
            .fold(0.0, f64::max);
        let s = (d + o).sqrt();
        if s == 0.0 {
            0.0
        } else {
            (d - o) / s
        }
    }

    /// `(diag − mean offdiag) / diag` of a row's expected counts.
    pub fn contrast(&self, row: usize) -> f64 {
        let d = self.expected[row][row];
        let off: f64 = (0..GROUND_LEVELS)
            .filter(|&c| c != row)
            .map(|c| self.expected[row][c])
            .sum::<f64>()
            / 2.0;
        (d - off) / d
    }
}

/// Prepares each ground level with a fixed-length pump and reads it out with
/// each single tone, `cycles` times per cell.
#[allow(clippy::too_many_arguments)]
pub fn readout_matrix(
    model: &IonModel,
    drive: &DriveConfig,
    pump_power: f64,
    pump_us: f64,
    det: &DetectionModel,
    cycles: usize,
    seed: u64,
    settings: &PrepSettings,
) -> Result<ReadoutMatrix> {
    if cycles == 0 {
        return Err(Error::Domain("cycles must be >= 1".into()));
    }
    if !(pump_power > 0.0) || !(pump_us > 0.0) {
        return Err(Error::Domain("pump power and duration must be > 0".into()));
    }
    let mut counts = [[0; GROUND_LEVELS]; GROUND_LEVELS];
    let mut expected = [[0.0; GROUND_LEVELS]; GROUND_LEVELS];
    for row in 0..GROUND_LEVELS {
        for col in 0..GROUND_LEVELS {
            let (readout, _) = tone_roles(model, drive, col)?;
            let mut seq = prep_sequence(
                model, drive, row, &readout, pump_power, pump_us, settings, cycles,
            )?;
            seq.seed = rng::derive_seed(seed, (row * GROUND_LEVELS + col) as u64);
            let r = run_sequence(model, drive, &seq, det, settings.scheme)?;
            counts[row][col] = r.total;
            expected[row][col] = r.expected.iter().sum();
        }
    }
    Ok(ReadoutMatrix {
        counts,
        expected,
        pump_us,
        cycles,
    })
}
