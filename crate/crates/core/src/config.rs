//! Run configuration: ion, drive and detection blocks plus one task block,
//! read from TOML with dotted-path overrides.

use serde::{Deserialize, Serialize};

use crate::dynamics::{DetectionModel, DriveConfig, LevelScheme};
use crate::error::{ensure, Error, Result, Violation};
use crate::levels::IonModel;
use crate::pulses::{PulseSequence, Segment, REFERENCE_PUMP_POWER, REFERENCE_PUMP_US};
use crate::rng::DEFAULT_SEED;
use crate::spectra::{HoleBurnSetup, ScanRange};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpectrumTask {
    pub scan: ScanRange,
    /// Names of the tones switched on; all tones when empty.
    pub active: Vec<String>,
    /// Photon-counting time per point, s; noiseless when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub integration_s: Option<f64>,
}

impl Default for SpectrumTask {
    fn default() -> Self {
        SpectrumTask {
            scan: ScanRange::new(-5.0, 15.0, 0.02),
            active: Vec::new(),
            integration_s: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SaturationTask {
    /// Per-tone powers, pW.
    pub powers: Vec<f64>,
    pub scan_detuning: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub integration_s: Option<f64>,
}

impl Default for SaturationTask {
    fn default() -> Self {
        SaturationTask {
            powers: vec![
                0.0, 2.0, 5.0, 10.0, 20.0, 35.0, 50.0, 75.0, 100.0, 150.0, 250.0, 400.0,
            ],
            scan_detuning: 0.0,
            integration_s: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitKind {
    Lorentzian,
    Hyperfine,
    Saturation,
    Spot,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightingKind {
    #[default]
    Poisson,
    Uniform,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitTask {
    pub model: FitKind,
    /// Data file: spectrum CSV or scan image.
    pub input: String,
    /// Further spectra fitted jointly with `input` (hyperfine only).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub joint_with: Vec<String>,
    #[serde(default)]
    pub weighting: WeightingKind,
    /// Starting transition width for hyperfine fits, MHz.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub init_width: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LocalizeTask {
    /// One scan image per emitter.
    pub inputs: Vec<String>,
}

/// The single task a run performs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Task {
    Spectrum(SpectrumTask),
    Holeburn(HoleBurnSetup),
    Saturation(SaturationTask),
    Pulse(PulseSequence),
    Fit(FitTask),
    Localize(LocalizeTask),
}

impl Task {
    pub fn kind(&self) -> &'static str {
        match self {
            Task::Spectrum(_) => "spectrum",
            Task::Holeburn(_) => "holeburn",
            Task::Saturation(_) => "saturation",
            Task::Pulse(_) => "pulse",
            Task::Fit(_) => "fit",
            Task::Localize(_) => "localize",
        }
    }

    /// Default task of the given kind.
    pub fn default_for(kind: &str) -> Result<Task> {
        Ok(match kind {
            "spectrum" => Task::Spectrum(SpectrumTask::default()),
            "holeburn" => Task::Holeburn(HoleBurnSetup::default()),
            "saturation" => Task::Saturation(SaturationTask::default()),
            "pulse" => Task::Pulse(default_pulse_sequence()),
            "localize" => Task::Localize(LocalizeTask::default()),
            other => return Err(Error::Domain(format!("no default task of kind `{other}`"))),
        })
    }
}

/// Prepare ground level 1 with f₁ + f₂, wait, read out with f₃.
pub fn default_pulse_sequence() -> PulseSequence {
    PulseSequence {
        segments: vec![
            Segment::new(
                REFERENCE_PUMP_US,
                &["f1", "f2"],
                Some(REFERENCE_PUMP_POWER),
                false,
            ),
            Segment::delay(crate::pulses::DEFAULT_DELAY_US),
            Segment::new(
                crate::pulses::DEFAULT_READOUT_US,
                &["f3"],
                Some(REFERENCE_PUMP_POWER * crate::pulses::READOUT_POWER_FRACTION),
                true,
            ),
        ],
        cycles: 1000,
        seed: DEFAULT_SEED,
        scan_detuning: crate::pulses::DEFAULT_PARKING_MHZ,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// Output directory.
    pub out: String,
    /// Level scheme; follows the ion model when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scheme: Option<LevelScheme>,
    pub ion: IonModel,
    pub drive: DriveConfig,
    pub detection: DetectionModel,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub task: Option<Task>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: DEFAULT_SEED,
            out: "out".into(),
            scheme: None,
            ion: IonModel::default(),
            drive: DriveConfig::default(),
            detection: DetectionModel::default(),
            task: None,
        }
    }
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

fn parse_error(text: &str, e: toml::de::Error) -> Error {
    let line = e.span().map_or(0, |s| line_of(text, s.start));
    Error::Parse {
        line,
        message: e.message().to_string(),
    }
}

/// A `key.path=value` override; the value is read as a TOML literal, or
/// as a bare string when it is not one.
#[derive(Debug, Clone, PartialEq)]
pub struct Override {
    pub path: Vec<String>,
    pub value: toml::Value,
}

impl std::str::FromStr for Override {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (key, raw) = s
            .split_once('=')
            .ok_or_else(|| Error::Domain(format!("override `{s}` is not of the form key=value")))?;
        let key = key.trim().trim_start_matches("--");
        if key.is_empty() || key.split('.').any(str::is_empty) {
            return Err(Error::Domain(format!("bad override key `{key}`")));
        }
        let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
            .ok()
            .and_then(|mut t| t.remove("v"))
            .unwrap_or_else(|| toml::Value::String(raw.to_string()));
        Ok(Override {
            path: key.split('.').map(str::to_string).collect(),
            value,
        })
    }
}

fn set_path(
    target: &mut toml::Value,
    defaults: Option<&toml::Value>,
    path: &[String],
    value: toml::Value,
    full: &str,
) -> Result<()> {
    let bad = |msg: String| Error::Invalid(vec![Violation::new(full, msg)]);
    let (head, rest) = path.split_first().expect("non-empty path");
    let child_default = defaults.and_then(|d| match d {
        toml::Value::Table(t) => t.get(head),
        toml::Value::Array(a) => head.parse::<usize>().ok().and_then(|i| a.get(i)),
        _ => None,
    });
    let slot = match target {
        toml::Value::Table(t) => {
            if rest.is_empty() {
                t.insert(head.clone(), value);
                return Ok(());
            }
            t.entry(head.clone()).or_insert_with(|| {
                child_default
                    .cloned()
                    .unwrap_or_else(|| toml::Value::Table(toml::Table::new()))
            })
        }
        toml::Value::Array(a) => {
            let i: usize = head
                .parse()
                .map_err(|_| bad(format!("`{head}` is not an array index")))?;
            let len = a.len();
            let slot = a
                .get_mut(i)
                .ok_or_else(|| bad(format!("index {i} out of range for an array of {len}")))?;
            if rest.is_empty() {
                *slot = value;
                return Ok(());
            }
            slot
        }
        _ => return Err(bad(format!("`{head}` does not address a table or array"))),
    };
    set_path(slot, child_default, rest, value, full)
}

impl RunConfig {
    /// Parses `text` (empty for all defaults), fills a default task of
    /// `task_kind` when the file has none, then applies `overrides`.
    pub fn load(text: &str, task_kind: Option<&str>, overrides: &[Override]) -> Result<Self> {
        let parsed: RunConfig = toml::from_str(text).map_err(|e| parse_error(text, e))?;
        let mut defaults = RunConfig::default();
        if let Some(kind) = task_kind {
            match &parsed.task {
                Some(t) if t.kind() != kind => {
                    return Err(Error::Invalid(vec![Violation::new(
                        "task.kind",
                        format!(
                            "config holds a `{}` task but `{kind}` was requested",
                            t.kind()
                        ),
                    )]))
                }
                Some(_) => {}
                None => defaults.task = Task::default_for(kind).ok(),
            }
        }
        let mut value: toml::Value = toml::from_str(text).map_err(|e| parse_error(text, e))?;
        let default_value =
            toml::Value::try_from(&defaults).map_err(|e| Error::Structure(e.to_string()))?;
        if parsed.task.is_none() {
            if let (toml::Value::Table(t), Some(task)) = (&mut value, default_value.get("task")) {
                t.insert("task".into(), task.clone());
            }
        }
        for o in overrides {
            let full = o.path.join(".");
            set_path(
                &mut value,
                Some(&default_value),
                &o.path,
                o.value.clone(),
                &full,
            )?;
        }
        value.try_into().map_err(|e: toml::de::Error| {
            Error::Invalid(vec![Violation::new(
                overrides
                    .iter()
                    .map(|o| o.path.join("."))
                    .collect::<Vec<_>>()
                    .join(", "),
                e.message().to_string(),
            )])
        })
    }

    pub fn scheme(&self) -> LevelScheme {
        self.scheme
            .unwrap_or_else(|| LevelScheme::for_model(&self.ion))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Every invariant violation in the configuration.
    pub fn violations(&self) -> Vec<Violation> {
        let mut v = self.ion.violations("ion");
        v.extend(self.drive.violations("drive"));
        v.extend(self.detection.violations("detection"));
        let seeds = [
            ("seed", Some(self.seed)),
            (
                "task.seed",
                match &self.task {
                    Some(Task::Pulse(p)) => Some(p.seed),
                    _ => None,
                },
            ),
        ];
        for (key, seed) in seeds {
            if seed.is_some_and(|s| s > crate::rng::MAX_SEED) {
                v.push(Violation::new(
                    key,
                    format!("seed must be <= {}", crate::rng::MAX_SEED),
                ));
            }
        }
        if self.scheme == Some(LevelScheme::CascadeTrap) && self.ion.tau_trap.is_none() {
            v.push(Violation::new("scheme", "cascade_trap needs ion.tau_trap"));
        }
        match &self.task {
            Some(Task::Spectrum(t)) => {
                scan_violations(&t.scan, "task.scan", &mut v);
                for name in &t.active {
                    if self.drive.tone_index(name).is_err() {
                        v.push(Violation::new(
                            "task.active",
                            format!("unknown tone `{name}`"),
                        ));
                    }
                }
                integration_violations(t.integration_s, &mut v);
            }
            Some(Task::Saturation(t)) => {
                if t.powers.len() < 2 {
                    v.push(Violation::new(
                        "task.powers",
                        "at least two powers are required",
                    ));
                }
                if t.powers.iter().any(|p| !(*p >= 0.0)) {
                    v.push(Violation::new("task.powers", "powers must be >= 0 pW"));
                }
                if t.powers.windows(2).any(|w| w[1] <= w[0]) {
                    v.push(Violation::new(
                        "task.powers",
                        "powers must be strictly increasing",
                    ));
                }
                integration_violations(t.integration_s, &mut v);
            }
            Some(Task::Holeburn(h)) => {
                scan_violations(&h.probe.scan, "task.probe.scan", &mut v);
                if let Err(e) = h.ensemble.offsets() {
                    v.push(Violation::new("task.ensemble", e.to_string()));
                }
                if !(h.burn.duration_ms > 0.0) {
                    v.push(Violation::new(
                        "task.burn.duration_ms",
                        format!("must be > 0 ms, got {}", h.burn.duration_ms),
                    ));
                }
                for (key, p) in [
                    ("task.burn.power", h.burn.power),
                    ("task.probe.power", h.probe.power),
                ] {
                    if !(p >= 0.0) {
                        v.push(Violation::new(key, format!("must be >= 0 pW, got {p}")));
                    }
                }
                if !(h.p_sat > 0.0) {
                    v.push(Violation::new(
                        "task.p_sat",
                        format!("must be > 0 pW, got {}", h.p_sat),
                    ));
                }
                if !(h.laser_fwhm >= 0.0) {
                    v.push(Violation::new(
                        "task.laser_fwhm",
                        format!("must be >= 0 MHz, got {}", h.laser_fwhm),
                    ));
                }
            }
            Some(Task::Pulse(p)) => v.extend(p.violations("task", &self.drive)),
            Some(Task::Fit(f)) => {
                if f.input.is_empty() {
                    v.push(Violation::new("task.input", "no input file given"));
                }
                if !f.joint_with.is_empty() && f.model != FitKind::Hyperfine {
                    v.push(Violation::new(
                        "task.joint_with",
                        "joint fits are only defined for the hyperfine model",
                    ));
                }
            }
            Some(Task::Localize(l)) if l.inputs.is_empty() => {
                v.push(Violation::new("task.inputs", "no input images given"));
            }
            Some(Task::Localize(_)) => {}
            None => {}
        }
        v
    }

    pub fn validate(&self) -> Result<()> {
        ensure(self.violations())
    }
}

fn scan_violations(s: &ScanRange, key: &str, v: &mut Vec<Violation>) {
    if !(s.step > 0.0) {
        v.push(Violation::new(
            format!("{key}.step"),
            format!("must be > 0 MHz, got {}", s.step),
        ));
    }
    if !(s.stop >= s.start) {
        v.push(Violation::new(
            format!("{key}.stop"),
            format!("{} precedes start {}", s.stop, s.start),
        ));
    }
}

fn integration_violations(t: Option<f64>, v: &mut Vec<Violation>) {
    if let Some(t) = t {
        if !(t > 0.0) {
            v.push(Violation::new(
                "task.integration_s",
                format!("must be > 0 s, got {t}"),
            ));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_is_default_and_valid() {
        let c = RunConfig::load("", None, &[]).unwrap();
        assert_eq!(c, RunConfig::default());
        assert!(c.violations().is_empty());
    }

    #[test]
    fn round_trip() {
        let c = RunConfig {
            task: Some(Task::Pulse(default_pulse_sequence())),
            ..RunConfig::default()
        };
        let back = RunConfig::load(&c.to_toml(), Some("pulse"), &[]).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn overrides_reach_array_entries() {
        let o: Override = "--drive.tones.1.power=12.5".parse().unwrap();
        let c = RunConfig::load(
            "",
            Some("spectrum"),
            &[o, "task.scan.step=0.5".parse().unwrap()],
        )
        .unwrap();
        assert_eq!(c.drive.tones[1].power, 12.5);
        assert_eq!(c.drive.tones[0].power, 98.0);
        match c.task {
            Some(Task::Spectrum(t)) => assert_eq!(t.scan.step, 0.5),
            other => panic!("{other:?}"),
        }
        let bad: Override = "drive.tones.7.power=1".parse().unwrap();
        assert!(matches!(
            RunConfig::load("", None, &[bad]),
            Err(Error::Invalid(_))
        ));
    }

    #[test]
    fn parse_errors_carry_lines() {
        match RunConfig::load("seed = 1\n[ion]\ntau_excited = \"x\"\n", None, &[]) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
        match RunConfig::load("seed = 1\n\n[ion]\nbogus = 1\n", None, &[]) {
            Err(Error::Parse { line, message }) => {
                assert_eq!(line, 4);
                assert!(message.contains("bogus"));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn task_kind_mismatch() {
        let text = "[task]\nkind = \"saturation\"\n";
        assert!(RunConfig::load(text, Some("saturation"), &[]).is_ok());
        assert!(matches!(
            RunConfig::load(text, Some("spectrum"), &[]),
            Err(Error::Invalid(_))
        ));
    }

    #[test]
    fn violations_name_keys() {
        let text = "[ion]\nbranch_to_intermediate = 0.5\nbranch_to_ground = 0.4\nbranch_to_trap = 0.3\ntau_intermediate = -3\n";
        let c = RunConfig::load(text, None, &[]).unwrap();
        let v = c.violations();
        assert!(v.iter().any(
            |v| v.key.contains("ion.branch_to_ground") && v.key.contains("ion.branch_to_trap")
        ));
        assert!(v
            .iter()
            .any(|v| v.key == "ion.tau_intermediate" && v.message.contains("-3")));
    }
}
