//! Population rate equations for a driven ion.
//!
//! States are ordered `g1 g2 g3 e1 e2 e3 [I] [T]`: the three ground and three
//! excited hyperfine levels, then the intermediate emitting state and the
//! aggregated trap manifold when the level scheme has them. Generators use
//! the column convention `Q[(i, j)] = rate j → i` with `Q[(j, j)] = −Σ`
//! departures, in s⁻¹.
//!
//! The stimulated rate normalization is `W = (P / P_sat) / (2 τ_exc)` on
//! resonance, so an isolated two-level pair driven at `P_sat` holds a quarter
//! of its population in the upper level.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result, Violation};
use crate::levels::{
    lorentzian_unchecked, transition_table, IonModel, EXCITED_LEVELS, GROUND_LEVELS,
};

/// Rates below this are treated as exactly zero, s⁻¹.
pub const RATE_FLUSH: f64 = 1e-12;

/// Populations may dip this far below zero from round-off before clamping.
pub const NEGATIVE_TOLERANCE: f64 = 1e-10;

const US: f64 = 1e-6;

/// Which states take part in the rate equations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LevelScheme {
    /// Three ground plus three excited hyperfine levels; every decay returns
    /// straight to the ground manifold.
    SixLevel,
    /// Adds the intermediate emitting state; the trap branch is folded into
    /// the direct ground return.
    Cascade,
    /// Adds both the intermediate state and the aggregated trap manifold.
    CascadeTrap,
}

impl LevelScheme {
    /// The richest scheme the model parameterizes.
    pub fn for_model(model: &IonModel) -> Self {
        if model.tau_trap.is_some() {
            LevelScheme::CascadeTrap
        } else {
            LevelScheme::Cascade
        }
    }

    pub fn dim(self) -> usize {
        match self {
            LevelScheme::SixLevel => 6,
            LevelScheme::Cascade => 7,
            LevelScheme::CascadeTrap => 8,
        }
    }

    pub fn ground(self, i: usize) -> usize {
        i
    }

    pub fn excited(self, j: usize) -> usize {
        GROUND_LEVELS + j
    }

    pub fn intermediate(self) -> Option<usize> {
        match self {
            LevelScheme::SixLevel => None,
            _ => Some(6),
        }
    }

    pub fn trap(self) -> Option<usize> {
        match self {
            LevelScheme::CascadeTrap => Some(7),
            _ => None,
        }
    }

    pub fn label(self, state: usize) -> String {
        match state {
            0..=2 => format!("g{}", state + 1),
            3..=5 => format!("e{}", state - 2),
            6 => "I".to_string(),
            7 => "T".to_string(),
            _ => format!("s{state}"),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            LevelScheme::SixLevel => "six_level",
            LevelScheme::Cascade => "cascade",
            LevelScheme::CascadeTrap => "cascade_trap",
        }
    }
}

impl std::str::FromStr for LevelScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "six_level" | "6" => Ok(LevelScheme::SixLevel),
            "cascade" => Ok(LevelScheme::Cascade),
            "cascade_trap" | "trap" => Ok(LevelScheme::CascadeTrap),
            other => Err(Error::Domain(format!("unknown level scheme `{other}`"))),
        }
    }
}

/// One laser frequency component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tone {
    pub name: String,
    /// Offset from tone f₂, MHz.
    pub offset: f64,
    /// Power, pW.
    pub power: f64,
    #[serde(default = "yes")]
    pub active: bool,
}

fn yes() -> bool {
    true
}

/// Laser tones plus the power and linewidth normalization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DriveConfig {
    pub tones: Vec<Tone>,
    /// Power at which an on-resonance tone drives `W = 1 / (2 τ_exc)`, pW.
    pub p_sat: f64,
    /// Laser FWHM, MHz. Added to the homogeneous width.
    pub laser_fwhm: f64,
    /// Position of tone f₂ at zero scan detuning, relative to the g₁ → e₁
    /// line, MHz. The default parks f₂ on g₂ → e₁, so the three-tone
    /// spectrum peaks at the excited splittings.
    pub carrier_offset: f64,
}

impl Default for DriveConfig {
    fn default() -> Self {
        let tone = |name: &str, offset| Tone {
            name: name.to_string(),
            offset,
            power: 98.0,
            active: true,
        };
        DriveConfig {
            tones: vec![tone("f1", -10.19), tone("f2", 0.0), tone("f3", 17.3)],
            p_sat: 98.0,
            laser_fwhm: 0.0,
            carrier_offset: -17.3,
        }
    }
}

impl DriveConfig {
    pub fn violations(&self, prefix: &str) -> Vec<Violation> {
        let mut out = Vec::new();
        if self.tones.is_empty() {
            out.push(Violation::new(
                format!("{prefix}.tones"),
                "at least one tone is required",
            ));
        }
        for (k, t) in self.tones.iter().enumerate() {
            if !(t.power >= 0.0 && t.power.is_finite()) {
                out.push(Violation::new(
                    format!("{prefix}.tones.{k}.power"),
                    format!("power must be >= 0 pW, got {}", t.power),
                ));
            }
            if !t.offset.is_finite() {
                out.push(Violation::new(
                    format!("{prefix}.tones.{k}.offset"),
                    "offset must be finite",
                ));
            }
            for (l, u) in self.tones.iter().enumerate().skip(k + 1) {
                if t.offset == u.offset {
                    out.push(Violation::new(
                        format!("{prefix}.tones.{l}.offset"),
                        format!("duplicates the offset of tone {k} ({} MHz)", t.offset),
                    ));
                }
                if t.name == u.name {
                    out.push(Violation::new(
                        format!("{prefix}.tones.{l}.name"),
                        format!("duplicate tone name `{}`", t.name),
                    ));
                }
            }
        }
        if !(self.p_sat > 0.0 && self.p_sat.is_finite()) {
            out.push(Violation::new(
                format!("{prefix}.p_sat"),
                format!("must be > 0 pW, got {}", self.p_sat),
            ));
        }
        if !(self.laser_fwhm >= 0.0 && self.laser_fwhm.is_finite()) {
            out.push(Violation::new(
                format!("{prefix}.laser_fwhm"),
                format!("must be >= 0 MHz, got {}", self.laser_fwhm),
            ));
        }
        if !self.carrier_offset.is_finite() {
            out.push(Violation::new(
                format!("{prefix}.carrier_offset"),
                "must be finite",
            ));
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        ensure(self.violations("drive"))
    }

    pub fn tone_index(&self, name: &str) -> Result<usize> {
        self.tones
            .iter()
            .position(|t| t.name == name)
            .ok_or_else(|| Error::Domain(format!("no tone named `{name}`")))
    }

    /// Copy with only the named tones active.
    pub fn with_active(&self, names: &[&str]) -> Result<Self> {
        for n in names {
            self.tone_index(n)?;
        }
        let mut d = self.clone();
        for t in &mut d.tones {
            t.active = names.contains(&t.name.as_str());
        }
        Ok(d)
    }

    /// Copy with every tone set to `power`.
    pub fn with_power(&self, power: f64) -> Self {
        let mut d = self.clone();
        for t in &mut d.tones {
            t.power = power;
        }
        d
    }

    pub fn active_count(&self) -> usize {
        self.tones
            .iter()
            .filter(|t| t.active && t.power > 0.0)
            .count()
    }

    /// Ground level whose g → e₁ line sits closest to the tone at zero scan
    /// detuning.
    pub fn addressed_ground_level(&self, model: &IonModel, tone: usize) -> usize {
        let f = self.carrier_offset + self.tones[tone].offset;
        (0..GROUND_LEVELS)
            .min_by(|&a, &b| {
                let da = (f - model.detuning_offset(a, 0)).abs();
                let db = (f - model.detuning_offset(b, 0)).abs();
                da.total_cmp(&db)
            })
            .expect("three ground levels")
    }

    /// Tone that addresses ground level `level`, if any.
    pub fn tone_for_level(&self, model: &IonModel, level: usize) -> Option<usize> {
        (0..self.tones.len()).find(|&t| self.addressed_ground_level(model, t) == level)
    }

    pub fn effective_fwhm(&self, model: &IonModel) -> f64 {
        model.gamma_hom + self.laser_fwhm
    }
}

/// Collection and detection efficiencies plus the background floor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectionModel {
    pub eta_detection: f64,
    /// 0.78 for a dipole parallel to the collection interface, 0.54 normal.
    pub eta_collection: f64,
    /// counts/s
    pub background: f64,
}

impl Default for DetectionModel {
    fn default() -> Self {
        DetectionModel {
            eta_detection: 0.11,
            eta_collection: 0.78,
            background: 25.0,
        }
    }
}

impl DetectionModel {
    pub fn normal_dipole() -> Self {
        DetectionModel {
            eta_collection: 0.54,
            ..Default::default()
        }
    }

    pub fn efficiency(&self) -> f64 {
        self.eta_collection * self.eta_detection
    }

    pub fn violations(&self, prefix: &str) -> Vec<Violation> {
        let mut out = Vec::new();
        for (name, v) in [
            ("eta_detection", self.eta_detection),
            ("eta_collection", self.eta_collection),
        ] {
            if !(v > 0.0 && v <= 1.0) {
                out.push(Violation::new(
                    format!("{prefix}.{name}"),
                    format!("must lie in (0, 1], got {v}"),
                ));
            }
        }
        if !(self.background >= 0.0 && self.background.is_finite()) {
            out.push(Violation::new(
                format!("{prefix}.background"),
                format!("must be >= 0 counts/s, got {}", self.background),
            ));
        }
        out
    }
}

/// Stimulated rate on each (ground, excited) transition, s⁻¹.
pub type TransitionRates = [[f64; EXCITED_LEVELS]; GROUND_LEVELS];

/// Stimulated rates for every transition with f₂ at `scan_detuning` MHz.
pub fn pump_rates(model: &IonModel, drive: &DriveConfig, scan_detuning: f64) -> TransitionRates {
    let table = transition_table(model);
    let fwhm = drive.effective_fwhm(model);
    let unit = 1.0 / (2.0 * model.tau_excited * US);
    let mut w = [[0.0; EXCITED_LEVELS]; GROUND_LEVELS];
    for tone in drive.tones.iter().filter(|t| t.active && t.power > 0.0) {
        let f = scan_detuning + drive.carrier_offset + tone.offset;
        let scale = unit * tone.power / drive.p_sat;
        for tr in table.iter() {
            let (g, e) = (tr.ground_index, tr.excited_index);
            w[g][e] += scale
                * model.transition_strengths[g][e]
                * lorentzian_unchecked(f - tr.detuning_offset, fwhm);
        }
    }
    w
}

/// Generator of the population master equation.
#[derive(Debug, Clone, PartialEq)]
pub struct RateMatrix {
    scheme: LevelScheme,
    matrix: DMatrix<f64>,
}

impl RateMatrix {
    /// Wraps a raw generator after checking its shape and sign structure.
    pub fn from_matrix(scheme: LevelScheme, matrix: DMatrix<f64>) -> Result<Self> {
        let n = scheme.dim();
        if matrix.nrows() != n || matrix.ncols() != n {
            return Err(Error::Structure(format!(
                "{} scheme needs a {n}x{n} generator, got {}x{}",
                scheme.name(),
                matrix.nrows(),
                matrix.ncols()
            )));
        }
        for j in 0..n {
            let mut sum = 0.0;
            let mut scale: f64 = 0.0;
            for i in 0..n {
                let v = matrix[(i, j)];
                if !v.is_finite() {
                    return Err(Error::Structure(format!("non-finite entry at ({i}, {j})")));
                }
                if i != j && v < 0.0 {
                    return Err(Error::Structure(format!("negative rate {v} at ({i}, {j})")));
                }
                sum += v;
                scale = scale.max(v.abs());
            }
            if sum.abs() > 1e-9 * scale.max(1.0) {
                return Err(Error::Structure(format!(
                    "column {j} sums to {sum}, expected 0"
                )));
            }
        }
        Ok(RateMatrix { scheme, matrix })
    }

    pub fn zero(scheme: LevelScheme) -> Self {
        let n = scheme.dim();
        RateMatrix {
            scheme,
            matrix: DMatrix::zeros(n, n),
        }
    }

    pub fn scheme(&self) -> LevelScheme {
        self.scheme
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn column_sums(&self) -> Vec<f64> {
        self.matrix.column_iter().map(|c| c.sum()).collect()
    }

    fn add(&mut self, from: usize, to: usize, rate: f64) {
        if rate < RATE_FLUSH {
            return;
        }
        self.matrix[(to, from)] += rate;
        self.matrix[(from, from)] -= rate;
    }
}

/// Assembles the generator for a given set of stimulated rates.
pub fn build_rate_matrix(
    model: &IonModel,
    rates: &TransitionRates,
    scheme: LevelScheme,
) -> Result<RateMatrix> {
    for (g, row) in rates.iter().enumerate() {
        for (e, &w) in row.iter().enumerate() {
            if !(w >= 0.0 && w.is_finite()) {
                return Err(Error::Domain(format!(
                    "rate g{} -> e{} must be finite and >= 0, got {w}",
                    g + 1,
                    e + 1
                )));
            }
        }
    }
    let mut m = RateMatrix::zero(scheme);

    for g in 0..GROUND_LEVELS {
        for e in 0..EXCITED_LEVELS {
            let w = rates[g][e];
            m.add(scheme.ground(g), scheme.excited(e), w);
            m.add(scheme.excited(e), scheme.ground(g), w);
        }
    }

    let gamma = 1.0 / (model.tau_excited * US);
    let (to_ground, to_intermediate, to_trap) = match scheme {
        LevelScheme::SixLevel => (1.0, 0.0, 0.0),
        LevelScheme::Cascade => (
            model.branch_to_ground + model.branch_to_trap,
            model.branch_to_intermediate,
            0.0,
        ),
        LevelScheme::CascadeTrap => (
            model.branch_to_ground,
            model.branch_to_intermediate,
            model.branch_to_trap,
        ),
    };
    let returns = &model.ground_decay_branching;

    for e in 0..EXCITED_LEVELS {
        let src = scheme.excited(e);
        for (g, frac) in returns.iter().enumerate() {
            m.add(src, scheme.ground(g), gamma * to_ground * frac);
        }
        if let Some(i) = scheme.intermediate() {
            m.add(src, i, gamma * to_intermediate);
        }
        if let Some(t) = scheme.trap() {
            m.add(src, t, gamma * to_trap);
        }
    }
    if let Some(i) = scheme.intermediate() {
        let rate = 1.0 / (model.tau_intermediate * US);
        for (g, frac) in returns.iter().enumerate() {
            m.add(i, scheme.ground(g), rate * frac);
        }
    }
    if let (Some(t), Some(tau)) = (scheme.trap(), model.tau_trap) {
        let rate = 1.0 / (tau * US);
        for (g, frac) in returns.iter().enumerate() {
            m.add(t, scheme.ground(g), rate * frac);
        }
    }
    Ok(m)
}

/// Generator for the drive at one scan detuning.
pub fn rate_matrix_at(
    model: &IonModel,
    drive: &DriveConfig,
    scan_detuning: f64,
    scheme: LevelScheme,
) -> Result<RateMatrix> {
    build_rate_matrix(model, &pump_rates(model, drive, scan_detuning), scheme)
}

/// A normalized population vector over the states of one level scheme.
#[derive(Debug, Clone, PartialEq)]
pub struct Populations {
    scheme: LevelScheme,
    values: DVector<f64>,
}

impl Populations {
    pub fn new(scheme: LevelScheme, values: Vec<f64>) -> Result<Self> {
        if values.len() != scheme.dim() {
            return Err(Error::Domain(format!(
                "{} scheme has {} states, got {} populations",
                scheme.name(),
                scheme.dim(),
                values.len()
            )));
        }
        if let Some(v) = values
            .iter()
            .find(|v| !v.is_finite() || **v < -NEGATIVE_TOLERANCE)
        {
            return Err(Error::Domain(format!(
                "populations must be finite and >= 0, got {v}"
            )));
        }
        let sum: f64 = values.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Domain(format!(
                "populations must sum to 1, got {sum}"
            )));
        }
        Ok(Populations {
            scheme,
            values: DVector::from_vec(values),
        })
    }

    /// Equal occupation of the three ground levels.
    pub fn uniform_ground(scheme: LevelScheme) -> Self {
        let mut v = DVector::zeros(scheme.dim());
        for g in 0..GROUND_LEVELS {
            v[scheme.ground(g)] = 1.0 / GROUND_LEVELS as f64;
        }
        Populations { scheme, values: v }
    }

    pub(crate) fn from_vector(scheme: LevelScheme, values: DVector<f64>) -> Self {
        Populations { scheme, values }
    }

    pub fn scheme(&self) -> LevelScheme {
        self.scheme
    }

    pub fn values(&self) -> &DVector<f64> {
        &self.values
    }

    pub fn as_slice(&self) -> &[f64] {
        self.values.as_slice()
    }

    pub fn get(&self, state: usize) -> f64 {
        self.values[state]
    }

    pub fn sum(&self) -> f64 {
        self.values.sum()
    }

    pub fn ground(&self) -> [f64; GROUND_LEVELS] {
        std::array::from_fn(|g| self.values[self.scheme.ground(g)])
    }

    pub fn ground_total(&self) -> f64 {
        self.ground().iter().sum()
    }

    pub fn excited_total(&self) -> f64 {
        (0..EXCITED_LEVELS)
            .map(|e| self.values[self.scheme.excited(e)])
            .sum()
    }

    pub fn intermediate(&self) -> f64 {
        self.scheme.intermediate().map_or(0.0, |i| self.values[i])
    }

    pub fn trap(&self) -> f64 {
        self.scheme.trap().map_or(0.0, |t| self.values[t])
    }

    /// Share of the ground-manifold population held by `level`.
    pub fn ground_fraction(&self, level: usize) -> f64 {
        let total = self.ground_total();
        if total > 0.0 {
            self.values[self.scheme.ground(level)] / total
        } else {
            0.0
        }
    }
}

/// Closed communicating classes of the generator's transition graph.
fn closed_classes(m: &RateMatrix) -> Vec<Vec<usize>> {
    let n = m.dim();
    let q = m.matrix();
    let mut reach = vec![vec![false; n]; n];
    for i in 0..n {
        reach[i][i] = true;
        for j in 0..n {
            if i != j && q[(j, i)] > 0.0 {
                reach[i][j] = true;
            }
        }
    }
    for k in 0..n {
        for i in 0..n {
            if reach[i][k] {
                for j in 0..n {
                    if reach[k][j] {
                        reach[i][j] = true;
                    }
                }
            }
        }
    }
    let mut seen = vec![false; n];
    let mut classes = Vec::new();
    for i in 0..n {
        if seen[i] {
            continue;
        }
        let class: Vec<usize> = (0..n).filter(|&j| reach[i][j] && reach[j][i]).collect();
        for &j in &class {
            seen[j] = true;
        }
        let closed = (0..n).all(|j| !reach[i][j] || class.contains(&j));
        if closed {
            classes.push(class);
        }
    }
    classes
}

/// Stationary populations `p` with `Q p = 0`, `Σ p = 1`.
///
/// Fails with [`Error::DegenerateSteadyState`] when more than one closed class
/// exists (e.g. no drive at all: every ground level is its own sink).
pub fn steady_state(m: &RateMatrix) -> Result<Populations> {
    let classes = closed_classes(m);
    if classes.len() != 1 {
        let scheme = m.scheme();
        return Err(Error::DegenerateSteadyState {
            components: classes
                .iter()
                .map(|c| c.iter().map(|&s| scheme.label(s)).collect())
                .collect(),
        });
    }
    // Transient states carry no weight; solve on the closed class alone.
    let class = &classes[0];
    let k = class.len();
    let q = m.matrix();
    let mut a = DMatrix::from_fn(k, k, |r, c| q[(class[r], class[c])]);
    let scale = a.iter().fold(0.0_f64, |acc, v| acc.max(v.abs())).max(1.0);
    for c in 0..k {
        a[(k - 1, c)] = scale;
    }
    let mut b = DVector::zeros(k);
    b[k - 1] = scale;

    let lu = a.clone().lu();
    let mut x = lu
        .solve(&b)
        .ok_or_else(|| Error::Structure("singular steady-state system".into()))?;
    // One step of iterative refinement.
    let r = &b - &a * &x;
    if let Some(dx) = lu.solve(&r) {
        x += dx;
    }

    let mut p = DVector::zeros(m.dim());
    for (r, &s) in class.iter().enumerate() {
        p[s] = x[r];
    }
    clamp_and_normalize(&mut p)?;
    Ok(Populations::from_vector(m.scheme(), p))
}

fn clamp_and_normalize(p: &mut DVector<f64>) -> Result<()> {
    for v in p.iter_mut() {
        if *v < 0.0 {
            if *v < -NEGATIVE_TOLERANCE {
                return Err(Error::Structure(format!("population {v} below tolerance")));
            }
            *v = 0.0;
        }
    }
    let s = p.sum();
    *p /= s;
    Ok(())
}

/// Exact propagator `exp(Q Δt)` for a piecewise-constant generator.
#[derive(Debug, Clone)]
pub struct Propagator {
    step: DMatrix<f64>,
    /// `∫₀^Δt c · exp(Q s) ds` for the emission vector `c`, photons.
    emission: DVector<f64>,
}

impl Propagator {
    /// Propagator over `dt_us`, without an emission observable.
    pub fn new(m: &RateMatrix, dt_us: f64) -> Self {
        let n = m.dim();
        Self::with_observable(m, dt_us, &DVector::zeros(n))
    }

    /// Propagator that also integrates `c · p(t)` over the step (Van Loan
    /// block exponential).
    pub fn with_observable(m: &RateMatrix, dt_us: f64, c: &DVector<f64>) -> Self {
        let n = m.dim();
        let dt = dt_us * US;
        let mut aug = DMatrix::zeros(n + 1, n + 1);
        aug.view_mut((0, 0), (n, n)).copy_from(&(m.matrix() * dt));
        for j in 0..n {
            aug[(n, j)] = c[j] * dt;
        }
        let e = aug.exp();
        let mut step = e.view((0, 0), (n, n)).into_owned();
        for j in 0..n {
            let mut col = step.column_mut(j);
            for v in col.iter_mut() {
                if *v < 0.0 {
                    *v = 0.0;
                }
            }
            let s = col.sum();
            if s > 0.0 {
                col /= s;
            }
        }
        let emission = DVector::from_fn(n, |j, _| e[(n, j)].max(0.0));
        Propagator { step, emission }
    }

    pub fn apply(&self, p: &Populations) -> Populations {
        let mut v = &self.step * p.values();
        // Columns are stochastic; this only removes accumulated round-off.
        let s = v.sum();
        v /= s;
        Populations::from_vector(p.scheme(), v)
    }

    /// Integrated observable over the step, starting from `p`.
    pub fn integral(&self, p: &Populations) -> f64 {
        self.emission.dot(p.values())
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.step
    }
}

/// Sampled population history.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub scheme: LevelScheme,
    pub t_us: Vec<f64>,
    pub populations: Vec<Populations>,
}

impl Trajectory {
    pub fn last(&self) -> &Populations {
        self.populations
            .last()
            .expect("trajectory holds the initial state")
    }

    pub fn emitted_rates(&self, model: &IonModel) -> Vec<f64> {
        self.populations
            .iter()
            .map(|p| emitted_photon_rate(p, model))
            .collect()
    }
}

/// Propagates `p0` for `duration_us`, sampling at most every `dt_max_us`.
pub fn integrate(
    m: &RateMatrix,
    p0: &Populations,
    duration_us: f64,
    dt_max_us: f64,
) -> Result<Trajectory> {
    if p0.scheme() != m.scheme() {
        return Err(Error::Domain(
            "initial populations belong to a different level scheme".into(),
        ));
    }
    Populations::new(p0.scheme(), p0.as_slice().to_vec())?;
    if !(duration_us >= 0.0 && duration_us.is_finite()) {
        return Err(Error::Domain(format!(
            "duration must be >= 0 µs, got {duration_us}"
        )));
    }
    if !(dt_max_us > 0.0) {
        return Err(Error::Domain(format!(
            "dt_max must be > 0 µs, got {dt_max_us}"
        )));
    }
    let steps = (duration_us / dt_max_us)
        .ceil()
        .max(if duration_us > 0.0 { 1.0 } else { 0.0 }) as usize;
    let mut t_us = vec![0.0];
    let mut populations = vec![p0.clone()];
    if steps > 0 {
        let dt = duration_us / steps as f64;
        let prop = Propagator::new(m, dt);
        let mut p = p0.clone();
        for k in 1..=steps {
            p = prop.apply(&p);
            t_us.push(dt * k as f64);
            populations.push(p.clone());
        }
    }
    Ok(Trajectory {
        scheme: m.scheme(),
        t_us,
        populations,
    })
}

/// `c` with `c · p` = emitted photons/s.
pub fn emission_vector(model: &IonModel, scheme: LevelScheme) -> DVector<f64> {
    let mut c = DVector::zeros(scheme.dim());
    match scheme.intermediate() {
        Some(i) => c[i] = 1.0 / (model.tau_intermediate * US),
        None => {
            let rate = model.branch_to_intermediate / (model.tau_excited * US);
            for e in 0..EXCITED_LEVELS {
                c[scheme.excited(e)] = rate;
            }
        }
    }
    c
}

/// Visible photons/s. With an intermediate state this is its radiative decay;
/// the six-level scheme uses the excited population times the intermediate
/// branch as a proxy. Direct excited → ground fluorescence is not counted.
pub fn emitted_photon_rate(p: &Populations, model: &IonModel) -> f64 {
    emission_vector(model, p.scheme()).dot(p.values())
}

pub fn detected_rate(emitted: f64, det: &DetectionModel) -> f64 {
    emitted * det.efficiency() + det.background
}

/// Emitted photons/s with every transition driven far above saturation.
pub fn saturated_emission_rate(model: &IonModel, scheme: LevelScheme) -> Result<f64> {
    let w = 1e6 / (model.tau_excited * US);
    let rates = [[w; EXCITED_LEVELS]; GROUND_LEVELS];
    let p = steady_state(&build_rate_matrix(model, &rates, scheme)?)?;
    Ok(emitted_photon_rate(&p, model))
}

/// Sum of `branch × lifetime` over the shelving states of `scheme`, µs.
fn shelving_time(model: &IonModel, scheme: LevelScheme) -> f64 {
    match scheme {
        LevelScheme::SixLevel => 0.0,
        LevelScheme::Cascade => model.branch_to_intermediate * model.tau_intermediate,
        LevelScheme::CascadeTrap => {
            model.branch_to_intermediate * model.tau_intermediate
                + model.branch_to_trap * model.tau_trap.unwrap_or(0.0)
        }
    }
}

/// Per-tone power at which the three-tone resonant fluorescence reaches half
/// its asymptote, for narrow, well separated lines.
///
/// With all three ground levels pumped into one excited level the emitted
/// rate is `∝ W / (W + W½)` with `W½ = 1 / (4 τ_exc + Σ b τ)`.
pub fn half_saturation_power(model: &IonModel, scheme: LevelScheme, p_sat: f64) -> f64 {
    2.0 * model.tau_excited * p_sat / (4.0 * model.tau_excited + shelving_time(model, scheme))
}

/// Inverse of [`half_saturation_power`]: the `p_sat` normalization that puts
/// the half-saturation point at `half_power`.
pub fn p_sat_for_half_saturation(model: &IonModel, scheme: LevelScheme, half_power: f64) -> f64 {
    half_power * (4.0 * model.tau_excited + shelving_time(model, scheme))
        / (2.0 * model.tau_excited)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::levels::default_pr_yso;

    fn on_resonance_drive(model: &IonModel) -> DriveConfig {
        let d = DriveConfig::default();
        assert_eq!(d.addressed_ground_level(model, 2), 0);
        d
    }

    #[test]
    fn rate_on_resonance_at_p_sat() {
        let m = default_pr_yso();
        let d = on_resonance_drive(&m).with_active(&["f3"]).unwrap();
        // f3 sits on g1 -> e1 at zero scan detuning.
        let w = pump_rates(&m, &d, 0.0);
        let expected = 1.0 / (2.0 * 1.95e-6);
        assert!((w[0][0] - expected).abs() / expected < 1e-12);
        assert!((expected - 2.564e5).abs() < 1e2);
    }

    #[test]
    fn no_power_no_rates() {
        let m = default_pr_yso();
        let d = DriveConfig::default().with_power(0.0);
        assert!(pump_rates(&m, &d, 1.3).iter().flatten().all(|&w| w == 0.0));
    }

    #[test]
    fn far_detuned_tail_bound() {
        let m = default_pr_yso();
        let d = DriveConfig::default().with_active(&["f3"]).unwrap();
        let fwhm = d.effective_fwhm(&m);
        let on = 1.0 / (2.0 * 1.95e-6);
        let w = pump_rates(&m, &d, 1000.0 * fwhm + 27.49);
        for &x in w.iter().flatten() {
            assert!(x < 1e-6 * on, "{x}");
        }
    }

    #[test]
    fn generator_structure() {
        let m = default_pr_yso();
        for scheme in [
            LevelScheme::SixLevel,
            LevelScheme::Cascade,
            LevelScheme::CascadeTrap,
        ] {
            let q = rate_matrix_at(&m, &DriveConfig::default(), 0.7, scheme).unwrap();
            assert_eq!(q.dim(), scheme.dim());
            for (j, s) in q.column_sums().iter().enumerate() {
                let scale = q.matrix()[(j, j)].abs().max(1.0);
                assert!(s.abs() <= 1e-9 * scale);
            }
            for i in 0..q.dim() {
                for j in 0..q.dim() {
                    if i != j {
                        assert!(q.matrix()[(i, j)] >= 0.0);
                    }
                }
            }
        }
    }

    #[test]
    fn undriven_ground_columns_are_zero() {
        let m = default_pr_yso();
        let q = build_rate_matrix(&m, &[[0.0; 3]; 3], LevelScheme::SixLevel).unwrap();
        for g in 0..3 {
            assert!(q.matrix().column(g).iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn trap_lifetime_on_diagonal() {
        let m = default_pr_yso();
        let q = build_rate_matrix(&m, &[[0.0; 3]; 3], LevelScheme::CascadeTrap).unwrap();
        assert!((q.matrix()[(7, 7)] + 2000.0).abs() < 1e-9);
    }

    #[test]
    fn negative_rate_rejected() {
        let m = default_pr_yso();
        let mut r = [[0.0; 3]; 3];
        r[1][2] = -1.0;
        assert!(build_rate_matrix(&m, &r, LevelScheme::SixLevel).is_err());
    }

    #[test]
    fn raw_matrix_shape_checked() {
        assert!(matches!(
            RateMatrix::from_matrix(LevelScheme::SixLevel, DMatrix::zeros(7, 7)),
            Err(Error::Structure(_))
        ));
    }

    #[test]
    fn zero_drive_is_degenerate() {
        let m = default_pr_yso();
        let q = build_rate_matrix(&m, &[[0.0; 3]; 3], LevelScheme::SixLevel).unwrap();
        match steady_state(&q) {
            Err(Error::DegenerateSteadyState { components }) => {
                assert_eq!(components, vec![vec!["g1"], vec!["g2"], vec!["g3"]]);
            }
            other => panic!("expected degeneracy, got {other:?}"),
        }
    }

    #[test]
    fn strong_pair_equalizes() {
        let m = default_pr_yso();
        let mut r = [[0.0; 3]; 3];
        r[0][0] = 1e12;
        // Weak links keep the other ground levels connected.
        r[1][0] = 1.0;
        r[2][0] = 1.0;
        let p = steady_state(&build_rate_matrix(&m, &r, LevelScheme::SixLevel).unwrap()).unwrap();
        let (g, e) = (p.get(0), p.get(3));
        assert!((g - e).abs() / (g + e) < 1e-5, "{g} {e}");
    }

    #[test]
    fn all_transitions_saturated_share_equally() {
        let m = default_pr_yso();
        let r = [[1e13; 3]; 3];
        let p = steady_state(&build_rate_matrix(&m, &r, LevelScheme::SixLevel).unwrap()).unwrap();
        for v in p.as_slice() {
            assert!((v - 1.0 / 6.0).abs() < 1e-3);
        }
    }

    #[test]
    fn decay_only_is_exponential() {
        let m = default_pr_yso();
        let q = build_rate_matrix(&m, &[[0.0; 3]; 3], LevelScheme::SixLevel).unwrap();
        let mut v = vec![0.0; 6];
        v[3] = 1.0;
        let p0 = Populations::new(LevelScheme::SixLevel, v).unwrap();
        let tr = integrate(&q, &p0, 1.95, 0.01).unwrap();
        assert!((tr.last().get(3) - (-1.0f64).exp()).abs() < 1e-6);
        assert!((tr.last().sum() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_generator_keeps_state() {
        let p0 = Populations::new(
            LevelScheme::Cascade,
            vec![0.2, 0.3, 0.1, 0.1, 0.1, 0.1, 0.1],
        )
        .unwrap();
        let tr = integrate(&RateMatrix::zero(LevelScheme::Cascade), &p0, 100.0, 7.0).unwrap();
        for p in &tr.populations {
            for (a, b) in p.as_slice().iter().zip(p0.as_slice()) {
                assert!((a - b).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn invalid_initial_state() {
        assert!(Populations::new(LevelScheme::SixLevel, vec![0.5; 6]).is_err());
        assert!(
            Populations::new(LevelScheme::SixLevel, vec![1.5, -0.5, 0.0, 0.0, 0.0, 0.0]).is_err()
        );
        assert!(Populations::new(LevelScheme::SixLevel, vec![1.0; 3]).is_err());
    }

    #[test]
    fn emission_examples() {
        let m = default_pr_yso();
        let mut v = vec![0.0; 7];
        v[6] = 1.0;
        let p = Populations::new(LevelScheme::Cascade, v).unwrap();
        assert!((emitted_photon_rate(&p, &m) - 1e6 / 166.0).abs() < 1e-9);
        assert!((1e6f64 / 166.0 - 6024.0).abs() < 1.0);
        let p = Populations::uniform_ground(LevelScheme::Cascade);
        assert_eq!(emitted_photon_rate(&p, &m), 0.0);
    }

    #[test]
    fn detection_chain() {
        let det = DetectionModel {
            background: 0.0,
            ..Default::default()
        };
        assert!((detected_rate(699.0, &det) - 60.0).abs() < 0.05);
        let det = DetectionModel {
            background: 0.0,
            ..DetectionModel::normal_dipole()
        };
        assert!((detected_rate(1010.0, &det) - 60.0).abs() < 0.05);
        assert_eq!(detected_rate(0.0, &DetectionModel::default()), 25.0);
    }

    #[test]
    fn half_saturation_inverse() {
        let m = default_pr_yso();
        for s in [
            LevelScheme::SixLevel,
            LevelScheme::Cascade,
            LevelScheme::CascadeTrap,
        ] {
            let ps = p_sat_for_half_saturation(&m, s, 98.0);
            assert!((half_saturation_power(&m, s, ps) - 98.0).abs() < 1e-9);
        }
        assert!((half_saturation_power(&m, LevelScheme::SixLevel, 98.0) - 49.0).abs() < 1e-12);
    }
}
