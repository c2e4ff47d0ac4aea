//! Hyperfine level structure of a single ion and the Lorentzian lineshape
//! shared by every optical transition.
//!
//! Frequencies are MHz offsets from the lowest level of each manifold, times
//! are µs. Each doubly degenerate hyperfine pair is treated as one level.

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result, Violation};

pub const GROUND_LEVELS: usize = 3;
pub const EXCITED_LEVELS: usize = 3;

const BRANCH_TOLERANCE: f64 = 1e-12;

/// Parameters of one ion species: hyperfine splittings, lifetimes and the
/// decay branching of the optically excited state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IonModel {
    /// Ground hyperfine level offsets, MHz, strictly increasing.
    pub ground_splittings: [f64; GROUND_LEVELS],
    /// Excited hyperfine level offsets, MHz, strictly increasing.
    pub excited_splittings: [f64; EXCITED_LEVELS],
    /// Lifetime of the optically excited state, µs.
    pub tau_excited: f64,
    /// Lifetime of the intermediate emitting state, µs.
    pub tau_intermediate: f64,
    /// Lifetime of the aggregated trap manifold, µs. `None` (written
    /// `"none"`) selects the plain cascade without a trap.
    #[serde(with = "optional_lifetime")]
    pub tau_trap: Option<f64>,
    pub branch_to_intermediate: f64,
    pub branch_to_ground: f64,
    pub branch_to_trap: f64,
    /// Homogeneous FWHM of every optical hyperfine transition, MHz.
    pub gamma_hom: f64,
    /// Where a decay that returns to the ground manifold lands.
    pub ground_decay_branching: [f64; GROUND_LEVELS],
    /// Relative oscillator strength of each (ground, excited) transition.
    #[serde(default = "unit_strengths")]
    pub transition_strengths: [[f64; EXCITED_LEVELS]; GROUND_LEVELS],
}

/// `Option<f64>` as either a number or the string `"none"`, since TOML has
/// no null.
mod optional_lifetime {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Value(f64),
        Word(String),
    }

    pub fn serialize<S: Serializer>(v: &Option<f64>, s: S) -> Result<S::Ok, S::Error> {
        match v {
            Some(x) => Repr::Value(*x),
            None => Repr::Word("none".into()),
        }
        .serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<f64>, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Value(x) => Ok(Some(x)),
            Repr::Word(w) if w == "none" => Ok(None),
            Repr::Word(w) => Err(serde::de::Error::custom(format!(
                "expected a lifetime in µs or \"none\", got \"{w}\""
            ))),
        }
    }
}

fn unit_strengths() -> [[f64; EXCITED_LEVELS]; GROUND_LEVELS] {
    [[1.0; EXCITED_LEVELS]; GROUND_LEVELS]
}

/// Canonical Pr³⁺:Y₂SiO₅ parameters (site 1, ³H₄ ↔ ³P₀).
///
/// The ground levels are ordered so that the canonical tone set
/// (f₂ − 10.19, f₂, f₂ + 17.3 MHz) addresses all three of them at once:
/// the 17.3 MHz gap sits below the 10.19 MHz gap.
pub fn default_pr_yso() -> IonModel {
    IonModel {
        ground_splittings: [0.0, 17.3, 27.49],
        excited_splittings: [0.0, 2.9, 8.3],
        tau_excited: 1.95,
        tau_intermediate: 166.0,
        tau_trap: Some(500.0),
        branch_to_intermediate: 0.39,
        branch_to_ground: 0.13,
        branch_to_trap: 0.48,
        gamma_hom: 0.082,
        ground_decay_branching: [1.0 / 3.0; GROUND_LEVELS],
        transition_strengths: unit_strengths(),
    }
}

impl Default for IonModel {
    fn default() -> Self {
        default_pr_yso()
    }
}

impl IonModel {
    /// Every invariant violation, keys prefixed with `prefix` (e.g. `"ion"`).
    pub fn violations(&self, prefix: &str) -> Vec<Violation> {
        let key = |name: &str| {
            if prefix.is_empty() {
                name.to_string()
            } else {
                format!("{prefix}.{name}")
            }
        };
        let mut out = Vec::new();

        for (name, values) in [
            ("ground_splittings", &self.ground_splittings),
            ("excited_splittings", &self.excited_splittings),
        ] {
            if values.iter().any(|v| !v.is_finite()) {
                out.push(Violation::new(
                    key(name),
                    format!("non-finite entry in {values:?}"),
                ));
            } else if values.windows(2).any(|w| w[1] <= w[0]) {
                out.push(Violation::new(
                    key(name),
                    format!("splittings must be strictly increasing, got {values:?}"),
                ));
            }
        }

        let mut lifetimes = vec![
            ("tau_excited", self.tau_excited),
            ("tau_intermediate", self.tau_intermediate),
        ];
        if let Some(t) = self.tau_trap {
            lifetimes.push(("tau_trap", t));
        }
        for (name, value) in lifetimes {
            if !(value > 0.0 && value.is_finite()) {
                out.push(Violation::new(
                    key(name),
                    format!("lifetime must be > 0 µs, got {value}"),
                ));
            }
        }

        let branches = [
            ("branch_to_intermediate", self.branch_to_intermediate),
            ("branch_to_ground", self.branch_to_ground),
            ("branch_to_trap", self.branch_to_trap),
        ];
        for (name, value) in branches {
            if !(0.0..=1.0).contains(&value) {
                out.push(Violation::new(
                    key(name),
                    format!("branching fraction must lie in [0, 1], got {value}"),
                ));
            }
        }
        let sum: f64 = branches.iter().map(|(_, v)| v).sum();
        if (sum - 1.0).abs() > BRANCH_TOLERANCE {
            out.push(Violation::new(
                format!(
                    "{}, {}, {}",
                    key("branch_to_intermediate"),
                    key("branch_to_ground"),
                    key("branch_to_trap")
                ),
                format!("branching fractions must sum to 1, got {sum}"),
            ));
        }

        if !(self.gamma_hom > 0.0 && self.gamma_hom.is_finite()) {
            out.push(Violation::new(
                key("gamma_hom"),
                format!("linewidth must be > 0 MHz, got {}", self.gamma_hom),
            ));
        }

        let g = &self.ground_decay_branching;
        if g.iter().any(|v| !(0.0..=1.0).contains(v)) {
            out.push(Violation::new(
                key("ground_decay_branching"),
                format!("entries must lie in [0, 1], got {g:?}"),
            ));
        }
        let gsum: f64 = g.iter().sum();
        if (gsum - 1.0).abs() > BRANCH_TOLERANCE {
            out.push(Violation::new(
                key("ground_decay_branching"),
                format!("entries must sum to 1, got {gsum}"),
            ));
        }

        if self
            .transition_strengths
            .iter()
            .flatten()
            .any(|s| !(*s >= 0.0 && s.is_finite()))
        {
            out.push(Violation::new(
                key("transition_strengths"),
                "strengths must be finite and >= 0",
            ));
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        ensure(self.violations("ion"))
    }

    /// Frequency of the g_i → e_j line relative to g₁ → e₁, MHz.
    pub fn detuning_offset(&self, ground: usize, excited: usize) -> f64 {
        self.excited_splittings[excited] - self.ground_splittings[ground]
    }
}

/// One optical hyperfine transition.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transition {
    pub ground_index: usize,
    pub excited_index: usize,
    /// Line position relative to g₁ → e₁, MHz.
    pub detuning_offset: f64,
}

/// The 3 × 3 ground → excited couplings, sorted by (ground, excited).
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionTable {
    entries: Vec<Transition>,
}

impl TransitionTable {
    pub fn entries(&self) -> &[Transition] {
        &self.entries
    }

    pub fn get(&self, ground: usize, excited: usize) -> &Transition {
        &self.entries[ground * EXCITED_LEVELS + excited]
    }

    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        self.entries.iter()
    }
}

pub fn transition_table(model: &IonModel) -> TransitionTable {
    let entries = (0..GROUND_LEVELS)
        .flat_map(|g| (0..EXCITED_LEVELS).map(move |e| (g, e)))
        .map(|(g, e)| Transition {
            ground_index: g,
            excited_index: e,
            detuning_offset: model.detuning_offset(g, e),
        })
        .collect();
    TransitionTable { entries }
}

/// Peak-normalized Lorentzian, `1 / (1 + (2 δ / fwhm)²)`.
pub fn lorentzian(delta: f64, fwhm: f64) -> Result<f64> {
    if !(fwhm > 0.0) {
        return Err(Error::Domain(format!(
            "Lorentzian FWHM must be > 0, got {fwhm}"
        )));
    }
    Ok(lorentzian_unchecked(delta, fwhm))
}

#[inline]
pub(crate) fn lorentzian_unchecked(delta: f64, fwhm: f64) -> f64 {
    let x = 2.0 * delta / fwhm;
    1.0 / (1.0 + x * x)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_parameters() {
        let m = default_pr_yso();
        assert_eq!(m.ground_splittings, [0.0, 17.3, 27.49]);
        assert_eq!(m.excited_splittings, [0.0, 2.9, 8.3]);
        assert_eq!(
            (
                m.branch_to_intermediate,
                m.branch_to_ground,
                m.branch_to_trap
            ),
            (0.39, 0.13, 0.48)
        );
        assert_eq!(m.gamma_hom, 0.082);
        assert_eq!(m.tau_excited, 1.95);
        assert_eq!(m.tau_intermediate, 166.0);
        assert_eq!(m.tau_trap, Some(500.0));
        assert!(m.violations("ion").is_empty());
    }

    #[test]
    fn table_offsets() {
        let m = default_pr_yso();
        let t = transition_table(&m);
        assert_eq!(t.entries().len(), 9);
        assert_eq!(t.get(0, 0).detuning_offset, 0.0);
        assert!((t.get(0, 2).detuning_offset - 8.3).abs() < 1e-12);
        assert!((t.get(2, 0).detuning_offset + 27.49).abs() < 1e-12);
        let order: Vec<_> = t
            .iter()
            .map(|e| (e.ground_index, e.excited_index))
            .collect();
        let mut sorted = order.clone();
        sorted.sort();
        assert_eq!(order, sorted);
    }

    #[test]
    fn hyperfine_comb_differences() {
        let m = default_pr_yso();
        let t = transition_table(&m);
        let close = |x: f64, set: &[f64]| set.iter().any(|s| (x.abs() - s).abs() < 1e-9);
        for a in t.iter() {
            for b in t.iter() {
                let d = a.detuning_offset - b.detuning_offset;
                if a.excited_index == b.excited_index && a.ground_index != b.ground_index {
                    assert!(close(d, &[10.19, 17.3, 27.49]), "{d}");
                }
                if a.ground_index == b.ground_index && a.excited_index != b.excited_index {
                    assert!(close(d, &[2.9, 5.4, 8.3]), "{d}");
                }
            }
        }
    }

    #[test]
    fn lorentzian_values() {
        assert_eq!(lorentzian(0.0, 0.082).unwrap(), 1.0);
        assert!((lorentzian(0.041, 0.082).unwrap() - 0.5).abs() < 1e-15);
        assert!((lorentzian(0.082, 0.082).unwrap() - 0.2).abs() < 1e-15);
        assert!(lorentzian(0.0, 0.0).is_err());
        assert!(lorentzian(0.0, -1.0).is_err());
    }

    #[test]
    fn violations_name_keys() {
        let mut m = default_pr_yso();
        m.branch_to_ground = 0.33;
        let v = m.violations("ion");
        assert_eq!(v.len(), 1);
        assert!(v[0].key.contains("ion.branch_to_intermediate"));
        assert!(v[0].key.contains("ion.branch_to_ground"));
        assert!(v[0].key.contains("ion.branch_to_trap"));

        let mut m = default_pr_yso();
        m.tau_excited = -1.95;
        let v = m.violations("ion");
        assert_eq!(v[0].key, "ion.tau_excited");
        assert!(v[0].message.contains("-1.95"));

        let mut m = default_pr_yso();
        m.excited_splittings = [0.0, 8.3, 2.9];
        assert_eq!(m.violations("")[0].key, "excited_splittings");
    }
}
