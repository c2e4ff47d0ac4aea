//! Rate-matrix and solver invariants, with the steady state checked against
//! an independent GTH (Grassmann–Taksar–Heyman) elimination.

use ionspec::dynamics::{
    build_rate_matrix, emission_vector, emitted_photon_rate, integrate, pump_rates, rate_matrix_at,
    steady_state, DriveConfig, LevelScheme, Populations, Propagator, RateMatrix,
};
use ionspec::levels::IonModel;
use nalgebra::DMatrix;
use proptest::prelude::*;

/// Stationary distribution of an irreducible generator (columns sum to
/// zero, `q[(i, j)]` is the rate j → i) by GTH elimination, which needs no
/// subtraction and so stays accurate for stiff chains.
fn gth_stationary(q: &DMatrix<f64>) -> Vec<f64> {
    let n = q.nrows();
    // r[(i, j)]: rate from i to j.
    let mut r = q.transpose();
    for i in 0..n {
        r[(i, i)] = 0.0;
    }
    for k in (1..n).rev() {
        let s: f64 = (0..k).map(|j| r[(k, j)]).sum();
        for i in 0..k {
            for j in 0..k {
                r[(i, j)] += r[(i, k)] * r[(k, j)] / s;
            }
        }
    }
    let mut pi = vec![0.0; n];
    pi[0] = 1.0;
    for k in 1..n {
        let s: f64 = (0..k).map(|j| r[(k, j)]).sum();
        pi[k] = (0..k).map(|i| pi[i] * r[(i, k)]).sum::<f64>() / s;
    }
    let total: f64 = pi.iter().sum();
    pi.iter().map(|p| p / total).collect()
}

fn scheme_strategy() -> impl Strategy<Value = LevelScheme> {
    prop_oneof![
        Just(LevelScheme::SixLevel),
        Just(LevelScheme::Cascade),
        Just(LevelScheme::CascadeTrap)
    ]
}

prop_compose! {
    fn drives()(
        width in 0.05..5.0f64,
        powers in proptest::array::uniform3(0.0..500.0f64),
        active in proptest::array::uniform3(proptest::bool::ANY),
        laser in 0.0..0.5f64,
        scan in -30.0..40.0f64,
        scheme in scheme_strategy(),
    ) -> (IonModel, DriveConfig, f64, LevelScheme) {
        let model = IonModel { gamma_hom: width, ..IonModel::default() };
        let mut drive = DriveConfig { laser_fwhm: laser, ..DriveConfig::default() };
        for (k, t) in drive.tones.iter_mut().enumerate() {
            t.power = powers[k];
            t.active = active[k];
        }
        (model, drive, scan, scheme)
    }
}

prop_compose! {
    /// Drives with every tone on, so every ground level is pumped and the
    /// chain is irreducible.
    fn connected_drives()(
        width in 0.05..5.0f64,
        powers in proptest::array::uniform3(0.5..500.0f64),
        scan in -20.0..30.0f64,
        scheme in scheme_strategy(),
    ) -> (IonModel, DriveConfig, f64, LevelScheme) {
        let model = IonModel { gamma_hom: width, ..IonModel::default() };
        let mut drive = DriveConfig::default();
        for (k, t) in drive.tones.iter_mut().enumerate() {
            t.power = powers[k];
        }
        (model, drive, scan, scheme)
    }
}

fn generator(model: &IonModel, drive: &DriveConfig, scan: f64, scheme: LevelScheme) -> RateMatrix {
    build_rate_matrix(model, &pump_rates(model, drive, scan), scheme).unwrap()
}

fn random_populations(scheme: LevelScheme, raw: &[f64]) -> Populations {
    let v: Vec<f64> = raw[..scheme.dim()].to_vec();
    let s: f64 = v.iter().sum();
    Populations::new(scheme, v.iter().map(|x| x / s).collect()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn columns_conserve_and_offdiagonals_nonnegative((model, drive, scan, scheme) in drives()) {
        let q = generator(&model, &drive, scan, scheme);
        let m = q.matrix();
        let scale = (0..m.nrows()).map(|i| m[(i, i)].abs()).fold(0.0, f64::max).max(1.0);
        for s in q.column_sums() {
            prop_assert!(s.abs() <= 1e-9 * scale, "column sum {s} against scale {scale}");
        }
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                if i != j {
                    prop_assert!(m[(i, j)] >= 0.0);
                }
            }
        }
    }

    #[test]
    fn propagation_conserves_and_stays_positive(
        (model, drive, scan, scheme) in drives(),
        raw in proptest::collection::vec(0.01..1.0f64, 8),
        duration in 0.0..5000.0f64,
        dt in 0.5..500.0f64,
    ) {
        let q = generator(&model, &drive, scan, scheme);
        let p0 = random_populations(scheme, &raw);
        let tr = integrate(&q, &p0, duration, dt).unwrap();
        for p in &tr.populations {
            prop_assert!((p.sum() - 1.0).abs() <= 1e-9);
            prop_assert!(p.as_slice().iter().all(|v| *v >= -1e-10));
        }
    }

    #[test]
    fn steady_state_matches_gth((model, drive, scan, scheme) in connected_drives()) {
        let q = generator(&model, &drive, scan, scheme);
        let ss = steady_state(&q).unwrap();
        let oracle = gth_stationary(q.matrix());
        for (a, b) in ss.as_slice().iter().zip(&oracle) {
            prop_assert!((a - b).abs() <= 1e-9 + 1e-7 * b, "{a} vs {b}");
        }
    }

    #[test]
    fn steady_state_is_a_fixed_point((model, drive, scan, scheme) in connected_drives()) {
        let q = generator(&model, &drive, scan, scheme);
        let ss = steady_state(&q).unwrap();
        let after = Propagator::new(&q, 1000.0).apply(&ss);
        for (a, b) in ss.as_slice().iter().zip(after.as_slice()) {
            prop_assert!((a - b).abs() <= 1e-9);
        }
    }
}

#[test]
fn three_tone_saturated_six_level_matches_time_integration() {
    let model = IonModel::default();
    let drive = DriveConfig::default();
    let q = rate_matrix_at(&model, &drive, 0.0, LevelScheme::SixLevel).unwrap();
    let ss = steady_state(&q).unwrap();
    let tr = integrate(
        &q,
        &Populations::uniform_ground(LevelScheme::SixLevel),
        10_000.0,
        10_000.0,
    )
    .unwrap();
    for (a, b) in ss.as_slice().iter().zip(tr.last().as_slice()) {
        assert!((a - b).abs() <= 1e-6, "{a} vs {b}");
    }
}

#[test]
fn trapping_ratio_from_gth_oracle() {
    let model = IonModel::default();
    let scheme = LevelScheme::for_model(&model);
    let c = emission_vector(&model, scheme);
    let peak = |drive: &DriveConfig| {
        (0..=2000)
            .map(|k| {
                let q = rate_matrix_at(&model, drive, -5.0 + 0.01 * k as f64, scheme).unwrap();
                let pi = gth_stationary(q.matrix());
                pi.iter().zip(c.iter()).map(|(p, c)| p * c).sum::<f64>()
            })
            .fold(f64::MIN, f64::max)
    };
    let all = DriveConfig::default();
    let ratio = peak(&all.with_active(&["f3"]).unwrap()) / peak(&all);
    assert!(ratio < 0.1);
    assert!((ratio - 3.0587e-3).abs() <= 1e-3 * 3.0587e-3, "{ratio:e}");
}

#[test]
fn emission_follows_gth_population() {
    let model = IonModel::default();
    let drive = DriveConfig::default();
    for scheme in [
        LevelScheme::SixLevel,
        LevelScheme::Cascade,
        LevelScheme::CascadeTrap,
    ] {
        let q = rate_matrix_at(&model, &drive, 2.9, scheme).unwrap();
        let pi = gth_stationary(q.matrix());
        let expected: f64 = pi
            .iter()
            .zip(emission_vector(&model, scheme).iter())
            .map(|(p, c)| p * c)
            .sum();
        let got = emitted_photon_rate(&steady_state(&q).unwrap(), &model);
        assert!(
            (got - expected).abs() <= 1e-9 * expected,
            "{got} vs {expected}"
        );
    }
}
