//! Fitter round trips, uncertainty calibration, determinism and
//! co-localization.

use ionspec::dynamics::{DetectionModel, DriveConfig, LevelScheme};
use ionspec::error::Result;
use ionspec::fitting::lm::minimize;
use ionspec::fitting::lorentzian::fit_lorentzian_xy;
use ionspec::fitting::{
    colocalize, fit_hyperfine_joint, fit_hyperfine_multipeak, fit_saturation, fit_spot_2d,
    lorentzian_model, render_spot, saturation_model, FitResult, LmOptions, Residuals, SpotSpec,
    Weighting,
};
use ionspec::levels::IonModel;
use ionspec::rng;
use ionspec::spectra::{excitation_spectrum, ScanRange, Spectrum};
use nalgebra::DVector;
use proptest::prelude::*;
use rayon::prelude::*;

fn close(got: f64, want: f64, scale: f64) -> bool {
    (got - want).abs() <= 1e-8 * scale
}

fn lorentzian_data(p: &[f64; 4], n: usize) -> (Vec<f64>, Vec<f64>) {
    let x: Vec<f64> = (0..n)
        .map(|k| p[0] - 5.0 * p[1] + 10.0 * p[1] * k as f64 / (n - 1) as f64)
        .collect();
    let y = x.iter().map(|x| lorentzian_model(*x, p)).collect();
    (x, y)
}

fn std_dev(v: &[f64]) -> f64 {
    let m = v.iter().sum::<f64>() / v.len() as f64;
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

struct Decay {
    t: Vec<f64>,
    y: Vec<f64>,
}

impl Residuals for Decay {
    fn residuals(&self, p: &[f64]) -> Result<DVector<f64>> {
        Ok(DVector::from_iterator(
            self.t.len(),
            self.t
                .iter()
                .zip(&self.y)
                .map(|(t, y)| p[0] * (-t / p[1]).exp() + p[2] - y),
        ))
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn lorentzian_round_trip(
        center in -10.0..10.0f64,
        fwhm in 0.05..5.0f64,
        amplitude in prop_oneof![5.0..500.0f64, -500.0..-5.0f64],
        offset in 0.0..100.0f64,
    ) {
        let truth = [center, fwhm, amplitude, offset];
        let (x, y) = lorentzian_data(&truth, 201);
        let f = fit_lorentzian_xy(&x, &y, None, Weighting::Uniform).unwrap();
        prop_assert!(close(f.values[0], center, fwhm), "{:?}", f.values);
        prop_assert!(close(f.values[1], fwhm, fwhm), "{:?}", f.values);
        prop_assert!(close(f.values[2], amplitude, amplitude.abs()), "{:?}", f.values);
        prop_assert!(close(f.values[3], offset, amplitude.abs()), "{:?}", f.values);
    }

    #[test]
    fn saturation_round_trip(
        s_max in 10.0..1000.0f64,
        p_sat in 10.0..500.0f64,
        background in 0.0..50.0f64,
    ) {
        let truth = [s_max, p_sat, background];
        let powers: Vec<f64> = [0.0, 0.1, 0.2, 0.4, 0.7, 1.0, 1.5, 2.5, 4.0, 7.0, 10.0]
            .iter()
            .map(|f| f * p_sat)
            .collect();
        let y = powers.iter().map(|p| saturation_model(*p, &truth)).collect();
        let s = Spectrum::new("pW", "cps", powers, y).unwrap();
        let f = fit_saturation(&s, Weighting::Poisson).unwrap();
        prop_assert!(close(f.values[0], s_max, s_max), "{:?}", f.values);
        prop_assert!(close(f.values[1], p_sat, p_sat), "{:?}", f.values);
        prop_assert!(close(f.values[2], background, s_max), "{:?}", f.values);
        let half = saturation_model(f.values[1], &f.values) - f.values[2];
        prop_assert!((half - f.values[0] / 2.0).abs() <= 1e-12 * s_max);
    }

    #[test]
    fn spot_round_trip(
        x in 150.0..450.0f64,
        y in 150.0..450.0f64,
        fwhm in 150.0..400.0f64,
        peak in 20.0..200.0f64,
        background in 5.0..50.0f64,
    ) {
        let spec = SpotSpec { x_nm: x, y_nm: y, fwhm_nm: fwhm, peak, background };
        let img = render_spot(&[spec], 31, 20.0, 1.0, None).unwrap();
        let f = fit_spot_2d(&img).unwrap();
        let truth = [x, y, fwhm, peak, background];
        for (got, want) in f.values.iter().zip(truth) {
            prop_assert!(close(*got, want, want), "{:?} vs {truth:?}", f.values);
        }
    }

    #[test]
    fn accepted_steps_never_raise_the_cost(
        a in 1.0..100.0f64,
        tau in 0.5..10.0f64,
        c in -5.0..5.0f64,
        start in proptest::array::uniform3(0.3..3.0f64),
    ) {
        let t: Vec<f64> = (0..50).map(|k| 0.4 * k as f64).collect();
        let y = t.iter().map(|t| a * (-t / tau).exp() + c).collect();
        let problem = Decay { t, y };
        let p0 = [a * start[0], tau * start[1], c + start[2]];
        if let Ok(out) = minimize(&problem, &p0, &LmOptions::default()) {
            for w in out.history.windows(2) {
                prop_assert!(w[1] <= w[0], "{:?}", out.history);
            }
        }
    }
}

#[test]
fn narrow_hyperfine_width_round_trip() {
    let model = IonModel::default();
    let drive = DriveConfig::default();
    let scheme = LevelScheme::for_model(&model);
    let det = DetectionModel::default();
    let s = excitation_spectrum(
        &model,
        &drive,
        &ScanRange::new(-3.0, 12.0, 0.01),
        scheme,
        &det,
        None,
    )
    .unwrap();
    let f = fit_hyperfine_multipeak(&s, &model, &drive, scheme, Weighting::Poisson, None).unwrap();
    let w = f.value("fwhm").unwrap();
    assert!((w - 0.082).abs() <= 0.002, "{w}");
    assert!(f.value("center").unwrap().abs() <= 0.002);
}

#[test]
fn joint_width_round_trip() {
    let model = IonModel {
        gamma_hom: 3.3,
        ..IonModel::default()
    };
    let scheme = LevelScheme::for_model(&model);
    let det = DetectionModel::default();
    let data: Vec<(Spectrum, DriveConfig)> = [["f1", "f2"], ["f1", "f3"], ["f2", "f3"]]
        .iter()
        .map(|pair| {
            let d = DriveConfig::default().with_active(pair).unwrap();
            let s = excitation_spectrum(
                &model,
                &d,
                &ScanRange::new(-20.0, 30.0, 0.25),
                scheme,
                &det,
                None,
            )
            .unwrap();
            (s, d)
        })
        .collect();
    let reference = IonModel::default();
    let f = fit_hyperfine_joint(&data, &reference, scheme, Weighting::Poisson, None).unwrap();
    let w = f.value("fwhm").unwrap();
    assert!((w - 3.3).abs() <= 0.2, "{w}");
}

#[test]
fn lorentzian_uncertainties_are_calibrated() {
    let truth = [0.0, 0.172, 400.0, 30.0];
    let (x, clean) = lorentzian_data(&truth, 81);
    let fits: Vec<FitResult> = (0..600u64)
        .into_par_iter()
        .map(|rep| {
            let mut r = rng::stream(97, rep);
            let y: Vec<f64> = clean
                .iter()
                .map(|m| rng::poisson(&mut r, *m) as f64)
                .collect();
            fit_lorentzian_xy(&x, &y, None, Weighting::Poisson).unwrap()
        })
        .collect();
    for k in 0..2 {
        let spread = std_dev(&fits.iter().map(|f| f.values[k]).collect::<Vec<_>>());
        let quoted = mean(&fits.iter().map(|f| f.sigmas[k]).collect::<Vec<_>>());
        assert!(
            (spread / quoted - 1.0).abs() <= 0.2,
            "parameter {k}: spread {spread}, quoted {quoted}"
        );
    }
}

#[test]
fn saturation_uncertainties_are_calibrated() {
    let truth = [60.0, 98.0, 0.0];
    let powers = vec![
        0.0, 20.0, 40.0, 60.0, 98.0, 150.0, 250.0, 500.0, 1000.0, 2000.0, 4000.0, 8000.0,
    ];
    let clean: Vec<f64> = powers
        .iter()
        .map(|p| saturation_model(*p, &truth))
        .collect();
    let integration = 10.0;
    let fits: Vec<FitResult> = (0..600u64)
        .into_par_iter()
        .map(|rep| {
            let mut r = rng::stream(98, rep);
            let y: Vec<f64> = clean
                .iter()
                .map(|m| rng::poisson(&mut r, m * integration) as f64)
                .collect();
            let s = Spectrum::new("pW", "counts", powers.clone(), y).unwrap();
            fit_saturation(&s, Weighting::Poisson).unwrap()
        })
        .collect();
    let spread = std_dev(&fits.iter().map(|f| f.values[1]).collect::<Vec<_>>());
    let quoted = mean(&fits.iter().map(|f| f.sigmas[1]).collect::<Vec<_>>());
    assert!(
        (spread / quoted - 1.0).abs() <= 0.2,
        "spread {spread}, quoted {quoted}"
    );
}

#[test]
fn spot_uncertainties_are_calibrated() {
    let spec = SpotSpec {
        x_nm: 303.0,
        y_nm: 297.0,
        ..SpotSpec::default()
    };
    let fits: Vec<FitResult> = (0..500u64)
        .into_par_iter()
        .map(|rep| {
            let img = render_spot(&[spec], 31, 20.0, 1.0, Some(rng::derive_seed(99, rep))).unwrap();
            fit_spot_2d(&img).unwrap()
        })
        .collect();
    for k in 0..2 {
        let spread = std_dev(&fits.iter().map(|f| f.values[k]).collect::<Vec<_>>());
        let quoted = mean(&fits.iter().map(|f| f.sigmas[k]).collect::<Vec<_>>());
        assert!(
            (spread / quoted - 1.0).abs() <= 0.2,
            "axis {k}: spread {spread}, quoted {quoted}"
        );
    }
}

#[test]
fn fits_are_deterministic() {
    let truth = [1.0, 0.5, 200.0, 20.0];
    let (x, clean) = lorentzian_data(&truth, 81);
    let mut r = rng::stream(5, 0);
    let y: Vec<f64> = clean
        .iter()
        .map(|m| rng::poisson(&mut r, *m) as f64)
        .collect();
    let a = fit_lorentzian_xy(&x, &y, None, Weighting::Poisson).unwrap();
    let b = fit_lorentzian_xy(&x, &y, None, Weighting::Poisson).unwrap();
    assert_eq!(a, b);

    let img = render_spot(&[SpotSpec::default()], 31, 20.0, 1.0, Some(3)).unwrap();
    assert_eq!(fit_spot_2d(&img).unwrap(), fit_spot_2d(&img).unwrap());
}

fn spot_at(x: f64, y: f64, seed: u64) -> FitResult {
    let spec = SpotSpec {
        x_nm: x,
        y_nm: y,
        ..SpotSpec::default()
    };
    fit_spot_2d(&render_spot(&[spec], 31, 20.0, 1.0, Some(seed)).unwrap()).unwrap()
}

#[test]
fn single_spot_maps_to_its_fit() {
    let f = spot_at(280.0, 310.0, 1);
    let map = colocalize(std::slice::from_ref(&f)).unwrap();
    assert_eq!(map.positions.len(), 1);
    assert!(map.distances.is_empty());
    let (x, y, sx, sy) = map.positions[0];
    assert_eq!((x, y), (f.value("x").unwrap(), f.value("y").unwrap()));
    assert_eq!((sx, sy), (f.sigma("x").unwrap(), f.sigma("y").unwrap()));
}

#[test]
fn close_emitters_are_resolved() {
    let truth = [(280.0, 300.0), (320.0, 300.0), (300.0, 335.0)];
    let fits: Vec<FitResult> = truth
        .iter()
        .enumerate()
        .map(|(k, (x, y))| spot_at(*x, *y, 40 + k as u64))
        .collect();
    let map = colocalize(&fits).unwrap();
    assert_eq!(map.distances.len(), 3);
    for &(i, j, d, sigma) in &map.distances {
        let want = (truth[i].0 - truth[j].0).hypot(truth[i].1 - truth[j].1);
        assert!(want < 250.0);
        assert!(
            (d - want).abs() <= 3.0 * sigma,
            "{i}-{j}: {d} ± {sigma} vs {want}"
        );
    }
}

#[test]
fn duplicate_spot_has_zero_distance() {
    let f = spot_at(300.0, 300.0, 8);
    let map = colocalize(&[f.clone(), f]).unwrap();
    let (_, _, d, sigma) = map.distances[0];
    assert_eq!(d, 0.0);
    assert!(sigma > 0.0);
}
