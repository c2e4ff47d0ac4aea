//! Config and CSV encodings survive a round trip unchanged.

use ionspec::config::{
    FitKind, FitTask, LocalizeTask, RunConfig, SaturationTask, SpectrumTask, Task, WeightingKind,
};
use ionspec::dynamics::DetectionModel;
use ionspec::dynamics::{integrate, rate_matrix_at, DriveConfig, LevelScheme, Populations};
use ionspec::fitting::{render_spot, FitResult, ScanImage, SpotSpec};
use ionspec::io::{readout_to_csv, spectrum_from_csv, spectrum_to_csv, trajectory_to_csv};
use ionspec::levels::{default_pr_yso, IonModel};
use ionspec::pulses::{run_sequence, PulseSequence, Segment};
use ionspec::spectra::{ScanRange, Spectrum};
use ionspec::{rng, Error};
use proptest::prelude::*;

fn bits(m: &IonModel) -> Vec<u64> {
    let mut v: Vec<f64> = m.ground_splittings.to_vec();
    v.extend(m.excited_splittings);
    v.extend([
        m.tau_excited,
        m.tau_intermediate,
        m.tau_trap.unwrap_or(f64::NAN),
        m.branch_to_intermediate,
        m.branch_to_ground,
        m.branch_to_trap,
        m.gamma_hom,
    ]);
    v.extend(m.ground_decay_branching);
    v.extend(m.transition_strengths.iter().flatten());
    v.into_iter().map(f64::to_bits).collect()
}

#[test]
fn default_ion_model_round_trips_bit_identically() {
    let m = default_pr_yso();
    let text = toml::to_string(&m).unwrap();
    let back: IonModel = toml::from_str(&text).unwrap();
    assert_eq!(bits(&m), bits(&back));
    assert_eq!(m, back);

    let cfg = RunConfig::default();
    let again = RunConfig::load(&cfg.to_toml(), None, &[]).unwrap();
    assert_eq!(bits(&again.ion), bits(&m));
    assert_eq!(again, cfg);
}

#[test]
fn missing_trap_is_spelled_out() {
    let cfg = RunConfig::load("[ion]\ntau_trap = \"none\"\n", None, &[]).unwrap();
    assert_eq!(cfg.ion.tau_trap, None);
    assert!(cfg.to_toml().contains("tau_trap = \"none\""));
    let overridden = RunConfig::load("", None, &["ion.tau_trap=none".parse().unwrap()]).unwrap();
    assert_eq!(overridden.ion.tau_trap, None);
    assert!(RunConfig::load("[ion]\ntau_trap = \"never\"\n", None, &[]).is_err());
}

#[test]
fn seeds_are_limited_to_toml_integers() {
    let cfg = RunConfig {
        seed: rng::MAX_SEED,
        ..RunConfig::default()
    };
    assert_eq!(RunConfig::load(&cfg.to_toml(), None, &[]).unwrap(), cfg);
    let too_big = RunConfig {
        seed: rng::MAX_SEED + 1,
        ..RunConfig::default()
    };
    assert!(too_big.violations().iter().any(|v| v.key == "seed"));
    assert!(matches!(
        RunConfig::load(&too_big.to_toml(), None, &[]),
        Err(Error::Parse { .. })
    ));
}

#[test]
fn ion_model_keys_are_the_field_names() {
    let text = toml::to_string(&default_pr_yso()).unwrap();
    for key in [
        "ground_splittings",
        "excited_splittings",
        "tau_excited",
        "tau_intermediate",
        "tau_trap",
        "branch_to_intermediate",
        "branch_to_ground",
        "branch_to_trap",
        "gamma_hom",
        "ground_decay_branching",
        "transition_strengths",
    ] {
        assert!(
            text.lines().any(|l| l.starts_with(&format!("{key} ="))),
            "{key} missing from\n{text}"
        );
    }
}

#[test]
fn pulse_block_uses_segment_tables() {
    let cfg = RunConfig::load(
        r#"
[task]
kind = "pulse"
cycles = 10

[[task.segment]]
duration_us = 344.0
tones = ["f1", "f2"]

[[task.segment]]
duration_us = 378.0
tones = ["f3"]
gate = true
"#,
        None,
        &[],
    )
    .unwrap();
    let Some(Task::Pulse(seq)) = &cfg.task else {
        panic!("expected a pulse task")
    };
    assert_eq!(seq.segments.len(), 2);
    assert!(seq.segments[1].gate && !seq.segments[0].gate);
    assert!(cfg.to_toml().contains("[[task.segment]]"));
    assert_eq!(RunConfig::load(&cfg.to_toml(), None, &[]).unwrap(), cfg);
}

fn finite() -> impl Strategy<Value = f64> {
    prop_oneof![
        -1e6..1e6f64,
        -1.0..1.0f64,
        (-300i32..300).prop_map(|e| 1.2345 * 10f64.powi(e))
    ]
}

fn tasks() -> impl Strategy<Value = Option<Task>> {
    prop_oneof![
        Just(None),
        (-50.0..0.0f64, 0.001..1.0f64).prop_map(|(start, step)| Some(Task::Spectrum(
            SpectrumTask {
                scan: ScanRange::new(start, start + 40.0, step),
                ..SpectrumTask::default()
            }
        ))),
        proptest::collection::vec(0.0..1e4f64, 1..20).prop_map(|powers| Some(Task::Saturation(
            SaturationTask {
                powers,
                ..SaturationTask::default()
            }
        ))),
        (1usize..5000, 0..=rng::MAX_SEED, 0.01..1000.0f64).prop_map(|(cycles, seed, d)| Some(
            Task::Pulse(PulseSequence {
                segments: vec![
                    Segment::new(d, &["f1"], Some(d / 3.0), false),
                    Segment::new(d, &["f3"], None, true)
                ],
                cycles,
                seed,
                scan_detuning: 2.9,
            })
        )),
        ("[a-z]{1,8}\\.csv", proptest::option::of(0.01..10.0f64)).prop_map(
            |(input, init_width)| Some(Task::Fit(FitTask {
                model: FitKind::Hyperfine,
                input,
                joint_with: vec!["b.csv".into()],
                weighting: WeightingKind::Uniform,
                init_width,
            }))
        ),
        proptest::collection::vec("[a-z]{1,8}\\.txt", 0..4)
            .prop_map(|inputs| Some(Task::Localize(LocalizeTask { inputs }))),
    ]
}

prop_compose! {
    fn configs()(
        seed in 0..=rng::MAX_SEED,
        out in "[a-z0-9_/]{1,12}",
        scheme in proptest::option::of(prop_oneof![Just(LevelScheme::SixLevel), Just(LevelScheme::Cascade), Just(LevelScheme::CascadeTrap)]),
        gamma in 0.001..10.0f64,
        tau in 0.1..1e4f64,
        trap in proptest::option::of(1.0..1e5f64),
        powers in proptest::array::uniform3(0.0..1e4f64),
        active in proptest::array::uniform3(any::<bool>()),
        laser in 0.0..1.0f64,
        background in 0.0..1e3f64,
        task in tasks(),
    ) -> RunConfig {
        let mut cfg = RunConfig { seed, out, scheme, task, ..RunConfig::default() };
        cfg.ion.gamma_hom = gamma;
        cfg.ion.tau_excited = tau;
        cfg.ion.tau_trap = trap;
        for (k, t) in cfg.drive.tones.iter_mut().enumerate() {
            t.power = powers[k];
            t.active = active[k];
        }
        cfg.drive.laser_fwhm = laser;
        cfg.detection.background = background;
        cfg
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn run_config_round_trips(cfg in configs()) {
        let text = cfg.to_toml();
        let back = RunConfig::load(&text, None, &[]).unwrap();
        prop_assert_eq!(&back, &cfg);
        prop_assert_eq!(back.to_toml(), text);
    }

    #[test]
    fn spectrum_csv_round_trips(
        points in proptest::collection::vec((finite(), finite()), 1..60),
        meta in proptest::collection::vec(("[a-z_]{1,10}", "[ -~]{0,20}"), 0..5),
    ) {
        let mut points = points;
        points.sort_by(|a, b| a.0.total_cmp(&b.0));
        points.dedup_by(|a, b| a.0 == b.0);
        let (x, y): (Vec<f64>, Vec<f64>) = points.into_iter().unzip();
        let mut s = Spectrum::new("MHz", "cps", x, y).unwrap();
        for (k, v) in meta {
            s = s.with_meta(&k, v.trim());
        }
        let back = spectrum_from_csv(&spectrum_to_csv(&s)).unwrap();
        prop_assert_eq!(back.x_unit.as_str(), "MHz");
        prop_assert_eq!(back.value_unit.as_str(), "cps");
        prop_assert_eq!(back.x.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), s.x.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
        prop_assert_eq!(back.y.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), s.y.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
        prop_assert_eq!(back.metadata, s.metadata);
    }

    #[test]
    fn scan_image_text_round_trips(
        x in 100.0..500.0f64,
        y in 100.0..500.0f64,
        seed in proptest::option::of(any::<u64>()),
        pitch in 5.0..50.0f64,
    ) {
        let spec = SpotSpec { x_nm: x, y_nm: y, ..SpotSpec::default() };
        let img = render_spot(&[spec], 17, pitch, 0.5, seed).unwrap();
        let back = ScanImage::from_text(&img.to_text()).unwrap();
        prop_assert_eq!(back, img);
    }
}

#[test]
fn spectrum_csv_layout() {
    let s = Spectrum::new("MHz", "cps", vec![0.0, 0.5], vec![10.0, 12.5])
        .unwrap()
        .with_meta("seed", 7);
    assert_eq!(
        spectrum_to_csv(&s),
        "# seed=7\nx_MHz,value_cps\n0,10\n0.5,12.5\n"
    );
}

#[test]
fn trajectory_csv_has_one_column_per_state() {
    let model = IonModel::default();
    for scheme in [
        LevelScheme::SixLevel,
        LevelScheme::Cascade,
        LevelScheme::CascadeTrap,
    ] {
        let q = rate_matrix_at(&model, &DriveConfig::default(), 0.0, scheme).unwrap();
        let tr = integrate(&q, &Populations::uniform_ground(scheme), 10.0, 2.5).unwrap();
        let csv = trajectory_to_csv(&tr, &model);
        let mut lines = csv.lines();
        let header: Vec<String> = std::iter::once("t_us".to_string())
            .chain((1..=scheme.dim()).map(|k| format!("p_{k}")))
            .chain(std::iter::once("emitted_rate".to_string()))
            .collect();
        assert_eq!(lines.next().unwrap(), header.join(","));
        let rows: Vec<&str> = lines.collect();
        assert_eq!(rows.len(), tr.t_us.len());
        assert!(rows
            .iter()
            .all(|r| r.split(',').count() == scheme.dim() + 2));
    }
}

#[test]
fn readout_csv_has_one_row_per_cycle() {
    let seq = PulseSequence {
        segments: vec![Segment::new(10.0, &["f1"], None, true)],
        cycles: 3,
        seed: 1,
        scan_detuning: 0.0,
    };
    let r = run_sequence(
        &IonModel::default(),
        &DriveConfig::default(),
        &seq,
        &DetectionModel::default(),
        LevelScheme::Cascade,
    )
    .unwrap();
    let csv = readout_to_csv(&r);
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(
        lines[0],
        "cycle,counts,p1_final,p2_final,p3_final,p4_final,p5_final,p6_final,p7_final"
    );
    assert_eq!(lines.len(), 4);
    assert!(lines[1].starts_with(&format!("0,{},", r.counts[0])));
}

#[test]
fn fit_result_csv_row_matches_its_header() {
    let f = FitResult {
        names: vec!["center".into(), "fwhm".into()],
        values: vec![0.1, 0.172],
        sigmas: vec![0.006, 0.01],
        residual_norm: 2.0,
        reduced_chi2: 1.1,
        status: "converged".into(),
        iterations: 9,
        extras: vec![("envelope_fwhm".into(), 5.6)],
    };
    let header = f.csv_header();
    assert_eq!(
        header,
        "status,iterations,residual_norm,reduced_chi2,center,center_sigma,fwhm,fwhm_sigma,envelope_fwhm"
    );
    let row = f.csv_row();
    assert_eq!(row.split(',').count(), header.split(',').count());
    let values: Vec<f64> = row.split(',').skip(4).map(|v| v.parse().unwrap()).collect();
    assert_eq!(values, [0.1, 0.006, 0.172, 0.01, 5.6]);
    assert!(f.report().contains("fwhm"));
}
