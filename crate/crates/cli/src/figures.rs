//! Named recipes that regenerate each published figure's data.

use std::fmt::Write as _;

use clap::ValueEnum;
use ionspec::config::RunConfig;
use ionspec::dynamics::p_sat_for_half_saturation;
use ionspec::fitting::{
    envelope_fwhm, fit_hyperfine_joint, fit_saturation, saturation_model, HyperfineForward,
    Weighting,
};
use ionspec::io::spectrum_to_csv;
use ionspec::levels::IonModel;
use ionspec::pulses::{prepare_state, readout_matrix, PrepSettings, REFERENCE_PUMP_POWER};
use ionspec::spectra::{
    emitted_spectrum, excitation_spectrum, holeburn_simulate, saturation_curve, HoleBurnSetup,
    NoiseSpec, ScanRange,
};

use crate::error::CliResult;
use crate::run::{fit_csv, label_hole_comb, spectrum_plot, top_peaks, Outcome};
use crate::svg::{Plot, Series};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Figure {
    /// Hole-burning spectrum with labelled side holes and anti-holes.
    #[value(name = "fig1b")]
    Fig1b,
    /// Three-tone spectrum at 82 kHz and at 5.3 MHz transition width.
    #[value(name = "fig3a")]
    Fig3a,
    /// Noisy saturation curve and its fit.
    #[value(name = "fig3b")]
    Fig3b,
    /// Two-tone spectra at 3.3 MHz width and their joint fit.
    #[value(name = "fig3c")]
    Fig3c,
    /// Single-tone versus three-tone spectrum.
    #[value(name = "figS1D")]
    FigS1d,
    /// Two-tone spectra at four transition widths.
    #[value(name = "figS2")]
    FigS2,
    /// Prepared-level versus readout-tone count matrix.
    #[value(name = "fig4b")]
    Fig4b,
}

const TONE_PAIRS: [[&str; 2]; 3] = [["f1", "f2"], ["f1", "f3"], ["f2", "f3"]];

fn with_width(model: &IonModel, gamma_hom: f64) -> IonModel {
    IonModel {
        gamma_hom,
        ..model.clone()
    }
}

pub fn run(fig: Figure, cfg: &RunConfig, svg: bool) -> CliResult<Outcome> {
    match fig {
        Figure::Fig1b => fig1b(cfg, svg),
        Figure::Fig3a => fig3a(cfg, svg),
        Figure::Fig3b => fig3b(cfg, svg),
        Figure::Fig3c => fig3c(cfg, svg),
        Figure::FigS1d => fig_s1d(cfg, svg),
        Figure::FigS2 => fig_s2(cfg, svg),
        Figure::Fig4b => fig4b(cfg, svg),
    }
}

fn fig1b(cfg: &RunConfig, svg: bool) -> CliResult<Outcome> {
    let setup = HoleBurnSetup::default();
    let s = holeburn_simulate(&cfg.ion, &setup)?;
    let s = label_hole_comb(s, cfg, setup.burn.offset);
    let list = |kind: &str| {
        s.metadata
            .iter()
            .filter(|(k, _)| k == kind)
            .filter_map(|(_, v)| v.split_whitespace().next())
            .collect::<Vec<_>>()
            .join(" ")
    };
    let summary = format!(
        "fig1b: side holes at {} MHz, anti-holes at {} MHz",
        list("side_hole"),
        list("anti_hole")
    );
    Ok(Outcome::new(summary)
        .file("fig1b.csv", spectrum_to_csv(&s))
        .plot(svg, "fig1b", || spectrum_plot("hole burning", &s)))
}

fn fig3a(cfg: &RunConfig, svg: bool) -> CliResult<Outcome> {
    let scan = ScanRange::new(-20.0, 30.0, 0.02);
    let scheme = cfg.scheme();
    let narrow = excitation_spectrum(
        &with_width(&cfg.ion, 0.082),
        &cfg.drive,
        &scan,
        scheme,
        &cfg.detection,
        None,
    )?;
    let broad = excitation_spectrum(
        &with_width(&cfg.ion, 5.3),
        &cfg.drive,
        &scan,
        scheme,
        &cfg.detection,
        None,
    )?;
    // The broadened wings reach far past the plotted scan.
    let wide: Vec<f64> = (0..=4000).map(|k| -200.0 + 0.1 * k as f64).collect();
    let wide_y = emitted_spectrum(&with_width(&cfg.ion, 5.3), &cfg.drive, &wide, scheme)?;
    let envelope = envelope_fwhm(&wide, &wide_y, 0.0)
        .map_or("not resolved".to_string(), |w| format!("{w:.3} MHz"));
    let summary = format!(
        "fig3a: 82 kHz peaks at {} MHz, 5.3 MHz envelope FWHM {envelope}",
        top_peaks(&narrow, 3)
            .iter()
            .map(|x| format!("{x:+.2}"))
            .collect::<Vec<_>>()
            .join(" ")
    );
    Ok(Outcome::new(summary)
        .file("fig3a_82kHz.csv", spectrum_to_csv(&narrow))
        .file("fig3a_5.3MHz.csv", spectrum_to_csv(&broad))
        .plot(svg, "fig3a", || {
            Plot::new(
                "three-tone excitation spectrum",
                "detuning (MHz)",
                "signal (cps)",
            )
            .with(Series::line("82 kHz", &narrow.x, &narrow.y))
            .with(Series::line("5.3 MHz", &broad.x, &broad.y))
        }))
}

fn fig3b(cfg: &RunConfig, svg: bool) -> CliResult<Outcome> {
    let scheme = cfg.scheme();
    // Scale the saturation parameter so the emitted curve is half-saturated
    // at the configured p_sat.
    let mut drive = cfg.drive.clone();
    drive.p_sat = p_sat_for_half_saturation(&cfg.ion, scheme, cfg.drive.p_sat);
    let powers = [
        0.0, 20.0, 40.0, 60.0, 98.0, 150.0, 250.0, 500.0, 1000.0, 2000.0, 4000.0, 8000.0,
    ];
    let noise = NoiseSpec {
        seed: cfg.seed,
        integration_s: 10.0,
    };
    let s = saturation_curve(
        &cfg.ion,
        &drive,
        &powers,
        0.0,
        scheme,
        &cfg.detection,
        Some(noise),
    )?;
    let f = fit_saturation(&s, Weighting::Poisson)?;
    let fine: Vec<f64> = (0..=400).map(|k| 8000.0 * k as f64 / 400.0).collect();
    let model: Vec<f64> = fine
        .iter()
        .map(|p| saturation_model(*p, &f.values))
        .collect();
    let summary = format!(
        "fig3b: s_max {:.3} ± {:.3} cps, p_sat {:.2} ± {:.2} pW, background {:.3} cps",
        f.values[0], f.sigmas[0], f.values[1], f.sigmas[1], f.values[2]
    );
    Ok(Outcome::new(summary)
        .file("fig3b.csv", spectrum_to_csv(&s))
        .file("fig3b_fit.csv", fit_csv(&f))
        .plot(svg, "fig3b", || {
            Plot::new("saturation", "power (pW)", "signal (cps)")
                .with(Series::points("data", &s.x, &s.y))
                .with(Series::line("fit", &fine, &model))
        }))
}

fn fig3c(cfg: &RunConfig, svg: bool) -> CliResult<Outcome> {
    let model = with_width(&cfg.ion, 3.3);
    let scheme = cfg.scheme();
    let scan = ScanRange::new(-20.0, 30.0, 0.25);
    let mut sets = Vec::new();
    for (k, pair) in TONE_PAIRS.iter().enumerate() {
        let drive = cfg.drive.with_active(pair)?;
        let noise = NoiseSpec {
            seed: ionspec::rng::derive_seed(cfg.seed, k as u64),
            integration_s: 10.0,
        };
        let s = excitation_spectrum(&model, &drive, &scan, scheme, &cfg.detection, Some(noise))?;
        sets.push((s, drive));
    }
    let f = fit_hyperfine_joint(&sets, &cfg.ion, scheme, Weighting::Poisson, None)?;
    let summary = format!(
        "fig3c: joint width {:.3} ± {:.3} MHz, shift {:+.3} MHz, reduced chi2 {:.3}",
        f.values[0], f.sigmas[0], f.values[1], f.reduced_chi2
    );
    let mut out = Outcome::new(summary).file("fig3c_fit.csv", fit_csv(&f));
    let mut plot = Plot::new("two-tone spectra", "detuning (MHz)", "signal (cps)");
    for (k, (s, drive)) in sets.iter().enumerate() {
        let tag = TONE_PAIRS[k].concat();
        out = out.file(format!("fig3c_{tag}.csv"), spectrum_to_csv(s));
        if svg {
            let p = [
                f.values[0],
                f.values[1],
                f.values[2 + 2 * k],
                f.values[3 + 2 * k],
            ];
            let curve = HyperfineForward::new(&cfg.ion, drive, scheme).curve(&s.x, &p)?;
            plot = plot
                .with(Series::points(format!("{tag} data"), &s.x, &s.y))
                .with(Series::line(format!("{tag} fit"), &s.x, &curve));
        }
    }
    Ok(out.plot(svg, "fig3c", || plot))
}

fn fig_s1d(cfg: &RunConfig, svg: bool) -> CliResult<Outcome> {
    let model = with_width(&cfg.ion, 0.082);
    let scan = ScanRange::new(-5.0, 15.0, 0.02);
    let scheme = cfg.scheme();
    let three = excitation_spectrum(&model, &cfg.drive, &scan, scheme, &cfg.detection, None)?;
    let single = excitation_spectrum(
        &model,
        &cfg.drive.with_active(&["f3"])?,
        &scan,
        scheme,
        &cfg.detection,
        None,
    )?;
    let bg = cfg.detection.background;
    let max = |s: &ionspec::spectra::Spectrum| s.y.iter().cloned().fold(f64::MIN, f64::max);
    let ratio = (max(&single) - bg) / (max(&three) - bg);
    let summary = format!(
        "figS1D: three-tone peak {:.4} cps, single-tone peak {:.4} cps, ratio above background {ratio:.4e}",
        max(&three),
        max(&single)
    );
    Ok(Outcome::new(summary)
        .file("figS1D_three_tone.csv", spectrum_to_csv(&three))
        .file("figS1D_single_tone.csv", spectrum_to_csv(&single))
        .plot(svg, "figS1D", || {
            Plot::new("trapping", "detuning (MHz)", "signal (cps)")
                .with(Series::line("f1+f2+f3", &three.x, &three.y))
                .with(Series::line("f3", &single.x, &single.y))
        }))
}

fn fig_s2(cfg: &RunConfig, svg: bool) -> CliResult<Outcome> {
    let scan = ScanRange::new(-20.0, 30.0, 0.1);
    let scheme = cfg.scheme();
    let widths = [0.082, 1.0, 2.0, 5.0];
    let mut out = Outcome::default();
    let mut summary = String::from("figS2:");
    for pair in TONE_PAIRS {
        let tag = pair.concat();
        let drive = cfg.drive.with_active(&pair)?;
        let mut plot = Plot::new(
            &format!("{} + {}", pair[0], pair[1]),
            "detuning (MHz)",
            "signal (cps)",
        );
        let mut maxima = Vec::new();
        for w in widths {
            let s = excitation_spectrum(
                &with_width(&cfg.ion, w),
                &drive,
                &scan,
                scheme,
                &cfg.detection,
                None,
            )?;
            maxima.push(format!(
                "{:.3}",
                s.y.iter().cloned().fold(f64::MIN, f64::max)
            ));
            plot = plot.with(Series::line(format!("{w} MHz"), &s.x, &s.y));
            out = out.file(format!("figS2_{tag}_{w}MHz.csv"), spectrum_to_csv(&s));
        }
        write!(summary, " {tag} maxima [{}] cps;", maxima.join(", ")).unwrap();
        out = out.plot(svg, &format!("figS2_{tag}"), || plot);
    }
    out.summary = summary.trim_end_matches(';').to_string();
    Ok(out)
}

fn fig4b(cfg: &RunConfig, svg: bool) -> CliResult<Outcome> {
    let model = with_width(&cfg.ion, 3.3);
    let settings = PrepSettings::default();
    let seq = prepare_state(&model, &cfg.drive, 0, REFERENCE_PUMP_POWER, 0.9, &settings)?;
    let pump_us = seq.segments[0].duration_us;
    let cycle_us = pump_us + settings.delay_us + settings.readout_us;
    let cycles = (100e6 / cycle_us).floor() as usize;
    let m = readout_matrix(
        &model,
        &cfg.drive,
        REFERENCE_PUMP_POWER,
        pump_us,
        &cfg.detection,
        cycles,
        cfg.seed,
        &settings,
    )?;
    let mut csv = String::from("prepared_level,readout_level,counts,sigma,expected\n");
    for r in 0..3 {
        for c in 0..3 {
            writeln!(
                csv,
                "{},{},{},{},{}",
                r + 1,
                c + 1,
                m.counts[r][c],
                m.sigma(r, c),
                m.expected[r][c]
            )
            .unwrap();
        }
    }
    let sig: Vec<String> = (0..3)
        .map(|r| format!("{:.2}", m.row_significance(r)))
        .collect();
    let summary = format!(
        "fig4b: pump {pump_us:.1} µs, {cycles} cycles per cell, diagonal counts [{}, {}, {}], row significance [{}] σ",
        m.counts[0][0],
        m.counts[1][1],
        m.counts[2][2],
        sig.join(", ")
    );
    Ok(Outcome::new(summary)
        .file("fig4b.csv", csv)
        .plot(svg, "fig4b", || {
            let mut p = Plot::new("readout matrix", "readout level", "counts");
            let x = [1.0, 2.0, 3.0];
            for r in 0..3 {
                let y: Vec<f64> = m.counts[r].iter().map(|c| *c as f64).collect();
                p = p.with(Series::points(format!("prepared g{}", r + 1), &x, &y));
            }
            p
        }))
}
