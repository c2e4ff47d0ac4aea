//! `ionspec`: simulations, fits and figure recipes for single-ion
//! spectroscopy, driven by a TOML run configuration.
//!
//! Any `--dotted.key=value` argument overrides the matching config key for
//! this invocation only.

mod error;
mod figures;
mod run;
mod svg;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use ionspec::config::{FitKind, FitTask, LocalizeTask, Override, RunConfig, Task, WeightingKind};
use ionspec::Error;

use crate::error::{CliError, CliResult};
use crate::figures::Figure;

#[derive(Debug, Parser)]
#[command(
    name = "ionspec",
    version,
    about = "Single-ion spectroscopy simulations and fits"
)]
struct Cli {
    /// TOML run configuration; built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed for every random draw.
    #[arg(long, global = true, value_parser = clap::value_parser!(u64).range(..=ionspec::rng::MAX_SEED))]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Also write an SVG plot next to each CSV.
    #[arg(long, global = true)]
    svg: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run a simulation task.
    Simulate {
        #[arg(value_enum)]
        kind: SimKind,
    },
    /// Fit a model to a data file.
    Fit {
        #[arg(value_enum)]
        model: FitModel,
        /// Spectrum CSV or scan image; taken from the config when omitted.
        input: Option<PathBuf>,
        /// Further spectra for a joint hyperfine fit.
        joint_with: Vec<PathBuf>,
        #[arg(long, value_enum)]
        weighting: Option<WeightingArg>,
        /// Starting transition width for hyperfine fits, MHz.
        #[arg(long)]
        init_width: Option<f64>,
    },
    /// Localize emitters in scan images and report pairwise distances.
    Localize { inputs: Vec<PathBuf> },
    /// Regenerate the data behind a figure.
    Figure {
        #[arg(value_enum)]
        name: Figure,
    },
    /// Check every configuration invariant without running anything.
    Validate,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SimKind {
    Spectrum,
    Holeburn,
    Saturation,
    Pulse,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum FitModel {
    Lorentzian,
    Hyperfine,
    Saturation,
    Spot,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum WeightingArg {
    Poisson,
    Uniform,
}

/// Splits `--a.b=v` overrides from the arguments clap should see.
fn split_overrides(args: Vec<String>) -> CliResult<(Vec<String>, Vec<Override>)> {
    let mut rest = Vec::new();
    let mut overrides = Vec::new();
    for a in args {
        let is_override = a
            .strip_prefix("--")
            .and_then(|s| s.split_once('='))
            .is_some_and(|(k, _)| k.contains('.'));
        if is_override {
            overrides.push(a.parse()?);
        } else {
            rest.push(a);
        }
    }
    Ok((rest, overrides))
}

fn config_text(cli: &Cli) -> CliResult<String> {
    match &cli.config {
        Some(p) => crate::error::read_file(p),
        None => Ok(String::new()),
    }
}

/// Loads the config, installs the subcommand's task and applies overrides.
fn load(
    cli: &Cli,
    kind: Option<&str>,
    task: Option<Task>,
    overrides: &[Override],
) -> CliResult<RunConfig> {
    let text = config_text(cli)?;
    let tag = |e: Error| match (&cli.config, &e) {
        (Some(p), Error::Parse { .. }) => CliError::in_file(p, e),
        _ => e.into(),
    };
    let mut cfg = match task {
        None => RunConfig::load(&text, kind, overrides).map_err(tag)?,
        Some(t) => {
            let mut base = RunConfig::load(&text, None, &[]).map_err(tag)?;
            match (&base.task, &t) {
                (Some(Task::Fit(_)), Task::Fit(_))
                | (Some(Task::Localize(_)), Task::Localize(_))
                | (None, _) => {}
                (Some(other), _) => {
                    return Err(Error::Invalid(vec![ionspec::Violation::new(
                        "task.kind",
                        format!(
                            "config holds a `{}` task but `{}` was requested",
                            other.kind(),
                            t.kind()
                        ),
                    )])
                    .into())
                }
            }
            base.task = Some(t);
            RunConfig::load(&base.to_toml(), kind, overrides)?
        }
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
        if let Some(Task::Pulse(p)) = &mut cfg.task {
            p.seed = seed;
        }
    }
    if let Some(out) = &cli.out {
        cfg.out = out.to_string_lossy().into_owned();
    }
    Ok(cfg)
}

fn fit_task(
    base: Option<&Task>,
    model: FitModel,
    input: &Option<PathBuf>,
    joint_with: &[PathBuf],
    weighting: Option<WeightingArg>,
    init_width: Option<f64>,
) -> FitTask {
    let model = match model {
        FitModel::Lorentzian => FitKind::Lorentzian,
        FitModel::Hyperfine => FitKind::Hyperfine,
        FitModel::Saturation => FitKind::Saturation,
        FitModel::Spot => FitKind::Spot,
    };
    let mut t = match base {
        Some(Task::Fit(f)) => f.clone(),
        _ => FitTask {
            model,
            input: String::new(),
            joint_with: Vec::new(),
            weighting: WeightingKind::default(),
            init_width: None,
        },
    };
    t.model = model;
    if let Some(p) = input {
        t.input = p.to_string_lossy().into_owned();
        t.joint_with = joint_with
            .iter()
            .map(|p| p.to_string_lossy().into_owned())
            .collect();
    }
    if let Some(w) = weighting {
        t.weighting = match w {
            WeightingArg::Poisson => WeightingKind::Poisson,
            WeightingArg::Uniform => WeightingKind::Uniform,
        };
    }
    if init_width.is_some() {
        t.init_width = init_width;
    }
    t
}

fn existing_task(cli: &Cli) -> CliResult<Option<Task>> {
    let text = config_text(cli)?;
    let cfg = RunConfig::load(&text, None, &[]).map_err(|e| match &cli.config {
        Some(p) => CliError::in_file(p, e),
        None => e.into(),
    })?;
    Ok(cfg.task)
}

fn execute(cli: &Cli, overrides: &[Override]) -> CliResult<Option<String>> {
    let (cfg, outcome) = match &cli.command {
        Command::Validate => {
            let text = config_text(cli)?;
            let cfg = RunConfig::load(&text, None, overrides).map_err(|e| match &cli.config {
                Some(p) => CliError::in_file(p, e),
                None => e.into(),
            })?;
            let v = cfg.violations();
            if v.is_empty() {
                println!("valid: no violations");
            } else {
                println!("{} violation(s):", v.len());
                for x in &v {
                    println!("  {x}");
                }
            }
            return Ok(None);
        }
        Command::Simulate { kind } => {
            let name = match kind {
                SimKind::Spectrum => "spectrum",
                SimKind::Holeburn => "holeburn",
                SimKind::Saturation => "saturation",
                SimKind::Pulse => "pulse",
            };
            let cfg = load(cli, Some(name), None, overrides)?;
            cfg.validate()?;
            let o = run::task(&cfg, cli.svg)?;
            (cfg, o)
        }
        Command::Fit {
            model,
            input,
            joint_with,
            weighting,
            init_width,
        } => {
            let base = existing_task(cli)?;
            let t = fit_task(
                base.as_ref(),
                *model,
                input,
                joint_with,
                *weighting,
                *init_width,
            );
            let cfg = load(cli, Some("fit"), Some(Task::Fit(t)), overrides)?;
            cfg.validate()?;
            let o = run::task(&cfg, cli.svg)?;
            (cfg, o)
        }
        Command::Localize { inputs } => {
            let mut t = match existing_task(cli)? {
                Some(Task::Localize(l)) => l,
                _ => LocalizeTask::default(),
            };
            if !inputs.is_empty() {
                t.inputs = inputs
                    .iter()
                    .map(|p| p.to_string_lossy().into_owned())
                    .collect();
            }
            let cfg = load(cli, Some("localize"), Some(Task::Localize(t)), overrides)?;
            cfg.validate()?;
            let o = run::task(&cfg, cli.svg)?;
            (cfg, o)
        }
        Command::Figure { name } => {
            let cfg = load(cli, None, None, overrides)?;
            cfg.validate()?;
            let o = figures::run(*name, &cfg, cli.svg)?;
            (cfg, o)
        }
    };
    outcome.write(std::path::Path::new(&cfg.out))?;
    Ok(Some(outcome.summary))
}

fn main() -> ExitCode {
    let args: Vec<String> = std::env::args().collect();
    let (args, overrides) = match split_overrides(args) {
        Ok(v) => v,
        Err(e) => return report(&e),
    };
    let cli = Cli::parse_from(args);
    match execute(&cli, &overrides) {
        Ok(Some(summary)) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Ok(None) => ExitCode::SUCCESS,
        Err(e) => report(&e),
    }
}

fn report(e: &CliError) -> ExitCode {
    match e.core() {
        Error::Invalid(v) => {
            let prefix = match e {
                CliError::File { path, .. } => format!("{}: ", path.display()),
                CliError::Core(_) => String::new(),
            };
            eprintln!("error: {prefix}invalid configuration");
            for x in v {
                eprintln!("  {x}");
            }
        }
        _ => eprintln!("error: {e}"),
    }
    ExitCode::from(e.exit_code())
}
