//! CSV encodings of spectra, trajectories and readout results.

use std::fmt::Write as _;
use std::path::Path;

use crate::dynamics::Trajectory;
use crate::error::{Error, Result};
use crate::levels::IonModel;
use crate::pulses::ReadoutResult;
use crate::spectra::Spectrum;

/// `# key=value` metadata, a `x_<unit>,value_<unit>` header, then samples.
pub fn spectrum_to_csv(s: &Spectrum) -> String {
    let mut out = String::new();
    for (k, v) in &s.metadata {
        writeln!(out, "# {k}={}", v.replace('\n', " ")).unwrap();
    }
    writeln!(out, "x_{},value_{}", s.x_unit, s.value_unit).unwrap();
    for (x, y) in s.x.iter().zip(&s.y) {
        writeln!(out, "{x},{y}").unwrap();
    }
    out
}

pub fn spectrum_from_csv(text: &str) -> Result<Spectrum> {
    let mut metadata = Vec::new();
    let mut units: Option<(String, String)> = None;
    let (mut xs, mut ys) = (Vec::new(), Vec::new());
    for (k, line) in text.lines().enumerate() {
        let line_no = k + 1;
        let t = line.trim();
        if t.is_empty() {
            continue;
        }
        if let Some(c) = t.strip_prefix('#') {
            if let Some((key, value)) = c.trim().split_once('=') {
                metadata.push((key.trim().to_string(), value.trim().to_string()));
            }
            continue;
        }
        let fields: Vec<&str> = t.split(',').map(str::trim).collect();
        if fields.len() != 2 {
            return Err(Error::Parse {
                line: line_no,
                message: format!("expected 2 columns, found {}", fields.len()),
            });
        }
        if units.is_none() {
            let (Some(xu), Some(vu)) = (
                fields[0].strip_prefix("x_"),
                fields[1].strip_prefix("value_"),
            ) else {
                return Err(Error::Parse {
                    line: line_no,
                    message: "expected a `x_<unit>,value_<unit>` header".into(),
                });
            };
            units = Some((xu.to_string(), vu.to_string()));
            continue;
        }
        let num = |s: &str| {
            s.parse::<f64>().map_err(|_| Error::Parse {
                line: line_no,
                message: format!("bad number `{s}`"),
            })
        };
        xs.push(num(fields[0])?);
        ys.push(num(fields[1])?);
    }
    let (xu, vu) = units.ok_or(Error::Parse {
        line: 1,
        message: "no header row".into(),
    })?;
    let mut s = Spectrum::new(&xu, &vu, xs, ys)?;
    s.metadata = metadata;
    Ok(s)
}

/// `t_us, p_1 … p_N, emitted_rate`.
pub fn trajectory_to_csv(tr: &Trajectory, model: &IonModel) -> String {
    let n = tr.scheme.dim();
    let mut out = String::from("t_us");
    for k in 1..=n {
        write!(out, ",p_{k}").unwrap();
    }
    out.push_str(",emitted_rate\n");
    for ((t, p), e) in tr
        .t_us
        .iter()
        .zip(&tr.populations)
        .zip(tr.emitted_rates(model))
    {
        write!(out, "{t}").unwrap();
        for v in p.as_slice() {
            write!(out, ",{v}").unwrap();
        }
        writeln!(out, ",{e}").unwrap();
    }
    out
}

/// `cycle, counts, p1_final … pN_final`.
pub fn readout_to_csv(r: &ReadoutResult) -> String {
    let n = r
        .final_populations
        .first()
        .map_or(0, |p| p.as_slice().len());
    let mut out = String::from("cycle,counts");
    for k in 1..=n {
        write!(out, ",p{k}_final").unwrap();
    }
    out.push('\n');
    for (c, (counts, p)) in r.counts.iter().zip(&r.final_populations).enumerate() {
        write!(out, "{c},{counts}").unwrap();
        for v in p.as_slice() {
            write!(out, ",{v}").unwrap();
        }
        out.push('\n');
    }
    out
}

/// Writes through a sibling temporary file so readers never see a partial file.
pub fn write_atomic(path: &Path, contents: &str) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".partial");
    let tmp = std::path::PathBuf::from(tmp);
    std::fs::write(&tmp, contents)?;
    std::fs::rename(&tmp, path).inspect_err(|_| {
        let _ = std::fs::remove_file(&tmp);
    })?;
    Ok(())
}
