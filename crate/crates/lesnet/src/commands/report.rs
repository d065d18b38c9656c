//! `report`: merges energy traces and spectra of several runs into comparison tables.

use std::path::{Path, PathBuf};

use crate::config::{join, KeyValues};
use crate::error::{usage, CliError, CliResult};
use crate::io::{fmt_f64, write_atomic, Table};

#[derive(Debug, Clone, PartialEq)]
pub struct ReportSettings {
    /// `runs = dir, dir, ...`: directories holding `ke.csv`, `spectra.csv`, `manifest.txt`.
    pub runs: Vec<PathBuf>,
    /// `labels` default to each run's `mode`, made unique by suffixing the position.
    pub labels: Vec<String>,
    /// `spectrum_times` default to the last spectrum time of the first run.
    pub spectrum_times: Vec<f64>,
}

impl ReportSettings {
    pub fn from_kv(kv: &KeyValues, dir: &Path) -> CliResult<Self> {
        let runs: Vec<PathBuf> = kv.list::<String>("runs", vec![])?.into_iter().map(|r| dir.join(r)).collect();
        let s = Self { runs, labels: kv.list("labels", vec![])?, spectrum_times: kv.list("spectrum_times", vec![])? };
        kv.finish()?;
        if s.runs.is_empty() {
            return Err(usage("`runs` lists no run directories"));
        }
        if !s.labels.is_empty() && s.labels.len() != s.runs.len() {
            return Err(usage("`labels` must name every run"));
        }
        Ok(s)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportOutput {
    pub ke: Table,
    pub spectra: Table,
    /// Whether any run had to be interpolated onto the common grid.
    pub interpolated: bool,
}

struct RunData {
    label: String,
    ke: Vec<(f64, f64)>,
    /// `(t, energies by shell)`
    spectra: Vec<(f64, Vec<f64>)>,
}

fn mode_of(dir: &Path) -> CliResult<String> {
    let path = dir.join("manifest.txt");
    let text = std::fs::read_to_string(&path).map_err(crate::error::io_err(&path))?;
    let kv = KeyValues::parse(&text)?;
    Ok(kv.raw("mode").unwrap_or("run").to_string())
}

fn load(dir: &Path, label: String) -> CliResult<RunData> {
    let kp = dir.join("ke.csv");
    let t = Table::read(&kp)?;
    let (ts, es) = (t.floats(0, &kp)?, t.floats(1, &kp)?);
    let sp = dir.join("spectra.csv");
    let s = Table::read(&sp)?;
    let (st, sk, se) = (s.floats(0, &sp)?, s.floats(1, &sp)?, s.floats(2, &sp)?);
    let mut spectra: Vec<(f64, Vec<f64>)> = Vec::new();
    for ((t, k), e) in st.into_iter().zip(sk).zip(se) {
        if spectra.last().map_or(true, |(lt, _)| *lt != t) {
            spectra.push((t, Vec::new()));
        }
        let shells = &mut spectra.last_mut().expect("pushed above").1;
        let k = k as usize;
        if shells.len() <= k {
            shells.resize(k + 1, 0.0);
        }
        shells[k] = e;
    }
    Ok(RunData { label, ke: ts.into_iter().zip(es).collect(), spectra })
}

const TIME_TOL: f64 = 1e-9;

/// Linear interpolation on a sorted grid; `None` outside it.
fn interp(pts: &[(f64, f64)], t: f64) -> Option<f64> {
    let i = pts.partition_point(|p| p.0 < t);
    if i < pts.len() && (pts[i].0 - t).abs() <= TIME_TOL {
        return Some(pts[i].1);
    }
    match (i.checked_sub(1).map(|j| pts[j]), pts.get(i)) {
        (Some(a), Some(b)) => Some(a.1 + (b.1 - a.1) * (t - a.0) / (b.0 - a.0)),
        _ => None,
    }
}

pub fn merge(settings: &ReportSettings) -> CliResult<ReportOutput> {
    let mut runs = Vec::new();
    for (i, dir) in settings.runs.iter().enumerate() {
        let label = match settings.labels.get(i) {
            Some(l) => l.clone(),
            None => mode_of(dir)?,
        };
        runs.push(load(dir, label)?);
    }
    if settings.labels.is_empty() {
        let names: Vec<String> = runs.iter().map(|r| r.label.clone()).collect();
        for (i, r) in runs.iter_mut().enumerate() {
            if names.iter().filter(|n| **n == r.label).count() > 1 {
                r.label = format!("{}_{i}", r.label);
            }
        }
    }
    let mut interpolated = false;

    let grid: Vec<f64> = runs[0].ke.iter().map(|p| p.0).collect();
    let mut header = vec!["t".to_string()];
    header.extend(runs.iter().map(|r| r.label.clone()));
    let mut ke = Table::new(&header);
    for r in &runs[1..] {
        let same = r.ke.len() == grid.len() && r.ke.iter().zip(&grid).all(|(p, t)| (p.0 - t).abs() <= TIME_TOL);
        if !same {
            log::warn!("report: {} uses a different time grid; interpolating onto the first run's", r.label);
            interpolated = true;
        }
    }
    for &t in &grid {
        let mut row = vec![fmt_f64(t)];
        for r in &runs {
            row.push(interp(&r.ke, t).map_or_else(String::new, fmt_f64));
        }
        ke.push(row);
    }

    let times = if settings.spectrum_times.is_empty() {
        vec![runs[0].spectra.last().map(|s| s.0).ok_or_else(|| usage("first run has no spectra"))?]
    } else {
        settings.spectrum_times.clone()
    };
    let mut sheader = vec!["t".to_string(), "k".to_string()];
    sheader.extend(runs.iter().map(|r| r.label.clone()));
    let mut spectra = Table::new(&sheader);
    for &t in &times {
        let mut cols = Vec::new();
        for r in &runs {
            let (shells, interp_used) = spectrum_at(&r.spectra, t).ok_or_else(|| {
                CliError::Runtime(format!("run {} has no spectra to compare at t = {t}", r.label))
            })?;
            if interp_used {
                log::warn!("report: {} has no spectrum at t = {t}; using the nearest or interpolated one", r.label);
                interpolated = true;
            }
            cols.push(shells);
        }
        let kmax = cols.iter().map(Vec::len).max().unwrap_or(0);
        for k in 0..kmax {
            let mut row = vec![fmt_f64(t), k.to_string()];
            row.extend(cols.iter().map(|c| c.get(k).map_or_else(String::new, |e| fmt_f64(*e))));
            spectra.push(row);
        }
    }
    Ok(ReportOutput { ke, spectra, interpolated })
}

/// Spectrum at `t`, interpolated between the bracketing sample times when needed.
fn spectrum_at(series: &[(f64, Vec<f64>)], t: f64) -> Option<(Vec<f64>, bool)> {
    if let Some((_, s)) = series.iter().find(|(s, _)| (s - t).abs() <= TIME_TOL) {
        return Some((s.clone(), false));
    }
    let i = series.partition_point(|(s, _)| *s < t);
    let (a, b) = match (i.checked_sub(1).map(|j| &series[j]), series.get(i)) {
        (Some(a), Some(b)) => (a, b),
        (Some(x), None) | (None, Some(x)) => return Some((x.1.clone(), true)),
        (None, None) => return None,
    };
    let w = (t - a.0) / (b.0 - a.0);
    let n = a.1.len().max(b.1.len());
    let at = |v: &Vec<f64>, k: usize| v.get(k).copied().unwrap_or(0.0);
    Some(((0..n).map(|k| (1.0 - w) * at(&a.1, k) + w * at(&b.1, k)).collect(), true))
}

pub fn run(settings: &ReportSettings, out: &Path) -> CliResult<ReportOutput> {
    let rep = merge(settings)?;
    rep.ke.write(&out.join("ke_compare.csv"))?;
    rep.spectra.write(&out.join("spectra_compare.csv"))?;
    let runs: Vec<String> = settings.runs.iter().map(|p| p.display().to_string()).collect();
    let manifest = format!(
        "runs = {}\nlabels = {}\ninterpolated = {}\n",
        runs.join(", "),
        join(&rep.ke.header[1..]),
        rep.interpolated
    );
    write_atomic(&out.join("manifest.txt"), manifest.as_bytes())?;
    Ok(rep)
}
