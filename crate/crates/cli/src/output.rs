//! CSV and metadata writers. Floats use the shortest round-trip form, with
//! an exponent outside [1e-5, 1e16); rows end in '\n' and every file carries
//! the run seed.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use slowfast::experiments::{ConvergenceReport, DecayFit, DiagnosticsReport};
use slowfast::poisson::PhiEstimate;
use slowfast::solvers::{MomentRow, SlowFastTrajectory};

pub struct Csv {
    path: PathBuf,
    out: BufWriter<File>,
}

impl Csv {
    pub fn create(dir: &Path, name: &str, header: &[&str]) -> std::io::Result<Self> {
        let path = dir.join(name);
        let mut out = BufWriter::new(File::create(&path)?);
        writeln!(out, "{}", header.join(","))?;
        Ok(Self { path, out })
    }

    pub fn row(&mut self, fields: &[String]) -> std::io::Result<()> {
        writeln!(self.out, "{}", fields.join(","))
    }

    pub fn finish(mut self) -> std::io::Result<PathBuf> {
        self.out.flush()?;
        Ok(self.path)
    }
}

pub fn f(v: f64) -> String {
    format!("{v:?}")
}

pub fn convergence(dir: &Path, report: &ConvergenceReport, seed: u64) -> std::io::Result<PathBuf> {
    let mut csv = Csv::create(dir, "convergence.csv", &["epsilon", "error", "se", "n_particles", "n_reps", "seed"])?;
    for p in &report.points {
        csv.row(&[
            f(p.epsilon),
            f(p.error),
            f(p.standard_error),
            report.config.n_particles.to_string(),
            report.config.n_reps.to_string(),
            seed.to_string(),
        ])?;
    }
    csv.finish()
}

pub fn decay(dir: &Path, fit: &DecayFit, seed: u64) -> std::io::Result<PathBuf> {
    let mut csv = Csv::create(dir, "ergodic_decay.csv", &["s", "abs_dev", "se", "seed"])?;
    let c = &fit.curve;
    for i in 0..c.s.len() {
        csv.row(&[f(c.s[i]), f(c.deviation[i]), f(c.standard_error[i]), seed.to_string()])?;
    }
    csv.finish()
}

pub fn diagnostics(dir: &Path, report: &DiagnosticsReport, seed: u64) -> std::io::Result<PathBuf> {
    let mut csv = Csv::create(dir, "diagnostics.csv", &["kind", "param", "value", "se", "seed"])?;
    let s = seed.to_string();
    let mut row = |kind: &str, param: f64, value: f64, se: f64| csv.row(&[kind.to_string(), f(param), f(value), f(se), s.clone()]);
    for m in &report.moments {
        row("moment4_x", m.epsilon, m.max_m4_x, 0.0)?;
        row("moment4_y", m.epsilon, m.max_m4_y, 0.0)?;
    }
    let h = &report.holder;
    for i in 0..h.abscissa.len() {
        row("holder_increment", h.abscissa[i], h.value[i], h.standard_error[i])?;
    }
    row("holder_slope", 0.0, h.slope, 0.0)?;
    let d = &report.delta;
    for (kind, curve) in [("delta_fast", &d.fast), ("delta_slow", &d.slow)] {
        for i in 0..curve.abscissa.len() {
            row(kind, curve.abscissa[i], curve.value[i], curve.standard_error[i])?;
        }
        row(&format!("{kind}_slope"), 0.0, curve.slope, 0.0)?;
    }
    row("delta_fast_two_thirds", d.delta_two_thirds, d.fast_at_two_thirds.0, d.fast_at_two_thirds.1)?;
    row("delta_slow_two_thirds", d.delta_two_thirds, d.slow_at_two_thirds.0, d.slow_at_two_thirds.1)?;
    row("decay_rate", report.decay.beta / 2.0, report.decay.rate, 0.0)?;
    row("decay_factor", report.decay.curve.s.last().copied().unwrap_or(0.0), report.decay.decay_factor, 0.0)?;
    row("contraction_ratio", 0.0, report.contraction_ratio, 0.0)?;
    csv.finish()
}

pub fn poisson(dir: &Path, estimates: &[PhiEstimate], seed: u64) -> std::io::Result<PathBuf> {
    let n = estimates.first().map_or(1, |e| e.value.len());
    let mut header = vec!["point".to_string()];
    header.extend((0..n).map(|k| format!("phi_{k}")));
    header.extend((0..n).map(|k| format!("se_{k}")));
    header.extend(["s_max".to_string(), "tail_bound".to_string(), "seed".to_string()]);
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    let mut csv = Csv::create(dir, "poisson.csv", &header)?;
    for (i, e) in estimates.iter().enumerate() {
        let mut fields = vec![i.to_string()];
        fields.extend(e.value.iter().map(|v| f(*v)));
        fields.extend(e.standard_error.iter().map(|v| f(*v)));
        fields.extend([f(e.s_max), f(e.tail_bound), seed.to_string()]);
        csv.row(&fields)?;
    }
    csv.finish()
}

pub fn clouds(dir: &Path, runs: &[SlowFastTrajectory], seed: u64) -> std::io::Result<PathBuf> {
    let (n, m) = runs.first().map_or((1, 1), |r| (r.x[0].dim(), r.y[0].dim()));
    let mut header = vec!["replicate".to_string(), "t".into(), "particle".into()];
    header.extend((0..n).map(|k| format!("x{k}")));
    header.extend((0..m).map(|k| format!("y{k}")));
    header.push("seed".into());
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    let mut csv = Csv::create(dir, "clouds.csv", &header)?;
    for run in runs {
        for (c, t) in run.times.iter().enumerate() {
            for p in 0..run.x[c].len() {
                let mut fields = vec![run.replicate.to_string(), f(*t), p.to_string()];
                fields.extend(run.x[c].row(p).iter().map(|v| f(*v)));
                fields.extend(run.y[c].row(p).iter().map(|v| f(*v)));
                fields.push(seed.to_string());
                csv.row(&fields)?;
            }
        }
    }
    csv.finish()
}

/// Moment track averaged over replicates.
pub fn moments(dir: &Path, runs: &[SlowFastTrajectory], seed: u64) -> std::io::Result<PathBuf> {
    let mut csv = Csv::create(dir, "moments.csv", &["t", "m2_x", "m4_x", "m2_y", "m4_y", "seed"])?;
    let reps = runs.len() as f64;
    for c in 0..runs[0].moments.len() {
        let avg = |pick: fn(&MomentRow) -> f64| runs.iter().map(|r| pick(&r.moments[c])).sum::<f64>() / reps;
        csv.row(&[
            f(runs[0].moments[c].t),
            f(avg(|r| r.m2_x)),
            f(avg(|r| r.m4_x)),
            f(avg(|r| r.m2_y)),
            f(avg(|r| r.m4_y)),
            seed.to_string(),
        ])?;
    }
    csv.finish()
}

pub fn table(dir: &Path, name: &str, rows: &[(String, String)], seed: u64) -> std::io::Result<PathBuf> {
    let mut csv = Csv::create(dir, name, &["quantity", "value", "seed"])?;
    for (k, v) in rows {
        csv.row(&[k.clone(), v.clone(), seed.to_string()])?;
    }
    csv.finish()
}

/// Effective configuration in the input format, followed by a `[results]`
/// section. Feeding the file back with `--config` reproduces the run.
pub fn metadata(
    dir: &Path,
    echo: &BTreeMap<(String, String), String>,
    results: &[(String, String)],
) -> std::io::Result<PathBuf> {
    let path = dir.join("run_metadata.txt");
    let mut out = BufWriter::new(File::create(&path)?);
    let mut current: Option<&str> = None;
    for ((section, key), value) in echo {
        if current != Some(section.as_str()) {
            if current.is_some() {
                writeln!(out)?;
            }
            writeln!(out, "[{section}]")?;
            current = Some(section);
        }
        writeln!(out, "{key} = {value}")?;
    }
    writeln!(out)?;
    writeln!(out, "[results]")?;
    for (k, v) in results {
        writeln!(out, "{k} = {v}")?;
    }
    out.flush()?;
    Ok(path)
}
