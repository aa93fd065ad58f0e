//! Evaluation quantities and report export.
//!
//! Every report directory holds deterministic files (`metrics.csv`,
//! `history.csv`, `sv_decay.csv` or `report.json`) and a single
//! `timing.csv`, the only artifact that differs between identical runs.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::thin_svd;
use crate::operators::SamplingOperator;
use crate::relax::IterRecord;

/// `√(mean over idx of (x − truth)²)`, unweighted.
pub fn rms(x: &[f64], truth: &[f64], idx: &[usize]) -> Result<f64> {
    if x.len() != truth.len() {
        return Err(Error::Dimension(format!(
            "{} values against {} true values",
            x.len(),
            truth.len()
        )));
    }
    if idx.is_empty() {
        return Err(Error::Argument("rms over an empty index set".into()));
    }
    let mut sum = 0.0;
    for &i in idx {
        let e = *x
            .get(i)
            .ok_or_else(|| Error::Dimension(format!("index {i} out of range {}", x.len())))?
            - truth[i];
        sum += e * e;
    }
    Ok((sum / idx.len() as f64).sqrt())
}

/// `‖𝒜(X) − b‖₂ − σ`, signed.
pub fn terminal_feasibility(x: &DMatrix<f64>, b: &[f64], sampler: &SamplingOperator, sigma: f64) -> Result<f64> {
    Ok(crate::relax::misfit(x.as_slice(), b, sampler)? - sigma)
}

/// Leading `count` singular values, non-increasing. Counts beyond the
/// smaller dimension are clipped.
pub fn sv_decay(x: &DMatrix<f64>, count: usize) -> Result<Vec<f64>> {
    let s = thin_svd(x)?.s;
    Ok(s.iter().take(count).copied().collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryRow {
    pub iter: usize,
    pub objective: f64,
    pub misfit: f64,
    pub gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub solver: String,
    pub rms_obs: f64,
    pub rms_int: f64,
    pub terminal_feasibility: f64,
    pub iterations: usize,
    pub converged: bool,
    pub failed: bool,
    /// Iterations between coupling updates, when the solver has a schedule.
    pub schedule_period: Option<usize>,
    pub sv_decay: Vec<f64>,
    pub history: Vec<HistoryRow>,
    /// Excluded from the deterministic files.
    #[serde(skip)]
    pub wall_time: f64,
    #[serde(skip)]
    pub seconds: Vec<f64>,
}

impl EvalReport {
    pub fn history_from(records: &[IterRecord]) -> (Vec<HistoryRow>, Vec<f64>) {
        let rows = records
            .iter()
            .enumerate()
            .map(|(i, r)| HistoryRow {
                iter: i + 1,
                objective: r.objective,
                misfit: r.misfit,
                gap: r.gap,
            })
            .collect();
        (rows, records.iter().map(|r| r.seconds).collect())
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rms_obs >= 0.0) || !(self.rms_int >= 0.0) {
            return Err(Error::Numerical("negative or undefined rms".into()));
        }
        if self.sv_decay.windows(2).any(|w| w[1] > w[0]) {
            return Err(Error::Numerical("singular values are not non-increasing".into()));
        }
        if let Some(period) = self.schedule_period {
            if let Some(i) = first_increase(&self.history, period, 1e-9) {
                return Err(Error::Numerical(format!(
                    "objective increases at iteration {} within a schedule segment",
                    self.history[i].iter
                )));
            }
        }
        Ok(())
    }
}

/// First position where the objective rises by more than `rel_slack`
/// relative to its predecessor inside a segment of `period` iterations.
pub fn first_increase(history: &[HistoryRow], period: usize, rel_slack: f64) -> Option<usize> {
    (1..history.len()).find(|&i| {
        let same_segment = (history[i].iter - 1) / period.max(1) == (history[i - 1].iter - 1) / period.max(1);
        let (a, b) = (history[i - 1].objective, history[i].objective);
        same_segment && b > a + rel_slack * a.abs()
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportFormat {
    Csv,
    Json,
}

/// Decimal with 17 significant digits.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn write(path: &Path, content: &str) -> Result<()> {
    fs::write(path, content).map_err(|e| Error::io(path, e))
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Writes `report` into directory `dir`.
pub fn export_report(report: &EvalReport, dir: &Path, format: ReportFormat) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();
    match format {
        ReportFormat::Csv => {
            let mut m = String::from("metric,value\n");
            let _ = writeln!(m, "solver,{}", report.solver);
            let _ = writeln!(m, "rms_obs,{}", fmt_f64(report.rms_obs));
            let _ = writeln!(m, "rms_int,{}", fmt_f64(report.rms_int));
            let _ = writeln!(m, "terminal_feasibility,{}", fmt_f64(report.terminal_feasibility));
            let _ = writeln!(m, "iterations,{}", report.iterations);
            let _ = writeln!(m, "converged,{}", report.converged);
            let _ = writeln!(m, "failed,{}", report.failed);
            if let Some(p) = report.schedule_period {
                let _ = writeln!(m, "schedule_period,{p}");
            }
            let path = dir.join("metrics.csv");
            write(&path, &m)?;
            written.push(path);

            let mut h = String::from("iter,objective,misfit,gap\n");
            for r in &report.history {
                let _ = writeln!(
                    h,
                    "{},{},{},{}",
                    r.iter,
                    fmt_f64(r.objective),
                    fmt_f64(r.misfit),
                    fmt_f64(r.gap)
                );
            }
            let path = dir.join("history.csv");
            write(&path, &h)?;
            written.push(path);

            let path = dir.join("sv_decay.csv");
            write(&path, &decay_csv(&report.sv_decay))?;
            written.push(path);
        }
        ReportFormat::Json => {
            let mut text = serde_json::to_string_pretty(&JsonReport::from(report))
                .map_err(|e| Error::Numerical(format!("json encoding: {e}")))?;
            text.push('\n');
            let path = dir.join("report.json");
            write(&path, &text)?;
            written.push(path);
        }
    }
    let mut t = String::from("iter,seconds\n");
    for (i, s) in report.seconds.iter().enumerate() {
        let _ = writeln!(t, "{},{}", i + 1, fmt_f64(*s));
    }
    let _ = writeln!(t, "total,{}", fmt_f64(report.wall_time));
    let path = dir.join("timing.csv");
    write(&path, &t)?;
    written.push(path);
    Ok(written)
}

/// `index,singular_value` rows, 1-based.
pub fn decay_csv(values: &[f64]) -> String {
    let mut d = String::from("index,singular_value\n");
    for (i, s) in values.iter().enumerate() {
        let _ = writeln!(d, "{},{}", i + 1, fmt_f64(*s));
    }
    d
}

/// JSON mirror of [`EvalReport`] with floats as 17-digit strings so the
/// text is independent of the encoder's shortest-representation choice.
#[derive(Serialize, Deserialize)]
struct JsonReport {
    solver: String,
    rms_obs: String,
    rms_int: String,
    terminal_feasibility: String,
    iterations: usize,
    converged: bool,
    failed: bool,
    schedule_period: Option<usize>,
    sv_decay: Vec<String>,
    history: Vec<[String; 4]>,
}

impl From<&EvalReport> for JsonReport {
    fn from(r: &EvalReport) -> Self {
        Self {
            solver: r.solver.clone(),
            rms_obs: fmt_f64(r.rms_obs),
            rms_int: fmt_f64(r.rms_int),
            terminal_feasibility: fmt_f64(r.terminal_feasibility),
            iterations: r.iterations,
            converged: r.converged,
            failed: r.failed,
            schedule_period: r.schedule_period,
            sv_decay: r.sv_decay.iter().map(|v| fmt_f64(*v)).collect(),
            history: r
                .history
                .iter()
                .map(|h| {
                    [
                        h.iter.to_string(),
                        fmt_f64(h.objective),
                        fmt_f64(h.misfit),
                        fmt_f64(h.gap),
                    ]
                })
                .collect(),
        }
    }
}

fn num<T: std::str::FromStr>(path: &Path, s: &str) -> Result<T> {
    s.trim()
        .parse()
        .map_err(|_| Error::parse(path, format!("not a number: `{s}`")))
}

/// Reads a report written by [`export_report`] and validates it.
pub fn load_report(dir: &Path, format: ReportFormat) -> Result<EvalReport> {
    let mut report = match format {
        ReportFormat::Json => {
            let path = dir.join("report.json");
            let j: JsonReport = serde_json::from_str(&read(&path)?).map_err(|e| Error::parse(&path, e.to_string()))?;
            let mut history = Vec::with_capacity(j.history.len());
            for h in &j.history {
                history.push(HistoryRow {
                    iter: num(&path, &h[0])?,
                    objective: num(&path, &h[1])?,
                    misfit: num(&path, &h[2])?,
                    gap: num(&path, &h[3])?,
                });
            }
            EvalReport {
                solver: j.solver,
                rms_obs: num(&path, &j.rms_obs)?,
                rms_int: num(&path, &j.rms_int)?,
                terminal_feasibility: num(&path, &j.terminal_feasibility)?,
                iterations: j.iterations,
                converged: j.converged,
                failed: j.failed,
                schedule_period: j.schedule_period,
                sv_decay: j.sv_decay.iter().map(|s| num(&path, s)).collect::<Result<_>>()?,
                history,
                wall_time: 0.0,
                seconds: Vec::new(),
            }
        }
        ReportFormat::Csv => {
            let path = dir.join("metrics.csv");
            let text = read(&path)?;
            let mut report = EvalReport {
                solver: String::new(),
                rms_obs: f64::NAN,
                rms_int: f64::NAN,
                terminal_feasibility: f64::NAN,
                iterations: 0,
                converged: false,
                failed: false,
                schedule_period: None,
                sv_decay: Vec::new(),
                history: Vec::new(),
                wall_time: 0.0,
                seconds: Vec::new(),
            };
            for line in text.lines().skip(1) {
                let (k, v) = line
                    .split_once(',')
                    .ok_or_else(|| Error::parse(&path, format!("malformed row `{line}`")))?;
                match k {
                    "solver" => report.solver = v.to_string(),
                    "rms_obs" => report.rms_obs = num(&path, v)?,
                    "rms_int" => report.rms_int = num(&path, v)?,
                    "terminal_feasibility" => report.terminal_feasibility = num(&path, v)?,
                    "iterations" => report.iterations = num(&path, v)?,
                    "converged" => report.converged = num(&path, v)?,
                    "failed" => report.failed = num(&path, v)?,
                    "schedule_period" => report.schedule_period = Some(num(&path, v)?),
                    other => return Err(Error::parse(&path, format!("unknown metric `{other}`"))),
                }
            }
            let path = dir.join("history.csv");
            for line in read(&path)?.lines().skip(1) {
                let f: Vec<&str> = line.split(',').collect();
                if f.len() != 4 {
                    return Err(Error::parse(&path, format!("expected 4 fields in `{line}`")));
                }
                report.history.push(HistoryRow {
                    iter: num(&path, f[0])?,
                    objective: num(&path, f[1])?,
                    misfit: num(&path, f[2])?,
                    gap: num(&path, f[3])?,
                });
            }
            let path = dir.join("sv_decay.csv");
            for line in read(&path)?.lines().skip(1) {
                let (_, v) = line
                    .split_once(',')
                    .ok_or_else(|| Error::parse(&path, format!("malformed row `{line}`")))?;
                report.sv_decay.push(num(&path, v)?);
            }
            report
        }
    };
    let timing = dir.join("timing.csv");
    if let Ok(text) = fs::read_to_string(&timing) {
        for line in text.lines().skip(1) {
            if let Some((k, v)) = line.split_once(',') {
                let v: f64 = num(&timing, v)?;
                if k == "total" {
                    report.wall_time = v;
                } else {
                    report.seconds.push(v);
                }
            }
        }
    }
    report.validate()?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Rng;

    #[test]
    fn rms_cases() {
        let truth = vec![1.0, 2.0, 3.0];
        assert_eq!(rms(&truth, &truth, &[0, 1, 2]).unwrap(), 0.0);
        let shifted: Vec<f64> = truth.iter().map(|v| v + 0.1).collect();
        assert!((rms(&shifted, &truth, &[0, 1, 2]).unwrap() - 0.1).abs() < 1e-15);
        let x = vec![1.3, 2.0, 3.0];
        assert!((rms(&x, &truth, &[0, 1, 2]).unwrap() - 0.03f64.sqrt()).abs() < 1e-15);
        assert!(rms(&x, &truth, &[]).is_err());
    }

    #[test]
    fn rms_partition_identity() {
        let mut rng = Rng::new(4);
        let x: Vec<f64> = (0..50).map(|_| rng.gaussian(0.0, 1.0)).collect();
        let t: Vec<f64> = (0..50).map(|_| rng.gaussian(0.0, 1.0)).collect();
        let a: Vec<usize> = (0..50).filter(|i| i % 3 == 0).collect();
        let b: Vec<usize> = (0..50).filter(|i| i % 3 != 0).collect();
        let all: Vec<usize> = (0..50).collect();
        let (ra, rb) = (rms(&x, &t, &a).unwrap(), rms(&x, &t, &b).unwrap());
        let mixed = ((a.len() as f64 * ra * ra + b.len() as f64 * rb * rb) / 50.0).sqrt();
        assert!((rms(&x, &t, &all).unwrap() - mixed).abs() < 1e-14);
    }

    #[test]
    fn feasibility_cases() {
        let sampler = SamplingOperator::from_flags(2, 1, vec![true, true]).unwrap();
        let x = DMatrix::from_column_slice(2, 1, &[1.0, 2.0]);
        assert_eq!(terminal_feasibility(&x, &[1.0, 2.0], &sampler, 0.0).unwrap(), 0.0);
        let y = DMatrix::from_column_slice(2, 1, &[2.4, 3.2]);
        let f = terminal_feasibility(&y, &[0.0, 0.0], &sampler, 3.719).unwrap();
        assert!((f - 0.281).abs() < 1e-12);
        let z = DMatrix::from_column_slice(2, 1, &[0.0, 0.0]);
        assert!(terminal_feasibility(&z, &[0.1, 0.0], &sampler, 1.0).unwrap() < 0.0);
    }

    #[test]
    fn decay_cases() {
        let id = DMatrix::<f64>::identity(4, 4);
        assert_eq!(sv_decay(&id, 4).unwrap(), vec![1.0; 4]);
        let u = DMatrix::from_column_slice(3, 1, &[1.0, 2.0, 2.0]);
        let v = DMatrix::from_column_slice(2, 1, &[3.0, 4.0]);
        let d = sv_decay(&(&u * v.transpose()), 2).unwrap();
        assert!((d[0] - 15.0).abs() < 1e-12 && d[1].abs() < 1e-12);
        assert_eq!(sv_decay(&id, 10).unwrap().len(), 4);
    }

    #[test]
    fn decay_is_transpose_invariant() {
        let mut rng = Rng::new(5);
        let x = DMatrix::from_fn(6, 4, |_, _| rng.gaussian(0.0, 1.0));
        let a = sv_decay(&x, 4).unwrap();
        let b = sv_decay(&x.transpose(), 4).unwrap();
        for (p, q) in a.iter().zip(&b) {
            assert!((p - q).abs() <= 1e-12 * a[0]);
        }
    }

    fn sample_report(n_hist: usize) -> EvalReport {
        let mut rng = Rng::new(6);
        let mut obj = 10.0;
        let history = (0..n_hist)
            .map(|i| {
                obj *= rng.uniform(0.5, 1.0);
                HistoryRow {
                    iter: i + 1,
                    objective: obj,
                    misfit: rng.uniform(0.0, 3.0),
                    gap: rng.uniform(0.0, 1.0) / 3.0,
                }
            })
            .collect();
        EvalReport {
            solver: "vr".into(),
            rms_obs: 0.1 / 3.0,
            rms_int: std::f64::consts::PI / 10.0,
            terminal_feasibility: -1.18e-8,
            iterations: n_hist,
            converged: false,
            failed: false,
            schedule_period: Some(30),
            sv_decay: vec![3.0, 2.0 / 3.0, 1e-17],
            history,
            wall_time: 1.5,
            seconds: (0..n_hist).map(|i| i as f64 * 0.1).collect(),
        }
    }

    #[test]
    fn round_trip_both_formats() {
        for format in [ReportFormat::Csv, ReportFormat::Json] {
            let dir = tempfile::tempdir().unwrap();
            let report = sample_report(7);
            export_report(&report, dir.path(), format).unwrap();
            let back = load_report(dir.path(), format).unwrap();
            assert_eq!(back, report);
            assert_eq!(back.wall_time, report.wall_time);
            assert_eq!(back.seconds, report.seconds);
        }
    }

    #[test]
    fn empty_history_is_header_only() {
        let dir = tempfile::tempdir().unwrap();
        export_report(&sample_report(0), dir.path(), ReportFormat::Csv).unwrap();
        assert_eq!(
            fs::read_to_string(dir.path().join("history.csv")).unwrap(),
            "iter,objective,misfit,gap\n"
        );
    }

    #[test]
    fn exports_are_byte_identical() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let report = sample_report(5);
        for format in [ReportFormat::Csv, ReportFormat::Json] {
            export_report(&report, a.path(), format).unwrap();
            let mut other = report.clone();
            other.wall_time = 99.0;
            export_report(&other, b.path(), format).unwrap();
        }
        for name in ["metrics.csv", "history.csv", "sv_decay.csv", "report.json"] {
            let x = fs::read(a.path().join(name)).unwrap();
            let y = fs::read(b.path().join(name)).unwrap();
            assert_eq!(x, y, "{name}");
            assert!(!x.contains(&b'\r'));
        }
    }

    #[test]
    fn validator_rejects_rising_objective_within_segment() {
        let mut report = sample_report(40);
        report.history[10].objective = report.history[9].objective * 1.01;
        assert!(report.validate().is_err());
        let mut ok = sample_report(40);
        ok.history[30].objective = ok.history[29].objective * 2.0;
        assert!(ok.validate().is_ok());
        let mut unscheduled = report.clone();
        unscheduled.schedule_period = None;
        assert!(unscheduled.validate().is_ok());
    }

    #[test]
    fn seventeen_significant_digits() {
        let v = 0.1 + 0.2;
        let s = fmt_f64(v);
        assert_eq!(s.parse::<f64>().unwrap().to_bits(), v.to_bits());
        assert_eq!(s.split('e').next().unwrap().replace('.', "").len(), 17);
    }
}
