//! The `generate`, `solve`, `compare` and `svd` commands.
//!
//! Each command reads a [`RunConfig`], writes into an output directory and
//! returns the paths it wrote plus any warnings. `timing.csv` files hold
//! wall times; every other file is a function of the config alone.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::grid::{compute_source_energy, matricize_with, ResidualTensor, SamplingMask};
use crate::io::{from_toml, read_tensor, to_toml, write_tensor, write_text, TensorFile};
use crate::metrics::{decay_csv, export_report, fmt_f64, load_report, sv_decay, EvalReport, ReportFormat};
use crate::pipeline::{LayoutChoice, Problem, SolverName, SolverSpec};
use crate::synthetic::misfit_budget;

pub const TRUTH_FILE: &str = "truth.csv";
pub const OBSERVED_FILE: &str = "observed.csv";
pub const BUDGET_FILE: &str = "budget.toml";
pub const CONFIG_FILE: &str = "config.toml";
pub const RUN_FILE: &str = "run.toml";
pub const COMPLETED_FILE: &str = "completed.csv";
pub const ERROR_FILE: &str = "abs_error.csv";
pub const COMPARISON_FILE: &str = "comparison.csv";
pub const TIMING_FILE: &str = "timing.csv";

/// What a command produced.
#[derive(Debug, Default)]
pub struct Outcome {
    pub written: Vec<PathBuf>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Budget {
    pub n_obs: usize,
    pub nominal_sigma: f64,
    pub sigma: f64,
    /// Misfit of the noise-free truth; only known for synthetic data.
    pub true_misfit: Option<f64>,
}

/// Metadata written next to every solver output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunRecord {
    pub solver: SolverName,
    pub layout: LayoutChoice,
    pub report_format: ReportFormat,
    /// Budget the solver targeted.
    pub sigma: f64,
    pub data_hash: String,
    pub warnings: Vec<String>,
}

/// Generated or loaded data with its content hash.
#[derive(Debug)]
pub struct DataSet {
    pub observed: TensorFile,
    pub truth: Option<TensorFile>,
    pub budget: Option<Budget>,
    pub hash: String,
}

impl DataSet {
    /// Reads `observed.csv`, and `truth.csv` and `budget.toml` when present.
    pub fn load(dir: &Path) -> Result<Self> {
        let observed_path = dir.join(OBSERVED_FILE);
        let truth_path = dir.join(TRUTH_FILE);
        let budget_path = dir.join(BUDGET_FILE);
        let mut hasher = Sha256::new();
        let observed = read_tensor(&observed_path)?;
        hash_file(&mut hasher, &observed_path)?;
        hash_file(&mut hasher, &crate::io::sidecar_path(&observed_path))?;
        let truth = if truth_path.exists() {
            hash_file(&mut hasher, &truth_path)?;
            Some(read_tensor(&truth_path)?)
        } else {
            None
        };
        let budget = if budget_path.exists() {
            hash_file(&mut hasher, &budget_path)?;
            Some(from_toml(&budget_path, &crate::io::read_text(&budget_path)?)?)
        } else {
            None
        };
        let hash = hasher.finalize().iter().fold(String::new(), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        });
        Ok(Self {
            observed,
            truth,
            budget,
            hash,
        })
    }

    /// The budget from `budget.toml`, or from the observation count and
    /// `nominal_sigma`.
    pub fn sigma(&self, nominal_sigma: f64) -> Result<f64> {
        match &self.budget {
            Some(b) => Ok(b.sigma),
            None => misfit_budget(self.observed.mask.count(), nominal_sigma),
        }
    }
}

fn hash_file(hasher: &mut Sha256, path: &Path) -> Result<()> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    hasher.update(path.file_name().map(|n| n.as_encoded_bytes()).unwrap_or_default());
    hasher.update((bytes.len() as u64).to_le_bytes());
    hasher.update(&bytes);
    Ok(())
}

fn write_config(config: &RunConfig, dir: &Path, out: &mut Outcome) -> Result<()> {
    let path = dir.join(CONFIG_FILE);
    write_text(&path, &config.to_toml()?)?;
    out.written.push(path);
    Ok(())
}

/// Writes the synthetic scenario of `config` into `dir`.
pub fn generate(config: &RunConfig, dir: &Path) -> Result<Outcome> {
    let mut out = Outcome::default();
    let sc = config.scenario.generate()?;
    let observed = dir.join(OBSERVED_FILE);
    write_tensor(&observed, &sc.observed.tensor, &sc.mask, &sc.observed.station_sigmas)?;
    let truth = dir.join(TRUTH_FILE);
    write_tensor(&truth, &sc.truth, &sc.mask, &sc.observed.station_sigmas)?;
    let budget = Budget {
        n_obs: sc.mask.count(),
        nominal_sigma: config.scenario.noise.nominal_sigma,
        sigma: sc.sigma,
        true_misfit: Some(sc.observed.true_misfit),
    };
    let budget_path = dir.join(BUDGET_FILE);
    write_text(&budget_path, &to_toml(&budget)?)?;
    out.written.extend([
        observed.clone(),
        crate::io::sidecar_path(&observed),
        truth.clone(),
        crate::io::sidecar_path(&truth),
        budget_path,
    ]);
    write_config(config, dir, &mut out)?;
    Ok(out)
}

/// `config.data_dir`, or freshly generated data under `out/data`.
pub fn obtain_data(config: &RunConfig, out_dir: &Path, out: &mut Outcome) -> Result<DataSet> {
    let dir = match &config.data_dir {
        Some(d) => config.resolve(d),
        None => {
            let d = out_dir.join("data");
            out.written.extend(generate(config, &d)?.written);
            d
        }
    };
    DataSet::load(&dir)
}

fn problem(config: &RunConfig, data: &DataSet) -> Result<Problem> {
    let sigma = match config.solve.sigma {
        Some(s) => s,
        None => data.sigma(config.scenario.noise.nominal_sigma)?,
    };
    Problem::new(
        data.observed.tensor.clone(),
        data.observed.mask.clone(),
        data.truth.as_ref().map(|t| t.tensor.clone()),
        sigma,
        config.solve.layout,
    )
}

/// Row-major CSV of a dense matrix, no header.
pub fn matrix_csv(m: &DMatrix<f64>) -> String {
    let mut s = String::with_capacity(24 * m.len());
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            if j > 0 {
                s.push(',');
            }
            s.push_str(&fmt_f64(m[(i, j)]));
        }
        s.push('\n');
    }
    s
}

/// Solves, then writes tensors, factors, report and run record into `dir`.
fn run_into(
    config: &RunConfig,
    problem: &Problem,
    data: &DataSet,
    spec: &SolverSpec,
    dir: &Path,
    out: &mut Outcome,
) -> Result<EvalReport> {
    let (result, report) = problem.run(spec, config.solve.decay_count)?;
    let sigmas = &data.observed.station_sigmas;
    let completed = problem.to_tensor(&result.w)?;
    let path = dir.join(COMPLETED_FILE);
    write_tensor(&path, &completed, &problem.mask, sigmas)?;
    out.written.push(path);
    if let Some(truth) = &problem.truth {
        let diff: Vec<f64> = completed
            .values()
            .iter()
            .zip(truth.values())
            .map(|(a, b)| (a - b).abs())
            .collect();
        let t = ResidualTensor::new(completed.grid().clone(), completed.sources().clone(), diff)?;
        let path = dir.join(ERROR_FILE);
        write_tensor(&path, &t, &problem.mask, sigmas)?;
        out.written.push(path);
    }
    if let Some(f) = &result.factors {
        for (name, m) in [("factor_l.csv", &f.l), ("factor_r.csv", &f.r)] {
            let path = dir.join(name);
            write_text(&path, &matrix_csv(m))?;
            out.written.push(path);
        }
    }
    out.written.extend(export_report(&report, dir, config.report_format)?);
    let record = RunRecord {
        solver: spec.name(),
        layout: config.solve.layout,
        report_format: config.report_format,
        sigma: spec.target_sigma(problem.sigma),
        data_hash: data.hash.clone(),
        warnings: result.warnings.clone(),
    };
    let path = dir.join(RUN_FILE);
    write_text(&path, &to_toml(&record)?)?;
    out.written.push(path);
    write_config(config, dir, out)?;
    out.warnings
        .extend(result.warnings.iter().map(|w| format!("{}: {w}", spec.name())));
    Ok(report)
}

/// Runs `config.solve.solver` on the data.
pub fn solve(config: &RunConfig, dir: &Path) -> Result<Outcome> {
    let mut out = Outcome::default();
    let data = obtain_data(config, dir, &mut out)?;
    let problem = problem(config, &data)?;
    let spec = config.solver_spec(config.solve.solver);
    let report = run_into(config, &problem, &data, &spec, dir, &mut out)?;
    if report.failed {
        return Err(Error::SolverFailed(format!(
            "{} did not converge; outputs in {}",
            spec.name(),
            dir.display()
        )));
    }
    Ok(out)
}

/// One row of the comparison table.
#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonRow {
    pub algorithm: String,
    pub terminal_feasibility: f64,
    pub rms_obs: f64,
    pub rms_int: f64,
    pub failed: bool,
    pub time_s: f64,
}

fn row(report: &EvalReport) -> ComparisonRow {
    ComparisonRow {
        algorithm: report.solver.clone(),
        terminal_feasibility: report.terminal_feasibility,
        rms_obs: report.rms_obs,
        rms_int: report.rms_int,
        failed: report.failed,
        time_s: report.wall_time,
    }
}

fn read_wall_time(dir: &Path) -> Result<f64> {
    let path = dir.join(TIMING_FILE);
    let text = crate::io::read_text(&path)?;
    text.lines()
        .find_map(|l| l.strip_prefix("total,"))
        .and_then(|v| v.trim().parse().ok())
        .ok_or_else(|| Error::parse(&path, "missing `total` row"))
}

/// The `vr` row has the strictly smallest `rms_int`.
pub fn vr_is_best(rows: &[ComparisonRow]) -> Result<()> {
    let vr = rows
        .iter()
        .find(|r| r.algorithm == SolverName::Vr.as_str())
        .ok_or_else(|| Error::Check("no vr run to check".into()))?;
    match rows
        .iter()
        .filter(|r| r.algorithm != vr.algorithm)
        .find(|r| !(vr.rms_int < r.rms_int))
    {
        Some(r) => Err(Error::Check(format!(
            "vr rms_int {:.6e} is not below {} ({:.6e})",
            vr.rms_int, r.algorithm, r.rms_int
        ))),
        None => Ok(()),
    }
}

/// Runs `config.compare.solvers` on one data set, or tabulates the
/// existing runs in `config.compare.runs`, which must share a data hash.
pub fn compare(config: &RunConfig, dir: &Path) -> Result<(Outcome, Vec<ComparisonRow>)> {
    let mut out = Outcome::default();
    let mut rows = Vec::new();
    if config.compare.runs.is_empty() {
        let data = obtain_data(config, dir, &mut out)?;
        let problem = problem(config, &data)?;
        for &name in &config.compare.solvers {
            let spec = config.solver_spec(name);
            let report = run_into(config, &problem, &data, &spec, &dir.join(name.as_str()), &mut out)?;
            rows.push(row(&report));
        }
    } else {
        let mut hashes = BTreeMap::new();
        for run in &config.compare.runs {
            let run = config.resolve(run);
            let path = run.join(RUN_FILE);
            let record: RunRecord = from_toml(&path, &crate::io::read_text(&path)?)?;
            hashes.insert(record.data_hash.clone(), run.clone());
            if hashes.len() > 1 {
                let dirs: Vec<String> = hashes.values().map(|p| p.display().to_string()).collect();
                return Err(Error::Argument(format!(
                    "runs were made on different data: {}",
                    dirs.join(", ")
                )));
            }
            let mut report = load_report(&run, record.report_format)?;
            report.wall_time = read_wall_time(&run)?;
            rows.push(row(&report));
        }
    }

    let mut table = String::from("algorithm,terminal_feasibility,rms_obs,rms_int\n");
    let mut timing = String::from("algorithm,time_s\n");
    for r in &rows {
        let _ = writeln!(
            table,
            "{},{},{},{}",
            r.algorithm,
            fmt_f64(r.terminal_feasibility),
            fmt_f64(r.rms_obs),
            fmt_f64(r.rms_int)
        );
        let _ = writeln!(timing, "{},{}", r.algorithm, fmt_f64(r.time_s));
    }
    let path = dir.join(COMPARISON_FILE);
    write_text(&path, &table)?;
    out.written.push(path);
    let path = dir.join(TIMING_FILE);
    write_text(&path, &timing)?;
    out.written.push(path);
    write_config(config, dir, &mut out)?;

    let failed: Vec<&str> = rows.iter().filter(|r| r.failed).map(|r| r.algorithm.as_str()).collect();
    if !failed.is_empty() {
        return Err(Error::SolverFailed(format!("did not converge: {}", failed.join(", "))));
    }
    if config.compare.assert_ordering {
        vr_is_best(&rows)?;
    }
    Ok((out, rows))
}

/// Masked copy: unobserved entries set to zero.
fn masked(tensor: &ResidualTensor, mask: &SamplingMask) -> Result<ResidualTensor> {
    let values = tensor
        .values()
        .iter()
        .zip(mask.flags())
        .map(|(&v, &m)| if m { v } else { 0.0 })
        .collect();
    ResidualTensor::new(tensor.grid().clone(), tensor.sources().clone(), values)
}

/// Singular values of a matricized tensor with the sources ordered by
/// observed energy.
pub fn tensor_decay(
    tensor: &ResidualTensor,
    mask: &SamplingMask,
    layout: LayoutChoice,
    count: usize,
) -> Result<Vec<f64>> {
    let order = compute_source_energy(tensor, mask)?.order().to_vec();
    let (_, _, ns) = tensor.shape();
    let view = matricize_with(tensor, &order, layout.layout(ns))?;
    sv_decay(view.matrix(), count)
}

/// Writes `sv_<input>.csv` for every entry of `config.svd.inputs`.
pub fn svd(config: &RunConfig, dir: &Path) -> Result<Outcome> {
    let mut out = Outcome::default();
    let needs_data = config.svd.inputs.iter().any(|i| i == "truth" || i == "observed");
    let data = if needs_data {
        Some(obtain_data(config, dir, &mut out)?)
    } else {
        None
    };
    for input in &config.svd.inputs {
        let (label, tensor, mask) = match (input.as_str(), &data) {
            ("truth", Some(d)) => {
                let t = d
                    .truth
                    .as_ref()
                    .ok_or_else(|| Error::Argument("data directory has no truth.csv".into()))?;
                ("truth".to_string(), t.tensor.clone(), d.observed.mask.clone())
            }
            ("observed", Some(d)) => (
                "observed".to_string(),
                masked(&d.observed.tensor, &d.observed.mask)?,
                d.observed.mask.clone(),
            ),
            (path, _) => {
                let path = config.resolve(Path::new(path));
                let f = read_tensor(&path)?;
                let label = path
                    .file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_else(|| "input".into());
                (label, f.tensor, f.mask)
            }
        };
        let (nx, ny, ns) = tensor.shape();
        let layout = config.svd.layout.layout(ns);
        let (rows, cols) = match layout {
            crate::grid::Layout::ReceiverBySource => (nx * ny, ns),
            crate::grid::Layout::BlockTessellated { n_bx, n_by } => (nx * n_bx, ny * n_by),
        };
        let min_dim = rows.min(cols);
        if config.svd.count > min_dim {
            out.warnings.push(format!(
                "{label}: count {} exceeds the smaller dimension {min_dim}; clipped",
                config.svd.count
            ));
        }
        let values = tensor_decay(&tensor, &mask, config.svd.layout, config.svd.count)?;
        let path = dir.join(format!("sv_{label}.csv"));
        write_text(&path, &decay_csv(&values))?;
        out.written.push(path);
    }
    write_config(config, dir, &mut out)?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config() -> RunConfig {
        let text = "seed = 4\n\
            [scenario]\nnx = 6\nny = 6\nn_sources = 4\n\
            [scenario.field]\nn_anomalies = 3\namplitude_rank = 2\n\
            [scenario.mask]\nratio = 0.5\ncluster_count = 4\n\
            [solve]\nsolver = \"smooth_only\"\n\
            [vr]\nrank_k = 2\nmax_iters = 6\n[vr_exact]\nrank_k = 2\nmax_iters = 6\n\
            [lowrank_only]\nrank_k = 2\nmax_iters = 6\n\
            [fista]\nmax_iters = 20\n[lbfgs]\nrank_k = 2\nmax_iters = 20\n";
        RunConfig::parse(text, Path::new("run.toml")).unwrap()
    }

    #[test]
    fn generate_writes_loadable_data() {
        let dir = tempfile::tempdir().unwrap();
        let c = small_config();
        generate(&c, dir.path()).unwrap();
        let d = DataSet::load(dir.path()).unwrap();
        assert_eq!(d.observed.tensor.shape(), (6, 6, 4));
        assert!(d.truth.is_some());
        assert_eq!(d.hash.len(), 64);
        let b = d.budget.as_ref().unwrap();
        assert_eq!(b.n_obs, d.observed.mask.count());
        assert_eq!(d.sigma(0.0).unwrap(), b.sigma);
    }

    #[test]
    fn seed_changes_values_not_shape() {
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        let mut c = small_config();
        generate(&c, a.path()).unwrap();
        c.set_seed(5);
        generate(&c, b.path()).unwrap();
        let (da, db) = (DataSet::load(a.path()).unwrap(), DataSet::load(b.path()).unwrap());
        assert_eq!(da.observed.tensor.shape(), db.observed.tensor.shape());
        assert_ne!(da.observed.tensor.values(), db.observed.tensor.values());
        assert_ne!(da.hash, db.hash);
    }

    #[test]
    fn single_run_gives_one_row() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = small_config();
        c.compare.solvers = vec![SolverName::SmoothOnly];
        let (_, rows) = compare(&c, dir.path()).unwrap();
        assert_eq!(rows.len(), 1);
        let table = std::fs::read_to_string(dir.path().join(COMPARISON_FILE)).unwrap();
        assert_eq!(table.lines().count(), 2);
        assert!(table.starts_with("algorithm,terminal_feasibility,rms_obs,rms_int\n"));
    }

    #[test]
    fn mismatched_runs_are_refused() {
        let root = tempfile::tempdir().unwrap();
        let mut c = small_config();
        solve(&c, &root.path().join("a")).unwrap();
        c.set_seed(8);
        solve(&c, &root.path().join("b")).unwrap();
        c.compare.runs = vec![root.path().join("a"), root.path().join("b")];
        let err = compare(&c, &root.path().join("cmp")).unwrap_err();
        assert_eq!(err.exit_code(), 2);

        c.compare.runs = vec![root.path().join("a")];
        let (_, rows) = compare(&c, &root.path().join("cmp")).unwrap();
        assert_eq!(rows.len(), 1);
    }

    #[test]
    fn ordering_check() {
        let r = |a: &str, v: f64| ComparisonRow {
            algorithm: a.into(),
            terminal_feasibility: 0.0,
            rms_obs: 0.0,
            rms_int: v,
            failed: false,
            time_s: 0.0,
        };
        assert!(vr_is_best(&[r("vr", 0.1), r("fista", 0.2)]).is_ok());
        assert!(vr_is_best(&[r("vr", 0.3), r("fista", 0.2)]).is_err());
        assert!(vr_is_best(&[r("vr", 0.2), r("fista", 0.2)]).is_err());
        assert!(vr_is_best(&[r("fista", 0.2)]).is_err());
    }

    #[test]
    fn svd_count_is_clipped_with_warning() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = small_config();
        c.svd.count = 100;
        c.svd.layout = LayoutChoice::ReceiverBySource;
        let out = svd(&c, dir.path()).unwrap();
        assert_eq!(out.warnings.len(), 2);
        let text = std::fs::read_to_string(dir.path().join("sv_truth.csv")).unwrap();
        assert_eq!(text.lines().count(), 5);
    }

    #[test]
    fn identity_tensor_has_flat_decay() {
        let grid = crate::grid::ReceiverGrid::new(2, 2, 1.0, 0.0, 0.0).unwrap();
        let sources = crate::grid::SourceSet::new(vec![(0.0, 0.0); 4]).unwrap();
        let values = (0..16).map(|k| if k % 4 == k / 4 { 1.0 } else { 0.0 }).collect();
        let t = ResidualTensor::new(grid, sources, values).unwrap();
        let d = tensor_decay(&t, &SamplingMask::full((2, 2, 4)), LayoutChoice::ReceiverBySource, 10).unwrap();
        assert_eq!(d.len(), 4);
        assert!(d.iter().all(|v| (v - 1.0).abs() < 1e-12));
    }

    #[test]
    fn matrix_csv_layout() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let s = matrix_csv(&m);
        assert!(s.starts_with("1.0000000000000000e0,2.0000000000000000e0\n"));
        assert_eq!(s.lines().count(), 2);
    }
}
