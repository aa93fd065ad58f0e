//! C interface to `relaxfill`.
//!
//! Objects are opaque handles created by `rf_*_new`/`rf_*_load` style
//! functions and released with the matching `*_free`. Every fallible call
//! returns an [`RfStatus`]; on failure [`rf_last_error`] describes it.
//! Tensors are flat `double` arrays indexed `p + nx·(q + ny·s)`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use relaxfill::cli;
use relaxfill::config::RunConfig;
use relaxfill::grid::{ReceiverGrid, ResidualTensor, SamplingMask, SourceSet};
use relaxfill::pipeline::{LayoutChoice, Problem, SolverName};
use relaxfill::Error;

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RfStatus {
    Ok = 0,
    /// Null pointer, bad length or otherwise unusable argument.
    InvalidArgument = 1,
    /// A configuration value is out of range.
    Config = 2,
    /// A file or string could not be parsed.
    Parse = 3,
    Io = 4,
    Dimension = 5,
    /// Factorization or another numerical step failed.
    Numerical = 6,
    /// The solver stopped without meeting its criteria.
    SolverFailed = 7,
    /// A `compare` ordering check failed.
    Check = 8,
    /// Internal error; the library state is unaffected.
    Panic = 9,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RfLayout {
    Block = 0,
    ReceiverBySource = 1,
}

/// Scalar outcome of a solve. RMS values are NaN without a truth tensor.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct RfSummary {
    pub terminal_feasibility: f64,
    pub rms_obs: f64,
    pub rms_int: f64,
    pub sigma: f64,
    pub iterations: usize,
    pub converged: bool,
    pub failed: bool,
}

/// Run configuration.
pub struct RfConfig(RunConfig);

/// Observed data with its operators.
pub struct RfProblem(Problem);

/// Completed tensor and summary of one solve.
pub struct RfResult {
    tensor: Vec<f64>,
    summary: RfSummary,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> RfStatus {
    match e {
        Error::Argument(_) => RfStatus::InvalidArgument,
        Error::Config { .. } => RfStatus::Config,
        Error::Parse { .. } => RfStatus::Parse,
        Error::Io { .. } => RfStatus::Io,
        Error::Dimension(_) => RfStatus::Dimension,
        Error::SolverFailed(_) => RfStatus::SolverFailed,
        Error::Check(_) => RfStatus::Check,
        _ => RfStatus::Numerical,
    }
}

fn guard(f: impl FnOnce() -> Result<(), Error>) -> RfStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            RfStatus::Ok
        }
        Ok(Err(e)) => {
            set_error(&e.to_string());
            status_of(&e)
        }
        Err(_) => {
            set_error("internal panic");
            RfStatus::Panic
        }
    }
}

fn null(name: &str) -> Error {
    Error::Argument(format!("`{name}` is null"))
}

unsafe fn text<'a>(p: *const c_char, name: &str) -> Result<&'a str, Error> {
    if p.is_null() {
        return Err(null(name));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Error::Argument(format!("`{name}` is not UTF-8")))
}

unsafe fn store<T>(out: *mut *mut T, value: T) {
    *out = Box::into_raw(Box::new(value));
}

/// Message for the last failed call on this thread; empty after success.
/// Valid until the next call into the library on the same thread.
#[no_mangle]
pub extern "C" fn rf_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Default configuration.
///
/// # Safety
/// `out` must be a valid pointer to writable storage.
#[no_mangle]
pub unsafe extern "C" fn rf_config_default(out: *mut *mut RfConfig) -> RfStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        store(out, RfConfig(RunConfig::default()));
        Ok(())
    })
}

/// Parses TOML text. Relative paths inside resolve against the working
/// directory.
///
/// # Safety
/// `toml` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rf_config_parse(toml: *const c_char, out: *mut *mut RfConfig) -> RfStatus {
    guard(|| {
        let t = text(toml, "toml")?;
        if out.is_null() {
            return Err(null("out"));
        }
        store(out, RfConfig(RunConfig::parse(t, Path::new("<string>"))?));
        Ok(())
    })
}

/// Reads a TOML file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rf_config_load(path: *const c_char, out: *mut *mut RfConfig) -> RfStatus {
    guard(|| {
        let p = text(path, "path")?;
        if out.is_null() {
            return Err(null("out"));
        }
        store(out, RfConfig(RunConfig::load(Path::new(p))?));
        Ok(())
    })
}

/// Sets the seed of every scenario stream.
///
/// # Safety
/// `config` must come from this library and not be freed.
#[no_mangle]
pub unsafe extern "C" fn rf_config_set_seed(config: *mut RfConfig, seed: u64) -> RfStatus {
    guard(|| {
        let c = config.as_mut().ok_or_else(|| null("config"))?;
        c.0.set_seed(seed);
        Ok(())
    })
}

/// Selects the solver by name: `vr`, `vr_exact`, `fista`, `lbfgs`,
/// `smooth_only` or `lowrank_only`.
///
/// # Safety
/// `config` must come from this library; `name` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn rf_config_set_solver(config: *mut RfConfig, name: *const c_char) -> RfStatus {
    guard(|| {
        let c = config.as_mut().ok_or_else(|| null("config"))?;
        c.0.solve.solver = SolverName::parse(text(name, "name")?)?;
        Ok(())
    })
}

/// # Safety
/// `config` must come from this library or be null.
#[no_mangle]
pub unsafe extern "C" fn rf_config_free(config: *mut RfConfig) {
    if !config.is_null() {
        drop(Box::from_raw(config));
    }
}

/// Builds a problem from the synthetic scenario of `config`, truth included.
///
/// # Safety
/// `config` must come from this library; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rf_problem_generate(config: *const RfConfig, out: *mut *mut RfProblem) -> RfStatus {
    guard(|| {
        let c = config.as_ref().ok_or_else(|| null("config"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let sc = c.0.scenario.generate()?;
        let sigma = c.0.solve.sigma.unwrap_or(sc.sigma);
        let p = Problem::new(sc.observed.tensor, sc.mask, Some(sc.truth), sigma, c.0.solve.layout)?;
        store(out, RfProblem(p));
        Ok(())
    })
}

/// Builds a problem from caller data. `values` and `mask` hold
/// `nx·ny·n_s` entries; nonzero mask bytes mark observed entries. `truth`
/// may be null.
///
/// # Safety
/// Non-null arrays must hold `nx·ny·n_s` readable elements; `out` must be
/// writable.
#[no_mangle]
pub unsafe extern "C" fn rf_problem_new(
    nx: usize,
    ny: usize,
    n_s: usize,
    values: *const f64,
    mask: *const u8,
    truth: *const f64,
    sigma: f64,
    layout: RfLayout,
    out: *mut *mut RfProblem,
) -> RfStatus {
    guard(|| {
        if values.is_null() {
            return Err(null("values"));
        }
        if mask.is_null() {
            return Err(null("mask"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        let len = nx
            .checked_mul(ny)
            .and_then(|v| v.checked_mul(n_s))
            .filter(|&v| v > 0)
            .ok_or_else(|| Error::Argument(format!("bad shape {nx}x{ny}x{n_s}")))?;
        let grid = ReceiverGrid::new(nx, ny, 1.0, 0.0, 0.0)?;
        let sources = SourceSet::new(vec![(0.0, 0.0); n_s])?;
        let v = std::slice::from_raw_parts(values, len).to_vec();
        let flags = std::slice::from_raw_parts(mask, len).iter().map(|&m| m != 0).collect();
        let observed = ResidualTensor::new(grid.clone(), sources.clone(), v)?;
        let truth = if truth.is_null() {
            None
        } else {
            Some(ResidualTensor::new(
                grid,
                sources,
                std::slice::from_raw_parts(truth, len).to_vec(),
            )?)
        };
        let layout = match layout {
            RfLayout::Block => LayoutChoice::Block,
            RfLayout::ReceiverBySource => LayoutChoice::ReceiverBySource,
        };
        let p = Problem::new(observed, SamplingMask::new((nx, ny, n_s), flags)?, truth, sigma, layout)?;
        store(out, RfProblem(p));
        Ok(())
    })
}

/// Matrix shape, observation count and misfit budget.
///
/// # Safety
/// `problem` must come from this library; each output pointer must be
/// writable or null.
#[no_mangle]
pub unsafe extern "C" fn rf_problem_info(
    problem: *const RfProblem,
    rows: *mut usize,
    cols: *mut usize,
    n_obs: *mut usize,
    sigma: *mut f64,
) -> RfStatus {
    guard(|| {
        let p = &problem.as_ref().ok_or_else(|| null("problem"))?.0;
        let (r, c) = p.map.shape();
        if let Some(x) = rows.as_mut() {
            *x = r;
        }
        if let Some(x) = cols.as_mut() {
            *x = c;
        }
        if let Some(x) = n_obs.as_mut() {
            *x = p.b.len();
        }
        if let Some(x) = sigma.as_mut() {
            *x = p.sigma;
        }
        Ok(())
    })
}

/// # Safety
/// `problem` must come from this library or be null.
#[no_mangle]
pub unsafe extern "C" fn rf_problem_free(problem: *mut RfProblem) {
    if !problem.is_null() {
        drop(Box::from_raw(problem));
    }
}

/// Runs the configured solver. A result is produced even when the solver
/// reports failure; the status is then `SolverFailed`.
///
/// # Safety
/// `problem` and `config` must come from this library; `out` must be
/// writable.
#[no_mangle]
pub unsafe extern "C" fn rf_solve(
    problem: *const RfProblem,
    config: *const RfConfig,
    out: *mut *mut RfResult,
) -> RfStatus {
    guard(|| {
        let p = &problem.as_ref().ok_or_else(|| null("problem"))?.0;
        let c = &config.as_ref().ok_or_else(|| null("config"))?.0;
        if out.is_null() {
            return Err(null("out"));
        }
        let spec = c.solver_spec(c.solve.solver);
        let (result, report) = p.run(&spec, c.solve.decay_count)?;
        let tensor = p.to_tensor(&result.w)?.values().to_vec();
        let summary = RfSummary {
            terminal_feasibility: report.terminal_feasibility,
            rms_obs: report.rms_obs,
            rms_int: report.rms_int,
            sigma: spec.target_sigma(p.sigma),
            iterations: report.iterations,
            converged: report.converged,
            failed: report.failed,
        };
        store(out, RfResult { tensor, summary });
        if summary.failed {
            return Err(Error::SolverFailed(format!("{} did not converge", spec.name())));
        }
        Ok(())
    })
}

/// Copies the completed tensor into `dst`, which holds `len` doubles.
///
/// # Safety
/// `result` must come from this library; `dst` must hold `len` writable
/// doubles.
#[no_mangle]
pub unsafe extern "C" fn rf_result_tensor(result: *const RfResult, dst: *mut f64, len: usize) -> RfStatus {
    guard(|| {
        let r = result.as_ref().ok_or_else(|| null("result"))?;
        if dst.is_null() {
            return Err(null("dst"));
        }
        if len != r.tensor.len() {
            return Err(Error::Dimension(format!(
                "need {} values, got room for {len}",
                r.tensor.len()
            )));
        }
        ptr::copy_nonoverlapping(r.tensor.as_ptr(), dst, len);
        Ok(())
    })
}

/// # Safety
/// `result` must come from this library; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rf_result_summary(result: *const RfResult, out: *mut RfSummary) -> RfStatus {
    guard(|| {
        let r = result.as_ref().ok_or_else(|| null("result"))?;
        let o = out.as_mut().ok_or_else(|| null("out"))?;
        *o = r.summary;
        Ok(())
    })
}

/// # Safety
/// `result` must come from this library or be null.
#[no_mangle]
pub unsafe extern "C" fn rf_result_free(result: *mut RfResult) {
    if !result.is_null() {
        drop(Box::from_raw(result));
    }
}

/// Runs a command-line command (`generate`, `solve`, `compare` or `svd`)
/// with `config` writing into `out_dir`.
///
/// # Safety
/// `command` and `out_dir` must be NUL-terminated; `config` must come from
/// this library.
#[no_mangle]
pub unsafe extern "C" fn rf_run_command(
    command: *const c_char,
    config: *const RfConfig,
    out_dir: *const c_char,
) -> RfStatus {
    guard(|| {
        let cmd = text(command, "command")?;
        let c = &config.as_ref().ok_or_else(|| null("config"))?.0;
        let dir = Path::new(text(out_dir, "out_dir")?);
        match cmd {
            "generate" => cli::generate(c, dir).map(drop),
            "solve" => cli::solve(c, dir).map(drop),
            "compare" => cli::compare(c, dir).map(drop),
            "svd" => cli::svd(c, dir).map(drop),
            other => Err(Error::Argument(format!("unknown command `{other}`"))),
        }
    })
}
