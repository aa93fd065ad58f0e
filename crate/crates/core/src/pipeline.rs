//! From observed tensors to solved and evaluated runs.

use std::fmt;
use std::time::Instant;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::baselines::{fista_solve, lbfgs_solve, smoothing_only_solve, FistaConfig, LbfgsConfig};
use crate::error::{Error, Result};
use crate::grid::{compute_source_energy, IndexMap, Layout, ResidualTensor, SamplingMask};
use crate::metrics::{rms, sv_decay, EvalReport};
use crate::operators::Operators;
use crate::relax::{lowrank_only_solve, vr_solve, RelaxConfig, SolveResult};
use crate::synthetic::Scenario;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverName {
    /// Relaxation with the noise budget.
    Vr,
    /// Relaxation with `σ = 0`.
    VrExact,
    Fista,
    Lbfgs,
    SmoothOnly,
    LowrankOnly,
}

impl SolverName {
    pub const ALL: [SolverName; 6] = [
        SolverName::Vr,
        SolverName::VrExact,
        SolverName::Fista,
        SolverName::Lbfgs,
        SolverName::SmoothOnly,
        SolverName::LowrankOnly,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SolverName::Vr => "vr",
            SolverName::VrExact => "vr_exact",
            SolverName::Fista => "fista",
            SolverName::Lbfgs => "lbfgs",
            SolverName::SmoothOnly => "smooth_only",
            SolverName::LowrankOnly => "lowrank_only",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|n| n.as_str() == s)
            .ok_or_else(|| Error::Argument(format!("unknown solver `{s}`")))
    }
}

impl fmt::Display for SolverName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayoutChoice {
    /// Receiver grids tiled as blocks in the most square arrangement.
    #[default]
    Block,
    ReceiverBySource,
}

impl LayoutChoice {
    pub fn layout(self, n_s: usize) -> Layout {
        match self {
            LayoutChoice::Block => Layout::square_blocks(n_s),
            LayoutChoice::ReceiverBySource => Layout::ReceiverBySource,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SmoothOnlyConfig {
    pub lambda_init: f64,
    pub newton_tol: f64,
    pub newton_max: usize,
}

impl Default for SmoothOnlyConfig {
    fn default() -> Self {
        Self {
            lambda_init: 0.0111,
            newton_tol: 1e-9,
            newton_max: 100,
        }
    }
}

impl SmoothOnlyConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_init >= 0.0) || !self.lambda_init.is_finite() {
            return Err(Error::config(
                "lambda_init",
                format!("must be >= 0, got {}", self.lambda_init),
            ));
        }
        if !(self.newton_tol > 0.0) || !self.newton_tol.is_finite() {
            return Err(Error::config(
                "newton_tol",
                format!("must be positive, got {}", self.newton_tol),
            ));
        }
        if self.newton_max == 0 {
            return Err(Error::config("newton_max", "must be at least 1"));
        }
        Ok(())
    }
}

/// A solver with its parameters. The budget is supplied by [`Problem`].
#[derive(Debug, Clone, PartialEq)]
pub enum SolverSpec {
    Vr(RelaxConfig),
    VrExact(RelaxConfig),
    Fista(FistaConfig),
    Lbfgs(LbfgsConfig),
    SmoothOnly(SmoothOnlyConfig),
    LowrankOnly(RelaxConfig),
}

impl SolverSpec {
    pub fn name(&self) -> SolverName {
        match self {
            SolverSpec::Vr(_) => SolverName::Vr,
            SolverSpec::VrExact(_) => SolverName::VrExact,
            SolverSpec::Fista(_) => SolverName::Fista,
            SolverSpec::Lbfgs(_) => SolverName::Lbfgs,
            SolverSpec::SmoothOnly(_) => SolverName::SmoothOnly,
            SolverSpec::LowrankOnly(_) => SolverName::LowrankOnly,
        }
    }

    /// Iterations between coupling updates for the relaxation solvers.
    pub fn schedule_period(&self) -> Option<usize> {
        match self {
            SolverSpec::Vr(c) | SolverSpec::VrExact(c) | SolverSpec::LowrankOnly(c) => Some(c.schedule_period),
            _ => None,
        }
    }

    /// The budget this solver targets given the data budget `sigma`.
    pub fn target_sigma(&self, sigma: f64) -> f64 {
        match self {
            SolverSpec::VrExact(_) => 0.0,
            _ => sigma,
        }
    }
}

/// Observed data with its matricization and operators.
#[derive(Debug)]
pub struct Problem {
    /// Observed tensor with energy-ordered sources.
    pub observed: ResidualTensor,
    pub mask: SamplingMask,
    pub truth: Option<ResidualTensor>,
    /// Misfit budget.
    pub sigma: f64,
    pub map: IndexMap,
    pub operators: Operators,
    /// Observed entries in sampler order.
    pub b: Vec<f64>,
    truth_matrix: Option<DMatrix<f64>>,
}

impl Problem {
    /// Orders sources by observed energy and matricizes with `layout`.
    pub fn new(
        observed: ResidualTensor,
        mask: SamplingMask,
        truth: Option<ResidualTensor>,
        sigma: f64,
        layout: LayoutChoice,
    ) -> Result<Self> {
        if !(sigma >= 0.0) || !sigma.is_finite() {
            return Err(Error::Argument(format!("misfit budget must be >= 0, got {sigma}")));
        }
        mask.require_nonempty()?;
        let sources = compute_source_energy(&observed, &mask)?;
        let observed = observed.with_sources(sources)?;
        let grid = observed.grid().clone();
        let (_, _, ns) = observed.shape();
        let map = IndexMap::new(&grid, observed.sources().order(), layout.layout(ns))?;
        let operators = Operators::new(&grid, &map, &mask)?;
        let matrix = map.scatter(observed.values())?;
        let b = operators.sampler().apply_vec(matrix.as_slice())?;
        let truth_matrix = match &truth {
            Some(t) => {
                if t.shape() != observed.shape() {
                    return Err(Error::Dimension(format!(
                        "truth {:?} does not match observed {:?}",
                        t.shape(),
                        observed.shape()
                    )));
                }
                Some(map.scatter(t.values())?)
            }
            None => None,
        };
        Ok(Self {
            observed,
            mask,
            truth,
            sigma,
            map,
            operators,
            b,
            truth_matrix,
        })
    }

    pub fn from_scenario(scenario: &Scenario, layout: LayoutChoice) -> Result<Self> {
        Self::new(
            scenario.observed.tensor.clone(),
            scenario.mask.clone(),
            Some(scenario.truth.clone()),
            scenario.sigma,
            layout,
        )
    }

    pub fn truth_matrix(&self) -> Option<&DMatrix<f64>> {
        self.truth_matrix.as_ref()
    }

    /// Runs `spec` against this problem's budget.
    pub fn solve(&self, spec: &SolverSpec) -> Result<SolveResult> {
        let sigma = spec.target_sigma(self.sigma);
        let (ops, b) = (&self.operators, &self.b[..]);
        match spec {
            SolverSpec::Vr(c) | SolverSpec::VrExact(c) => vr_solve(ops, b, &RelaxConfig { sigma, ..c.clone() }),
            SolverSpec::LowrankOnly(c) => lowrank_only_solve(ops, b, &RelaxConfig { sigma, ..c.clone() }),
            SolverSpec::Fista(c) => fista_solve(ops, b, &FistaConfig { sigma, ..c.clone() }),
            SolverSpec::Lbfgs(c) => lbfgs_solve(ops, b, &LbfgsConfig { sigma, ..c.clone() }),
            SolverSpec::SmoothOnly(c) => {
                c.validate()?;
                smoothing_only_solve(ops, b, sigma, c.lambda_init, c.newton_tol, c.newton_max)
            }
        }
    }

    /// Builds the report for `result`. RMS values are NaN without truth.
    pub fn evaluate(
        &self,
        spec: &SolverSpec,
        result: &SolveResult,
        decay_count: usize,
        wall_time: f64,
    ) -> Result<EvalReport> {
        let (rms_obs, rms_int) = match &self.truth_matrix {
            Some(t) => {
                let flags = self.operators.sampler().flags();
                let obs: Vec<usize> = (0..flags.len()).filter(|&i| flags[i]).collect();
                let int: Vec<usize> = (0..flags.len()).filter(|&i| !flags[i]).collect();
                let x = result.w.as_slice();
                let ri = if int.is_empty() {
                    0.0
                } else {
                    rms(x, t.as_slice(), &int)?
                };
                (rms(x, t.as_slice(), &obs)?, ri)
            }
            None => (f64::NAN, f64::NAN),
        };
        let (history, seconds) = EvalReport::history_from(&result.history);
        Ok(EvalReport {
            solver: spec.name().to_string(),
            rms_obs,
            rms_int,
            terminal_feasibility: result.terminal_feasibility,
            iterations: result.iterations,
            converged: result.converged,
            failed: result.failed,
            schedule_period: spec.schedule_period(),
            sv_decay: sv_decay(&result.w, decay_count)?,
            history,
            wall_time,
            seconds,
        })
    }

    /// Solves and evaluates, timing the solve with a monotonic clock.
    pub fn run(&self, spec: &SolverSpec, decay_count: usize) -> Result<(SolveResult, EvalReport)> {
        let start = Instant::now();
        let result = self.solve(spec)?;
        let wall = start.elapsed().as_secs_f64();
        let report = self.evaluate(spec, &result, decay_count, wall)?;
        Ok((result, report))
    }

    /// `w` back in tensor form, with the observed tensor's sources.
    pub fn to_tensor(&self, w: &DMatrix<f64>) -> Result<ResidualTensor> {
        ResidualTensor::new(
            self.observed.grid().clone(),
            self.observed.sources().clone(),
            self.map.gather(w)?,
        )
    }
}
