//! Block-coordinate descent on the relaxed joint objective
//!
//! ```text
//! ½‖L‖² + ½‖R‖² + (1/2γ)‖ℒ(W)‖² + (ρ/2)‖W − LRᵀ‖²   s.t.  ‖𝒜(W) − b‖₂ ≤ σ
//! ```
//!
//! `L` and `R` have closed-form ridge updates. The `W` block is a
//! misfit-constrained quadratic; it is solved through its penalized form
//! `w(λ) = M(λ)⁻¹(ρ·d + λ·Aᵀb)` with `M(λ) = (1/γ)ℒᵀℒ + ρI + λAᵀA`, by
//! safeguarded Newton iteration on `f(λ) = σ − ‖A w(λ) − b‖₂` for the smallest
//! `λ ≥ 0` meeting the budget. The coupling weight `ρ` grows geometrically on
//! a fixed schedule, which drives `W → LRᵀ`.

use std::sync::Arc;
use std::time::Instant;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{complex_step, thin_svd, SpdFactorization, COMPLEX_STEP_H};
use crate::operators::{NormalStructure, NormalSystem, Operators, SamplingOperator};

/// How `f′(λ)` is evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DerivativeMode {
    /// One extra back-solve with the factor already computed for `w(λ)`.
    #[default]
    Analytic,
    /// Full complex-arithmetic solve at `λ + ih`.
    ComplexStep,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RelaxConfig {
    /// Smoothness weight: the Laplacian term is scaled by `1/(2γ)`.
    pub gamma: f64,
    /// Initial coupling weight on `‖W − LRᵀ‖²`.
    pub rho0: f64,
    /// Schedule multiplier. `0` derives it as `Σσ̂ᵢ/k` of `Aᵀb`.
    pub rho_factor: f64,
    pub schedule_period: usize,
    /// Misfit budget in seconds. Data dependent, so not read from files.
    #[serde(skip)]
    pub sigma: f64,
    pub rank_k: usize,
    pub max_iters: usize,
    pub iterate_tol: f64,
    pub newton_tol: f64,
    pub newton_max: usize,
    pub lambda_init: f64,
    pub derivative: DerivativeMode,
}

impl Default for RelaxConfig {
    fn default() -> Self {
        Self::combined(3.719)
    }
}

impl RelaxConfig {
    /// Joint smoothness + low-rank preset: γ = 6.45e−7, η = 0.5 (ρ₀ = 2),
    /// factor 4.17 every 30 iterations, 90 iterations, k = 40.
    pub fn combined(sigma: f64) -> Self {
        Self {
            gamma: 6.45e-7,
            rho0: 2.0,
            rho_factor: 4.17,
            schedule_period: 30,
            sigma,
            rank_k: 40,
            max_iters: 90,
            iterate_tol: 1e-10,
            newton_tol: 1e-9,
            newton_max: 100,
            lambda_init: 0.0111,
            derivative: DerivativeMode::Analytic,
        }
    }

    /// Low-rank-only preset: η = 1.0 (ρ₀ = 1), factor 4.17 every 100
    /// iterations, 500 iterations.
    pub fn lowrank_only(sigma: f64) -> Self {
        Self {
            rho0: 1.0,
            schedule_period: 100,
            max_iters: 500,
            ..Self::combined(sigma)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("gamma", self.gamma),
            ("rho0", self.rho0),
            ("iterate_tol", self.iterate_tol),
            ("newton_tol", self.newton_tol),
        ];
        for (key, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::config(key, format!("must be positive, got {v}")));
            }
        }
        let f = self.rho_factor;
        if !(f == 0.0 || f >= 1.0) || !f.is_finite() {
            return Err(Error::config("rho_factor", format!("must be 0 or >= 1, got {f}")));
        }
        if !(self.sigma >= 0.0) || !self.sigma.is_finite() {
            return Err(Error::config("sigma", format!("must be >= 0, got {}", self.sigma)));
        }
        if self.rank_k == 0 {
            return Err(Error::config("rank_k", "must be >= 1"));
        }
        if self.schedule_period == 0 {
            return Err(Error::config("schedule_period", "must be >= 1"));
        }
        if self.newton_max == 0 {
            return Err(Error::config("newton_max", "must be >= 1"));
        }
        if !(self.lambda_init >= 0.0) {
            return Err(Error::config("lambda_init", "must be >= 0"));
        }
        Ok(())
    }
}

/// Low-rank factors with `X ≈ L Rᵀ`.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorPair {
    pub l: DMatrix<f64>,
    pub r: DMatrix<f64>,
}

impl FactorPair {
    pub fn new(l: DMatrix<f64>, r: DMatrix<f64>) -> Result<Self> {
        if l.ncols() != r.ncols() {
            return Err(Error::Dimension(format!(
                "factor widths differ: {} and {}",
                l.ncols(),
                r.ncols()
            )));
        }
        Ok(Self { l, r })
    }

    pub fn rank(&self) -> usize {
        self.l.ncols()
    }

    pub fn product(&self) -> DMatrix<f64> {
        &self.l * self.r.transpose()
    }

    /// `½‖L‖² + ½‖R‖²`.
    pub fn surrogate(&self) -> f64 {
        0.5 * (self.l.norm_squared() + self.r.norm_squared())
    }

    /// Balanced rank-`k` factors from a thin SVD: `L = U_k Σ_k^{1/2}`,
    /// `R = V_k Σ_k^{1/2}`. Columns beyond the available rank are zero.
    pub fn spectral(x: &DMatrix<f64>, k: usize) -> Result<Self> {
        let svd = thin_svd(x)?;
        let (n, m) = x.shape();
        let p = svd.s.len();
        let l = DMatrix::from_fn(n, k, |i, j| if j < p { svd.u[(i, j)] * svd.s[j].sqrt() } else { 0.0 });
        let r = DMatrix::from_fn(m, k, |i, j| if j < p { svd.v[(i, j)] * svd.s[j].sqrt() } else { 0.0 });
        Ok(Self { l, r })
    }
}

/// One row of the convergence history.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterRecord {
    pub objective: f64,
    /// `‖𝒜(W) − b‖₂`.
    pub misfit: f64,
    /// `‖W − LRᵀ‖_F` (zero for solvers without a coupling).
    pub gap: f64,
    /// Cumulative wall time.
    pub seconds: f64,
    /// Coupling weight in force for this iteration (zero when unused).
    pub rho: f64,
    /// Multiplier of the misfit constraint (zero when unused).
    pub lambda: f64,
}

#[derive(Debug, Clone)]
pub struct SolveResult {
    pub w: DMatrix<f64>,
    pub factors: Option<FactorPair>,
    pub history: Vec<IterRecord>,
    /// `‖𝒜(W) − b‖₂ − σ` at termination, signed.
    pub terminal_feasibility: f64,
    pub iterations: usize,
    /// The iterate-change tolerance was met before the iteration cap.
    pub converged: bool,
    /// A subsolver gave up; the result is the last iterate.
    pub failed: bool,
    pub warnings: Vec<String>,
}

/// `L = ρ W R (I + ρRᵀR)⁻¹`, the minimizer of `½‖L‖² + (ρ/2)‖W − LRᵀ‖²`.
pub fn update_l(w: &DMatrix<f64>, r: &DMatrix<f64>, rho: f64) -> Result<DMatrix<f64>> {
    if w.ncols() != r.nrows() {
        return Err(Error::Dimension(format!(
            "W is {:?} but R has {} rows",
            w.shape(),
            r.nrows()
        )));
    }
    let wr = w * r * rho;
    ridge_right_solve(wr, r, rho)
}

/// `R = ρ Wᵀ L (I + ρLᵀL)⁻¹`.
pub fn update_r(w: &DMatrix<f64>, l: &DMatrix<f64>, rho: f64) -> Result<DMatrix<f64>> {
    if w.nrows() != l.nrows() {
        return Err(Error::Dimension(format!(
            "W is {:?} but L has {} rows",
            w.shape(),
            l.nrows()
        )));
    }
    let wtl = w.tr_mul(l) * rho;
    ridge_right_solve(wtl, l, rho)
}

/// `X (I + ρFᵀF)⁻¹` through a k×k Cholesky solve.
fn ridge_right_solve(x: DMatrix<f64>, f: &DMatrix<f64>, rho: f64) -> Result<DMatrix<f64>> {
    let k = f.ncols();
    let g = DMatrix::identity(k, k) + f.tr_mul(f) * rho;
    let chol = g
        .cholesky()
        .ok_or_else(|| Error::Numerical("k x k ridge system is not positive definite".into()))?;
    Ok(chol.solve(&x.transpose()).transpose())
}

/// `σ − ‖A w − b‖₂`.
pub fn misfit_gap(w: &[f64], b: &[f64], sampler: &SamplingOperator, sigma: f64) -> Result<f64> {
    Ok(sigma - misfit(w, b, sampler)?)
}

/// `‖A w − b‖₂`.
pub fn misfit(w: &[f64], b: &[f64], sampler: &SamplingOperator) -> Result<f64> {
    if b.len() != sampler.count() {
        return Err(Error::Dimension(format!(
            "{} observations for {} observed entries",
            b.len(),
            sampler.count()
        )));
    }
    let aw = sampler.apply_vec(w)?;
    Ok(aw.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt())
}

/// `w(λ) = M(λ)⁻¹(ρ·d + λ·Aᵀb)` for the multiplier stored in `system`.
pub fn solve_w_lambda(system: &NormalSystem, d: &[f64], b: &[f64], sampler: &SamplingOperator) -> Result<Vec<f64>> {
    let mut backend = SparseBackend::new(system.clone());
    let problem = WProblem::new(sampler, b, d, system.rho(), 0.0)?;
    backend.set_lambda(system.lambda())?;
    backend.solve(&problem.rhs(system.lambda()))
}

/// `f′(λ)` at the multiplier stored in `system`, where `w = w(λ)`.
pub fn dmisfit_dlambda(
    system: &NormalSystem,
    d: &[f64],
    w: &[f64],
    b: &[f64],
    sampler: &SamplingOperator,
    mode: DerivativeMode,
    h: f64,
) -> Result<f64> {
    let mut backend = SparseBackend::new(system.clone());
    let problem = WProblem::new(sampler, b, d, system.rho(), 0.0)?;
    backend.set_lambda(system.lambda())?;
    derivative(&backend, &problem, system.lambda(), w, mode, h)
}

/// Linear-system side of the penalized W problem: something that can be
/// factored at a multiplier and then solve `M(λ) x = rhs`.
pub(crate) trait PenalizedSystem {
    fn set_lambda(&mut self, lambda: f64) -> Result<()>;
    fn solve(&self, rhs: &[f64]) -> Result<Vec<f64>>;
    /// Solve at a complex multiplier (independent of the current factor).
    fn solve_complex(&self, lambda: Complex64, rhs: &[Complex64]) -> Result<Vec<Complex64>>;
}

/// Sparse LDLᵀ backend; the symbolic analysis is shared through the
/// system's [`NormalStructure`] and numeric buffers are reused across λ.
pub(crate) struct SparseBackend {
    system: NormalSystem,
    factor: Option<SpdFactorization<f64>>,
}

impl SparseBackend {
    pub(crate) fn new(system: NormalSystem) -> Self {
        Self { system, factor: None }
    }

    pub(crate) fn set_rho(&mut self, rho: f64) -> Result<()> {
        self.system = self.system.with_rho(rho)?;
        Ok(())
    }
}

impl PenalizedSystem for SparseBackend {
    fn set_lambda(&mut self, lambda: f64) -> Result<()> {
        self.system = self.system.with_lambda(lambda)?;
        let m = self.system.matrix();
        match &mut self.factor {
            Some(f) => f.refactor(&m)?,
            None => {
                self.factor = Some(SpdFactorization::numeric(
                    self.system.structure().symbolic().clone(),
                    &m,
                )?)
            }
        }
        Ok(())
    }

    fn solve(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        self.factor
            .as_ref()
            .ok_or_else(|| Error::Numerical("system solved before factorization".into()))?
            .solve(rhs)
    }

    fn solve_complex(&self, lambda: Complex64, rhs: &[Complex64]) -> Result<Vec<Complex64>> {
        self.system.factor_complex(lambda)?.solve(rhs)
    }
}

/// `M(λ) = ρI + λAᵀA`, solved entrywise.
pub(crate) struct DiagonalBackend {
    rho: f64,
    observed: Vec<bool>,
    lambda: f64,
}

impl DiagonalBackend {
    pub(crate) fn new(sampler: &SamplingOperator, rho: f64) -> Self {
        Self {
            rho,
            observed: sampler.flags().to_vec(),
            lambda: 0.0,
        }
    }

    pub(crate) fn set_rho(&mut self, rho: f64) {
        self.rho = rho;
    }
}

impl PenalizedSystem for DiagonalBackend {
    fn set_lambda(&mut self, lambda: f64) -> Result<()> {
        if !(lambda >= 0.0) {
            return Err(Error::Argument(format!("lambda must be nonnegative, got {lambda}")));
        }
        self.lambda = lambda;
        Ok(())
    }

    fn solve(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        Ok(rhs
            .iter()
            .zip(&self.observed)
            .map(|(&v, &o)| v / (self.rho + if o { self.lambda } else { 0.0 }))
            .collect())
    }

    fn solve_complex(&self, lambda: Complex64, rhs: &[Complex64]) -> Result<Vec<Complex64>> {
        Ok(rhs
            .iter()
            .zip(&self.observed)
            .map(|(&v, &o)| v / (Complex64::new(self.rho, 0.0) + if o { lambda } else { Complex64::new(0.0, 0.0) }))
            .collect())
    }
}

/// Data of one W subproblem: `rhs(λ) = ρ·d + λ·Aᵀb` and the budget.
pub(crate) struct WProblem<'a> {
    sampler: &'a SamplingOperator,
    b: &'a [f64],
    rho_d: Vec<f64>,
    atb: Vec<f64>,
    sigma: f64,
}

impl<'a> WProblem<'a> {
    pub(crate) fn new(sampler: &'a SamplingOperator, b: &'a [f64], d: &[f64], rho: f64, sigma: f64) -> Result<Self> {
        if d.len() != sampler.dim() {
            return Err(Error::Dimension(format!(
                "coupling target has length {}, expected {}",
                d.len(),
                sampler.dim()
            )));
        }
        let atb = sampler.adjoint_vec(b)?;
        Ok(Self {
            sampler,
            b,
            rho_d: d.iter().map(|v| rho * v).collect(),
            atb,
            sigma,
        })
    }

    fn rhs(&self, lambda: f64) -> Vec<f64> {
        self.rho_d.iter().zip(&self.atb).map(|(a, b)| a + lambda * b).collect()
    }

    fn misfit(&self, w: &[f64]) -> f64 {
        self.sampler
            .observed_indices()
            .iter()
            .zip(self.b)
            .map(|(&i, &y)| (w[i] - y) * (w[i] - y))
            .sum::<f64>()
            .sqrt()
    }
}

fn derivative<S: PenalizedSystem>(
    backend: &S,
    problem: &WProblem<'_>,
    lambda: f64,
    w: &[f64],
    mode: DerivativeMode,
    h: f64,
) -> Result<f64> {
    let g = problem.misfit(w);
    if g == 0.0 {
        return Err(Error::ZeroResidual);
    }
    match mode {
        DerivativeMode::Analytic => {
            // ∂w/∂λ = M⁻¹ Aᵀ(b − A w)
            let mut rhs = vec![0.0; w.len()];
            for (&i, &y) in problem.sampler.observed_indices().iter().zip(problem.b) {
                rhs[i] = y - w[i];
            }
            let dw = backend.solve(&rhs)?;
            let inner: f64 = problem
                .sampler
                .observed_indices()
                .iter()
                .zip(problem.b)
                .map(|(&i, &y)| (w[i] - y) * dw[i])
                .sum();
            Ok(-inner / g)
        }
        DerivativeMode::ComplexStep => complex_step(
            |z| {
                let rhs: Vec<Complex64> = problem
                    .rho_d
                    .iter()
                    .zip(&problem.atb)
                    .map(|(&a, &b)| Complex64::new(a, 0.0) + z * b)
                    .collect();
                let wz = backend.solve_complex(z, &rhs)?;
                let sq = problem.sampler.observed_indices().iter().zip(problem.b).fold(
                    Complex64::new(0.0, 0.0),
                    |acc, (&i, &y)| {
                        let r = wz[i] - y;
                        acc + r * r
                    },
                );
                Ok(Complex64::new(problem.sigma, 0.0) - sq.sqrt())
            },
            lambda,
            h,
        ),
    }
}

/// Outcome of the multiplier search.
#[derive(Debug, Clone)]
pub struct RootResult {
    pub lambda: f64,
    pub w: Vec<f64>,
    /// `‖A w − b‖₂` at the returned point.
    pub misfit: f64,
    /// Linear solves performed (including the `λ = 0` check).
    pub evaluations: usize,
    pub converged: bool,
    /// `(λ, ‖A w(λ) − b‖₂)` for every evaluated multiplier, in order.
    pub path: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct NewtonParams {
    pub sigma: f64,
    pub lambda_init: f64,
    pub tol: f64,
    pub max: usize,
    pub mode: DerivativeMode,
}

/// Safeguarded Newton on `f(λ) = σ − g(λ)` with `g(λ) = ‖A w(λ) − b‖₂`.
///
/// `g` is non-increasing, so every evaluation either raises the lower end
/// of the bracket (`g > σ`) or lowers the upper end. Newton steps that leave
/// the bracket are replaced by bisection, or by doubling while no upper end
/// is known. With `σ = 0` the target is `g ≤ tol`.
pub(crate) fn find_root<S: PenalizedSystem>(
    backend: &mut S,
    problem: &WProblem<'_>,
    params: NewtonParams,
) -> Result<RootResult> {
    let sigma = params.sigma;
    let done = |g: f64| {
        if sigma > 0.0 {
            (g - sigma).abs() <= params.tol
        } else {
            g <= params.tol
        }
    };
    let mut path = Vec::new();

    backend.set_lambda(0.0)?;
    let w0 = backend.solve(&problem.rhs(0.0))?;
    let g0 = problem.misfit(&w0);
    path.push((0.0, g0));
    if g0 <= sigma || done(g0) {
        return Ok(RootResult {
            lambda: 0.0,
            w: w0,
            misfit: g0,
            evaluations: 1,
            converged: true,
            path,
        });
    }

    let mut lo = 0.0_f64;
    let mut hi: Option<f64> = None;
    let mut lambda = if params.lambda_init > 0.0 {
        params.lambda_init
    } else {
        1.0
    };
    let mut best = (0.0, w0, g0);
    for _ in 0..params.max {
        backend.set_lambda(lambda)?;
        let w = backend.solve(&problem.rhs(lambda))?;
        let g = problem.misfit(&w);
        path.push((lambda, g));
        if done(g) {
            return Ok(RootResult {
                lambda,
                w,
                misfit: g,
                evaluations: path.len(),
                converged: true,
                path,
            });
        }
        if g > sigma {
            lo = lo.max(lambda);
        } else {
            hi = Some(hi.map_or(lambda, |h| h.min(lambda)));
        }
        let newton = match derivative(backend, problem, lambda, &w, params.mode, COMPLEX_STEP_H) {
            Ok(fp) if fp > 0.0 => lambda - (sigma - g) / fp,
            _ => f64::NAN,
        };
        if (g - sigma).abs() < (best.2 - sigma).abs() {
            best = (lambda, w, g);
        }
        let inside = newton.is_finite() && newton > lo && hi.is_none_or(|h| newton < h);
        let next = if inside {
            newton
        } else {
            match hi {
                None => 2.0 * lambda.max(lo),
                Some(h) => 0.5 * (lo + h),
            }
        };
        if let Some(h) = hi {
            if h - lo <= 4.0 * f64::EPSILON * h {
                break;
            }
        }
        lambda = next;
    }
    let (lambda, w, g) = best;
    Ok(RootResult {
        lambda,
        w,
        misfit: g,
        evaluations: path.len(),
        converged: false,
        path,
    })
}

/// Smallest `λ ≥ 0` with `‖A w(λ) − b‖₂ = σ`, or `λ = 0` when `w(0)`
/// already meets the budget.
#[allow(clippy::too_many_arguments)]
pub fn root_find_lambda(
    d: &[f64],
    b: &[f64],
    operators: &Operators,
    gamma: f64,
    rho: f64,
    sigma: f64,
    lambda_init: f64,
    newton_tol: f64,
    newton_max: usize,
) -> Result<RootResult> {
    if !(sigma >= 0.0) {
        return Err(Error::Argument(format!("sigma must be >= 0, got {sigma}")));
    }
    let system = NormalSystem::new(operators.normal_structure()?, gamma, rho, 0.0)?;
    let mut backend = SparseBackend::new(system);
    let problem = WProblem::new(operators.sampler(), b, d, rho, sigma)?;
    find_root(
        &mut backend,
        &problem,
        NewtonParams {
            sigma,
            lambda_init,
            tol: newton_tol,
            max: newton_max,
            mode: DerivativeMode::Analytic,
        },
    )
}

/// `½‖L‖² + ½‖R‖² + (1/2γ)‖ℒW‖² + (ρ/2)‖W − LRᵀ‖²`; `inv_gamma = 0`
/// drops the smoothness term.
pub fn relaxed_objective(
    operators: &Operators,
    factors: &FactorPair,
    w: &DMatrix<f64>,
    inv_gamma: f64,
    rho: f64,
) -> f64 {
    let gap = (w - factors.product()).norm_squared();
    let smooth = if inv_gamma > 0.0 {
        0.5 * inv_gamma * operators.smoother().energy(w.as_slice())
    } else {
        0.0
    };
    factors.surrogate() + smooth + 0.5 * rho * gap
}

enum Backend {
    Sparse(SparseBackend),
    Diagonal(DiagonalBackend),
}

fn check_observations(operators: &Operators, b: &[f64]) -> Result<()> {
    if b.len() != operators.sampler().count() {
        return Err(Error::Dimension(format!(
            "{} observations for {} observed entries",
            b.len(),
            operators.sampler().count()
        )));
    }
    if b.iter().any(|v| !v.is_finite()) {
        return Err(Error::Argument("observations must be finite".into()));
    }
    Ok(())
}

fn run_block_descent(operators: &Operators, b: &[f64], config: &RelaxConfig, smooth: bool) -> Result<SolveResult> {
    config.validate()?;
    check_observations(operators, b)?;
    let start = Instant::now();
    let sampler = operators.sampler();
    let (n, m) = operators.shape();

    let mut w = DMatrix::from_vec(n, m, sampler.adjoint_vec(b)?);
    let mut warnings = Vec::new();
    let rho_factor = match config.rho_factor {
        f if f > 0.0 => f,
        _ => {
            let s = thin_svd(&w)?.s;
            let f = s.iter().sum::<f64>() / config.rank_k as f64;
            if f < 1.0 {
                warnings.push(format!("derived rho factor {f:.4} < 1, using 1"));
            }
            f.max(1.0)
        }
    };
    let mut factors = FactorPair::spectral(&w, config.rank_k)?;
    let mut rho = config.rho0;
    let inv_gamma = if smooth { 1.0 / config.gamma } else { 0.0 };

    let mut backend = if smooth {
        let structure: Arc<NormalStructure> = operators.normal_structure()?;
        Backend::Sparse(SparseBackend::new(NormalSystem::new(
            structure,
            config.gamma,
            rho,
            0.0,
        )?))
    } else {
        Backend::Diagonal(DiagonalBackend::new(sampler, rho))
    };

    let mut lambda = config.lambda_init;
    let mut history = Vec::with_capacity(config.max_iters);
    let mut converged = false;
    let mut failed = false;
    for it in 0..config.max_iters {
        if it > 0 && it % config.schedule_period == 0 {
            rho *= rho_factor;
        }
        factors.l = update_l(&w, &factors.r, rho)?;
        factors.r = update_r(&w, &factors.l, rho)?;
        let d = factors.product();

        let problem = WProblem::new(sampler, b, d.as_slice(), rho, config.sigma)?;
        let params = NewtonParams {
            sigma: config.sigma,
            lambda_init: lambda,
            tol: config.newton_tol,
            max: config.newton_max,
            mode: config.derivative,
        };
        let root = match &mut backend {
            Backend::Sparse(s) => {
                s.set_rho(rho)?;
                find_root(s, &problem, params)?
            }
            Backend::Diagonal(s) => {
                s.set_rho(rho);
                find_root(s, &problem, params)?
            }
        };
        if !root.converged {
            warnings.push(format!(
                "iteration {it}: multiplier search stopped after {} solves at misfit {:.6e}",
                root.evaluations, root.misfit
            ));
        }
        failed = !root.converged;
        if root.lambda > 0.0 {
            lambda = root.lambda;
        }
        let w_next = DMatrix::from_vec(n, m, root.w);
        let change = (&w_next - &w).norm();
        w = w_next;

        history.push(IterRecord {
            objective: relaxed_objective(operators, &factors, &w, inv_gamma, rho),
            misfit: root.misfit,
            gap: (&w - &d).norm(),
            seconds: start.elapsed().as_secs_f64(),
            rho,
            lambda: root.lambda,
        });
        if change < config.iterate_tol {
            converged = true;
            break;
        }
    }

    let final_misfit = misfit(w.as_slice(), b, sampler)?;
    Ok(SolveResult {
        terminal_feasibility: final_misfit - config.sigma,
        iterations: history.len(),
        w,
        factors: Some(factors),
        history,
        converged,
        failed,
        warnings,
    })
}

/// Joint low-rank + smoothness completion under the misfit budget.
pub fn vr_solve(operators: &Operators, b: &[f64], config: &RelaxConfig) -> Result<SolveResult> {
    run_block_descent(operators, b, config, true)
}

/// The same descent without the smoothness term; the W system is diagonal.
pub fn lowrank_only_solve(operators: &Operators, b: &[f64], config: &RelaxConfig) -> Result<SolveResult> {
    run_block_descent(operators, b, config, false)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{IndexMap, Layout, ReceiverGrid, SamplingMask};
    use crate::numerics::Rng;

    fn gaussian(rng: &mut Rng, n: usize, m: usize) -> DMatrix<f64> {
        DMatrix::from_fn(n, m, |_, _| rng.gaussian(0.0, 1.0))
    }

    fn small_ops(nx: usize, ny: usize, ns: usize, p: f64, seed: u64) -> Operators {
        let grid = ReceiverGrid::new(nx, ny, 1.0, 0.0, 0.0).unwrap();
        let order: Vec<usize> = (0..ns).collect();
        let map = IndexMap::new(&grid, &order, Layout::ReceiverBySource).unwrap();
        let mut rng = Rng::new(seed);
        let mut flags: Vec<bool> = (0..nx * ny * ns).map(|_| rng.unit() < p).collect();
        flags[0] = true;
        let mask = SamplingMask::new((nx, ny, ns), flags).unwrap();
        Operators::new(&grid, &map, &mask).unwrap()
    }

    fn l_objective(l: &DMatrix<f64>, w: &DMatrix<f64>, r: &DMatrix<f64>, rho: f64) -> f64 {
        0.5 * l.norm_squared() + 0.5 * rho * (w - l * r.transpose()).norm_squared()
    }

    #[test]
    fn zero_w_gives_zero_factors() {
        let mut rng = Rng::new(1);
        let r = gaussian(&mut rng, 3, 2);
        assert_eq!(update_l(&DMatrix::zeros(4, 3), &r, 1.5).unwrap(), DMatrix::zeros(4, 2));
        let l = gaussian(&mut rng, 4, 2);
        assert_eq!(update_r(&DMatrix::zeros(4, 3), &l, 1.5).unwrap(), DMatrix::zeros(3, 2));
    }

    #[test]
    fn scalar_l_update() {
        let l = update_l(
            &DMatrix::from_element(1, 1, 2.0),
            &DMatrix::from_element(1, 1, 1.0),
            1.0,
        )
        .unwrap();
        assert!((l[(0, 0)] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn l_update_is_first_order_optimal_and_minimal() {
        let mut rng = Rng::new(2);
        let w = gaussian(&mut rng, 4, 3);
        let r = gaussian(&mut rng, 3, 2);
        let rho = 1.7;
        let l = update_l(&w, &r, rho).unwrap();
        let grad = &l + (&l * r.transpose() - &w) * &r * rho;
        assert!(grad.amax() <= 1e-10);
        let best = l_objective(&l, &w, &r, rho);
        for _ in 0..50 {
            let probe = &l + gaussian(&mut rng, 4, 2) * 1e-3;
            assert!(l_objective(&probe, &w, &r, rho) >= best);
        }
    }

    #[test]
    fn r_update_mirrors_l_update() {
        let mut rng = Rng::new(3);
        let w = gaussian(&mut rng, 5, 4);
        let l = gaussian(&mut rng, 5, 2);
        let rho = 0.8;
        let r = update_r(&w, &l, rho).unwrap();
        let via_l = update_l(&w.transpose(), &l, rho).unwrap();
        assert!((&r - &via_l).amax() <= 1e-14);
        let grad = &r + (&r * l.transpose() - w.transpose()) * &l * rho;
        assert!(grad.amax() <= 1e-10);
    }

    #[test]
    fn factor_updates_reject_bad_shapes() {
        let w = DMatrix::zeros(3, 4);
        assert!(update_l(&w, &DMatrix::zeros(3, 2), 1.0).is_err());
        assert!(update_r(&w, &DMatrix::zeros(4, 2), 1.0).is_err());
    }

    #[test]
    fn w_at_zero_lambda_without_smoothing_is_d() {
        let ops = small_ops(3, 3, 2, 0.5, 4);
        let flat = ops.without_smoothing();
        let structure = flat.normal_structure().unwrap();
        let sys = NormalSystem::new(structure, 1.0, 2.5, 0.0).unwrap();
        let mut rng = Rng::new(5);
        let d: Vec<f64> = (0..18).map(|_| rng.gaussian(0.0, 1.0)).collect();
        let b: Vec<f64> = (0..ops.sampler().count()).map(|_| rng.gaussian(0.0, 1.0)).collect();
        let w = solve_w_lambda(&sys, &d, &b, ops.sampler()).unwrap();
        for i in 0..18 {
            assert!((w[i] - d[i]).abs() < 1e-14);
        }
    }

    #[test]
    fn w_lambda_matches_dense_solve() {
        let ops = small_ops(3, 3, 2, 0.4, 6);
        let sys = NormalSystem::new(ops.normal_structure().unwrap(), 0.3, 1.2, 4.0).unwrap();
        let mut rng = Rng::new(7);
        let d: Vec<f64> = (0..18).map(|_| rng.gaussian(0.0, 1.0)).collect();
        let b: Vec<f64> = (0..ops.sampler().count()).map(|_| rng.gaussian(0.0, 1.0)).collect();
        let w = solve_w_lambda(&sys, &d, &b, ops.sampler()).unwrap();

        let dense = sys.matrix().to_dense();
        let m = DMatrix::from_fn(18, 18, |i, j| dense[i][j]);
        let atb = ops.sampler().adjoint_vec(&b).unwrap();
        let rhs = nalgebra::DVector::from_iterator(18, (0..18).map(|i| 1.2 * d[i] + 4.0 * atb[i]));
        let exact = m.clone().lu().solve(&rhs).unwrap();
        for i in 0..18 {
            assert!((w[i] - exact[i]).abs() <= 1e-10 * exact.amax());
        }
        let res = &m * nalgebra::DVector::from_column_slice(&w) - &rhs;
        assert!(res.norm() <= 1e-10 * rhs.norm());
    }

    #[test]
    fn misfit_decreases_with_lambda_on_full_mask() {
        let ops = small_ops(3, 3, 1, 1.1, 8);
        let mut rng = Rng::new(9);
        let d: Vec<f64> = (0..9).map(|_| rng.gaussian(0.0, 1.0)).collect();
        let b: Vec<f64> = (0..9).map(|_| rng.gaussian(0.0, 1.0)).collect();
        let base = NormalSystem::new(ops.normal_structure().unwrap(), 0.5, 1.0, 0.0).unwrap();
        let mut prev = f64::INFINITY;
        for lambda in [1.0, 10.0, 1e3, 1e6] {
            let w = solve_w_lambda(&base.with_lambda(lambda).unwrap(), &d, &b, ops.sampler()).unwrap();
            let g = misfit(&w, &b, ops.sampler()).unwrap();
            assert!(g < prev);
            prev = g;
        }
        assert!(prev < 1e-2);
    }

    #[test]
    fn misfit_gap_cases() {
        let sampler = SamplingOperator::from_flags(2, 1, vec![true, true]).unwrap();
        assert_eq!(misfit_gap(&[1.0, 2.0], &[1.0, 2.0], &sampler, 0.0).unwrap(), 0.0);
        // residual (3, 4)·0.7438 has norm 3.719
        let w = [3.0 * 0.7438, 4.0 * 0.7438];
        let f = misfit_gap(&w, &[0.0, 0.0], &sampler, 3.719).unwrap();
        assert!(f.abs() < 1e-12);
        let f = misfit_gap(&[0.5, -1.0], &[0.25, 1.0], &sampler, 1.0).unwrap();
        assert!((f - (1.0 - (0.0625f64 + 4.0).sqrt())).abs() < 1e-15);
    }

    fn random_instance(seed: u64) -> (Operators, Vec<f64>, Vec<f64>, NormalSystem) {
        let mut rng = Rng::new(seed);
        let ops = small_ops(3, 3, 2, 0.5, seed);
        let n = ops.sampler().dim();
        let d: Vec<f64> = (0..n).map(|_| rng.gaussian(0.0, 1.0)).collect();
        let b: Vec<f64> = (0..ops.sampler().count()).map(|_| rng.gaussian(0.0, 1.0)).collect();
        let gamma = rng.uniform(0.1, 2.0);
        let rho = rng.uniform(0.5, 3.0);
        let lambda = rng.uniform(0.1, 5.0);
        let sys = NormalSystem::new(ops.normal_structure().unwrap(), gamma, rho, lambda).unwrap();
        (ops, d, b, sys)
    }

    #[test]
    fn derivative_modes_agree_and_match_finite_differences() {
        for seed in 0..10 {
            let (ops, d, b, sys) = random_instance(seed);
            let w = solve_w_lambda(&sys, &d, &b, ops.sampler()).unwrap();
            let a = dmisfit_dlambda(&sys, &d, &w, &b, ops.sampler(), DerivativeMode::Analytic, 0.0).unwrap();
            let c = dmisfit_dlambda(
                &sys,
                &d,
                &w,
                &b,
                ops.sampler(),
                DerivativeMode::ComplexStep,
                COMPLEX_STEP_H,
            )
            .unwrap();
            assert!(a >= 0.0);
            assert!((a - c).abs() <= 1e-8 * a.abs(), "seed {seed}: {a} vs {c}");

            let h = 1e-6;
            let f = |lam: f64| {
                let s = sys.with_lambda(lam).unwrap();
                let wl = solve_w_lambda(&s, &d, &b, ops.sampler()).unwrap();
                misfit_gap(&wl, &b, ops.sampler(), 0.0).unwrap()
            };
            let fd = (f(sys.lambda() + h) - f(sys.lambda() - h)) / (2.0 * h);
            assert!((a - fd).abs() <= 1e-5 * a.abs(), "seed {seed}: {a} vs {fd}");
        }
    }

    #[test]
    fn derivative_undefined_at_zero_residual() {
        let (ops, d, _, sys) = random_instance(3);
        let w = vec![0.0; ops.sampler().dim()];
        let b = vec![0.0; ops.sampler().count()];
        let r = dmisfit_dlambda(&sys, &d, &w, &b, ops.sampler(), DerivativeMode::Analytic, 0.0);
        assert!(matches!(r, Err(Error::ZeroResidual)));
    }

    #[test]
    fn already_feasible_returns_zero_multiplier() {
        let ops = small_ops(3, 3, 2, 0.5, 10);
        let mut rng = Rng::new(11);
        let d: Vec<f64> = vec![0.3; ops.sampler().dim()];
        // b = A(d): constants sit in the Laplacian kernel, so w(0) = d.
        let b = ops.sampler().apply_vec(&d).unwrap();
        let sigma = rng.uniform(0.0, 1.0);
        let root = root_find_lambda(&d, &b, &ops, 0.5, 1.0, sigma, 0.01, 1e-10, 50).unwrap();
        assert_eq!(root.lambda, 0.0);
        assert!(root.converged);
    }

    /// Bisection on g(λ) − σ over a doubling bracket, to 1e−12 relative width.
    fn bisection_oracle(ops: &Operators, d: &[f64], b: &[f64], gamma: f64, rho: f64, sigma: f64) -> (f64, f64) {
        let base = NormalSystem::new(ops.normal_structure().unwrap(), gamma, rho, 0.0).unwrap();
        let g = |lam: f64| {
            let w = solve_w_lambda(&base.with_lambda(lam).unwrap(), d, b, ops.sampler()).unwrap();
            misfit(&w, b, ops.sampler()).unwrap()
        };
        let (mut lo, mut hi) = (0.0, 1.0);
        while g(hi) > sigma {
            lo = hi;
            hi *= 2.0;
        }
        while hi - lo > 1e-12 * hi {
            let mid = 0.5 * (lo + hi);
            if g(mid) > sigma {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let lam = 0.5 * (lo + hi);
        (lam, g(lam))
    }

    #[test]
    fn newton_matches_bisection_oracle() {
        for seed in 0..8 {
            let mut rng = Rng::new(100 + seed);
            let ops = small_ops(2, 2, 3, 0.6, seed);
            let n = ops.sampler().dim();
            let d: Vec<f64> = (0..n).map(|_| rng.gaussian(0.0, 1.0)).collect();
            let b: Vec<f64> = (0..ops.sampler().count()).map(|_| rng.gaussian(0.0, 1.0)).collect();
            let base = NormalSystem::new(ops.normal_structure().unwrap(), 0.7, 1.3, 0.0).unwrap();
            let g0 = misfit(
                &solve_w_lambda(&base, &d, &b, ops.sampler()).unwrap(),
                &b,
                ops.sampler(),
            )
            .unwrap();
            let sigma = 0.4 * g0;
            let root = root_find_lambda(&d, &b, &ops, 0.7, 1.3, sigma, 0.0111, 1e-12, 200).unwrap();
            let (lam, g) = bisection_oracle(&ops, &d, &b, 0.7, 1.3, sigma);
            assert!(root.converged);
            assert!(root.evaluations <= 30, "seed {seed}: {} solves", root.evaluations);
            assert!((root.misfit - g).abs() <= 1e-9, "seed {seed}");
            assert!(
                (root.lambda - lam).abs() <= 1e-6 * lam,
                "seed {seed}: {} vs {lam}",
                root.lambda
            );
            // monotone path: larger λ never has larger misfit
            let mut path = root.path.clone();
            path.sort_by(|a, b| a.0.total_cmp(&b.0));
            assert!(path.windows(2).all(|p| p[1].1 <= p[0].1 + 1e-12));
        }
    }

    #[test]
    fn zero_budget_drives_misfit_below_tolerance() {
        let ops = small_ops(3, 3, 2, 0.5, 12);
        let mut rng = Rng::new(13);
        let n = ops.sampler().dim();
        let d: Vec<f64> = (0..n).map(|_| rng.gaussian(0.0, 1.0)).collect();
        let b: Vec<f64> = (0..ops.sampler().count()).map(|_| rng.gaussian(0.0, 1.0)).collect();
        let root = root_find_lambda(&d, &b, &ops, 0.5, 1.0, 0.0, 1.0, 1e-9, 200).unwrap();
        assert!(root.converged);
        assert!(root.misfit <= 1e-9);
    }

    #[test]
    fn diagonal_backend_matches_sparse_solve() {
        let ops = small_ops(3, 3, 2, 0.5, 14);
        let flat = ops.without_smoothing();
        let mut rng = Rng::new(15);
        let n = ops.sampler().dim();
        let rhs: Vec<f64> = (0..n).map(|_| rng.gaussian(0.0, 1.0)).collect();
        let mut diag = DiagonalBackend::new(ops.sampler(), 1.7);
        let mut sparse =
            SparseBackend::new(NormalSystem::new(flat.normal_structure().unwrap(), 1.0, 1.7, 0.0).unwrap());
        diag.set_lambda(3.2).unwrap();
        sparse.set_lambda(3.2).unwrap();
        let a = diag.solve(&rhs).unwrap();
        let b = sparse.solve(&rhs).unwrap();
        for i in 0..n {
            assert!((a[i] - b[i]).abs() <= 1e-15 * a[i].abs().max(1.0));
        }
    }

    #[test]
    fn config_validation() {
        assert!(RelaxConfig::default().validate().is_ok());
        let bad = RelaxConfig {
            rank_k: 0,
            ..RelaxConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = RelaxConfig {
            rho_factor: 0.5,
            ..RelaxConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = RelaxConfig {
            sigma: -1.0,
            ..RelaxConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn fully_observed_smooth_low_rank_is_recovered_with_zero_budget() {
        let grid = ReceiverGrid::new(4, 4, 1.0, 0.0, 0.0).unwrap();
        let ns = 4;
        let map = IndexMap::new(&grid, &[0, 1, 2, 3], Layout::BlockTessellated { n_bx: 2, n_by: 2 }).unwrap();
        let mask = SamplingMask::full((4, 4, ns));
        let ops = Operators::new(&grid, &map, &mask).unwrap();
        let truth: Vec<f64> = (0..64).map(|ti| 0.2 + 0.1 * (ti / 16) as f64).collect();
        let x = map.scatter(&truth).unwrap();
        let b = ops.sampler().apply_vec(x.as_slice()).unwrap();
        let config = RelaxConfig {
            gamma: 1.0,
            sigma: 0.0,
            rank_k: 2,
            max_iters: 20,
            ..RelaxConfig::combined(0.0)
        };
        let res = vr_solve(&ops, &b, &config).unwrap();
        assert!((&res.w - &x).norm() <= 1e-4 * x.norm());
        assert!(!res.failed);
    }

    #[test]
    fn lowrank_only_recovers_rank_one_full_data() {
        let mut rng = Rng::new(16);
        let grid = ReceiverGrid::new(3, 3, 1.0, 0.0, 0.0).unwrap();
        let map = IndexMap::new(&grid, &[0, 1, 2, 3], Layout::ReceiverBySource).unwrap();
        let mask = SamplingMask::full((3, 3, 4));
        let ops = Operators::new(&grid, &map, &mask).unwrap();
        let u = DMatrix::from_fn(9, 1, |_, _| rng.gaussian(0.0, 1.0));
        let v = DMatrix::from_fn(4, 1, |_, _| rng.gaussian(0.0, 1.0));
        let x = &u * v.transpose();
        let b = x.as_slice().to_vec();
        let config = RelaxConfig {
            sigma: 0.0,
            rank_k: 1,
            max_iters: 500,
            ..RelaxConfig::lowrank_only(0.0)
        };
        let res = lowrank_only_solve(&ops, &b, &config).unwrap();
        assert!((&res.w - &x).amax() <= 1e-6);
    }
}
