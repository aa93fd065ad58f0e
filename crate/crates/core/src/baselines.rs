//! Comparison solvers: FISTA on the nuclear-norm + smoothness penalized
//! objective, L-BFGS on the factorized penalized objective, and the
//! misfit-constrained smoothing-only interpolant.

use std::collections::VecDeque;
use std::time::Instant;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::thin_svd;
use crate::operators::{spectral_norm, NormalSystem, Operators, SamplingOperator};
use crate::relax::{
    find_root, misfit, DerivativeMode, FactorPair, IterRecord, NewtonParams, SolveResult, SparseBackend, WProblem,
};

/// Ridge added to the smoothing-only system, whose Laplacian Gram matrix is
/// singular on per-source constants.
pub const SMOOTH_ONLY_RIDGE: f64 = 1e-10;

/// Which operator sets the FISTA step when `step = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepRule {
    /// `1 / ‖λ𝒜*𝒜 + γ⁻¹ℒᵀℒ‖₂`.
    #[default]
    Combined,
    /// `1 / ‖ℒᵀℒ‖₂ = ‖ℒ‖₂⁻²`.
    Laplacian,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FistaConfig {
    pub lambda_fit: f64,
    pub gamma: f64,
    /// Fixed step; `0` selects it from `step_rule`.
    pub step: f64,
    pub step_rule: StepRule,
    pub max_iters: usize,
    pub iterate_tol: f64,
    /// Budget against which terminal feasibility is reported.
    #[serde(skip)]
    pub sigma: f64,
}

impl Default for FistaConfig {
    fn default() -> Self {
        Self {
            lambda_fit: 2.2222e-4,
            gamma: 6.45e-7,
            step: 0.0,
            step_rule: StepRule::Combined,
            max_iters: 1500,
            iterate_tol: 1e-10,
            sigma: 3.719,
        }
    }
}

impl FistaConfig {
    pub fn validate(&self) -> Result<()> {
        positive("lambda_fit", self.lambda_fit)?;
        positive("gamma", self.gamma)?;
        positive("iterate_tol", self.iterate_tol)?;
        if !(self.step >= 0.0) || !self.step.is_finite() {
            return Err(Error::config("step", format!("must be >= 0, got {}", self.step)));
        }
        nonnegative("sigma", self.sigma)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LbfgsConfig {
    pub lambda_fit: f64,
    pub gamma: f64,
    pub rank_k: usize,
    pub memory: usize,
    pub max_iters: usize,
    pub grad_tol: f64,
    pub iterate_tol: f64,
    /// Sufficient-decrease constant.
    pub c1: f64,
    /// Curvature constant.
    pub c2: f64,
    pub max_line_search: usize,
    #[serde(skip)]
    pub sigma: f64,
}

impl Default for LbfgsConfig {
    fn default() -> Self {
        Self {
            lambda_fit: 1.1111e-4,
            gamma: 6.45e-7,
            rank_k: 40,
            memory: 10,
            max_iters: 1500,
            grad_tol: 1e-8,
            iterate_tol: 1e-10,
            c1: 1e-4,
            c2: 0.9,
            max_line_search: 40,
            sigma: 3.719,
        }
    }
}

impl LbfgsConfig {
    pub fn validate(&self) -> Result<()> {
        positive("lambda_fit", self.lambda_fit)?;
        positive("gamma", self.gamma)?;
        positive("grad_tol", self.grad_tol)?;
        positive("iterate_tol", self.iterate_tol)?;
        nonnegative("sigma", self.sigma)?;
        if self.rank_k == 0 {
            return Err(Error::config("rank_k", "must be >= 1"));
        }
        if self.memory == 0 {
            return Err(Error::config("memory", "must be >= 1"));
        }
        if self.max_line_search == 0 {
            return Err(Error::config("max_line_search", "must be >= 1"));
        }
        if !(0.0 < self.c1 && self.c1 < self.c2 && self.c2 < 1.0) {
            return Err(Error::config(
                "c2",
                format!("need 0 < c1 < c2 < 1, got c1 = {}, c2 = {}", self.c1, self.c2),
            ));
        }
        Ok(())
    }
}

fn positive(key: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::config(key, format!("must be positive, got {v}")))
    }
}

fn nonnegative(key: &str, v: f64) -> Result<()> {
    if v >= 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::config(key, format!("must be >= 0, got {v}")))
    }
}

/// Singular value thresholding `U S_α(Σ) Vᵀ`, the prox of `α‖·‖_*`.
pub fn svt(g: &DMatrix<f64>, alpha: f64) -> Result<DMatrix<f64>> {
    Ok(svt_with_norm(g, alpha)?.0)
}

/// [`svt`] together with the nuclear norm of its output.
fn svt_with_norm(g: &DMatrix<f64>, alpha: f64) -> Result<(DMatrix<f64>, f64)> {
    if !(alpha >= 0.0) {
        return Err(Error::Argument(format!("threshold must be >= 0, got {alpha}")));
    }
    let svd = thin_svd(g)?;
    let kept: Vec<f64> = svd.s.iter().map(|s| (s - alpha).max(0.0)).collect();
    let r = kept.iter().take_while(|&&s| s > 0.0).count();
    let (n, m) = g.shape();
    if r == 0 {
        return Ok((DMatrix::zeros(n, m), 0.0));
    }
    let mut us = svd.u.columns(0, r).into_owned();
    for (j, s) in kept.iter().take(r).enumerate() {
        us.column_mut(j).scale_mut(*s);
    }
    Ok((us * svd.v.columns(0, r).transpose(), kept.iter().sum()))
}

/// Nuclear norm `Σσᵢ`.
pub fn nuclear_norm(x: &DMatrix<f64>) -> Result<f64> {
    Ok(thin_svd(x)?.s.sum())
}

/// Smooth part `(λ/2)‖𝒜X − b‖² + (1/2γ)‖ℒX‖²` and its gradient
/// `λ𝒜*(𝒜X − b) + γ⁻¹ℒᵀℒX`.
pub(crate) fn smooth_part(
    operators: &Operators,
    x: &DMatrix<f64>,
    b: &[f64],
    lambda_fit: f64,
    inv_gamma: f64,
) -> (f64, DMatrix<f64>) {
    let sampler = operators.sampler();
    let smoother = operators.smoother();
    let xs = x.as_slice();
    let mut grad = if inv_gamma > 0.0 {
        smoother.apply_gram(xs).into_iter().map(|v| v * inv_gamma).collect()
    } else {
        vec![0.0; xs.len()]
    };
    let mut fit = 0.0;
    for (&i, &y) in sampler.observed_indices().iter().zip(b) {
        let r = xs[i] - y;
        fit += r * r;
        grad[i] += lambda_fit * r;
    }
    let smooth = if inv_gamma > 0.0 { smoother.energy(xs) } else { 0.0 };
    let value = 0.5 * lambda_fit * fit + 0.5 * inv_gamma * smooth;
    let (n, m) = x.shape();
    (value, DMatrix::from_vec(n, m, grad))
}

/// Step selected by `config` for these operators.
pub fn fista_step(operators: &Operators, config: &FistaConfig) -> Result<f64> {
    if config.step > 0.0 {
        return Ok(config.step);
    }
    let sampler = operators.sampler();
    let smoother = operators.smoother();
    let inv_gamma = 1.0 / config.gamma;
    let n = sampler.dim();
    let estimate = match config.step_rule {
        StepRule::Combined => spectral_norm(
            |v| {
                let mut out: Vec<f64> = smoother.apply_gram(v).into_iter().map(|x| x * inv_gamma).collect();
                for &i in sampler.observed_indices() {
                    out[i] += config.lambda_fit * v[i];
                }
                out
            },
            n,
            20_000,
            1e-13,
        ),
        StepRule::Laplacian => spectral_norm(|v| smoother.apply_gram(v), n, 20_000, 1e-13),
    };
    if !(estimate.value > 0.0) {
        return Err(Error::Numerical("step operator has zero norm".into()));
    }
    Ok(1.0 / estimate.value)
}

/// `(t_{k−1} − 1)/t_k` weights and `t` values of the momentum sequence,
/// starting from `t₋₁ = t₀ = 1`.
pub fn momentum_sequence(len: usize) -> Vec<f64> {
    let mut t: Vec<f64> = vec![1.0];
    while t.len() < len {
        let last = *t.last().unwrap();
        t.push(0.5 * (1.0 + (1.0 + 4.0 * last * last).sqrt()));
    }
    t
}

/// One accepted FISTA step, exposed to observers.
pub struct FistaStep<'a> {
    pub iteration: usize,
    pub y: &'a DMatrix<f64>,
    pub x_next: &'a DMatrix<f64>,
    pub step: f64,
}

/// FISTA for `min (λ/2)‖𝒜X − b‖² + (1/2γ)‖ℒX‖² + ‖X‖_*` from `X₀ = 𝒜ᵀb`,
/// without restarts.
pub fn fista_solve(operators: &Operators, b: &[f64], config: &FistaConfig) -> Result<SolveResult> {
    fista_solve_observed(operators, b, config, |_| {})
}

/// [`fista_solve`] calling `observe` after every proximal step.
pub fn fista_solve_observed(
    operators: &Operators,
    b: &[f64],
    config: &FistaConfig,
    mut observe: impl FnMut(&FistaStep<'_>),
) -> Result<SolveResult> {
    config.validate()?;
    check_observations(operators.sampler(), b)?;
    let start = Instant::now();
    let (n, m) = operators.shape();
    let alpha = fista_step(operators, config)?;
    let inv_gamma = 1.0 / config.gamma;

    let mut x = DMatrix::from_vec(n, m, operators.sampler().adjoint_vec(b)?);
    let mut x_prev = x.clone();
    let (mut t_prev, mut t) = (1.0_f64, 1.0_f64);
    let mut history = Vec::with_capacity(config.max_iters);
    let mut converged = false;
    for k in 0..config.max_iters {
        let y = &x + (&x - &x_prev) * ((t_prev - 1.0) / t);
        let (_, grad) = smooth_part(operators, &y, b, config.lambda_fit, inv_gamma);
        let g = &y - grad * alpha;
        let (x_next, nuc) = svt_with_norm(&g, alpha)?;
        observe(&FistaStep {
            iteration: k,
            y: &y,
            x_next: &x_next,
            step: alpha,
        });
        let change = (&x_next - &x).norm();
        x_prev = std::mem::replace(&mut x, x_next);
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        t_prev = t;
        t = t_next;

        let (smooth, _) = smooth_part(operators, &x, b, config.lambda_fit, inv_gamma);
        history.push(IterRecord {
            objective: smooth + nuc,
            misfit: misfit(x.as_slice(), b, operators.sampler())?,
            gap: 0.0,
            seconds: start.elapsed().as_secs_f64(),
            rho: 0.0,
            lambda: config.lambda_fit,
        });
        if change < config.iterate_tol {
            converged = true;
            break;
        }
    }
    let final_misfit = misfit(x.as_slice(), b, operators.sampler())?;
    Ok(SolveResult {
        terminal_feasibility: final_misfit - config.sigma,
        iterations: history.len(),
        w: x,
        factors: None,
        history,
        converged,
        failed: false,
        warnings: Vec::new(),
    })
}

/// `(λ/2)‖𝒜(LRᵀ) − b‖² + (1/2γ)‖ℒ(LRᵀ)‖² + ½‖L‖² + ½‖R‖²` and its
/// gradients in `L` and `R`.
pub fn lbfgs_objective_grad(
    l: &DMatrix<f64>,
    r: &DMatrix<f64>,
    b: &[f64],
    config: &LbfgsConfig,
    operators: &Operators,
) -> Result<(f64, DMatrix<f64>, DMatrix<f64>)> {
    let (n, m) = operators.shape();
    if l.nrows() != n || r.nrows() != m || l.ncols() != r.ncols() {
        return Err(Error::Dimension(format!(
            "factors {:?} and {:?} do not form a {n} x {m} matrix",
            l.shape(),
            r.shape()
        )));
    }
    let w = l * r.transpose();
    let (smooth, g) = smooth_part(operators, &w, b, config.lambda_fit, 1.0 / config.gamma);
    let value = smooth + 0.5 * (l.norm_squared() + r.norm_squared());
    let grad_l = &g * r + l;
    let grad_r = g.tr_mul(l) + r;
    Ok((value, grad_l, grad_r))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn axpy(alpha: f64, x: &[f64], y: &[f64]) -> Vec<f64> {
    x.iter().zip(y).map(|(xi, yi)| yi + alpha * xi).collect()
}

/// Two-loop recursion: `−H∇f` from the stored curvature pairs.
fn lbfgs_direction(grad: &[f64], pairs: &VecDeque<(Vec<f64>, Vec<f64>, f64)>) -> Vec<f64> {
    let mut q = grad.to_vec();
    let mut alphas = Vec::with_capacity(pairs.len());
    for (s, y, rho) in pairs.iter().rev() {
        let a = rho * dot(s, &q);
        q = axpy(-a, y, &q);
        alphas.push(a);
    }
    if let Some((s, y, _)) = pairs.back() {
        let scale = dot(s, y) / dot(y, y);
        q.iter_mut().for_each(|v| *v *= scale);
    }
    for ((s, y, rho), a) in pairs.iter().zip(alphas.into_iter().rev()) {
        let beta = rho * dot(y, &q);
        q = axpy(a - beta, s, &q);
    }
    q.iter_mut().for_each(|v| *v = -*v);
    q
}

/// Minimizes `f` along `x + t·p` subject to the strong Wolfe conditions.
/// Returns `(t, f, ∇f)` at the accepted point.
struct LineSearch<'a, F: Fn(&[f64]) -> Result<(f64, Vec<f64>)>> {
    f: &'a F,
    x: &'a [f64],
    p: &'a [f64],
    f0: f64,
    d0: f64,
    c1: f64,
    c2: f64,
    max: usize,
}

type Probe = (f64, f64, Vec<f64>, f64);

impl<F: Fn(&[f64]) -> Result<(f64, Vec<f64>)>> LineSearch<'_, F> {
    fn eval(&self, t: f64) -> Result<Probe> {
        let (v, g) = (self.f)(&axpy(t, self.p, self.x))?;
        let d = dot(&g, self.p);
        Ok((t, v, g, d))
    }

    fn run(&self, t_init: f64) -> Result<Option<Probe>> {
        let mut prev: Probe = (0.0, self.f0, Vec::new(), self.d0);
        let mut t = t_init;
        for i in 0..self.max {
            let cur = self.eval(t)?;
            if !cur.1.is_finite() || cur.1 > self.f0 + self.c1 * t * self.d0 || (i > 0 && cur.1 >= prev.1) {
                return self.zoom(prev, cur);
            }
            if cur.3.abs() <= -self.c2 * self.d0 {
                return Ok(Some(cur));
            }
            if cur.3 >= 0.0 {
                return self.zoom(cur, prev);
            }
            prev = cur;
            t *= 2.0;
        }
        Ok(None)
    }

    fn zoom(&self, mut lo: Probe, mut hi: Probe) -> Result<Option<Probe>> {
        for _ in 0..self.max {
            let t = cubic_min(&lo, &hi);
            let cur = self.eval(t)?;
            if !cur.1.is_finite() || cur.1 > self.f0 + self.c1 * t * self.d0 || cur.1 >= lo.1 {
                hi = cur;
            } else {
                if cur.3.abs() <= -self.c2 * self.d0 {
                    return Ok(Some(cur));
                }
                if cur.3 * (hi.0 - lo.0) >= 0.0 {
                    hi = lo;
                }
                lo = cur;
            }
            if (hi.0 - lo.0).abs() <= 1e-16 * lo.0.abs().max(1.0) {
                break;
            }
        }
        Ok(None)
    }
}

/// Cubic-interpolation minimizer in the interval spanned by two probes,
/// pulled back to the middle 80% and replaced by bisection when degenerate.
fn cubic_min(a: &Probe, b: &Probe) -> f64 {
    let (ta, fa, _, da) = (a.0, a.1, &a.2, a.3);
    let (tb, fb, _, db) = (b.0, b.1, &b.2, b.3);
    let (lo, hi) = (ta.min(tb), ta.max(tb));
    let mid = 0.5 * (lo + hi);
    if !fb.is_finite() || !db.is_finite() {
        return mid;
    }
    let d1 = da + db - 3.0 * (fa - fb) / (ta - tb);
    let disc = d1 * d1 - da * db;
    if disc < 0.0 {
        return mid;
    }
    let d2 = (tb - ta).signum() * disc.sqrt();
    let t = tb - (tb - ta) * (db + d2 - d1) / (db - da + 2.0 * d2);
    let margin = 0.1 * (hi - lo);
    if t.is_finite() && t >= lo + margin && t <= hi - margin {
        t
    } else {
        mid
    }
}

/// L-BFGS on `[vec L; vec R]` with a strong-Wolfe line search, from the
/// spectral factors of `𝒜ᵀb`. A failed line search falls back to a
/// backtracking gradient step and clears the curvature memory.
pub fn lbfgs_solve(operators: &Operators, b: &[f64], config: &LbfgsConfig) -> Result<SolveResult> {
    config.validate()?;
    check_observations(operators.sampler(), b)?;
    let start = Instant::now();
    let (n, m) = operators.shape();
    let k = config.rank_k;
    let w0 = DMatrix::from_vec(n, m, operators.sampler().adjoint_vec(b)?);
    let init = FactorPair::spectral(&w0, k)?;

    let split = |z: &[f64]| {
        (
            DMatrix::from_column_slice(n, k, &z[..n * k]),
            DMatrix::from_column_slice(m, k, &z[n * k..]),
        )
    };
    let f = |z: &[f64]| -> Result<(f64, Vec<f64>)> {
        let (l, r) = split(z);
        let (v, gl, gr) = lbfgs_objective_grad(&l, &r, b, config, operators)?;
        let mut g = gl.as_slice().to_vec();
        g.extend_from_slice(gr.as_slice());
        Ok((v, g))
    };

    let mut x: Vec<f64> = init.l.as_slice().iter().chain(init.r.as_slice()).copied().collect();
    let (mut fx, mut gx) = f(&x)?;
    let mut pairs: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(config.memory);
    let mut history = Vec::with_capacity(config.max_iters);
    let mut warnings = Vec::new();
    let mut converged = false;

    for it in 0..config.max_iters {
        let gnorm = dot(&gx, &gx).sqrt();
        if gnorm <= config.grad_tol {
            converged = true;
            break;
        }
        let mut p = lbfgs_direction(&gx, &pairs);
        let mut d0 = dot(&gx, &p);
        if !(d0 < 0.0) {
            pairs.clear();
            p = gx.iter().map(|v| -v).collect();
            d0 = -gnorm * gnorm;
        }
        let t_init = if pairs.is_empty() { (1.0 / gnorm).min(1.0) } else { 1.0 };
        let search = LineSearch {
            f: &f,
            x: &x,
            p: &p,
            f0: fx,
            d0,
            c1: config.c1,
            c2: config.c2,
            max: config.max_line_search,
        };
        let accepted = match search.run(t_init)? {
            Some((t, v, g, _)) => Some((axpy(t, &p, &x), v, g)),
            None => {
                warnings.push(format!("iteration {it}: line search failed, taking a gradient step"));
                pairs.clear();
                gradient_fallback(&f, &x, &gx, fx, gnorm, config)?
            }
        };
        let Some((x_new, f_new, g_new)) = accepted else {
            warnings.push(format!("iteration {it}: no decrease along the gradient, stopping"));
            break;
        };
        let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = g_new.iter().zip(&gx).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * dot(&s, &s).sqrt() * dot(&y, &y).sqrt() {
            if pairs.len() == config.memory {
                pairs.pop_front();
            }
            pairs.push_back((s.clone(), y, 1.0 / sy));
        }
        let change = dot(&s, &s).sqrt();
        x = x_new;
        fx = f_new;
        gx = g_new;

        let (l, r) = split(&x);
        let w = &l * r.transpose();
        history.push(IterRecord {
            objective: fx,
            misfit: misfit(w.as_slice(), b, operators.sampler())?,
            gap: 0.0,
            seconds: start.elapsed().as_secs_f64(),
            rho: 0.0,
            lambda: config.lambda_fit,
        });
        if change < config.iterate_tol {
            converged = true;
            break;
        }
    }

    let (l, r) = split(&x);
    let factors = FactorPair::new(l, r)?;
    let w = factors.product();
    let final_misfit = misfit(w.as_slice(), b, operators.sampler())?;
    Ok(SolveResult {
        terminal_feasibility: final_misfit - config.sigma,
        iterations: history.len(),
        w,
        factors: Some(factors),
        history,
        converged,
        failed: false,
        warnings,
    })
}

type Accepted = Option<(Vec<f64>, f64, Vec<f64>)>;

fn gradient_fallback(
    f: &impl Fn(&[f64]) -> Result<(f64, Vec<f64>)>,
    x: &[f64],
    g: &[f64],
    fx: f64,
    gnorm: f64,
    config: &LbfgsConfig,
) -> Result<Accepted> {
    let mut t = 1.0 / gnorm;
    for _ in 0..60 {
        let trial: Vec<f64> = x.iter().zip(g).map(|(xi, gi)| xi - t * gi).collect();
        let (v, gv) = f(&trial)?;
        if v.is_finite() && v <= fx - config.c1 * t * gnorm * gnorm {
            return Ok(Some((trial, v, gv)));
        }
        t *= 0.5;
    }
    Ok(None)
}

/// Misfit-constrained smoothing-only interpolant:
/// `w(λ) = (ℒᵀℒ + εI + λAᵀA)⁻¹ λAᵀb` with `ε = 1e−10`, at the smallest
/// `λ ≥ 0` meeting `‖Aw − b‖₂ ≤ σ`.
pub fn smoothing_only_solve(
    operators: &Operators,
    b: &[f64],
    sigma: f64,
    lambda_init: f64,
    newton_tol: f64,
    newton_max: usize,
) -> Result<SolveResult> {
    nonnegative("sigma", sigma)?;
    positive("newton_tol", newton_tol)?;
    if newton_max == 0 {
        return Err(Error::config("newton_max", "must be >= 1"));
    }
    check_observations(operators.sampler(), b)?;
    let start = Instant::now();
    let (n, m) = operators.shape();
    let system = NormalSystem::new(operators.normal_structure()?, 1.0, SMOOTH_ONLY_RIDGE, 0.0)?;
    let mut backend = SparseBackend::new(system);
    let zeros = vec![0.0; n * m];
    let problem = WProblem::new(operators.sampler(), b, &zeros, SMOOTH_ONLY_RIDGE, sigma)?;
    let root = find_root(
        &mut backend,
        &problem,
        NewtonParams {
            sigma,
            lambda_init,
            tol: newton_tol,
            max: newton_max,
            mode: DerivativeMode::Analytic,
        },
    )?;
    let w = DMatrix::from_vec(n, m, root.w);
    let mut warnings = Vec::new();
    if !root.converged {
        warnings.push(format!(
            "multiplier search stopped after {} solves at misfit {:.6e}",
            root.evaluations, root.misfit
        ));
    }
    let objective = operators.smoother().energy(w.as_slice());
    Ok(SolveResult {
        terminal_feasibility: root.misfit - sigma,
        iterations: 1,
        w,
        factors: None,
        history: vec![IterRecord {
            objective,
            misfit: root.misfit,
            gap: 0.0,
            seconds: start.elapsed().as_secs_f64(),
            rho: 0.0,
            lambda: root.lambda,
        }],
        converged: root.converged,
        failed: !root.converged,
        warnings,
    })
}

fn check_observations(sampler: &SamplingOperator, b: &[f64]) -> Result<()> {
    if b.len() != sampler.count() {
        return Err(Error::Dimension(format!(
            "{} observations for {} observed entries",
            b.len(),
            sampler.count()
        )));
    }
    if b.iter().any(|v| !v.is_finite()) {
        return Err(Error::Argument("observations must be finite".into()));
    }
    Ok(())
}
