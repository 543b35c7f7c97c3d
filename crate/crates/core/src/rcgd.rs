//! Riemannian conjugate gradient descent on the SPD manifold.
//!
//! Each iteration projects the Euclidean gradient onto the tangent space,
//! mixes in the transported previous direction with a conjugate coefficient,
//! and backtracks along the exponential retraction until the Armijo
//! condition holds. When the conjugate direction admits no acceptable step
//! the solver retries once along steepest descent before giving up.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spd::{
    project_to_tangent, retract, sym_part, transport, Mat, SpdMatrix, TangentMetric, TangentVector,
    TransportKind, EIGEN_FLOOR,
};

/// Conjugate coefficient rule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum BetaRule {
    FletcherReeves,
    #[default]
    PolakRibierePlus,
    /// A constant coefficient, as in the literal reading of a fixed transport parameter.
    Fixed(f64),
}

/// Choice of the first trial step of each line search.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum StepInit {
    /// Always start from `initial_step`.
    Constant,
    /// Probe at twice the previous accepted step, fit a quadratic through
    /// `f(0)`, the slope and the probe, and start backtracking from its minimizer.
    /// The first iteration uses `initial_step`.
    #[default]
    Interpolated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RcgdConfig {
    pub max_iters: usize,
    /// Threshold on the Frobenius norm of the Riemannian gradient.
    pub grad_tol: f64,
    pub armijo_c: f64,
    pub backtrack_factor: f64,
    pub max_backtracks: usize,
    pub initial_step: f64,
    pub step_init: StepInit,
    pub beta_rule: BetaRule,
    /// Inner product used inside the conjugate coefficient.
    pub metric: TangentMetric,
    pub transport: TransportKind,
}

impl Default for RcgdConfig {
    fn default() -> Self {
        Self {
            max_iters: 100,
            grad_tol: 1e-5,
            armijo_c: 1e-4,
            backtrack_factor: 0.5,
            max_backtracks: 30,
            initial_step: 1.0,
            step_init: StepInit::Interpolated,
            beta_rule: BetaRule::PolakRibierePlus,
            metric: TangentMetric::AffineInvariant,
            transport: TransportKind::Reprojection,
        }
    }
}

impl RcgdConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Config(msg.to_string()));
        if self.max_iters == 0 {
            return bad("rcgd.max_iters must be positive");
        }
        if !(self.grad_tol > 0.0) {
            return bad("rcgd.grad_tol must be positive");
        }
        if !(self.armijo_c > 0.0 && self.armijo_c < 1.0) {
            return bad("rcgd.armijo_c must lie in (0, 1)");
        }
        if !(self.backtrack_factor > 0.0 && self.backtrack_factor < 1.0) {
            return bad("rcgd.backtrack_factor must lie in (0, 1)");
        }
        if self.max_backtracks == 0 {
            return bad("rcgd.max_backtracks must be positive");
        }
        if !(self.initial_step > 0.0 && self.initial_step.is_finite()) {
            return bad("rcgd.initial_step must be positive");
        }
        if let BetaRule::Fixed(b) = self.beta_rule {
            if !b.is_finite() {
                return bad("rcgd fixed beta must be finite");
            }
        }
        Ok(())
    }
}

/// Per-iteration record of one solver run. Index 0 is the starting point.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RcgdTrace {
    pub objective_per_iter: Vec<f64>,
    pub grad_norm_per_iter: Vec<f64>,
    pub iters_used: usize,
    pub converged: bool,
}

/// An accepted line-search step.
#[derive(Debug, Clone)]
pub struct LineSearchStep {
    pub step: f64,
    pub point: SpdMatrix,
    pub value: f64,
}

/// Armijo backtracking along `t ↦ retract(M, t·H)`, starting at
/// `cfg.initial_step` and shrinking by `cfg.backtrack_factor`.
///
/// Trial points that leave the manifold numerically, fall below the eigenvalue
/// floor, or give a non-finite cost are rejected like any other failed trial.
pub fn line_search(
    m: &SpdMatrix,
    h: &TangentVector,
    cost: &impl Fn(&SpdMatrix) -> f64,
    f0: f64,
    slope0: f64,
    cfg: &RcgdConfig,
) -> Result<LineSearchStep> {
    line_search_from(m, h, cost, f0, slope0, cfg.initial_step, cfg)
}

fn line_search_from(
    m: &SpdMatrix,
    h: &TangentVector,
    cost: &impl Fn(&SpdMatrix) -> f64,
    f0: f64,
    slope0: f64,
    alpha0: f64,
    cfg: &RcgdConfig,
) -> Result<LineSearchStep> {
    if !(slope0 < 0.0) {
        return Err(Error::Precondition(format!(
            "line search needs a descent direction, slope is {slope0:e}"
        )));
    }
    if !h.is_at(m) {
        return Err(Error::BasePointMismatch);
    }
    let mut step = alpha0;
    for _ in 0..=cfg.max_backtracks {
        if let Ok(point) = retract(m, &h.scale(step)) {
            if point.min_eigenvalue() < EIGEN_FLOOR * point.max_eigenvalue() {
                step *= cfg.backtrack_factor;
                continue;
            }
            let value = cost(&point);
            if value.is_finite() && value <= f0 + cfg.armijo_c * step * slope0 {
                return Ok(LineSearchStep { step, point, value });
            }
        }
        step *= cfg.backtrack_factor;
    }
    Err(Error::LineSearchFailed(cfg.max_backtracks))
}

/// Minimizer of the quadratic through `f(0) = f0`, `f'(0) = slope0` and the
/// cost at `probe`; falls back to `probe` when the fit has no interior minimum.
fn interpolated_step(
    m: &SpdMatrix,
    h: &TangentVector,
    cost: &impl Fn(&SpdMatrix) -> f64,
    f0: f64,
    slope0: f64,
    probe: f64,
) -> f64 {
    let Ok(point) = retract(m, &h.scale(probe)) else {
        return probe * 0.5;
    };
    let fp = cost(&point);
    let curvature = (fp - f0 - slope0 * probe) / (probe * probe);
    if fp.is_finite() && curvature > 0.0 {
        -slope0 / (2.0 * curvature)
    } else {
        probe
    }
}

/// Conjugate coefficient from the new gradient and the transported old one.
pub fn conjugate_beta(
    g_new: &TangentVector,
    g_old_transported: &TangentVector,
    rule: BetaRule,
    metric: TangentMetric,
) -> Result<f64> {
    if !g_old_transported.is_at(g_new.base()) {
        return Err(Error::BasePointMismatch);
    }
    if let BetaRule::Fixed(b) = rule {
        return Ok(b);
    }
    let ip = |a: &TangentVector, b: &TangentVector| a.inner_with(b, metric);
    let old_sq = ip(g_old_transported, g_old_transported);
    if old_sq == 0.0 {
        return Ok(0.0);
    }
    let beta = match rule {
        BetaRule::FletcherReeves => ip(g_new, g_new) / old_sq,
        BetaRule::PolakRibierePlus => {
            let diff = g_new.lin_comb(1.0, g_old_transported, -1.0)?;
            (ip(g_new, &diff) / old_sq).max(0.0)
        }
        BetaRule::Fixed(_) => unreachable!(),
    };
    Ok(if beta.is_finite() { beta } else { 0.0 })
}

/// Euclidean gradient (symmetrized) and its Riemannian counterpart at `m`.
struct Gradients {
    euclidean: Mat,
    riemannian: TangentVector,
}

impl Gradients {
    fn at(m: &SpdMatrix, egrad: &impl Fn(&SpdMatrix) -> Mat, iteration: usize) -> Result<Self> {
        let g = egrad(m);
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                what: "gradient",
                iteration,
            });
        }
        let riemannian = project_to_tangent(m, &g)?;
        Ok(Self {
            euclidean: sym_part(&g)?,
            riemannian,
        })
    }

    /// Derivative of the cost along `t ↦ retract(M, t·H)` at `t = 0`.
    fn slope(&self, h: &TangentVector) -> f64 {
        self.euclidean.dot(h.as_matrix())
    }
}

/// Minimizes `cost` over SPD matrices starting from `m0`.
pub fn rcgd_minimize(
    m0: &SpdMatrix,
    cost: impl Fn(&SpdMatrix) -> f64,
    egrad: impl Fn(&SpdMatrix) -> Mat,
    cfg: &RcgdConfig,
) -> Result<(SpdMatrix, RcgdTrace)> {
    cfg.validate()?;
    let mut m = m0.clone();
    let mut f = cost(&m);
    if !f.is_finite() {
        return Err(Error::NonFinite {
            what: "cost",
            iteration: 0,
        });
    }
    let mut grads = Gradients::at(&m, &egrad, 0)?;
    let mut trace = RcgdTrace {
        objective_per_iter: vec![f],
        grad_norm_per_iter: vec![grads.riemannian.norm()],
        iters_used: 0,
        converged: false,
    };
    // (previous point, previous direction, previous Riemannian gradient)
    let mut memory: Option<(SpdMatrix, TangentVector, TangentVector)> = None;
    let mut last_step: Option<f64> = None;

    for iter in 0..cfg.max_iters {
        let g = &grads.riemannian;
        if g.norm() < cfg.grad_tol {
            trace.converged = true;
            break;
        }
        let steepest = g.scale(-1.0);
        let mut dir = match &memory {
            None => steepest.clone(),
            Some((prev, h_old, g_old)) => {
                let h_t = transport(h_old, prev, &m, cfg.transport)?;
                let g_t = transport(g_old, prev, &m, cfg.transport)?;
                let beta = conjugate_beta(g, &g_t, cfg.beta_rule, cfg.metric)?;
                steepest.lin_comb(1.0, &h_t, beta)?
            }
        };
        let mut slope = grads.slope(&dir);
        if !(slope < 0.0) {
            dir = steepest.clone();
            slope = grads.slope(&dir);
        }

        let alpha0 = match (cfg.step_init, last_step) {
            (StepInit::Constant, _) | (_, None) => cfg.initial_step,
            (StepInit::Interpolated, Some(step)) => {
                interpolated_step(&m, &dir, &cost, f, slope, 2.0 * step)
            }
        };
        let alpha0 = if alpha0.is_finite() && alpha0 > 0.0 {
            alpha0
        } else {
            cfg.initial_step
        };

        let accepted = match line_search_from(&m, &dir, &cost, f, slope, alpha0, cfg) {
            Ok(s) => s,
            Err(Error::LineSearchFailed(_)) if memory.is_some() => {
                dir = steepest;
                slope = grads.slope(&dir);
                match line_search_from(&m, &dir, &cost, f, slope, cfg.initial_step, cfg) {
                    Ok(s) => s,
                    Err(Error::LineSearchFailed(_)) => break,
                    Err(e) => return Err(e),
                }
            }
            Err(Error::LineSearchFailed(_)) => break,
            Err(e) => return Err(e),
        };

        let next = accepted.point;
        let next_grads = Gradients::at(&next, &egrad, iter + 1)?;
        let old = std::mem::replace(&mut grads, next_grads);
        memory = Some((m, dir, old.riemannian));
        m = next;
        last_step = Some(accepted.step);
        f = accepted.value;
        trace.objective_per_iter.push(f);
        trace.grad_norm_per_iter.push(grads.riemannian.norm());
        trace.iters_used = iter + 1;
    }
    if !trace.converged && grads.riemannian.norm() < cfg.grad_tol {
        trace.converged = true;
    }
    Ok((m, trace))
}
