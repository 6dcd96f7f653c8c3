//! Outer iterations: the proximal gradient method (ManPG), the proximal Newton
//! method (RPN), its globalized hybrid (RPN-G) and the naive second-order
//! baseline (RPN-N).
//!
//! All four share one driver. At every iterate `x_k` the tangent proximal
//! subproblem is solved, giving `v_k`; `||v_k||` is the stationarity measure
//! recorded in the trace and used for stopping and phase switching.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::manifold::ManifoldPoint;
use crate::naive::solve_naive_subproblem;
use crate::newton::NewtonState;
use crate::objective::CompositeObjective;
use crate::prox::{ProxSolution, TangentProx};

/// A Newton step is rejected when it inflates `||v||` by more than this.
pub const SAFEGUARD_GROWTH: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    /// Proximal step `t`.
    pub t: f64,
    /// Backtracking factor, in `(0, 1/2]`.
    pub rho: f64,
    /// Switch to Newton steps once `||v_k|| <= epsilon`.
    pub epsilon: f64,
    /// Stop once `||v_k|| <= tol_final`.
    pub tol_final: f64,
    pub max_iter: usize,
    pub max_backtracks: usize,
    pub seed: u64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            t: 1.0,
            rho: 0.5,
            epsilon: 1e-4,
            tol_final: 1e-12,
            max_iter: 3000,
            max_backtracks: 50,
            seed: 0,
        }
    }
}

impl SolverConfig {
    pub fn with_step(t: f64) -> Self {
        SolverConfig {
            t,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.t > 0.0 && self.t.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "t must be positive, got {}",
                self.t
            )));
        }
        if !(self.rho > 0.0 && self.rho <= 0.5) {
            return Err(Error::InvalidConfig(format!(
                "rho must lie in (0, 0.5], got {}",
                self.rho
            )));
        }
        if !(self.tol_final >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "tol_final must be nonnegative, got {}",
                self.tol_final
            )));
        }
        if !(self.epsilon > self.tol_final) {
            return Err(Error::InvalidConfig(format!(
                "epsilon ({}) must exceed tol_final ({})",
                self.epsilon, self.tol_final
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Gradient,
    Newton,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Algorithm {
    #[serde(rename = "manpg")]
    ManPg,
    /// Proximal gradient steps until `||v|| <= epsilon`, then unit Newton
    /// steps with no safeguard. With `epsilon = inf` this is the plain method.
    #[serde(rename = "rpn")]
    Rpn,
    #[serde(rename = "rpn-g")]
    RpnG,
    #[serde(rename = "rpn-n")]
    RpnN,
}

impl Algorithm {
    pub const ALL: [Algorithm; 4] = [
        Algorithm::ManPg,
        Algorithm::Rpn,
        Algorithm::RpnG,
        Algorithm::RpnN,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Algorithm::ManPg => "manpg",
            Algorithm::Rpn => "rpn",
            Algorithm::RpnG => "rpn-g",
            Algorithm::RpnN => "rpn-n",
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Algorithm::ALL
            .into_iter()
            .find(|a| a.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::InvalidConfig(format!("unknown algorithm '{s}'")))
    }
}

/// One outer iteration. Record `k` describes the iterate `x_k` and the step
/// taken from it; the last record of a trace has no step (`alpha` is `None`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub k: usize,
    /// `F(x_k)`.
    pub f: f64,
    /// `||v_k||`, measured before stepping.
    pub v_norm: f64,
    /// Step length; 1 for Newton and naive steps.
    pub alpha: Option<f64>,
    pub phase: Phase,
    /// A Newton-phase iteration that reverted to a proximal gradient step.
    pub fallback: bool,
    pub inner_iters: usize,
    pub lin_iters: usize,
    /// Number of nonzero entries of `x_k`.
    pub support: usize,
    /// Number of active coordinates of the subproblem at `x_k`, which is the
    /// support of `x_k + v_k`.
    pub active: usize,
    pub feasibility: f64,
    pub mask_fingerprint: u64,
    pub wall_ns: u64,
}

impl TraceRecord {
    /// Whether the step out of this iterate used the proximal gradient
    /// direction with a line search.
    pub fn is_gradient_step(&self) -> bool {
        self.alpha.is_some() && (self.phase == Phase::Gradient || self.fallback)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Status {
    Converged,
    MaxIter,
    /// The line search could only accept the null step: the required decrease
    /// is below the rounding level of `F`, so later iterations would repeat
    /// this one exactly.
    Stalled,
    Failed(Error),
}

/// Table-style summary of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    /// Number of outer steps taken.
    pub iter: usize,
    /// First iteration at which `||v_k||` reaches the order of magnitude of
    /// its smallest recorded value.
    pub iter_v: usize,
    /// Number of steps along a second-order direction.
    pub iter_u: usize,
    pub f_final: f64,
    /// Fraction of zero entries of `x + v` at the last iterate.
    pub sparsity: f64,
    pub v_final: f64,
}

#[derive(Debug, Clone)]
pub struct ConvergenceTrace {
    pub algorithm: Algorithm,
    pub records: Vec<TraceRecord>,
    pub x_final: ManifoldPoint,
    pub status: Status,
}

impl ConvergenceTrace {
    /// Index of the first Newton-phase record.
    pub fn newton_start(&self) -> Option<usize> {
        self.records.iter().position(|r| r.phase == Phase::Newton)
    }

    /// `||v_k||` at Newton-phase records, skipping those that fell back to a
    /// gradient step. Includes the terminal record.
    pub fn newton_v_norms(&self) -> Vec<f64> {
        self.records
            .iter()
            .filter(|r| r.phase == Phase::Newton && !r.fallback)
            .map(|r| r.v_norm)
            .collect()
    }

    pub fn v_norms(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.v_norm).collect()
    }

    pub fn iter_u(&self) -> usize {
        self.records
            .iter()
            .filter(|r| r.alpha.is_some() && r.phase == Phase::Newton && !r.fallback)
            .count()
    }

    pub fn summary(&self) -> Summary {
        let last = self.records.last();
        let v_min = self
            .records
            .iter()
            .map(|r| r.v_norm)
            .fold(f64::INFINITY, f64::min);
        let iter_v = if v_min > 0.0 && v_min.is_finite() {
            let threshold = 10f64.powf(v_min.log10().floor() + 1.0);
            self.records
                .iter()
                .position(|r| r.v_norm < threshold)
                .unwrap_or(0)
        } else {
            self.records
                .iter()
                .position(|r| r.v_norm == v_min)
                .unwrap_or(0)
        };
        Summary {
            iter: self.records.len().saturating_sub(1),
            iter_v,
            iter_u: self.iter_u(),
            f_final: last.map_or(f64::NAN, |r| r.f),
            sparsity: last.map_or(f64::NAN, |r| {
                let amb = self.x_final.ambient_dim() as f64;
                (amb - r.active as f64) / amb
            }),
            v_final: last.map_or(f64::NAN, |r| r.v_norm),
        }
    }

    pub fn is_failed(&self) -> bool {
        matches!(self.status, Status::Failed(_))
    }
}

/// Objective, gradient and subproblem solution at one point.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub x: ManifoldPoint,
    /// `F(x)`.
    pub f: f64,
    pub egrad: DVector<f64>,
    pub prox: ProxSolution,
}

pub fn evaluate<P: CompositeObjective + ?Sized>(
    problem: &P,
    x: &ManifoldPoint,
    t: f64,
    warm_lambda: Option<&DVector<f64>>,
) -> Result<Evaluation> {
    let (fs, egrad) = problem.smooth_value_and_gradient(x.coords());
    let f = fs + problem.mu() * crate::objective::l1_norm(x.coords());
    let prox = TangentProx::default().solve(x, &egrad, t, problem.mu(), warm_lambda)?;
    Ok(Evaluation {
        x: x.clone(),
        f,
        egrad,
        prox,
    })
}

#[derive(Debug, Clone)]
pub struct LineSearch {
    pub x_next: ManifoldPoint,
    pub alpha: f64,
    pub f_next: f64,
    pub backtracks: usize,
}

/// Relative size, in units of machine epsilon times `max(1, |F|)`, below
/// which a required decrease cannot be resolved in floating point.
pub const STALL_EPS_FACTOR: f64 = 16.0;

/// Whether the unit-step decrease `||v||^2 / 2` is below the rounding level
/// of `F`.
pub fn decrease_unresolvable(f: f64, v_norm: f64) -> bool {
    0.5 * v_norm * v_norm <= STALL_EPS_FACTOR * f64::EPSILON * f.abs().max(1.0)
}

/// Backtracking until `F(R_x(alpha v)) <= F(x) - alpha ||v||^2 / 2`.
///
/// If no trial step is accepted and even the unit-step decrease is below the
/// rounding level of `F`, the null step (`alpha = 0`, `x_next = x`) is
/// returned; it satisfies the condition with equality. Otherwise exhausting
/// the backtracks is an error.
pub fn line_search<P: CompositeObjective + ?Sized>(
    problem: &P,
    eval: &Evaluation,
    cfg: &SolverConfig,
) -> Result<LineSearch> {
    let v = &eval.prox.v;
    let vn2 = v.norm_squared();
    if vn2 == 0.0 {
        return Ok(LineSearch {
            x_next: eval.x.clone(),
            alpha: 1.0,
            f_next: eval.f,
            backtracks: 0,
        });
    }
    let mut alpha = 1.0;
    for backtracks in 0..=cfg.max_backtracks {
        let y = eval.x.retract(&(v * alpha))?;
        let fy = problem.value(y.coords());
        if fy <= eval.f - 0.5 * alpha * vn2 {
            return Ok(LineSearch {
                x_next: y,
                alpha,
                f_next: fy,
                backtracks,
            });
        }
        alpha *= cfg.rho;
    }
    if decrease_unresolvable(eval.f, v.norm()) {
        return Ok(LineSearch {
            x_next: eval.x.clone(),
            alpha: 0.0,
            f_next: eval.f,
            backtracks: cfg.max_backtracks,
        });
    }
    Err(Error::LineSearchFailure {
        backtracks: cfg.max_backtracks,
    })
}

#[derive(Debug, Clone)]
pub struct GradientStep {
    pub x_next: ManifoldPoint,
    pub prox: ProxSolution,
    pub alpha: f64,
}

/// One proximal gradient step with backtracking.
pub fn manpg_step<P: CompositeObjective + ?Sized>(
    problem: &P,
    x: &ManifoldPoint,
    cfg: &SolverConfig,
) -> Result<GradientStep> {
    let eval = evaluate(problem, x, cfg.t, None)?;
    let ls = line_search(problem, &eval, cfg)?;
    Ok(GradientStep {
        x_next: ls.x_next,
        prox: eval.prox,
        alpha: ls.alpha,
    })
}

#[derive(Debug, Clone)]
pub struct NewtonStep {
    pub x_next: ManifoldPoint,
    pub prox: ProxSolution,
    pub u: DVector<f64>,
    pub lin_iters: usize,
}

fn newton_from<P: CompositeObjective + ?Sized>(
    problem: &P,
    eval: &Evaluation,
    t: f64,
) -> Result<(ManifoldPoint, DVector<f64>, usize)> {
    let state = NewtonState::build(problem, &eval.x, &eval.prox, t)?;
    let sol = state.solve(&eval.prox.v)?;
    let x_next = eval.x.retract(&sol.u)?;
    Ok((x_next, sol.u, sol.lin_iters))
}

/// One unit proximal Newton step `x_next = R_x(u)`.
pub fn rpn_step<P: CompositeObjective + ?Sized>(
    problem: &P,
    x: &ManifoldPoint,
    cfg: &SolverConfig,
) -> Result<NewtonStep> {
    let eval = evaluate(problem, x, cfg.t, None)?;
    let (x_next, u, lin_iters) = newton_from(problem, &eval, cfg.t)?;
    Ok(NewtonStep {
        x_next,
        prox: eval.prox,
        u,
        lin_iters,
    })
}

/// One step of the naive baseline: the composite quadratic model built from
/// the Riemannian Hessian of `f`, minimized over the tangent space with
/// `sigma = t`.
pub fn rpn_naive_step<P: CompositeObjective + ?Sized>(
    problem: &P,
    x: &ManifoldPoint,
    cfg: &SolverConfig,
) -> Result<ManifoldPoint> {
    let sol = solve_naive_subproblem(problem, x, cfg.t)?;
    x.retract(&sol.v)
}

struct Step {
    x_next: ManifoldPoint,
    alpha: f64,
    fallback: bool,
    lin_iters: usize,
    next_eval: Option<Evaluation>,
}

/// Runs `algorithm` from `x0`. Errors during the run end it early with
/// [`Status::Failed`] and the partial trace; only bad inputs return `Err`.
pub fn run<P: CompositeObjective + ?Sized>(
    algorithm: Algorithm,
    problem: &P,
    x0: &ManifoldPoint,
    cfg: &SolverConfig,
) -> Result<ConvergenceTrace> {
    cfg.validate()?;
    if x0.manifold() != problem.manifold() {
        return Err(Error::InvalidInput(format!(
            "starting point lives on {:?}, problem on {:?}",
            x0.manifold(),
            problem.manifold()
        )));
    }
    let manifold = problem.manifold();
    let mut x = x0.clone();
    let mut phase = match algorithm {
        Algorithm::RpnN => Phase::Newton,
        _ => Phase::Gradient,
    };
    let mut records = Vec::new();
    let mut pending: Option<Evaluation> = None;
    let mut warm: Option<DVector<f64>> = None;
    let mut k = 0;
    let status = loop {
        let start = Instant::now();
        let eval = match pending.take() {
            Some(e) => e,
            None => match evaluate(problem, &x, cfg.t, warm.as_ref()) {
                Ok(e) => e,
                Err(err) => break Status::Failed(err),
            },
        };
        warm = Some(eval.prox.lambda.clone());
        let vn = eval.prox.v_norm();
        if phase == Phase::Gradient && algorithm != Algorithm::ManPg && vn <= cfg.epsilon {
            phase = Phase::Newton;
        }
        let mut rec = TraceRecord {
            k,
            f: eval.f,
            v_norm: vn,
            alpha: None,
            phase,
            fallback: false,
            inner_iters: eval.prox.inner_iters,
            lin_iters: 0,
            support: x.coords().iter().filter(|v| **v != 0.0).count(),
            active: eval.prox.mask.count(),
            feasibility: manifold.feasibility_residual(x.coords()),
            mask_fingerprint: eval.prox.mask.fingerprint(),
            wall_ns: 0,
        };
        let stop = if vn <= cfg.tol_final {
            Some(Status::Converged)
        } else if k >= cfg.max_iter {
            Some(Status::MaxIter)
        } else {
            None
        };
        if let Some(s) = stop {
            rec.wall_ns = start.elapsed().as_nanos() as u64;
            records.push(rec);
            break s;
        }

        let step = take_step(algorithm, phase, problem, &eval, cfg);
        rec.wall_ns = start.elapsed().as_nanos() as u64;
        match step {
            Ok(s) if s.alpha == 0.0 => {
                records.push(rec);
                break Status::Stalled;
            }
            Ok(s) => {
                rec.alpha = Some(s.alpha);
                rec.fallback = s.fallback;
                rec.lin_iters = s.lin_iters;
                records.push(rec);
                x = s.x_next;
                pending = s.next_eval;
                k += 1;
            }
            Err(err) => {
                records.push(rec);
                break Status::Failed(err);
            }
        }
    };
    Ok(ConvergenceTrace {
        algorithm,
        records,
        x_final: x,
        status,
    })
}

fn take_step<P: CompositeObjective + ?Sized>(
    algorithm: Algorithm,
    phase: Phase,
    problem: &P,
    eval: &Evaluation,
    cfg: &SolverConfig,
) -> Result<Step> {
    let gradient = |fallback: bool| -> Result<Step> {
        let ls = line_search(problem, eval, cfg)?;
        Ok(Step {
            x_next: ls.x_next,
            alpha: ls.alpha,
            fallback,
            lin_iters: 0,
            next_eval: None,
        })
    };
    match (algorithm, phase) {
        (Algorithm::RpnN, _) => {
            let sol = solve_naive_subproblem(problem, &eval.x, cfg.t)?;
            Ok(Step {
                x_next: eval.x.retract(&sol.v)?,
                alpha: 1.0,
                fallback: false,
                lin_iters: sol.iters,
                next_eval: None,
            })
        }
        (Algorithm::ManPg, _) | (_, Phase::Gradient) => gradient(false),
        (Algorithm::Rpn, Phase::Newton) => {
            let (x_next, _, lin_iters) = newton_from(problem, eval, cfg.t)?;
            Ok(Step {
                x_next,
                alpha: 1.0,
                fallback: false,
                lin_iters,
                next_eval: None,
            })
        }
        (Algorithm::RpnG, Phase::Newton) => {
            let attempt = newton_from(problem, eval, cfg.t).and_then(|(x_next, _, lin)| {
                let next = evaluate(problem, &x_next, cfg.t, Some(&eval.prox.lambda))?;
                Ok((next, lin))
            });
            match attempt {
                Ok((next, lin_iters))
                    if next.prox.v_norm() <= SAFEGUARD_GROWTH * eval.prox.v_norm() =>
                {
                    Ok(Step {
                        x_next: next.x.clone(),
                        alpha: 1.0,
                        fallback: false,
                        lin_iters,
                        next_eval: Some(next),
                    })
                }
                _ => gradient(true),
            }
        }
    }
}

pub fn run_manpg<P: CompositeObjective + ?Sized>(
    problem: &P,
    x0: &ManifoldPoint,
    cfg: &SolverConfig,
) -> Result<ConvergenceTrace> {
    run(Algorithm::ManPg, problem, x0, cfg)
}

pub fn run_rpn<P: CompositeObjective + ?Sized>(
    problem: &P,
    x0: &ManifoldPoint,
    cfg: &SolverConfig,
) -> Result<ConvergenceTrace> {
    run(Algorithm::Rpn, problem, x0, cfg)
}

pub fn run_rpn_g<P: CompositeObjective + ?Sized>(
    problem: &P,
    x0: &ManifoldPoint,
    cfg: &SolverConfig,
) -> Result<ConvergenceTrace> {
    run(Algorithm::RpnG, problem, x0, cfg)
}

pub fn run_rpn_naive<P: CompositeObjective + ?Sized>(
    problem: &P,
    x0: &ManifoldPoint,
    cfg: &SolverConfig,
) -> Result<ConvergenceTrace> {
    run(Algorithm::RpnN, problem, x0, cfg)
}
