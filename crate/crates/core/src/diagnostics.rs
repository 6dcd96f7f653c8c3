//! Runnable checks of stationarity, the rank assumption on the active normal
//! basis, the second-order condition, and empirical convergence rates.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::manifold::ManifoldPoint;
use crate::newton::NewtonState;
use crate::objective::CompositeObjective;
use crate::prox::{solve_tangent_prox, ActiveMask, ProxSolution};
use crate::solvers::{ConvergenceTrace, Phase};

/// Smallest singular value of the active normal rows accepted as full rank.
pub const RANK_SIGMA_TOL: f64 = 1e-10;
/// Eigenvalues above `-PSD_TOL` count as nonnegative.
pub const PSD_TOL: f64 = 1e-8;
/// The second-order check requires `||v(x)||` at most this.
pub const STATIONARY_TOL: f64 = 1e-8;
/// Dense nonsingularity check of `J` is skipped above this ambient size.
pub const DENSE_J_MAX_DIM: usize = 1000;
/// Rounding floor of `||v||` in units of `eps * ||x||_F`. Runs continued past
/// convergence plateau at about 2-5 units.
pub const RATE_FLOOR_FACTOR: f64 = 10.0;
/// At most this many trailing points enter a rate regression.
pub const RATE_TAIL_MAX: usize = 6;
/// Fewer points than this cannot be classified.
pub const RATE_TAIL_MIN: usize = 3;

/// `||v(x)||` from a fresh subproblem solve.
pub fn check_stationarity<P: CompositeObjective + ?Sized>(
    problem: &P,
    x: &ManifoldPoint,
    t: f64,
) -> Result<f64> {
    let g = problem.smooth_gradient(x.coords());
    Ok(solve_tangent_prox(x, &g, t, problem.mu(), None)?.v_norm())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RankCheck {
    pub ok: bool,
    pub sigma_min: f64,
    /// Number of active coordinates `j`.
    pub active: usize,
    /// Normal dimension `d`.
    pub normal_dim: usize,
}

/// Full column rank of the rows of `B_x` selected by the mask.
pub fn check_assumption_rank(x: &ManifoldPoint, mask: &ActiveMask) -> Result<RankCheck> {
    if mask.len() != x.ambient_dim() {
        return Err(Error::DimensionMismatch {
            expected: x.ambient_dim(),
            found: mask.len(),
        });
    }
    let b = x.normal_basis();
    let d = b.ncols();
    let idx = mask.active_indices();
    let j = idx.len();
    let sigma_min = if j < d || j == 0 {
        0.0
    } else {
        b.select_rows(&idx).singular_values().min()
    };
    Ok(RankCheck {
        ok: j >= d && sigma_min > RANK_SIGMA_TOL,
        sigma_min,
        active: j,
        normal_dim: d,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SecondOrderCheck {
    pub psd: bool,
    /// `+inf` when the restricted null space is trivial.
    pub min_eig: f64,
    /// Smallest singular value of `J(x)` on the tangent space, when computed.
    pub j_sigma_min: Option<f64>,
    pub j_nonsingular: Option<bool>,
}

/// Restricts `H - L` (Euclidean Hessian minus `W(., B lambda)`) to the active
/// coordinates and then to `null(B_bar^T)`, and reports its smallest
/// eigenvalue.
pub fn check_second_order<P: CompositeObjective + ?Sized>(
    problem: &P,
    x: &ManifoldPoint,
    prox: &ProxSolution,
    t: f64,
) -> Result<SecondOrderCheck> {
    if prox.v_norm() > STATIONARY_TOL {
        return Err(Error::InvalidInput(format!(
            "second-order check needs an approximately stationary point, ||v|| = {:e}",
            prox.v_norm()
        )));
    }
    let n = x.ambient_dim();
    let idx = prox.mask.active_indices();
    let j = idx.len();
    let b = x.normal_basis();
    let b_bar = b.select_rows(&idx);
    let bl = x.normal_combine(&prox.lambda)?;

    let mut block = DMatrix::zeros(j, j);
    let mut e = DVector::zeros(n);
    for (c, &i) in idx.iter().enumerate() {
        e[i] = 1.0;
        let col = problem.hess_vec(x.coords(), &e) - x.weingarten(&e, &bl)?;
        for (r, &ii) in idx.iter().enumerate() {
            block[(r, c)] = col[ii];
        }
        e[i] = 0.0;
    }
    let block = (&block + block.transpose()) * 0.5;

    let null = null_space_of_transpose(&b_bar);
    let min_eig = if null.ncols() == 0 {
        f64::INFINITY
    } else {
        let reduced = null.tr_mul(&(&block * &null));
        ((&reduced + reduced.transpose()) * 0.5)
            .symmetric_eigenvalues()
            .min()
    };
    let psd = min_eig >= -PSD_TOL;

    let (j_sigma_min, j_nonsingular) = if min_eig > PSD_TOL && n <= DENSE_J_MAX_DIM {
        let state = NewtonState::build(problem, x, prox, t)?;
        let q = x.tangent_basis();
        let sigma = state.dense_tangent_matrix(&q).singular_values().min();
        (Some(sigma), Some(sigma > RANK_SIGMA_TOL))
    } else {
        (None, None)
    };
    Ok(SecondOrderCheck {
        psd,
        min_eig,
        j_sigma_min,
        j_nonsingular,
    })
}

/// Orthonormal basis of `{y : B^T y = 0}`.
fn null_space_of_transpose(b: &DMatrix<f64>) -> DMatrix<f64> {
    let rows = b.nrows();
    if rows == 0 {
        return DMatrix::zeros(0, 0);
    }
    let range = if b.ncols() == 0 {
        DMatrix::zeros(rows, 0)
    } else {
        let svd = b.clone().svd(true, false);
        let u = svd.u.expect("requested U");
        let keep: Vec<usize> = (0..svd.singular_values.len())
            .filter(|&i| svd.singular_values[i] > RANK_SIGMA_TOL)
            .collect();
        u.select_columns(&keep)
    };
    let r = range.ncols();
    if r >= rows {
        return DMatrix::zeros(rows, 0);
    }
    let mut aug = DMatrix::zeros(rows, r + rows);
    aug.columns_mut(0, r).copy_from(&range);
    aug.columns_mut(r, rows).fill_with_identity();
    aug.qr().q().columns(r, rows - r).into_owned()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RateClass {
    Quadratic,
    Superlinear,
    Linear,
    Insufficient,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateEstimate {
    /// Least-squares slope of `log ||v_{k+1}||` against `log ||v_k||`.
    pub slope: f64,
    /// Number of points in the regression.
    pub tail_len: usize,
    pub classification: RateClass,
}

pub fn classify_slope(slope: f64) -> RateClass {
    if slope >= 1.8 {
        RateClass::Quadratic
    } else if slope > 1.2 {
        RateClass::Superlinear
    } else {
        RateClass::Linear
    }
}

/// Values of `||v||` at or below this measure rounding rather than the rate.
pub fn rate_floor(x: &ManifoldPoint) -> f64 {
    RATE_FLOOR_FACTOR * f64::EPSILON * x.coords().norm()
}

/// Rate estimate from a sequence of `||v_k||`: the sequence is cut before the
/// first value at or below `floor` (or non-finite) and the last
/// [`RATE_TAIL_MAX`] values are regressed.
pub fn estimate_rate(values: &[f64], floor: f64) -> RateEstimate {
    let end = values
        .iter()
        .position(|v| !(*v > floor) || !v.is_finite())
        .unwrap_or(values.len());
    let usable = &values[..end];
    let tail = &usable[usable.len().saturating_sub(RATE_TAIL_MAX)..];
    let insufficient = RateEstimate {
        slope: f64::NAN,
        tail_len: tail.len(),
        classification: RateClass::Insufficient,
    };
    if tail.len() < RATE_TAIL_MIN {
        return insufficient;
    }
    let xs: Vec<f64> = tail[..tail.len() - 1].iter().map(|v| v.ln()).collect();
    let ys: Vec<f64> = tail[1..].iter().map(|v| v.ln()).collect();
    let m = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / m;
    let my = ys.iter().sum::<f64>() / m;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    if !(sxx > 0.0) {
        return insufficient;
    }
    let slope = sxy / sxx;
    RateEstimate {
        slope,
        tail_len: tail.len(),
        classification: classify_slope(slope),
    }
}

/// Rate over the Newton steps of a trace, with the floor taken at the final
/// iterate.
pub fn estimate_trace_rate(trace: &ConvergenceTrace) -> RateEstimate {
    estimate_rate(&trace.newton_v_norms(), rate_floor(&trace.x_final))
}

/// First Newton-phase iteration whose active mask differs from the previous
/// one, if any.
pub fn check_support_stability(trace: &ConvergenceTrace) -> Option<usize> {
    let newton: Vec<_> = trace
        .records
        .iter()
        .filter(|r| r.phase == Phase::Newton)
        .collect();
    newton
        .windows(2)
        .find(|w| w[0].mask_fingerprint != w[1].mask_fingerprint)
        .map(|w| w[1].k)
}
