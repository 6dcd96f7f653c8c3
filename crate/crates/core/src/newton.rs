//! The proximal Newton operator
//!
//! ```text
//! J(x) = -[ I - Lambda_x + t Lambda_x (hess f(x) - L_x) ]
//! Lambda_x = M - M B H B^T M,   H = (B^T M B)^{-1},   L_x(w) = W_x(w, B lambda)
//! ```
//!
//! acting on the tangent space, and the solve `J(x)[u] = -v`.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};
use crate::krylov::{bicgstab, cg, cgs, KrylovOutcome};
use crate::manifold::ManifoldPoint;
use crate::objective::CompositeObjective;
use crate::prox::{ActiveMask, ProxSolution};

/// Smallest admissible eigenvalue of `B^T M B`.
pub const RANK_TOL: f64 = 1e-12;
/// Relative residual required from the linear solve.
pub const LIN_TOL: f64 = 1e-12;
/// Krylov iteration cap.
pub const LIN_MAX_ITER: usize = 200;
/// Tangent dimensions up to this size may fall back to a dense solve.
pub const DENSE_FALLBACK_DIM: usize = 200;

/// Everything needed to apply `J(x)`, assembled once per outer iteration.
pub struct NewtonState<'a, P: CompositeObjective + ?Sized> {
    problem: &'a P,
    x: ManifoldPoint,
    basis: DMatrix<f64>,
    mask: ActiveMask,
    chol: Cholesky<f64, Dyn>,
    lambda: DVector<f64>,
    /// `B lambda`, the normal vector fed to the Weingarten map.
    normal_multiplier: DVector<f64>,
    t: f64,
}

impl<'a, P: CompositeObjective + ?Sized> NewtonState<'a, P> {
    /// Builds the state from a solved subproblem at `x`.
    pub fn build(problem: &'a P, x: &ManifoldPoint, prox: &ProxSolution, t: f64) -> Result<Self> {
        Self::from_parts(problem, x, prox.mask.clone(), prox.lambda.clone(), t)
    }

    pub fn from_parts(
        problem: &'a P,
        x: &ManifoldPoint,
        mask: ActiveMask,
        lambda: DVector<f64>,
        t: f64,
    ) -> Result<Self> {
        if mask.len() != x.ambient_dim() {
            return Err(Error::DimensionMismatch {
                expected: x.ambient_dim(),
                found: mask.len(),
            });
        }
        let basis = x.normal_basis();
        let d = basis.ncols();
        let mut gram = DMatrix::zeros(d, d);
        for (i, row) in basis.row_iter().enumerate() {
            if mask.is_active(i) {
                gram += row.transpose() * row;
            }
        }
        let min_eig = gram.symmetric_eigenvalues().min();
        if !(min_eig > RANK_TOL) {
            return Err(Error::AssumptionViolation { min_eig });
        }
        let chol = gram
            .cholesky()
            .ok_or(Error::AssumptionViolation { min_eig })?;
        let normal_multiplier = x.normal_combine(&lambda)?;
        Ok(NewtonState {
            problem,
            x: x.clone(),
            basis,
            mask,
            chol,
            lambda,
            normal_multiplier,
            t,
        })
    }

    pub fn point(&self) -> &ManifoldPoint {
        &self.x
    }

    pub fn mask(&self) -> &ActiveMask {
        &self.mask
    }

    pub fn lambda(&self) -> &DVector<f64> {
        &self.lambda
    }

    /// `H = (B^T M B)^{-1}` as a dense matrix.
    pub fn h_matrix(&self) -> DMatrix<f64> {
        self.chol.inverse()
    }

    /// `Lambda_x y = M y - M B H B^T M y`.
    pub fn apply_lambda(&self, y: &DVector<f64>) -> DVector<f64> {
        let my = self.mask.apply(y);
        let c = self.basis.tr_mul(&my);
        let w = self.chol.solve(&c);
        let mut out = my - &self.basis * w;
        self.mask.apply_mut(&mut out);
        out
    }

    /// Dense `Lambda_x` (ambient square).
    pub fn lambda_matrix(&self) -> DMatrix<f64> {
        let n = self.x.ambient_dim();
        let mut m = DMatrix::zeros(n, n);
        let mut e = DVector::zeros(n);
        for j in 0..n {
            e[j] = 1.0;
            m.set_column(j, &self.apply_lambda(&e));
            e[j] = 0.0;
        }
        m
    }

    /// `L_x(w) = W_x(w, B lambda)`.
    pub fn apply_curvature(&self, w: &DVector<f64>) -> DVector<f64> {
        self.x.weingarten_raw(w, &self.normal_multiplier)
    }

    /// `J(x)[w] = -w + Lambda_x (w - t (hess f(x)[w] - L_x(w)))`.
    pub fn apply_j(&self, omega: &DVector<f64>) -> DVector<f64> {
        let hw = self.problem.hess_vec(self.x.coords(), omega);
        let q = hw - self.apply_curvature(omega);
        let s = omega - q * self.t;
        self.apply_lambda(&s) - omega
    }

    /// `J` restricted to the tangent space in the orthonormal basis `q`.
    pub fn dense_tangent_matrix(&self, q: &DMatrix<f64>) -> DMatrix<f64> {
        let k = q.ncols();
        let mut out = DMatrix::zeros(k, k);
        for j in 0..k {
            let col = self.apply_j(&q.column(j).into_owned());
            out.set_column(j, &q.tr_mul(&col));
        }
        out
    }

    /// `Q w = hess f(x)[w] - L_x(w)`.
    pub fn apply_q(&self, w: &DVector<f64>) -> DVector<f64> {
        self.problem.hess_vec(self.x.coords(), w) - self.apply_curvature(w)
    }

    /// Solves `J(x)[u] = -v` on the tangent space.
    ///
    /// Inactive rows of `J` are `-I` and `Lambda_x` is an orthogonal projector,
    /// so with `w0 = v - Lambda_x v` the solution is `u = w0 + y`, where `y` in
    /// `range(Lambda_x)` solves the symmetric system
    /// `t Lambda_x Q y = Lambda_x v - t Lambda_x Q w0`. That system is tried
    /// first with conjugate gradients; CGS and BiCGSTAB on the full operator,
    /// then a dense solve, are fallbacks.
    pub fn solve(&self, v: &DVector<f64>) -> Result<NewtonSolve> {
        let n = self.x.ambient_dim();
        if v.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: v.len(),
            });
        }
        if v.norm() == 0.0 {
            return Ok(NewtonSolve {
                u: DVector::zeros(n),
                lin_iters: 0,
                method: LinearMethod::Trivial,
            });
        }
        let mut iters = 0;
        let mut last_err = Error::KrylovBreakdown { iters: 0 };

        match self.solve_reduced(v) {
            Ok((u, it)) => {
                iters += it;
                if self.relative_residual(&u, v) <= LIN_TOL {
                    return Ok(NewtonSolve {
                        u,
                        lin_iters: iters,
                        method: LinearMethod::ReducedCg,
                    });
                }
            }
            Err((err, it)) => {
                iters += it;
                last_err = err;
            }
        }

        let rhs = -v;
        // Krylov vectors stay tangent because J maps into the tangent space.
        let op = |w: &DVector<f64>| self.apply_j(&self.x.proj_tangent_raw(w));
        for method in [LinearMethod::Cgs, LinearMethod::BiCgStab] {
            let solver = |b: &DVector<f64>| match method {
                LinearMethod::Cgs => cgs(op, b, LIN_TOL, LIN_MAX_ITER),
                _ => bicgstab(op, b, LIN_TOL, LIN_MAX_ITER),
            };
            match refine(op, &rhs, solver) {
                Ok((x, it)) => {
                    iters += it;
                    let u = self.finish(x, v);
                    let residual = self.relative_residual(&u, v);
                    if residual <= LIN_TOL {
                        return Ok(NewtonSolve {
                            u,
                            lin_iters: iters,
                            method,
                        });
                    }
                    last_err = Error::MaxLinIterations { iters, residual };
                }
                Err((err, it)) => {
                    iters += it;
                    last_err = err;
                }
            }
        }

        if self.x.manifold().tangent_dim() <= DENSE_FALLBACK_DIM {
            let u = self.solve_dense(v)?;
            return Ok(NewtonSolve {
                u,
                lin_iters: iters,
                method: LinearMethod::Dense,
            });
        }
        Err(last_err)
    }

    fn solve_reduced(
        &self,
        v: &DVector<f64>,
    ) -> std::result::Result<(DVector<f64>, usize), (Error, usize)> {
        let lv = self.apply_lambda(v);
        let w0 = v - &lv;
        let rhs = &lv - self.apply_lambda(&self.apply_q(&w0)) * self.t;
        let op = |y: &DVector<f64>| {
            let py = self.apply_lambda(y);
            self.apply_lambda(&self.apply_q(&py)) * self.t
        };
        let (y, iters) = refine(op, &rhs, |b| cg(op, b, LIN_TOL, LIN_MAX_ITER))?;
        Ok((w0 + self.apply_lambda(&y), iters))
    }

    /// Direct solve through an orthonormal tangent basis.
    pub fn solve_dense(&self, v: &DVector<f64>) -> Result<DVector<f64>> {
        let q = self.x.tangent_basis();
        let jt = self.dense_tangent_matrix(&q);
        let rhs = -q.tr_mul(v);
        let y = jt
            .lu()
            .solve(&rhs)
            .ok_or(Error::KrylovBreakdown { iters: 0 })?;
        Ok(self.finish(q * y, v))
    }

    /// Inactive rows of `J` are `-I`, so the exact solution has `u_i = v_i`
    /// there; restoring them exactly keeps `x + u` sparse.
    fn finish(&self, mut u: DVector<f64>, v: &DVector<f64>) -> DVector<f64> {
        for i in 0..u.len() {
            if !self.mask.is_active(i) {
                u[i] = v[i];
            }
        }
        u
    }

    fn relative_residual(&self, u: &DVector<f64>, v: &DVector<f64>) -> f64 {
        (self.apply_j(u) + v).norm() / v.norm()
    }
}

/// Rounds of iterative refinement applied to a Krylov solution.
const REFINE_ROUNDS: usize = 3;

/// Runs `solver` on `op x = b` and corrects with the true residual until it
/// meets `LIN_TOL` or the rounds are spent.
fn refine<F, S>(
    op: F,
    b: &DVector<f64>,
    solver: S,
) -> std::result::Result<(DVector<f64>, usize), (Error, usize)>
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
    S: Fn(&DVector<f64>) -> KrylovOutcome,
{
    let bnorm = b.norm();
    let mut x = DVector::zeros(b.len());
    let mut r = b.clone();
    let mut iters = 0;
    for _ in 0..=REFINE_ROUNDS {
        let outcome = solver(&r);
        iters += outcome.iters();
        match outcome {
            KrylovOutcome::Converged { x: dx, .. } => x += dx,
            KrylovOutcome::Breakdown { iters: it } => {
                return Err((Error::KrylovBreakdown { iters: it }, iters))
            }
            KrylovOutcome::MaxIter { residual, .. } => {
                return Err((Error::MaxLinIterations { iters, residual }, iters))
            }
        }
        r = b - op(&x);
        if r.norm() <= LIN_TOL * bnorm {
            break;
        }
    }
    Ok((x, iters))
}

/// Which linear solver produced a Newton direction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LinearMethod {
    Trivial,
    ReducedCg,
    Cgs,
    BiCgStab,
    Dense,
}

#[derive(Debug, Clone)]
pub struct NewtonSolve {
    pub u: DVector<f64>,
    pub lin_iters: usize,
    pub method: LinearMethod,
}

/// Convenience wrapper: build the state and solve `J(x)[u] = -v`.
pub fn solve_newton<P: CompositeObjective + ?Sized>(
    problem: &P,
    x: &ManifoldPoint,
    prox: &ProxSolution,
    t: f64,
) -> Result<NewtonSolve> {
    NewtonState::build(problem, x, prox, t)?.solve(&prox.v)
}
