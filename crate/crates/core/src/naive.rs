//! Subproblem of the naive second-order baseline
//!
//! ```text
//! v = argmin_{v in T_x M} <grad f(x), v> + 1/2 <v, Hess f(x)[v]> + mu ||x + v||_1
//! ```
//!
//! solved by semismooth Newton on the stacked fixed-point system
//! `G(v, lambda) = [v + x - soft(x + v - s (g + Q v + B lambda), s mu); B^T v]`
//! where `Q` is the Riemannian Hessian extended to the ambient space as
//! `P Hess f(x) P`. Dense; meant for small instances.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::manifold::ManifoldPoint;
use crate::objective::CompositeObjective;
use crate::prox::soft_threshold;

/// Largest ambient dimension accepted by the dense naive solver.
pub const NAIVE_MAX_DIM: usize = 2000;

#[derive(Debug, Clone)]
pub struct NaiveSolution {
    pub v: DVector<f64>,
    pub lambda: DVector<f64>,
    /// `||G(v, lambda)||` at return.
    pub residual: f64,
    pub iters: usize,
}

/// Dense ambient matrix of `P Hess f(x) P`.
pub fn riemannian_hessian_matrix<P: CompositeObjective + ?Sized>(
    problem: &P,
    x: &ManifoldPoint,
) -> DMatrix<f64> {
    let n = x.ambient_dim();
    let g = problem.smooth_gradient(x.coords());
    let g_normal = &g - x.proj_tangent_raw(&g);
    let mut q = DMatrix::zeros(n, n);
    let mut e = DVector::zeros(n);
    for j in 0..n {
        e[j] = 1.0;
        let w = x.proj_tangent_raw(&e);
        let hw = problem.hess_vec(x.coords(), &w) + x.weingarten_raw(&w, &g_normal);
        q.set_column(j, &x.proj_tangent_raw(&hw));
        e[j] = 0.0;
    }
    (&q + q.transpose()) * 0.5
}

/// Smallest eigenvalue of the Riemannian Hessian on the tangent space.
pub fn tangent_hessian_min_eig<P: CompositeObjective + ?Sized>(
    problem: &P,
    x: &ManifoldPoint,
) -> f64 {
    let q = riemannian_hessian_matrix(problem, x);
    let basis = x.tangent_basis();
    let restricted = basis.tr_mul(&(q * &basis));
    let restricted = (&restricted + restricted.transpose()) * 0.5;
    restricted.symmetric_eigenvalues().min()
}

pub fn solve_naive_subproblem<P: CompositeObjective + ?Sized>(
    problem: &P,
    x: &ManifoldPoint,
    sigma: f64,
) -> Result<NaiveSolution> {
    let n = x.ambient_dim();
    if n > NAIVE_MAX_DIM {
        return Err(Error::InvalidInput(format!(
            "naive baseline is dense and limited to ambient dimension {NAIVE_MAX_DIM}, got {n}"
        )));
    }
    if !(sigma > 0.0) {
        return Err(Error::InvalidInput(format!(
            "sigma must be positive, got {sigma}"
        )));
    }
    let q = riemannian_hessian_matrix(problem, x);
    let tb = x.tangent_basis();
    let restricted = tb.tr_mul(&(&q * &tb));
    let min_eig = ((&restricted + restricted.transpose()) * 0.5)
        .symmetric_eigenvalues()
        .min();
    if !(min_eig > 0.0) {
        return Err(Error::NonconvexSubproblem { min_eig });
    }

    let mu = problem.mu();
    let tau = sigma * mu;
    let g = problem.smooth_gradient(x.coords());
    let b = x.normal_basis();
    let d = b.ncols();
    let tol = 1e-13 * ((n + d) as f64).sqrt();

    let residual = |v: &DVector<f64>, lambda: &DVector<f64>| {
        let w = x.coords() + v - (&g + &q * v + &b * lambda) * sigma;
        let g1 = v + x.coords() - soft_threshold(&w, tau);
        let g2 = b.tr_mul(v);
        let mut out = DVector::zeros(n + d);
        out.rows_mut(0, n).copy_from(&g1);
        out.rows_mut(n, d).copy_from(&g2);
        (out, w)
    };

    let mut v = DVector::zeros(n);
    let mut lambda = -b.tr_mul(&g);
    let (mut res, mut w) = residual(&v, &lambda);
    let mut res_norm = res.norm();
    let mut iters = 0;
    let max_iter = 100;
    while res_norm > tol {
        if iters >= max_iter {
            return Err(Error::MaxInnerIterations {
                iters,
                residual: res_norm,
            });
        }
        iters += 1;
        let mut jac = DMatrix::zeros(n + d, n + d);
        // d/dv: I - M (I - s Q), d/dlambda: s M B; second block row: [B^T, 0]
        for i in 0..n {
            jac[(i, i)] = 1.0;
            if w[i].abs() > tau {
                jac[(i, i)] -= 1.0;
                for j in 0..n {
                    jac[(i, j)] += sigma * q[(i, j)];
                }
                for k in 0..d {
                    jac[(i, n + k)] = sigma * b[(i, k)];
                }
            }
        }
        for k in 0..d {
            for j in 0..n {
                jac[(n + k, j)] = b[(j, k)];
            }
        }
        let step = jac.lu().solve(&(-&res)).ok_or(Error::MaxInnerIterations {
            iters,
            residual: res_norm,
        })?;
        let mut alpha = 1.0;
        let mut accepted = false;
        for _ in 0..=30 {
            let tv = &v + step.rows(0, n) * alpha;
            let tl = &lambda + step.rows(n, d) * alpha;
            let (tres, tw) = residual(&tv, &tl);
            let tnorm = tres.norm();
            if tnorm < res_norm {
                v = tv;
                lambda = tl;
                res = tres;
                w = tw;
                res_norm = tnorm;
                accepted = true;
                break;
            }
            alpha *= 0.5;
        }
        if !accepted {
            return Err(Error::MaxInnerIterations {
                iters,
                residual: res_norm,
            });
        }
    }
    Ok(NaiveSolution {
        v,
        lambda,
        residual: res_norm,
        iters,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manifold::{gaussian_vector, Manifold};
    use crate::objective::QuadraticObjective;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn smooth_case_is_riemannian_newton() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = Manifold::sphere(6);
        // make the Riemannian Hessian positive definite at x by a dominant
        // negative eigenvalue along x
        let x = m.random_point(&mut rng);
        let c = DMatrix::identity(6, 6) * 2.0 - x.coords() * x.coords().transpose() * 5.0;
        let p = QuadraticObjective::new(m, c, gaussian_vector(6, &mut rng) * 0.1, 0.0);
        let sol = solve_naive_subproblem(&p, &x, 0.3).unwrap();
        let q = riemannian_hessian_matrix(&p, &x);
        let grad = x.proj_tangent(&p.smooth_gradient(x.coords())).unwrap();
        let newton_res = &q * &sol.v + grad;
        assert!(newton_res.norm() < 1e-10, "{}", newton_res.norm());
        assert!(x.tangency_residual(&sol.v).unwrap() < 1e-12);
    }

    #[test]
    fn nonconvex_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let m = Manifold::sphere(4);
        let x = m.random_point(&mut rng);
        let c = -DMatrix::identity(4, 4) + x.coords() * x.coords().transpose() * 3.0;
        let p = QuadraticObjective::new(m, c, DVector::zeros(4), 0.5);
        let err = solve_naive_subproblem(&p, &x, 0.1).unwrap_err();
        assert!(matches!(err, Error::NonconvexSubproblem { .. }));
    }
}
