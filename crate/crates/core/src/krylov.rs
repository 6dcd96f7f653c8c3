//! Transpose-free Krylov solvers for nonsymmetric matrix-free operators.

use nalgebra::DVector;

#[derive(Debug, Clone)]
pub enum KrylovOutcome {
    Converged { x: DVector<f64>, iters: usize },
    Breakdown { iters: usize },
    MaxIter { iters: usize, residual: f64 },
}

impl KrylovOutcome {
    pub fn iters(&self) -> usize {
        match self {
            KrylovOutcome::Converged { iters, .. }
            | KrylovOutcome::Breakdown { iters }
            | KrylovOutcome::MaxIter { iters, .. } => *iters,
        }
    }
}

const TINY: f64 = 1e-300;

/// Conjugate gradient squared (Sonneveld) from a zero initial guess. Stops when
/// the recursive residual satisfies `||r|| <= tol ||b||`.
pub fn cgs<F>(op: F, b: &DVector<f64>, tol: f64, max_iter: usize) -> KrylovOutcome
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
{
    let bnorm = b.norm();
    let n = b.len();
    let mut x = DVector::zeros(n);
    if bnorm == 0.0 {
        return KrylovOutcome::Converged { x, iters: 0 };
    }
    let mut r = b.clone();
    let r_hat = r.clone();
    let mut p = DVector::zeros(n);
    let mut q = DVector::zeros(n);
    let mut rho_prev = 1.0;
    for it in 1..=max_iter {
        let rho = r_hat.dot(&r);
        if rho.abs() < TINY {
            return KrylovOutcome::Breakdown { iters: it };
        }
        let u = if it == 1 {
            p.copy_from(&r);
            r.clone()
        } else {
            let beta = rho / rho_prev;
            let u = &r + &q * beta;
            p = &u + (&q + &p * beta) * beta;
            u
        };
        let v_hat = op(&p);
        let sigma = r_hat.dot(&v_hat);
        if sigma.abs() < TINY {
            return KrylovOutcome::Breakdown { iters: it };
        }
        let alpha = rho / sigma;
        q = &u - &v_hat * alpha;
        let uq = &u + &q;
        x.axpy(alpha, &uq, 1.0);
        r.axpy(-alpha, &op(&uq), 1.0);
        if !r.iter().all(|v| v.is_finite()) {
            return KrylovOutcome::Breakdown { iters: it };
        }
        if r.norm() <= tol * bnorm {
            return KrylovOutcome::Converged { x, iters: it };
        }
        rho_prev = rho;
    }
    KrylovOutcome::MaxIter {
        iters: max_iter,
        residual: r.norm() / bnorm,
    }
}

/// Conjugate gradients from a zero initial guess, for symmetric operators.
/// Reports a breakdown on nonpositive curvature.
pub fn cg<F>(op: F, b: &DVector<f64>, tol: f64, max_iter: usize) -> KrylovOutcome
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
{
    let bnorm = b.norm();
    let mut x = DVector::zeros(b.len());
    if bnorm == 0.0 {
        return KrylovOutcome::Converged { x, iters: 0 };
    }
    let mut r = b.clone();
    let mut p = r.clone();
    let mut rr = r.norm_squared();
    for it in 1..=max_iter {
        let ap = op(&p);
        let curv = p.dot(&ap);
        if !(curv > 0.0) {
            return KrylovOutcome::Breakdown { iters: it };
        }
        let alpha = rr / curv;
        x.axpy(alpha, &p, 1.0);
        r.axpy(-alpha, &ap, 1.0);
        let rr_next = r.norm_squared();
        if rr_next.sqrt() <= tol * bnorm {
            return KrylovOutcome::Converged { x, iters: it };
        }
        p = &r + &p * (rr_next / rr);
        rr = rr_next;
    }
    KrylovOutcome::MaxIter {
        iters: max_iter,
        residual: rr.sqrt() / bnorm,
    }
}

/// BiCGSTAB from a zero initial guess.
pub fn bicgstab<F>(op: F, b: &DVector<f64>, tol: f64, max_iter: usize) -> KrylovOutcome
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
{
    let bnorm = b.norm();
    let n = b.len();
    let mut x = DVector::zeros(n);
    if bnorm == 0.0 {
        return KrylovOutcome::Converged { x, iters: 0 };
    }
    let mut r = b.clone();
    let r_hat = r.clone();
    let (mut rho_prev, mut alpha, mut omega) = (1.0f64, 1.0f64, 1.0f64);
    let mut v = DVector::zeros(n);
    let mut p = DVector::zeros(n);
    for it in 1..=max_iter {
        let rho = r_hat.dot(&r);
        if rho.abs() < TINY || omega.abs() < TINY {
            return KrylovOutcome::Breakdown { iters: it };
        }
        let beta = (rho / rho_prev) * (alpha / omega);
        p = &r + (&p - &v * omega) * beta;
        v = op(&p);
        let denom = r_hat.dot(&v);
        if denom.abs() < TINY {
            return KrylovOutcome::Breakdown { iters: it };
        }
        alpha = rho / denom;
        let s = &r - &v * alpha;
        if s.norm() <= tol * bnorm {
            x.axpy(alpha, &p, 1.0);
            return KrylovOutcome::Converged { x, iters: it };
        }
        let t = op(&s);
        let tt = t.dot(&t);
        if tt < TINY {
            return KrylovOutcome::Breakdown { iters: it };
        }
        omega = t.dot(&s) / tt;
        x.axpy(alpha, &p, 1.0);
        x.axpy(omega, &s, 1.0);
        r = s - t * omega;
        if !r.iter().all(|v| v.is_finite()) {
            return KrylovOutcome::Breakdown { iters: it };
        }
        if r.norm() <= tol * bnorm {
            return KrylovOutcome::Converged { x, iters: it };
        }
        rho_prev = rho;
    }
    KrylovOutcome::MaxIter {
        iters: max_iter,
        residual: r.norm() / bnorm,
    }
}
