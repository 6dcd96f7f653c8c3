//! Reference implementations that share no code paths with the library
//! solvers they check.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian<R: Rng>(len: usize, rng: &mut R) -> DVector<f64> {
    DVector::from_fn(len, |_, _| rng.sample(StandardNormal))
}

pub fn gaussian_matrix<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

pub fn rel_err(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (a - b).norm() / b.norm().max(1e-300)
}

pub fn soft(z: &DVector<f64>, tau: f64) -> DVector<f64> {
    z.map(|zi| zi.signum() * (zi.abs() - tau).max(0.0))
}

fn reshape(v: &DVector<f64>, n: usize, r: usize) -> DMatrix<f64> {
    DMatrix::from_column_slice(n, r, v.as_slice())
}

fn flatten(m: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_column_slice(m.as_slice())
}

fn sym(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Stiefel geometry written from the textbook formulas. The sphere is `r = 1`.
#[derive(Debug, Clone, Copy)]
pub struct Geometry {
    pub n: usize,
    pub r: usize,
}

impl Geometry {
    pub fn proj(&self, x: &DVector<f64>, z: &DVector<f64>) -> DVector<f64> {
        let xm = reshape(x, self.n, self.r);
        let zm = reshape(z, self.n, self.r);
        flatten(&(&zm - &xm * sym(&(xm.transpose() * &zm))))
    }

    /// Polar factor `U V^T` of `x + v`.
    pub fn retract(&self, x: &DVector<f64>, v: &DVector<f64>) -> DVector<f64> {
        let y = reshape(&(x + v), self.n, self.r);
        let svd = y.svd(true, true);
        flatten(&(svd.u.unwrap() * svd.v_t.unwrap()))
    }

    pub fn random_point<R: Rng>(&self, rng: &mut R) -> DVector<f64> {
        let z = gaussian_matrix(self.n, self.r, rng);
        let q = z.qr().q();
        flatten(&q.columns(0, self.r).into_owned())
    }

    pub fn random_tangent<R: Rng>(&self, x: &DVector<f64>, rng: &mut R) -> DVector<f64> {
        let v = self.proj(x, &gaussian(self.n * self.r, rng));
        let nrm = v.norm();
        v / nrm
    }

    /// Orthonormal basis of the tangent space, columns of an `nr x dim` matrix.
    pub fn tangent_basis(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let amb = self.n * self.r;
        let mut cols: Vec<DVector<f64>> = Vec::new();
        for j in 0..amb {
            let mut e = DVector::zeros(amb);
            e[j] = 1.0;
            let mut w = self.proj(x, &e);
            for c in &cols {
                w -= c * c.dot(&w);
            }
            for c in &cols {
                w -= c * c.dot(&w);
            }
            let nrm = w.norm();
            if nrm > 1e-8 {
                cols.push(w / nrm);
            }
        }
        DMatrix::from_columns(&cols)
    }
}

/// Minimizes `<c, v> + 1/2 v^T H v + mu ||x + v||_1` over `v = Q y` by ADMM on
/// the splitting `z = x + Q y`. `H` must be positive definite on `range(Q)`.
pub fn admm_composite(
    x: &DVector<f64>,
    c: &DVector<f64>,
    h: &DMatrix<f64>,
    q: &DMatrix<f64>,
    mu: f64,
) -> DVector<f64> {
    let k = q.ncols();
    let hq = q.transpose() * h * q;
    let rho = (hq.trace() / k as f64).max(1e-3);
    let lhs = (&hq + DMatrix::identity(k, k) * rho)
        .cholesky()
        .expect("convex");
    let qc = q.transpose() * c;
    let mut z = x.clone();
    let mut w = DVector::zeros(x.len());
    let mut y = DVector::zeros(k);
    for _ in 0..400_000 {
        let rhs = -(&qc + q.transpose() * (x - &z + &w) * rho);
        y = lhs.solve(&rhs);
        let xv = x + q * &y;
        let z_new = soft(&(&xv + &w), mu / rho);
        let primal = (&xv - &z_new).norm();
        let dual = (&z_new - &z).norm() * rho;
        w += &xv - &z_new;
        z = z_new;
        if primal < 1e-15 && dual < 1e-15 {
            break;
        }
    }
    // The sign pattern of `z` is exact; re-solve the smooth problem on it.
    let signs = z.map(|zi| if zi == 0.0 { 0.0 } else { zi.signum() });
    polish(x, c, h, q, mu, &signs).unwrap_or_else(|| q * y)
}

/// Exact minimizer for a fixed sign pattern `s` of `x + v`: zeros in `s` pin
/// `(x + v)_i = 0`, nonzeros contribute `mu s_i` to the gradient. Returns
/// `None` if the pattern is inconsistent with its own solution.
fn polish(
    x: &DVector<f64>,
    c: &DVector<f64>,
    h: &DMatrix<f64>,
    q: &DMatrix<f64>,
    mu: f64,
    s: &DVector<f64>,
) -> Option<DVector<f64>> {
    let k = q.ncols();
    let zero: Vec<usize> = (0..s.len()).filter(|&i| s[i] == 0.0).collect();
    let m = zero.len();
    // KKT of min <c + mu s, Qy> + 1/2 y^T Q^T H Q y  s.t.  (x + Q y)_zero = 0
    let hq = q.transpose() * h * q;
    let a = q.select_rows(&zero);
    let mut kkt = DMatrix::zeros(k + m, k + m);
    kkt.view_mut((0, 0), (k, k)).copy_from(&hq);
    kkt.view_mut((0, k), (k, m)).copy_from(&a.transpose());
    kkt.view_mut((k, 0), (m, k)).copy_from(&a);
    let mut rhs = DVector::zeros(k + m);
    rhs.rows_mut(0, k)
        .copy_from(&-(q.transpose() * (c + s * mu)));
    for (r, &i) in zero.iter().enumerate() {
        rhs[k + r] = -x[i];
    }
    let sol = kkt.lu().solve(&rhs)?;
    let v = q * sol.rows(0, k);
    let xv = x + &v;
    let consistent = (0..s.len()).all(|i| s[i] == 0.0 || xv[i] * s[i] > 0.0);
    consistent.then_some(v)
}

/// Oracle for the tangent proximal subproblem
/// `min <g, v> + 1/(2t) ||v||^2 + mu ||x + v||_1`, `v` tangent.
pub fn prox_oracle(
    geo: Geometry,
    x: &DVector<f64>,
    g: &DVector<f64>,
    t: f64,
    mu: f64,
) -> DVector<f64> {
    let amb = x.len();
    let q = geo.tangent_basis(x);
    let h = DMatrix::identity(amb, amb) / t;
    admm_composite(x, g, &h, &q, mu)
}

/// Riemannian Hessian matrix of `f(x) = 1/2 x^T C x + b^T x` on the sphere,
/// in the basis `q`: `Q^T (C - (x^T grad f) I) Q`.
pub fn sphere_hessian_in_basis(
    c: &DMatrix<f64>,
    b: &DVector<f64>,
    x: &DVector<f64>,
    q: &DMatrix<f64>,
) -> DMatrix<f64> {
    let egrad = c * x + b;
    let shift = x.dot(&egrad);
    let n = x.len();
    q.transpose() * (c - DMatrix::identity(n, n) * shift) * q
}

/// One Riemannian Newton step on the sphere for `f(x) = 1/2 x^T C x + b^T x`
/// followed by normalization.
pub fn sphere_newton_step(c: &DMatrix<f64>, b: &DVector<f64>, x: &DVector<f64>) -> DVector<f64> {
    let geo = Geometry { n: x.len(), r: 1 };
    let q = geo.tangent_basis(x);
    let egrad = c * x + b;
    let rgrad = geo.proj(x, &egrad);
    let hess = sphere_hessian_in_basis(c, b, x, &q);
    let y = hess
        .lu()
        .solve(&-(q.transpose() * rgrad))
        .expect("nonsingular Hessian");
    let xn = x + q * y;
    let nrm = xn.norm();
    xn / nrm
}

/// Descent and feasibility audit of a trace: every gradient-type step obeys
/// `F(x_{k+1}) <= F(x_k) - alpha ||v_k||^2 / 2` and every iterate is feasible
/// to `1e-12`. The only slack is for `||v||` being stored as a norm.
pub fn audit_trace(trace: &manprox::ConvergenceTrace) -> Result<(), String> {
    for rec in &trace.records {
        if !(rec.feasibility <= 1e-12) {
            return Err(format!(
                "k = {}: feasibility residual {:e}",
                rec.k, rec.feasibility
            ));
        }
    }
    for pair in trace.records.windows(2) {
        let (cur, next) = (&pair[0], &pair[1]);
        if !cur.is_gradient_step() {
            continue;
        }
        let alpha = cur.alpha.unwrap();
        let decrease = 0.5 * alpha * cur.v_norm * cur.v_norm;
        if !(next.f <= cur.f - decrease * (1.0 - 1e-12)) {
            return Err(format!(
                "k = {}: F went {} -> {} with alpha ||v||^2 / 2 = {:e}",
                cur.k, cur.f, next.f, decrease
            ));
        }
    }
    Ok(())
}
