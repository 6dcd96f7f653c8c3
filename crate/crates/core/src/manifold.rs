//! Embedded submanifold geometry for the unit sphere, the Stiefel manifold and
//! the oblique manifold.
//!
//! Every point and tangent vector is stored in ambient coordinates. Matrix
//! manifolds are stored column-stacked (column-major), so an `n x r` matrix is a
//! vector of length `n * r` and entrywise operations such as soft-thresholding
//! never need to reshape.
//!
//! The normal space at `x` is described by an orthonormal basis `B_x`
//! (`ambient_dim x normal_dim`):
//!
//! * sphere: `B_x = x`;
//! * Stiefel: columns `vec(X E_k)` where `E_k` runs over the orthonormal basis
//!   of symmetric `r x r` matrices, diagonal elements `E_11..E_rr` first and
//!   then `(e_i e_j^T + e_j e_i^T)/sqrt(2)` for `i < j` in row-major order;
//! * oblique: one sphere per column, so `B_x` is block diagonal.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Points whose feasibility residual exceeds this are rejected.
pub const FEASIBILITY_TOL: f64 = 1e-12;

/// Relative tolerance used to decide whether a vector is normal.
pub const NORMAL_TOL: f64 = 1e-10;

/// Which manifold, and its sizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Manifold {
    /// Unit sphere in `R^n`.
    Sphere { n: usize },
    /// `n x r` matrices with orthonormal columns.
    Stiefel { n: usize, r: usize },
    /// `n x p` matrices with unit-norm columns.
    Oblique { n: usize, p: usize },
}

impl Manifold {
    pub fn sphere(n: usize) -> Self {
        Manifold::Sphere { n }
    }

    pub fn stiefel(n: usize, r: usize) -> Self {
        Manifold::Stiefel { n, r }
    }

    pub fn oblique(n: usize, p: usize) -> Self {
        Manifold::Oblique { n, p }
    }

    /// `(rows, cols)` of the matrix view of an ambient vector.
    pub fn shape(&self) -> (usize, usize) {
        match *self {
            Manifold::Sphere { n } => (n, 1),
            Manifold::Stiefel { n, r } => (n, r),
            Manifold::Oblique { n, p } => (n, p),
        }
    }

    pub fn ambient_dim(&self) -> usize {
        let (n, c) = self.shape();
        n * c
    }

    pub fn normal_dim(&self) -> usize {
        match *self {
            Manifold::Sphere { .. } => 1,
            Manifold::Stiefel { r, .. } => r * (r + 1) / 2,
            Manifold::Oblique { p, .. } => p,
        }
    }

    pub fn tangent_dim(&self) -> usize {
        self.ambient_dim() - self.normal_dim()
    }

    fn check_len(&self, len: usize) -> Result<()> {
        let expected = self.ambient_dim();
        if len != expected {
            return Err(Error::DimensionMismatch {
                expected,
                found: len,
            });
        }
        Ok(())
    }

    /// Distance from satisfying the defining equations: `| ||x|| - 1 |` on the
    /// sphere, `||X^T X - I||_F` on Stiefel, max column deviation on oblique.
    pub fn feasibility_residual(&self, coords: &DVector<f64>) -> f64 {
        match *self {
            Manifold::Sphere { .. } => (coords.norm() - 1.0).abs(),
            Manifold::Stiefel { n, r } => {
                let x = as_matrix(coords, n, r);
                (x.transpose() * &x - DMatrix::identity(r, r)).norm()
            }
            Manifold::Oblique { n, p } => {
                let x = as_matrix(coords, n, p);
                x.column_iter()
                    .map(|c| (c.norm() - 1.0).abs())
                    .fold(0.0, f64::max)
            }
        }
    }

    /// Wraps `coords` as a point after checking length and feasibility.
    pub fn point(&self, coords: DVector<f64>) -> Result<ManifoldPoint> {
        self.check_len(coords.len())?;
        let residual = self.feasibility_residual(&coords);
        if !(residual <= FEASIBILITY_TOL) {
            return Err(Error::Infeasible { residual });
        }
        Ok(ManifoldPoint {
            coords,
            manifold: *self,
        })
    }

    /// Maps an arbitrary full-rank ambient vector to the closest point of the
    /// manifold (normalization or polar factor).
    pub fn project_to_manifold(&self, coords: &DVector<f64>) -> Result<ManifoldPoint> {
        self.check_len(coords.len())?;
        let projected = match *self {
            Manifold::Sphere { .. } => {
                let nrm = coords.norm();
                if nrm == 0.0 {
                    return Err(Error::InvalidInput(
                        "cannot normalize the zero vector".into(),
                    ));
                }
                coords / nrm
            }
            Manifold::Stiefel { n, r } => {
                let y = as_matrix(coords, n, r);
                let q = polar_factor(&y)?;
                from_matrix(&q)
            }
            Manifold::Oblique { n, p } => {
                let mut y = as_matrix(coords, n, p);
                for mut col in y.column_iter_mut() {
                    let nrm = col.norm();
                    if nrm == 0.0 {
                        return Err(Error::InvalidInput("oblique column is zero".into()));
                    }
                    col /= nrm;
                }
                from_matrix(&y)
            }
        };
        Ok(ManifoldPoint {
            coords: projected,
            manifold: *self,
        })
    }

    /// Random point from normalized Gaussian coordinates.
    pub fn random_point<R: Rng + ?Sized>(&self, rng: &mut R) -> ManifoldPoint {
        loop {
            let z = gaussian_vector(self.ambient_dim(), rng);
            if let Ok(p) = self.project_to_manifold(&z) {
                return p;
            }
        }
    }
}

/// A feasible point together with the manifold it lives on.
#[derive(Debug, Clone, PartialEq)]
pub struct ManifoldPoint {
    coords: DVector<f64>,
    manifold: Manifold,
}

impl ManifoldPoint {
    pub fn coords(&self) -> &DVector<f64> {
        &self.coords
    }

    pub fn into_coords(self) -> DVector<f64> {
        self.coords
    }

    pub fn manifold(&self) -> Manifold {
        self.manifold
    }

    pub fn ambient_dim(&self) -> usize {
        self.coords.len()
    }

    /// Matrix view (`n x r`) of the point.
    pub fn as_matrix(&self) -> DMatrix<f64> {
        let (n, c) = self.manifold.shape();
        as_matrix(&self.coords, n, c)
    }

    fn check(&self, z: &DVector<f64>) -> Result<()> {
        self.manifold.check_len(z.len())
    }

    /// `B_x^T z`.
    pub fn normal_coords(&self, z: &DVector<f64>) -> Result<DVector<f64>> {
        self.check(z)?;
        Ok(self.normal_coords_raw(z))
    }

    pub(crate) fn normal_coords_raw(&self, z: &DVector<f64>) -> DVector<f64> {
        match self.manifold {
            Manifold::Sphere { .. } => DVector::from_element(1, self.coords.dot(z)),
            Manifold::Stiefel { n, r } => {
                let x = as_matrix(&self.coords, n, r);
                let zm = as_matrix(z, n, r);
                sym_coords(&(x.transpose() * zm))
            }
            Manifold::Oblique { n, p } => DVector::from_iterator(
                p,
                (0..p).map(|k| self.coords.rows(k * n, n).dot(&z.rows(k * n, n))),
            ),
        }
    }

    /// `B_x lambda`.
    pub fn normal_combine(&self, lambda: &DVector<f64>) -> Result<DVector<f64>> {
        let expected = self.manifold.normal_dim();
        if lambda.len() != expected {
            return Err(Error::DimensionMismatch {
                expected,
                found: lambda.len(),
            });
        }
        Ok(self.normal_combine_raw(lambda))
    }

    pub(crate) fn normal_combine_raw(&self, lambda: &DVector<f64>) -> DVector<f64> {
        match self.manifold {
            Manifold::Sphere { .. } => &self.coords * lambda[0],
            Manifold::Stiefel { n, r } => {
                let x = as_matrix(&self.coords, n, r);
                from_matrix(&(x * sym_from_coords(lambda, r)))
            }
            Manifold::Oblique { n, p } => {
                let mut out = self.coords.clone();
                for k in 0..p {
                    out.rows_mut(k * n, n).scale_mut(lambda[k]);
                }
                out
            }
        }
    }

    /// Orthonormal basis of the normal space, `ambient_dim x normal_dim`.
    pub fn normal_basis(&self) -> DMatrix<f64> {
        let d = self.manifold.normal_dim();
        let mut basis = DMatrix::zeros(self.ambient_dim(), d);
        let mut e = DVector::zeros(d);
        for k in 0..d {
            e[k] = 1.0;
            basis.set_column(k, &self.normal_combine_raw(&e));
            e[k] = 0.0;
        }
        basis
    }

    /// Orthonormal basis of the tangent space, `ambient_dim x tangent_dim`.
    /// Dense; intended for small problems and oracles.
    pub fn tangent_basis(&self) -> DMatrix<f64> {
        let amb = self.ambient_dim();
        let d = self.manifold.normal_dim();
        let mut aug = DMatrix::zeros(amb, d + amb);
        aug.columns_mut(0, d).copy_from(&self.normal_basis());
        aug.columns_mut(d, amb).fill_with_identity();
        let q = aug.qr().q();
        q.columns(d, amb - d).into_owned()
    }

    /// Orthogonal projection onto the tangent space, `z - B_x B_x^T z`.
    pub fn proj_tangent(&self, z: &DVector<f64>) -> Result<DVector<f64>> {
        self.check(z)?;
        Ok(self.proj_tangent_raw(z))
    }

    pub(crate) fn proj_tangent_raw(&self, z: &DVector<f64>) -> DVector<f64> {
        z - self.normal_combine_raw(&self.normal_coords_raw(z))
    }

    /// `||B_x^T v||`, zero for tangent vectors.
    pub fn tangency_residual(&self, v: &DVector<f64>) -> Result<f64> {
        Ok(self.normal_coords(v)?.norm())
    }

    pub fn is_tangent(&self, v: &DVector<f64>) -> bool {
        self.tangency_residual(v)
            .map(|r| r <= 1e-10 * (1.0 + v.norm()))
            .unwrap_or(false)
    }

    /// Sphere/oblique: `(x + v)` normalized. Stiefel: polar retraction
    /// `(X + V)(I + V^T V)^{-1/2}`, evaluated as the polar factor of `X + V`
    /// so the result stays feasible even for slightly non-tangent `v`.
    pub fn retract(&self, v: &DVector<f64>) -> Result<ManifoldPoint> {
        self.check(v)?;
        if v.iter().all(|vi| *vi == 0.0) {
            return Ok(self.clone());
        }
        let y = &self.coords + v;
        self.manifold.project_to_manifold(&y)
    }

    /// Weingarten map `W_x(w, u) = D(x -> P_x)(x)[w] u` for tangent `w` and
    /// normal `u`.
    pub fn weingarten(&self, w: &DVector<f64>, u: &DVector<f64>) -> Result<DVector<f64>> {
        self.check(w)?;
        self.check(u)?;
        let tangential = self.proj_tangent_raw(u).norm();
        if tangential > NORMAL_TOL * u.norm() + 1e-300 {
            return Err(Error::NotNormal {
                residual: tangential,
            });
        }
        Ok(self.weingarten_raw(w, u))
    }

    /// Closed form of the Weingarten map without the normality check. The
    /// formula is linear in both arguments and is also used as the ambient
    /// extension when `w` is not tangent.
    pub(crate) fn weingarten_raw(&self, w: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        match self.manifold {
            Manifold::Sphere { .. } => w * (-self.coords.dot(u)),
            Manifold::Stiefel { n, r } => {
                let x = as_matrix(&self.coords, n, r);
                let wm = as_matrix(w, n, r);
                let um = as_matrix(u, n, r);
                let xtu = sym(&(x.transpose() * &um));
                let wtu = sym(&(wm.transpose() * &um));
                from_matrix(&(-(wm * xtu) - x * wtu))
            }
            Manifold::Oblique { n, p } => {
                let mut out = w.clone();
                for k in 0..p {
                    let s = self.coords.rows(k * n, n).dot(&u.rows(k * n, n));
                    out.rows_mut(k * n, n).scale_mut(-s);
                }
                out
            }
        }
    }

    /// Random unit tangent vector.
    pub fn random_tangent<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        loop {
            let z = gaussian_vector(self.ambient_dim(), rng);
            let v = self.proj_tangent_raw(&z);
            let nrm = v.norm();
            if nrm > 1e-8 {
                return v / nrm;
            }
        }
    }
}

pub(crate) fn gaussian_vector<R: Rng + ?Sized>(len: usize, rng: &mut R) -> DVector<f64> {
    DVector::from_iterator(len, (0..len).map(|_| rng.sample::<f64, _>(StandardNormal)))
}

/// Column-major reshape of an ambient vector.
pub fn as_matrix(v: &DVector<f64>, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_column_slice(rows, cols, v.as_slice())
}

/// Column-stacks a matrix into an ambient vector.
pub fn from_matrix(m: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_column_slice(m.as_slice())
}

fn sym(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Coordinates of `sym(S)` in the orthonormal symmetric basis.
fn sym_coords(s: &DMatrix<f64>) -> DVector<f64> {
    let r = s.nrows();
    let mut out = DVector::zeros(r * (r + 1) / 2);
    for i in 0..r {
        out[i] = s[(i, i)];
    }
    let mut k = r;
    for i in 0..r {
        for j in (i + 1)..r {
            out[k] = (s[(i, j)] + s[(j, i)]) * std::f64::consts::FRAC_1_SQRT_2;
            k += 1;
        }
    }
    out
}

fn sym_from_coords(c: &DVector<f64>, r: usize) -> DMatrix<f64> {
    let mut s = DMatrix::zeros(r, r);
    for i in 0..r {
        s[(i, i)] = c[i];
    }
    let mut k = r;
    for i in 0..r {
        for j in (i + 1)..r {
            let val = c[k] * std::f64::consts::FRAC_1_SQRT_2;
            s[(i, j)] = val;
            s[(j, i)] = val;
            k += 1;
        }
    }
    s
}

/// `Y (Y^T Y)^{-1/2}`.
fn polar_factor(y: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let gram = y.transpose() * y;
    let eig = gram.symmetric_eigen();
    if eig.eigenvalues.iter().any(|&l| !(l > 0.0)) {
        return Err(Error::InvalidInput("matrix is rank deficient".into()));
    }
    let inv_sqrt = DVector::from_iterator(
        eig.eigenvalues.len(),
        eig.eigenvalues.iter().map(|l| 1.0 / l.sqrt()),
    );
    let q = &eig.eigenvectors;
    let root = q * DMatrix::from_diagonal(&inv_sqrt) * q.transpose();
    Ok(y * root)
}
