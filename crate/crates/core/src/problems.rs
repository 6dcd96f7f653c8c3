//! Sparse PCA objectives and the data generators used in the experiments.
//!
//! The objective is `F(X) = -tr(X^T A^T A X) + mu ||X||_1` over the sphere
//! (`r = 1`) or the Stiefel manifold `St(n, r)`.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Normal, StandardNormal};

use crate::error::{Error, Result};
use crate::manifold::{as_matrix, from_matrix, Manifold, ManifoldPoint};
use crate::objective::CompositeObjective;

/// Above this size `A^T A` is never formed.
pub const GRAM_MAX_N: usize = 2000;

/// Sparse PCA instance `min -tr(X^T A^T A X) + mu ||X||_1`.
#[derive(Debug, Clone)]
pub struct SparsePca {
    a: DMatrix<f64>,
    mu: f64,
    r: usize,
    manifold: Manifold,
    gram: Option<DMatrix<f64>>,
}

impl SparsePca {
    pub fn new(a: DMatrix<f64>, mu: f64, r: usize) -> Result<Self> {
        if r == 0 {
            return Err(Error::InvalidInput("r must be at least 1".into()));
        }
        if !(mu >= 0.0) {
            return Err(Error::InvalidInput(format!(
                "mu must be nonnegative, got {mu}"
            )));
        }
        let (m, n) = a.shape();
        if m == 0 || n == 0 || r > n {
            return Err(Error::InvalidInput(format!(
                "bad sizes: A is {m}x{n}, r = {r}"
            )));
        }
        let manifold = if r == 1 {
            Manifold::sphere(n)
        } else {
            Manifold::stiefel(n, r)
        };
        // The Gram matrix only pays off when it is cheaper than two thin products.
        let gram = (n <= GRAM_MAX_N && n < 2 * m).then(|| a.tr_mul(&a));
        Ok(SparsePca {
            a,
            mu,
            r,
            manifold,
            gram,
        })
    }

    pub fn data(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn r(&self) -> usize {
        self.r
    }

    pub fn n(&self) -> usize {
        self.a.ncols()
    }

    pub fn uses_gram(&self) -> bool {
        self.gram.is_some()
    }

    /// `A^T A V` for a column-stacked `V`.
    fn gram_apply(&self, v: &DVector<f64>) -> DVector<f64> {
        let vm = as_matrix(v, self.n(), self.r);
        let out = match &self.gram {
            Some(g) => g * vm,
            None => self.a.tr_mul(&(&self.a * vm)),
        };
        from_matrix(&out)
    }

    /// `t = 1 / (2 ||A||_2^2)`, the step used in the experiments.
    pub fn default_step(&self) -> f64 {
        1.0 / (2.0 * spectral_norm_sq(&self.a))
    }
}

impl CompositeObjective for SparsePca {
    fn manifold(&self) -> Manifold {
        self.manifold
    }

    fn mu(&self) -> f64 {
        self.mu
    }

    fn smooth_value(&self, x: &DVector<f64>) -> f64 {
        self.smooth_value_and_gradient(x).0
    }

    fn smooth_gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        self.gram_apply(x) * -2.0
    }

    fn smooth_value_and_gradient(&self, x: &DVector<f64>) -> (f64, DVector<f64>) {
        let g = self.gram_apply(x);
        let value = -x.dot(&g);
        (value, g * -2.0)
    }

    fn hess_vec(&self, _x: &DVector<f64>, v: &DVector<f64>) -> DVector<f64> {
        self.gram_apply(v) * -2.0
    }
}

/// Largest eigenvalue of `A^T A`, computed on the smaller Gram side.
pub fn spectral_norm_sq(a: &DMatrix<f64>) -> f64 {
    let gram = if a.nrows() <= a.ncols() {
        a * a.transpose()
    } else {
        a.tr_mul(a)
    };
    gram.symmetric_eigenvalues().max().max(0.0)
}

fn rng_for(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn gaussian_row_major<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> DMatrix<f64> {
    let data: Vec<f64> = (0..rows * cols)
        .map(|_| rng.sample::<f64, _>(StandardNormal))
        .collect();
    DMatrix::from_row_slice(rows, cols, &data)
}

/// `m x n` matrix with i.i.d. standard normal entries, drawn in row-major order.
pub fn gen_random(m: usize, n: usize, seed: u64) -> Result<DMatrix<f64>> {
    if m == 0 || n == 0 {
        return Err(Error::InvalidInput("m and n must be positive".into()));
    }
    Ok(gaussian_row_major(m, n, &mut rng_for(seed)))
}

/// Centers every column and scales it to unit Euclidean norm. Zero columns
/// stay zero.
pub fn normalize_columns(a: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = a.clone();
    let m = a.nrows() as f64;
    for mut col in out.column_iter_mut() {
        let mean = col.sum() / m;
        col.add_scalar_mut(-mean);
        let nrm = col.norm();
        if nrm > 0.0 {
            col /= nrm;
        }
    }
    out
}

/// Singular values of the handcrafted instance.
pub const HANDCRAFTED_SIGMA: [f64; 3] = [20.0, 0.1, 0.05];

/// Handcrafted `3 x 6` instance whose noise-free optimum is `e_1`, with a
/// starting point `normalize(e_1 + 0.1 R_2)`.
pub fn gen_handcrafted(seed: u64) -> (DMatrix<f64>, ManifoldPoint) {
    gen_handcrafted_with_noise(seed, 0.1)
}

/// As [`gen_handcrafted`] with the data-noise scale exposed. The starting
/// point perturbation stays at 0.1.
pub fn gen_handcrafted_with_noise(seed: u64, noise: f64) -> (DMatrix<f64>, ManifoldPoint) {
    let mut rng = rng_for(seed);
    let r1 = gaussian_row_major(3, 6, &mut rng);
    let r2 = gaussian_row_major(6, 1, &mut rng);
    let mut a = DMatrix::zeros(3, 6);
    for (i, s) in HANDCRAFTED_SIGMA.iter().enumerate() {
        a[(i, i)] = *s;
    }
    a += r1 * noise;
    let mut x0 = DVector::zeros(6);
    x0[0] = 1.0;
    x0 += DVector::from_column_slice(r2.as_slice()) * 0.1;
    let x0 = Manifold::sphere(6)
        .project_to_manifold(&x0)
        .expect("perturbed e_1 is nonzero");
    (a, x0)
}

/// Five fixed sparse loading patterns on `n` indices. Each pattern is a union
/// of boxes and steps placed at fixed fractions of the index range.
pub fn synthetic_components(n: usize) -> [DVector<f64>; 5] {
    // (start, end, value) on the unit interval
    const PIECES: [&[(f64, f64, f64)]; 5] = [
        &[(0.05, 0.20, 1.0)],
        &[(0.15, 0.30, 1.0), (0.30, 0.35, 0.5)],
        &[(0.40, 0.50, -1.0), (0.50, 0.60, 1.0)],
        &[(0.65, 0.75, 1.0), (0.75, 0.80, 2.0)],
        &[(0.85, 0.95, -1.5)],
    ];
    PIECES.map(|pieces| {
        DVector::from_fn(n, |i, _| {
            let s = (i as f64 + 0.5) / n as f64;
            pieces
                .iter()
                .find(|(lo, hi, _)| s >= *lo && s < *hi)
                .map_or(0.0, |p| p.2)
        })
    })
}

/// Standard deviation of the additive noise (variance 0.25).
pub const SYNTHETIC_NOISE_STD: f64 = 0.5;

/// `m x n` matrix made of the five synthetic components, each repeated
/// `m / 5` times as consecutive rows, plus i.i.d. `N(0, 0.25)` noise.
pub fn gen_synthetic(m: usize, n: usize, seed: u64) -> Result<DMatrix<f64>> {
    gen_synthetic_with_noise(m, n, seed, SYNTHETIC_NOISE_STD)
}

pub fn gen_synthetic_with_noise(
    m: usize,
    n: usize,
    seed: u64,
    noise_std: f64,
) -> Result<DMatrix<f64>> {
    if m == 0 || !m.is_multiple_of(5) {
        return Err(Error::InvalidInput(format!(
            "m must be a positive multiple of 5, got {m}"
        )));
    }
    if n == 0 {
        return Err(Error::InvalidInput("n must be positive".into()));
    }
    let comps = synthetic_components(n);
    let block = m / 5;
    let mut a = DMatrix::from_fn(m, n, |i, j| comps[i / block][j]);
    if noise_std > 0.0 {
        let mut rng = rng_for(seed);
        let dist = Normal::new(0.0, noise_std).expect("finite std");
        for i in 0..m {
            for j in 0..n {
                a[(i, j)] += rng.sample(dist);
            }
        }
    }
    Ok(a)
}

/// Fraction of entries that are exactly zero.
pub fn sparsity(x: &DVector<f64>) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    x.iter().filter(|v| **v == 0.0).count() as f64 / x.len() as f64
}

/// Random starting point for a problem, from a stream separate from the data.
pub fn random_start(manifold: Manifold, seed: u64) -> ManifoldPoint {
    let mut rng = rng_for(seed ^ 0x005e_ed0f_57a7);
    manifold.random_point(&mut rng)
}
