use nalgebra::{DMatrix, DVector};

use crate::manifold::Manifold;

/// `F(x) = f(x) + mu * ||x||_1` restricted to a manifold, with `f` smooth in
/// the ambient space.
///
/// Implementations must be deterministic: the solvers compare objective values
/// computed at identical points and rely on bitwise-equal results.
pub trait CompositeObjective: Sync {
    fn manifold(&self) -> Manifold;

    fn mu(&self) -> f64;

    fn smooth_value(&self, x: &DVector<f64>) -> f64;

    /// Euclidean gradient of `f`.
    fn smooth_gradient(&self, x: &DVector<f64>) -> DVector<f64>;

    /// Both at once; must return the same value as [`smooth_value`](Self::smooth_value).
    fn smooth_value_and_gradient(&self, x: &DVector<f64>) -> (f64, DVector<f64>) {
        (self.smooth_value(x), self.smooth_gradient(x))
    }

    /// Euclidean Hessian action `\nabla^2 f(x)[v]`.
    fn hess_vec(&self, x: &DVector<f64>, v: &DVector<f64>) -> DVector<f64>;

    fn value(&self, x: &DVector<f64>) -> f64 {
        self.smooth_value(x) + self.mu() * l1_norm(x)
    }
}

pub fn l1_norm(x: &DVector<f64>) -> f64 {
    x.iter().map(|v| v.abs()).sum()
}

/// `f(x) = 1/2 x^T C x + b^T x` with symmetric `C`. Small generic objective used
/// for testing the machinery on manifolds other than the sparse PCA ones.
#[derive(Debug, Clone)]
pub struct QuadraticObjective {
    manifold: Manifold,
    c: DMatrix<f64>,
    b: DVector<f64>,
    mu: f64,
}

impl QuadraticObjective {
    pub fn new(manifold: Manifold, c: DMatrix<f64>, b: DVector<f64>, mu: f64) -> Self {
        let amb = manifold.ambient_dim();
        assert_eq!(c.shape(), (amb, amb), "C must be ambient_dim square");
        assert_eq!(b.len(), amb, "b must have ambient_dim entries");
        let c = (&c + c.transpose()) * 0.5;
        QuadraticObjective { manifold, c, b, mu }
    }
}

impl CompositeObjective for QuadraticObjective {
    fn manifold(&self) -> Manifold {
        self.manifold
    }

    fn mu(&self) -> f64 {
        self.mu
    }

    fn smooth_value(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&self.c * x)) + self.b.dot(x)
    }

    fn smooth_gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.c * x + &self.b
    }

    fn hess_vec(&self, _x: &DVector<f64>, v: &DVector<f64>) -> DVector<f64> {
        &self.c * v
    }
}
