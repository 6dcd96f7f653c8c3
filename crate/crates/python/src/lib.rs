//! Python module `_manprox`. Matrices cross the boundary as lists of rows.

use manprox::diagnostics::estimate_trace_rate;
use manprox::problems::{self, SparsePca};
use manprox::solvers::{self, Status};
use manprox::{Algorithm, CompositeObjective, ConvergenceTrace, Manifold, SolverConfig};
use nalgebra::{DMatrix, DVector};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

fn value_error(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

pub fn matrix_from_rows(rows: &[Vec<f64>]) -> Result<DMatrix<f64>, String> {
    let m = rows.len();
    let n = rows.first().map_or(0, Vec::len);
    if m == 0 || n == 0 {
        return Err("matrix must be nonempty".into());
    }
    if let Some(i) = rows.iter().position(|r| r.len() != n) {
        return Err(format!(
            "row {i} has {} entries, expected {n}",
            rows[i].len()
        ));
    }
    Ok(DMatrix::from_fn(m, n, |i, j| rows[i][j]))
}

pub fn matrix_to_rows(a: &DMatrix<f64>) -> Vec<Vec<f64>> {
    a.row_iter().map(|r| r.iter().copied().collect()).collect()
}

/// Result of a solver run.
#[pyclass(frozen, get_all)]
pub struct Trace {
    pub algorithm: String,
    pub status: String,
    /// Final iterate as `n` rows of length `r`.
    pub x: Vec<Vec<f64>>,
    pub f: Vec<f64>,
    pub v_norms: Vec<f64>,
    /// "gradient", "newton" or "newton-fallback" per record.
    pub phases: Vec<String>,
    pub iter: usize,
    pub iter_v: usize,
    pub iter_u: usize,
    pub sparsity: f64,
    pub rate_slope: f64,
    pub rate_class: String,
}

#[pymethods]
impl Trace {
    fn __repr__(&self) -> String {
        format!(
            "Trace(algorithm={:?}, status={:?}, iter={}, v_final={:e}, rate={})",
            self.algorithm,
            self.status,
            self.iter,
            self.v_norms.last().copied().unwrap_or(f64::NAN),
            self.rate_class
        )
    }
}

impl From<&ConvergenceTrace> for Trace {
    fn from(t: &ConvergenceTrace) -> Self {
        let s = t.summary();
        let rate = estimate_trace_rate(t);
        Trace {
            algorithm: t.algorithm.to_string(),
            status: match &t.status {
                Status::Converged => "converged".into(),
                Status::MaxIter => "max-iter".into(),
                Status::Stalled => "stalled".into(),
                Status::Failed(e) => format!("failed: {e}"),
            },
            x: matrix_to_rows(&t.x_final.as_matrix()),
            f: t.records.iter().map(|r| r.f).collect(),
            v_norms: t.v_norms(),
            phases: t
                .records
                .iter()
                .map(|r| {
                    match (r.phase, r.fallback) {
                        (manprox::Phase::Gradient, _) => "gradient",
                        (manprox::Phase::Newton, false) => "newton",
                        (manprox::Phase::Newton, true) => "newton-fallback",
                    }
                    .to_string()
                })
                .collect(),
            iter: s.iter,
            iter_v: s.iter_v,
            iter_u: s.iter_u,
            sparsity: s.sparsity,
            rate_slope: rate.slope,
            rate_class: format!("{:?}", rate.classification).to_lowercase(),
        }
    }
}

/// Gaussian `m x n` data; `normalize` centres the columns and scales them to
/// unit norm.
#[pyfunction]
#[pyo3(signature = (m, n, seed, normalize = true))]
fn gen_random(m: usize, n: usize, seed: u64, normalize: bool) -> PyResult<Vec<Vec<f64>>> {
    let a = problems::gen_random(m, n, seed).map_err(value_error)?;
    Ok(matrix_to_rows(&if normalize {
        problems::normalize_columns(&a)
    } else {
        a
    }))
}

#[pyfunction]
#[pyo3(signature = (m, n, seed, normalize = true))]
fn gen_synthetic(m: usize, n: usize, seed: u64, normalize: bool) -> PyResult<Vec<Vec<f64>>> {
    let a = problems::gen_synthetic(m, n, seed).map_err(value_error)?;
    Ok(matrix_to_rows(&if normalize {
        problems::normalize_columns(&a)
    } else {
        a
    }))
}

/// The `3 x 6` handcrafted data and its starting point.
#[pyfunction]
fn gen_handcrafted(seed: u64) -> (Vec<Vec<f64>>, Vec<f64>) {
    let (a, x0) = problems::gen_handcrafted(seed);
    (matrix_to_rows(&a), x0.coords().iter().copied().collect())
}

#[pyfunction]
fn soft_threshold(z: Vec<f64>, tau: f64) -> Vec<f64> {
    manprox::soft_threshold(&DVector::from_vec(z), tau)
        .iter()
        .copied()
        .collect()
}

/// Default proximal step `1 / (2 ||A||_2^2)`.
#[pyfunction]
fn default_step(a: Vec<Vec<f64>>) -> PyResult<f64> {
    Ok(1.0 / (2.0 * problems::spectral_norm_sq(&matrix_from_rows(&a).map_err(value_error)?)))
}

/// Minimizes `-tr(X^T A^T A X) + mu ||X||_1` over `n x r` matrices with
/// orthonormal columns.
#[pyfunction]
#[pyo3(signature = (a, mu, r = 1, algo = "rpn-g", x0 = None, seed = 0, t = None, epsilon = 1e-4, tol = 1e-12, max_iter = 3000))]
#[allow(clippy::too_many_arguments)]
fn solve(
    py: Python<'_>,
    a: Vec<Vec<f64>>,
    mu: f64,
    r: usize,
    algo: &str,
    x0: Option<Vec<Vec<f64>>>,
    seed: u64,
    t: Option<f64>,
    epsilon: f64,
    tol: f64,
    max_iter: usize,
) -> PyResult<Trace> {
    let algorithm: Algorithm = algo.parse().map_err(value_error)?;
    let problem =
        SparsePca::new(matrix_from_rows(&a).map_err(value_error)?, mu, r).map_err(value_error)?;
    let manifold: Manifold = problem.manifold();
    let start = match x0 {
        Some(rows) => {
            let m = matrix_from_rows(&rows).map_err(value_error)?;
            if (m.nrows(), m.ncols()) != manifold.shape() {
                return Err(value_error(format!(
                    "x0 is {} x {}, expected {} x {}",
                    m.nrows(),
                    m.ncols(),
                    manifold.shape().0,
                    manifold.shape().1
                )));
            }
            manifold
                .point(DVector::from_column_slice(m.as_slice()))
                .map_err(value_error)?
        }
        None => problems::random_start(manifold, seed),
    };
    let cfg = SolverConfig {
        t: t.unwrap_or_else(|| problem.default_step()),
        epsilon,
        tol_final: tol,
        max_iter,
        ..SolverConfig::default()
    };
    let trace = py
        .detach(|| solvers::run(algorithm, &problem, &start, &cfg))
        .map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    Ok(Trace::from(&trace))
}

#[pymodule]
pub fn _manprox(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Trace>()?;
    m.add_function(wrap_pyfunction!(gen_random, m)?)?;
    m.add_function(wrap_pyfunction!(gen_synthetic, m)?)?;
    m.add_function(wrap_pyfunction!(gen_handcrafted, m)?)?;
    m.add_function(wrap_pyfunction!(soft_threshold, m)?)?;
    m.add_function(wrap_pyfunction!(default_step, m)?)?;
    m.add_function(wrap_pyfunction!(solve, m)?)?;
    Ok(())
}
