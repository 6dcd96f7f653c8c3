//! Riemannian proximal gradient and proximal Newton methods for
//!
//! ```text
//! min F(x) = f(x) + mu ||x||_1   subject to x in M
//! ```
//!
//! where `M` is the unit sphere, the Stiefel manifold or the oblique manifold,
//! with sparse PCA as the main application.

pub mod diagnostics;
pub mod error;
pub mod krylov;
pub mod manifold;
pub mod matrix_io;
pub mod naive;
pub mod newton;
pub mod objective;
pub mod problems;
pub mod prox;
pub mod solvers;

pub use error::{Error, Result};
pub use manifold::{Manifold, ManifoldPoint};
pub use objective::{CompositeObjective, QuadraticObjective};
pub use problems::SparsePca;
pub use prox::{soft_threshold, solve_tangent_prox, ActiveMask, ProxSolution, TangentProx};
pub use solvers::{Algorithm, ConvergenceTrace, Phase, SolverConfig, TraceRecord};
