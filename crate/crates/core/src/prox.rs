//! Tangent-space proximal gradient subproblem
//!
//! ```text
//! v(x) = argmin_{v in T_x M}  <egrad, v> + ||v||^2 / (2t) + mu ||x + v||_1
//! ```
//!
//! solved through its multiplier. With `z(lambda) = x - t (egrad + B_x lambda)`
//! the KKT conditions reduce to the `d`-dimensional piecewise-linear equation
//!
//! ```text
//! Psi(lambda) = B_x^T (soft(z(lambda), t mu) - x) = 0
//! ```
//!
//! which is solved by a regularized semismooth Newton method with
//! backtracking on `||Psi||`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::manifold::ManifoldPoint;
use crate::objective::l1_norm;

/// Entrywise `max(|z_i| - tau, 0) sgn(z_i)`.
pub fn soft_threshold(z: &DVector<f64>, tau: f64) -> DVector<f64> {
    debug_assert!(tau >= 0.0);
    z.map(|zi| soft_scalar(zi, tau))
}

#[inline]
fn soft_scalar(z: f64, tau: f64) -> f64 {
    let a = z.abs() - tau;
    if a > 0.0 {
        a.copysign(z)
    } else {
        0.0
    }
}

/// Diagonal 0/1 matrix `M_x`, stored as booleans (`true` = active).
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ActiveMask(Vec<bool>);

impl ActiveMask {
    pub fn new(active: Vec<bool>) -> Self {
        ActiveMask(active)
    }

    pub fn all(len: usize) -> Self {
        ActiveMask(vec![true; len])
    }

    pub fn none(len: usize) -> Self {
        ActiveMask(vec![false; len])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn is_active(&self, i: usize) -> bool {
        self.0[i]
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.0
    }

    pub fn count(&self) -> usize {
        self.0.iter().filter(|a| **a).count()
    }

    pub fn active_indices(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.0[i]).collect()
    }

    /// `M v`.
    pub fn apply(&self, v: &DVector<f64>) -> DVector<f64> {
        let mut out = v.clone();
        self.apply_mut(&mut out);
        out
    }

    pub fn apply_mut(&self, v: &mut DVector<f64>) {
        for (vi, &a) in v.iter_mut().zip(&self.0) {
            if !a {
                *vi = 0.0;
            }
        }
    }

    /// Stable 64-bit fingerprint (FNV-1a over the active indices).
    pub fn fingerprint(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for (i, &a) in self.0.iter().enumerate() {
            if a {
                for b in (i as u64).to_le_bytes() {
                    h ^= b as u64;
                    h = h.wrapping_mul(0x0100_0000_01b3);
                }
            }
        }
        h ^ self.0.len() as u64
    }
}

/// `M_x` with `M_ii = 0` iff `|x - t (egrad + B_x lambda)|_i <= t mu`, except
/// that `mu = 0` gives `M_x = I` (the prox is the identity).
pub fn active_mask(
    x: &ManifoldPoint,
    egrad: &DVector<f64>,
    lambda: &DVector<f64>,
    t: f64,
    mu: f64,
) -> Result<ActiveMask> {
    let z = shifted_point(x, egrad, lambda, t)?;
    Ok(mask_of(&z, t * mu))
}

fn mask_of(z: &DVector<f64>, tau: f64) -> ActiveMask {
    if tau == 0.0 {
        return ActiveMask::all(z.len());
    }
    ActiveMask(z.iter().map(|zi| zi.abs() > tau).collect())
}

fn shifted_point(
    x: &ManifoldPoint,
    egrad: &DVector<f64>,
    lambda: &DVector<f64>,
    t: f64,
) -> Result<DVector<f64>> {
    let bl = x.normal_combine(lambda)?;
    if egrad.len() != x.ambient_dim() {
        return Err(Error::DimensionMismatch {
            expected: x.ambient_dim(),
            found: egrad.len(),
        });
    }
    Ok(x.coords() - (egrad + bl) * t)
}

/// Result of the tangent proximal subproblem.
#[derive(Debug, Clone)]
pub struct ProxSolution {
    /// Proximal gradient direction.
    pub v: DVector<f64>,
    /// Multiplier of the tangency constraint.
    pub lambda: DVector<f64>,
    pub mask: ActiveMask,
    /// `||Psi(lambda)||` at return.
    pub residual: f64,
    pub inner_iters: usize,
}

impl ProxSolution {
    pub fn v_norm(&self) -> f64 {
        self.v.norm()
    }
}

/// Semismooth Newton solver for [`ProxSolution`]s.
#[derive(Debug, Clone, Copy)]
pub struct TangentProx {
    /// Absolute tolerance on `||Psi||`; `None` means `1e-13 sqrt(ambient_dim)`.
    pub tol: Option<f64>,
    pub max_iter: usize,
    pub max_backtracks: usize,
}

impl Default for TangentProx {
    fn default() -> Self {
        TangentProx {
            tol: None,
            max_iter: 100,
            max_backtracks: 30,
        }
    }
}

/// Regularization escalation steps tried when backtracking fails.
const SIGMA_GROWTH: f64 = 1e3;
const SIGMA_LEVELS: usize = 16;
/// Sufficient-increase constant for the dual function.
const DUAL_ARMIJO: f64 = 1e-4;

impl TangentProx {
    pub fn tolerance_for(&self, ambient_dim: usize) -> f64 {
        self.tol.unwrap_or(1e-13 * (ambient_dim as f64).sqrt())
    }

    pub fn solve(
        &self,
        x: &ManifoldPoint,
        egrad: &DVector<f64>,
        t: f64,
        mu: f64,
        warm_lambda: Option<&DVector<f64>>,
    ) -> Result<ProxSolution> {
        if !(t > 0.0) {
            return Err(Error::InvalidInput(format!("t must be positive, got {t}")));
        }
        if !(mu >= 0.0) {
            return Err(Error::InvalidInput(format!(
                "mu must be nonnegative, got {mu}"
            )));
        }
        let amb = x.ambient_dim();
        if egrad.len() != amb {
            return Err(Error::DimensionMismatch {
                expected: amb,
                found: egrad.len(),
            });
        }
        let d = x.manifold().normal_dim();
        let mut lambda = match warm_lambda {
            Some(l) if l.len() == d => l.clone(),
            Some(l) => {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    found: l.len(),
                })
            }
            None => DVector::zeros(d),
        };
        let tol = self.tolerance_for(amb);
        let tau = t * mu;
        let basis = x.normal_basis();

        // `Psi` is the gradient of the concave dual function `theta`.
        let eval = |lambda: &DVector<f64>| -> (DVector<f64>, DVector<f64>, f64, f64) {
            let shift = egrad + &basis * lambda;
            let z = x.coords() - &shift * t;
            let y = soft_threshold(&z, tau);
            let dy = &y - x.coords();
            let psi = basis.tr_mul(&dy);
            let theta = shift.dot(&dy) + dy.norm_squared() / (2.0 * t) + mu * l1_norm(&y);
            let nrm = psi.norm();
            (z, psi, nrm, theta)
        };

        let (mut z, mut psi, mut psi_norm, mut theta) = eval(&lambda);
        let mut iters = 0;
        loop {
            // Once within tolerance, one more full Newton step is taken if it
            // reduces the residual: a warm start can land just inside the
            // tolerance, and the extra step brings v to rounding level.
            let polishing = psi_norm <= tol;
            if psi_norm == 0.0 || (polishing && iters > 0) {
                break;
            }
            if iters >= self.max_iter {
                return Err(Error::MaxInnerIterations {
                    iters,
                    residual: psi_norm,
                });
            }
            iters += 1;
            let mask = mask_of(&z, tau);
            let jac = masked_gram(&basis, &mask) * t;
            let mut sigma = (1e-10 * psi_norm).max(1e-12);
            let (levels, backtracks) = if polishing {
                (1, 0)
            } else {
                (SIGMA_LEVELS, self.max_backtracks)
            };
            let mut accepted = None;
            'levels: for _ in 0..levels {
                let reg = &jac + DMatrix::identity(d, d) * sigma;
                let step = match reg.cholesky() {
                    Some(ch) => ch.solve(&psi),
                    None => {
                        sigma *= SIGMA_GROWTH;
                        continue;
                    }
                };
                let slope = psi.dot(&step);
                let mut alpha = 1.0;
                for _ in 0..=backtracks {
                    let trial = &lambda + &step * alpha;
                    let (tz, tpsi, tnorm, ttheta) = eval(&trial);
                    let dual_ok = !polishing && ttheta >= theta + DUAL_ARMIJO * alpha * slope;
                    if tnorm < psi_norm || dual_ok {
                        accepted = Some((trial, tz, tpsi, tnorm, ttheta));
                        break 'levels;
                    }
                    alpha *= 0.5;
                }
                sigma *= SIGMA_GROWTH;
            }
            match accepted {
                Some((l, tz, tpsi, tnorm, ttheta)) => {
                    lambda = l;
                    z = tz;
                    psi = tpsi;
                    psi_norm = tnorm;
                    theta = ttheta;
                }
                None if polishing => break,
                None => {
                    return Err(Error::MaxInnerIterations {
                        iters,
                        residual: psi_norm,
                    })
                }
            }
        }
        let y = soft_threshold(&z, tau);
        let v = &y - x.coords();
        Ok(ProxSolution {
            v,
            lambda,
            mask: mask_of(&z, tau),
            residual: psi_norm,
            inner_iters: iters,
        })
    }
}

/// `B^T M B`.
fn masked_gram(basis: &DMatrix<f64>, mask: &ActiveMask) -> DMatrix<f64> {
    let d = basis.ncols();
    let mut g = DMatrix::zeros(d, d);
    for (i, row) in basis.row_iter().enumerate() {
        if mask.is_active(i) {
            g += row.transpose() * row;
        }
    }
    g
}

/// Solves the subproblem with default solver settings.
pub fn solve_tangent_prox(
    x: &ManifoldPoint,
    egrad: &DVector<f64>,
    t: f64,
    mu: f64,
    warm_lambda: Option<&DVector<f64>>,
) -> Result<ProxSolution> {
    TangentProx::default().solve(x, egrad, t, mu, warm_lambda)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manifold::Manifold;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn vecf(v: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(v)
    }

    #[test]
    fn soft_threshold_examples() {
        assert_eq!(
            soft_threshold(&vecf(&[2.0, -0.5, 0.0]), 1.0),
            vecf(&[1.0, 0.0, 0.0])
        );
        let out = soft_threshold(&vecf(&[1.5, -3.0, 0.2]), 0.2);
        assert!((out - vecf(&[1.3, -2.8, 0.0])).norm() < 1e-15);
        let z = vecf(&[0.3, -7.0, 0.0, 1e-300]);
        assert_eq!(soft_threshold(&z, 0.0), z);
    }

    #[test]
    fn mask_examples() {
        let x = Manifold::sphere(3).point(vecf(&[1.0, 0.0, 0.0])).unwrap();
        let g = vecf(&[0.2, -0.3, 0.4]);
        let lam = vecf(&[0.0]);
        assert_eq!(
            active_mask(&x, &g, &lam, 1.0, 0.0).unwrap(),
            ActiveMask::all(3)
        );
        // |z| = (0.8, 0.3, 0.4) all below t mu = 1
        assert_eq!(
            active_mask(&x, &g, &lam, 1.0, 1.0).unwrap(),
            ActiveMask::none(3)
        );
        // boundary |z_i| = t mu is inactive
        let x2 = Manifold::sphere(2).point(vecf(&[1.0, 0.0])).unwrap();
        let m = active_mask(&x2, &vecf(&[0.0, -0.5]), &vecf(&[0.0]), 1.0, 0.5).unwrap();
        assert_eq!(m.as_slice(), &[true, false]);
    }

    #[test]
    fn smooth_case_closed_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for manifold in [
            Manifold::sphere(9),
            Manifold::stiefel(6, 3),
            Manifold::oblique(4, 2),
        ] {
            let x = manifold.random_point(&mut rng);
            let g = crate::manifold::gaussian_vector(manifold.ambient_dim(), &mut rng);
            let t = 0.7;
            let sol = solve_tangent_prox(&x, &g, t, 0.0, None).unwrap();
            let expected_v = x.proj_tangent(&g).unwrap() * -t;
            let expected_l = -x.normal_coords(&g).unwrap();
            assert!((&sol.v - expected_v).norm() < 1e-10);
            assert!((&sol.lambda - expected_l).norm() < 1e-10);
        }
    }

    #[test]
    fn kkt_and_support_invariants() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..20 {
            let manifold = Manifold::stiefel(10, 2);
            let x = manifold.random_point(&mut rng);
            let g = crate::manifold::gaussian_vector(20, &mut rng) * 3.0;
            let (t, mu) = (0.2, 1.5);
            let sol = solve_tangent_prox(&x, &g, t, mu, None).unwrap();
            let z = x.coords() - (&g + x.normal_combine(&sol.lambda).unwrap()) * t;
            let kkt = &sol.v + x.coords() - soft_threshold(&z, t * mu);
            assert!(kkt.norm() <= 1e-10);
            assert!(x.tangency_residual(&sol.v).unwrap() <= 1e-10 * (1.0 + sol.v.norm()));
            let y = x.coords() + &sol.v;
            for i in 0..y.len() {
                assert_eq!(sol.mask.is_active(i), y[i] != 0.0);
            }
        }
    }

    #[test]
    fn rejects_bad_arguments() {
        let x = Manifold::sphere(3).point(vecf(&[1.0, 0.0, 0.0])).unwrap();
        let g = vecf(&[0.0, 1.0, 0.0]);
        assert!(solve_tangent_prox(&x, &g, 0.0, 1.0, None).is_err());
        assert!(solve_tangent_prox(&x, &vecf(&[1.0]), 1.0, 1.0, None).is_err());
        let err = TangentProx {
            max_iter: 0,
            ..Default::default()
        }
        .solve(&x, &g, 1.0, 0.1, None)
        .unwrap_err();
        assert!(matches!(err, Error::MaxInnerIterations { .. }));
    }

    #[test]
    fn fingerprint_distinguishes_masks() {
        let a = ActiveMask::new(vec![true, false, true]);
        let b = ActiveMask::new(vec![true, true, false]);
        assert_ne!(a.fingerprint(), b.fingerprint());
        assert_eq!(a.fingerprint(), a.clone().fingerprint());
    }

    proptest! {
        #[test]
        fn soft_threshold_is_nonexpansive(
            z1 in proptest::collection::vec(-10.0f64..10.0, 8),
            z2 in proptest::collection::vec(-10.0f64..10.0, 8),
            tau in 0.0f64..5.0,
        ) {
            let (a, b) = (vecf(&z1), vecf(&z2));
            let d_out = (soft_threshold(&a, tau) - soft_threshold(&b, tau)).norm();
            prop_assert!(d_out <= (a - b).norm() + 1e-12);
        }
    }
}
