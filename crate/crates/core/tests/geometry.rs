mod common;

use common::{gaussian, gaussian_matrix, rng, Geometry};
use manprox::newton::NewtonState;
use manprox::{ActiveMask, CompositeObjective, Manifold, ManifoldPoint, QuadraticObjective};
use nalgebra::{DMatrix, DVector};

const TRIALS: u64 = 100;

fn shapes() -> [(usize, usize); 3] {
    [(7, 1), (8, 3), (6, 6)]
}

fn random_pair(n: usize, r: usize, seed: u64) -> (Geometry, ManifoldPoint) {
    let geo = Geometry { n, r };
    let x = geo.random_point(&mut rng(seed));
    let m = if r == 1 {
        Manifold::sphere(n)
    } else {
        Manifold::stiefel(n, r)
    };
    (geo, m.point(x).unwrap())
}

#[test]
fn sphere_normal_basis_is_x() {
    for seed in 0..TRIALS {
        let (_, x) = random_pair(5, 1, seed);
        let b = x.normal_basis();
        assert_eq!(b.ncols(), 1);
        assert!((b.column(0) - x.coords()).norm() < 1e-15);
    }
}

#[test]
fn projector_matches_formula_and_annihilates_normals() {
    for (n, r) in shapes() {
        for seed in 0..TRIALS {
            let (geo, x) = random_pair(n, r, seed);
            let mut g = rng(seed + 1000);
            let z = gaussian(n * r, &mut g);
            let p = x.proj_tangent(&z).unwrap();
            assert!((&p - geo.proj(x.coords(), &z)).norm() < 1e-12 * z.norm());

            let s = gaussian_matrix(r, r, &mut g);
            let s = &s + s.transpose();
            let xs = x.as_matrix() * s;
            let xs = DVector::from_column_slice(xs.as_slice());
            assert!(x.proj_tangent(&xs).unwrap().norm() < 1e-12 * xs.norm());

            let b = x.normal_basis();
            let d = r * (r + 1) / 2;
            assert_eq!(b.ncols(), d);
            assert!((b.transpose() * &b - DMatrix::identity(d, d)).norm() < 1e-12);
            for col in b.column_iter() {
                assert!(geo.proj(x.coords(), &col.into_owned()).norm() < 1e-12);
            }
        }
    }
}

#[test]
fn retraction_is_feasible_and_matches_polar_formula() {
    for (n, r) in shapes() {
        for seed in 0..TRIALS {
            let (geo, x) = random_pair(n, r, seed);
            let mut g = rng(seed + 2000);
            let scale = 10f64.powf(-3.0 + 4.0 * (seed as f64 / TRIALS as f64));
            let v = geo.random_tangent(x.coords(), &mut g) * scale;
            let y = x.retract(&v).unwrap();
            assert!(x.manifold().feasibility_residual(y.coords()) <= 1e-12);

            // (X + V)(I + V^T V)^{-1/2} through an eigendecomposition
            let vm = DMatrix::from_column_slice(n, r, v.as_slice());
            let eig = (DMatrix::identity(r, r) + vm.transpose() * &vm).symmetric_eigen();
            let inv_sqrt = &eig.eigenvectors
                * DMatrix::from_diagonal(&eig.eigenvalues.map(|l| 1.0 / l.sqrt()))
                * eig.eigenvectors.transpose();
            let expected = (x.as_matrix() + vm) * inv_sqrt;
            let expected = DVector::from_column_slice(expected.as_slice());
            assert!((y.coords() - &expected).norm() < 1e-12);
            assert!((y.coords() - geo.retract(x.coords(), &v)).norm() < 1e-12);
        }
    }
}

#[test]
fn sphere_weingarten_closed_form() {
    for seed in 0..TRIALS {
        let (geo, x) = random_pair(6, 1, seed);
        let mut g = rng(seed + 3000);
        let w = geo.random_tangent(x.coords(), &mut g);
        let u = x.coords() * gaussian(1, &mut g)[0];
        let expected = &w * -x.coords().dot(&u);
        assert!((x.weingarten(&w, &u).unwrap() - expected).norm() < 1e-14);
    }
}

/// `(P_{R(hw)} - P_{R(-hw)}) u / 2h` with `h = 1e-5`.
fn fd_weingarten(
    geo: Geometry,
    x: &DVector<f64>,
    w: &DVector<f64>,
    u: &DVector<f64>,
) -> DVector<f64> {
    let h = 1e-5;
    let xp = geo.retract(x, &(w * h));
    let xm = geo.retract(x, &(w * -h));
    (geo.proj(&xp, u) - geo.proj(&xm, u)) / (2.0 * h)
}

#[test]
fn weingarten_matches_finite_differences() {
    for (n, r) in [(8, 1), (8, 3)] {
        for seed in 0..TRIALS {
            let (geo, x) = random_pair(n, r, seed);
            let mut g = rng(seed + 4000);
            let w = geo.random_tangent(x.coords(), &mut g);
            let z = gaussian(n * r, &mut g);
            let u = &z - geo.proj(x.coords(), &z);
            let got = x.weingarten(&w, &u).unwrap();
            let fd = fd_weingarten(geo, x.coords(), &w, &u);
            let err = (&got - &fd).norm() / fd.norm();
            assert!(err <= 1e-6, "({n},{r}) seed {seed}: rel err {err:e}");
        }
    }
}

#[test]
fn weingarten_rejects_non_normal_argument() {
    let (geo, x) = random_pair(8, 3, 7);
    let mut g = rng(7);
    let w = geo.random_tangent(x.coords(), &mut g);
    assert!(x.weingarten(&w, &w).is_err());
}

fn random_quadratic(m: Manifold, mu: f64, seed: u64) -> QuadraticObjective {
    let amb = m.ambient_dim();
    let mut g = rng(seed);
    let a = gaussian_matrix(amb, amb, &mut g);
    QuadraticObjective::new(m, &a + a.transpose(), gaussian(amb, &mut g), mu)
}

#[test]
fn normal_basis_derivative_identity() {
    // Lambda (DB[w] lambda) + Lambda W(w, B lambda) = 0 with DB by central
    // differences along the retraction.
    for (n, r) in [(8, 1), (8, 3)] {
        for seed in 0..TRIALS {
            let (geo, x) = random_pair(n, r, seed);
            let problem = random_quadratic(x.manifold(), 0.0, seed);
            let d = x.manifold().normal_dim();
            let mut g = rng(seed + 5000);
            let w = geo.random_tangent(x.coords(), &mut g);
            let lambda = gaussian(d, &mut g);

            let h = 1e-5;
            let xp = x.retract(&(&w * h)).unwrap();
            let xm = x.retract(&(&w * -h)).unwrap();
            let db = (xp.normal_basis() - xm.normal_basis()) / (2.0 * h);

            let state =
                NewtonState::from_parts(&problem, &x, ActiveMask::all(n * r), lambda.clone(), 1.0)
                    .unwrap();
            let bl = x.normal_combine(&lambda).unwrap();
            let lhs = state.apply_lambda(&(db * &lambda))
                + state.apply_lambda(&x.weingarten(&w, &bl).unwrap());
            let bound = 1e-6 * w.norm() * lambda.norm();
            assert!(
                lhs.norm() <= bound,
                "({n},{r}) seed {seed}: {:e}",
                lhs.norm()
            );
        }
    }
}

#[test]
fn riemannian_hessian_identity() {
    // Proj(hess f[eta]) + W(eta, Proj_perp grad f) against the projected
    // derivative of the Riemannian gradient along the retraction.
    for (n, r) in [(8, 1), (8, 3)] {
        for seed in 0..TRIALS {
            let (geo, x) = random_pair(n, r, seed);
            let problem = random_quadratic(x.manifold(), 0.0, seed + 1);
            let mut g = rng(seed + 6000);
            let eta = geo.random_tangent(x.coords(), &mut g);

            let egrad = problem.smooth_gradient(x.coords());
            let normal = &egrad - geo.proj(x.coords(), &egrad);
            let formula = geo.proj(
                x.coords(),
                &(problem.hess_vec(x.coords(), &eta) + x.weingarten(&eta, &normal).unwrap()),
            );

            let rgrad = |y: &DVector<f64>| geo.proj(y, &problem.smooth_gradient(y));
            let h = 1e-5;
            let yp = geo.retract(x.coords(), &(&eta * h));
            let ym = geo.retract(x.coords(), &(&eta * -h));
            let fd = geo.proj(x.coords(), &((rgrad(&yp) - rgrad(&ym)) / (2.0 * h)));
            let err = (&formula - &fd).norm() / fd.norm();
            assert!(err <= 1e-5, "({n},{r}) seed {seed}: rel err {err:e}");
        }
    }
}
