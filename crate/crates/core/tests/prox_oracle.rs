mod common;

use common::{admm_composite, gaussian, prox_oracle, rng, soft, Geometry};
use manprox::naive::solve_naive_subproblem;
use manprox::problems::{gen_handcrafted, SparsePca};
use manprox::{
    soft_threshold, solve_tangent_prox, CompositeObjective, Manifold, QuadraticObjective,
};
use nalgebra::{DMatrix, DVector};
use rand::Rng;

#[test]
fn sphere_subproblems_match_oracle() {
    for seed in 0..50u64 {
        let n = 4 + (seed % 5) as usize;
        let geo = Geometry { n, r: 1 };
        let mut g = rng(seed);
        let x = geo.random_point(&mut g);
        let egrad = gaussian(n, &mut g) * 2.0;
        let t = g.random_range(0.05..2.0);
        let mu = g.random_range(0.05..1.5);
        let point = Manifold::sphere(n).point(x.clone()).unwrap();
        let sol = solve_tangent_prox(&point, &egrad, t, mu, None).unwrap();
        let oracle = prox_oracle(geo, &x, &egrad, t, mu);
        let err = (&sol.v - &oracle).norm();
        assert!(
            err <= 1e-8,
            "seed {seed} (n = {n}): |v - v_oracle| = {err:e}"
        );
    }
}

#[test]
fn stiefel_subproblems_match_oracle() {
    for seed in 0..20u64 {
        let geo = Geometry { n: 6, r: 2 };
        let mut g = rng(100 + seed);
        let x = geo.random_point(&mut g);
        let egrad = gaussian(12, &mut g);
        let (t, mu) = (0.7, 0.4);
        let point = Manifold::stiefel(6, 2).point(x.clone()).unwrap();
        let sol = solve_tangent_prox(&point, &egrad, t, mu, None).unwrap();
        let oracle = prox_oracle(geo, &x, &egrad, t, mu);
        assert!((&sol.v - &oracle).norm() <= 1e-8, "seed {seed}");
    }
}

#[test]
fn smooth_case_closed_form() {
    for seed in 0..20u64 {
        let geo = Geometry { n: 7, r: 3 };
        let mut g = rng(200 + seed);
        let x = geo.random_point(&mut g);
        let egrad = gaussian(21, &mut g);
        let point = Manifold::stiefel(7, 3).point(x.clone()).unwrap();
        let sol = solve_tangent_prox(&point, &egrad, 0.8, 0.0, None).unwrap();
        let v = -geo.proj(&x, &egrad) * 0.8;
        assert!((&sol.v - &v).norm() <= 1e-10);
        let lambda = -point.normal_basis().transpose() * &egrad;
        assert!((&sol.lambda - &lambda).norm() <= 1e-10);
    }
}

#[test]
fn mask_is_support_of_x_plus_v() {
    for seed in 0..50u64 {
        let geo = Geometry { n: 10, r: 2 };
        let mut g = rng(300 + seed);
        let x = geo.random_point(&mut g);
        let egrad = gaussian(20, &mut g);
        let point = Manifold::stiefel(10, 2).point(x.clone()).unwrap();
        let sol = solve_tangent_prox(&point, &egrad, 0.5, 0.6, None).unwrap();
        let xv = &x + &sol.v;
        for i in 0..20 {
            assert_eq!(sol.mask.is_active(i), xv[i] != 0.0, "seed {seed}, i {i}");
        }
        assert!(point.tangency_residual(&sol.v).unwrap() <= 1e-10);
    }
}

#[test]
fn stationary_point_gives_zero_direction() {
    // x = e1 on the sphere is stationary for f(x) = -x^T diag(3, 1, 1, 1) x
    // with a small mu.
    let c = DMatrix::from_diagonal(&DVector::from_column_slice(&[-6.0, -2.0, -2.0, -2.0]));
    let problem = QuadraticObjective::new(Manifold::sphere(4), c, DVector::zeros(4), 0.1);
    let x = Manifold::sphere(4)
        .point(DVector::from_column_slice(&[1.0, 0.0, 0.0, 0.0]))
        .unwrap();
    let sol = solve_tangent_prox(&x, &problem.smooth_gradient(x.coords()), 0.3, 0.1, None).unwrap();
    assert!(sol.v_norm() <= 1e-14);
}

#[test]
fn soft_threshold_formula_and_nonexpansiveness() {
    let mut g = rng(400);
    for _ in 0..10_000 {
        let len = g.random_range(1..12);
        let scale = 10f64.powf(g.random_range(-3.0..3.0));
        let a = gaussian(len, &mut g) * scale;
        let b = gaussian(len, &mut g) * scale;
        let tau = g.random_range(0.0..2.0) * scale;
        let sa = soft_threshold(&a, tau);
        assert_eq!(sa, soft(&a, tau));
        let sb = soft_threshold(&b, tau);
        assert!((&sa - &sb).norm() <= (&a - &b).norm() * (1.0 + 1e-15));
        for i in 0..len {
            let expected = if a[i] > tau {
                a[i] - tau
            } else if a[i] < -tau {
                a[i] + tau
            } else {
                0.0
            };
            assert_eq!(sa[i], expected);
        }
    }
}

#[test]
fn naive_subproblem_matches_oracle() {
    for seed in 0..20u64 {
        let (a, x0) = gen_handcrafted(seed);
        let problem = SparsePca::new(a.clone(), 1.0, 1).unwrap();
        let mut g = rng(500 + seed);
        // points near e1, where the Riemannian Hessian is positive definite
        let geo = Geometry { n: 6, r: 1 };
        let x = geo.retract(
            x0.coords(),
            &(geo.random_tangent(x0.coords(), &mut g) * 0.05),
        );
        let point = Manifold::sphere(6).point(x.clone()).unwrap();
        let sigma = problem.default_step();
        let sol = match solve_naive_subproblem(&problem, &point, sigma) {
            Ok(s) => s,
            Err(e) => panic!("seed {seed}: {e}"),
        };

        let c = a.transpose() * &a * -2.0;
        let egrad = &c * &x;
        let q = geo.tangent_basis(&x);
        // ambient extension of the Riemannian Hessian, exact on the tangent space
        let h =
            &q * common::sphere_hessian_in_basis(&c, &DVector::zeros(6), &x, &q) * q.transpose();
        let oracle = admm_composite(&x, &egrad, &h, &q, problem.mu());
        let err = (&sol.v - &oracle).norm();
        assert!(err <= 1e-8, "seed {seed}: {err:e}");
    }
}

#[test]
fn naive_rejects_nonconvex_model() {
    // far from e1 the tangent Hessian of -||Ax||^2 is indefinite
    let (a, _) = gen_handcrafted(0);
    let problem = SparsePca::new(a, 1.0, 1).unwrap();
    let x = Manifold::sphere(6)
        .point(DVector::from_column_slice(&[0.0, 0.0, 1.0, 0.0, 0.0, 0.0]))
        .unwrap();
    assert!(matches!(
        solve_naive_subproblem(&problem, &x, 0.1),
        Err(manprox::Error::NonconvexSubproblem { .. })
    ));
}
