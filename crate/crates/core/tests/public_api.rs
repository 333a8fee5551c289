use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use trajopt_core::basis::{build_basis, AxisBoundary, BoundaryPattern};
use trajopt_core::geometry::{angles3d, polar_point, scaled_norm, EllipsoidShape};
use trajopt_core::qp::{factorize, BatchRhs};
use trajopt_core::schedule::residual_trend;

#[test]
fn minimum_acceleration_hits_rest_to_rest_boundary() {
    let basis = build_basis(0.0, 5.0, 50, 10).unwrap();
    let q = basis.pddot().transpose() * basis.pddot() + DMatrix::identity(basis.n_coeffs(), basis.n_coeffs()) * 1e-9;
    let a = basis.boundary_matrix(BoundaryPattern::FULL);
    let b = AxisBoundary::rest_to_rest(-1.0, 3.0).rhs(BoundaryPattern::FULL);
    let kkt = factorize(&q, &a).unwrap();
    let (x, nu) = kkt.solve(&DVector::zeros(basis.n_coeffs()), &b).unwrap();
    let axis = basis.eval_axis(&x).unwrap();
    let last = axis.pos.len() - 1;
    assert!((axis.pos[0] + 1.0).abs() < 1e-9);
    assert!((axis.pos[last] - 3.0).abs() < 1e-9);
    assert!(axis.vel[0].abs() < 1e-9 && axis.vel[last].abs() < 1e-9);
    // stationarity of the Lagrangian
    let grad = &q * &x + a.transpose() * &nu;
    assert!(grad.amax() < 1e-6, "{}", grad.amax());
}

#[test]
fn batch_columns_match_single_solves() {
    let basis = build_basis(0.0, 2.0, 20, 6).unwrap();
    let n = basis.n_coeffs();
    let q = basis.pdot().transpose() * basis.pdot() + DMatrix::identity(n, n);
    let a = basis.boundary_matrix(BoundaryPattern::FULL);
    let kkt = factorize(&q, &a).unwrap();
    let qs: Vec<_> = (0..8).map(|i| DVector::from_fn(n, |r, _| ((r + i) as f64).sin())).collect();
    let bs: Vec<_> = (0..8)
        .map(|i| AxisBoundary::rest_to_rest(i as f64, -(i as f64)).rhs(BoundaryPattern::FULL))
        .collect();
    let sol = kkt.solve_batch(&BatchRhs::from_columns(&qs, &bs).unwrap()).unwrap();
    for i in 0..8 {
        let (x, _) = kkt.solve(&qs[i], &bs[i]).unwrap();
        assert!((sol.member(i).0 - x).amax() <= 1e-12);
    }
}

#[test]
fn geometric_decay_trends_down() {
    let hist: Vec<f64> = (0..60).map(|k| 0.9f64.powi(k)).collect();
    let trend = residual_trend(&hist, 5, 10).unwrap();
    assert!(trend.non_increasing());
    assert!(trend.last < trend.first);
    let rising: Vec<f64> = hist.iter().rev().copied().collect();
    assert!(!residual_trend(&rising, 5, 10).unwrap().non_increasing());
}

proptest! {
    #[test]
    fn polar_point_recovers_its_angles(
        d in 1.0..5.0f64,
        alpha in -3.0..3.0f64,
        beta in 0.1..3.0f64,
        a in 0.2..2.0f64,
        b in 0.2..2.0f64,
    ) {
        let shape = EllipsoidShape::new(a, b).unwrap();
        let p = polar_point(d, alpha, beta, shape);
        prop_assert!((scaled_norm(p, shape) - d).abs() < 1e-9);
        let (al, be) = angles3d(p, shape);
        prop_assert!((al - alpha).abs() < 1e-9);
        prop_assert!((be - beta).abs() < 1e-9);
    }
}
