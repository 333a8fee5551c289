use super::*;
use crate::basis::build_basis;
use crate::geometry::scaled_norm;
use alloc::vec;
use proptest::prelude::*;

const N_P: usize = 60;

fn basis() -> BasisSet {
    build_basis(0.0, 10.0, N_P, 10).unwrap()
}

fn blocked(planar: bool) -> PriestProblem {
    let obs = vec![ObstacleTrack::fixed([5.0, 0.0, 0.0], EllipsoidShape::sphere(2.0).unwrap(), N_P)];
    PriestProblem::new(basis(), [0.0, 0.0, 0.0], [10.0, 0.0, 0.0], obs, 3.0, 3.0, planar)
}

fn wide(planar: bool) -> PriestProblem {
    let obs = vec![ObstacleTrack::fixed([5.0, 8.0, 0.0], EllipsoidShape::new(1.0, 1.5).unwrap(), N_P)];
    let mut p = PriestProblem::new(basis(), [0.0, 0.0, 1.0], [10.0, 2.0, 1.0], obs, 10.0, 10.0, planar);
    p.s_min = [-5.0, -5.0, 0.0];
    p.s_max = [15.0, 15.0, 3.0];
    p
}

fn samples(p: &PriestProblem, spread: f64, n: usize, seed: u64) -> Vec<DVector<f64>> {
    let d = SamplingDistribution::around(p, spread, 0.5, -1.0).unwrap();
    crate::sampling::sample_initializations(&d.mean, &d.cov, n, seed).unwrap()
}

fn boundary_error(p: &PriestProblem, xi: &DVector<f64>) -> f64 {
    let n = p.basis.n_coeffs();
    let a = p.basis.boundary_matrix(p.pattern);
    (0..p.axes())
        .map(|ax| (&a * xi.rows(ax * n, n) - p.boundary[ax].rhs(p.pattern)).amax())
        .fold(0.0, f64::max)
}

fn max_collision(p: &PriestProblem, xi: &DVector<f64>) -> f64 {
    let t = p.trajectory(xi).unwrap();
    let mut worst = f64::NEG_INFINITY;
    for k in 0..t.len() {
        let q = t.position(k);
        for o in &p.obstacles {
            let c = o.centers[k];
            let dz = if p.planar { 0.0 } else { q[2] - c[2] };
            let s = scaled_norm([q[0] - c[0], q[1] - c[1], dz], o.shape);
            worst = worst.max(1.0 - s * s);
        }
    }
    worst
}

#[test]
fn feasible_sample_is_a_fixed_point() {
    for planar in [true, false] {
        let p = wide(planar);
        let xi = p.initial_mean().unwrap();
        let mut setup = ProjectionSetup::new(p, 1.0).unwrap();
        assert!(setup.residual_score(&xi).unwrap() < 1e-9);
        let out = setup.project(&[xi.clone()], 30).unwrap();
        assert!((&out[0].projected - &xi).amax() < 1e-9);
        assert!(out[0].residual < 1e-9);
    }
}

#[test]
fn without_inequalities_projection_is_equality_correction() {
    let mut p = blocked(false);
    p.obstacles.clear();
    p.v_max = f64::INFINITY;
    p.a_max = f64::INFINITY;
    let xs = samples(&p, 1.0, 4, 3);
    let mut setup = ProjectionSetup::new(p.clone(), 1.0).unwrap();
    let out = setup.project(&xs, 3).unwrap();
    let n = p.basis.n_coeffs();
    let a = p.basis.boundary_matrix(p.pattern);
    for (x, o) in xs.iter().zip(&out) {
        for ax in 0..3 {
            let xr = x.rows(ax * n, n).into_owned();
            // closed-form affine projection
            let aat = (&a * a.transpose()).try_inverse().unwrap();
            let want = &xr - a.transpose() * aat * (&a * &xr - p.boundary[ax].rhs(p.pattern));
            assert!((o.projected.rows(ax * n, n) - want).amax() < 1e-9);
        }
    }
    let eq = EqualityProjector::new(&p).unwrap().project(&xs).unwrap();
    for (e, o) in eq.iter().zip(&out) {
        assert!((e - &o.projected).amax() < 1e-9);
    }
}

#[test]
fn residual_trend_inside_obstacle() {
    let p = blocked(true);
    let xs = samples(&p, 0.05, 6, 1);
    let mut setup = ProjectionSetup::new(p.clone(), 1.0).unwrap();
    let (out, hist) = setup.project_traced(&xs, 50).unwrap();
    for i in 0..xs.len() {
        assert!(max_collision(&p, &xs[i]) > 0.5);
        let series: Vec<f64> = hist.iter().map(|h| h[i]).collect();
        let trend = crate::schedule::residual_trend(&series, 5, 0).unwrap();
        assert!(trend.non_increasing(), "sample {i}: {trend:?}");
        assert!(out[i].residual < series[0]);
    }
}

#[test]
fn boundary_holds_and_single_factorization() {
    for planar in [true, false] {
        let p = blocked(planar);
        let mut setup = ProjectionSetup::new(p.clone(), 1.0).unwrap();
        for seed in 0..3 {
            for o in setup.project(&samples(&p, 1.0, 8, seed), 10).unwrap() {
                assert!(boundary_error(&p, &o.projected) < 1e-8);
                assert!(o.residual >= 0.0);
            }
        }
        assert_eq!(setup.factorizations(), 1);
    }
}

#[test]
fn batch_projection_matches_sequential() {
    let p = wide(false);
    let xs = samples(&p, 2.0, 7, 9);
    let mut setup = ProjectionSetup::new(p, 1.0).unwrap();
    let batch = setup.project(&xs, 15).unwrap();
    for (x, b) in xs.iter().zip(&batch) {
        let one = setup.project(&[x.clone()], 15).unwrap();
        assert!((&one[0].projected - &b.projected).amax() <= 1e-10);
        assert!((one[0].residual - b.residual).abs() <= 1e-10);
    }
}

#[test]
fn z_bound_residual_matches_formula() {
    let mut p = wide(false);
    p.obstacles.clear();
    let n = p.basis.n_coeffs();
    let setup = ProjectionSetup::new(p.clone(), 1.0).unwrap();
    let mut xi = p.initial_mean().unwrap();
    xi[2 * n] = p.s_max[2] + 0.5;
    let r = setup.residual_score(&xi).unwrap();
    assert!((r - 0.5 * (N_P as f64).sqrt()).abs() < 1e-9);
    xi[2 * n] = p.s_max[2] + 1.0;
    assert!(setup.residual_score(&xi).unwrap() > r);
}

#[test]
fn validation() {
    let mut p = blocked(true);
    assert!(ProjectionSetup::new(p.clone(), 0.0).is_err());
    p.v_max = -1.0;
    assert!(ProjectionSetup::new(p, 1.0).is_err());
    let mut setup = ProjectionSetup::new(blocked(true), 1.0).unwrap();
    assert!(setup.project(&[DVector::zeros(3)], 5).is_err());
    assert!(setup.project(&samples(&blocked(true), 1.0, 1, 0), 0).is_err());
    let bad = PriestParams {
        n_elite: 90,
        ..PriestParams::default()
    };
    assert!(bad.validate().is_err());
    PriestParams::default().validate().unwrap();
}

#[test]
fn equal_costs_give_plain_mean_update() {
    let mean = DVector::from_vec(vec![1.0, -2.0]);
    let cov = DMatrix::identity(2, 2);
    let mut d = SamplingDistribution::new(mean.clone(), cov.clone(), 0.3, -1.0).unwrap();
    let elite = vec![DVector::from_vec(vec![0.0, 0.0]), DVector::from_vec(vec![2.0, 4.0])];
    d.update(&elite, &[5.0, 5.0]).unwrap();
    let want = &mean * 0.7 + DVector::from_vec(vec![1.0, 2.0]) * 0.3;
    assert!((&d.mean - &want).amax() < 1e-15);
    let dev0 = &elite[0] - &want;
    let dev1 = &elite[1] - &want;
    let want_cov = cov * 0.7 + (&dev0 * dev0.transpose() + &dev1 * dev1.transpose()) * 0.15;
    assert!((&d.cov - want_cov).amax() < 1e-14);
}

#[test]
fn lower_cost_gets_more_weight() {
    let d = SamplingDistribution::new(DVector::zeros(1), DMatrix::identity(1, 1), 1.0, DEFAULT_GAMMA).unwrap();
    let w = d.weights(&[1.0, 5.0, 20.0]);
    assert!(w[0] > w[1] && w[1] > w[2]);
    assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-15);
    assert!(SamplingDistribution::new(DVector::zeros(1), DMatrix::identity(1, 1), 0.0, -1.0).is_err());
    assert!(SamplingDistribution::new(DVector::zeros(1), DMatrix::identity(1, 1), 0.5, 0.0).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]
    #[test]
    fn update_is_shift_invariant(
        pts in proptest::collection::vec((-5.0..5.0f64, -5.0..5.0f64, 0.0..50.0f64), 2..8),
        shift in -1e3..1e3f64,
        gamma in -20.0..-0.5f64,
    ) {
        let elite: Vec<DVector<f64>> = pts.iter().map(|p| DVector::from_vec(vec![p.0, p.1])).collect();
        let costs: Vec<f64> = pts.iter().map(|p| p.2).collect();
        let shifted: Vec<f64> = costs.iter().map(|c| c + shift).collect();
        let base = SamplingDistribution::new(DVector::zeros(2), DMatrix::identity(2, 2), 0.6, gamma).unwrap();
        let (mut a, mut b) = (base.clone(), base);
        a.update(&elite, &costs).unwrap();
        b.update(&elite, &shifted).unwrap();
        prop_assert!((&a.mean - &b.mean).amax() < 1e-9);
        prop_assert!((&a.cov - &b.cov).amax() < 1e-9);
    }
}

fn quad_cost(target: f64) -> impl Fn(&SampledTrajectory) -> f64 {
    move |t: &SampledTrajectory| t.y.pos.iter().map(|y| (y - target) * (y - target)).sum::<f64>()
}

#[test]
fn priest_obstacle_free_matches_projection_optimum() {
    let mut p = blocked(true);
    p.obstacles.clear();
    let mut setup = ProjectionSetup::new(p.clone(), 1.0).unwrap();
    // reachable target: optimum value 0 at the initial mean
    let target = p.trajectory(&p.initial_mean().unwrap()).unwrap();
    let cost = |t: &SampledTrajectory| {
        let dx = t.x.pos.iter().zip(&target.x.pos).map(|(u, v)| (u - v) * (u - v));
        let dy = t.y.pos.iter().zip(&target.y.pos).map(|(u, v)| (u - v) * (u - v));
        dx.chain(dy).sum::<f64>()
    };
    let dist = SamplingDistribution::around(&p, 0.3, 0.5, -10.0).unwrap();
    let params = PriestParams {
        iterations: 40,
        n_inner: 5,
        ..PriestParams::default()
    };
    let r = priest_optimize(&mut setup, cost, dist, &params).unwrap();
    assert!(r.best.residual < 1e-9);
    let c1 = cost(&p.trajectory(&r.best.projected).unwrap());
    assert!((r.best.augmented_cost.unwrap() - c1).abs() < 1e-4);
    assert!(c1 < 1e-2 * r.history[0].best_cost, "{:?}", r.history);
    assert_eq!(r.history.len(), params.iterations);
    assert_eq!(r.factorizations, 1);
}

#[test]
fn priest_escapes_when_every_sample_collides() {
    let p = blocked(true);
    let dist = SamplingDistribution::around(&p, 0.1, DEFAULT_LEARNING_RATE, DEFAULT_GAMMA).unwrap();
    let params = PriestParams {
        iterations: 5,
        batch_size: 40,
        n_proj: 30,
        n_elite: 10,
        ..PriestParams::default()
    };
    let cost = |t: &SampledTrajectory| barn_cost(t, [0.0, 0.0], [10.0, 0.0]);
    let first = samples(&p, 0.1, 40, 0);
    assert!(first.iter().all(|x| max_collision(&p, x) > 0.0));
    let mut setup = ProjectionSetup::new(p.clone(), 1.0).unwrap();
    let r = priest_optimize(&mut setup, cost, dist.clone(), &params).unwrap();
    assert!(max_collision(&p, &r.best.projected) <= 0.0);
    assert!(boundary_error(&p, &r.best.projected) < 1e-8);
    let mut again = ProjectionSetup::new(p.clone(), 1.0).unwrap();
    let r2 = priest_optimize(&mut again, cost, dist.clone(), &params).unwrap();
    assert_eq!(r.best, r2.best);

    let cem = CemParams {
        iterations: 5,
        batch_size: 40,
        n_elite: 10,
        seed: 0,
    };
    let c = cem_optimize(&p, cost, dist.mean, dist.cov, &cem).unwrap();
    assert!(max_collision(&p, &c.best) > 0.0);
    assert!(c.best_penalty > 0.0);
}

#[test]
fn cem_all_elite_is_sample_mean() {
    let mut p = blocked(true);
    p.obstacles.clear();
    let dist = SamplingDistribution::around(&p, 0.5, 1.0, -1.0).unwrap();
    let params = CemParams {
        iterations: 1,
        batch_size: 12,
        n_elite: 12,
        seed: 4,
    };
    let r = cem_optimize(&p, quad_cost(1.0), dist.mean.clone(), dist.cov.clone(), &params).unwrap();
    // replay the draw
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let raw = draw(&dist.mean, &covariance_factor(&dist.cov).unwrap(), 12, &mut rng);
    let xs = EqualityProjector::new(&p).unwrap().project(&raw).unwrap();
    let mean = xs.iter().fold(DVector::zeros(p.dim()), |acc, x| acc + x) / 12.0;
    assert!((&r.mean - mean).amax() < 1e-12);
}

#[test]
fn cem_zero_covariance_is_stationary() {
    let mut p = blocked(true);
    p.obstacles.clear();
    let mean = p.initial_mean().unwrap();
    let cov = DMatrix::zeros(p.dim(), p.dim());
    let params = CemParams {
        iterations: 3,
        batch_size: 10,
        n_elite: 3,
        seed: 1,
    };
    let r = cem_optimize(&p, quad_cost(1.0), mean.clone(), cov, &params).unwrap();
    assert!((&r.mean - &mean).amax() < 1e-12);
    assert!(r.cov.amax() < 1e-20);
}

#[test]
fn cem_converges_on_convex_quadratic() {
    // optimum of the sampled quadratic under the boundary rows, via the QP
    let mut p = blocked(true);
    p.obstacles.clear();
    p.v_max = f64::INFINITY;
    p.a_max = f64::INFINITY;
    let n = p.basis.n_coeffs();
    let b = p.basis.p();
    let a = p.basis.boundary_matrix(p.pattern);
    let target = DVector::from_element(N_P, 1.0);
    let y_opt = dense_eq_qp(&(b.transpose() * b), &-(b.transpose() * &target), &a, &p.boundary[1].rhs(p.pattern));
    let mut opt = p.initial_mean().unwrap();
    opt.rows_mut(n, n).copy_from(&y_opt);

    let start = p.initial_mean().unwrap();
    let dist = SamplingDistribution::around(&p, 2.0, 1.0, -1.0).unwrap();
    let params = CemParams {
        iterations: 30,
        batch_size: 200,
        n_elite: 20,
        seed: 2,
    };
    let cost = quad_cost(1.0);
    let r = cem_optimize(&p, cost, start.clone(), dist.cov, &params).unwrap();
    let d0 = traj_distance(&p, &start, &opt);
    let d1 = traj_distance(&p, &r.mean, &opt);
    assert!(d1 <= 0.05 * d0, "{d1} vs {d0}");
}

fn dense_eq_qp(h: &DMatrix<f64>, q: &DVector<f64>, a: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let (n, m) = (h.nrows(), a.nrows());
    let mut k = DMatrix::zeros(n + m, n + m);
    k.view_mut((0, 0), (n, n)).copy_from(h);
    k.view_mut((0, n), (n, m)).copy_from(&a.transpose());
    k.view_mut((n, 0), (m, n)).copy_from(a);
    let mut rhs = DVector::zeros(n + m);
    rhs.rows_mut(0, n).copy_from(&-q);
    rhs.rows_mut(n, m).copy_from(b);
    k.full_piv_lu().solve(&rhs).unwrap().rows(0, n).into_owned()
}

fn traj_distance(p: &PriestProblem, a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    let (ta, tb) = (p.trajectory(a).unwrap(), p.trajectory(b).unwrap());
    ta.y.pos.iter().zip(&tb.y.pos).map(|(u, v)| (u - v).powi(2)).sum::<f64>().sqrt()
}

#[test]
fn flatness_examples() {
    let out = flatness_car(&[[1.0, 0.0], [0.0, 2.0], [0.0, 0.0]], &[[0.0, 0.0], [0.0, 0.0], [1.0, 1.0]]).unwrap();
    assert_eq!(out[0], (1.0, Some(0.0)));
    assert_eq!(out[1].0, 2.0);
    assert_eq!(out[2], (0.0, None));
    assert!(flatness_car(&[[1.0, 0.0]], &[]).is_err());
}

fn circle_traj(r: f64, w: f64, n: usize) -> SampledTrajectory {
    let b = build_basis(0.0, 1.0, n, 3).unwrap();
    let mut t = eval_trajectory(&b, &TrajectoryCoeffs::zeros(b.n_coeffs())).unwrap();
    for k in 0..n {
        let s = t.t[k] * 6.0;
        t.x.pos[k] = r * libm::cos(w * s);
        t.y.pos[k] = r * libm::sin(w * s);
        t.x.vel[k] = -r * w * libm::sin(w * s);
        t.y.vel[k] = r * w * libm::cos(w * s);
        t.x.acc[k] = -r * w * w * libm::cos(w * s);
        t.y.acc[k] = -r * w * w * libm::sin(w * s);
    }
    t
}

#[test]
fn circular_motion_curvature() {
    for r in [0.5, 2.0, 7.0] {
        let t = circle_traj(r, 1.3, 50);
        let vel: Vec<[f64; 2]> = (0..50).map(|k| [t.x.vel[k], t.y.vel[k]]).collect();
        let acc: Vec<[f64; 2]> = (0..50).map(|k| [t.x.acc[k], t.y.acc[k]]).collect();
        for (_, kappa) in flatness_car(&vel, &acc).unwrap() {
            assert!((kappa.unwrap() - 1.0 / r).abs() < 1e-6);
        }
    }
}

#[test]
fn barn_cost_examples() {
    let b = build_basis(0.0, 10.0, 40, 10).unwrap();
    let mut c = TrajectoryCoeffs::zeros(b.n_coeffs());
    c.x = b.line_coeffs(0.0, 10.0);
    let t = eval_trajectory(&b, &c).unwrap();
    assert!(barn_cost(&t, [0.0, 0.0], [10.0, 0.0]) < 1e-20);

    let h = 0.7;
    c.y = b.line_coeffs(h, h);
    let t = eval_trajectory(&b, &c).unwrap();
    let want: f64 = (0..40).map(|k| {
        let d = segment_distance([t.x.pos[k], t.y.pos[k]], [0.0, 0.0], [10.0, 0.0]);
        d * d
    }).sum();
    assert!((barn_cost(&t, [0.0, 0.0], [10.0, 0.0]) - 40.0 * h * h).abs() < 1e-9);
    assert!((want - 40.0 * h * h).abs() < 1e-9);
}
