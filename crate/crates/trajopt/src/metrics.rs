//! Trajectory metrics and direct constraint checks.

use serde::{Deserialize, Serialize};
use trajopt_core::basis::SampledTrajectory;

use crate::scenario::{ObstacleSpec, RobotShape, Scenario};

/// Slack allowed when a trajectory grazes an obstacle boundary.
pub const TANGENCY_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RunMetrics {
    pub smoothness: f64,
    pub tracking: f64,
    /// Meters.
    pub arc_length: f64,
    pub success: bool,
    pub iterations: usize,
    pub wall_time_ms: f64,
    pub residual_final: f64,
    /// Meters to the nearest obstacle or agent surface; zero on contact.
    pub min_clearance: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CollisionReport {
    pub collision_free: bool,
    /// Largest `1 - s^2` over samples, obstacles and footprint circles, with `s`
    /// the scaled distance to the inflated obstacle.
    pub worst_violation: f64,
}

/// Obstacle centers at each time, extrapolated at constant velocity from `t0`.
pub fn predict_obstacles(obstacles: &[ObstacleSpec], times: &[f64], t0: f64) -> Vec<Vec<[f64; 3]>> {
    obstacles
        .iter()
        .map(|o| {
            let (c, v) = (o.center3(), o.velocity3());
            times
                .iter()
                .map(|&t| {
                    let dt = t - t0;
                    [c[0] + v[0] * dt, c[1] + v[1] * dt, c[2] + v[2] * dt]
                })
                .collect()
        })
        .collect()
}

pub fn arc_length(traj: &SampledTrajectory) -> f64 {
    (1..traj.len())
        .map(|k| dist(traj.position(k), traj.position(k - 1)))
        .sum()
}

fn dist(p: [f64; 3], q: [f64; 3]) -> f64 {
    let (dx, dy, dz) = (p[0] - q[0], p[1] - q[1], p[2] - q[2]);
    (dx * dx + dy * dy + dz * dz).sqrt()
}

/// Robot reference points at sample `k`: footprint circles placed along the
/// heading for circle footprints, the center otherwise.
fn body_points(traj: &SampledTrajectory, scenario: &Scenario, k: usize, last_heading: &mut f64) -> Vec<[f64; 3]> {
    let p = traj.position(k);
    match scenario.robot.shape {
        RobotShape::Circles { .. } => {
            let heading = match &traj.psi {
                Some(psi) => psi.pos[k],
                None => {
                    let (vx, vy) = (traj.x.vel[k], traj.y.vel[k]);
                    if vx.hypot(vy) > 1e-9 {
                        vy.atan2(vx)
                    } else {
                        *last_heading
                    }
                }
            };
            *last_heading = heading;
            let (c, s) = (heading.cos(), heading.sin());
            scenario
                .robot
                .footprint_offsets
                .iter()
                .map(|r| [p[0] + r * c, p[1] + r * s, p[2]])
                .collect()
        }
        _ => vec![p],
    }
}

/// Semi-axes of obstacle `o` grown by `grow`, as (x, y, z).
fn grown_axes(o: &ObstacleSpec, grow: f64, planar: bool) -> [f64; 3] {
    if planar {
        [o.a + grow, o.b + grow, f64::INFINITY]
    } else {
        [o.a + grow, o.a + grow, o.b + grow]
    }
}

fn scaled(delta: [f64; 3], ax: [f64; 3]) -> f64 {
    let mut s = 0.0;
    for i in 0..3 {
        if ax[i].is_finite() {
            s += (delta[i] / ax[i]).powi(2);
        }
    }
    s.sqrt()
}

fn planar_delta(p: [f64; 3], c: [f64; 3], planar: bool) -> [f64; 3] {
    [p[0] - c[0], p[1] - c[1], if planar { 0.0 } else { p[2] - c[2] }]
}

/// Direct evaluation of the quadratic separation `s^2 >= 1` against every
/// obstacle, with semi-axes grown by the robot radius plus `margin`.
pub fn check_collision_free(traj: &SampledTrajectory, scenario: &Scenario, margin: f64) -> CollisionReport {
    let planar = scenario.planar();
    let centers = predict_obstacles(&scenario.obstacles, &traj.t, scenario.horizon.t0);
    let grow = scenario.robot.shape.radius() + margin;
    let mut worst = f64::NEG_INFINITY;
    let mut heading = 0.0;
    for k in 0..traj.len() {
        for b in body_points(traj, scenario, k, &mut heading) {
            for (o, track) in scenario.obstacles.iter().zip(&centers) {
                let s = scaled(planar_delta(b, track[k], planar), grown_axes(o, grow, planar));
                worst = worst.max(1.0 - s * s);
            }
        }
    }
    CollisionReport {
        collision_free: worst <= TANGENCY_TOL,
        worst_violation: if worst.is_finite() { worst } else { 0.0 },
    }
}

/// Distance along the line of sight from the footprint to the nearest
/// obstacle surface; infinite without obstacles.
pub fn min_obstacle_clearance(traj: &SampledTrajectory, scenario: &Scenario) -> f64 {
    let planar = scenario.planar();
    let centers = predict_obstacles(&scenario.obstacles, &traj.t, scenario.horizon.t0);
    let grow = scenario.robot.shape.radius();
    let mut best = f64::INFINITY;
    let mut heading = 0.0;
    for k in 0..traj.len() {
        for b in body_points(traj, scenario, k, &mut heading) {
            for (o, track) in scenario.obstacles.iter().zip(&centers) {
                let delta = planar_delta(b, track[k], planar);
                let s = scaled(delta, grown_axes(o, grow, planar));
                let len = dist(delta, [0.0; 3]);
                let gap = if s > 0.0 { len * (1.0 - 1.0 / s) } else { f64::NEG_INFINITY };
                best = best.min(gap);
            }
        }
    }
    best.max(0.0)
}

/// Straight line from `start` to `goal` on the trajectory's time grid.
pub fn straight_line(traj: &SampledTrajectory, start: [f64; 3], goal: [f64; 3]) -> Vec<[f64; 3]> {
    let (t0, tf) = (traj.t[0], traj.t[traj.len() - 1]);
    traj.t
        .iter()
        .map(|&t| {
            let s = (t - t0) / (tf - t0);
            [0, 1, 2].map(|i| start[i] + s * (goal[i] - start[i]))
        })
        .collect()
}

/// Geometric metrics of one trajectory; solver fields are left at zero.
pub fn eval_metrics(traj: &SampledTrajectory, scenario: &Scenario, desired: &[[f64; 3]]) -> RunMetrics {
    let mut m = RunMetrics::default();
    for k in 0..traj.len() {
        let a = traj.acceleration(k);
        m.smoothness += a[0] * a[0] + a[1] * a[1] + a[2] * a[2];
        if let Some(d) = desired.get(k) {
            let p = traj.position(k);
            let e = dist(p, *d);
            m.tracking += e * e;
        }
    }
    m.arc_length = arc_length(traj);
    m.min_clearance = min_obstacle_clearance(traj, scenario);
    m.success = check_collision_free(traj, scenario, 0.0).collision_free;
    m
}

/// Summed metrics of a team; clearance also covers agent pairs.
pub fn eval_team_metrics(trajs: &[SampledTrajectory], scenario: &Scenario) -> RunMetrics {
    let mut total = RunMetrics {
        success: true,
        min_clearance: f64::INFINITY,
        ..RunMetrics::default()
    };
    for ((t, s), g) in trajs.iter().zip(scenario.starts()).zip(scenario.goals()) {
        let m = eval_metrics(t, scenario, &straight_line(t, s, g));
        total.smoothness += m.smoothness;
        total.tracking += m.tracking;
        total.arc_length += m.arc_length;
        total.success &= m.success;
        total.min_clearance = total.min_clearance.min(m.min_clearance);
    }
    let r = scenario.robot.shape.radius();
    for i in 0..trajs.len() {
        for j in i + 1..trajs.len() {
            for k in 0..trajs[i].len() {
                let gap = dist(trajs[i].position(k), trajs[j].position(k)) - 2.0 * r;
                total.success &= gap >= -TANGENCY_TOL;
                total.min_clearance = total.min_clearance.min(gap.max(0.0));
            }
        }
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{gen_scenario, GenParams, ScenarioKind};
    use nalgebra::DVector;
    use trajopt_core::basis::SampledAxis;

    fn from_fn(n: usize, tf: f64, f: impl Fn(f64) -> ([f64; 3], [f64; 3], [f64; 3])) -> SampledTrajectory {
        let t: Vec<f64> = (0..n).map(|k| tf * k as f64 / (n - 1) as f64).collect();
        let vals: Vec<_> = t.iter().map(|&s| f(s)).collect();
        let axis = |i: usize| SampledAxis {
            pos: DVector::from_iterator(n, vals.iter().map(|v| v.0[i])),
            vel: DVector::from_iterator(n, vals.iter().map(|v| v.1[i])),
            acc: DVector::from_iterator(n, vals.iter().map(|v| v.2[i])),
        };
        SampledTrajectory {
            t,
            x: axis(0),
            y: axis(1),
            z: axis(2),
            psi: None,
        }
    }

    fn empty_world() -> Scenario {
        let mut sc = gen_scenario(ScenarioKind::BarnLike, &GenParams::default(), 0).unwrap();
        sc.obstacles.clear();
        sc
    }

    #[test]
    fn stationary_trajectory() {
        let t = from_fn(20, 1.0, |_| ([1.0, 2.0, 0.0], [0.0; 3], [0.0; 3]));
        let m = eval_metrics(&t, &empty_world(), &[]);
        assert_eq!(m.smoothness, 0.0);
        assert_eq!(m.arc_length, 0.0);
        assert!(m.success);
    }

    #[test]
    fn straight_constant_velocity() {
        let t = from_fn(50, 5.0, |s| ([2.0 * s, -s, 0.0], [2.0, -1.0, 0.0], [0.0; 3]));
        let sc = empty_world();
        let line = straight_line(&t, [0.0; 3], [10.0, -5.0, 0.0]);
        let m = eval_metrics(&t, &sc, &line);
        assert_eq!(m.smoothness, 0.0);
        assert!(m.tracking < 1e-20);
        assert!((m.arc_length - 125f64.sqrt()).abs() < 1e-9);
    }

    #[test]
    fn unit_circle_arc_length() {
        let n = 2000;
        let tau = std::f64::consts::TAU;
        let t = from_fn(n, tau, |s| ([s.cos(), s.sin(), 0.0], [-s.sin(), s.cos(), 0.0], [-s.cos(), -s.sin(), 0.0]));
        let m = eval_metrics(&t, &empty_world(), &[]);
        assert!((m.arc_length - tau).abs() / tau < 0.01);
        assert!((m.smoothness - n as f64).abs() < 1e-9);
    }

    fn one_obstacle(r: f64) -> Scenario {
        let mut sc = empty_world();
        sc.robot.shape = RobotShape::Point;
        sc.obstacles.push(ObstacleSpec::fixed([5.0, 0.0, 0.0], r, r, 2));
        sc
    }

    #[test]
    fn through_the_center_collides() {
        let sc = one_obstacle(1.0);
        let t = from_fn(101, 10.0, |s| ([s, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0; 3]));
        let rep = check_collision_free(&t, &sc, 0.0);
        assert!(!rep.collision_free);
        assert!((rep.worst_violation - 1.0).abs() < 1e-12);
        assert_eq!(min_obstacle_clearance(&t, &sc), 0.0);
    }

    #[test]
    fn no_obstacles_is_collision_free() {
        let t = from_fn(10, 1.0, |s| ([s, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0; 3]));
        let rep = check_collision_free(&t, &empty_world(), 0.5);
        assert!(rep.collision_free);
        assert!(min_obstacle_clearance(&t, &empty_world()).is_infinite());
    }

    #[test]
    fn tangent_line_passes_at_zero_margin() {
        // y = r touches the circle at x = 5, which is a sample
        let sc = one_obstacle(1.3);
        let t = from_fn(101, 10.0, |s| ([s, 1.3, 0.0], [1.0, 0.0, 0.0], [0.0; 3]));
        let rep = check_collision_free(&t, &sc, 0.0);
        assert!(rep.collision_free);
        assert!(rep.worst_violation.abs() < 1e-9);
        assert!(!check_collision_free(&t, &sc, 0.01).collision_free);
        assert!(min_obstacle_clearance(&t, &sc) < 1e-9);
    }

    #[test]
    fn footprint_circles_follow_heading() {
        let mut sc = one_obstacle(0.5);
        sc.robot.shape = RobotShape::Circles { radius: 0.1 };
        sc.robot.footprint_offsets = vec![-1.0, 1.0];
        // center passes 0.9 above the obstacle; moving along x keeps the circles clear
        let t = from_fn(101, 10.0, |s| ([s, 0.9, 0.0], [1.0, 0.0, 0.0], [0.0; 3]));
        assert!(check_collision_free(&t, &sc, 0.0).collision_free);
        let mut turned = t.clone();
        turned.psi = Some(SampledAxis {
            pos: DVector::from_element(101, -std::f64::consts::FRAC_PI_2),
            vel: DVector::zeros(101),
            acc: DVector::zeros(101),
        });
        assert!(!check_collision_free(&turned, &sc, 0.0).collision_free);
    }

    #[test]
    fn prediction_is_constant_velocity() {
        let mut o = ObstacleSpec::fixed([1.0, 2.0, 3.0], 1.0, 1.0, 3);
        assert_eq!(predict_obstacles(&[o.clone()], &[0.0, 5.0], 0.0)[0], vec![[1.0, 2.0, 3.0]; 2]);
        o.velocity = vec![1.0, 0.0, 0.0];
        assert_eq!(predict_obstacles(&[o.clone()], &[2.0], 0.0)[0][0], [3.0, 2.0, 3.0]);
        // hand kinematics with a shifted clock
        o.velocity = vec![0.5, -0.25, 2.0];
        let p = predict_obstacles(&[o], &[3.0, 7.0], 1.0);
        assert_eq!(p[0][0], [2.0, 1.5, 7.0]);
        assert_eq!(p[0][1], [4.0, 0.5, 15.0]);
    }

    #[test]
    fn team_clearance_counts_pairs() {
        let mut sc = gen_scenario(ScenarioKind::SquareAntipodal, &GenParams::default(), 0).unwrap();
        sc.robot.shape = RobotShape::Spheroid { a: 0.4, b: 0.4 };
        let a = from_fn(10, 1.0, |_| ([0.0, 0.0, 1.0], [0.0; 3], [0.0; 3]));
        let b = from_fn(10, 1.0, |_| ([1.0, 0.0, 1.0], [0.0; 3], [0.0; 3]));
        let m = eval_team_metrics(&[a.clone(), b], &sc);
        assert!((m.min_clearance - 0.2).abs() < 1e-12);
        assert!(m.success);
        let c = from_fn(10, 1.0, |_| ([0.5, 0.0, 1.0], [0.0; 3], [0.0; 3]));
        assert!(!eval_team_metrics(&[a, c], &sc).success);
    }
}
