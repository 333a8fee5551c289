//! Receding-horizon driver around the batch optimizer.

use std::time::Instant;

use nalgebra::DVector;
use trajopt_core::basis::{build_basis, eval_trajectory, SampledAxis, SampledTrajectory};
use trajopt_core::batch::{BatchParams, BatchSolver, BatchState};
use trajopt_core::sampling::sample_initializations;

use crate::error::BenchResult;
use crate::metrics::{check_collision_free, eval_metrics, RunMetrics};
use crate::runner::{batch_problem, obstacle_tracks, RunRecord, SolverKind, DEGREE};
use crate::scenario::Scenario;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HorizonConfig {
    /// Length of each plan, seconds.
    pub plan_duration: f64,
    pub n_p: usize,
    /// Shortest plan, used close to the goal, seconds.
    pub min_duration: f64,
    /// Time executed per loop, seconds.
    pub execute_time: f64,
    pub max_steps: usize,
    /// Goal proximity that ends the run, meters.
    pub goal_radius: f64,
    /// `max_iter` is the per-loop iteration budget.
    pub batch: BatchParams,
}

impl Default for HorizonConfig {
    fn default() -> Self {
        Self {
            plan_duration: 4.0,
            n_p: 40,
            min_duration: 2.0,
            execute_time: 0.5,
            max_steps: 60,
            goal_radius: 0.5,
            batch: BatchParams {
                batch_size: 40,
                max_iter: 30,
                ..BatchParams::default()
            },
        }
    }
}

#[derive(Debug, Clone)]
pub struct HorizonRun {
    /// One record per executed loop; metrics cover the executed segment.
    pub steps: Vec<RunRecord>,
    /// Executed samples, stitched.
    pub executed: Vec<[f64; 3]>,
    pub reached_goal: bool,
    pub collided: bool,
}

impl HorizonRun {
    pub fn success(&self) -> bool {
        self.reached_goal && !self.collided
    }
}

/// Samples `range` of `traj` as a standalone trajectory.
fn slice(traj: &SampledTrajectory, range: std::ops::Range<usize>) -> SampledTrajectory {
    let cut = |a: &SampledAxis| SampledAxis {
        pos: a.pos.rows(range.start, range.len()).into_owned(),
        vel: a.vel.rows(range.start, range.len()).into_owned(),
        acc: a.acc.rows(range.start, range.len()).into_owned(),
    };
    SampledTrajectory {
        t: traj.t[range.clone()].to_vec(),
        x: cut(&traj.x),
        y: cut(&traj.y),
        z: cut(&traj.z),
        psi: traj.psi.as_ref().map(cut),
    }
}

fn at_rest(p: [f64; 3], t: f64) -> SampledTrajectory {
    let axis = |v: f64| SampledAxis {
        pos: DVector::from_element(1, v),
        vel: DVector::zeros(1),
        acc: DVector::zeros(1),
    };
    SampledTrajectory {
        t: vec![t],
        x: axis(p[0]),
        y: axis(p[1]),
        z: axis(p[2]),
        psi: None,
    }
}

/// Drives a planar single robot toward its goal. Every loop re-predicts the
/// obstacles from the current time, carries the previous multipliers over,
/// solves within the iteration budget and executes the first samples.
pub fn receding_horizon_run(sc: &Scenario, cfg: &HorizonConfig) -> BenchResult<HorizonRun> {
    sc.validate()?;
    let template = batch_problem(sc)?;
    let goal = sc.goals()[0];
    let mut state = {
        let s = sc.starts()[0];
        [[s[0], 0.0, 0.0], [s[1], 0.0, 0.0]]
    };
    let mut t_now = sc.horizon.t0;
    let mut run = HorizonRun {
        steps: Vec::new(),
        executed: vec![[state[0][0], state[1][0], 0.0]],
        reached_goal: false,
        collided: false,
    };
    if !check_collision_free(&at_rest(run.executed[0], t_now), sc, 0.0).collision_free {
        run.collided = true;
        return Ok(run);
    }
    let cruise = 0.5 * template.v_max;
    let mut warm: Option<BatchState> = None;
    // previous plan and the sample index of the current state in it
    let mut previous: Option<(SampledTrajectory, usize)> = None;
    for step in 0..cfg.max_steps {
        let (px, py) = (state[0][0], state[1][0]);
        let gap = (goal[0] - px).hypot(goal[1] - py);
        if gap <= cfg.goal_radius {
            run.reached_goal = true;
            break;
        }
        // near the goal the horizon shrinks so the plan cannot defer the stop
        let span = gap.min(cruise * cfg.plan_duration);
        let duration = (span / cruise + 1.0).clamp(cfg.min_duration.min(cfg.plan_duration), cfg.plan_duration);
        let sub = [px + span / gap * (goal[0] - px), py + span / gap * (goal[1] - py)];
        let dt = duration / (cfg.n_p - 1) as f64;
        let last = ((cfg.execute_time / dt).round() as usize).clamp(1, cfg.n_p - 1);

        let basis = build_basis(t_now, t_now + duration, cfg.n_p, DEGREE)?;
        let mut problem = template.clone();
        problem.obstacles = obstacle_tracks(sc, basis.grid().timestamps(), 0.0)?;
        // advance at cruise speed, then hold; spreading the approach over the
        // whole horizon lets every replan postpone it
        problem.desired = [0, 1].map(|ax| {
            let (a, b) = (state[ax][0], sub[ax]);
            DVector::from_iterator(cfg.n_p, (0..cfg.n_p).map(|k| a + (b - a) * (cruise * k as f64 * dt / span).min(1.0)))
        });
        problem.basis = basis.clone();
        for ax in 0..2 {
            problem.boundary[ax].start = state[ax];
            problem.boundary[ax].goal = [sub[ax], 0.0, 0.0];
        }
        let toward = (sub[1] - py).atan2(sub[0] - px);
        let heading = if state[0][1].hypot(state[1][1]) > 1e-6 {
            state[1][1].atan2(state[0][1])
        } else {
            toward
        };
        problem.heading_boundary = [heading, toward];

        let params = BatchParams {
            seed: cfg.batch.seed.wrapping_add(step as u64),
            ..cfg.batch
        };
        let clock = Instant::now();
        let mut solver = BatchSolver::new(problem, params.rho)?;
        let (mean, cov) = solver.default_distribution(params.init_spread);
        let samples = sample_initializations(&mean, &cov, params.batch_size, params.seed)?;
        let mut st = solver.init_state(&samples)?;
        if let Some(prev) = &warm {
            if prev.lambda_x.shape() == st.lambda_x.shape() {
                st.lambda_x.copy_from(&prev.lambda_x);
                st.lambda_y.copy_from(&prev.lambda_y);
            }
        }
        let ranked = solver.run(st, &params)?;
        let wall = clock.elapsed().as_secs_f64() * 1e3;

        let fresh = match ranked.best_member() {
            Some(m) => Some((eval_trajectory(&basis, &m.coeffs)?, m.residual_norm)),
            None => None,
        };
        // without a feasible member keep following the previous plan while it lasts
        let reuse = match (&fresh, &previous) {
            (None, Some((plan, at))) if at + last < plan.len() => {
                let seg = slice(plan, *at..at + last + 1);
                check_collision_free(&seg, sc, 0.0).collision_free.then_some((plan.clone(), *at))
            }
            _ => None,
        };
        let (plan, at, residual) = match (fresh, reuse) {
            (Some((plan, r)), _) => (plan, 0, r),
            (None, Some((plan, at))) => (plan, at, f64::NAN),
            (None, None) => {
                let m = ranked
                    .members
                    .iter()
                    .min_by(|a, b| a.residual_norm.total_cmp(&b.residual_norm))
                    .expect("non-empty batch");
                (eval_trajectory(&basis, &m.coeffs)?, 0, m.residual_norm)
            }
        };
        let end = at + last;
        let segment = slice(&plan, at..end + 1);

        let mut metrics: RunMetrics = eval_metrics(&segment, sc, &[]);
        metrics.iterations = ranked.iterations;
        metrics.residual_final = if residual.is_nan() { 0.0 } else { residual };
        metrics.wall_time_ms = wall;
        run.collided = !metrics.success;
        run.steps.push(RunRecord {
            scenario_id: sc.id(),
            solver: SolverKind::Batch,
            seed: params.seed,
            metrics,
            dump: None,
        });
        run.executed.extend((1..segment.len()).map(|k| segment.position(k)));
        if run.collided {
            break;
        }
        state = [
            [plan.x.pos[end], plan.x.vel[end], plan.x.acc[end]],
            [plan.y.pos[end], plan.y.vel[end], plan.y.acc[end]],
        ];
        t_now = plan.t[end];
        warm = Some(ranked.state);
        previous = Some((plan, end));
    }
    if !run.reached_goal && !run.collided {
        let p = run.executed[run.executed.len() - 1];
        run.reached_goal = (goal[0] - p[0]).hypot(goal[1] - p[1]) <= cfg.goal_radius;
    }
    Ok(run)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::runner::success_rate;
    use crate::scenario::{gen_scenario, GenParams, ObstacleSpec, ScenarioKind};

    #[test]
    fn empty_world_reaches_goal() {
        let mut sc = gen_scenario(ScenarioKind::BarnLike, &GenParams::default(), 0).unwrap();
        sc.obstacles.clear();
        let run = receding_horizon_run(&sc, &HorizonConfig::default()).unwrap();
        assert!(run.success(), "{} steps", run.steps.len());
        assert!(!run.steps.is_empty());
        let g = sc.goals()[0];
        let p = run.executed.last().unwrap();
        assert!((g[0] - p[0]).hypot(g[1] - p[1]) <= 0.5);
    }

    #[test]
    fn start_in_collision_fails_at_step_zero() {
        let mut sc = gen_scenario(ScenarioKind::BarnLike, &GenParams::default(), 0).unwrap();
        sc.obstacles = vec![ObstacleSpec::fixed([0.0, 0.0, 0.0], 1.0, 1.0, 2)];
        let run = receding_horizon_run(&sc, &HorizonConfig::default()).unwrap();
        assert!(!run.success());
        assert!(run.collided);
        assert!(run.steps.is_empty());
    }

    #[test]
    fn later_loops_start_where_the_previous_segment_ended() {
        let mut sc = gen_scenario(ScenarioKind::BarnLike, &GenParams::default(), 0).unwrap();
        sc.obstacles.clear();
        let cfg = HorizonConfig {
            max_steps: 3,
            ..HorizonConfig::default()
        };
        let run = receding_horizon_run(&sc, &cfg).unwrap();
        assert_eq!(run.steps.len(), 3);
        // far from the goal every loop plans the full horizon
        let dt = cfg.plan_duration / (cfg.n_p - 1) as f64;
        let per_loop = (cfg.execute_time / dt).round() as usize;
        assert_eq!(run.executed.len(), 1 + 3 * per_loop);
        // consecutive executed samples are one grid step apart in time, so no jumps
        for w in run.executed.windows(2) {
            assert!((w[1][0] - w[0][0]).hypot(w[1][1] - w[0][1]) <= sc.robot.v_max * dt * 1.5);
        }
    }

    #[test]
    fn dynamic_flow_success_rate() {
        let mut runs = Vec::new();
        for seed in 0..3 {
            let sc = gen_scenario(ScenarioKind::DynamicFlow, &GenParams::default(), seed).unwrap();
            let run = receding_horizon_run(&sc, &HorizonConfig::default()).unwrap();
            let mut r = run.steps.last().cloned().unwrap();
            r.metrics.success = run.success();
            runs.push(r);
        }
        let expected = runs.iter().filter(|r| r.metrics.success).count() as f64 / 3.0;
        assert_eq!(success_rate(&runs), expected);
    }
}
