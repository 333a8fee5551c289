//! Builds solver problems from a [`Scenario`] and runs them.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use trajopt_core::basis::{build_basis, BasisSet, SampledTrajectory};
use trajopt_core::batch::{solve_batch_opt, BatchParams, BatchProblem, FootprintSpec};
use trajopt_core::geometry::EllipsoidShape;
use trajopt_core::multiagent::{solve_joint, JointParams, MultiAgentProblem, StaticSphere};
use trajopt_core::priest::{
    barn_cost, cem_optimize, priest_optimize, CemParams, PriestParams, PriestProblem, ProjectionSetup,
    SamplingDistribution, DEFAULT_GAMMA, DEFAULT_LEARNING_RATE,
};
use trajopt_core::single::{ObstacleTrack, SingleParams, SingleProblem, SingleSolver};

use crate::error::{BenchError, BenchResult};
use crate::metrics::{eval_metrics, eval_team_metrics, predict_obstacles, straight_line, RunMetrics};
use crate::scenario::{RobotShape, Scenario};

/// Polynomial degree of every basis built here.
pub const DEGREE: usize = 10;
/// Std of the higher-order coefficients in the sampling solvers, meters.
pub const SAMPLING_SPREAD: f64 = 0.3;
/// Planning margin added to obstacles in the projection sampler, meters.
pub const PRIEST_MARGIN: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SolverKind {
    Single,
    Batch,
    Priest,
    Cem,
    Multiagent,
}

impl SolverKind {
    pub const ALL: [SolverKind; 5] = [Self::Single, Self::Batch, Self::Priest, Self::Cem, Self::Multiagent];

    pub fn name(&self) -> &'static str {
        match self {
            Self::Single => "single",
            Self::Batch => "batch",
            Self::Priest => "priest",
            Self::Cem => "cem",
            Self::Multiagent => "multiagent",
        }
    }
}

impl fmt::Display for SolverKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SolverKind {
    type Err = BenchError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| BenchError::Scenario(format!("unknown solver `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunConfig {
    pub solver: SolverKind,
    pub seed: u64,
    /// Overrides the solver's iteration count.
    pub iters: Option<usize>,
}

impl RunConfig {
    pub fn new(solver: SolverKind, seed: u64) -> Self {
        Self { solver, seed, iters: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub scenario_id: String,
    pub solver: SolverKind,
    pub seed: u64,
    pub metrics: RunMetrics,
    /// File name of the trajectory dump, relative to the results directory.
    pub dump: Option<String>,
}

impl RunRecord {
    pub fn dump_name(scenario_id: &str, solver: SolverKind, seed: u64) -> String {
        format!("{scenario_id}_{solver}_{seed}.csv")
    }
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub record: RunRecord,
    /// One trajectory per agent.
    pub trajectories: Vec<SampledTrajectory>,
}

pub fn scenario_basis(sc: &Scenario) -> BenchResult<BasisSet> {
    Ok(build_basis(sc.horizon.t0, sc.horizon.tf, sc.horizon.n_p, DEGREE)?)
}

/// Obstacle tracks on `times`, semi-axes grown by `grow`.
pub fn obstacle_tracks(sc: &Scenario, times: &[f64], grow: f64) -> BenchResult<Vec<ObstacleTrack>> {
    let centers = predict_obstacles(&sc.obstacles, times, sc.horizon.t0);
    sc.obstacles
        .iter()
        .zip(centers)
        .map(|(o, c)| {
            Ok(ObstacleTrack {
                centers: c,
                shape: EllipsoidShape::new(o.a + grow, o.b + grow)?,
            })
        })
        .collect()
}

/// Radius of a disc around the robot center that covers the whole footprint.
fn bounding_radius(sc: &Scenario) -> f64 {
    let reach = match sc.robot.shape {
        RobotShape::Circles { .. } => sc.robot.footprint_offsets.iter().fold(0.0f64, |m, o| m.max(o.abs())),
        _ => 0.0,
    };
    sc.robot.shape.radius() + reach
}

fn single_agent(sc: &Scenario, solver: SolverKind) -> BenchResult<([f64; 3], [f64; 3])> {
    let (s, g) = (sc.starts(), sc.goals());
    if s.len() != 1 {
        return Err(BenchError::Unsupported {
            solver: solver.name().into(),
            kind: format!("{} with {} agents", sc.kind, s.len()),
        });
    }
    Ok((s[0], g[0]))
}

/// The planar solvers built on the polar form use the `a` semi-axis in both
/// x and y, so planar obstacles must be circles.
fn require_circles(sc: &Scenario, solver: SolverKind) -> BenchResult<()> {
    if sc.planar() && sc.obstacles.iter().any(|o| o.a != o.b) {
        return Err(BenchError::Unsupported {
            solver: solver.name().into(),
            kind: format!("{} with elliptic obstacles", sc.kind),
        });
    }
    Ok(())
}

pub fn single_problem(sc: &Scenario) -> BenchResult<SingleProblem> {
    require_circles(sc, SolverKind::Single)?;
    let (s, g) = single_agent(sc, SolverKind::Single)?;
    let basis = scenario_basis(sc)?;
    let obstacles = obstacle_tracks(sc, basis.grid().timestamps(), bounding_radius(sc))?;
    let boundary = [0, 1, 2].map(|ax| trajopt_core::basis::AxisBoundary::rest_to_rest(s[ax], g[ax]));
    Ok(SingleProblem::new(basis, boundary, obstacles, sc.planar()))
}

pub fn batch_problem(sc: &Scenario) -> BenchResult<BatchProblem> {
    if !sc.planar() {
        return Err(BenchError::Unsupported {
            solver: "batch".into(),
            kind: format!("{} in 3D", sc.kind),
        });
    }
    let (s, g) = single_agent(sc, SolverKind::Batch)?;
    let basis = scenario_basis(sc)?;
    let obstacles = obstacle_tracks(sc, basis.grid().timestamps(), 0.0)?;
    let footprint = match sc.robot.shape {
        RobotShape::Circles { radius } => FootprintSpec::new(sc.robot.footprint_offsets.clone(), radius)?,
        other => FootprintSpec::disc(other.radius())?,
    };
    Ok(BatchProblem::new(
        basis,
        [s[0], s[1]],
        [g[0], g[1]],
        obstacles,
        footprint,
        sc.robot.v_max,
        sc.robot.a_max,
    ))
}

pub fn priest_problem(sc: &Scenario, solver: SolverKind) -> BenchResult<PriestProblem> {
    require_circles(sc, solver)?;
    let (s, g) = single_agent(sc, solver)?;
    let basis = scenario_basis(sc)?;
    let obstacles = obstacle_tracks(sc, basis.grid().timestamps(), bounding_radius(sc) + PRIEST_MARGIN)?;
    Ok(PriestProblem::new(basis, s, g, obstacles, sc.robot.v_max, sc.robot.a_max, sc.planar()))
}

/// Static obstacles become enclosing spheres; moving ones are not supported.
pub fn multiagent_problem(sc: &Scenario) -> BenchResult<MultiAgentProblem> {
    let unsupported = |why: &str| BenchError::Unsupported {
        solver: "multiagent".into(),
        kind: format!("{} {why}", sc.kind),
    };
    if sc.planar() {
        return Err(unsupported("in 2D"));
    }
    let shape = match sc.robot.shape {
        RobotShape::Spheroid { a, b } => EllipsoidShape::new(a, b)?,
        other => EllipsoidShape::sphere(other.radius())?,
    };
    let mut problem = MultiAgentProblem::rest_to_rest(scenario_basis(sc)?, &sc.starts(), &sc.goals(), shape)?;
    for o in &sc.obstacles {
        if o.velocity3() != [0.0; 3] {
            return Err(unsupported("with moving obstacles"));
        }
        problem.statics.push(StaticSphere {
            center: o.center3(),
            radius: o.a.max(o.b),
        });
    }
    Ok(problem)
}

/// Sampler cost: the BARN-style cost in the plane, smoothness plus
/// tracking of the straight line in 3D.
fn sampler_cost(sc: &Scenario, start: [f64; 3], goal: [f64; 3]) -> impl Fn(&SampledTrajectory) -> f64 {
    let planar = sc.planar();
    move |t: &SampledTrajectory| {
        if planar {
            barn_cost(t, [start[0], start[1]], [goal[0], goal[1]])
        } else {
            let line = straight_line(t, start, goal);
            (0..t.len())
                .map(|k| {
                    let (a, p) = (t.acceleration(k), t.position(k));
                    let e = [0, 1, 2].map(|i| p[i] - line[k][i]);
                    a.iter().chain(&e).map(|v| v * v).sum::<f64>()
                })
                .sum()
        }
    }
}

struct Solved {
    trajectories: Vec<SampledTrajectory>,
    iterations: usize,
    residual_final: f64,
    /// Solver-side verdict combined with the direct collision check.
    solver_ok: bool,
}

fn solve(sc: &Scenario, cfg: &RunConfig, clock: &mut f64) -> BenchResult<Solved> {
    match cfg.solver {
        SolverKind::Single => {
            let problem = single_problem(sc)?;
            let params = SingleParams {
                max_iter: cfg.iters.unwrap_or(SingleParams::default().max_iter),
                ..SingleParams::default()
            };
            let start = Instant::now();
            let sol = SingleSolver::new(problem)?.solve(&params, cfg.seed)?;
            *clock = start.elapsed().as_secs_f64() * 1e3;
            Ok(Solved {
                trajectories: vec![sol.trajectory],
                iterations: sol.iterations,
                residual_final: sol.residuals.total.norm,
                solver_ok: true,
            })
        }
        SolverKind::Batch => {
            let problem = batch_problem(sc)?;
            let params = BatchParams {
                max_iter: cfg.iters.unwrap_or(BatchParams::default().max_iter),
                seed: cfg.seed,
                ..BatchParams::default()
            };
            let basis = problem.basis.clone();
            let start = Instant::now();
            let ranked = solve_batch_opt(problem, &params)?;
            *clock = start.elapsed().as_secs_f64() * 1e3;
            // fall back to the member closest to feasibility
            let pick = ranked.best_member().unwrap_or_else(|| {
                ranked
                    .members
                    .iter()
                    .min_by(|a, b| a.residual_norm.total_cmp(&b.residual_norm))
                    .expect("non-empty batch")
            });
            Ok(Solved {
                trajectories: vec![trajopt_core::basis::eval_trajectory(&basis, &pick.coeffs)?],
                iterations: ranked.iterations,
                residual_final: pick.residual_norm,
                solver_ok: ranked.best.is_some(),
            })
        }
        SolverKind::Priest => {
            let problem = priest_problem(sc, SolverKind::Priest)?;
            let (s, g) = single_agent(sc, SolverKind::Priest)?;
            let params = PriestParams {
                iterations: cfg.iters.unwrap_or(PriestParams::default().iterations),
                seed: cfg.seed,
                ..PriestParams::default()
            };
            let dist = SamplingDistribution::around(&problem, SAMPLING_SPREAD, DEFAULT_LEARNING_RATE, DEFAULT_GAMMA)?;
            let start = Instant::now();
            let mut setup = ProjectionSetup::new(problem, params.rho)?;
            let res = priest_optimize(&mut setup, sampler_cost(sc, s, g), dist, &params)?;
            *clock = start.elapsed().as_secs_f64() * 1e3;
            Ok(Solved {
                trajectories: vec![setup.problem().trajectory(&res.best.projected)?],
                iterations: res.history.len(),
                residual_final: res.best.residual,
                solver_ok: true,
            })
        }
        SolverKind::Cem => {
            let problem = priest_problem(sc, SolverKind::Cem)?;
            let (s, g) = single_agent(sc, SolverKind::Cem)?;
            let params = CemParams {
                iterations: cfg.iters.unwrap_or(CemParams::default().iterations),
                seed: cfg.seed,
                ..CemParams::default()
            };
            let dist = SamplingDistribution::around(&problem, SAMPLING_SPREAD, DEFAULT_LEARNING_RATE, DEFAULT_GAMMA)?;
            let start = Instant::now();
            let res = cem_optimize(&problem, sampler_cost(sc, s, g), dist.mean, dist.cov, &params)?;
            *clock = start.elapsed().as_secs_f64() * 1e3;
            Ok(Solved {
                trajectories: vec![problem.trajectory(&res.best)?],
                iterations: res.history.len(),
                residual_final: res.best_penalty,
                solver_ok: true,
            })
        }
        SolverKind::Multiagent => {
            let problem = multiagent_problem(sc)?;
            let params = JointParams {
                max_iter: cfg.iters.unwrap_or(JointParams::default().max_iter),
                ..JointParams::default()
            };
            let start = Instant::now();
            let sol = solve_joint(problem, &params)?;
            *clock = start.elapsed().as_secs_f64() * 1e3;
            Ok(Solved {
                residual_final: sol.residual_history.last().map_or(0.0, |r| r.norm),
                iterations: sol.iterations,
                solver_ok: sol.converged,
                trajectories: sol.trajectories,
            })
        }
    }
}

/// Runs one solver on one scenario. Wall time covers the solver call only.
/// Success means the solver reports a usable answer and the trajectory
/// passes the direct collision check at zero margin.
pub fn run_solver(sc: &Scenario, cfg: &RunConfig) -> BenchResult<RunOutput> {
    sc.validate()?;
    let mut wall = 0.0;
    let solved = solve(sc, cfg, &mut wall)?;
    let mut metrics = if solved.trajectories.len() == 1 {
        let t = &solved.trajectories[0];
        let (s, g) = (sc.starts()[0], sc.goals()[0]);
        eval_metrics(t, sc, &straight_line(t, s, g))
    } else {
        eval_team_metrics(&solved.trajectories, sc)
    };
    metrics.success &= solved.solver_ok;
    metrics.iterations = solved.iterations;
    metrics.residual_final = solved.residual_final;
    metrics.wall_time_ms = wall;
    let id = sc.id();
    Ok(RunOutput {
        record: RunRecord {
            dump: Some(RunRecord::dump_name(&id, cfg.solver, cfg.seed)),
            scenario_id: id,
            solver: cfg.solver,
            seed: cfg.seed,
            metrics,
        },
        trajectories: solved.trajectories,
    })
}

/// Fraction of successful runs; zero for an empty slice.
pub fn success_rate(records: &[RunRecord]) -> f64 {
    if records.is_empty() {
        return 0.0;
    }
    records.iter().filter(|r| r.metrics.success).count() as f64 / records.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{gen_scenario, GenParams, ScenarioKind};

    #[test]
    fn solver_names_round_trip() {
        for k in SolverKind::ALL {
            assert_eq!(k.name().parse::<SolverKind>().unwrap(), k);
        }
        assert!("mppi".parse::<SolverKind>().is_err());
    }

    #[test]
    fn unsupported_pairs_are_errors() {
        let square = gen_scenario(ScenarioKind::SquareAntipodal, &GenParams::default(), 0).unwrap();
        for k in [SolverKind::Single, SolverKind::Batch, SolverKind::Priest, SolverKind::Cem] {
            assert!(matches!(
                run_solver(&square, &RunConfig::new(k, 0)),
                Err(BenchError::Unsupported { .. })
            ));
        }
        let flow = gen_scenario(ScenarioKind::DynamicFlow, &GenParams::default(), 0).unwrap();
        assert!(run_solver(&flow, &RunConfig::new(SolverKind::Multiagent, 0)).is_err());
    }

    #[test]
    fn obstacle_free_batch_run_succeeds() {
        let mut sc = gen_scenario(ScenarioKind::BarnLike, &GenParams::default(), 1).unwrap();
        sc.obstacles.clear();
        let mut cfg = RunConfig::new(SolverKind::Batch, 3);
        cfg.iters = Some(10);
        let out = run_solver(&sc, &cfg).unwrap();
        let m = out.record.metrics;
        assert!(m.success);
        assert_eq!(m.iterations, 10);
        assert!(m.min_clearance.is_infinite());
        assert!(m.smoothness >= 0.0 && m.tracking >= 0.0 && m.arc_length >= 10.0 - 1e-9);
        assert_eq!(out.trajectories[0].len(), sc.horizon.n_p);
    }

    #[test]
    fn same_seed_same_metrics() {
        let sc = gen_scenario(ScenarioKind::AllInfeasibleProbe, &GenParams::default(), 2).unwrap();
        let mut cfg = RunConfig::new(SolverKind::Priest, 5);
        cfg.iters = Some(3);
        let a = run_solver(&sc, &cfg).unwrap().record;
        let b = run_solver(&sc, &cfg).unwrap().record;
        let strip = |mut r: RunRecord| {
            r.metrics.wall_time_ms = 0.0;
            r
        };
        assert_eq!(strip(a), strip(b));
    }

    #[test]
    fn success_rate_is_successes_over_total() {
        let mut r = RunRecord {
            scenario_id: "x".into(),
            solver: SolverKind::Batch,
            seed: 0,
            metrics: RunMetrics::default(),
            dump: None,
        };
        let mut v = Vec::new();
        for i in 0..10 {
            r.metrics.success = i < 7;
            v.push(r.clone());
        }
        assert!((success_rate(&v) - 0.7).abs() < 1e-15);
        assert_eq!(success_rate(&[]), 0.0);
    }
}
