//! Scenario records and their generators.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{BenchError, BenchResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScenarioKind {
    Corridor,
    RandomStatic,
    DynamicFlow,
    SquareAntipodal,
    BarnLike,
    AllInfeasibleProbe,
    TwoGapWall,
}

impl ScenarioKind {
    pub const ALL: [ScenarioKind; 7] = [
        ScenarioKind::Corridor,
        ScenarioKind::RandomStatic,
        ScenarioKind::DynamicFlow,
        ScenarioKind::SquareAntipodal,
        ScenarioKind::BarnLike,
        ScenarioKind::AllInfeasibleProbe,
        ScenarioKind::TwoGapWall,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            ScenarioKind::Corridor => "corridor",
            ScenarioKind::RandomStatic => "random-static",
            ScenarioKind::DynamicFlow => "dynamic-flow",
            ScenarioKind::SquareAntipodal => "square-antipodal",
            ScenarioKind::BarnLike => "barn-like",
            ScenarioKind::AllInfeasibleProbe => "all-infeasible-probe",
            ScenarioKind::TwoGapWall => "two-gap-wall",
        }
    }
}

impl fmt::Display for ScenarioKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ScenarioKind {
    type Err = BenchError;

    fn from_str(s: &str) -> BenchResult<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| BenchError::Scenario(format!("unknown kind `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Horizon {
    pub t0: f64,
    pub tf: f64,
    pub n_p: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case", deny_unknown_fields)]
pub enum RobotShape {
    Point,
    /// Footprint circles of this radius at `footprint_offsets`.
    Circles { radius: f64 },
    /// Semi-axes `(a, a, b)`.
    Spheroid { a: f64, b: f64 },
}

impl RobotShape {
    /// Radius added to obstacle semi-axes.
    pub fn radius(&self) -> f64 {
        match *self {
            RobotShape::Point => 0.0,
            RobotShape::Circles { radius } => radius,
            RobotShape::Spheroid { a, .. } => a,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RobotSpec {
    pub shape: RobotShape,
    pub v_max: f64,
    pub a_max: f64,
    /// Circle centers along the body axis.
    pub footprint_offsets: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObstacleSpec {
    pub a: f64,
    pub b: f64,
    pub center: Vec<f64>,
    pub velocity: Vec<f64>,
}

impl ObstacleSpec {
    pub fn fixed(center: [f64; 3], a: f64, b: f64, dim: usize) -> Self {
        Self {
            a,
            b,
            center: center[..dim].to_vec(),
            velocity: vec![0.0; dim],
        }
    }

    pub fn center3(&self) -> [f64; 3] {
        pad3(&self.center)
    }

    pub fn velocity3(&self) -> [f64; 3] {
        pad3(&self.velocity)
    }
}

/// One robot's start and goal, or one per agent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Waypoints {
    Single(Vec<f64>),
    Team(Vec<Vec<f64>>),
}

impl Waypoints {
    pub fn points(&self) -> Vec<[f64; 3]> {
        match self {
            Waypoints::Single(p) => vec![pad3(p)],
            Waypoints::Team(ps) => ps.iter().map(|p| pad3(p)).collect(),
        }
    }

    fn lens(&self) -> Vec<usize> {
        match self {
            Waypoints::Single(p) => vec![p.len()],
            Waypoints::Team(ps) => ps.iter().map(Vec::len).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Boundary {
    pub start: Waypoints,
    pub goal: Waypoints,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub kind: ScenarioKind,
    pub dim: usize,
    pub horizon: Horizon,
    pub robot: RobotSpec,
    pub obstacles: Vec<ObstacleSpec>,
    pub boundary: Boundary,
    pub seed: u64,
}

pub fn pad3(p: &[f64]) -> [f64; 3] {
    let mut out = [0.0; 3];
    for (o, v) in out.iter_mut().zip(p) {
        *o = *v;
    }
    out
}

impl Scenario {
    pub fn id(&self) -> String {
        format!("{}-{}", self.kind, self.seed)
    }

    pub fn planar(&self) -> bool {
        self.dim == 2
    }

    pub fn starts(&self) -> Vec<[f64; 3]> {
        self.boundary.start.points()
    }

    pub fn goals(&self) -> Vec<[f64; 3]> {
        self.boundary.goal.points()
    }

    pub fn validate(&self) -> BenchResult<()> {
        let bad = |m: &str| Err(BenchError::Scenario(m.to_string()));
        if self.dim != 2 && self.dim != 3 {
            return bad("dim must be 2 or 3");
        }
        let h = self.horizon;
        if !(h.tf > h.t0) || h.n_p < 2 {
            return bad("horizon needs tf > t0 and n_p >= 2");
        }
        let r = &self.robot;
        if !(r.v_max > 0.0 && r.a_max > 0.0) {
            return bad("v_max and a_max must be positive");
        }
        match r.shape {
            RobotShape::Circles { radius } if !(radius >= 0.0) || r.footprint_offsets.is_empty() => {
                return bad("circle footprint needs a radius >= 0 and at least one offset")
            }
            RobotShape::Spheroid { a, b } if !(a > 0.0 && b > 0.0) => return bad("spheroid semi-axes must be positive"),
            _ => {}
        }
        for o in &self.obstacles {
            if !(o.a > 0.0 && o.b > 0.0) || o.center.len() != self.dim || o.velocity.len() != self.dim {
                return bad("obstacle needs positive semi-axes and dim-length center and velocity");
            }
        }
        let (s, g) = (self.boundary.start.lens(), self.boundary.goal.lens());
        if s.len() != g.len() || s.iter().chain(&g).any(|&l| l != self.dim) {
            return bad("start and goal must match in count and have dim coordinates");
        }
        Ok(())
    }

    pub fn to_json(&self) -> BenchResult<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> BenchResult<Self> {
        let sc: Self = serde_json::from_str(s)?;
        sc.validate()?;
        Ok(sc)
    }
}

/// Knobs shared by the generators; `None` picks the kind's default.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct GenParams {
    pub n_obstacles: Option<usize>,
    pub n_agents: Option<usize>,
    pub n_p: Option<usize>,
}

fn disc_robot(radius: f64, v_max: f64, a_max: f64) -> RobotSpec {
    RobotSpec {
        shape: RobotShape::Circles { radius },
        v_max,
        a_max,
        footprint_offsets: vec![0.0],
    }
}

fn planar(kind: ScenarioKind, n_p: usize, robot: RobotSpec, obstacles: Vec<ObstacleSpec>, start: [f64; 2], goal: [f64; 2], seed: u64) -> Scenario {
    Scenario {
        kind,
        dim: 2,
        horizon: Horizon { t0: 0.0, tf: 10.0, n_p },
        robot,
        obstacles,
        boundary: Boundary {
            start: Waypoints::Single(start.to_vec()),
            goal: Waypoints::Single(goal.to_vec()),
        },
        seed,
    }
}

/// Deterministic in `(kind, params, seed)`.
pub fn gen_scenario(kind: ScenarioKind, params: &GenParams, seed: u64) -> BenchResult<Scenario> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_p = params.n_p.unwrap_or(100);
    let sc = match kind {
        ScenarioKind::Corridor => corridor(params.n_obstacles.unwrap_or(10), n_p, &mut rng, seed)?,
        ScenarioKind::RandomStatic => random_static(params.n_obstacles.unwrap_or(10), n_p, &mut rng, seed)?,
        ScenarioKind::DynamicFlow => dynamic_flow(params.n_obstacles.unwrap_or(6), n_p, &mut rng, seed),
        ScenarioKind::SquareAntipodal => square_antipodal(params.n_agents.unwrap_or(8), n_p, &mut rng, seed)?,
        ScenarioKind::BarnLike => barn_like(params.n_obstacles.unwrap_or(12), n_p, &mut rng, seed)?,
        ScenarioKind::AllInfeasibleProbe => {
            let obs = vec![ObstacleSpec::fixed([5.0, 0.0, 0.0], 2.0, 2.0, 2)];
            planar(kind, n_p, disc_robot(0.2, 3.0, 3.0), obs, [0.0, 0.0], [10.0, 0.0], seed)
        }
        ScenarioKind::TwoGapWall => {
            let obs = [-4.5, -3.5, -0.5, 0.0, 0.5, 3.5, 4.5]
                .iter()
                .map(|&y| ObstacleSpec::fixed([8.0, y, 0.0], 0.5, 0.5, 2))
                .collect();
            planar(kind, n_p, disc_robot(0.25, 4.0, 3.0), obs, [0.0, 0.0], [16.0, 0.0], seed)
        }
    };
    sc.validate()?;
    Ok(sc)
}

/// Two walls of unit circles with a bend that crosses the straight line.
fn corridor(n_o: usize, n_p: usize, rng: &mut ChaCha8Rng, seed: u64) -> BenchResult<Scenario> {
    if n_o < 4 || n_o % 2 != 0 {
        return Err(BenchError::Scenario("corridor needs an even obstacle count >= 4".into()));
    }
    let rows = n_o / 2;
    let bend = 0.9 + rng.random_range(-0.1..0.1);
    let mut obs = Vec::with_capacity(n_o);
    for i in 0..rows {
        let s = i as f64 / (rows - 1) as f64;
        let x = 4.0 + 12.0 * s;
        let yc = bend * (std::f64::consts::PI * s).sin();
        obs.push(ObstacleSpec::fixed([x, yc + 2.2, 0.0], 1.0, 1.0, 2));
        obs.push(ObstacleSpec::fixed([x, yc - 2.2, 0.0], 1.0, 1.0, 2));
    }
    let robot = RobotSpec {
        shape: RobotShape::Point,
        v_max: 5.0,
        a_max: 5.0,
        footprint_offsets: vec![0.0],
    };
    Ok(planar(ScenarioKind::Corridor, n_p, robot, obs, [0.0, 0.0], [20.0, 0.0], seed))
}

/// Rejection-sampled circles clear of the start and goal discs and of each other.
fn random_static(n_o: usize, n_p: usize, rng: &mut ChaCha8Rng, seed: u64) -> BenchResult<Scenario> {
    let (start, goal) = ([0.0, 0.0], [16.0, 0.0]);
    let r = 0.4;
    let keep_out = 1.5;
    let mut centers: Vec<[f64; 2]> = Vec::with_capacity(n_o);
    let mut tries = 0;
    while centers.len() < n_o {
        tries += 1;
        if tries > 100_000 {
            return Err(BenchError::Scenario("could not place obstacles".into()));
        }
        let c = [rng.random_range(3.0..13.0), rng.random_range(-2.5..2.5)];
        let clear_ends = [start, goal].iter().all(|p| dist2(c, *p) > r + keep_out);
        let clear_others = centers.iter().all(|o| dist2(c, *o) > 2.0 * r + 0.6);
        if clear_ends && clear_others {
            centers.push(c);
        }
    }
    let obs = centers.iter().map(|c| ObstacleSpec::fixed([c[0], c[1], 0.0], r, r, 2)).collect();
    let robot = RobotSpec {
        shape: RobotShape::Circles { radius: 0.25 },
        v_max: 4.0,
        a_max: 3.0,
        footprint_offsets: vec![-0.15, 0.15],
    };
    Ok(planar(ScenarioKind::RandomStatic, n_p, robot, obs, start, goal, seed))
}

/// Obstacles crossing the start-goal line at constant velocity.
fn dynamic_flow(n_o: usize, n_p: usize, rng: &mut ChaCha8Rng, seed: u64) -> Scenario {
    let obs = (0..n_o)
        .map(|i| {
            let x = 4.0 + 8.0 * (i as f64 + rng.random_range(0.0..1.0)) / n_o as f64;
            let side = if i % 2 == 0 { 1.0 } else { -1.0 };
            let y = side * rng.random_range(3.0..6.0);
            let vy = -side * rng.random_range(0.3..0.8);
            ObstacleSpec {
                a: 0.4,
                b: 0.4,
                center: vec![x, y],
                velocity: vec![rng.random_range(-0.2..0.2), vy],
            }
        })
        .collect();
    planar(ScenarioKind::DynamicFlow, n_p, disc_robot(0.3, 3.0, 2.0), obs, [0.0, 0.0], [16.0, 0.0], seed)
}

/// Agents on the border of a square, each sent to its point reflection.
fn square_antipodal(n_a: usize, n_p: usize, rng: &mut ChaCha8Rng, seed: u64) -> BenchResult<Scenario> {
    if n_a < 2 {
        return Err(BenchError::Scenario("square-antipodal needs at least 2 agents".into()));
    }
    let half = 3.0;
    let starts: Vec<Vec<f64>> = (0..n_a)
        .map(|i| {
            let s = 8.0 * i as f64 / n_a as f64;
            let (x, y) = square_perimeter(s);
            let mut j = || rng.random_range(-0.1..0.1);
            vec![half * x + j(), half * y + j(), 1.0 + j()]
        })
        .collect();
    let goals = starts.iter().map(|p| vec![-p[0], -p[1], p[2]]).collect();
    Ok(Scenario {
        kind: ScenarioKind::SquareAntipodal,
        dim: 3,
        horizon: Horizon { t0: 0.0, tf: 10.0, n_p },
        robot: RobotSpec {
            shape: RobotShape::Spheroid { a: 0.4, b: 0.4 },
            v_max: 5.0,
            a_max: 5.0,
            footprint_offsets: vec![0.0],
        },
        obstacles: Vec::new(),
        boundary: Boundary {
            start: Waypoints::Team(starts),
            goal: Waypoints::Team(goals),
        },
        seed,
    })
}

/// Point at arclength `s` in `[0, 8)` along the border of `[-1, 1]^2`, counterclockwise from (-1, -1).
fn square_perimeter(s: f64) -> (f64, f64) {
    match s {
        s if s < 2.0 => (-1.0 + s, -1.0),
        s if s < 4.0 => (1.0, -1.0 + (s - 2.0)),
        s if s < 6.0 => (1.0 - (s - 4.0), 1.0),
        s => (-1.0, 1.0 - (s - 6.0)),
    }
}

/// Jittered grid of small pillars, a reduced stand-in for a BARN cell.
fn barn_like(n_o: usize, n_p: usize, rng: &mut ChaCha8Rng, seed: u64) -> BenchResult<Scenario> {
    let (start, goal) = ([0.0, 0.0], [10.0, 0.0]);
    let mut centers: Vec<[f64; 2]> = Vec::with_capacity(n_o);
    let mut tries = 0;
    while centers.len() < n_o {
        tries += 1;
        if tries > 100_000 {
            return Err(BenchError::Scenario("could not place pillars".into()));
        }
        let c = [rng.random_range(2.0..8.0), rng.random_range(-2.0..2.0)];
        let clear = [start, goal].iter().all(|p| dist2(c, *p) > 1.5) && centers.iter().all(|o| dist2(c, *o) > 1.2);
        if clear {
            centers.push(c);
        }
    }
    let obs = centers.iter().map(|c| ObstacleSpec::fixed([c[0], c[1], 0.0], 0.3, 0.3, 2)).collect();
    Ok(planar(ScenarioKind::BarnLike, n_p, disc_robot(0.2, 3.0, 3.0), obs, start, goal, seed))
}

fn dist2(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}
