//! Joint trajectory optimization for a team of spheroidal agents.
//!
//! Every pair of agents (and every agent with every static sphere) carries the
//! polar equalities `p_i - p_j = d (a cos(alpha) sin(beta), a sin(alpha) sin(beta), b cos(beta))`
//! with `d >= 1`. Given the polar blocks the x, y and z problems decouple and
//! share one saddle matrix per penalty level.

use alloc::vec::Vec;
use libm::{pow, sqrt};
use nalgebra::{DMatrix, DVector};

use crate::basis::{eval_trajectory, AxisBoundary, BasisSet, BoundaryPattern, SampledTrajectory, TrajectoryCoeffs};
use crate::error::{check_dim, Error, Result};
use crate::geometry::{angles3d, closed_form_d3, polar_point, EllipsoidShape, D_CAP};
use crate::qp::{FactorCache, KktFactor};
use crate::schedule::StallDetector;

/// A fixed obstacle enclosed in a sphere.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StaticSphere {
    pub center: [f64; 3],
    pub radius: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MultiAgentProblem {
    pub basis: BasisSet,
    pub pattern: BoundaryPattern,
    /// One boundary triple per agent.
    pub agents: Vec<[AxisBoundary; 3]>,
    /// Agent spheroid `(a, a, b)` before inflation.
    pub shape: EllipsoidShape,
    pub statics: Vec<StaticSphere>,
}

impl MultiAgentProblem {
    /// Agents at rest at both ends.
    pub fn rest_to_rest(basis: BasisSet, starts: &[[f64; 3]], goals: &[[f64; 3]], shape: EllipsoidShape) -> Result<Self> {
        check_dim("agent goals", starts.len(), goals.len())?;
        let agents = starts
            .iter()
            .zip(goals)
            .map(|(s, g)| [0, 1, 2].map(|ax| AxisBoundary::rest_to_rest(s[ax], g[ax])))
            .collect();
        let p = Self {
            basis,
            pattern: BoundaryPattern::FULL,
            agents,
            shape,
            statics: Vec::new(),
        };
        p.validate()?;
        Ok(p)
    }

    pub fn n_agents(&self) -> usize {
        self.agents.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.agents.is_empty() {
            return Err(Error::InvalidParameter("need at least one agent"));
        }
        if self.pattern.rows() > self.basis.n_coeffs() {
            return Err(Error::InvalidParameter("more boundary rows than coefficients"));
        }
        if self.statics.iter().any(|s| !(s.radius > 0.0)) {
            return Err(Error::InvalidParameter("static sphere radius must be positive"));
        }
        Ok(())
    }
}

/// `radius + factor * typical_residual`.
pub fn inflate_radius(radius: f64, typical_residual: f64, factor: f64) -> Result<f64> {
    if radius < 0.0 || typical_residual < 0.0 || factor < 0.0 {
        return Err(Error::InvalidParameter("inflation inputs must be non-negative"));
    }
    Ok(radius + factor * typical_residual)
}

/// `count` penalty levels from `first` to `last`, equally spaced in log scale.
pub fn geometric_levels(first: f64, last: f64, count: usize) -> Vec<f64> {
    if count == 1 {
        return alloc::vec![first];
    }
    let ratio = pow(last / first, 1.0 / (count - 1) as f64);
    (0..count).map(|k| first * pow(ratio, k as f64)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Partner {
    Agent(usize),
    Static(usize),
}

/// One constrained pair: agent `agent` against `partner`, with the combined spheroid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pair {
    pub agent: usize,
    pub partner: Partner,
    pub shape: EllipsoidShape,
}

/// Polar variables, one column per pair and one row per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct PairwiseVars {
    pub pairs: Vec<Pair>,
    pub d: DMatrix<f64>,
    pub alpha: DMatrix<f64>,
    pub beta: DMatrix<f64>,
}

/// Coefficients per axis (column per agent), polar blocks and multipliers.
#[derive(Debug, Clone, PartialEq)]
pub struct JointState {
    pub coeffs: [DMatrix<f64>; 3],
    pub vars: PairwiseVars,
    pub lambda: [DMatrix<f64>; 3],
    pub level: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PairResidual {
    pub norm: f64,
    pub max_abs: f64,
    pub axis_norm: [f64; 3],
    pub axis_max_abs: [f64; 3],
}

#[derive(Debug, Clone, PartialEq)]
pub struct JointParams {
    pub max_iter: usize,
    /// Residual-norm tolerance.
    pub tol: f64,
    /// Elementwise tolerance checked alongside `tol`.
    pub max_abs_tol: f64,
    /// Strictly increasing penalties; all are factorized up front.
    pub rho_levels: Vec<f64>,
    pub inflation_factor: f64,
    /// Residual used to size the inflation.
    pub typical_residual: f64,
    pub stall_window: usize,
    pub stall_improvement: f64,
}

impl Default for JointParams {
    fn default() -> Self {
        Self {
            max_iter: 150,
            tol: 0.01,
            max_abs_tol: 1e-3,
            rho_levels: geometric_levels(1.0, 1e3, 10),
            inflation_factor: 4.0,
            typical_residual: 0.01,
            stall_window: 5,
            stall_improvement: 0.01,
        }
    }
}

impl JointParams {
    pub fn validate(&self) -> Result<()> {
        if self.rho_levels.is_empty() || self.rho_levels[0] <= 0.0 {
            return Err(Error::InvalidParameter("rho levels must be positive and non-empty"));
        }
        if self.rho_levels.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidParameter("rho levels must be strictly increasing"));
        }
        if self.max_iter == 0 {
            return Err(Error::InvalidParameter("max_iter must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct JointSolution {
    pub coeffs: Vec<TrajectoryCoeffs>,
    pub trajectories: Vec<SampledTrajectory>,
    pub residual_history: Vec<PairResidual>,
    /// Smallest center distance between two agents over the horizon; infinite for one agent.
    pub min_center_distance: f64,
    pub iterations: usize,
    pub inflated_radius: f64,
    pub converged: bool,
    pub factorizations: usize,
    pub state: JointState,
}

#[derive(Debug, Clone)]
pub struct JointSolver {
    problem: MultiAgentProblem,
    pairs: Vec<Pair>,
    rho_levels: Vec<f64>,
    cache: FactorCache,
    inflated_radius: f64,
}

impl JointSolver {
    /// Inflates the agents, builds the pair list and factorizes every level.
    pub fn new(problem: MultiAgentProblem, params: &JointParams) -> Result<Self> {
        problem.validate()?;
        params.validate()?;
        let a = problem.shape.a();
        let inflated_radius = inflate_radius(a, params.typical_residual, params.inflation_factor)?;
        let agent = problem.shape.inflated(inflated_radius - a)?;
        let n_a = problem.n_agents();
        let mut pairs = Vec::new();
        for i in 0..n_a {
            for j in i + 1..n_a {
                pairs.push(Pair {
                    agent: i,
                    partner: Partner::Agent(j),
                    shape: EllipsoidShape::new(2.0 * agent.a(), 2.0 * agent.b())?,
                });
            }
            for (o, s) in problem.statics.iter().enumerate() {
                pairs.push(Pair {
                    agent: i,
                    partner: Partner::Static(o),
                    shape: agent.inflated(s.radius)?,
                });
            }
        }
        let mut solver = Self {
            problem,
            pairs,
            rho_levels: params.rho_levels.clone(),
            cache: FactorCache::new(),
            inflated_radius,
        };
        for level in 0..solver.rho_levels.len() {
            solver.factor(level)?;
        }
        Ok(solver)
    }

    pub fn problem(&self) -> &MultiAgentProblem {
        &self.problem
    }

    pub fn pairs(&self) -> &[Pair] {
        &self.pairs
    }

    pub fn factorizations(&self) -> usize {
        self.cache.factorizations()
    }

    pub fn inflated_radius(&self) -> f64 {
        self.inflated_radius
    }

    /// Saddle dimension of one axis problem.
    pub fn kkt_dim(&self) -> usize {
        let n_a = self.problem.n_agents();
        n_a * (self.problem.basis.n_coeffs() + self.problem.pattern.rows())
    }

    fn factor(&mut self, level: usize) -> Result<&KktFactor> {
        let rho = self.rho_levels[level];
        let prob = &self.problem;
        let n_a = prob.n_agents();
        let n_s = prob.statics.len();
        let b = &prob.basis;
        let n = b.n_coeffs();
        let m = prob.pattern.rows();
        self.cache.get_or_factorize(rho, || {
            let smooth = b.pddot().transpose() * b.pddot() * 2.0;
            let ptp = b.p().transpose() * b.p() * rho;
            let degree = (n_a - 1 + n_s) as f64;
            let mut q = DMatrix::zeros(n_a * n, n_a * n);
            let bc = b.boundary_matrix(prob.pattern);
            let mut a = DMatrix::zeros(n_a * m, n_a * n);
            for i in 0..n_a {
                for j in 0..n_a {
                    let block = if i == j { &smooth + &ptp * degree } else { -&ptp };
                    q.view_mut((i * n, j * n), (n, n)).copy_from(&block);
                }
                a.view_mut((i * m, i * n), (m, n)).copy_from(&bc);
            }
            (q, a)
        })
    }

    /// Straight lines between the boundary positions, polar blocks fitted to them, zero multipliers.
    pub fn init_state(&self) -> JointState {
        let b = &self.problem.basis;
        let n_a = self.problem.n_agents();
        let coeffs = [0, 1, 2].map(|ax| {
            let mut c = DMatrix::zeros(b.n_coeffs(), n_a);
            for (i, bc) in self.problem.agents.iter().enumerate() {
                c.set_column(i, &b.line_coeffs(bc[ax].start[0], bc[ax].goal[0]));
            }
            c
        });
        let n_pairs = self.pairs.len();
        let mut st = JointState {
            coeffs,
            vars: PairwiseVars {
                pairs: self.pairs.clone(),
                d: DMatrix::from_element(b.n_p(), n_pairs, 1.0),
                alpha: DMatrix::zeros(b.n_p(), n_pairs),
                beta: DMatrix::zeros(b.n_p(), n_pairs),
            },
            lambda: [0, 1, 2].map(|_| DMatrix::zeros(b.n_coeffs(), n_a)),
            level: 0,
        };
        self.polar_step(&mut st);
        st
    }

    fn positions(&self, st: &JointState) -> [DMatrix<f64>; 3] {
        let p = self.problem.basis.p();
        [0, 1, 2].map(|ax| p * &st.coeffs[ax])
    }

    /// Per-pair separation `p_i - p_partner` at sample `k`.
    fn delta(&self, pos: &[DMatrix<f64>; 3], pair: &Pair, k: usize) -> [f64; 3] {
        let i = pair.agent;
        [0, 1, 2].map(|ax| {
            let other = match pair.partner {
                Partner::Agent(j) => pos[ax][(k, j)],
                Partner::Static(o) => self.problem.statics[o].center[ax],
            };
            pos[ax][(k, i)] - other
        })
    }

    /// Polar targets of one axis, one column per pair.
    fn targets(&self, st: &JointState, ax: usize) -> DMatrix<f64> {
        let v = &st.vars;
        DMatrix::from_fn(v.d.nrows(), self.pairs.len(), |k, c| {
            polar_point(v.d[(k, c)], v.alpha[(k, c)], v.beta[(k, c)], self.pairs[c].shape)[ax]
        })
    }

    /// `A_f' w` for a pair-wise sample matrix `w`, as a coefficient matrix per agent.
    fn spread(&self, w: &DMatrix<f64>) -> DMatrix<f64> {
        let b = &self.problem.basis;
        let mut acc = DMatrix::zeros(b.n_p(), self.problem.n_agents());
        for (c, pair) in self.pairs.iter().enumerate() {
            let col = w.column(c);
            let mut ci = acc.column_mut(pair.agent);
            ci += col;
            if let Partner::Agent(j) = pair.partner {
                let mut cj = acc.column_mut(j);
                cj -= col;
            }
        }
        b.p().tr_mul(&acc)
    }

    /// Pair targets shifted by the static centers, i.e. the right-hand side of `A_f xi = e`.
    fn shifted_targets(&self, st: &JointState, ax: usize) -> DMatrix<f64> {
        let mut e = self.targets(st, ax);
        for (c, pair) in self.pairs.iter().enumerate() {
            if let Partner::Static(o) = pair.partner {
                e.column_mut(c).add_scalar_mut(self.problem.statics[o].center[ax]);
            }
        }
        e
    }

    /// `A_f xi - e` for one axis.
    fn axis_residual(&self, st: &JointState, pos: &DMatrix<f64>, ax: usize) -> DMatrix<f64> {
        let e = self.shifted_targets(st, ax);
        DMatrix::from_fn(e.nrows(), e.ncols(), |k, c| {
            let pair = &self.pairs[c];
            let other = match pair.partner {
                Partner::Agent(j) => pos[(k, j)],
                Partner::Static(_) => 0.0,
            };
            pos[(k, pair.agent)] - other - e[(k, c)]
        })
    }

    /// Coefficient step for one axis at the current level.
    pub fn xi_step(&mut self, st: &mut JointState, ax: usize) -> Result<()> {
        let level = st.level.min(self.rho_levels.len() - 1);
        let rho = self.rho_levels[level];
        let n = self.problem.basis.n_coeffs();
        let n_a = self.problem.n_agents();
        let m = self.problem.pattern.rows();
        let ate = self.spread(&self.shifted_targets(st, ax));
        let q = -(&st.lambda[ax] + ate * rho);
        let mut b = DVector::zeros(n_a * m);
        for (i, bc) in self.problem.agents.iter().enumerate() {
            b.rows_mut(i * m, m).copy_from(&bc[ax].rhs(self.problem.pattern));
        }
        let q = DVector::from_column_slice(q.as_slice());
        let (sol, _) = self.factor(level)?.solve(&q, &b)?;
        st.coeffs[ax] = DMatrix::from_column_slice(n, n_a, sol.as_slice());
        Ok(())
    }

    /// Angles, then clamped scales, from the current positions.
    pub fn polar_step(&self, st: &mut JointState) {
        let pos = self.positions(st);
        let n_p = self.problem.basis.n_p();
        for (c, pair) in self.pairs.iter().enumerate() {
            for k in 0..n_p {
                let delta = self.delta(&pos, pair, k);
                let (al, be) = angles3d(delta, pair.shape);
                st.vars.alpha[(k, c)] = al;
                st.vars.beta[(k, c)] = be;
                st.vars.d[(k, c)] = closed_form_d3(delta, al, be, pair.shape, 1.0, D_CAP);
            }
        }
    }

    pub fn multiplier_step(&self, st: &mut JointState) {
        let rho = self.rho_levels[st.level.min(self.rho_levels.len() - 1)];
        let pos = self.positions(st);
        for ax in 0..3 {
            let r = self.axis_residual(st, &pos[ax], ax);
            st.lambda[ax] -= self.spread(&r) * rho;
        }
    }

    /// One sweep: x, y, z coefficients, polar blocks, multipliers.
    pub fn iterate(&mut self, st: &mut JointState) -> Result<PairResidual> {
        for ax in 0..3 {
            self.xi_step(st, ax)?;
        }
        self.polar_step(st);
        self.multiplier_step(st);
        Ok(pairwise_residuals(self, st))
    }

    pub fn solve(&mut self, params: &JointParams) -> Result<JointSolution> {
        let mut st = self.init_state();
        let history = self.run(&mut st, params)?;
        self.finish(st, history, params)
    }

    /// Iterates from `st` until converged or out of iterations; returns the residual history.
    pub fn run(&mut self, st: &mut JointState, params: &JointParams) -> Result<Vec<PairResidual>> {
        let mut stall = StallDetector::new(params.stall_window, params.stall_improvement);
        let mut history = Vec::with_capacity(params.max_iter);
        for _ in 0..params.max_iter {
            let r = self.iterate(st)?;
            history.push(r);
            if r.norm <= params.tol && r.max_abs <= params.max_abs_tol {
                break;
            }
            if stall.push(r.norm) && st.level + 1 < self.rho_levels.len() {
                st.level += 1;
            }
        }
        Ok(history)
    }

    fn finish(&self, st: JointState, history: Vec<PairResidual>, params: &JointParams) -> Result<JointSolution> {
        let b = &self.problem.basis;
        let n_a = self.problem.n_agents();
        let coeffs: Vec<TrajectoryCoeffs> = (0..n_a)
            .map(|i| TrajectoryCoeffs {
                x: st.coeffs[0].column(i).into_owned(),
                y: st.coeffs[1].column(i).into_owned(),
                z: st.coeffs[2].column(i).into_owned(),
                psi: None,
            })
            .collect();
        let trajectories = coeffs.iter().map(|c| eval_trajectory(b, c)).collect::<Result<Vec<_>>>()?;
        let last = history.last().copied().unwrap_or_default();
        Ok(JointSolution {
            min_center_distance: min_center_distance(&trajectories),
            iterations: history.len(),
            inflated_radius: self.inflated_radius,
            converged: last.norm <= params.tol && last.max_abs <= params.max_abs_tol,
            factorizations: self.factorizations(),
            residual_history: history,
            coeffs,
            trajectories,
            state: st,
        })
    }
}

/// Smallest center distance between two trajectories at the same sample.
pub fn min_center_distance(trajs: &[SampledTrajectory]) -> f64 {
    let mut best = f64::INFINITY;
    for i in 0..trajs.len() {
        for j in i + 1..trajs.len() {
            for k in 0..trajs[i].len() {
                let (p, q) = (trajs[i].position(k), trajs[j].position(k));
                let (dx, dy, dz) = (p[0] - q[0], p[1] - q[1], p[2] - q[2]);
                let d = sqrt(dx * dx + dy * dy + dz * dz);
                best = best.min(d);
            }
        }
    }
    best
}

/// Re-evaluates every pair equality at the stored state.
pub fn pairwise_residuals(solver: &JointSolver, st: &JointState) -> PairResidual {
    let pos = solver.positions(st);
    let mut out = PairResidual::default();
    let mut total = 0.0;
    for ax in 0..3 {
        let r = solver.axis_residual(st, &pos[ax], ax);
        let sq = r.norm_squared();
        total += sq;
        out.axis_norm[ax] = sqrt(sq);
        out.axis_max_abs[ax] = r.amax();
    }
    out.norm = sqrt(total);
    out.max_abs = out.axis_max_abs.iter().copied().fold(0.0, f64::max);
    out
}

/// Builds the solver and runs it from the straight-line start.
pub fn solve_joint(problem: MultiAgentProblem, params: &JointParams) -> Result<JointSolution> {
    JointSolver::new(problem, params)?.solve(params)
}
