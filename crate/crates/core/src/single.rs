//! Single-robot trajectory optimization by alternating minimization.
//!
//! Obstacle separation is written in polar form: for obstacle `j` at step `k`
//! the offset from its center equals `(a d cos(al) sin(be), a d sin(al) sin(be), b d cos(be))`
//! with `d >= 1`. Cosine and sine copies decouple the angles from the
//! position step, whose KKT matrix then only depends on `rho_o`.

use alloc::vec::Vec;
use libm::{atan2, cos, sin, sqrt};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::basis::{AxisBoundary, BasisSet, BoundaryPattern, SampledTrajectory, TrajectoryCoeffs};
use crate::error::{check_dim, Error, Result};
use crate::geometry::{angles3d, los_distance, EllipsoidShape, D_CAP};
use crate::qp::FactorCache;
use crate::schedule::StallDetector;

/// Obstacle centers sampled on the planning grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ObstacleTrack {
    pub centers: Vec<[f64; 3]>,
    pub shape: EllipsoidShape,
}

impl ObstacleTrack {
    pub fn fixed(center: [f64; 3], shape: EllipsoidShape, n_p: usize) -> Self {
        Self {
            centers: alloc::vec![center; n_p],
            shape,
        }
    }

    pub fn constant_velocity(center: [f64; 3], velocity: [f64; 3], shape: EllipsoidShape, times: &[f64]) -> Self {
        let centers = times
            .iter()
            .map(|&t| {
                [
                    center[0] + velocity[0] * t,
                    center[1] + velocity[1] * t,
                    center[2] + velocity[2] * t,
                ]
            })
            .collect();
        Self { centers, shape }
    }
}

/// Straight-line samples from `start` to `goal` over the grid.
pub fn line_samples(basis: &BasisSet, start: f64, goal: f64) -> DVector<f64> {
    let g = basis.grid();
    DVector::from_iterator(
        g.n_p(),
        g.timestamps()
            .iter()
            .map(|&t| start + (goal - start) * (t - g.t0()) / g.duration()),
    )
}

#[derive(Debug, Clone)]
pub struct SingleProblem {
    pub basis: BasisSet,
    pub smoothness_weight: f64,
    pub tracking_weight: f64,
    pub desired: [DVector<f64>; 3],
    pub obstacles: Vec<ObstacleTrack>,
    pub boundary: [AxisBoundary; 3],
    pub pattern: BoundaryPattern,
    /// Skip the z axis and fix the polar angle at pi/2.
    pub planar: bool,
}

impl SingleProblem {
    /// Unit weights, full rest-to-rest boundary and the straight line as the desired path.
    pub fn new(basis: BasisSet, boundary: [AxisBoundary; 3], obstacles: Vec<ObstacleTrack>, planar: bool) -> Self {
        let desired = [0, 1, 2].map(|ax| line_samples(&basis, boundary[ax].start[0], boundary[ax].goal[0]));
        Self {
            basis,
            smoothness_weight: 1.0,
            tracking_weight: 1.0,
            desired,
            obstacles,
            boundary,
            pattern: BoundaryPattern::FULL,
            planar,
        }
    }

    pub fn axes(&self) -> usize {
        if self.planar {
            2
        } else {
            3
        }
    }

    pub fn validate(&self) -> Result<()> {
        let n_p = self.basis.n_p();
        for d in &self.desired {
            check_dim("desired samples", n_p, d.len())?;
        }
        for o in &self.obstacles {
            check_dim("obstacle track", n_p, o.centers.len())?;
        }
        if self.smoothness_weight < 0.0 || self.tracking_weight < 0.0 {
            return Err(Error::InvalidParameter("weights must be non-negative"));
        }
        if self.smoothness_weight + self.tracking_weight <= 0.0 {
            return Err(Error::InvalidParameter("weights must not both vanish"));
        }
        Ok(())
    }
}

/// Geometric growth of both penalty weights on residual stalls.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PenaltySchedule {
    pub initial: f64,
    pub growth: f64,
    pub cap: f64,
    pub window: usize,
    pub min_improvement: f64,
}

impl Default for PenaltySchedule {
    fn default() -> Self {
        Self {
            initial: 1.0,
            growth: 1.4,
            cap: 1e4,
            window: 5,
            min_improvement: 0.01,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SingleParams {
    pub max_iter: usize,
    pub tol: f64,
    pub schedule: PenaltySchedule,
}

impl Default for SingleParams {
    fn default() -> Self {
        Self {
            max_iter: 500,
            tol: 1e-3,
            schedule: PenaltySchedule::default(),
        }
    }
}

/// Iterate of the alternating minimization. Polar arrays are obstacle-major
/// (`j * n_p + k`).
#[derive(Debug, Clone, PartialEq)]
pub struct SingleState {
    pub coeffs: [DVector<f64>; 3],
    pub d: Vec<f64>,
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    pub cos_alpha: Vec<f64>,
    pub sin_alpha: Vec<f64>,
    pub cos_beta: Vec<f64>,
    pub sin_beta: Vec<f64>,
    pub lambda_x: Vec<f64>,
    pub lambda_y: Vec<f64>,
    pub lambda_z: Vec<f64>,
    pub lambda_cos_alpha: Vec<f64>,
    pub lambda_sin_alpha: Vec<f64>,
    pub lambda_cos_beta: Vec<f64>,
    pub lambda_sin_beta: Vec<f64>,
    pub rho: f64,
    pub rho_o: f64,
    pub iteration: usize,
}

impl SingleState {
    pub fn reset_multipliers(&mut self) {
        for v in [
            &mut self.lambda_x,
            &mut self.lambda_y,
            &mut self.lambda_z,
            &mut self.lambda_cos_alpha,
            &mut self.lambda_sin_alpha,
            &mut self.lambda_cos_beta,
            &mut self.lambda_sin_beta,
        ] {
            v.iter_mut().for_each(|l| *l = 0.0);
        }
    }
}

pub fn init_state(problem: &SingleProblem, seed: u64) -> SingleState {
    init_state_with(problem, seed, PenaltySchedule::default().initial)
}

pub fn init_state_with(problem: &SingleProblem, seed: u64, rho: f64) -> SingleState {
    let basis = &problem.basis;
    let n_p = basis.n_p();
    let n = problem.obstacles.len() * n_p;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let line = [0, 1, 2].map(|ax| line_samples(basis, problem.boundary[ax].start[0], problem.boundary[ax].goal[0]));
    let mut alpha = Vec::with_capacity(n);
    let mut beta = Vec::with_capacity(n);
    for o in &problem.obstacles {
        for k in 0..n_p {
            let mut delta = [0.0; 3];
            for ax in 0..problem.axes() {
                delta[ax] = line[ax][k] - o.centers[k][ax];
            }
            if delta == [0.0; 3] {
                // degenerate: pick a seeded direction
                let th: f64 = rng.random_range(-core::f64::consts::PI..core::f64::consts::PI);
                delta[0] = cos(th);
                delta[1] = sin(th);
            }
            let (al, be) = angles3d(delta, o.shape);
            alpha.push(al);
            beta.push(if problem.planar { core::f64::consts::FRAC_PI_2 } else { be });
        }
    }
    let coeffs = [0, 1, 2].map(|ax| basis.line_coeffs(problem.boundary[ax].start[0], problem.boundary[ax].goal[0]));
    SingleState {
        coeffs,
        d: alloc::vec![1.0; n],
        cos_alpha: alpha.iter().map(|&a| cos(a)).collect(),
        sin_alpha: alpha.iter().map(|&a| sin(a)).collect(),
        cos_beta: beta.iter().map(|&b| cos(b)).collect(),
        sin_beta: beta.iter().map(|&b| sin(b)).collect(),
        alpha,
        beta,
        lambda_x: alloc::vec![0.0; n],
        lambda_y: alloc::vec![0.0; n],
        lambda_z: alloc::vec![0.0; n],
        lambda_cos_alpha: alloc::vec![0.0; n],
        lambda_sin_alpha: alloc::vec![0.0; n],
        lambda_cos_beta: alloc::vec![0.0; n],
        lambda_sin_beta: alloc::vec![0.0; n],
        rho,
        rho_o: rho,
        iteration: 0,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct FamilyResidual {
    pub norm: f64,
    pub max_abs: f64,
}

impl FamilyResidual {
    fn add(&mut self, r: f64) {
        self.norm += r * r;
        self.max_abs = self.max_abs.max(r.abs());
    }

    fn finish(mut self) -> Self {
        self.norm = sqrt(self.norm);
        self
    }

    fn merge(parts: &[FamilyResidual]) -> Self {
        Self {
            norm: sqrt(parts.iter().map(|p| p.norm * p.norm).sum()),
            max_abs: parts.iter().map(|p| p.max_abs).fold(0.0, f64::max),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ResidualReport {
    pub collision: FamilyResidual,
    pub alpha_copy: FamilyResidual,
    pub beta_copy: FamilyResidual,
    pub total: FamilyResidual,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationRecord {
    pub residual_norm: f64,
    pub residual_max: f64,
    pub rho_o: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CostBreakdown {
    pub smoothness: f64,
    pub tracking: f64,
}

#[derive(Debug, Clone)]
pub struct SingleSolution {
    pub coeffs: TrajectoryCoeffs,
    pub trajectory: SampledTrajectory,
    pub residuals: ResidualReport,
    pub cost: CostBreakdown,
    pub history: Vec<IterationRecord>,
    pub iterations: usize,
    pub converged: bool,
    pub factorizations: usize,
    pub kkt_dim: usize,
    pub state: SingleState,
}

/// Owns the problem and the position-step factor cache.
#[derive(Debug, Clone)]
pub struct SingleSolver {
    problem: SingleProblem,
    cache: FactorCache,
    ptp: DMatrix<f64>,
    smooth: DMatrix<f64>,
    boundary: DMatrix<f64>,
    kkt_dim: usize,
}

impl SingleSolver {
    pub fn new(problem: SingleProblem) -> Result<Self> {
        problem.validate()?;
        let p = problem.basis.p();
        let pdd = problem.basis.pddot();
        let ptp = p.transpose() * p;
        let smooth = pdd.transpose() * pdd;
        let boundary = problem.basis.boundary_matrix(problem.pattern);
        let kkt_dim = problem.basis.n_coeffs() + boundary.nrows();
        Ok(Self {
            problem,
            cache: FactorCache::new(),
            ptp,
            smooth,
            boundary,
            kkt_dim,
        })
    }

    pub fn problem(&self) -> &SingleProblem {
        &self.problem
    }

    pub fn factorizations(&self) -> usize {
        self.cache.factorizations()
    }

    /// Side length of the position-step saddle matrix.
    pub fn kkt_dim(&self) -> usize {
        self.kkt_dim
    }

    fn check_state(&self, st: &SingleState) -> Result<()> {
        let n = self.problem.obstacles.len() * self.problem.basis.n_p();
        check_dim("polar arrays", n, st.d.len())?;
        for c in &st.coeffs {
            check_dim("coefficients", self.problem.basis.n_coeffs(), c.len())?;
        }
        Ok(())
    }

    /// One sweep: positions, d, alpha copies, alpha, beta copies, beta, multipliers.
    ///
    /// d is refreshed right after the positions so the copy steps never see
    /// a stale scale; with `d = 1` against a far obstacle the copies would
    /// otherwise absorb the distance and blow up.
    pub fn am_iteration(&mut self, st: &mut SingleState) -> Result<()> {
        self.check_state(st)?;
        self.position_step(st)?;
        self.scale_step(st);
        self.alpha_copy_step(st);
        self.alpha_step(st);
        if !self.problem.planar {
            self.beta_copy_step(st);
            self.beta_step(st);
        }
        self.multiplier_step(st);
        st.iteration += 1;
        Ok(())
    }

    fn positions(&self, st: &SingleState) -> [DVector<f64>; 3] {
        let p = self.problem.basis.p();
        [0, 1, 2].map(|ax| p * &st.coeffs[ax])
    }

    /// Collision offset of the polar point along `axis` (copy variables).
    fn offset(&self, st: &SingleState, j: usize, i: usize, axis: usize) -> f64 {
        let sh = self.problem.obstacles[j].shape;
        match axis {
            0 => sh.a() * st.d[i] * st.cos_alpha[i] * st.sin_beta[i],
            1 => sh.a() * st.d[i] * st.sin_alpha[i] * st.sin_beta[i],
            _ => sh.b() * st.d[i] * st.cos_beta[i],
        }
    }

    pub(crate) fn position_step(&mut self, st: &mut SingleState) -> Result<()> {
        let prob = &self.problem;
        let n_p = prob.basis.n_p();
        let n_o = prob.obstacles.len();
        let axes = prob.axes();
        let rho_o = st.rho_o;
        let (ptp, smooth, boundary) = (&self.ptp, &self.smooth, &self.boundary);
        let (w1, w2) = (prob.smoothness_weight, prob.tracking_weight);
        let factor = self.cache.get_or_factorize(rho_o, || {
            let q = smooth * (2.0 * w1) + ptp * (2.0 * w2 + rho_o * n_o as f64);
            (q, boundary.clone())
        })?;
        let n_c = prob.basis.n_coeffs();
        let mut q_cols = DMatrix::zeros(n_c, axes);
        let mut b_cols = DMatrix::zeros(prob.pattern.rows(), axes);
        let p = prob.basis.p();
        let lams = [&st.lambda_x, &st.lambda_y, &st.lambda_z];
        for ax in 0..axes {
            let mut target = DVector::zeros(n_p);
            for j in 0..n_o {
                let o = &prob.obstacles[j];
                for k in 0..n_p {
                    let i = j * n_p + k;
                    let off = match ax {
                        0 => o.shape.a() * st.d[i] * st.cos_alpha[i] * st.sin_beta[i],
                        1 => o.shape.a() * st.d[i] * st.sin_alpha[i] * st.sin_beta[i],
                        _ => o.shape.b() * st.d[i] * st.cos_beta[i],
                    };
                    target[k] += o.centers[k][ax] + off - lams[ax][i] / rho_o;
                }
            }
            let lin = -(p.tr_mul(&(&prob.desired[ax] * (2.0 * w2) + target * rho_o)));
            q_cols.set_column(ax, &lin);
            b_cols.set_column(ax, &prob.boundary[ax].rhs(prob.pattern));
        }
        let (xi, _) = factor.solve_columns(&q_cols, &b_cols)?;
        for ax in 0..axes {
            st.coeffs[ax] = xi.column(ax).into_owned();
        }
        Ok(())
    }

    pub(crate) fn alpha_copy_step(&self, st: &mut SingleState) {
        let pos = self.positions(st);
        let n_p = self.problem.basis.n_p();
        let (rho, rho_o) = (st.rho, st.rho_o);
        for (j, o) in self.problem.obstacles.iter().enumerate() {
            for k in 0..n_p {
                let i = j * n_p + k;
                let ux = pos[0][k] - o.centers[k][0] + st.lambda_x[i] / rho_o;
                let uy = pos[1][k] - o.centers[k][1] + st.lambda_y[i] / rho_o;
                let w = o.shape.a() * st.d[i] * st.sin_beta[i];
                let den = rho + rho_o * w * w;
                st.cos_alpha[i] = (rho * cos(st.alpha[i]) - st.lambda_cos_alpha[i] + rho_o * w * ux) / den;
                st.sin_alpha[i] = (rho * sin(st.alpha[i]) - st.lambda_sin_alpha[i] + rho_o * w * uy) / den;
            }
        }
    }

    pub(crate) fn alpha_step(&self, st: &mut SingleState) {
        let rho = st.rho;
        for i in 0..st.alpha.len() {
            let c = st.cos_alpha[i] + st.lambda_cos_alpha[i] / rho;
            let s = st.sin_alpha[i] + st.lambda_sin_alpha[i] / rho;
            if c != 0.0 || s != 0.0 {
                st.alpha[i] = atan2(s, c);
            }
        }
    }

    pub(crate) fn beta_copy_step(&self, st: &mut SingleState) {
        let pos = self.positions(st);
        let n_p = self.problem.basis.n_p();
        let (rho, rho_o) = (st.rho, st.rho_o);
        for (j, o) in self.problem.obstacles.iter().enumerate() {
            for k in 0..n_p {
                let i = j * n_p + k;
                let ux = pos[0][k] - o.centers[k][0] + st.lambda_x[i] / rho_o;
                let uy = pos[1][k] - o.centers[k][1] + st.lambda_y[i] / rho_o;
                let uz = pos[2][k] - o.centers[k][2] + st.lambda_z[i] / rho_o;
                let bd = o.shape.b() * st.d[i];
                st.cos_beta[i] = (rho * cos(st.beta[i]) - st.lambda_cos_beta[i] + rho_o * bd * uz) / (rho + rho_o * bd * bd);
                let ad = o.shape.a() * st.d[i];
                let (c, s) = (st.cos_alpha[i], st.sin_alpha[i]);
                let den = rho + rho_o * ad * ad * (c * c + s * s);
                st.sin_beta[i] = (rho * sin(st.beta[i]) - st.lambda_sin_beta[i] + rho_o * ad * (c * ux + s * uy)) / den;
            }
        }
    }

    pub(crate) fn beta_step(&self, st: &mut SingleState) {
        let rho = st.rho;
        for i in 0..st.beta.len() {
            let c = st.cos_beta[i] + st.lambda_cos_beta[i] / rho;
            let s = st.sin_beta[i] + st.lambda_sin_beta[i] / rho;
            if c != 0.0 || s != 0.0 {
                st.beta[i] = atan2(s, c);
            }
        }
    }

    /// Line-of-sight distance of the current positions.
    pub(crate) fn scale_step(&self, st: &mut SingleState) {
        let pos = self.positions(st);
        let n_p = self.problem.basis.n_p();
        let axes = self.problem.axes();
        for (j, o) in self.problem.obstacles.iter().enumerate() {
            for k in 0..n_p {
                let mut delta = [0.0; 3];
                for ax in 0..axes {
                    delta[ax] = pos[ax][k] - o.centers[k][ax];
                }
                st.d[j * n_p + k] = los_distance(delta, o.shape).min(D_CAP);
            }
        }
    }

    pub(crate) fn multiplier_step(&self, st: &mut SingleState) {
        let pos = self.positions(st);
        let n_p = self.problem.basis.n_p();
        let axes = self.problem.axes();
        let (rho, rho_o) = (st.rho, st.rho_o);
        for j in 0..self.problem.obstacles.len() {
            for k in 0..n_p {
                let i = j * n_p + k;
                let c = self.problem.obstacles[j].centers[k];
                for ax in 0..axes {
                    let r = pos[ax][k] - c[ax] - self.offset(st, j, i, ax);
                    match ax {
                        0 => st.lambda_x[i] += rho_o * r,
                        1 => st.lambda_y[i] += rho_o * r,
                        _ => st.lambda_z[i] += rho_o * r,
                    }
                }
                st.lambda_cos_alpha[i] += rho * (st.cos_alpha[i] - cos(st.alpha[i]));
                st.lambda_sin_alpha[i] += rho * (st.sin_alpha[i] - sin(st.alpha[i]));
                if !self.problem.planar {
                    st.lambda_cos_beta[i] += rho * (st.cos_beta[i] - cos(st.beta[i]));
                    st.lambda_sin_beta[i] += rho * (st.sin_beta[i] - sin(st.beta[i]));
                }
            }
        }
    }

    pub fn residual_report(&self, st: &SingleState) -> ResidualReport {
        residual_report(st, &self.problem)
    }

    /// Augmented Lagrangian in scaled form, up to terms constant in the primal blocks.
    pub fn augmented_lagrangian(&self, st: &SingleState) -> f64 {
        let prob = &self.problem;
        let pos = self.positions(st);
        let pdd = prob.basis.pddot();
        let mut total = 0.0;
        for ax in 0..prob.axes() {
            total += prob.smoothness_weight * (pdd * &st.coeffs[ax]).norm_squared();
            total += prob.tracking_weight * (&pos[ax] - &prob.desired[ax]).norm_squared();
        }
        let n_p = prob.basis.n_p();
        let (rho, rho_o) = (st.rho, st.rho_o);
        let lams = [&st.lambda_x, &st.lambda_y, &st.lambda_z];
        for j in 0..prob.obstacles.len() {
            for k in 0..n_p {
                let i = j * n_p + k;
                let c = prob.obstacles[j].centers[k];
                for ax in 0..prob.axes() {
                    let r = pos[ax][k] - c[ax] - self.offset(st, j, i, ax) + lams[ax][i] / rho_o;
                    total += 0.5 * rho_o * r * r;
                }
                let mut sq = |v: f64, l: f64| {
                    let r = v + l / rho;
                    total += 0.5 * rho * r * r;
                };
                sq(st.cos_alpha[i] - cos(st.alpha[i]), st.lambda_cos_alpha[i]);
                sq(st.sin_alpha[i] - sin(st.alpha[i]), st.lambda_sin_alpha[i]);
                if !prob.planar {
                    sq(st.cos_beta[i] - cos(st.beta[i]), st.lambda_cos_beta[i]);
                    sq(st.sin_beta[i] - sin(st.beta[i]), st.lambda_sin_beta[i]);
                }
            }
        }
        total
    }

    /// Runs from `state` until the residual max-abs drops to `tol` or `max_iter`.
    pub fn solve_from(&mut self, mut state: SingleState, params: &SingleParams) -> Result<SingleSolution> {
        let sched = params.schedule;
        if !(sched.initial > 0.0 && sched.growth >= 1.0 && sched.cap >= sched.initial) {
            return Err(Error::InvalidParameter("penalty schedule"));
        }
        let mut stall = StallDetector::new(sched.window, sched.min_improvement);
        let mut history = Vec::new();
        let mut converged = false;
        for _ in 0..params.max_iter {
            self.am_iteration(&mut state)?;
            let rep = self.residual_report(&state);
            history.push(IterationRecord {
                residual_norm: rep.total.norm,
                residual_max: rep.total.max_abs,
                rho_o: state.rho_o,
            });
            if rep.total.max_abs <= params.tol {
                converged = true;
                break;
            }
            if stall.push(rep.total.norm) && state.rho_o < sched.cap {
                state.rho = (state.rho * sched.growth).min(sched.cap);
                state.rho_o = (state.rho_o * sched.growth).min(sched.cap);
            }
        }
        self.finish(state, history, converged)
    }

    pub fn solve(&mut self, params: &SingleParams, seed: u64) -> Result<SingleSolution> {
        let state = init_state_with(&self.problem, seed, params.schedule.initial);
        self.solve_from(state, params)
    }

    fn finish(&self, state: SingleState, history: Vec<IterationRecord>, converged: bool) -> Result<SingleSolution> {
        let prob = &self.problem;
        let coeffs = TrajectoryCoeffs {
            x: state.coeffs[0].clone(),
            y: state.coeffs[1].clone(),
            z: state.coeffs[2].clone(),
            psi: None,
        };
        let trajectory = crate::basis::eval_trajectory(&prob.basis, &coeffs)?;
        let axes = [&trajectory.x, &trajectory.y, &trajectory.z];
        let mut cost = CostBreakdown::default();
        for ax in 0..prob.axes() {
            cost.smoothness += axes[ax].acc.norm_squared();
            cost.tracking += (&axes[ax].pos - &prob.desired[ax]).norm_squared();
        }
        Ok(SingleSolution {
            coeffs,
            trajectory,
            residuals: residual_report(&state, prob),
            cost,
            iterations: history.len(),
            history,
            converged,
            factorizations: self.cache.factorizations(),
            kkt_dim: self.kkt_dim,
            state,
        })
    }
}

pub fn solve_single(problem: SingleProblem, params: &SingleParams, seed: u64) -> Result<SingleSolution> {
    SingleSolver::new(problem)?.solve(params, seed)
}

/// Per-family residuals of the reformulated equalities.
pub fn residual_report(st: &SingleState, problem: &SingleProblem) -> ResidualReport {
    let p = problem.basis.p();
    let pos = [0, 1, 2].map(|ax| p * &st.coeffs[ax]);
    let n_p = problem.basis.n_p();
    let mut coll = FamilyResidual::default();
    let mut al = FamilyResidual::default();
    let mut be = FamilyResidual::default();
    for (j, o) in problem.obstacles.iter().enumerate() {
        for k in 0..n_p {
            let i = j * n_p + k;
            let w = [
                o.shape.a() * st.d[i] * st.cos_alpha[i] * st.sin_beta[i],
                o.shape.a() * st.d[i] * st.sin_alpha[i] * st.sin_beta[i],
                o.shape.b() * st.d[i] * st.cos_beta[i],
            ];
            for ax in 0..problem.axes() {
                coll.add(pos[ax][k] - o.centers[k][ax] - w[ax]);
            }
            al.add(st.cos_alpha[i] - cos(st.alpha[i]));
            al.add(st.sin_alpha[i] - sin(st.alpha[i]));
            if !problem.planar {
                be.add(st.cos_beta[i] - cos(st.beta[i]));
                be.add(st.sin_beta[i] - sin(st.beta[i]));
            }
        }
    }
    let (collision, alpha_copy, beta_copy) = (coll.finish(), al.finish(), be.finish());
    ResidualReport {
        collision,
        alpha_copy,
        beta_copy,
        total: FamilyResidual::merge(&[collision, alpha_copy, beta_copy]),
    }
}
