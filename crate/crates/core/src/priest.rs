//! Projection-guided sampling.
//!
//! Sampled coefficient vectors are pulled toward the feasible set by a fixed
//! number of alternating-minimization sweeps before their cost is evaluated.
//! Each sweep ends in an equality QP whose matrix `[[I + rho F'F, A'], [A, 0]]`
//! is the same for every axis and sample, so one factor serves all of them.

use alloc::vec::Vec;
use libm::{exp, hypot, sqrt};
use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::basis::{eval_trajectory, AxisBoundary, BasisSet, BoundaryPattern, SampledTrajectory, TrajectoryCoeffs};
use crate::error::{check_dim, Error, Result};
use crate::geometry::{angle2d, angles3d, closed_form_d, closed_form_d3, polar_point, EllipsoidShape, D_CAP};
use crate::qp::{factorize, FactorCache, KktFactor};
use crate::sampling::{covariance_factor, draw};
use crate::single::ObstacleTrack;

/// Initial position, velocity and acceleration, and the final position.
pub const PRIEST_PATTERN: BoundaryPattern = BoundaryPattern {
    start_order: 3,
    goal_order: 1,
};

/// Speeds below this leave curvature undefined.
pub const MIN_SPEED: f64 = 1e-6;

pub const DEFAULT_LEARNING_RATE: f64 = 0.5;
/// Negative, so lower cost gets more weight.
pub const DEFAULT_GAMMA: f64 = -10.0;

#[derive(Debug, Clone)]
pub struct PriestProblem {
    pub basis: BasisSet,
    pub boundary: [AxisBoundary; 3],
    pub pattern: BoundaryPattern,
    /// Ellipsoids with semi-axes `(a, a, b)`.
    pub obstacles: Vec<ObstacleTrack>,
    /// Infinite limits drop the corresponding rows.
    pub v_max: f64,
    pub a_max: f64,
    pub s_min: [f64; 3],
    pub s_max: [f64; 3],
    /// Only x and y are optimized; z stays at the start height.
    pub planar: bool,
}

impl PriestProblem {
    /// Starts at rest, ends at `goal`, no workspace bounds.
    pub fn new(basis: BasisSet, start: [f64; 3], goal: [f64; 3], obstacles: Vec<ObstacleTrack>, v_max: f64, a_max: f64, planar: bool) -> Self {
        Self {
            basis,
            boundary: [0, 1, 2].map(|ax| AxisBoundary::rest_to_rest(start[ax], goal[ax])),
            pattern: PRIEST_PATTERN,
            obstacles,
            v_max,
            a_max,
            s_min: [f64::NEG_INFINITY; 3],
            s_max: [f64::INFINITY; 3],
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

    /// Length of a stacked coefficient vector.
    pub fn dim(&self) -> usize {
        self.axes() * self.basis.n_coeffs()
    }

    fn has_bounds(&self) -> bool {
        (0..self.axes()).all(|ax| self.s_min[ax].is_finite() && self.s_max[ax].is_finite())
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.v_max > 0.0 && self.a_max > 0.0) {
            return Err(Error::InvalidParameter("v_max and a_max must be positive"));
        }
        for ax in 0..self.axes() {
            if !(self.s_min[ax] < self.s_max[ax]) {
                return Err(Error::InvalidParameter("workspace bounds must satisfy s_min < s_max"));
            }
        }
        for o in &self.obstacles {
            check_dim("obstacle track", self.basis.n_p(), o.centers.len())?;
        }
        Ok(())
    }

    /// Straight line from start to goal, corrected onto the boundary conditions.
    pub fn initial_mean(&self) -> Result<DVector<f64>> {
        let line = self.line_mean();
        Ok(EqualityProjector::new(self)?.project(&[line])?.remove(0))
    }

    /// Stacked coefficients of the straight line from start to goal.
    pub fn line_mean(&self) -> DVector<f64> {
        let n = self.basis.n_coeffs();
        let mut mean = DVector::zeros(self.dim());
        for ax in 0..self.axes() {
            let b = &self.boundary[ax];
            mean.rows_mut(ax * n, n).copy_from(&self.basis.line_coeffs(b.start[0], b.goal[0]));
        }
        mean
    }

    pub fn coeffs(&self, xi: &DVector<f64>) -> TrajectoryCoeffs {
        let n = self.basis.n_coeffs();
        let z = if self.planar {
            let mut z = DVector::zeros(n);
            z[0] = self.boundary[2].start[0];
            z
        } else {
            xi.rows(2 * n, n).into_owned()
        };
        TrajectoryCoeffs {
            x: xi.rows(0, n).into_owned(),
            y: xi.rows(n, n).into_owned(),
            z,
            psi: None,
        }
    }

    pub fn trajectory(&self, xi: &DVector<f64>) -> Result<SampledTrajectory> {
        check_dim("sample length", self.dim(), xi.len())?;
        eval_trajectory(&self.basis, &self.coeffs(xi))
    }

    /// Sum of positive parts of the raw constraints: ellipsoid separation,
    /// squared speed and acceleration excess, and workspace bounds.
    pub fn raw_penalty(&self, traj: &SampledTrajectory) -> f64 {
        let mut total = 0.0;
        let n_p = self.basis.n_p();
        for k in 0..n_p {
            let p = traj.position(k);
            let v = traj.velocity(k);
            let a = traj.acceleration(k);
            for o in &self.obstacles {
                let c = o.centers[k];
                let delta = self.planar_delta([p[0] - c[0], p[1] - c[1], p[2] - c[2]]);
                let s = crate::geometry::scaled_norm(delta, o.shape);
                total += (1.0 - s * s).max(0.0);
            }
            if self.v_max.is_finite() {
                total += (norm_sq(&v) - self.v_max * self.v_max).max(0.0);
            }
            if self.a_max.is_finite() {
                total += (norm_sq(&a) - self.a_max * self.a_max).max(0.0);
            }
            if self.has_bounds() {
                for ax in 0..self.axes() {
                    total += (self.s_min[ax] - p[ax]).max(0.0) + (p[ax] - self.s_max[ax]).max(0.0);
                }
            }
        }
        total
    }

    fn planar_delta(&self, d: [f64; 3]) -> [f64; 3] {
        if self.planar {
            [d[0], d[1], 0.0]
        } else {
            d
        }
    }
}

fn norm_sq(v: &[f64; 3]) -> f64 {
    v[0] * v[0] + v[1] * v[1] + v[2] * v[2]
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProjectedSample {
    pub original: DVector<f64>,
    pub projected: DVector<f64>,
    pub residual: f64,
    /// `c1 + w r`, filled in by the sampler.
    pub augmented_cost: Option<f64>,
}

/// Per-axis stacked matrices and the shared factor.
#[derive(Debug, Clone)]
pub struct ProjectionSetup {
    problem: PriestProblem,
    rho: f64,
    ftf: DMatrix<f64>,
    constraints: DMatrix<f64>,
    cache: FactorCache,
}

/// Constraint targets for one axis, one column per sample.
struct AxisTargets {
    coll: Vec<DMatrix<f64>>,
    vel: Option<DMatrix<f64>>,
    acc: Option<DMatrix<f64>>,
    /// `tau - s` for the lower and upper bound rows.
    bounds: Option<(DMatrix<f64>, DMatrix<f64>)>,
}

impl ProjectionSetup {
    pub fn new(problem: PriestProblem, rho: f64) -> Result<Self> {
        problem.validate()?;
        if !(rho > 0.0) {
            return Err(Error::InvalidParameter("rho must be positive"));
        }
        let b = &problem.basis;
        let ptp = b.p().transpose() * b.p();
        let n = b.n_coeffs();
        let mut ftf = DMatrix::zeros(n, n);
        ftf += &ptp * problem.obstacles.len() as f64;
        if problem.v_max.is_finite() {
            ftf += b.pdot().transpose() * b.pdot();
        }
        if problem.a_max.is_finite() {
            ftf += b.pddot().transpose() * b.pddot();
        }
        if problem.has_bounds() {
            ftf += &ptp * 2.0;
        }
        let constraints = b.boundary_matrix(problem.pattern);
        Ok(Self {
            problem,
            rho,
            ftf,
            constraints,
            cache: FactorCache::new(),
        })
    }

    pub fn problem(&self) -> &PriestProblem {
        &self.problem
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    /// Factorizations of the projection matrix so far.
    pub fn factorizations(&self) -> usize {
        self.cache.factorizations()
    }

    fn factor(&mut self) -> Result<&KktFactor> {
        let n = self.problem.basis.n_coeffs();
        let (ftf, a, rho) = (&self.ftf, &self.constraints, self.rho);
        self.cache
            .get_or_factorize(rho, || (DMatrix::identity(n, n) + ftf * rho, a.clone()))
    }

    fn axis_block(&self, xs: &DMatrix<f64>, ax: usize) -> DMatrix<f64> {
        let n = self.problem.basis.n_coeffs();
        xs.rows(ax * n, n).into_owned()
    }

    /// Positions, velocities, accelerations per axis; one column per sample.
    fn kinematics(&self, xs: &DMatrix<f64>) -> Vec<[DMatrix<f64>; 3]> {
        let b = &self.problem.basis;
        (0..self.problem.axes())
            .map(|ax| {
                let c = self.axis_block(xs, ax);
                [b.p() * &c, b.pdot() * &c, b.pddot() * &c]
            })
            .collect()
    }

    fn point(&self, kin: &[[DMatrix<f64>; 3]], order: usize, k: usize, i: usize) -> [f64; 3] {
        let z = if self.problem.planar { 0.0 } else { kin[2][order][(k, i)] };
        [kin[0][order][(k, i)], kin[1][order][(k, i)], z]
    }

    /// Closed-form angles, scales and slacks at the current iterate, as targets `e`.
    fn targets(&self, kin: &[[DMatrix<f64>; 3]], n_s: usize) -> Vec<AxisTargets> {
        let prob = &self.problem;
        let n_p = prob.basis.n_p();
        let axes = prob.axes();
        let planar = prob.planar;
        let mut out: Vec<AxisTargets> = (0..axes)
            .map(|_| AxisTargets {
                coll: (0..prob.obstacles.len()).map(|_| DMatrix::zeros(n_p, n_s)).collect(),
                vel: prob.v_max.is_finite().then(|| DMatrix::zeros(n_p, n_s)),
                acc: prob.a_max.is_finite().then(|| DMatrix::zeros(n_p, n_s)),
                bounds: None,
            })
            .collect();
        for i in 0..n_s {
            for k in 0..n_p {
                let p = self.point(kin, 0, k, i);
                for (j, o) in prob.obstacles.iter().enumerate() {
                    let c = o.centers[k];
                    let delta = [p[0] - c[0], p[1] - c[1], if planar { 0.0 } else { p[2] - c[2] }];
                    let off = polar_offset(delta, o.shape, 1.0, D_CAP, planar);
                    for ax in 0..axes {
                        out[ax].coll[j][(k, i)] = c[ax] + off[ax];
                    }
                }
                for (order, limit) in [(1, prob.v_max), (2, prob.a_max)] {
                    if !limit.is_finite() {
                        continue;
                    }
                    let v = self.point(kin, order, k, i);
                    let shape = EllipsoidShape::sphere(limit).expect("positive limit");
                    let off = polar_offset(v, shape, 0.0, 1.0, planar);
                    for ax in 0..axes {
                        let m = if order == 1 { out[ax].vel.as_mut() } else { out[ax].acc.as_mut() };
                        m.expect("active family")[(k, i)] = off[ax];
                    }
                }
            }
        }
        if prob.has_bounds() {
            for (ax, t) in out.iter_mut().enumerate() {
                let pos = &kin[ax][0];
                // rows -P xi <= -s_min and P xi <= s_max, slack s = max(0, tau - G xi)
                let lo = pos.map(|x| -prob.s_min[ax] - (-prob.s_min[ax] + x).max(0.0));
                let hi = pos.map(|x| prob.s_max[ax] - (prob.s_max[ax] - x).max(0.0));
                t.bounds = Some((lo, hi));
            }
        }
        out
    }

    fn ft_e(&self, t: &AxisTargets, n_s: usize) -> DMatrix<f64> {
        let b = &self.problem.basis;
        let p = b.p();
        let mut sum = DMatrix::zeros(b.n_p(), n_s);
        for c in &t.coll {
            sum += c;
        }
        if let Some((lo, hi)) = &t.bounds {
            sum += hi - lo;
        }
        let mut out = p.tr_mul(&sum);
        if let Some(v) = &t.vel {
            out += b.pdot().tr_mul(v);
        }
        if let Some(a) = &t.acc {
            out += b.pddot().tr_mul(a);
        }
        out
    }

    /// Residual vector norms `||F xi - e||` with `e` at the current iterate,
    /// bound rows clipped to their violations.
    fn residual_norms(&self, kin: &[[DMatrix<f64>; 3]], t: &[AxisTargets], n_s: usize) -> Vec<f64> {
        let prob = &self.problem;
        let mut sq = alloc::vec![0.0; n_s];
        for (ax, at) in t.iter().enumerate() {
            let [pos, vel, acc] = &kin[ax];
            for c in &at.coll {
                add_sq(&mut sq, &(pos - c));
            }
            if let Some(v) = &at.vel {
                add_sq(&mut sq, &(vel - v));
            }
            if let Some(a) = &at.acc {
                add_sq(&mut sq, &(acc - a));
            }
            if prob.has_bounds() {
                let over = pos.map(|x| (prob.s_min[ax] - x).max(0.0) + (x - prob.s_max[ax]).max(0.0));
                add_sq(&mut sq, &over);
            }
        }
        sq.into_iter().map(sqrt).collect()
    }

    /// Constraint residual of one coefficient vector; zero iff feasible.
    pub fn residual_score(&self, xi: &DVector<f64>) -> Result<f64> {
        check_dim("sample length", self.problem.dim(), xi.len())?;
        let xs = DMatrix::from_column_slice(xi.len(), 1, xi.as_slice());
        let kin = self.kinematics(&xs);
        let t = self.targets(&kin, 1);
        Ok(self.residual_norms(&kin, &t, 1)[0])
    }

    /// Projects every sample; see [`Self::project_traced`].
    pub fn project(&mut self, samples: &[DVector<f64>], n_inner: usize) -> Result<Vec<ProjectedSample>> {
        Ok(self.project_traced(samples, n_inner)?.0)
    }

    /// Projects every sample with `n_inner` sweeps. Also returns, per sweep,
    /// the residual norm of each sample before the sweep's solve.
    pub fn project_traced(&mut self, samples: &[DVector<f64>], n_inner: usize) -> Result<(Vec<ProjectedSample>, Vec<Vec<f64>>)> {
        if n_inner == 0 {
            return Err(Error::InvalidParameter("n_inner must be at least 1"));
        }
        let n_s = samples.len();
        if n_s == 0 {
            return Ok((Vec::new(), Vec::new()));
        }
        let dim = self.problem.dim();
        for s in samples {
            check_dim("sample length", dim, s.len())?;
        }
        let n = self.problem.basis.n_coeffs();
        let axes = self.problem.axes();
        let rho = self.rho;
        let orig = DMatrix::from_fn(dim, n_s, |r, c| samples[c][r]);
        let mut xs = orig.clone();
        let mut lambda = DMatrix::zeros(dim, n_s);
        let rhs: Vec<DVector<f64>> = (0..axes)
            .map(|ax| self.problem.boundary[ax].rhs(self.problem.pattern))
            .collect();
        let mut history = Vec::with_capacity(n_inner);
        for _ in 0..n_inner {
            let kin = self.kinematics(&xs);
            let t = self.targets(&kin, n_s);
            history.push(self.residual_norms(&kin, &t, n_s));
            let fte: Vec<DMatrix<f64>> = t.iter().map(|at| self.ft_e(at, n_s)).collect();
            let mut q_cols = DMatrix::zeros(n, axes * n_s);
            let mut b_cols = DMatrix::zeros(self.constraints.nrows(), axes * n_s);
            for ax in 0..axes {
                let block = self.axis_block(&xs, ax);
                let grad = &self.ftf * &block - &fte[ax];
                let mut lam = lambda.rows_mut(ax * n, n);
                lam -= grad * rho;
                let q = -(self.axis_block(&orig, ax) + lam.into_owned() + &fte[ax] * rho);
                q_cols.columns_mut(ax * n_s, n_s).copy_from(&q);
                for i in 0..n_s {
                    b_cols.set_column(ax * n_s + i, &rhs[ax]);
                }
            }
            let (sol, _) = self.factor()?.solve_columns(&q_cols, &b_cols)?;
            for ax in 0..axes {
                xs.rows_mut(ax * n, n).copy_from(&sol.columns(ax * n_s, n_s));
            }
        }
        let kin = self.kinematics(&xs);
        let t = self.targets(&kin, n_s);
        let res = self.residual_norms(&kin, &t, n_s);
        let out = (0..n_s)
            .map(|i| ProjectedSample {
                original: samples[i].clone(),
                projected: xs.column(i).into_owned(),
                residual: res[i],
                augmented_cost: None,
            })
            .collect();
        Ok((out, history))
    }
}

fn add_sq(acc: &mut [f64], m: &DMatrix<f64>) {
    for (i, col) in m.column_iter().enumerate() {
        acc[i] += col.norm_squared();
    }
}

/// Offset from the center to the nearest admissible point along the ray
/// through `delta`, with scale clamped to `[lo, hi]`.
fn polar_offset(delta: [f64; 3], shape: EllipsoidShape, lo: f64, hi: f64, planar: bool) -> [f64; 3] {
    if planar {
        let al = angle2d(delta[0] / shape.a(), delta[1] / shape.a());
        let d = closed_form_d(delta[0], delta[1], al, shape.a(), shape.a(), lo, hi);
        let p = polar_point(d, al, core::f64::consts::FRAC_PI_2, shape);
        [p[0], p[1], 0.0]
    } else {
        let (al, be) = angles3d(delta, shape);
        let d = closed_form_d3(delta, al, be, shape, lo, hi);
        polar_point(d, al, be, shape)
    }
}

/// Gaussian over stacked coefficients with the weighted update rule.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplingDistribution {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    /// Learning rate in (0, 1].
    pub learning_rate: f64,
    /// Temperature of the exponential weights; negative favors low cost.
    pub gamma: f64,
}

impl SamplingDistribution {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>, learning_rate: f64, gamma: f64) -> Result<Self> {
        check_dim("covariance rows", mean.len(), cov.nrows())?;
        covariance_factor(&cov)?;
        if !(learning_rate > 0.0 && learning_rate <= 1.0) {
            return Err(Error::InvalidParameter("learning rate must lie in (0, 1]"));
        }
        if gamma == 0.0 || !gamma.is_finite() {
            return Err(Error::InvalidParameter("gamma must be finite and nonzero"));
        }
        Ok(Self {
            mean,
            cov,
            learning_rate,
            gamma,
        })
    }

    /// Isotropic spread on every coefficient above linear.
    pub fn around(problem: &PriestProblem, spread: f64, learning_rate: f64, gamma: f64) -> Result<Self> {
        let n = problem.basis.n_coeffs();
        let dim = problem.dim();
        let cov = DMatrix::from_fn(dim, dim, |r, c| if r == c && r % n >= 2 { spread * spread } else { 0.0 });
        Self::new(problem.initial_mean()?, cov, learning_rate, gamma)
    }

    /// Weights `exp((c - min c) / gamma)`, normalized.
    pub fn weights(&self, costs: &[f64]) -> Vec<f64> {
        let delta = costs.iter().copied().fold(f64::INFINITY, f64::min);
        let w: Vec<f64> = costs.iter().map(|c| exp((c - delta) / self.gamma)).collect();
        let total: f64 = w.iter().sum();
        w.into_iter().map(|v| v / total).collect()
    }

    /// Moves mean and covariance toward the weighted elite statistics.
    pub fn update(&mut self, elite: &[DVector<f64>], costs: &[f64]) -> Result<()> {
        if elite.is_empty() {
            return Err(Error::EmptyBatch);
        }
        check_dim("elite costs", elite.len(), costs.len())?;
        let w = self.weights(costs);
        let s = self.learning_rate;
        let mut target = DVector::zeros(self.mean.len());
        for (x, wi) in elite.iter().zip(&w) {
            target.axpy(*wi, x, 1.0);
        }
        let mean = &self.mean * (1.0 - s) + target * s;
        let mut spread = DMatrix::zeros(self.mean.len(), self.mean.len());
        for (x, wi) in elite.iter().zip(&w) {
            let d = x - &mean;
            spread.ger(*wi, &d, &d, 1.0);
        }
        self.cov = &self.cov * (1.0 - s) + spread * s;
        self.mean = mean;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PriestParams {
    pub iterations: usize,
    pub batch_size: usize,
    pub n_proj: usize,
    pub n_elite: usize,
    pub n_inner: usize,
    pub rho: f64,
    /// Weight of the residual in the augmented cost.
    pub residual_weight: f64,
    pub seed: u64,
}

impl Default for PriestParams {
    fn default() -> Self {
        Self {
            iterations: 13,
            batch_size: 110,
            n_proj: 80,
            n_elite: 20,
            n_inner: 30,
            rho: 1.0,
            residual_weight: 1.0,
            seed: 0,
        }
    }
}

impl PriestParams {
    pub fn validate(&self) -> Result<()> {
        if !(1 <= self.n_elite && self.n_elite <= self.n_proj && self.n_proj <= self.batch_size) {
            return Err(Error::InvalidParameter("need 1 <= n_elite <= n_proj <= batch_size"));
        }
        if self.iterations == 0 || self.n_inner == 0 {
            return Err(Error::InvalidParameter("iterations and n_inner must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamplerRecord {
    pub best_cost: f64,
    pub best_residual: f64,
    pub mean_elite_residual: f64,
}

#[derive(Debug, Clone)]
pub struct PriestResult {
    pub best: ProjectedSample,
    pub history: Vec<SamplerRecord>,
    pub distribution: SamplingDistribution,
    pub factorizations: usize,
}

fn lowest(values: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));
    idx.truncate(k);
    idx
}

/// Projection-guided sampling. `cost` sees the sampled trajectory only.
pub fn priest_optimize<C>(setup: &mut ProjectionSetup, cost: C, mut dist: SamplingDistribution, params: &PriestParams) -> Result<PriestResult>
where
    C: Fn(&SampledTrajectory) -> f64,
{
    params.validate()?;
    check_dim("distribution mean", setup.problem().dim(), dist.mean.len())?;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut history = Vec::with_capacity(params.iterations);
    let mut best = None;
    for _ in 0..params.iterations {
        let factor = covariance_factor(&dist.cov)?;
        let samples = draw(&dist.mean, &factor, params.batch_size, &mut rng);
        let projected = setup.project(&samples, params.n_inner)?;
        let residuals: Vec<f64> = projected.iter().map(|p| p.residual).collect();
        let mut pool: Vec<ProjectedSample> = lowest(&residuals, params.n_proj)
            .into_iter()
            .map(|i| projected[i].clone())
            .collect();
        for p in pool.iter_mut() {
            let traj = setup.problem().trajectory(&p.projected)?;
            p.augmented_cost = Some(cost(&traj) + params.residual_weight * p.residual);
        }
        let caug: Vec<f64> = pool.iter().map(|p| p.augmented_cost.unwrap_or(f64::INFINITY)).collect();
        let elite_idx = lowest(&caug, params.n_elite);
        let elite: Vec<DVector<f64>> = elite_idx.iter().map(|&i| pool[i].projected.clone()).collect();
        let elite_cost: Vec<f64> = elite_idx.iter().map(|&i| caug[i]).collect();
        let top = pool[elite_idx[0]].clone();
        history.push(SamplerRecord {
            best_cost: elite_cost[0],
            best_residual: top.residual,
            mean_elite_residual: elite_idx.iter().map(|&i| pool[i].residual).sum::<f64>() / elite_idx.len() as f64,
        });
        dist.update(&elite, &elite_cost)?;
        best = Some(top);
    }
    Ok(PriestResult {
        best: best.expect("at least one iteration"),
        history,
        distribution: dist,
        factorizations: setup.factorizations(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CemParams {
    pub iterations: usize,
    pub batch_size: usize,
    pub n_elite: usize,
    pub seed: u64,
}

impl Default for CemParams {
    fn default() -> Self {
        Self {
            iterations: 13,
            batch_size: 110,
            n_elite: 20,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct CemResult {
    pub best: DVector<f64>,
    pub best_cost: f64,
    pub best_penalty: f64,
    pub history: Vec<f64>,
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

/// Plain cross-entropy baseline. Samples are corrected onto the boundary
/// conditions by the minimum-change equality projection, then scored by
/// `cost + sum max(0, g)`; mean and covariance are the unweighted elite moments.
pub fn cem_optimize<C>(problem: &PriestProblem, cost: C, mean: DVector<f64>, cov: DMatrix<f64>, params: &CemParams) -> Result<CemResult>
where
    C: Fn(&SampledTrajectory) -> f64,
{
    if !(1 <= params.n_elite && params.n_elite <= params.batch_size) || params.iterations == 0 {
        return Err(Error::InvalidParameter("need 1 <= n_elite <= batch_size and iterations > 0"));
    }
    problem.validate()?;
    check_dim("distribution mean", problem.dim(), mean.len())?;
    let eq = EqualityProjector::new(problem)?;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let (mut mean, mut cov) = (mean, cov);
    let mut history = Vec::with_capacity(params.iterations);
    let mut best = (mean.clone(), f64::INFINITY, f64::INFINITY);
    for _ in 0..params.iterations {
        let factor = covariance_factor(&cov)?;
        let samples = eq.project(&draw(&mean, &factor, params.batch_size, &mut rng))?;
        let mut scores = Vec::with_capacity(samples.len());
        let mut penalties = Vec::with_capacity(samples.len());
        for s in &samples {
            let traj = problem.trajectory(s)?;
            let pen = problem.raw_penalty(&traj);
            penalties.push(pen);
            scores.push(cost(&traj) + pen);
        }
        let elite = lowest(&scores, params.n_elite);
        let k = elite.len() as f64;
        let mut m = DVector::zeros(mean.len());
        for &i in &elite {
            m += &samples[i];
        }
        m /= k;
        let mut c = DMatrix::zeros(mean.len(), mean.len());
        for &i in &elite {
            let d = &samples[i] - &m;
            c.ger(1.0 / k, &d, &d, 1.0);
        }
        mean = m;
        cov = c;
        let top = elite[0];
        history.push(scores[top]);
        best = (samples[top].clone(), scores[top], penalties[top]);
    }
    Ok(CemResult {
        best: best.0,
        best_cost: best.1,
        best_penalty: best.2,
        history,
        mean,
        cov,
    })
}

/// Minimum-change correction onto the boundary conditions.
#[derive(Debug, Clone)]
pub struct EqualityProjector {
    factor: KktFactor,
    rhs: Vec<DVector<f64>>,
    n: usize,
}

impl EqualityProjector {
    pub fn new(problem: &PriestProblem) -> Result<Self> {
        let n = problem.basis.n_coeffs();
        let a = problem.basis.boundary_matrix(problem.pattern);
        let factor = factorize(&DMatrix::identity(n, n), &a)?;
        let rhs = (0..problem.axes()).map(|ax| problem.boundary[ax].rhs(problem.pattern)).collect();
        Ok(Self { factor, rhs, n })
    }

    pub fn project(&self, samples: &[DVector<f64>]) -> Result<Vec<DVector<f64>>> {
        let n = self.n;
        let axes = self.rhs.len();
        let n_s = samples.len();
        let mut q = DMatrix::zeros(n, axes * n_s);
        let mut b = DMatrix::zeros(self.rhs[0].len(), axes * n_s);
        for (i, s) in samples.iter().enumerate() {
            check_dim("sample length", axes * n, s.len())?;
            for ax in 0..axes {
                q.set_column(ax * n_s + i, &(-s.rows(ax * n, n).into_owned()));
                b.set_column(ax * n_s + i, &self.rhs[ax]);
            }
        }
        let (sol, _) = self.factor.solve_columns(&q, &b)?;
        Ok((0..n_s)
            .map(|i| {
                let mut v = DVector::zeros(axes * n);
                for ax in 0..axes {
                    v.rows_mut(ax * n, n).copy_from(&sol.column(ax * n_s + i));
                }
                v
            })
            .collect())
    }
}

/// Forward speed and curvature of a car-like robot; curvature is `None`
/// below [`MIN_SPEED`].
pub fn flatness_car(vel: &[[f64; 2]], acc: &[[f64; 2]]) -> Result<Vec<(f64, Option<f64>)>> {
    check_dim("acceleration samples", vel.len(), acc.len())?;
    Ok(vel
        .iter()
        .zip(acc)
        .map(|(v, a)| {
            let speed = hypot(v[0], v[1]);
            let kappa = (speed >= MIN_SPEED).then(|| (a[1] * v[0] - a[0] * v[1]) / (speed * speed * speed));
            (speed, kappa)
        })
        .collect())
}

/// Squared acceleration plus squared curvature plus squared distance to the
/// segment from `start` to `goal`, summed over samples.
pub fn barn_cost(traj: &SampledTrajectory, start: [f64; 2], goal: [f64; 2]) -> f64 {
    let n = traj.t.len();
    let vel: Vec<[f64; 2]> = (0..n).map(|k| [traj.x.vel[k], traj.y.vel[k]]).collect();
    let acc: Vec<[f64; 2]> = (0..n).map(|k| [traj.x.acc[k], traj.y.acc[k]]).collect();
    let flat = flatness_car(&vel, &acc).expect("equal lengths");
    let mut total = 0.0;
    for k in 0..n {
        total += acc[k][0] * acc[k][0] + acc[k][1] * acc[k][1];
        if let Some(kappa) = flat[k].1 {
            total += kappa * kappa;
        }
        let d = segment_distance([traj.x.pos[k], traj.y.pos[k]], start, goal);
        total += d * d;
    }
    total
}

fn segment_distance(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    let (ux, uy) = (b[0] - a[0], b[1] - a[1]);
    let len2 = ux * ux + uy * uy;
    let s = if len2 == 0.0 {
        0.0
    } else {
        (((p[0] - a[0]) * ux + (p[1] - a[1]) * uy) / len2).clamp(0.0, 1.0)
    };
    hypot(p[0] - a[0] - s * ux, p[1] - a[1] - s * uy)
}

#[cfg(test)]
mod tests;
