//! Batched planar trajectory optimization for a multi-circle footprint.
//!
//! Every member carries an x-part `(xi_x, xi_c)` and a y-part `(xi_y, xi_s)`,
//! where `c`, `s` are copies of the heading cosine and sine. Collision,
//! velocity and acceleration bounds are rewritten in polar form so the
//! coefficient step is an equality QP whose matrix `Q + rho F'F` is the same
//! for both parts and for every member: one factor, solved against all
//! `2 N_b` right-hand sides at once.

use alloc::vec::Vec;
use libm::{atan2, cos, sin, sincos, sqrt};
use nalgebra::{DMatrix, DVector};

use crate::basis::{AxisBoundary, BasisSet, BoundaryPattern, SampledTrajectory, TrajectoryCoeffs};
use crate::error::{check_dim, Error, Result};
use crate::geometry::{angle2d, closed_form_d, unwrap_near, D_CAP};
use crate::qp::FactorCache;
use crate::sampling::sample_initializations;
use crate::single::{line_samples, ObstacleTrack};

/// Footprint as circles of a common radius centered at signed offsets
/// along the body x-axis.
#[derive(Debug, Clone, PartialEq)]
pub struct FootprintSpec {
    offsets: Vec<f64>,
    radius: f64,
}

impl FootprintSpec {
    pub fn new(offsets: Vec<f64>, radius: f64) -> Result<Self> {
        if offsets.is_empty() {
            return Err(Error::InvalidParameter("footprint needs at least one circle"));
        }
        if !(radius >= 0.0) {
            return Err(Error::InvalidParameter("footprint radius must be non-negative"));
        }
        Ok(Self { offsets, radius })
    }

    pub fn disc(radius: f64) -> Result<Self> {
        Self::new(alloc::vec![0.0], radius)
    }

    /// Circles covering a `length` by `width` rectangle.
    pub fn rectangle(length: f64, width: f64, n_c: usize) -> Result<Self> {
        if n_c == 0 || !(length > 0.0 && width > 0.0) {
            return Err(Error::InvalidParameter("rectangle footprint"));
        }
        let step = length / n_c as f64;
        let offsets = (0..n_c).map(|m| -0.5 * length + step * (m as f64 + 0.5)).collect();
        let radius = sqrt(0.25 * step * step + 0.25 * width * width);
        Self::new(offsets, radius)
    }

    pub fn offsets(&self) -> &[f64] {
        &self.offsets
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn n_c(&self) -> usize {
        self.offsets.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatchWeights {
    pub smoothness: f64,
    pub tracking: f64,
    pub heading: f64,
}

impl Default for BatchWeights {
    fn default() -> Self {
        Self {
            smoothness: 1.0,
            tracking: 1.0,
            heading: 1.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct BatchProblem {
    pub basis: BasisSet,
    pub desired: [DVector<f64>; 2],
    /// Ellipses with x semi-axis `a` and y semi-axis `b`; z is ignored.
    pub obstacles: Vec<ObstacleTrack>,
    pub footprint: FootprintSpec,
    pub v_max: f64,
    pub a_max: f64,
    pub boundary: [AxisBoundary; 2],
    pub pattern: BoundaryPattern,
    /// Heading at t0 and tf.
    pub heading_boundary: [f64; 2],
    pub weights: BatchWeights,
}

impl BatchProblem {
    /// Rest-to-rest problem tracking the straight line, heading along it.
    pub fn new(
        basis: BasisSet,
        start: [f64; 2],
        goal: [f64; 2],
        obstacles: Vec<ObstacleTrack>,
        footprint: FootprintSpec,
        v_max: f64,
        a_max: f64,
    ) -> Self {
        let heading = angle2d(goal[0] - start[0], goal[1] - start[1]);
        let desired = [0, 1].map(|ax| line_samples(&basis, start[ax], goal[ax]));
        Self {
            basis,
            desired,
            obstacles,
            footprint,
            v_max,
            a_max,
            boundary: [0, 1].map(|ax| AxisBoundary::rest_to_rest(start[ax], goal[ax])),
            pattern: BoundaryPattern::FULL,
            heading_boundary: [heading, heading],
            weights: BatchWeights::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.v_max > 0.0 && self.a_max > 0.0) {
            return Err(Error::InvalidParameter("v_max and a_max must be positive"));
        }
        let n_p = self.basis.n_p();
        for d in &self.desired {
            check_dim("desired samples", n_p, d.len())?;
        }
        for o in &self.obstacles {
            check_dim("obstacle track", n_p, o.centers.len())?;
        }
        Ok(())
    }

    fn effective_axes(&self, j: usize) -> (f64, f64) {
        let s = self.obstacles[j].shape;
        (s.a() + self.footprint.radius, s.b() + self.footprint.radius)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatchParams {
    pub batch_size: usize,
    pub max_iter: usize,
    pub rho: f64,
    /// Max-abs residual required for feasibility.
    pub tol: f64,
    /// Relative slack for the direct constraint check.
    pub margin: f64,
    /// Standard deviation of the higher-order coefficients of the initial samples, meters.
    pub init_spread: f64,
    /// Heading multiplier step as a fraction of `rho`. The surrogate target
    /// moves every sweep, so a nonzero rate lets the multiplier pick up a bias.
    pub heading_multiplier_rate: f64,
    pub seed: u64,
}

impl Default for BatchParams {
    fn default() -> Self {
        Self {
            batch_size: 100,
            max_iter: 100,
            rho: 3.0,
            tol: 0.05,
            margin: 1e-2,
            init_spread: 1.0,
            heading_multiplier_rate: 0.0,
            seed: 0,
        }
    }
}

/// Per-member iterate. Coefficient blocks are columns; polar arrays are
/// member-major, then circle, obstacle, timestep.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchState {
    pub zx: DMatrix<f64>,
    pub zy: DMatrix<f64>,
    pub psi: DMatrix<f64>,
    pub lambda_x: DMatrix<f64>,
    pub lambda_y: DMatrix<f64>,
    pub lambda_psi: DMatrix<f64>,
    pub alpha_c: Vec<f64>,
    pub d_c: Vec<f64>,
    pub alpha_v: Vec<f64>,
    pub d_v: Vec<f64>,
    pub alpha_a: Vec<f64>,
    pub d_a: Vec<f64>,
    pub iteration: usize,
}

impl BatchState {
    pub fn batch_size(&self) -> usize {
        self.zx.ncols()
    }

    pub fn reset_multipliers(&mut self) {
        self.lambda_x.fill(0.0);
        self.lambda_y.fill(0.0);
        self.lambda_psi.fill(0.0);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MemberResult {
    pub coeffs: TrajectoryCoeffs,
    pub cost: f64,
    pub augmented_cost: f64,
    pub residual_norm: f64,
    pub residual_max: f64,
    pub feasible: bool,
}

#[derive(Debug, Clone)]
pub struct RankedSolutions {
    pub members: Vec<MemberResult>,
    /// Lowest augmented cost among feasible members.
    pub best: Option<usize>,
    /// Residual norm of every member after each iteration.
    pub residual_history: Vec<Vec<f64>>,
    pub iterations: usize,
    pub factorizations: usize,
    pub heading_factorizations: usize,
    pub state: BatchState,
}

impl RankedSolutions {
    pub fn best_member(&self) -> Option<&MemberResult> {
        self.best.map(|i| &self.members[i])
    }

    pub fn member_history(&self, i: usize) -> Vec<f64> {
        self.residual_history.iter().map(|r| r[i]).collect()
    }
}

/// Sampled kinematics of every member, one column each.
struct Kinematics {
    x: DMatrix<f64>,
    y: DMatrix<f64>,
    vx: DMatrix<f64>,
    vy: DMatrix<f64>,
    ax: DMatrix<f64>,
    ay: DMatrix<f64>,
    c: DMatrix<f64>,
    s: DMatrix<f64>,
    psi: DMatrix<f64>,
    cos_psi: DMatrix<f64>,
    sin_psi: DMatrix<f64>,
}

/// Constraint targets `g` for the x- and y-parts, one column per member.
struct Targets {
    vel: [DMatrix<f64>; 2],
    acc: [DMatrix<f64>; 2],
    /// Row `(m * n_o + j) * n_p + k`.
    coll: [DMatrix<f64>; 2],
    trig: [DMatrix<f64>; 2],
}

#[derive(Debug, Clone)]
pub struct BatchSolver {
    problem: BatchProblem,
    rho: f64,
    ftf: DMatrix<f64>,
    hessian: DMatrix<f64>,
    constraints: DMatrix<f64>,
    heading_constraints: DMatrix<f64>,
    cache: FactorCache,
    heading_cache: FactorCache,
    heading_multiplier_rate: f64,
}

impl BatchSolver {
    pub fn new(problem: BatchProblem, rho: f64) -> Result<Self> {
        problem.validate()?;
        if !(rho >= 0.0) {
            return Err(Error::InvalidParameter("rho must be non-negative"));
        }
        let b = &problem.basis;
        let n = b.n_coeffs();
        let (p, pd, pdd) = (b.p(), b.pdot(), b.pddot());
        let ptp = p.transpose() * p;
        let n_o = problem.obstacles.len() as f64;
        let offs = problem.footprint.offsets();
        let n_c = offs.len() as f64;
        let sum_r: f64 = offs.iter().sum();
        let sum_r2: f64 = offs.iter().map(|r| r * r).sum();
        // F'F computed once from its block structure
        let mut ftf = DMatrix::zeros(2 * n, 2 * n);
        let top = pd.transpose() * pd + pdd.transpose() * pdd + &ptp * (n_o * n_c);
        ftf.view_mut((0, 0), (n, n)).copy_from(&top);
        let cross = &ptp * (n_o * sum_r);
        ftf.view_mut((0, n), (n, n)).copy_from(&cross);
        ftf.view_mut((n, 0), (n, n)).copy_from(&cross);
        ftf.view_mut((n, n), (n, n)).copy_from(&(&ptp * (n_o * sum_r2 + 1.0)));
        let w = problem.weights;
        let mut hessian = DMatrix::zeros(2 * n, 2 * n);
        hessian
            .view_mut((0, 0), (n, n))
            .copy_from(&((pdd.transpose() * pdd) * (2.0 * w.smoothness) + &ptp * (2.0 * w.tracking)));
        let ab = b.boundary_matrix(problem.pattern);
        let mut constraints = DMatrix::zeros(ab.nrows(), 2 * n);
        constraints.view_mut((0, 0), (ab.nrows(), n)).copy_from(&ab);
        let heading_constraints = b.boundary_matrix(BoundaryPattern {
            start_order: 1,
            goal_order: 1,
        });
        Ok(Self {
            problem,
            rho,
            ftf,
            hessian,
            constraints,
            heading_constraints,
            cache: FactorCache::new(),
            heading_cache: FactorCache::new(),
            heading_multiplier_rate: 0.0,
        })
    }

    /// Scales the heading multiplier update relative to `rho`. Zero keeps
    /// the heading multipliers at their initial value.
    pub fn with_heading_multiplier_rate(mut self, rate: f64) -> Self {
        self.heading_multiplier_rate = rate.max(0.0);
        self
    }

    pub fn problem(&self) -> &BatchProblem {
        &self.problem
    }

    pub fn factorizations(&self) -> usize {
        self.cache.factorizations()
    }

    pub fn heading_factorizations(&self) -> usize {
        self.heading_cache.factorizations()
    }

    fn n(&self) -> usize {
        self.problem.basis.n_coeffs()
    }

    fn polar_len(&self) -> usize {
        self.problem.footprint.n_c() * self.problem.obstacles.len() * self.problem.basis.n_p()
    }

    /// Default sampling distribution over `(xi_x, xi_y)`: the straight line
    /// plus independent noise of std `spread` on every coefficient above linear.
    pub fn default_distribution(&self, spread: f64) -> (DVector<f64>, DMatrix<f64>) {
        let b = &self.problem.basis;
        let n = self.n();
        let mut mean = DVector::zeros(2 * n);
        for ax in 0..2 {
            let bd = &self.problem.boundary[ax];
            mean.rows_mut(ax * n, n).copy_from(&b.line_coeffs(bd.start[0], bd.goal[0]));
        }
        let mut cov = DMatrix::zeros(2 * n, 2 * n);
        for ax in 0..2 {
            for j in 2..n {
                cov[(ax * n + j, ax * n + j)] = spread * spread;
            }
        }
        (mean, cov)
    }

    /// State seeded from coefficient samples `(xi_x, xi_y)`.
    pub fn init_state(&self, samples: &[DVector<f64>]) -> Result<BatchState> {
        let n = self.n();
        let n_b = samples.len();
        if n_b == 0 {
            return Err(Error::EmptyBatch);
        }
        let n_p = self.problem.basis.n_p();
        let h0 = self.problem.heading_boundary[0];
        let dir = angle2d(
            self.problem.boundary[0].goal[0] - self.problem.boundary[0].start[0],
            self.problem.boundary[1].goal[0] - self.problem.boundary[1].start[0],
        );
        let heading = unwrap_near(dir, h0);
        let mut zx = DMatrix::zeros(2 * n, n_b);
        let mut zy = DMatrix::zeros(2 * n, n_b);
        let mut psi = DMatrix::zeros(n, n_b);
        for (i, smp) in samples.iter().enumerate() {
            check_dim("sample length", 2 * n, smp.len())?;
            zx.view_mut((0, i), (n, 1)).copy_from(&smp.rows(0, n));
            zy.view_mut((0, i), (n, 1)).copy_from(&smp.rows(n, n));
            zx[(n, i)] = cos(heading);
            zy[(n, i)] = sin(heading);
            psi[(0, i)] = heading;
        }
        let m = self.polar_len();
        let mut st = BatchState {
            zx,
            zy,
            psi,
            lambda_x: DMatrix::zeros(2 * n, n_b),
            lambda_y: DMatrix::zeros(2 * n, n_b),
            lambda_psi: DMatrix::zeros(n, n_b),
            alpha_c: alloc::vec![0.0; m * n_b],
            d_c: alloc::vec![1.0; m * n_b],
            alpha_v: alloc::vec![0.0; n_p * n_b],
            d_v: alloc::vec![0.0; n_p * n_b],
            alpha_a: alloc::vec![0.0; n_p * n_b],
            d_a: alloc::vec![0.0; n_p * n_b],
            iteration: 0,
        };
        self.alpha_step(&mut st);
        self.d_step(&mut st);
        Ok(st)
    }

    fn kinematics(&self, st: &BatchState) -> Kinematics {
        let b = &self.problem.basis;
        let n = self.n();
        let (p, pd, pdd) = (b.p(), b.pdot(), b.pddot());
        let xp = st.zx.rows(0, n);
        let yp = st.zy.rows(0, n);
        let psi = p * &st.psi;
        Kinematics {
            x: p * xp,
            y: p * yp,
            vx: pd * xp,
            vy: pd * yp,
            ax: pdd * xp,
            ay: pdd * yp,
            c: p * st.zx.rows(n, n),
            s: p * st.zy.rows(n, n),
            cos_psi: psi.map(cos),
            sin_psi: psi.map(sin),
            psi,
        }
    }

    fn targets(&self, st: &BatchState, kin: &Kinematics) -> Targets {
        let prob = &self.problem;
        let n_p = prob.basis.n_p();
        let n_b = st.batch_size();
        let n_o = prob.obstacles.len();
        let n_c = prob.footprint.n_c();
        let m = self.polar_len();
        let mut vel = [DMatrix::zeros(n_p, n_b), DMatrix::zeros(n_p, n_b)];
        let mut acc = [DMatrix::zeros(n_p, n_b), DMatrix::zeros(n_p, n_b)];
        let mut coll = [DMatrix::zeros(m, n_b), DMatrix::zeros(m, n_b)];
        let mut trig = [DMatrix::zeros(n_p, n_b), DMatrix::zeros(n_p, n_b)];
        for i in 0..n_b {
            for k in 0..n_p {
                let pi = i * n_p + k;
                let (av, aa) = (st.alpha_v[pi], st.alpha_a[pi]);
                vel[0][(k, i)] = st.d_v[pi] * prob.v_max * cos(av);
                vel[1][(k, i)] = st.d_v[pi] * prob.v_max * sin(av);
                acc[0][(k, i)] = st.d_a[pi] * prob.a_max * cos(aa);
                acc[1][(k, i)] = st.d_a[pi] * prob.a_max * sin(aa);
                trig[0][(k, i)] = kin.cos_psi[(k, i)];
                trig[1][(k, i)] = kin.sin_psi[(k, i)];
            }
            for mc in 0..n_c {
                for j in 0..n_o {
                    let (ea, eb) = prob.effective_axes(j);
                    let centers = &prob.obstacles[j].centers;
                    for k in 0..n_p {
                        let row = (mc * n_o + j) * n_p + k;
                        let idx = i * m + row;
                        let (sa, ca) = sincos(st.alpha_c[idx]);
                        let d = st.d_c[idx];
                        coll[0][(row, i)] = centers[k][0] + ea * d * ca;
                        coll[1][(row, i)] = centers[k][1] + eb * d * sa;
                    }
                }
            }
        }
        Targets { vel, acc, coll, trig }
    }

    /// `F' g` for one part, one column per member.
    fn ft_g(&self, t: &Targets, part: usize) -> DMatrix<f64> {
        let prob = &self.problem;
        let b = &prob.basis;
        let n = self.n();
        let n_p = b.n_p();
        let n_b = t.vel[part].ncols();
        let n_o = prob.obstacles.len();
        let offs = prob.footprint.offsets();
        let mut sum = DMatrix::zeros(n_p, n_b);
        let mut sum_r = t.trig[part].clone();
        let coll = &t.coll[part];
        for (mc, &r) in offs.iter().enumerate() {
            for j in 0..n_o {
                let rows = coll.rows((mc * n_o + j) * n_p, n_p);
                sum += &rows;
                sum_r += rows * r;
            }
        }
        let mut out = DMatrix::zeros(2 * n, n_b);
        let top = b.pdot().tr_mul(&t.vel[part]) + b.pddot().tr_mul(&t.acc[part]) + b.p().tr_mul(&sum);
        out.rows_mut(0, n).copy_from(&top);
        out.rows_mut(n, n).copy_from(&b.p().tr_mul(&sum_r));
        out
    }

    /// Coefficient step for all members through one shared factor.
    pub fn xi_step(&mut self, st: &mut BatchState) -> Result<()> {
        let kin = self.kinematics(st);
        let t = self.targets(st, &kin);
        let n = self.n();
        let n_b = st.batch_size();
        let rho = self.rho;
        let ftgs = [self.ft_g(&t, 0), self.ft_g(&t, 1)];
        let prob = &self.problem;
        let (hess, ftf, cons) = (&self.hessian, &self.ftf, &self.constraints);
        if rho == 0.0 {
            // copies drop out of the cost; only the position blocks are determined
            let rows = cons.nrows();
            let factor = self.cache.get_or_factorize(rho, || {
                (hess.view((0, 0), (n, n)).into_owned(), cons.view((0, 0), (rows, n)).into_owned())
            })?;
            let p = prob.basis.p();
            let mut q_cols = DMatrix::zeros(n, 2 * n_b);
            let mut b_cols = DMatrix::zeros(rows, 2 * n_b);
            for part in 0..2 {
                let lam = if part == 0 { &st.lambda_x } else { &st.lambda_y };
                let q = p.tr_mul(&prob.desired[part]) * (-2.0 * prob.weights.tracking);
                let rhs = prob.boundary[part].rhs(prob.pattern);
                for i in 0..n_b {
                    q_cols.set_column(part * n_b + i, &(&q - lam.view((0, i), (n, 1))));
                    b_cols.set_column(part * n_b + i, &rhs);
                }
            }
            let (xi, _) = factor.solve_columns(&q_cols, &b_cols)?;
            st.zx.rows_mut(0, n).copy_from(&xi.columns(0, n_b));
            st.zy.rows_mut(0, n).copy_from(&xi.columns(n_b, n_b));
            return Ok(());
        }
        let factor = self.cache.get_or_factorize(rho, || (hess + ftf * rho, cons.clone()))?;
        let mut q_cols = DMatrix::zeros(2 * n, 2 * n_b);
        let mut b_cols = DMatrix::zeros(cons.nrows(), 2 * n_b);
        let p = prob.basis.p();
        for part in 0..2 {
            let ftg = &ftgs[part];
            let lam = if part == 0 { &st.lambda_x } else { &st.lambda_y };
            let mut q = DVector::zeros(2 * n);
            q.rows_mut(0, n).copy_from(&(p.tr_mul(&prob.desired[part]) * (-2.0 * prob.weights.tracking)));
            let rhs = prob.boundary[part].rhs(prob.pattern);
            for i in 0..n_b {
                let col = &q - lam.column(i) - ftg.column(i) * rho;
                q_cols.set_column(part * n_b + i, &col);
                b_cols.set_column(part * n_b + i, &rhs);
            }
        }
        let (xi, _) = factor.solve_columns(&q_cols, &b_cols)?;
        st.zx.copy_from(&xi.columns(0, n_b));
        st.zy.copy_from(&xi.columns(n_b, n_b));
        Ok(())
    }

    /// Fits the heading to the unwrapped angle of the cosine/sine copies.
    pub fn heading_step(&mut self, st: &mut BatchState) -> Result<()> {
        let kin = self.kinematics(st);
        let n_b = st.batch_size();
        let target = self.heading_targets(&kin, self.problem.basis.n_p(), n_b);
        let prob = &self.problem;
        let b = &prob.basis;
        let rho = self.rho.max(1e-6);
        let w = prob.weights.heading;
        let cons = &self.heading_constraints;
        let pdd = b.pddot();
        let p = b.p();
        let factor = self.heading_cache.get_or_factorize(rho, || {
            ((pdd.transpose() * pdd) * (2.0 * w) + (p.transpose() * p) * rho, cons.clone())
        })?;
        let q_cols = -(&st.lambda_psi + p.tr_mul(&target) * rho);
        let rhs = DVector::from_column_slice(&prob.heading_boundary);
        let b_cols = DMatrix::from_fn(2, n_b, |r, _| rhs[r]);
        let (xi, _) = factor.solve_columns(&q_cols, &b_cols)?;
        st.psi.copy_from(&xi);
        if self.heading_multiplier_rate > 0.0 {
            let fit = p * &st.psi - &target;
            st.lambda_psi -= p.tr_mul(&fit) * (self.heading_multiplier_rate * rho);
        }
        Ok(())
    }

    fn heading_targets(&self, kin: &Kinematics, n_p: usize, n_b: usize) -> DMatrix<f64> {
        DMatrix::from_fn(n_p, n_b, |k, i| {
            let (c, s) = (kin.c[(k, i)], kin.s[(k, i)]);
            let prev = kin.psi[(k, i)];
            if c == 0.0 && s == 0.0 {
                prev
            } else {
                unwrap_near(atan2(s, c), prev)
            }
        })
    }

    /// Closed-form angles of footprint-circle offsets, velocity and acceleration.
    pub fn alpha_step(&self, st: &mut BatchState) {
        let kin = self.kinematics(st);
        let prob = &self.problem;
        let n_p = prob.basis.n_p();
        let n_o = prob.obstacles.len();
        let m = self.polar_len();
        for i in 0..st.batch_size() {
            for k in 0..n_p {
                let pi = i * n_p + k;
                st.alpha_v[pi] = angle2d(kin.vx[(k, i)], kin.vy[(k, i)]);
                st.alpha_a[pi] = angle2d(kin.ax[(k, i)], kin.ay[(k, i)]);
            }
            for (mc, &r) in prob.footprint.offsets().iter().enumerate() {
                for j in 0..n_o {
                    let (ea, eb) = prob.effective_axes(j);
                    let centers = &prob.obstacles[j].centers;
                    for k in 0..n_p {
                        let xt = kin.x[(k, i)] + r * kin.cos_psi[(k, i)] - centers[k][0];
                        let yt = kin.y[(k, i)] + r * kin.sin_psi[(k, i)] - centers[k][1];
                        // direction in coordinates scaled by the semi-axes
                        st.alpha_c[i * m + (mc * n_o + j) * n_p + k] = angle2d(xt / ea, yt / eb);
                    }
                }
            }
        }
    }

    /// Closed-form scales: `[1, inf)` for collisions, `[0, 1]` for the bounds.
    pub fn d_step(&self, st: &mut BatchState) {
        let kin = self.kinematics(st);
        let prob = &self.problem;
        let n_p = prob.basis.n_p();
        let n_o = prob.obstacles.len();
        let m = self.polar_len();
        for i in 0..st.batch_size() {
            for k in 0..n_p {
                let pi = i * n_p + k;
                st.d_v[pi] = closed_form_d(kin.vx[(k, i)], kin.vy[(k, i)], st.alpha_v[pi], prob.v_max, prob.v_max, 0.0, 1.0);
                st.d_a[pi] = closed_form_d(kin.ax[(k, i)], kin.ay[(k, i)], st.alpha_a[pi], prob.a_max, prob.a_max, 0.0, 1.0);
            }
            for (mc, &r) in prob.footprint.offsets().iter().enumerate() {
                for j in 0..n_o {
                    let (ea, eb) = prob.effective_axes(j);
                    let centers = &prob.obstacles[j].centers;
                    for k in 0..n_p {
                        let xt = kin.x[(k, i)] + r * kin.cos_psi[(k, i)] - centers[k][0];
                        let yt = kin.y[(k, i)] + r * kin.sin_psi[(k, i)] - centers[k][1];
                        let idx = i * m + (mc * n_o + j) * n_p + k;
                        st.d_c[idx] = closed_form_d(xt, yt, st.alpha_c[idx], ea, eb, 1.0, D_CAP);
                    }
                }
            }
        }
    }

    /// `lambda <- lambda - rho F'(F xi - g)`. Returns the residuals at the
    /// current iterate.
    pub fn multiplier_step(&self, st: &mut BatchState) -> Vec<(f64, f64)> {
        let kin = self.kinematics(st);
        let t = self.targets(st, &kin);
        let res = self.residuals_from(&kin, &t, st.batch_size());
        let rho = self.rho;
        for part in 0..2 {
            let z = if part == 0 { &st.zx } else { &st.zy };
            let grad = &self.ftf * z - self.ft_g(&t, part);
            let lam = if part == 0 { &mut st.lambda_x } else { &mut st.lambda_y };
            *lam -= grad * rho;
        }
        res
    }

    /// `(norm, max_abs)` of `F xi - g` per member.
    pub fn residuals(&self, st: &BatchState) -> Vec<(f64, f64)> {
        let kin = self.kinematics(st);
        let t = self.targets(st, &kin);
        self.residuals_from(&kin, &t, st.batch_size())
    }

    fn residuals_from(&self, kin: &Kinematics, t: &Targets, n_b: usize) -> Vec<(f64, f64)> {
        let prob = &self.problem;
        let n_p = prob.basis.n_p();
        let n_o = prob.obstacles.len();
        let offs = prob.footprint.offsets();
        (0..n_b)
            .map(|i| {
                let mut sq = 0.0;
                let mut mx: f64 = 0.0;
                let mut add = |r: f64| {
                    sq += r * r;
                    mx = mx.max(r.abs());
                };
                for k in 0..n_p {
                    add(kin.vx[(k, i)] - t.vel[0][(k, i)]);
                    add(kin.vy[(k, i)] - t.vel[1][(k, i)]);
                    add(kin.ax[(k, i)] - t.acc[0][(k, i)]);
                    add(kin.ay[(k, i)] - t.acc[1][(k, i)]);
                    add(kin.c[(k, i)] - t.trig[0][(k, i)]);
                    add(kin.s[(k, i)] - t.trig[1][(k, i)]);
                }
                for (mc, &r) in offs.iter().enumerate() {
                    for j in 0..n_o {
                        for k in 0..n_p {
                            let row = (mc * n_o + j) * n_p + k;
                            add(kin.x[(k, i)] + r * kin.c[(k, i)] - t.coll[0][(row, i)]);
                            add(kin.y[(k, i)] + r * kin.s[(k, i)] - t.coll[1][(row, i)]);
                        }
                    }
                }
                (sqrt(sq), mx)
            })
            .collect()
    }

    /// Objective of member `i`: smoothness, tracking and heading smoothness.
    pub fn objective(&self, st: &BatchState, i: usize) -> f64 {
        let prob = &self.problem;
        let b = &prob.basis;
        let n = self.n();
        let w = prob.weights;
        let mut total = 0.0;
        for part in 0..2 {
            let z = if part == 0 { &st.zx } else { &st.zy };
            let xi = z.view((0, i), (n, 1));
            total += w.smoothness * (b.pddot() * xi).norm_squared();
            total += w.tracking * (b.p() * xi - &prob.desired[part]).norm_squared();
        }
        total += w.heading * (b.pddot() * st.psi.column(i)).norm_squared();
        total
    }

    /// Direct check of the raw footprint, velocity and acceleration constraints.
    pub fn raw_constraints_hold(&self, st: &BatchState, i: usize, margin: f64) -> bool {
        let kin = self.kinematics(st);
        let prob = &self.problem;
        let n_p = prob.basis.n_p();
        for k in 0..n_p {
            if libm::hypot(kin.vx[(k, i)], kin.vy[(k, i)]) > prob.v_max * (1.0 + margin) {
                return false;
            }
            if libm::hypot(kin.ax[(k, i)], kin.ay[(k, i)]) > prob.a_max * (1.0 + margin) {
                return false;
            }
            let (ch, sh) = (kin.cos_psi[(k, i)], kin.sin_psi[(k, i)]);
            for &r in prob.footprint.offsets() {
                let (cx, cy) = (kin.x[(k, i)] + r * ch, kin.y[(k, i)] + r * sh);
                for (j, o) in prob.obstacles.iter().enumerate() {
                    let (ea, eb) = prob.effective_axes(j);
                    let (dx, dy) = ((cx - o.centers[k][0]) / ea, (cy - o.centers[k][1]) / eb);
                    if sqrt(dx * dx + dy * dy) < 1.0 - margin {
                        return false;
                    }
                }
            }
        }
        true
    }

    /// One sweep of all blocks; returns the per-member residuals after it.
    pub fn am_iteration(&mut self, st: &mut BatchState) -> Result<Vec<(f64, f64)>> {
        self.xi_step(st)?;
        self.heading_step(st)?;
        self.alpha_step(st);
        self.d_step(st);
        let res = self.multiplier_step(st);
        st.iteration += 1;
        Ok(res)
    }

    pub fn member_coeffs(&self, st: &BatchState, i: usize) -> TrajectoryCoeffs {
        let n = self.n();
        TrajectoryCoeffs {
            x: st.zx.view((0, i), (n, 1)).into_owned().column(0).into_owned(),
            y: st.zy.view((0, i), (n, 1)).into_owned().column(0).into_owned(),
            z: DVector::zeros(n),
            psi: Some(st.psi.column(i).into_owned()),
        }
    }

    pub fn member_trajectory(&self, st: &BatchState, i: usize) -> Result<SampledTrajectory> {
        crate::basis::eval_trajectory(&self.problem.basis, &self.member_coeffs(st, i))
    }

    /// Runs `max_iter` sweeps from `state` and ranks the members.
    pub fn run(&mut self, mut st: BatchState, params: &BatchParams) -> Result<RankedSolutions> {
        let mut residual_history = Vec::with_capacity(params.max_iter);
        for _ in 0..params.max_iter {
            let res = self.am_iteration(&mut st)?;
            residual_history.push(res.iter().map(|r| r.0).collect());
        }
        let res = self.residuals(&st);
        let members: Vec<MemberResult> = (0..st.batch_size())
            .map(|i| {
                let cost = self.objective(&st, i);
                let (norm, max) = res[i];
                MemberResult {
                    coeffs: self.member_coeffs(&st, i),
                    cost,
                    augmented_cost: cost + self.rho * norm,
                    residual_norm: norm,
                    residual_max: max,
                    feasible: max <= params.tol && self.raw_constraints_hold(&st, i, params.margin),
                }
            })
            .collect();
        let best = members
            .iter()
            .enumerate()
            .filter(|(_, m)| m.feasible)
            .min_by(|a, b| a.1.augmented_cost.total_cmp(&b.1.augmented_cost))
            .map(|(i, _)| i);
        Ok(RankedSolutions {
            members,
            best,
            iterations: residual_history.len(),
            residual_history,
            factorizations: self.cache.factorizations(),
            heading_factorizations: self.heading_cache.factorizations(),
            state: st,
        })
    }
}

/// Samples the default distribution and runs the batch optimizer.
pub fn solve_batch_opt(problem: BatchProblem, params: &BatchParams) -> Result<RankedSolutions> {
    if params.batch_size == 0 {
        return Err(Error::EmptyBatch);
    }
    let mut solver = BatchSolver::new(problem, params.rho)?.with_heading_multiplier_rate(params.heading_multiplier_rate);
    let (mean, cov) = solver.default_distribution(params.init_spread);
    let samples = sample_initializations(&mean, &cov, params.batch_size, params.seed)?;
    let st = solver.init_state(&samples)?;
    solver.run(st, params)
}
