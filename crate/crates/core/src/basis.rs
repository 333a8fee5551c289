//! Time-sampled polynomial basis.
//!
//! Works in normalized time `tau = (t - t0) / (tf - t0)`. Column 0 is the
//! constant 1, column 1 is `tau`, and column `j >= 2` is the shifted
//! Legendre polynomial `L_j(2 tau - 1)`. The span is that of the monomials
//! up to `degree`, but the Gram matrix stays well conditioned at degree 10,
//! where plain monomials reach condition numbers near 1e13.

use alloc::vec::Vec;
use nalgebra::{DMatrix, DVector};

use crate::error::{check_dim, Error, Result};

pub const DEFAULT_DEGREE: usize = 10;

/// Uniform sampling of a planning horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    t0: f64,
    tf: f64,
    timestamps: Vec<f64>,
}

impl TimeGrid {
    pub fn uniform(t0: f64, tf: f64, n_p: usize) -> Result<Self> {
        if !(tf > t0) || !t0.is_finite() || !tf.is_finite() {
            return Err(Error::InvalidHorizon { t0, tf });
        }
        if n_p < 2 {
            return Err(Error::TooFewSamples(n_p));
        }
        let step = (tf - t0) / (n_p - 1) as f64;
        let mut timestamps: Vec<f64> = (0..n_p).map(|k| t0 + step * k as f64).collect();
        // pin the end exactly
        timestamps[n_p - 1] = tf;
        Ok(Self { t0, tf, timestamps })
    }

    pub fn t0(&self) -> f64 {
        self.t0
    }

    pub fn tf(&self) -> f64 {
        self.tf
    }

    pub fn duration(&self) -> f64 {
        self.tf - self.t0
    }

    pub fn n_p(&self) -> usize {
        self.timestamps.len()
    }

    pub fn step(&self) -> f64 {
        self.duration() / (self.n_p() - 1) as f64
    }

    pub fn timestamps(&self) -> &[f64] {
        &self.timestamps
    }
}

/// Which boundary derivatives are pinned: `start_order` of (position,
/// velocity, acceleration) at t0 and `goal_order` of them at tf.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BoundaryPattern {
    pub start_order: usize,
    pub goal_order: usize,
}

impl BoundaryPattern {
    pub const FULL: Self = Self {
        start_order: 3,
        goal_order: 3,
    };

    pub fn rows(&self) -> usize {
        self.start_order + self.goal_order
    }
}

impl Default for BoundaryPattern {
    fn default() -> Self {
        Self::FULL
    }
}

/// Position, velocity and acceleration at both ends of one axis.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct AxisBoundary {
    pub start: [f64; 3],
    pub goal: [f64; 3],
}

impl AxisBoundary {
    pub fn rest_to_rest(start: f64, goal: f64) -> Self {
        Self {
            start: [start, 0.0, 0.0],
            goal: [goal, 0.0, 0.0],
        }
    }

    pub fn rhs(&self, pattern: BoundaryPattern) -> DVector<f64> {
        let mut v = Vec::with_capacity(pattern.rows());
        v.extend_from_slice(&self.start[..pattern.start_order]);
        v.extend_from_slice(&self.goal[..pattern.goal_order]);
        DVector::from_vec(v)
    }
}

/// Legendre values and first two derivatives at `x` for orders `0..out.len()`.
fn legendre(x: f64, out: &mut [f64], d1: &mut [f64], d2: &mut [f64]) {
    let n = out.len();
    out[0] = 1.0;
    d1[0] = 0.0;
    d2[0] = 0.0;
    if n > 1 {
        out[1] = x;
        d1[1] = 1.0;
        d2[1] = 0.0;
    }
    for k in 1..n - 1 {
        let kf = k as f64;
        out[k + 1] = ((2.0 * kf + 1.0) * x * out[k] - kf * out[k - 1]) / (kf + 1.0);
        d1[k + 1] = d1[k - 1] + (2.0 * kf + 1.0) * out[k];
        d2[k + 1] = d2[k - 1] + (2.0 * kf + 1.0) * d1[k];
    }
}

/// Basis matrices sampled on a [`TimeGrid`].
#[derive(Debug, Clone, PartialEq)]
pub struct BasisSet {
    grid: TimeGrid,
    degree: usize,
    p: DMatrix<f64>,
    pdot: DMatrix<f64>,
    pddot: DMatrix<f64>,
}

pub fn build_basis(t0: f64, tf: f64, n_p: usize, degree: usize) -> Result<BasisSet> {
    BasisSet::new(TimeGrid::uniform(t0, tf, n_p)?, degree)
}

impl BasisSet {
    pub fn new(grid: TimeGrid, degree: usize) -> Result<Self> {
        let n = degree + 1;
        let n_p = grid.n_p();
        let inv_t = 1.0 / grid.duration();
        let mut p = DMatrix::zeros(n_p, n);
        let mut pdot = DMatrix::zeros(n_p, n);
        let mut pddot = DMatrix::zeros(n_p, n);
        let mut leg = alloc::vec![0.0; n.max(2)];
        let mut dleg = alloc::vec![0.0; n.max(2)];
        let mut ddleg = alloc::vec![0.0; n.max(2)];
        for (row, &t) in grid.timestamps().iter().enumerate() {
            let tau = (t - grid.t0()) * inv_t;
            legendre(2.0 * tau - 1.0, &mut leg, &mut dleg, &mut ddleg);
            for j in 0..n {
                let (v, dv, ddv) = match j {
                    0 => (1.0, 0.0, 0.0),
                    1 => (tau, inv_t, 0.0),
                    // d/dt = (2/T) d/dx
                    _ => (leg[j], 2.0 * inv_t * dleg[j], 4.0 * inv_t * inv_t * ddleg[j]),
                };
                p[(row, j)] = v;
                pdot[(row, j)] = dv;
                pddot[(row, j)] = ddv;
            }
        }
        Ok(Self {
            grid,
            degree,
            p,
            pdot,
            pddot,
        })
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn n_coeffs(&self) -> usize {
        self.degree + 1
    }

    pub fn n_p(&self) -> usize {
        self.grid.n_p()
    }

    pub fn p(&self) -> &DMatrix<f64> {
        &self.p
    }

    pub fn pdot(&self) -> &DMatrix<f64> {
        &self.pdot
    }

    pub fn pddot(&self) -> &DMatrix<f64> {
        &self.pddot
    }

    /// Rows of P, Pdot, Pddot at t0 then tf selected by `pattern`.
    pub fn boundary_matrix(&self, pattern: BoundaryPattern) -> DMatrix<f64> {
        let n = self.n_coeffs();
        let last = self.n_p() - 1;
        let mats = [&self.p, &self.pdot, &self.pddot];
        let mut a = DMatrix::zeros(pattern.rows(), n);
        for k in 0..pattern.start_order {
            a.row_mut(k).copy_from(&mats[k].row(0));
        }
        for k in 0..pattern.goal_order {
            a.row_mut(pattern.start_order + k)
                .copy_from(&mats[k].row(last));
        }
        a
    }

    /// Least-squares coefficients of the straight line from `start` to `goal`.
    pub fn line_coeffs(&self, start: f64, goal: f64) -> DVector<f64> {
        let mut c = DVector::zeros(self.n_coeffs());
        c[0] = start;
        if self.degree >= 1 {
            c[1] = goal - start;
        } else {
            c[0] = 0.5 * (start + goal);
        }
        c
    }

    pub fn eval_axis(&self, coeffs: &DVector<f64>) -> Result<SampledAxis> {
        check_dim("axis coefficients", self.n_coeffs(), coeffs.len())?;
        Ok(SampledAxis {
            pos: &self.p * coeffs,
            vel: &self.pdot * coeffs,
            acc: &self.pddot * coeffs,
        })
    }
}

/// Coefficient vectors per axis.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryCoeffs {
    pub x: DVector<f64>,
    pub y: DVector<f64>,
    pub z: DVector<f64>,
    pub psi: Option<DVector<f64>>,
}

impl TrajectoryCoeffs {
    pub fn zeros(n: usize) -> Self {
        Self {
            x: DVector::zeros(n),
            y: DVector::zeros(n),
            z: DVector::zeros(n),
            psi: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampledAxis {
    pub pos: DVector<f64>,
    pub vel: DVector<f64>,
    pub acc: DVector<f64>,
}

impl SampledAxis {
    pub fn zeros(n_p: usize) -> Self {
        Self {
            pos: DVector::zeros(n_p),
            vel: DVector::zeros(n_p),
            acc: DVector::zeros(n_p),
        }
    }
}

/// Positions, velocities and accelerations on the grid.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledTrajectory {
    pub t: Vec<f64>,
    pub x: SampledAxis,
    pub y: SampledAxis,
    pub z: SampledAxis,
    pub psi: Option<SampledAxis>,
}

impl SampledTrajectory {
    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    pub fn position(&self, k: usize) -> [f64; 3] {
        [self.x.pos[k], self.y.pos[k], self.z.pos[k]]
    }

    pub fn velocity(&self, k: usize) -> [f64; 3] {
        [self.x.vel[k], self.y.vel[k], self.z.vel[k]]
    }

    pub fn acceleration(&self, k: usize) -> [f64; 3] {
        [self.x.acc[k], self.y.acc[k], self.z.acc[k]]
    }
}

pub fn eval_trajectory(basis: &BasisSet, coeffs: &TrajectoryCoeffs) -> Result<SampledTrajectory> {
    let psi = match &coeffs.psi {
        Some(c) => Some(basis.eval_axis(c)?),
        None => None,
    };
    Ok(SampledTrajectory {
        t: basis.grid().timestamps().to_vec(),
        x: basis.eval_axis(&coeffs.x)?,
        y: basis.eval_axis(&coeffs.y)?,
        z: basis.eval_axis(&coeffs.z)?,
        psi,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn binom(n: u64, k: u64) -> f64 {
        (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
    }

    // explicit shifted Legendre sum, independent of the recurrence
    fn direct(c: &[f64], tau: f64) -> f64 {
        c.iter()
            .enumerate()
            .map(|(j, &cj)| {
                let phi = match j {
                    0 => 1.0,
                    1 => tau,
                    _ => {
                        let n = j as u64;
                        (0..=n)
                            .map(|k| {
                                let b = binom(n, k);
                                b * b * libm::pow(tau - 1.0, (n - k) as f64) * libm::pow(tau, k as f64)
                            })
                            .sum::<f64>()
                    }
                };
                cj * phi
            })
            .sum()
    }

    #[test]
    fn constant_basis() {
        let b = build_basis(0.0, 2.0, 3, 0).unwrap();
        assert_eq!(b.p(), &DMatrix::from_element(3, 1, 1.0));
        assert_eq!(b.pdot(), &DMatrix::zeros(3, 1));
    }

    #[test]
    fn linear_basis() {
        let b = build_basis(0.0, 1.0, 2, 1).unwrap();
        assert_eq!(b.p(), &DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 1.0, 1.0]));
        assert_eq!(b.pdot(), &DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 1.0]));
    }

    #[test]
    fn rejects_bad_horizon() {
        assert!(matches!(build_basis(1.0, 1.0, 10, 3), Err(Error::InvalidHorizon { .. })));
        assert!(matches!(build_basis(0.0, 1.0, 1, 3), Err(Error::TooFewSamples(1))));
    }

    #[test]
    fn grid_endpoints() {
        let g = TimeGrid::uniform(0.3, 7.1, 37).unwrap();
        assert_eq!(g.timestamps()[0], 0.3);
        assert_eq!(g.timestamps()[36], 7.1);
        assert!(g.timestamps().windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn finite_difference_derivatives() {
        // fine grid, central differences of P c against Pdot c and Pdot c against Pddot c
        let b = build_basis(0.0, 3.0, 2001, 5).unwrap();
        let c = DVector::from_vec(alloc::vec![0.4, -1.2, 2.0, 0.7, -0.9, 0.3]);
        let s = b.eval_axis(&c).unwrap();
        let h = b.grid().step();
        for k in 1..b.n_p() - 1 {
            let fd_v = (s.pos[k + 1] - s.pos[k - 1]) / (2.0 * h);
            let fd_a = (s.vel[k + 1] - s.vel[k - 1]) / (2.0 * h);
            assert!((fd_v - s.vel[k]).abs() < 1e-4);
            assert!((fd_a - s.acc[k]).abs() < 1e-4);
        }
    }

    #[test]
    fn fd_on_coarse_grid() {
        let b = build_basis(0.0, 1.0, 50, 5).unwrap();
        let c = DVector::from_vec(alloc::vec![0.1, 0.5, -0.3, 0.2, 0.05, -0.02]);
        let h = 1e-6;
        for (k, &t) in b.grid().timestamps().iter().enumerate().skip(1).take(47) {
            let fd = (direct(c.as_slice(), t + h) - direct(c.as_slice(), t - h)) / (2.0 * h);
            let v = (b.pdot().row(k) * &c)[0];
            assert!((fd - v).abs() < 1e-4);
        }
    }

    #[test]
    fn eval_examples() {
        let b = build_basis(0.0, 1.0, 2, 1).unwrap();
        let z = b.eval_axis(&DVector::zeros(2)).unwrap();
        assert!(z.pos.iter().all(|&v| v == 0.0));
        let s = b.eval_axis(&DVector::from_vec(alloc::vec![1.0, 2.0])).unwrap();
        assert_eq!(s.pos.as_slice(), &[1.0, 3.0]);
        assert_eq!(s.vel.as_slice(), &[2.0, 2.0]);
        assert!(b.eval_axis(&DVector::zeros(3)).is_err());
    }

    #[test]
    fn boundary_rows() {
        let b = build_basis(0.0, 2.0, 11, 4).unwrap();
        let a = b.boundary_matrix(BoundaryPattern { start_order: 3, goal_order: 1 });
        assert_eq!(a.nrows(), 4);
        assert_eq!(a.row(1), b.pdot().row(0));
        assert_eq!(a.row(3), b.p().row(10));
        let rhs = AxisBoundary::rest_to_rest(1.0, 2.0).rhs(BoundaryPattern::FULL);
        assert_eq!(rhs.as_slice(), &[1.0, 0.0, 0.0, 2.0, 0.0, 0.0]);
    }

    proptest! {
        #[test]
        fn matches_direct_evaluation(c in proptest::collection::vec(-3.0f64..3.0, 8), tf in 0.5f64..20.0) {
            let b = build_basis(0.0, tf, 40, 7).unwrap();
            let cv = DVector::from_vec(c.clone());
            let s = b.eval_axis(&cv).unwrap();
            for (k, &t) in b.grid().timestamps().iter().enumerate() {
                let tau = t / tf;
                prop_assert!((s.pos[k] - direct(&c, tau)).abs() <= 1e-12);
            }
        }

        #[test]
        fn linear_in_coefficients(c1 in proptest::collection::vec(-3.0f64..3.0, 6),
                                  c2 in proptest::collection::vec(-3.0f64..3.0, 6),
                                  a in -2.0f64..2.0, bb in -2.0f64..2.0) {
            let b = build_basis(1.0, 4.0, 30, 5).unwrap();
            let v1 = DVector::from_vec(c1);
            let v2 = DVector::from_vec(c2);
            let lhs = b.eval_axis(&(&v1 * a + &v2 * bb)).unwrap();
            let s1 = b.eval_axis(&v1).unwrap();
            let s2 = b.eval_axis(&v2).unwrap();
            let rhs_acc = &s1.acc * a + &s2.acc * bb;
            let rhs_pos = &s1.pos * a + &s2.pos * bb;
            prop_assert!((lhs.pos - rhs_pos).amax() <= 1e-12);
            prop_assert!((lhs.acc - rhs_acc).amax() <= 1e-12);
        }
    }
}
