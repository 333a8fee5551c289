//! Closed-form polar and spherical sub-steps.

use alloc::vec::Vec;
use core::f64::consts::PI;
use libm::{atan2, cos, hypot, sin, sqrt};

use crate::error::{check_dim, Error, Result};

/// Upper cap for collision scale variables.
pub const D_CAP: f64 = 1e6;

/// Axis-aligned ellipsoid with semi-axes (a, a, b). In planar use `a` is
/// the x semi-axis and `b` the y semi-axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EllipsoidShape {
    a: f64,
    b: f64,
}

impl EllipsoidShape {
    pub fn new(a: f64, b: f64) -> Result<Self> {
        if !(a > 0.0 && b > 0.0) || !a.is_finite() || !b.is_finite() {
            return Err(Error::InvalidParameter("ellipsoid semi-axes must be positive"));
        }
        Ok(Self { a, b })
    }

    pub fn sphere(r: f64) -> Result<Self> {
        Self::new(r, r)
    }

    pub fn a(&self) -> f64 {
        self.a
    }

    pub fn b(&self) -> f64 {
        self.b
    }

    /// Grows both semi-axes by `r`.
    pub fn inflated(&self, r: f64) -> Result<Self> {
        Self::new(self.a + r, self.b + r)
    }
}

/// Polar variables of one constraint at one timestep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolarVars {
    pub d: f64,
    pub alpha: f64,
    pub beta: f64,
}

fn wrap_range(angle: f64) -> f64 {
    // atan2 may return -pi for negative-zero inputs
    if angle <= -PI {
        angle + 2.0 * PI
    } else {
        angle
    }
}

/// Unclamped ellipsoidal radius of `delta`.
pub fn scaled_norm(delta: [f64; 3], shape: EllipsoidShape) -> f64 {
    let (x, y, z) = (delta[0] / shape.a, delta[1] / shape.a, delta[2] / shape.b);
    sqrt(x * x + y * y + z * z)
}

pub fn los_distance(delta: [f64; 3], shape: EllipsoidShape) -> f64 {
    scaled_norm(delta, shape).max(1.0)
}

/// Angle of (dx, dy) in (-pi, pi]; the origin maps to 0.
pub fn angle2d(dx: f64, dy: f64) -> f64 {
    if dx == 0.0 && dy == 0.0 {
        return 0.0;
    }
    wrap_range(atan2(dy, dx))
}

/// Azimuth in (-pi, pi] and polar angle in [0, pi].
pub fn angles3d(delta: [f64; 3], shape: EllipsoidShape) -> (f64, f64) {
    let alpha = angle2d(delta[0], delta[1]);
    let planar = hypot(delta[0] / shape.a, delta[1] / shape.a);
    let beta = atan2(planar, delta[2] / shape.b);
    (alpha, beta)
}

/// Point on the scaled ellipsoid surface for the given polar variables.
pub fn polar_point(d: f64, alpha: f64, beta: f64, shape: EllipsoidShape) -> [f64; 3] {
    let sb = sin(beta);
    [
        shape.a * d * cos(alpha) * sb,
        shape.a * d * sin(alpha) * sb,
        shape.b * d * cos(beta),
    ]
}

/// Minimizer over [lower, upper] of `(x - a d cos(alpha))^2 + (y - b d sin(alpha))^2`,
/// with `a`, `b` the planar semi-axes.
pub fn closed_form_d(x_tilde: f64, y_tilde: f64, alpha: f64, a: f64, b: f64, lower: f64, upper: f64) -> f64 {
    let (s, c) = (sin(alpha), cos(alpha));
    let num = a * x_tilde * c + b * y_tilde * s;
    let den = a * a * c * c + b * b * s * s;
    (num / den).clamp(lower, upper)
}

/// Three-dimensional counterpart of [`closed_form_d`].
pub fn closed_form_d3(delta: [f64; 3], alpha: f64, beta: f64, shape: EllipsoidShape, lower: f64, upper: f64) -> f64 {
    let w = polar_point(1.0, alpha, beta, shape);
    let num = delta[0] * w[0] + delta[1] * w[1] + delta[2] * w[2];
    let den = w[0] * w[0] + w[1] * w[1] + w[2] * w[2];
    (num / den).clamp(lower, upper)
}

/// `lambda + rho * residual`, elementwise.
pub fn update_multiplier(lambda: &[f64], residual: &[f64], rho: f64) -> Result<Vec<f64>> {
    check_dim("multiplier residual", lambda.len(), residual.len())?;
    Ok(lambda.iter().zip(residual).map(|(l, r)| l + rho * r).collect())
}

/// In-place form of [`update_multiplier`].
pub fn update_multiplier_in_place(lambda: &mut [f64], residual: &[f64], rho: f64) -> Result<()> {
    check_dim("multiplier residual", lambda.len(), residual.len())?;
    for (l, r) in lambda.iter_mut().zip(residual) {
        *l += rho * r;
    }
    Ok(())
}

/// Shifts `angle` by a multiple of 2 pi to land nearest `reference`.
pub fn unwrap_near(angle: f64, reference: f64) -> f64 {
    let two_pi = 2.0 * PI;
    let k = libm::round((reference - angle) / two_pi);
    angle + k * two_pi
}

#[cfg(test)]
mod tests {
    use super::*;
    use core::f64::consts::{FRAC_PI_2, FRAC_PI_4};
    use proptest::prelude::*;

    fn shape() -> EllipsoidShape {
        EllipsoidShape::new(1.5, 0.7).unwrap()
    }

    #[test]
    fn los_examples() {
        let s = shape();
        assert_eq!(los_distance([3.0, 0.0, 0.0], s), 2.0);
        assert_eq!(los_distance([0.0, 0.0, 0.35], s), 1.0);
        assert!((los_distance([0.0, 0.0, 2.1], s) - 3.0).abs() < 1e-15);
    }

    #[test]
    fn angle2d_examples() {
        assert_eq!(angle2d(1.0, 0.0), 0.0);
        assert_eq!(angle2d(0.0, 2.0), FRAC_PI_2);
        assert!((angle2d(1.0, 1.0) - FRAC_PI_4).abs() < 1e-15);
        assert_eq!(angle2d(0.0, 0.0), 0.0);
        assert_eq!(angle2d(-0.0, -0.0), 0.0);
        assert_eq!(angle2d(-1.0, -0.0), PI);
    }

    #[test]
    fn angles3d_examples() {
        let s = shape();
        assert_eq!(angles3d([1.5, 0.0, 0.0], s), (0.0, FRAC_PI_2));
        assert_eq!(angles3d([0.0, 0.0, 0.7], s), (0.0, 0.0));
        assert_eq!(angles3d([0.0, 0.0, -0.7], s), (0.0, PI));
    }

    #[test]
    fn closed_form_d_examples() {
        assert_eq!(closed_form_d(2.0, 0.0, 0.0, 1.0, 1.0, 1.0, f64::INFINITY), 2.0);
        assert_eq!(closed_form_d(0.5, 0.0, 0.0, 1.0, 1.0, 1.0, f64::INFINITY), 1.0);
    }

    #[test]
    fn multiplier_examples() {
        assert_eq!(update_multiplier(&[0.3], &[0.0], 5.0).unwrap(), alloc::vec![0.3]);
        assert_eq!(update_multiplier(&[0.0], &[0.5], 1.0).unwrap(), alloc::vec![0.5]);
        let v = update_multiplier(&[1.0, -1.0], &[0.1, 0.2], 2.0).unwrap();
        assert!((v[0] - 1.2).abs() < 1e-15 && (v[1] + 0.6).abs() < 1e-15);
        assert!(update_multiplier(&[1.0], &[], 1.0).is_err());
    }

    #[test]
    fn rejects_bad_shape() {
        assert!(EllipsoidShape::new(0.0, 1.0).is_err());
        assert!(EllipsoidShape::new(1.0, -1.0).is_err());
    }

    #[test]
    fn unwrap_picks_nearest_branch() {
        assert!((unwrap_near(-3.0, 3.1) - (-3.0 + 2.0 * PI)).abs() < 1e-15);
        assert_eq!(unwrap_near(0.5, 0.4), 0.5);
    }

    fn quad(x: f64, y: f64, alpha: f64, a: f64, b: f64, d: f64) -> f64 {
        let ex = x - a * d * cos(alpha);
        let ey = y - b * d * sin(alpha);
        ex * ex + ey * ey
    }

    proptest! {
        #[test]
        fn polar_reconstruction(x in -20.0f64..20.0, y in -20.0f64..20.0, z in -20.0f64..20.0,
                                a in 0.2f64..3.0, b in 0.2f64..3.0) {
            let s = EllipsoidShape::new(a, b).unwrap();
            let delta = [x, y, z];
            prop_assume!(scaled_norm(delta, s) > 1.0);
            let d = los_distance(delta, s);
            let (al, be) = angles3d(delta, s);
            prop_assert!(al > -PI && al <= PI);
            prop_assert!((0.0..=PI).contains(&be));
            let p = polar_point(d, al, be, s);
            let scale = hypot(hypot(x, y), z);
            for k in 0..3 {
                prop_assert!((p[k] - delta[k]).abs() <= 1e-9 * scale);
            }
        }

        #[test]
        fn closed_form_d_grid_oracle(x in -5.0f64..5.0, y in -5.0f64..5.0, alpha in -PI..PI,
                                     a in 0.3f64..2.0, b in 0.3f64..2.0) {
            let d = closed_form_d(x, y, alpha, a, b, 0.0, 1.0);
            // coarse grid, then a fine grid around the coarse winner
            let search = |lo: f64, hi: f64, n: usize| {
                let mut best = (f64::INFINITY, lo);
                for k in 0..=n {
                    let cand = lo + (hi - lo) * k as f64 / n as f64;
                    let v = quad(x, y, alpha, a, b, cand);
                    if v < best.0 {
                        best = (v, cand);
                    }
                }
                best.1
            };
            let coarse = search(0.0, 1.0, 1000);
            let fine = search((coarse - 2e-3).max(0.0), (coarse + 2e-3).min(1.0), 40_000);
            prop_assert!((d - fine).abs() <= 1e-6);
        }

        #[test]
        fn closed_form_d_beats_candidates(x in -5.0f64..5.0, y in -5.0f64..5.0, alpha in -PI..PI,
                                          cands in proptest::collection::vec(1.0f64..50.0, 1000)) {
            let d = closed_form_d(x, y, alpha, 1.2, 0.8, 1.0, D_CAP);
            let v = quad(x, y, alpha, 1.2, 0.8, d);
            for c in cands {
                prop_assert!(v <= quad(x, y, alpha, 1.2, 0.8, c) + 1e-12);
            }
        }

        #[test]
        fn angle2d_continuous(th in -3.0f64..3.0, r in 0.1f64..10.0) {
            let a0 = angle2d(r * cos(th), r * sin(th));
            let a1 = angle2d(r * cos(th + 1e-7), r * sin(th + 1e-7));
            prop_assert!((a1 - a0).abs() < 1e-6);
            prop_assert!((a0 - th).abs() < 1e-12);
        }
    }
}
