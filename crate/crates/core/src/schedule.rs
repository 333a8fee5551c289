//! Windowed stall detection for penalty schedules.

use alloc::vec::Vec;

/// Flags a stall when the mean of the latest `window` values fails to drop
/// by `min_improvement` (relative) against the window before it.
#[derive(Debug, Clone)]
pub struct StallDetector {
    window: usize,
    min_improvement: f64,
    values: Vec<f64>,
}

impl StallDetector {
    pub fn new(window: usize, min_improvement: f64) -> Self {
        Self {
            window: window.max(1),
            min_improvement,
            values: Vec::new(),
        }
    }

    /// Records a value; returns true on a stall and starts a fresh window pair.
    pub fn push(&mut self, value: f64) -> bool {
        self.values.push(value);
        let w = self.window;
        if self.values.len() < 2 * w {
            return false;
        }
        let n = self.values.len();
        let recent = mean(&self.values[n - w..]);
        let before = mean(&self.values[n - 2 * w..n - w]);
        if recent > (1.0 - self.min_improvement) * before {
            self.values.clear();
            true
        } else {
            false
        }
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Means of consecutive non-overlapping windows.
pub fn window_means(values: &[f64], window: usize) -> Vec<f64> {
    values.chunks_exact(window.max(1)).map(mean).collect()
}

/// Direction of a residual sequence after a burn-in, judged on window means.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Trend {
    /// Least-squares slope of `log10(mean)` per window.
    pub log_slope: f64,
    pub first: f64,
    pub last: f64,
}

impl Trend {
    /// Trend, not strict monotonicity: the fitted slope must not be positive.
    pub fn non_increasing(&self) -> bool {
        self.log_slope <= 0.0
    }
}

/// `None` when fewer than two windows remain after `burn_in`.
pub fn residual_trend(values: &[f64], window: usize, burn_in: usize) -> Option<Trend> {
    let means = window_means(values.get(burn_in..)?, window);
    if means.len() < 2 {
        return None;
    }
    let floor = f64::MIN_POSITIVE;
    let ys: Vec<f64> = means.iter().map(|m| libm::log10(m.max(floor))).collect();
    let n = ys.len() as f64;
    let xbar = (n - 1.0) / 2.0;
    let ybar = mean(&ys);
    let (mut num, mut den) = (0.0, 0.0);
    for (i, y) in ys.iter().enumerate() {
        let dx = i as f64 - xbar;
        num += dx * (y - ybar);
        den += dx * dx;
    }
    Some(Trend {
        log_slope: num / den,
        first: means[0],
        last: means[means.len() - 1],
    })
}
