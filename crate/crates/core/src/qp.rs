//! Equality-constrained QP through a cached saddle-point factorization.
//!
//! Solves `min 0.5 x'Qx + q'x  s.t.  Ax = b` via
//! `[[Q, A'], [A, 0]] [x; nu] = [-q; b]`. The saddle matrix is
//! Ruiz-equilibrated before LU; the condition guard applies to the
//! equilibrated matrix.

use alloc::vec::Vec;
use nalgebra::{DMatrix, DVector, Dyn, LU};

use crate::error::{check_dim, Error, Result};

/// Largest accepted 1-norm condition estimate of the equilibrated saddle matrix.
pub const DEFAULT_MAX_CONDITION: f64 = 1e12;

const RUIZ_SWEEPS: usize = 12;
const RANK_RTOL: f64 = 1e-10;
const SYMMETRY_RTOL: f64 = 1e-10;
const REFINE_STEPS: usize = 2;

/// A standalone equality-constrained QP.
#[derive(Debug, Clone, PartialEq)]
pub struct EqQp {
    pub hessian: DMatrix<f64>,
    pub linear: DVector<f64>,
    pub constraints: DMatrix<f64>,
    pub rhs: DVector<f64>,
}

impl EqQp {
    pub fn solve(&self) -> Result<(DVector<f64>, DVector<f64>)> {
        factorize(&self.hessian, &self.constraints)?.solve(&self.linear, &self.rhs)
    }
}

/// LU factor of the equilibrated saddle matrix.
#[derive(Debug, Clone)]
pub struct KktFactor {
    lu: LU<f64, Dyn, Dyn>,
    scaled: DMatrix<f64>,
    scale: DVector<f64>,
    n_v: usize,
    n_eq: usize,
    condition: f64,
}

pub fn factorize(q: &DMatrix<f64>, a: &DMatrix<f64>) -> Result<KktFactor> {
    factorize_with_limit(q, a, DEFAULT_MAX_CONDITION)
}

pub fn factorize_with_limit(q: &DMatrix<f64>, a: &DMatrix<f64>, max_condition: f64) -> Result<KktFactor> {
    let n_v = q.nrows();
    check_dim("hessian columns", n_v, q.ncols())?;
    let n_eq = a.nrows();
    if n_eq > 0 {
        check_dim("constraint columns", n_v, a.ncols())?;
    }
    let qmax = q.amax();
    if (q - q.transpose()).amax() > SYMMETRY_RTOL * qmax.max(1.0) {
        return Err(Error::InvalidParameter("hessian is not symmetric"));
    }
    if n_eq > 0 {
        let rank = numerical_rank(a);
        if rank < n_eq {
            return Err(Error::RankDeficient { rank, rows: n_eq });
        }
    }

    let n = n_v + n_eq;
    let mut k = DMatrix::zeros(n, n);
    k.view_mut((0, 0), (n_v, n_v)).copy_from(q);
    if n_eq > 0 {
        k.view_mut((n_v, 0), (n_eq, n_v)).copy_from(a);
        k.view_mut((0, n_v), (n_v, n_eq)).copy_from(&a.transpose());
    }
    let scale = equilibrate(&mut k);
    let norm1 = one_norm(&k);
    let lu = k.clone().lu();
    let inv = lu.try_inverse().ok_or(Error::Singular)?;
    let condition = norm1 * one_norm(&inv);
    if !condition.is_finite() {
        return Err(Error::Singular);
    }
    if condition > max_condition {
        return Err(Error::IllConditioned {
            estimate: condition,
            limit: max_condition,
        });
    }
    Ok(KktFactor {
        lu,
        scaled: k,
        scale,
        n_v,
        n_eq,
        condition,
    })
}

fn numerical_rank(a: &DMatrix<f64>) -> usize {
    let sv = a.clone().svd(false, false).singular_values;
    let smax = sv.iter().cloned().fold(0.0, f64::max);
    if smax == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > RANK_RTOL * smax).count()
}

fn one_norm(m: &DMatrix<f64>) -> f64 {
    m.column_iter()
        .map(|c| c.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Symmetric Ruiz scaling in place; returns the diagonal scale.
fn equilibrate(k: &mut DMatrix<f64>) -> DVector<f64> {
    let n = k.nrows();
    let mut scale = DVector::from_element(n, 1.0);
    for _ in 0..RUIZ_SWEEPS {
        let d: Vec<f64> = (0..n)
            .map(|i| {
                let m = k.row(i).amax();
                if m > 0.0 {
                    1.0 / libm::sqrt(m)
                } else {
                    1.0
                }
            })
            .collect();
        for j in 0..n {
            for i in 0..n {
                k[(i, j)] *= d[i] * d[j];
            }
        }
        for i in 0..n {
            scale[i] *= d[i];
        }
    }
    scale
}

impl KktFactor {
    pub fn n_v(&self) -> usize {
        self.n_v
    }

    pub fn n_eq(&self) -> usize {
        self.n_eq
    }

    pub fn dim(&self) -> usize {
        self.n_v + self.n_eq
    }

    pub fn condition_estimate(&self) -> f64 {
        self.condition
    }

    pub fn solve(&self, q: &DVector<f64>, b: &DVector<f64>) -> Result<(DVector<f64>, DVector<f64>)> {
        check_dim("linear term", self.n_v, q.len())?;
        check_dim("constraint rhs", self.n_eq, b.len())?;
        let q_cols = DMatrix::from_column_slice(self.n_v, 1, q.as_slice());
        let b_cols = DMatrix::from_column_slice(self.n_eq, 1, b.as_slice());
        let (x, nu) = self.solve_columns(&q_cols, &b_cols)?;
        Ok((x.column(0).into_owned(), nu.column(0).into_owned()))
    }

    pub fn solve_batch(&self, rhs: &BatchRhs) -> Result<BatchSolution> {
        let (xi, nu) = self.solve_columns(&rhs.q_cols, &rhs.b_cols)?;
        Ok(BatchSolution { xi, nu })
    }

    /// Solves for every column of the stacked linear terms and constraint values.
    pub fn solve_columns(&self, q_cols: &DMatrix<f64>, b_cols: &DMatrix<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        let n_b = q_cols.ncols();
        if n_b == 0 {
            return Err(Error::EmptyBatch);
        }
        check_dim("linear term rows", self.n_v, q_cols.nrows())?;
        check_dim("constraint rhs rows", self.n_eq, b_cols.nrows())?;
        check_dim("constraint rhs columns", n_b, b_cols.ncols())?;
        let n = self.dim();
        let mut rhs = DMatrix::zeros(n, n_b);
        for c in 0..n_b {
            for i in 0..self.n_v {
                rhs[(i, c)] = -q_cols[(i, c)] * self.scale[i];
            }
            for i in 0..self.n_eq {
                rhs[(self.n_v + i, c)] = b_cols[(i, c)] * self.scale[self.n_v + i];
            }
        }
        self.apply(&mut rhs)?;
        for c in 0..n_b {
            for i in 0..n {
                rhs[(i, c)] *= self.scale[i];
            }
        }
        let xi = rhs.rows(0, self.n_v).into_owned();
        let nu = rhs.rows(self.n_v, self.n_eq).into_owned();
        Ok((xi, nu))
    }

    /// Triangular solves plus refinement steps against the equilibrated matrix.
    fn solve_column(&self, rhs: &DVector<f64>) -> Option<DVector<f64>> {
        let mut v = rhs.clone();
        if !self.lu.solve_mut(&mut v) {
            return None;
        }
        for _ in 0..REFINE_STEPS {
            let mut r = rhs - &self.scaled * &v;
            if !self.lu.solve_mut(&mut r) {
                return None;
            }
            v += r;
        }
        Some(v)
    }

    #[cfg(not(feature = "parallel"))]
    fn apply(&self, rhs: &mut DMatrix<f64>) -> Result<()> {
        for mut col in rhs.column_iter_mut() {
            let v = self.solve_column(&col.clone_owned()).ok_or(Error::Singular)?;
            col.copy_from(&v);
        }
        Ok(())
    }

    #[cfg(feature = "parallel")]
    fn apply(&self, rhs: &mut DMatrix<f64>) -> Result<()> {
        use rayon::prelude::*;
        let n = rhs.nrows();
        let ok = rhs
            .as_mut_slice()
            .par_chunks_mut(n)
            .map(|chunk| {
                match self.solve_column(&DVector::from_column_slice(chunk)) {
                    Some(v) => {
                        chunk.copy_from_slice(v.as_slice());
                        true
                    }
                    None => false,
                }
            })
            .all(|ok| ok);
        if ok {
            Ok(())
        } else {
            Err(Error::Singular)
        }
    }
}

/// Stacked right-hand sides sharing one factor.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchRhs {
    q_cols: DMatrix<f64>,
    b_cols: DMatrix<f64>,
}

impl BatchRhs {
    pub fn new(q_cols: DMatrix<f64>, b_cols: DMatrix<f64>) -> Result<Self> {
        if q_cols.ncols() == 0 {
            return Err(Error::EmptyBatch);
        }
        check_dim("batch columns", q_cols.ncols(), b_cols.ncols())?;
        Ok(Self { q_cols, b_cols })
    }

    pub fn from_columns(qs: &[DVector<f64>], bs: &[DVector<f64>]) -> Result<Self> {
        if qs.is_empty() {
            return Err(Error::EmptyBatch);
        }
        check_dim("batch columns", qs.len(), bs.len())?;
        let n_v = qs[0].len();
        let n_eq = bs[0].len();
        for (q, b) in qs.iter().zip(bs) {
            check_dim("linear term", n_v, q.len())?;
            check_dim("constraint rhs", n_eq, b.len())?;
        }
        Ok(Self {
            q_cols: DMatrix::from_fn(n_v, qs.len(), |i, j| qs[j][i]),
            b_cols: DMatrix::from_fn(n_eq, bs.len(), |i, j| bs[j][i]),
        })
    }

    pub fn len(&self) -> usize {
        self.q_cols.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchSolution {
    pub xi: DMatrix<f64>,
    pub nu: DMatrix<f64>,
}

impl BatchSolution {
    pub fn len(&self) -> usize {
        self.xi.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn member(&self, i: usize) -> (DVector<f64>, DVector<f64>) {
        (self.xi.column(i).into_owned(), self.nu.column(i).into_owned())
    }
}

/// Factors keyed by a penalty weight, with a count of factorizations performed.
#[derive(Debug, Clone, Default)]
pub struct FactorCache {
    entries: Vec<(u64, KktFactor)>,
    factorizations: usize,
}

impl FactorCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn factorizations(&self) -> usize {
        self.factorizations
    }

    pub fn contains(&self, key: f64) -> bool {
        self.entries.iter().any(|(k, _)| *k == key.to_bits())
    }

    /// Returns the cached factor for `key`, building `(Q, A)` only on a miss.
    pub fn get_or_factorize<F>(&mut self, key: f64, build: F) -> Result<&KktFactor>
    where
        F: FnOnce() -> (DMatrix<f64>, DMatrix<f64>),
    {
        let bits = key.to_bits();
        let idx = match self.entries.iter().position(|(k, _)| *k == bits) {
            Some(i) => i,
            None => {
                let (q, a) = build();
                let f = factorize(&q, &a)?;
                self.factorizations += 1;
                self.entries.push((bits, f));
                self.entries.len() - 1
            }
        };
        Ok(&self.entries[idx].1)
    }
}
