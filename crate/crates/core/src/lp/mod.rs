//! Standard-form linear programs, their quadratic regularization, KKT
//! certification and the brute-force reference solvers used as test oracles.
//!
//! A problem is `min cᵀx s.t. Ax = b, x ≥ 0`. The constraint matrix is kept
//! sparse by row (the communication structure of the agent network is read
//! off its sparsity pattern) with a transposed copy for `Aᵀ` products.

mod dense;
mod oracle;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use oracle::{
    exactness_probe, exactness_threshold, oracle_solve_lp, oracle_solve_qp, ExactnessResult,
    ORACLE_SIZE_LIMIT,
};

/// Feasibility tolerance shared by both oracles.
pub const ORACLE_TOL: f64 = 1e-8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LpError {
    #[error("dimension mismatch in `{field}`: expected {expected}, found {found}")]
    DimensionMismatch {
        field: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("entry ({row}, {col}) lies outside the {m}x{n} constraint matrix")]
    IndexOutOfRange {
        row: usize,
        col: usize,
        m: usize,
        n: usize,
    },
    #[error("non-finite value in `{field}`")]
    NonFinite { field: &'static str },
    #[error("negative regularization weight {0}")]
    NegativeGamma(f64),
    #[error("infeasible")]
    Infeasible,
    #[error("unbounded")]
    Unbounded,
    #[error("oracle-size-limit: n = {n}, m = {m} exceeds the desk-scale limit of {limit}")]
    OracleSizeLimit { n: usize, m: usize, limit: usize },
}

/// One nonzero of the constraint matrix, zero-based.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Triplet {
    pub row: usize,
    pub col: usize,
    pub value: f64,
}

/// `min cᵀx s.t. Ax = b, x ≥ 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct StandardLp {
    c: Vec<f64>,
    b: Vec<f64>,
    /// Row-major sparse storage, columns ascending, no explicit zeros.
    rows: Vec<Vec<(usize, f64)>>,
    /// Column-major copy: for each variable, `(row, value)` ascending.
    cols: Vec<Vec<(usize, f64)>>,
}

impl StandardLp {
    /// Builds a problem from triplets. Duplicate coordinates are summed and
    /// entries that end up exactly zero are dropped.
    pub fn new(
        c: Vec<f64>,
        b: Vec<f64>,
        entries: impl IntoIterator<Item = Triplet>,
    ) -> Result<Self, LpError> {
        let n = c.len();
        let m = b.len();
        if c.iter().any(|v| !v.is_finite()) {
            return Err(LpError::NonFinite { field: "c" });
        }
        if b.iter().any(|v| !v.is_finite()) {
            return Err(LpError::NonFinite { field: "b" });
        }
        let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); m];
        for t in entries {
            if t.row >= m || t.col >= n {
                return Err(LpError::IndexOutOfRange {
                    row: t.row,
                    col: t.col,
                    m,
                    n,
                });
            }
            if !t.value.is_finite() {
                return Err(LpError::NonFinite { field: "A" });
            }
            rows[t.row].push((t.col, t.value));
        }
        for row in &mut rows {
            row.sort_by_key(|&(col, _)| col);
            let mut merged: Vec<(usize, f64)> = Vec::with_capacity(row.len());
            for &(col, v) in row.iter() {
                match merged.last_mut() {
                    Some((last, acc)) if *last == col => *acc += v,
                    _ => merged.push((col, v)),
                }
            }
            merged.retain(|&(_, v)| v != 0.0);
            *row = merged;
        }
        Ok(Self::from_parts(c, b, rows))
    }

    /// Builds a problem from a dense `m × n` matrix given row by row.
    pub fn from_dense(c: Vec<f64>, a: &[Vec<f64>], b: Vec<f64>) -> Result<Self, LpError> {
        if a.len() != b.len() {
            return Err(LpError::DimensionMismatch {
                field: "A rows",
                expected: b.len(),
                found: a.len(),
            });
        }
        let n = c.len();
        let mut entries = Vec::new();
        for (row, values) in a.iter().enumerate() {
            if values.len() != n {
                return Err(LpError::DimensionMismatch {
                    field: "A columns",
                    expected: n,
                    found: values.len(),
                });
            }
            for (col, &value) in values.iter().enumerate() {
                if value != 0.0 {
                    entries.push(Triplet { row, col, value });
                }
            }
        }
        Self::new(c, b, entries)
    }

    fn from_parts(c: Vec<f64>, b: Vec<f64>, rows: Vec<Vec<(usize, f64)>>) -> Self {
        let mut cols = vec![Vec::new(); c.len()];
        for (l, row) in rows.iter().enumerate() {
            for &(i, v) in row {
                cols[i].push((l, v));
            }
        }
        Self { c, b, rows, cols }
    }

    pub fn n(&self) -> usize {
        self.c.len()
    }

    pub fn m(&self) -> usize {
        self.b.len()
    }

    pub fn c(&self) -> &[f64] {
        &self.c
    }

    pub fn b(&self) -> &[f64] {
        &self.b
    }

    /// Nonzeros of row `l` as `(col, value)`.
    pub fn row(&self, l: usize) -> &[(usize, f64)] {
        &self.rows[l]
    }

    /// Nonzeros of column `i` as `(row, value)`.
    pub fn col(&self, i: usize) -> &[(usize, f64)] {
        &self.cols[i]
    }

    pub fn nnz(&self) -> usize {
        self.rows.iter().map(Vec::len).sum()
    }

    pub fn triplets(&self) -> impl Iterator<Item = Triplet> + '_ {
        self.rows.iter().enumerate().flat_map(|(row, entries)| {
            entries
                .iter()
                .map(move |&(col, value)| Triplet { row, col, value })
        })
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut a = vec![vec![0.0; self.n()]; self.m()];
        for t in self.triplets() {
            a[t.row][t.col] = t.value;
        }
        a
    }

    /// `a_ℓᵀ x`.
    pub fn row_dot(&self, l: usize, x: &[f64]) -> f64 {
        self.rows[l].iter().map(|&(i, v)| v * x[i]).sum()
    }

    /// `Ax`.
    pub fn a_mul(&self, x: &[f64]) -> Vec<f64> {
        (0..self.m()).map(|l| self.row_dot(l, x)).collect()
    }

    /// `Aᵀz`.
    pub fn at_mul(&self, z: &[f64]) -> Vec<f64> {
        self.cols
            .iter()
            .map(|col| col.iter().map(|&(l, v)| v * z[l]).sum())
            .collect()
    }

    /// `Ax − b`.
    pub fn residual(&self, x: &[f64]) -> Vec<f64> {
        (0..self.m())
            .map(|l| self.row_dot(l, x) - self.b[l])
            .collect()
    }

    pub fn objective(&self, x: &[f64]) -> f64 {
        dot(&self.c, x)
    }

    /// Same constraints with a different cost vector.
    pub fn with_cost(&self, c: Vec<f64>) -> Result<Self, LpError> {
        check_len("c", self.n(), c.len())?;
        Ok(Self {
            c,
            b: self.b.clone(),
            rows: self.rows.clone(),
            cols: self.cols.clone(),
        })
    }

    /// Cost vector multiplied by `factor`; used to fold a regularization
    /// weight into the data the dynamics see.
    pub fn with_scaled_cost(&self, factor: f64) -> Self {
        let c = self.c.iter().map(|v| v * factor).collect();
        self.with_cost(c).expect("length preserved")
    }

    /// Row `ℓ` of `A` and entry `ℓ` of `b` divided by `divisors[ℓ]`.
    pub fn with_scaled_rows(&self, divisors: &[f64]) -> Result<Self, LpError> {
        check_len("row divisors", self.m(), divisors.len())?;
        let rows = self
            .rows
            .iter()
            .zip(divisors)
            .map(|(row, d)| row.iter().map(|&(i, v)| (i, v / d)).collect())
            .collect();
        let b = self.b.iter().zip(divisors).map(|(v, d)| v / d).collect();
        Ok(Self::from_parts(self.c.clone(), b, rows))
    }

    /// Relabels variables: variable `i` of the result is variable `perm[i]`
    /// of `self`.
    pub fn permute_columns(&self, perm: &[usize]) -> Result<Self, LpError> {
        check_len("permutation", self.n(), perm.len())?;
        let mut inverse = vec![usize::MAX; self.n()];
        for (new, &old) in perm.iter().enumerate() {
            if old >= self.n() || inverse[old] != usize::MAX {
                return Err(LpError::IndexOutOfRange {
                    row: 0,
                    col: old,
                    m: self.m(),
                    n: self.n(),
                });
            }
            inverse[old] = new;
        }
        let c = perm.iter().map(|&old| self.c[old]).collect();
        let entries = self.triplets().map(|t| Triplet {
            col: inverse[t.col],
            ..t
        });
        Self::new(c, self.b.clone(), entries)
    }
}

/// Primal-dual pair certified by the KKT conditions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KktPoint {
    pub x_star: Vec<f64>,
    pub z_star: Vec<f64>,
}

/// `min γcᵀx + ½xᵀx s.t. Ax = b, x ≥ 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct RegularizedQp {
    base: StandardLp,
    gamma: f64,
}

impl RegularizedQp {
    pub fn new(base: StandardLp, gamma: f64) -> Result<Self, LpError> {
        if !gamma.is_finite() {
            return Err(LpError::NonFinite { field: "gamma" });
        }
        if gamma < 0.0 {
            return Err(LpError::NegativeGamma(gamma));
        }
        Ok(Self { base, gamma })
    }

    pub fn base(&self) -> &StandardLp {
        &self.base
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn objective(&self, x: &[f64]) -> f64 {
        self.gamma * self.base.objective(x) + 0.5 * dot(x, x)
    }

    /// Gradient of the objective, `γc + x`.
    pub fn gradient(&self, x: &[f64]) -> Vec<f64> {
        self.base
            .c()
            .iter()
            .zip(x)
            .map(|(c, x)| self.gamma * c + x)
            .collect()
    }
}

/// KKT conditions of the linear program at tolerance `tol`:
/// `c + Aᵀz ≥ 0`, `Ax = b`, `x ≥ 0` and `(c + Aᵀz)ᵀx = 0`.
pub fn kkt_check_lp(lp: &StandardLp, pt: &KktPoint, tol: f64) -> Result<bool, LpError> {
    check_point(lp, pt)?;
    Ok(kkt_holds(lp, lp.c(), pt, tol))
}

/// KKT conditions of the regularized program; identical to the LP check
/// with the cost replaced by the gradient `γc + x*`.
pub fn kkt_check_qp(qp: &RegularizedQp, pt: &KktPoint, tol: f64) -> Result<bool, LpError> {
    check_point(&qp.base, pt)?;
    let grad = qp.gradient(&pt.x_star);
    Ok(kkt_holds(&qp.base, &grad, pt, tol))
}

fn kkt_holds(lp: &StandardLp, cost: &[f64], pt: &KktPoint, tol: f64) -> bool {
    let reduced: Vec<f64> = lp
        .at_mul(&pt.z_star)
        .iter()
        .zip(cost)
        .map(|(atz, c)| c + atz)
        .collect();
    let dual_feasible = reduced.iter().all(|&r| r >= -tol);
    let primal_feasible = lp.residual(&pt.x_star).iter().all(|r| r.abs() <= tol);
    let nonnegative = pt.x_star.iter().all(|&x| x >= -tol);
    let slackness = dot(&reduced, &pt.x_star).abs() <= tol;
    dual_feasible && primal_feasible && nonnegative && slackness
}

fn check_point(lp: &StandardLp, pt: &KktPoint) -> Result<(), LpError> {
    check_len("x_star", lp.n(), pt.x_star.len())?;
    check_len("z_star", lp.m(), pt.z_star.len())
}

pub(crate) fn check_len(field: &'static str, expected: usize, found: usize) -> Result<(), LpError> {
    if expected == found {
        Ok(())
    } else {
        Err(LpError::DimensionMismatch {
            field,
            expected,
            found,
        })
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
