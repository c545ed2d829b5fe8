//! Brute-force reference solvers: basis enumeration for the LP and
//! active-set enumeration for the regularized QP. Exponential by design and
//! restricted to desk-scale problems.

use std::cmp::Ordering;

use itertools::Itertools;
use serde::{Deserialize, Serialize};

use super::dense::{row_reduce, solve, RowReduction};
use super::{dot, kkt_check_lp, kkt_check_qp, KktPoint, LpError, RegularizedQp, StandardLp, ORACLE_TOL};

/// Largest `n` and `m` either oracle accepts.
pub const ORACLE_SIZE_LIMIT: usize = 20;

/// Objective values closer than this (relative) are treated as ties.
const TIE_TOL: f64 = 1e-9;
/// Free components at or below this (relative) are treated as zero.
const SUPPORT_TOL: f64 = 1e-9;

fn check_size(lp: &StandardLp) -> Result<(), LpError> {
    if lp.n() > ORACLE_SIZE_LIMIT || lp.m() > ORACLE_SIZE_LIMIT {
        return Err(LpError::OracleSizeLimit {
            n: lp.n(),
            m: lp.m(),
            limit: ORACLE_SIZE_LIMIT,
        });
    }
    Ok(())
}

fn reduce(lp: &StandardLp) -> Result<(Vec<Vec<f64>>, RowReduction), LpError> {
    let a = lp.to_dense();
    let red = row_reduce(&a, lp.b(), ORACLE_TOL);
    if !red.consistent {
        return Err(LpError::Infeasible);
    }
    Ok((a, red))
}

/// Componentwise order with ties inside `TIE_TOL`.
fn lex_cmp(a: &[f64], b: &[f64]) -> Ordering {
    for (x, y) in a.iter().zip(b) {
        if (x - y).abs() > TIE_TOL * (1.0 + x.abs().max(y.abs())) {
            return x.total_cmp(y);
        }
    }
    Ordering::Equal
}

/// Solves `min cᵀx s.t. Ax = b, x ≥ 0` by enumerating every basis of the
/// independent rows. Among optimal vertices the lexicographically smallest
/// primal is returned, with the dual of an optimal basis.
pub fn oracle_solve_lp(lp: &StandardLp) -> Result<KktPoint, LpError> {
    check_size(lp)?;
    let (a, red) = reduce(lp)?;
    let rows = &red.independent;
    let r = rows.len();
    let n = lp.n();
    let c = lp.c();

    let mut any_feasible = false;
    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut dual: Option<Vec<f64>> = None;

    for basis in (0..n).combinations(r) {
        let matrix: Vec<Vec<f64>> = rows
            .iter()
            .map(|&l| basis.iter().map(|&i| a[l][i]).collect())
            .collect();
        let rhs: Vec<f64> = rows.iter().map(|&l| lp.b()[l]).collect();
        let Some(x_b) = solve(matrix.clone(), rhs) else {
            log::debug!("skipping singular basis {basis:?}");
            continue;
        };
        if x_b.iter().any(|&v| v < -ORACLE_TOL) {
            continue;
        }
        any_feasible = true;
        let mut x = vec![0.0; n];
        for (&i, &v) in basis.iter().zip(&x_b) {
            x[i] = v.max(0.0);
        }
        let value = dot(c, &x);
        let better = match &best {
            None => true,
            Some((bv, bx)) => {
                let gap = value - bv;
                let tie = TIE_TOL * (1.0 + bv.abs());
                gap < -tie || (gap.abs() <= tie && lex_cmp(&x, bx) == Ordering::Less)
            }
        };
        if better {
            best = Some((value, x));
        }
        if dual.is_none() {
            let transposed: Vec<Vec<f64>> = (0..r)
                .map(|k| (0..r).map(|p| matrix[p][k]).collect())
                .collect();
            let neg_cb: Vec<f64> = basis.iter().map(|&i| -c[i]).collect();
            if let Some(w) = solve(transposed, neg_cb) {
                let mut z = vec![0.0; lp.m()];
                for (&l, &v) in rows.iter().zip(&w) {
                    z[l] = v;
                }
                let reduced = lp.at_mul(&z);
                if reduced.iter().zip(c).all(|(atz, ci)| ci + atz >= -ORACLE_TOL) {
                    dual = Some(z);
                }
            }
        }
    }

    if !any_feasible {
        return Err(LpError::Infeasible);
    }
    let Some(z_star) = dual else {
        return Err(LpError::Unbounded);
    };
    let (_, x_star) = best.expect("feasible basis recorded");
    let pt = KktPoint { x_star, z_star };
    debug_assert!(kkt_check_lp(lp, &pt, ORACLE_TOL).unwrap_or(false));
    Ok(pt)
}

/// Solves `min γcᵀx + ½xᵀx s.t. Ax = b, x ≥ 0` by trying every support set:
/// on a support the problem is a projection onto an affine subspace, solved
/// through its normal equations. The multipliers come from the LP whose cost
/// is the gradient at the minimizer, whose optimality conditions coincide
/// with those of the QP.
pub fn oracle_solve_qp(qp: &RegularizedQp) -> Result<KktPoint, LpError> {
    let lp = qp.base();
    check_size(lp)?;
    let (a, _) = reduce(lp)?;
    let n = lp.n();
    let gamma = qp.gamma();

    let mut best: Option<(f64, Vec<f64>)> = None;
    for free in (0..n).powerset() {
        let Some(x) = project_on_support(&a, lp.b(), lp.c(), gamma, &free, n) else {
            continue;
        };
        let value = qp.objective(&x);
        // The minimizer is unique, so near-ties are rounding; the first,
        // smallest support wins them.
        let better = match &best {
            None => true,
            Some((bv, _)) => value - bv < -TIE_TOL * (1.0 + bv.abs()),
        };
        if better {
            best = Some((value, x));
        }
    }
    let Some((_, x_star)) = best else {
        return Err(LpError::Infeasible);
    };

    let linearized = lp.with_cost(qp.gradient(&x_star))?;
    let z_star = oracle_solve_lp(&linearized)?.z_star;
    let pt = KktPoint { x_star, z_star };
    debug_assert!(kkt_check_qp(qp, &pt, ORACLE_TOL).unwrap_or(false));
    Ok(pt)
}

/// Minimizer of `½‖x + γc‖²` over `{A_F x_F = b, x_i = 0 for i ∉ F}`, or
/// `None` when that set is empty or the minimizer leaves the orthant.
fn project_on_support(
    a: &[Vec<f64>],
    b: &[f64],
    c: &[f64],
    gamma: f64,
    free: &[usize],
    n: usize,
) -> Option<Vec<f64>> {
    let a_f: Vec<Vec<f64>> = a
        .iter()
        .map(|row| free.iter().map(|&i| row[i]).collect())
        .collect();
    let red = row_reduce(&a_f, b, ORACLE_TOL);
    if !red.consistent {
        return None;
    }
    let rows = &red.independent;
    let y: Vec<f64> = free.iter().map(|&i| -gamma * c[i]).collect();
    let gram: Vec<Vec<f64>> = rows
        .iter()
        .map(|&p| rows.iter().map(|&q| dot(&a_f[p], &a_f[q])).collect())
        .collect();
    let rhs: Vec<f64> = rows.iter().map(|&p| dot(&a_f[p], &y) - b[p]).collect();
    let w = solve(gram, rhs)?;
    let mut x_f = y;
    for (&p, wp) in rows.iter().zip(&w) {
        for (xi, aij) in x_f.iter_mut().zip(&a_f[p]) {
            *xi -= aij * wp;
        }
    }
    // A free component at zero means a smaller support yields the same
    // point; letting rounding keep it here can undercut that point.
    let scale = x_f.iter().fold(1.0_f64, |acc, v| acc.max(v.abs()));
    if x_f.iter().any(|&v| v <= SUPPORT_TOL * scale) {
        return None;
    }
    // The normal equations only see independent rows; confirm the rest.
    let mut x = vec![0.0; n];
    for (&i, &v) in free.iter().zip(&x_f) {
        x[i] = v;
    }
    let feasible = a
        .iter()
        .zip(b)
        .all(|(row, bl)| (dot(row, &x) - bl).abs() <= 1e-7 * (1.0 + bl.abs()));
    feasible.then_some(x)
}

/// Whether the regularized solution at `gamma` is optimal for the LP.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExactnessResult {
    pub gamma: f64,
    pub matches: bool,
}

/// For each `γ`, tests whether the QP minimizer is feasible for the LP and
/// within `1e-6` of its optimal value.
pub fn exactness_probe(lp: &StandardLp, gammas: &[f64]) -> Result<Vec<ExactnessResult>, LpError> {
    const MEMBERSHIP_TOL: f64 = 1e-6;
    let p_star = lp.objective(&oracle_solve_lp(lp)?.x_star);
    gammas
        .iter()
        .map(|&gamma| {
            let qp = RegularizedQp::new(lp.clone(), gamma)?;
            let x = oracle_solve_qp(&qp)?.x_star;
            let feasible = x.iter().all(|&v| v >= -MEMBERSHIP_TOL)
                && lp.residual(&x).iter().all(|r| r.abs() <= MEMBERSHIP_TOL);
            let matches = feasible && lp.objective(&x) - p_star <= MEMBERSHIP_TOL;
            Ok(ExactnessResult { gamma, matches })
        })
        .collect()
}

/// Smallest probed `γ` from which every larger probed `γ` also matches.
/// Results are assumed to be in increasing order of `γ`.
pub fn exactness_threshold(results: &[ExactnessResult]) -> Option<f64> {
    let tail = results.iter().rev().take_while(|r| r.matches).count();
    (tail > 0).then(|| results[results.len() - tail].gamma)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn assignment() -> StandardLp {
        StandardLp::from_dense(
            vec![-5.0, -15.0, -20.0, -10.0],
            &[
                vec![1.0, 1.0, 0.0, 0.0],
                vec![0.0, 0.0, 1.0, 1.0],
                vec![1.0, 0.0, 1.0, 0.0],
                vec![0.0, 1.0, 0.0, 1.0],
            ],
            vec![1.0; 4],
        )
        .unwrap()
    }

    #[test]
    fn assignment_optimum() {
        let lp = assignment();
        let pt = oracle_solve_lp(&lp).unwrap();
        assert_eq!(pt.x_star, vec![0.0, 1.0, 1.0, 0.0]);
        assert!((lp.objective(&pt.x_star) + 35.0).abs() < 1e-12);
        assert!(kkt_check_lp(&lp, &pt, 1e-8).unwrap());
    }

    #[test]
    fn scalar_lp() {
        let lp = StandardLp::from_dense(vec![5.0], &[vec![1.0]], vec![1.0]).unwrap();
        assert_eq!(oracle_solve_lp(&lp).unwrap().x_star, vec![1.0]);
    }

    #[test]
    fn mass_moves_to_free_variable() {
        let lp = StandardLp::from_dense(vec![1.0, 0.0], &[vec![1.0, 1.0]], vec![1.0]).unwrap();
        assert_eq!(oracle_solve_lp(&lp).unwrap().x_star, vec![0.0, 1.0]);
    }

    #[test]
    fn ties_resolve_lexicographically() {
        let lp = StandardLp::from_dense(vec![0.0, 0.0], &[vec![1.0, 1.0]], vec![1.0]).unwrap();
        assert_eq!(oracle_solve_lp(&lp).unwrap().x_star, vec![0.0, 1.0]);
    }

    #[test]
    fn infeasible_and_unbounded() {
        let lp = StandardLp::from_dense(vec![0.0], &[vec![1.0]], vec![-1.0]).unwrap();
        assert_eq!(oracle_solve_lp(&lp).unwrap_err(), LpError::Infeasible);
        let lp = StandardLp::from_dense(vec![0.0, -1.0], &[vec![1.0, -1.0]], vec![1.0]).unwrap();
        assert_eq!(oracle_solve_lp(&lp).unwrap_err(), LpError::Unbounded);
        let lp = StandardLp::from_dense(vec![0.0], &[vec![1.0], vec![1.0]], vec![1.0, 2.0]).unwrap();
        assert_eq!(oracle_solve_lp(&lp).unwrap_err(), LpError::Infeasible);
    }

    #[test]
    fn no_constraints() {
        let lp = StandardLp::new(vec![1.0, 2.0], Vec::new(), []).unwrap();
        let pt = oracle_solve_lp(&lp).unwrap();
        assert_eq!(pt.x_star, vec![0.0, 0.0]);
        let lp = StandardLp::new(vec![-1.0], Vec::new(), []).unwrap();
        assert_eq!(oracle_solve_lp(&lp).unwrap_err(), LpError::Unbounded);
    }

    #[test]
    fn size_limit() {
        let lp = StandardLp::new(vec![0.0; 21], Vec::new(), []).unwrap();
        assert!(matches!(oracle_solve_lp(&lp), Err(LpError::OracleSizeLimit { n: 21, .. })));
    }

    #[test]
    fn qp_examples() {
        let lp = StandardLp::from_dense(vec![0.0], &[vec![1.0]], vec![1.0]).unwrap();
        let qp = RegularizedQp::new(lp, 1.0).unwrap();
        let pt = oracle_solve_qp(&qp).unwrap();
        assert_eq!(pt.x_star, vec![1.0]);
        assert!((pt.z_star[0] + 1.0).abs() < 1e-12);

        let s = std::f64::consts::FRAC_1_SQRT_2;
        let lp = StandardLp::from_dense(vec![0.0, 0.0], &[vec![s, s]], vec![s]).unwrap();
        let qp = RegularizedQp::new(lp, 0.0).unwrap();
        let x = oracle_solve_qp(&qp).unwrap().x_star;
        assert!((x[0] - 0.5).abs() < 1e-12 && (x[1] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn qp_assignment_is_exact() {
        let qp = RegularizedQp::new(assignment(), 1.0).unwrap();
        let pt = oracle_solve_qp(&qp).unwrap();
        for (x, e) in pt.x_star.iter().zip([0.0, 1.0, 1.0, 0.0]) {
            assert!((x - e).abs() < 1e-9);
        }
        assert!(kkt_check_qp(&qp, &pt, 1e-8).unwrap());
    }

    #[test]
    fn probe_and_threshold() {
        let res = exactness_probe(&assignment(), &[1.0, 2.0, 10.0]).unwrap();
        assert!(res.iter().all(|r| r.matches));
        assert_eq!(exactness_threshold(&res), Some(1.0));
        let res = [
            ExactnessResult { gamma: 1.0, matches: true },
            ExactnessResult { gamma: 2.0, matches: false },
            ExactnessResult { gamma: 4.0, matches: true },
        ];
        assert_eq!(exactness_threshold(&res), Some(4.0));
        assert_eq!(exactness_threshold(&res[..2]), None);
    }
}
