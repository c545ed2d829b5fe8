//! Saddle-point flow of the augmented Lagrangian, its projection onto the
//! nonnegative orthant, and the Lyapunov functions used to audit it.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lp::{check_len, dot, oracle_solve_qp, KktPoint, LpError, RegularizedQp, StandardLp};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DynamicsError {
    #[error(transparent)]
    Lp(#[from] LpError),
    #[error("broadcast primal component {index} is negative ({value})")]
    NegativeHat { index: usize, value: f64 },
    #[error("no saddle reference available")]
    MissingSaddle,
    #[error("mode-precondition: {0}")]
    ModePrecondition(&'static str),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrimalDualPoint {
    pub x: Vec<f64>,
    pub z: Vec<f64>,
}

impl PrimalDualPoint {
    pub fn new(x: Vec<f64>, z: Vec<f64>) -> Self {
        Self { x, z }
    }

    pub fn zeros(n: usize, m: usize) -> Self {
        Self::new(vec![0.0; n], vec![0.0; m])
    }

    fn check(&self, lp: &StandardLp) -> Result<(), LpError> {
        check_len("x", lp.n(), self.x.len())?;
        check_len("z", lp.m(), self.z.len())
    }

    /// `self + alpha·(dx, dz)`.
    pub fn advanced(&self, dx: &[f64], dz: &[f64], alpha: f64) -> Self {
        Self {
            x: self.x.iter().zip(dx).map(|(x, d)| x + alpha * d).collect(),
            z: self.z.iter().zip(dz).map(|(z, d)| z + alpha * d).collect(),
        }
    }
}

impl From<KktPoint> for PrimalDualPoint {
    fn from(pt: KktPoint) -> Self {
        Self::new(pt.x_star, pt.z_star)
    }
}

/// Indices `i` with `f_i ≥ 0` or `x_i > 0`, stored as a membership mask.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ActiveSet {
    members: Vec<bool>,
}

impl ActiveSet {
    pub fn from_mask(members: Vec<bool>) -> Self {
        Self { members }
    }

    /// Active set implied by a flow value `f` at primal point `x`.
    pub fn from_flow(f: &[f64], x: &[f64]) -> Self {
        Self {
            members: f.iter().zip(x).map(|(&fi, &xi)| fi >= 0.0 || xi > 0.0).collect(),
        }
    }

    pub fn full(n: usize) -> Self {
        Self { members: vec![true; n] }
    }

    pub fn contains(&self, i: usize) -> bool {
        self.members[i]
    }

    pub fn mask(&self) -> &[bool] {
        &self.members
    }

    pub fn len(&self) -> usize {
        self.members.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        self.members.iter().enumerate().filter(|(_, &b)| b).map(|(i, _)| i)
    }

    pub fn is_subset(&self, other: &ActiveSet) -> bool {
        self.members.iter().zip(&other.members).all(|(&a, &b)| !a || b)
    }

    /// Members of `self` not in `other`.
    pub fn difference(&self, other: &ActiveSet) -> ActiveSet {
        ActiveSet {
            members: self.members.iter().zip(&other.members).map(|(&a, &b)| a && !b).collect(),
        }
    }

    /// `I_σ v`.
    pub fn select(&self, v: &[f64]) -> Vec<f64> {
        v.iter()
            .zip(&self.members)
            .map(|(&vi, &m)| if m { vi } else { 0.0 })
            .collect()
    }

    /// `vᵀ I_σ v`.
    pub fn quad(&self, v: &[f64]) -> f64 {
        v.iter()
            .zip(&self.members)
            .filter(|(_, &m)| m)
            .map(|(vi, _)| vi * vi)
            .sum()
    }

    /// The diagonal selector matrix `I_σ`.
    pub fn selector_matrix(&self) -> Vec<Vec<f64>> {
        let n = self.members.len();
        (0..n)
            .map(|i| (0..n).map(|j| if i == j && self.members[i] { 1.0 } else { 0.0 }).collect())
            .collect()
    }

    /// One character per variable, `1` for members.
    pub fn bitstring(&self) -> String {
        self.members.iter().map(|&b| if b { '1' } else { '0' }).collect()
    }

    pub fn parse_bitstring(s: &str) -> Option<Self> {
        s.chars()
            .map(|ch| match ch {
                '1' => Some(true),
                '0' => Some(false),
                _ => None,
            })
            .collect::<Option<Vec<_>>>()
            .map(Self::from_mask)
    }
}

/// A saddle point `(x̄, z̄)` of the augmented Lagrangian, used only by the
/// diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SaddleReference {
    pub x_bar: Vec<f64>,
    pub z_bar: Vec<f64>,
}

impl SaddleReference {
    /// Solves the unit-weight regularization with the oracle. The regularized
    /// minimizer and its multipliers are a saddle point of `L^K` for every
    /// admissible `K`.
    pub fn from_oracle(lp: &StandardLp) -> Result<Self, LpError> {
        let pt = oracle_solve_qp(&RegularizedQp::new(lp.clone(), 1.0)?)?;
        Ok(Self {
            x_bar: pt.x_star,
            z_bar: pt.z_star,
        })
    }

    pub fn point(&self) -> PrimalDualPoint {
        PrimalDualPoint::new(self.x_bar.clone(), self.z_bar.clone())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LagrangianParams {
    /// Weight of the nonsmooth penalty `Σ max{0, −x_i}`.
    pub k: f64,
    pub saddle: Option<SaddleReference>,
}

impl LagrangianParams {
    pub fn new(k: f64, saddle: SaddleReference) -> Self {
        Self { k, saddle: Some(saddle) }
    }

    /// `2(1 + max ‖f‖∞)` over the given points.
    pub fn default_k<'a>(lp: &StandardLp, visited: impl IntoIterator<Item = &'a PrimalDualPoint>) -> f64 {
        let peak = visited
            .into_iter()
            .filter_map(|pt| flow_f(lp, pt).ok())
            .map(|f| f.iter().fold(0.0_f64, |acc, v| acc.max(v.abs())))
            .fold(0.0_f64, f64::max);
        2.0 * (1.0 + peak)
    }

    fn saddle(&self) -> Result<&SaddleReference, DynamicsError> {
        self.saddle.as_ref().ok_or(DynamicsError::MissingSaddle)
    }
}

/// `f(x, z) = −(Aᵀz + c + x) − Aᵀ(Ax − b)`.
pub fn flow_f(lp: &StandardLp, pt: &PrimalDualPoint) -> Result<Vec<f64>, DynamicsError> {
    pt.check(lp)?;
    Ok(flow_f_unchecked(lp, &pt.x, &pt.z))
}

pub(crate) fn flow_f_unchecked(lp: &StandardLp, x: &[f64], z: &[f64]) -> Vec<f64> {
    let r = lp.residual(x);
    let mut w = z.to_vec();
    for (wl, rl) in w.iter_mut().zip(&r) {
        *wl += rl;
    }
    lp.at_mul(&w)
        .iter()
        .zip(lp.c())
        .zip(x)
        .map(|((atw, c), x)| -(atw + c + x))
        .collect()
}

/// `σ(x, z)`, with `f_i ≥ 0` tested against exact zero.
pub fn active_set(lp: &StandardLp, pt: &PrimalDualPoint) -> Result<ActiveSet, DynamicsError> {
    let f = flow_f(lp, pt)?;
    Ok(ActiveSet::from_flow(&f, &pt.x))
}

/// `(I_σ(x̂,ẑ) f(x̂, ẑ), A x̂ − b)`.
pub fn projected_flow(
    lp: &StandardLp,
    hat: &PrimalDualPoint,
) -> Result<(Vec<f64>, Vec<f64>), DynamicsError> {
    hat.check(lp)?;
    if let Some((index, &value)) = hat.x.iter().enumerate().find(|(_, &v)| v < 0.0) {
        return Err(DynamicsError::NegativeHat { index, value });
    }
    Ok(projected_flow_unchecked(lp, &hat.x, &hat.z))
}

pub(crate) fn projected_flow_unchecked(lp: &StandardLp, x: &[f64], z: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let f = flow_f_unchecked(lp, x, z);
    let xdot = f
        .iter()
        .zip(x)
        .map(|(&fi, &xi)| if xi > 0.0 { fi } else { fi.max(0.0) })
        .collect();
    (xdot, lp.residual(x))
}

/// `L^K(x, z) = cᵀx + ½xᵀx + ½‖Ax − b‖² + zᵀ(Ax − b) + K Σ max{0, −x_i}`.
pub fn lagrangian(
    lp: &StandardLp,
    params: &LagrangianParams,
    pt: &PrimalDualPoint,
) -> Result<f64, DynamicsError> {
    pt.check(lp)?;
    let r = lp.residual(&pt.x);
    let penalty: f64 = pt.x.iter().map(|&v| (-v).max(0.0)).sum();
    Ok(lp.objective(&pt.x) + 0.5 * dot(&pt.x, &pt.x) + 0.5 * dot(&r, &r) + dot(&pt.z, &r) + params.k * penalty)
}

/// `½‖x − x̄‖² + ½‖z − z̄‖²`.
pub fn lyapunov_v1(params: &LagrangianParams, pt: &PrimalDualPoint) -> Result<f64, DynamicsError> {
    let saddle = params.saddle()?;
    check_len("x", saddle.x_bar.len(), pt.x.len())?;
    check_len("z", saddle.z_bar.len(), pt.z.len())?;
    let sq = |a: &[f64], b: &[f64]| -> f64 { a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum() };
    Ok(0.5 * sq(&pt.x, &saddle.x_bar) + 0.5 * sq(&pt.z, &saddle.z_bar))
}

/// `½ fᵀ I_σ f + ½‖Ax − b‖²` at `pt`.
pub fn lyapunov_v2(lp: &StandardLp, pt: &PrimalDualPoint) -> Result<f64, DynamicsError> {
    let f = flow_f(lp, pt)?;
    let sigma = ActiveSet::from_flow(&f, &pt.x);
    let r = lp.residual(&pt.x);
    Ok(0.5 * sigma.quad(&f) + 0.5 * dot(&r, &r))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LyapunovValues {
    pub v: f64,
    pub v1: f64,
    pub v2: f64,
}

pub fn lyapunov(
    lp: &StandardLp,
    params: &LagrangianParams,
    pt: &PrimalDualPoint,
) -> Result<LyapunovValues, DynamicsError> {
    let v1 = lyapunov_v1(params, pt)?;
    let v2 = lyapunov_v2(lp, pt)?;
    Ok(LyapunovValues { v: v1 + v2, v1, v2 })
}

/// Outcome of comparing a finite-difference Lie derivative of `V` with the
/// error-dependent bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LieBoundReport {
    pub lhs: f64,
    pub rhs: f64,
    /// Allowance for truncation and rounding in `lhs`.
    pub tol_fd: f64,
    pub central: bool,
    pub holds: bool,
}

/// Default finite-difference step.
pub const LIE_STEP: f64 = 1e-6;

/// Estimates `L_F V(pt)` with `F = F(hat)` and compares it to
/// `−½ f̂ᵀI_σ̂ f̂ − ¼‖Ax̂ − b‖² + 40‖e_x‖² + 20‖e_z‖² + 15 fᵀI_{σ∖σ̂}f`.
///
/// Uses a central difference when the mode is the same on both sides of
/// `pt` and a forward difference otherwise.
pub fn lie_derivative_check(
    lp: &StandardLp,
    params: &LagrangianParams,
    pt: &PrimalDualPoint,
    hat: &PrimalDualPoint,
    h: f64,
) -> Result<LieBoundReport, DynamicsError> {
    let (fx, fz) = projected_flow(lp, hat)?;
    let f_pt = flow_f(lp, pt)?;
    let sigma = ActiveSet::from_flow(&f_pt, &pt.x);
    let f_hat = flow_f_unchecked(lp, &hat.x, &hat.z);
    let sigma_hat = ActiveSet::from_flow(&f_hat, &hat.x);
    if !sigma_hat.is_subset(&sigma) {
        return Err(DynamicsError::ModePrecondition("σ(x̂, ẑ) is not contained in σ(x, z)"));
    }
    let ahead = pt.advanced(&fx, &fz, h);
    if active_set(lp, &ahead)? != sigma {
        return Err(DynamicsError::ModePrecondition("σ changes within one step along the flow"));
    }
    let behind = pt.advanced(&fx, &fz, -h);
    let central = active_set(lp, &behind)? == sigma;

    let v_here = lyapunov(lp, params, pt)?.v;
    let v_ahead = lyapunov(lp, params, &ahead)?.v;
    let lhs = if central {
        (v_ahead - lyapunov(lp, params, &behind)?.v) / (2.0 * h)
    } else {
        (v_ahead - v_here) / h
    };

    let r_hat = lp.residual(&hat.x);
    let e_x: f64 = pt.x.iter().zip(&hat.x).map(|(a, b)| (a - b) * (a - b)).sum();
    let e_z: f64 = pt.z.iter().zip(&hat.z).map(|(a, b)| (a - b) * (a - b)).sum();
    let rhs = -0.5 * sigma_hat.quad(&f_hat) - 0.25 * dot(&r_hat, &r_hat)
        + 40.0 * e_x
        + 20.0 * e_z
        + 15.0 * sigma.difference(&sigma_hat).quad(&f_pt);

    // On a fixed mode V is quadratic with Hessian norm at most
    // 1 + (1 + ρ)² + 2ρ, where ρ ≤ ‖A‖_F² bounds ρ(AᵀA).
    let rho: f64 = lp.triplets().map(|t| t.value * t.value).sum();
    let hessian = 1.0 + (1.0 + rho).powi(2) + 2.0 * rho;
    let speed = dot(&fx, &fx) + dot(&fz, &fz);
    let truncation = if central { 0.0 } else { 0.5 * h * hessian * speed };
    let tol_fd = 1.1 * truncation + 1e-9 * (1.0 + v_here.abs()) * (1.0 + 1e-6 / h);
    Ok(LieBoundReport {
        lhs,
        rhs,
        tol_fd,
        central,
        holds: lhs <= rhs + tol_fd,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lp::Triplet;

    fn unit(c: f64) -> StandardLp {
        StandardLp::from_dense(vec![c], &[vec![1.0]], vec![1.0]).unwrap()
    }

    #[test]
    fn flow_examples() {
        let empty = StandardLp::new(vec![0.0], Vec::new(), []).unwrap();
        assert_eq!(flow_f(&empty, &PrimalDualPoint::zeros(1, 0)).unwrap(), vec![0.0]);
        assert_eq!(flow_f(&unit(0.0), &PrimalDualPoint::zeros(1, 1)).unwrap(), vec![1.0]);
    }

    #[test]
    fn active_set_examples() {
        let lp = unit(5.0);
        let sigma = active_set(&lp, &PrimalDualPoint::zeros(1, 1)).unwrap();
        assert!(sigma.is_empty());
        let sigma = active_set(&lp, &PrimalDualPoint::new(vec![0.1], vec![0.0])).unwrap();
        assert_eq!(sigma, ActiveSet::full(1));
    }

    #[test]
    fn projected_flow_examples() {
        let (xd, zd) = projected_flow(&unit(0.0), &PrimalDualPoint::zeros(1, 1)).unwrap();
        assert_eq!((xd, zd), (vec![1.0], vec![-1.0]));
        let (xd, _) = projected_flow(&unit(5.0), &PrimalDualPoint::zeros(1, 1)).unwrap();
        assert_eq!(xd, vec![0.0]);
        let err = projected_flow(&unit(0.0), &PrimalDualPoint::new(vec![-1.0], vec![0.0]));
        assert!(matches!(err, Err(DynamicsError::NegativeHat { index: 0, .. })));
    }

    #[test]
    fn v2_hand_value() {
        assert_eq!(lyapunov_v2(&unit(0.0), &PrimalDualPoint::zeros(1, 1)).unwrap(), 1.0);
    }

    #[test]
    fn v1_examples() {
        let saddle = SaddleReference { x_bar: vec![1.0, 2.0], z_bar: vec![3.0] };
        let params = LagrangianParams::new(1.0, saddle.clone());
        assert_eq!(lyapunov_v1(&params, &saddle.point()).unwrap(), 0.0);
        let shifted = PrimalDualPoint::new(vec![2.0, 2.0], vec![3.0]);
        assert_eq!(lyapunov_v1(&params, &shifted).unwrap(), 0.5);
        let missing = LagrangianParams { k: 1.0, saddle: None };
        assert_eq!(lyapunov_v1(&missing, &shifted), Err(DynamicsError::MissingSaddle));
    }

    #[test]
    fn lagrangian_zero_at_origin() {
        let lp = StandardLp::new(vec![1.0], vec![0.0], [Triplet { row: 0, col: 0, value: 2.0 }]).unwrap();
        let params = LagrangianParams { k: 3.0, saddle: None };
        assert_eq!(lagrangian(&lp, &params, &PrimalDualPoint::zeros(1, 1)).unwrap(), 0.0);
        let neg = PrimalDualPoint::new(vec![-1.0], vec![0.0]);
        // −1 + ½ + ½·4 + 0 + 3
        assert_eq!(lagrangian(&lp, &params, &neg).unwrap(), 4.5);
    }

    #[test]
    fn selector_is_projection() {
        let sigma = ActiveSet::from_mask(vec![true, false, true]);
        let s = sigma.selector_matrix();
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(s[i][j], s[j][i]);
                let sq: f64 = (0..3).map(|k| s[i][k] * s[k][j]).sum();
                assert_eq!(sq, s[i][j]);
            }
        }
        assert_eq!(sigma.bitstring(), "101");
        assert_eq!(ActiveSet::parse_bitstring("101"), Some(sigma));
    }

    #[test]
    fn lie_check_at_saddle() {
        let lp = unit(0.0);
        let saddle = SaddleReference::from_oracle(&lp).unwrap();
        let params = LagrangianParams::new(4.0, saddle.clone());
        let rep = lie_derivative_check(&lp, &params, &saddle.point(), &saddle.point(), LIE_STEP).unwrap();
        assert!(rep.holds);
        assert!(rep.lhs.abs() < 1e-9 && rep.rhs.abs() < 1e-12);
    }

    #[test]
    fn lie_check_rejects_mode_mismatch() {
        let lp = unit(5.0);
        let params = LagrangianParams::new(4.0, SaddleReference::from_oracle(&lp).unwrap());
        // σ(pt) is empty (f < 0 at x = 0) while σ(hat) is full.
        let pt = PrimalDualPoint::zeros(1, 1);
        let hat = PrimalDualPoint::new(vec![1.0], vec![0.0]);
        assert!(matches!(
            lie_derivative_check(&lp, &params, &pt, &hat, LIE_STEP),
            Err(DynamicsError::ModePrecondition(_))
        ));
    }
}
