//! Closed-form event times. Between jumps the broadcast values are frozen,
//! so `x`, `z`, the errors, `f(x, z)` and the clocks all move affinely in
//! time and every trigger condition is a polynomial of degree at most two.

use crate::dynamics::{flow_f_unchecked, projected_flow_unchecked, ActiveSet};
use crate::lp::{dot, StandardLp};
use crate::topology::AgentGraph;
use crate::triggers::{Cause, NetworkState, TriggerConfig, TriggerMode, TriggerVerdict};

/// Events closer than this are processed as one jump.
pub const MERGE_WINDOW: f64 = 1e-12;

/// Constant rates of the current flow interval.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowRates {
    pub xdot: Vec<f64>,
    pub zdot: Vec<f64>,
}

impl FlowRates {
    /// The projection follows each agent's own clean value, which differs
    /// from the transmitted one only under broadcast noise.
    pub fn of(lp: &StandardLp, state: &NetworkState) -> Self {
        let (mut xdot, zdot) = projected_flow_unchecked(lp, &state.hat.x_hat, &state.hat.z_hat);
        if state.sent.is_some() {
            let f_hat = flow_f_unchecked(lp, &state.hat.x_hat, &state.hat.z_hat);
            let own = &state.error_reference().x_hat;
            for (i, v) in xdot.iter_mut().enumerate() {
                *v = if own[i] > 0.0 { f_hat[i] } else { f_hat[i].max(0.0) };
            }
        }
        Self { xdot, zdot }
    }

    pub fn is_still(&self) -> bool {
        self.xdot.iter().chain(&self.zdot).all(|&v| v == 0.0)
    }

    /// Rate of change of `f(x(t), z(t))`: `−(I + AᵀA)ẋ − Aᵀż`.
    pub fn fdot(&self, lp: &StandardLp) -> Vec<f64> {
        let ata_xdot = lp.at_mul(&lp.a_mul(&self.xdot));
        let at_zdot = lp.at_mul(&self.zdot);
        (0..lp.n())
            .map(|i| -(self.xdot[i] + ata_xdot[i] + at_zdot[i]))
            .collect()
    }
}

/// State after flowing for `dt` with frozen broadcasts.
pub fn advance(cfg: &TriggerConfig, state: &NetworkState, rates: &FlowRates, dt: f64) -> NetworkState {
    let mut next = state.clone();
    for (x, v) in next.x.iter_mut().zip(&rates.xdot) {
        *x += v * dt;
    }
    for (z, v) in next.z.iter_mut().zip(&rates.zdot) {
        *z += v * dt;
    }
    for (s, &tau) in next.book.s.iter_mut().zip(&cfg.tau) {
        if *s < tau {
            *s = (*s + dt).min(tau);
        }
    }
    next
}

/// First `t ≥ 0` at which `|e0 + rate·t|` reaches `threshold`, given that it
/// starts below.
fn band_exit(e0: f64, rate: f64, threshold: f64) -> Option<f64> {
    if rate > 0.0 {
        Some(((threshold - e0) / rate).max(0.0))
    } else if rate < 0.0 {
        Some(((threshold + e0) / -rate).max(0.0))
    } else {
        None
    }
}

/// Smallest positive root of `a t² + b t + c` for `a ≥ 0`, `c < 0`.
fn positive_root(a: f64, b: f64, c: f64) -> Option<f64> {
    if c >= 0.0 {
        return Some(0.0);
    }
    if a == 0.0 {
        return (b > 0.0).then(|| -c / b);
    }
    let disc = (b * b - 4.0 * a * c).sqrt();
    Some(if b > 0.0 { -2.0 * c / (b + disc) } else { (disc - b) / (2.0 * a) })
}

/// Earliest `t ≥ 0` at which membership of one index in `σ(x(t), z(t))`
/// differs from `m0`, where `f(t) = f0 + fdot·t` and `x(t) = x0 + xdot·t`.
/// Membership is `f ≥ 0 or x > 0`.
pub fn membership_change(f0: f64, fdot: f64, x0: f64, xdot: f64, m0: bool) -> Option<f64> {
    let after_zero = (f0 > 0.0 || (f0 == 0.0 && fdot >= 0.0)) || (x0 > 0.0 || (x0 == 0.0 && xdot > 0.0));
    if after_zero != m0 {
        return Some(0.0);
    }
    let t_f = (fdot != 0.0).then(|| -f0 / fdot).filter(|&t| t > 0.0);
    let t_x = (xdot != 0.0).then(|| -x0 / xdot).filter(|&t| t > 0.0);
    let mut candidates: Vec<f64> = t_f.into_iter().chain(t_x).collect();
    candidates.sort_by(f64::total_cmp);
    for c in candidates {
        let f_root = t_f == Some(c);
        let x_root = t_x == Some(c);
        let f_at = f_root || f0 + fdot * c >= 0.0;
        let x_at = !x_root && x0 + xdot * c > 0.0;
        let f_after = if f_root { fdot > 0.0 } else { f0 + fdot * c >= 0.0 };
        let x_after = if x_root { xdot > 0.0 } else { x0 + xdot * c > 0.0 };
        if (f_at || x_at) != m0 || (f_after || x_after) != m0 {
            return Some(c);
        }
    }
    None
}

/// Times in `(0, limit)` at which `σ(x(t), z(t))` changes along the current
/// flow because some `f_i` crosses zero while `x_i = 0`, ascending. Zero
/// crossings of `x` itself end the flow through the `ZERO` trigger and are
/// not interior breakpoints.
pub fn mode_breakpoints(lp: &StandardLp, state: &NetworkState, rates: &FlowRates, limit: f64) -> Vec<f64> {
    let f = flow_f_unchecked(lp, &state.x, &state.z);
    let fdot = rates.fdot(lp);
    let mut out: Vec<f64> = (0..lp.n())
        .filter_map(|i| {
            let t = (fdot[i] != 0.0).then(|| -f[i] / fdot[i])?;
            let x_at = state.x[i] + rates.xdot[i] * t;
            (t > 0.0 && t < limit && x_at <= 0.0).then_some(t)
        })
        .collect();
    out.sort_by(f64::total_cmp);
    out.dedup();
    out
}

/// Time until the next trigger fires under the current flow together with
/// the agents whose conditions are then met. Assumes no trigger fires now.
/// Returns `f64::INFINITY` and an empty verdict when nothing will ever fire.
pub fn next_event_time(
    lp: &StandardLp,
    graph: &AgentGraph,
    cfg: &TriggerConfig,
    state: &NetworkState,
) -> (f64, TriggerVerdict) {
    let rates = FlowRates::of(lp, state);
    next_event_with(lp, graph, cfg, state, &rates)
}

pub(crate) fn next_event_with(
    lp: &StandardLp,
    graph: &AgentGraph,
    cfg: &TriggerConfig,
    state: &NetworkState,
    rates: &FlowRates,
) -> (f64, TriggerVerdict) {
    let candidates = match cfg.mode {
        TriggerMode::Distributed => distributed_candidates(lp, cfg, state, rates),
        TriggerMode::Centralized => centralized_candidates(lp, state, rates),
    };
    let dt = candidates.iter().map(|&(t, _, _)| t).fold(f64::INFINITY, f64::min);
    if !dt.is_finite() {
        return (f64::INFINITY, TriggerVerdict::default());
    }
    let mut causes = vec![Cause::empty(); graph.n_agents()];
    for &(t, agent, cause) in &candidates {
        if t <= dt + MERGE_WINDOW {
            match agent {
                Some(a) => causes[a] |= cause,
                None => causes.iter_mut().for_each(|c| *c |= cause),
            }
        }
    }
    let fired = causes.into_iter().enumerate().filter(|(_, c)| !c.is_empty()).collect();
    (dt, TriggerVerdict { fired })
}

type Candidate = (f64, Option<usize>, Cause);

fn distributed_candidates(
    lp: &StandardLp,
    cfg: &TriggerConfig,
    state: &NetworkState,
    rates: &FlowRates,
) -> Vec<Candidate> {
    let n = lp.n();
    let f_hat = flow_f_unchecked(lp, &state.hat.x_hat, &state.hat.z_hat);
    let reference = state.error_reference();
    let mut out = Vec::new();
    for i in 0..n {
        let xdot = rates.xdot[i];
        if f_hat[i] != 0.0 {
            let threshold = cfg.mu[i].sqrt() * f_hat[i].abs();
            if let Some(t) = band_exit(state.x[i] - reference.x_hat[i], xdot, threshold) {
                out.push((t, Some(i), Cause::E));
            }
        }
        if reference.x_hat[i] > 0.0 && xdot < 0.0 {
            out.push((state.x[i] / -xdot, Some(i), Cause::ZERO));
        }
        if state.x[i] == 0.0 && xdot == 0.0 {
            out.push(((cfg.tau[i] - state.book.s[i]).max(0.0), Some(i), Cause::REQUEST));
        }
    }
    for l in 0..lp.m() {
        let rate = rates.zdot[l];
        if rate != 0.0 {
            let threshold = cfg.mu[n + l].sqrt() * rate.abs();
            if let Some(t) = band_exit(state.z[l] - reference.z_hat[l], rate, threshold) {
                out.push((t, Some(n + l), Cause::E));
            }
        }
    }
    out
}

fn centralized_candidates(lp: &StandardLp, state: &NetworkState, rates: &FlowRates) -> Vec<Candidate> {
    let hat = &state.hat;
    let reference = state.error_reference();
    let f_hat = flow_f_unchecked(lp, &hat.x_hat, &hat.z_hat);
    let sigma_hat = ActiveSet::from_flow(&f_hat, &reference.x_hat);
    let r_hat = &rates.zdot;
    let mut out = Vec::new();

    let moving = r_hat.iter().any(|&v| v != 0.0) || sigma_hat.iter().any(|i| f_hat[i] != 0.0);
    if moving {
        let lhs = 0.125 * dot(r_hat, r_hat) + 0.25 * sigma_hat.quad(&f_hat);
        let e_x: Vec<f64> = state.x.iter().zip(&reference.x_hat).map(|(a, b)| a - b).collect();
        let e_z: Vec<f64> = state.z.iter().zip(&reference.z_hat).map(|(a, b)| a - b).collect();
        let a = 40.0 * dot(&rates.xdot, &rates.xdot) + 20.0 * dot(&rates.zdot, &rates.zdot);
        let b = 2.0 * (40.0 * dot(&e_x, &rates.xdot) + 20.0 * dot(&e_z, &rates.zdot));
        let c = 40.0 * dot(&e_x, &e_x) + 20.0 * dot(&e_z, &e_z) - lhs;
        if let Some(t) = positive_root(a, b, c) {
            out.push((t, None, Cause::E));
        }
    }
    for i in 0..lp.n() {
        if reference.x_hat[i] > 0.0 && rates.xdot[i] < 0.0 {
            out.push((state.x[i] / -rates.xdot[i], None, Cause::ZERO));
        }
    }
    let f = flow_f_unchecked(lp, &state.x, &state.z);
    let fdot = rates.fdot(lp);
    for i in 0..lp.n() {
        let m0 = sigma_hat.contains(i);
        if let Some(t) = membership_change(f[i], fdot[i], state.x[i], rates.xdot[i], m0) {
            // Step just past the crossing so that the broadcast captures the
            // new mode rather than a rounding of the old one.
            out.push((t + MERGE_WINDOW * (1.0 + t), None, Cause::SIGMA));
        }
    }
    out
}
