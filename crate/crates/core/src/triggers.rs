//! Broadcast triggers. The centralized design makes every agent broadcast
//! at once; the distributed design lets each agent decide from local data,
//! with request and synchronization flags covering the mode mismatches that
//! local data cannot detect.

use std::collections::BTreeSet;

use bitflags::bitflags;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{flow_f_unchecked, ActiveSet, PrimalDualPoint};
use crate::lp::{dot, StandardLp};
use crate::topology::AgentGraph;

bitflags! {
    #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, PartialOrd, Ord, Serialize, Deserialize)]
    pub struct Cause: u8 {
        const E = 1;
        const ZERO = 1 << 1;
        const SIGMA = 1 << 2;
        const REQUEST = 1 << 3;
        const SEND = 1 << 4;
        const SYNCH = 1 << 5;
    }
}

impl Cause {
    /// Comma-joined cause codes, e.g. `E,ZERO`.
    pub fn codes(self) -> String {
        self.iter_names().map(|(name, _)| name).collect::<Vec<_>>().join(",")
    }

    pub fn parse_codes(s: &str) -> Option<Self> {
        s.split(',')
            .filter(|p| !p.is_empty())
            .try_fold(Cause::empty(), |acc, code| Cause::from_name(code.trim()).map(|c| acc | c))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum TriggerMode {
    Centralized,
    #[default]
    Distributed,
}

/// Last values transmitted, `x̂` and `ẑ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BroadcastState {
    pub x_hat: Vec<f64>,
    pub z_hat: Vec<f64>,
}

impl BroadcastState {
    pub fn as_point(&self) -> PrimalDualPoint {
        PrimalDualPoint::new(self.x_hat.clone(), self.z_hat.clone())
    }
}

impl From<&PrimalDualPoint> for BroadcastState {
    fn from(pt: &PrimalDualPoint) -> Self {
        Self {
            x_hat: pt.x.clone(),
            z_hat: pt.z.clone(),
        }
    }
}

/// Clocks and flags of the distributed design, one entry per agent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bookkeeping {
    /// Time since own last broadcast, saturating at `τ_i`.
    pub s: Vec<f64>,
    /// Pending requests as `(receiver, requester)`.
    pub q: BTreeSet<(usize, usize)>,
    /// Value of `s_i` when a neighbor last broadcast, `-1` if none since
    /// the agent's own last broadcast.
    pub r: Vec<f64>,
}

impl Bookkeeping {
    pub fn synchronized(n_agents: usize) -> Self {
        Self {
            s: vec![0.0; n_agents],
            q: BTreeSet::new(),
            r: vec![-1.0; n_agents],
        }
    }
}

/// The full hybrid state `ξ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkState {
    pub x: Vec<f64>,
    pub z: Vec<f64>,
    /// Values every agent uses to compute its dynamics.
    pub hat: BroadcastState,
    pub book: Bookkeeping,
    /// Clean values the senders transmitted, kept only when the channel
    /// perturbs broadcasts. Each sender measures its error against these and
    /// projects its own flow by them. `ZERO` fires at `x_i = 0` while either
    /// the clean or the received value is positive.
    pub sent: Option<BroadcastState>,
}

impl NetworkState {
    /// State right after a broadcast by every agent.
    pub fn synchronized(pt: &PrimalDualPoint) -> Self {
        let n_agents = pt.x.len() + pt.z.len();
        Self {
            x: pt.x.clone(),
            z: pt.z.clone(),
            hat: BroadcastState::from(pt),
            book: Bookkeeping::synchronized(n_agents),
            sent: None,
        }
    }

    pub fn point(&self) -> PrimalDualPoint {
        PrimalDualPoint::new(self.x.clone(), self.z.clone())
    }

    pub fn hat_point(&self) -> PrimalDualPoint {
        self.hat.as_point()
    }

    /// Reference the trigger errors are measured against.
    pub fn error_reference(&self) -> &BroadcastState {
        self.sent.as_ref().unwrap_or(&self.hat)
    }

    pub fn e_x(&self) -> Vec<f64> {
        let r = self.error_reference();
        self.x.iter().zip(&r.x_hat).map(|(a, b)| a - b).collect()
    }

    pub fn e_z(&self) -> Vec<f64> {
        let r = self.error_reference();
        self.z.iter().zip(&r.z_hat).map(|(a, b)| a - b).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TriggerConfig {
    pub mode: TriggerMode,
    pub mu: Vec<f64>,
    pub tau: Vec<f64>,
    pub r_min: Vec<f64>,
}

pub const DEFAULT_MU: f64 = 1.0 / 160.0;
pub const DEFAULT_TAU_SCALE: f64 = 0.9;
pub const DEFAULT_RMIN_SCALE: f64 = 0.5;

/// Upper bound on `τ_i`: `1/√(960 |𝒩_i| max_{j∈𝒩_i} |𝒩_j|)`, infinite for
/// an isolated agent.
pub fn tau_bound(graph: &AgentGraph, agent: usize) -> f64 {
    let own = graph.degree(agent);
    let widest = graph.neighbors[agent].iter().map(|&j| graph.degree(j)).max().unwrap_or(0);
    let product = (960 * own * widest) as f64;
    if product == 0.0 {
        f64::INFINITY
    } else {
        1.0 / product.sqrt()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Violation {
    pub agent: usize,
    pub parameter: &'static str,
    pub value: f64,
    pub bound: String,
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "agent {}: {} = {} violates {}", self.agent, self.parameter, self.value, self.bound)
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
#[error("invalid trigger configuration: {}", .violations.iter().map(ToString::to_string).collect::<Vec<_>>().join("; "))]
pub struct ConfigError {
    pub violations: Vec<Violation>,
}

impl TriggerConfig {
    /// Checks the parameters against the graph and rejects them if any
    /// bound fails.
    pub fn new(
        graph: &AgentGraph,
        mode: TriggerMode,
        mu: Vec<f64>,
        tau: Vec<f64>,
        r_min: Vec<f64>,
    ) -> Result<Self, ConfigError> {
        let cfg = Self { mode, mu, tau, r_min };
        let violations = validate_config(graph, &cfg);
        if violations.is_empty() {
            Ok(cfg)
        } else {
            Err(ConfigError { violations })
        }
    }

    /// `μ_i = mu`, `τ_i = tau_scale · bound_i` and `r_min_i = rmin_scale · τ_i`.
    /// Isolated agents get `τ_i = 1`.
    pub fn scaled(
        graph: &AgentGraph,
        mode: TriggerMode,
        mu: f64,
        tau_scale: f64,
        rmin_scale: f64,
    ) -> Result<Self, ConfigError> {
        let k = graph.n_agents();
        let tau: Vec<f64> = (0..k)
            .map(|i| {
                let bound = tau_bound(graph, i);
                if bound.is_finite() {
                    tau_scale * bound
                } else {
                    1.0
                }
            })
            .collect();
        let r_min = tau.iter().map(|t| rmin_scale * t).collect();
        Self::new(graph, mode, vec![mu; k], tau, r_min)
    }

    pub fn defaults(graph: &AgentGraph, mode: TriggerMode) -> Self {
        Self::scaled(graph, mode, DEFAULT_MU, DEFAULT_TAU_SCALE, DEFAULT_RMIN_SCALE)
            .expect("default parameters satisfy their own bounds")
    }
}

/// Every parameter bound that fails. Centralized configurations only need
/// the right lengths; the remaining bounds concern the distributed design.
pub fn validate_config(graph: &AgentGraph, cfg: &TriggerConfig) -> Vec<Violation> {
    let k = graph.n_agents();
    let mut out = Vec::new();
    for (name, v) in [("mu", &cfg.mu), ("tau", &cfg.tau), ("r_min", &cfg.r_min)] {
        if v.len() != k {
            out.push(Violation {
                agent: v.len(),
                parameter: name,
                value: f64::NAN,
                bound: format!("one entry per agent ({k})"),
            });
        }
    }
    if !out.is_empty() || cfg.mode == TriggerMode::Centralized {
        return out;
    }
    for i in 0..k {
        let (mu, tau, r_min) = (cfg.mu[i], cfg.tau[i], cfg.r_min[i]);
        if !(mu > 0.0 && mu <= DEFAULT_MU) {
            out.push(Violation { agent: i, parameter: "mu", value: mu, bound: "0 < mu <= 1/160".into() });
        }
        if !(r_min > 0.0) {
            out.push(Violation { agent: i, parameter: "r_min", value: r_min, bound: "r_min > 0".into() });
        }
        if !(r_min <= tau) {
            out.push(Violation { agent: i, parameter: "r_min", value: r_min, bound: format!("r_min <= tau = {tau}") });
        }
        let bound = tau_bound(graph, i);
        if !(tau < bound) {
            out.push(Violation {
                agent: i,
                parameter: "tau",
                value: tau,
                bound: format!("tau < 1/sqrt(960 |N_i| max_j |N_j|) = {bound}"),
            });
        }
    }
    out
}

/// Agents that must broadcast now, with the reasons, ascending by agent.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TriggerVerdict {
    pub fired: Vec<(usize, Cause)>,
}

impl TriggerVerdict {
    pub fn is_empty(&self) -> bool {
        self.fired.is_empty()
    }

    pub fn causes_of(&self, agent: usize) -> Cause {
        self.fired
            .binary_search_by_key(&agent, |&(a, _)| a)
            .map(|k| self.fired[k].1)
            .unwrap_or_default()
    }

    pub fn agents(&self) -> impl Iterator<Item = usize> + '_ {
        self.fired.iter().map(|&(a, _)| a)
    }

    pub fn all_causes(&self) -> Cause {
        self.fired.iter().fold(Cause::empty(), |acc, &(_, c)| acc | c)
    }

    /// Agent-wise union of two verdicts.
    pub fn merge(&self, other: &TriggerVerdict) -> TriggerVerdict {
        let mut fired = self.fired.clone();
        for &(a, c) in &other.fired {
            match fired.binary_search_by_key(&a, |&(b, _)| b) {
                Ok(k) => fired[k].1 |= c,
                Err(k) => fired.insert(k, (a, c)),
            }
        }
        TriggerVerdict { fired }
    }

    fn from_causes(causes: Vec<Cause>) -> Self {
        Self {
            fired: causes.into_iter().enumerate().filter(|(_, c)| !c.is_empty()).collect(),
        }
    }
}

/// Centralized trigger: everyone broadcasts when the error bound is met,
/// the mode of the broadcast state differs from the true mode, or a
/// broadcast positive component has reached zero.
pub fn centralized_check(lp: &StandardLp, pt: &PrimalDualPoint, hat: &BroadcastState) -> TriggerVerdict {
    centralized_eval(lp, &pt.x, &pt.z, hat, hat)
}

pub(crate) fn centralized_eval(
    lp: &StandardLp,
    x: &[f64],
    z: &[f64],
    hat: &BroadcastState,
    reference: &BroadcastState,
) -> TriggerVerdict {
    let causes = centralized_causes(lp, x, z, hat, reference);
    if causes.is_empty() {
        return TriggerVerdict::default();
    }
    TriggerVerdict {
        fired: (0..lp.n() + lp.m()).map(|a| (a, causes)).collect(),
    }
}

pub(crate) fn centralized_causes(
    lp: &StandardLp,
    x: &[f64],
    z: &[f64],
    hat: &BroadcastState,
    reference: &BroadcastState,
) -> Cause {
    let f_hat = flow_f_unchecked(lp, &hat.x_hat, &hat.z_hat);
    let sigma_hat = ActiveSet::from_flow(&f_hat, &reference.x_hat);
    let r_hat = lp.residual(&hat.x_hat);
    let mut causes = Cause::empty();

    let moving = r_hat.iter().any(|&v| v != 0.0) || sigma_hat.iter().any(|i| f_hat[i] != 0.0);
    if moving {
        let e_x: f64 = x.iter().zip(&reference.x_hat).map(|(a, b)| (a - b) * (a - b)).sum();
        let e_z: f64 = z.iter().zip(&reference.z_hat).map(|(a, b)| (a - b) * (a - b)).sum();
        let lhs = 0.125 * dot(&r_hat, &r_hat) + 0.25 * sigma_hat.quad(&f_hat);
        if lhs <= 20.0 * e_z + 40.0 * e_x {
            causes |= Cause::E;
        }
    }
    let sigma = ActiveSet::from_flow(&flow_f_unchecked(lp, x, z), x);
    if sigma != sigma_hat {
        causes |= Cause::SIGMA;
    }
    let zero = (0..x.len()).any(|i| x[i] == 0.0 && (hat.x_hat[i] > 0.0 || reference.x_hat[i] > 0.0));
    if zero {
        causes |= Cause::ZERO;
    }
    causes
}

/// Per-agent distributed triggers.
///
/// `SYNCH` requires `r_i > 0`: an agent that broadcast in the same instant
/// as its neighbor already shares its information, and firing again would
/// bounce between the two forever without time advancing.
pub fn distributed_check(
    lp: &StandardLp,
    graph: &AgentGraph,
    cfg: &TriggerConfig,
    state: &NetworkState,
) -> TriggerVerdict {
    let n = lp.n();
    let f_hat = flow_f_unchecked(lp, &state.hat.x_hat, &state.hat.z_hat);
    let r_hat = lp.residual(&state.hat.x_hat);
    let reference = state.error_reference();
    let mut causes = vec![Cause::empty(); graph.n_agents()];

    for (i, cause) in causes.iter_mut().enumerate() {
        if i < n {
            let e = state.x[i] - reference.x_hat[i];
            if f_hat[i] != 0.0 && e * e >= cfg.mu[i] * f_hat[i] * f_hat[i] {
                *cause |= Cause::E;
            }
            if state.x[i] == 0.0 && (state.hat.x_hat[i] > 0.0 || reference.x_hat[i] > 0.0) {
                *cause |= Cause::ZERO;
            }
            if state.x[i] == 0.0 && state.book.s[i] >= cfg.tau[i] {
                *cause |= Cause::REQUEST;
            }
        } else {
            let l = i - n;
            let e = state.z[l] - reference.z_hat[l];
            if r_hat[l] != 0.0 && e * e >= cfg.mu[i] * r_hat[l] * r_hat[l] {
                *cause |= Cause::E;
            }
        }
        if has_request(state, graph, i) {
            *cause |= Cause::SEND;
        }
        let r = state.book.r[i];
        if r > 0.0 && r <= cfg.r_min[i] {
            *cause |= Cause::SYNCH;
        }
    }
    TriggerVerdict::from_causes(causes)
}

fn has_request(state: &NetworkState, graph: &AgentGraph, i: usize) -> bool {
    state
        .book
        .q
        .range((i, 0)..(i, graph.n_real))
        .next()
        .is_some()
}

/// Jump map. Each fired agent transmits its current value, restarts its
/// clock and tells its neighbors how long ago they last broadcast. Pending
/// requests to a fired agent are serviced before new requests are posted.
pub fn apply_jump(graph: &AgentGraph, state: &NetworkState, verdict: &TriggerVerdict) -> NetworkState {
    apply_jump_with(graph, state, verdict, None::<&mut fn() -> f64>)
}

/// Jump map with an optional additive perturbation of every transmitted
/// component. Primal broadcasts are clamped at zero.
pub(crate) fn apply_jump_with<N: FnMut() -> f64>(
    graph: &AgentGraph,
    state: &NetworkState,
    verdict: &TriggerVerdict,
    mut noise: Option<&mut N>,
) -> NetworkState {
    let n = graph.n_real;
    let mut next = state.clone();
    if noise.is_some() && next.sent.is_none() {
        next.sent = Some(state.hat.clone());
    }
    for &(i, causes) in &verdict.fired {
        let clean = if i < n { state.x[i] } else { state.z[i - n] };
        let value = match noise.as_deref_mut() {
            Some(draw) => clean + draw(),
            None => clean,
        };
        if i < n {
            next.hat.x_hat[i] = value.max(0.0);
            if let Some(sent) = next.sent.as_mut() {
                sent.x_hat[i] = clean;
            }
        } else {
            next.hat.z_hat[i - n] = value;
            if let Some(sent) = next.sent.as_mut() {
                sent.z_hat[i - n] = clean;
            }
        }
        if causes.contains(Cause::SEND) {
            let serviced: Vec<_> = next.book.q.range((i, 0)..(i, n)).copied().collect();
            for key in serviced {
                next.book.q.remove(&key);
            }
        }
    }
    for &(i, causes) in &verdict.fired {
        if causes.contains(Cause::REQUEST) {
            for &j in &graph.neighbors[i] {
                next.book.q.insert((j, i));
            }
        }
        for &j in &graph.neighbors[i] {
            next.book.r[j] = state.book.s[j];
        }
    }
    for i in verdict.agents() {
        next.book.s[i] = 0.0;
        next.book.r[i] = -1.0;
    }
    next
}
