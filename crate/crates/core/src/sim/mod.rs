//! Hybrid executor. Flows are integrated exactly (they are affine between
//! jumps), events are located in closed form, and every jump applies all
//! simultaneous broadcasts atomically.

mod audit;
mod events;
mod export;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{flow_f_unchecked, lyapunov, ActiveSet, LagrangianParams, LyapunovValues, PrimalDualPoint, SaddleReference};
use crate::lp::StandardLp;
use crate::topology::AgentGraph;
use crate::triggers::{
    apply_jump_with, centralized_eval, distributed_check, validate_config, Cause, ConfigError, NetworkState,
    TriggerConfig, TriggerMode, TriggerVerdict,
};

pub use audit::{
    flow_points, lyapunov_audit, lyapunov_audit_with, mode_mismatch_audit, LyapunovAudit, LyapunovViolation, MismatchInterval,
    MismatchReport, SigmaGainFailure,
};
pub use events::{advance, membership_change, mode_breakpoints, next_event_time, FlowRates, MERGE_WINDOW};
pub use export::{read_events_csv, read_trajectory_csv, write_events_csv, write_trajectory_csv, ExportError};

/// Gaps below this count toward the Zeno suspicion.
pub const ZENO_GAP: f64 = 1e-9;
/// Consecutive short gaps that raise the Zeno suspicion.
pub const ZENO_RUN: usize = 100;
/// Minimum length of an unbounded final flow to call the run eventually
/// continuous.
pub const DWELL: f64 = 1e-9;
/// Flows of at least the witness length must recur this often.
pub const RECURRENCE: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct HybridTime {
    pub t: f64,
    pub j: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleKind {
    Initial,
    /// Diagnostic cadence point inside a flow.
    Flow,
    /// Point inside a flow where the true mode changes.
    Breakpoint,
    /// State right after a jump.
    Jump,
    Final,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub time: HybridTime,
    pub kind: SampleKind,
    pub state: NetworkState,
    pub lyapunov: Option<LyapunovValues>,
    /// `σ(x, z)`.
    pub sigma: ActiveSet,
    /// `σ(x̂, ẑ)`.
    pub sigma_hat: ActiveSet,
    /// Causes of the jump that produced this sample, empty during flow.
    pub active: Cause,
}

/// One agent's broadcast. `j` is the jump counter after the jump.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BroadcastEvent {
    pub t: f64,
    pub j: usize,
    pub agent: usize,
    pub causes: Cause,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Persistence {
    /// No jump after `since` and the final flow lasts forever.
    EventuallyContinuous { since: f64 },
    /// Flows of length at least `tau_p` recur at least `RECURRENCE` times.
    RecurrentFlows { tau_p: f64 },
    Undetermined,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Horizon,
    JumpLimit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HybridTrajectory {
    pub mode: TriggerMode,
    pub n: usize,
    pub m: usize,
    pub samples: Vec<Sample>,
    pub events: Vec<BroadcastEvent>,
    /// Length of every flow interval, in order.
    pub flow_lengths: Vec<f64>,
    /// Time of every jump, in order.
    pub jump_times: Vec<f64>,
    pub persistence: Persistence,
    pub zeno_suspected: bool,
    /// Smallest gap between two `ZERO` broadcasts of the same agent.
    pub min_zero_separation: Option<f64>,
    pub stop: StopReason,
    pub end: HybridTime,
}

impl HybridTrajectory {
    pub fn final_state(&self) -> &NetworkState {
        &self.samples.last().expect("trajectory has an initial sample").state
    }

    pub fn jumps(&self) -> usize {
        self.end.j
    }

    /// Broadcast count per cause code.
    pub fn cause_counts(&self) -> Vec<(Cause, usize)> {
        Cause::all()
            .iter()
            .map(|c| (c, self.events.iter().filter(|e| e.causes.contains(c)).count()))
            .collect()
    }

    /// Smallest positive gap between distinct jump instants.
    pub fn min_inter_jump_gap(&self) -> Option<f64> {
        self.jump_times
            .windows(2)
            .map(|w| w[1] - w[0])
            .filter(|&g| g > 0.0)
            .min_by(f64::total_cmp)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Horizon {
    pub t_max: f64,
    pub j_max: usize,
}

/// Additive normal perturbation of every transmitted component.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub enabled: bool,
    pub std_dev: f64,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn off() -> Self {
        Self { enabled: false, std_dev: 0.0, seed: 0 }
    }

    pub fn normal(std_dev: f64, seed: u64) -> Self {
        Self { enabled: std_dev > 0.0, std_dev, seed }
    }
}

impl Default for NoiseSpec {
    fn default() -> Self {
        Self::off()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimOptions {
    pub horizon: Horizon,
    pub noise: NoiseSpec,
    /// Spacing of diagnostic samples inside flows. Defaults to
    /// `max(t_max/2000, min τ/4)`.
    pub cadence: Option<f64>,
    /// Enables the Lyapunov values on each sample.
    pub saddle: Option<SaddleReference>,
}

impl SimOptions {
    pub fn new(t_max: f64, j_max: usize) -> Self {
        Self {
            horizon: Horizon { t_max, j_max },
            noise: NoiseSpec::off(),
            cadence: None,
            saddle: None,
        }
    }

    pub fn with_noise(mut self, noise: NoiseSpec) -> Self {
        self.noise = noise;
        self
    }

    pub fn with_saddle(mut self, saddle: SaddleReference) -> Self {
        self.saddle = Some(saddle);
        self
    }

    pub fn with_cadence(mut self, cadence: f64) -> Self {
        self.cadence = Some(cadence);
        self
    }
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("initial state: {0}")]
    InvalidInit(String),
    #[error("zeno-abort: jump limit reached at t = {} after repeated near-simultaneous jumps", .partial.end.t)]
    ZenoAbort { partial: Box<HybridTrajectory> },
    #[error("divergence: state left the representable range at t = {}", .partial.end.t)]
    Divergence { partial: Box<HybridTrajectory> },
}

/// Initial state with every agent having just broadcast.
pub fn default_initial_state(lp: &StandardLp) -> NetworkState {
    NetworkState::synchronized(&PrimalDualPoint::new(vec![0.5; lp.n()], vec![0.0; lp.m()]))
}

/// Triggers that fire at `state` under the configured design.
pub fn check_triggers(lp: &StandardLp, graph: &AgentGraph, cfg: &TriggerConfig, state: &NetworkState) -> TriggerVerdict {
    match cfg.mode {
        TriggerMode::Distributed => distributed_check(lp, graph, cfg, state),
        TriggerMode::Centralized => centralized_eval(lp, &state.x, &state.z, &state.hat, state.error_reference()),
    }
}

/// Straight-line flow from `start` for time `t` with the broadcasts frozen
/// at `hat`. Used to build mismatch fixtures.
pub fn frozen_flow(lp: &StandardLp, hat: &PrimalDualPoint, start: &PrimalDualPoint, t: f64) -> PrimalDualPoint {
    let (xdot, zdot) = crate::dynamics::projected_flow_unchecked(lp, &hat.x, &hat.z);
    start.advanced(&xdot, &zdot, t)
}

struct Recorder<'a> {
    lp: &'a StandardLp,
    params: Option<LagrangianParams>,
    samples: Vec<Sample>,
}

impl Recorder<'_> {
    fn push(&mut self, t: f64, j: usize, kind: SampleKind, state: &NetworkState, active: Cause) {
        let sample = Sample::observe(self.lp, self.params.as_ref(), HybridTime { t, j }, kind, state.clone(), active);
        self.samples.push(sample);
    }
}

impl Sample {
    /// Records `state` with its diagnostics filled in. Lyapunov values need
    /// `params`.
    pub fn observe(
        lp: &StandardLp,
        params: Option<&LagrangianParams>,
        time: HybridTime,
        kind: SampleKind,
        state: NetworkState,
        active: Cause,
    ) -> Self {
        let f = flow_f_unchecked(lp, &state.x, &state.z);
        let f_hat = flow_f_unchecked(lp, &state.hat.x_hat, &state.hat.z_hat);
        Self {
            time,
            kind,
            lyapunov: params.and_then(|p| lyapunov(lp, p, &state.point()).ok()),
            sigma: ActiveSet::from_flow(&f, &state.x),
            sigma_hat: ActiveSet::from_flow(&f_hat, &state.hat.x_hat),
            state,
            active,
        }
    }
}

fn diverged(state: &NetworkState) -> bool {
    state.x.iter().chain(&state.z).any(|v| !v.is_finite() || v.abs() > 1e12)
}

/// Runs the hybrid system until `t_max` or `j_max`.
pub fn simulate(
    lp: &StandardLp,
    graph: &AgentGraph,
    cfg: &TriggerConfig,
    init: &NetworkState,
    opts: &SimOptions,
) -> Result<HybridTrajectory, SimError> {
    let violations = validate_config(graph, cfg);
    if !violations.is_empty() {
        return Err(ConfigError { violations }.into());
    }
    if init.x.len() != lp.n() || init.z.len() != lp.m() || init.book.s.len() != graph.n_agents() {
        return Err(SimError::InvalidInit("dimensions do not match the problem".into()));
    }
    if let Some(i) = init.x.iter().position(|&v| !(v >= 0.0)) {
        return Err(SimError::InvalidInit(format!("x[{i}] is negative")));
    }
    if init.hat.x_hat != init.x || init.hat.z_hat != init.z {
        return Err(SimError::InvalidInit("broadcast values must equal the state".into()));
    }

    let Horizon { t_max, j_max } = opts.horizon;
    let min_tau = cfg.tau.iter().copied().fold(f64::INFINITY, f64::min);
    let cadence = opts
        .cadence
        .unwrap_or_else(|| (t_max / 2000.0).max(if min_tau.is_finite() { min_tau / 4.0 } else { 0.0 }));
    let cadence = if cadence > 0.0 { cadence } else { t_max.max(1.0) };

    let mut rng = ChaCha8Rng::seed_from_u64(opts.noise.seed);
    let normal = Normal::new(0.0, opts.noise.std_dev.max(0.0)).expect("finite standard deviation");
    let mut draw = || normal.sample(&mut rng);
    let mut noise = opts.noise.enabled.then_some(&mut draw);

    let mut rec = Recorder {
        lp,
        params: opts.saddle.clone().map(|s| LagrangianParams::new(0.0, s)),
        samples: Vec::new(),
    };
    let mut state = init.clone();
    if noise.is_some() {
        state.sent = Some(state.hat.clone());
    }
    let mut t = 0.0;
    let mut j = 0usize;
    rec.push(t, j, SampleKind::Initial, &state, Cause::empty());

    let mut events = Vec::new();
    let mut flow_lengths = Vec::new();
    let mut jump_times: Vec<f64> = Vec::new();
    let mut short_run = 0usize;
    let mut zeno_suspected = false;
    let mut next_mark = cadence;
    let mut final_unbounded: Option<f64> = None;
    let mut pending = check_triggers(lp, graph, cfg, &state);
    let stop;

    macro_rules! finish {
        ($stop:expr) => {{
            let persistence = classify(&flow_lengths, final_unbounded);
            let min_zero_separation = zero_separation(&events, lp.n());
            HybridTrajectory {
                mode: cfg.mode,
                n: lp.n(),
                m: lp.m(),
                samples: std::mem::take(&mut rec.samples),
                events: std::mem::take(&mut events),
                flow_lengths: std::mem::take(&mut flow_lengths),
                jump_times: std::mem::take(&mut jump_times),
                persistence,
                zeno_suspected,
                min_zero_separation,
                stop: $stop,
                end: HybridTime { t, j },
            }
        }};
    }

    loop {
        while !pending.is_empty() {
            if j >= j_max {
                break;
            }
            if let Some(&last) = jump_times.last() {
                if t - last < ZENO_GAP {
                    short_run += 1;
                    if short_run >= ZENO_RUN {
                        zeno_suspected = true;
                    }
                } else {
                    short_run = 0;
                }
            }
            state = apply_jump_with(graph, &state, &pending, noise.as_deref_mut());
            j += 1;
            jump_times.push(t);
            for &(agent, causes) in &pending.fired {
                events.push(BroadcastEvent { t, j, agent, causes });
            }
            rec.push(t, j, SampleKind::Jump, &state, pending.all_causes());
            pending = check_triggers(lp, graph, cfg, &state);
        }
        if j >= j_max && !pending.is_empty() {
            stop = StopReason::JumpLimit;
            break;
        }
        if t >= t_max {
            stop = StopReason::Horizon;
            break;
        }

        let rates = FlowRates::of(lp, &state);
        let (dt, imminent) = events::next_event_with(lp, graph, cfg, &state, &rates);
        let event_at = t + dt;
        let end = if event_at <= t_max { event_at } else { t_max };
        let span = end - t;

        // Diagnostic samples inside the flow, evaluated from its start.
        let breakpoints = mode_breakpoints(lp, &state, &rates, span);
        let mut marks: Vec<(f64, SampleKind)> = breakpoints
            .into_iter()
            .map(|b| (t + b, SampleKind::Breakpoint))
            .collect();
        while next_mark < end {
            if next_mark > t {
                marks.push((next_mark, SampleKind::Flow));
            }
            next_mark += cadence;
        }
        marks.sort_by(|a, b| a.0.total_cmp(&b.0));
        for (tm, kind) in marks {
            let at = advance(cfg, &state, &rates, tm - t);
            rec.push(tm, j, kind, &at, Cause::empty());
        }

        let start = state.clone();
        state = advance(cfg, &start, &rates, span);
        flow_lengths.push(span);
        t = end;
        if diverged(&state) {
            rec.push(t, j, SampleKind::Final, &state, Cause::empty());
            let partial = finish!(StopReason::Horizon);
            return Err(SimError::Divergence { partial: Box::new(partial) });
        }

        if event_at <= t_max {
            for &(agent, causes) in &imminent.fired {
                // Centralized ZERO fires every agent; snap only the crossing ones.
                if agent < lp.n()
                    && causes.contains(Cause::ZERO)
                    && start.error_reference().x_hat[agent] > 0.0
                    && rates.xdot[agent] < 0.0
                    && start.x[agent] / -rates.xdot[agent] <= dt + MERGE_WINDOW
                {
                    state.x[agent] = 0.0;
                }
                if causes.contains(Cause::REQUEST) {
                    state.book.s[agent] = cfg.tau[agent];
                }
            }
            pending = imminent.merge(&check_triggers(lp, graph, cfg, &state));
        } else {
            if !dt.is_finite() && span > DWELL {
                final_unbounded = Some(start_time(&jump_times));
            }
            rec.push(t, j, SampleKind::Final, &state, Cause::empty());
            stop = StopReason::Horizon;
            break;
        }
    }

    if rec.samples.last().map(|s| s.kind) != Some(SampleKind::Final) {
        rec.push(t, j, SampleKind::Final, &state, Cause::empty());
    }
    let traj = finish!(stop);
    if stop == StopReason::JumpLimit && traj.zeno_suspected {
        return Err(SimError::ZenoAbort { partial: Box::new(traj) });
    }
    Ok(traj)
}

fn start_time(jump_times: &[f64]) -> f64 {
    jump_times.last().copied().unwrap_or(0.0)
}

fn classify(flow_lengths: &[f64], final_unbounded: Option<f64>) -> Persistence {
    if let Some(since) = final_unbounded {
        return Persistence::EventuallyContinuous { since };
    }
    let mut lengths: Vec<f64> = flow_lengths.iter().copied().filter(|&l| l > 0.0).collect();
    if lengths.len() < RECURRENCE {
        return Persistence::Undetermined;
    }
    lengths.sort_by(|a, b| b.total_cmp(a));
    Persistence::RecurrentFlows { tau_p: lengths[RECURRENCE - 1] }
}

fn zero_separation(events: &[BroadcastEvent], n: usize) -> Option<f64> {
    let mut last = vec![None::<f64>; n];
    let mut best: Option<f64> = None;
    for e in events.iter().filter(|e| e.agent < n && e.causes.contains(Cause::ZERO)) {
        if let Some(prev) = last[e.agent] {
            let gap = e.t - prev;
            best = Some(best.map_or(gap, |b: f64| b.min(gap)));
        }
        last[e.agent] = Some(e.t);
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topology::build_graph;

    fn unit() -> StandardLp {
        StandardLp::from_dense(vec![0.0], &[vec![1.0]], vec![1.0]).unwrap()
    }

    #[test]
    fn equilibrium_flows_forever() {
        let lp = unit();
        let g = build_graph(&lp);
        let cfg = TriggerConfig::defaults(&g, TriggerMode::Distributed);
        let saddle = SaddleReference::from_oracle(&lp).unwrap();
        let init = NetworkState::synchronized(&saddle.point());
        let traj = simulate(&lp, &g, &cfg, &init, &SimOptions::new(10.0, 100).with_saddle(saddle)).unwrap();
        assert!(traj.events.is_empty());
        assert_eq!(traj.persistence, Persistence::EventuallyContinuous { since: 0.0 });
        assert!(traj.samples.iter().all(|s| s.lyapunov.unwrap().v == 0.0));
    }

    #[test]
    fn scalar_run_converges() {
        let lp = unit();
        let g = build_graph(&lp);
        let cfg = TriggerConfig::defaults(&g, TriggerMode::Distributed);
        let init = NetworkState::synchronized(&PrimalDualPoint::zeros(1, 1));
        let traj = simulate(&lp, &g, &cfg, &init, &SimOptions::new(40.0, 1_000_000)).unwrap();
        let last = traj.final_state();
        assert!((last.x[0] - 1.0).abs() < 1e-3, "{:?}", last.x);
        assert!(!traj.zeno_suspected);
        let first = traj.events.first().unwrap();
        assert!((first.t - cfg.mu[0].sqrt()).abs() < 1e-12);
    }

    #[test]
    fn rejects_unsynchronized_start() {
        let lp = unit();
        let g = build_graph(&lp);
        let cfg = TriggerConfig::defaults(&g, TriggerMode::Distributed);
        let mut init = NetworkState::synchronized(&PrimalDualPoint::zeros(1, 1));
        init.x[0] = 0.3;
        assert!(matches!(
            simulate(&lp, &g, &cfg, &init, &SimOptions::new(1.0, 10)),
            Err(SimError::InvalidInit(_))
        ));
    }

    #[test]
    fn classification() {
        assert_eq!(classify(&[1.0; 3], None), Persistence::Undetermined);
        let lengths: Vec<f64> = (1..=12).map(f64::from).collect();
        assert_eq!(classify(&lengths, None), Persistence::RecurrentFlows { tau_p: 3.0 });
        assert_eq!(classify(&lengths, Some(2.0)), Persistence::EventuallyContinuous { since: 2.0 });
    }
}
