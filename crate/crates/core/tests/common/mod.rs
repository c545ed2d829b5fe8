#![allow(dead_code)]

use etlp_core::*;

/// Horizon at which the assignment run is judged.
pub const HORIZON: f64 = 200.0;
pub const JUMP_LIMIT: usize = 2_000_000;
pub const X_STAR: [f64; 4] = [0.0, 1.0, 1.0, 0.0];

pub struct Prepared {
    pub original: StandardLp,
    pub lp: StandardLp,
    pub graph: AgentGraph,
    pub saddle: SaddleReference,
}

impl Prepared {
    pub fn new(original: StandardLp) -> Self {
        let graph = build_graph(&original);
        let lp = max_consensus_scale(&original, &graph).unwrap().scaled;
        let saddle = SaddleReference::from_oracle(&lp).unwrap();
        Self { original, lp, graph, saddle }
    }

    pub fn assignment() -> Self {
        Self::new(generate_assignment(&AssignmentSpec::two_agent()).unwrap())
    }

    pub fn params(&self) -> LagrangianParams {
        LagrangianParams::new(10.0, self.saddle.clone())
    }

    pub fn run(&self, mode: TriggerMode, t_max: f64, noise: NoiseSpec) -> Result<HybridTrajectory, SimError> {
        let cfg = TriggerConfig::defaults(&self.graph, mode);
        let opts = SimOptions::new(t_max, JUMP_LIMIT).with_noise(noise).with_saddle(self.saddle.clone());
        simulate(&self.lp, &self.graph, &cfg, &default_initial_state(&self.lp), &opts)
    }
}

/// Broadcasts frozen at `x̂ = (1, 0)` on `x₁ − x₂ = 1`. Index 1 enters
/// `σ(x, z)` at `t = 0.1` and `f₂(t) = t − 0.1`, while `σ(x̂, ẑ)` stays `{0}`
/// and the neighbor energy is `f̂₁² = 1`.
pub fn forced_mismatch(until: f64, steps: usize) -> (StandardLp, Vec<Sample>) {
    let lp = StandardLp::from_dense(vec![-2.0, 0.1], &[vec![1.0, -1.0]], vec![1.0]).unwrap();
    let hat = PrimalDualPoint::new(vec![1.0, 0.0], vec![0.0]);
    let samples = (0..=steps)
        .map(|k| {
            let t = until * k as f64 / steps as f64;
            let pt = frozen_flow(&lp, &hat, &hat, t);
            let mut state = NetworkState::synchronized(&hat);
            state.x = pt.x;
            state.z = pt.z;
            Sample::observe(&lp, None, HybridTime { t, j: 0 }, SampleKind::Flow, state, Cause::empty())
        })
        .collect();
    (lp, samples)
}

pub fn sup_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max)
}

/// Coefficient of determination of the least-squares line through `pts`.
pub fn r_squared(pts: &[(f64, f64)]) -> f64 {
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = pts.iter().map(|p| (p.1 - my).powi(2)).sum();
    if syy == 0.0 {
        return 1.0;
    }
    let slope = sxy / sxx;
    let sse: f64 = pts.iter().map(|p| (p.1 - my - slope * (p.0 - mx)).powi(2)).sum();
    1.0 - sse / syy
}

/// Cumulative broadcast count sampled on `points` evenly spaced times in
/// `[from, to]`.
pub fn cumulative_broadcasts(traj: &HybridTrajectory, from: f64, to: f64, points: usize) -> Vec<(f64, f64)> {
    (0..points)
        .map(|k| {
            let t = from + (to - from) * k as f64 / (points - 1) as f64;
            (t, traj.events.partition_point(|e| e.t <= t) as f64)
        })
        .collect()
}
