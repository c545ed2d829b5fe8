mod common;

use common::Prepared;
use etlp_core::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// A state in which no trigger fires: broadcasts taken at a random point,
/// then the true state nudged inside every error band.
fn quiet_state(lp: &StandardLp, graph: &AgentGraph, cfg: &TriggerConfig, rng: &mut ChaCha8Rng) -> Option<NetworkState> {
    let x: Vec<f64> = (0..lp.n()).map(|_| if rng.random_bool(0.3) { 0.0 } else { rng.random_range(0.0..2.0) }).collect();
    let z: Vec<f64> = (0..lp.m()).map(|_| rng.random_range(-2.0..2.0)).collect();
    let mut state = NetworkState::synchronized(&PrimalDualPoint::new(x, z));
    let rates = FlowRates::of(lp, &state);
    let lead = rng.random_range(0.0..0.05);
    for i in 0..lp.n() {
        if state.x[i] > 0.0 {
            state.x[i] = (state.x[i] + rates.xdot[i] * lead).max(1e-9);
        }
    }
    for l in 0..lp.m() {
        state.z[l] += rates.zdot[l] * lead;
    }
    for i in 0..graph.n_agents() {
        state.book.s[i] = rng.random_range(0.0..cfg.tau[i]);
    }
    check_triggers(lp, graph, cfg, &state).is_empty().then_some(state)
}

/// Whether a trigger fires after flowing for `t`, with primal components
/// that cross zero held at zero.
fn fired_after(lp: &StandardLp, graph: &AgentGraph, cfg: &TriggerConfig, state: &NetworkState, t: f64) -> bool {
    let rates = FlowRates::of(lp, state);
    let mut next = advance(cfg, state, &rates, t);
    for v in next.x.iter_mut() {
        *v = v.max(0.0);
    }
    !check_triggers(lp, graph, cfg, &next).is_empty()
}

/// First firing time found by a grid scan followed by bisection.
fn bisection_oracle(lp: &StandardLp, graph: &AgentGraph, cfg: &TriggerConfig, state: &NetworkState, hint: f64) -> f64 {
    let hi = if hint.is_finite() { 2.0 * hint + 1e-6 } else { 1e3 };
    let steps = 4000;
    let mut lo = 0.0;
    let mut upper = f64::INFINITY;
    for k in 1..=steps {
        let t = hi * k as f64 / steps as f64;
        if fired_after(lp, graph, cfg, state, t) {
            upper = t;
            break;
        }
        lo = t;
    }
    if !upper.is_finite() {
        return f64::INFINITY;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + upper);
        if mid <= lo || mid >= upper {
            break;
        }
        if fired_after(lp, graph, cfg, state, mid) {
            upper = mid;
        } else {
            lo = mid;
        }
    }
    upper
}

fn event_time_case(seed: u64, mode: TriggerMode) -> Result<(), TestCaseError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p = Prepared::new(random_desk_lp(seed));
    let cfg = TriggerConfig::defaults(&p.graph, mode);
    let state = (0..50).find_map(|_| quiet_state(&p.lp, &p.graph, &cfg, &mut rng));
    prop_assert!(state.is_some(), "no quiet state drawn");
    let state = state.unwrap();
    let (dt, verdict) = next_event_time(&p.lp, &p.graph, &cfg, &state);
    let oracle = bisection_oracle(&p.lp, &p.graph, &cfg, &state, dt);
    if dt.is_finite() {
        prop_assert!(!verdict.is_empty());
        prop_assert!((dt - oracle).abs() <= 1e-10 * (1.0 + dt), "dt {} oracle {}", dt, oracle);
    } else {
        prop_assert!(verdict.is_empty());
        prop_assert!(!oracle.is_finite());
    }
    Ok(())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn distributed_event_times_match_bisection(seed in any::<u64>()) {
        event_time_case(seed, TriggerMode::Distributed)?;
    }

    #[test]
    fn centralized_event_times_match_bisection(seed in any::<u64>()) {
        event_time_case(seed, TriggerMode::Centralized)?;
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn runs_are_well_formed(seed in any::<u64>(), centralized in any::<bool>()) {
        let p = Prepared::new(random_desk_lp(seed));
        let mode = if centralized { TriggerMode::Centralized } else { TriggerMode::Distributed };
        let traj = p.run(mode, 5.0, NoiseSpec::off()).unwrap();
        let lowest = traj.samples.iter().flat_map(|s| s.state.x.iter().copied()).fold(f64::INFINITY, f64::min);
        prop_assert!(lowest >= -1e-12);
        for w in traj.samples.windows(2) {
            let (a, b) = (w[0].time, w[1].time);
            prop_assert!(a.t < b.t || (a.t == b.t && a.j <= b.j));
        }
        prop_assert_eq!(traj.jumps(), traj.jump_times.len());
        // Between jumps each sample lies on the line through the first two.
        for seg in traj.samples.chunk_by(|a, b| a.time.j == b.time.j) {
            if let [first, second, rest @ ..] = seg {
                let span = second.time.t - first.time.t;
                for later in rest {
                    let w = (later.time.t - first.time.t) / span;
                    for i in 0..p.lp.n() {
                        let line = first.state.x[i] + w * (second.state.x[i] - first.state.x[i]);
                        prop_assert!((later.state.x[i] - line).abs() <= 1e-9 * (1.0 + w.abs()));
                    }
                }
            }
        }
    }

    #[test]
    fn same_seed_same_event_log(seed in any::<u64>()) {
        let p = Prepared::new(random_desk_lp(seed));
        let noise = NoiseSpec::normal(0.5, seed);
        let a = p.run(TriggerMode::Distributed, 5.0, noise).unwrap();
        let b = p.run(TriggerMode::Distributed, 5.0, noise).unwrap();
        prop_assert_eq!(&a.events, &b.events);
        prop_assert_eq!(&a.final_state().x, &b.final_state().x);
    }

    #[test]
    fn sampling_density_does_not_move_the_flow(seed in any::<u64>()) {
        let p = Prepared::new(random_desk_lp(seed));
        let cfg = TriggerConfig::defaults(&p.graph, TriggerMode::Distributed);
        let init = default_initial_state(&p.lp);
        let coarse = simulate(&p.lp, &p.graph, &cfg, &init, &SimOptions::new(5.0, 1_000_000).with_cadence(0.05)).unwrap();
        let fine = simulate(&p.lp, &p.graph, &cfg, &init, &SimOptions::new(5.0, 1_000_000).with_cadence(0.005)).unwrap();
        prop_assert!(fine.samples.len() > coarse.samples.len());
        prop_assert_eq!(coarse.jump_times.len(), fine.jump_times.len());
        let (a, b) = (coarse.final_state(), fine.final_state());
        for (u, v) in a.x.iter().chain(&a.z).zip(b.x.iter().chain(&b.z)) {
            prop_assert!((u - v).abs() < 1e-12);
        }
    }
}

#[test]
fn saddle_start_never_broadcasts_in_centralized_mode() {
    let p = Prepared::assignment();
    let cfg = TriggerConfig::defaults(&p.graph, TriggerMode::Centralized);
    let init = NetworkState::synchronized(&p.saddle.point());
    let traj = simulate(&p.lp, &p.graph, &cfg, &init, &SimOptions::new(50.0, 1000)).unwrap();
    assert!(traj.events.is_empty());
    assert!(matches!(traj.persistence, Persistence::EventuallyContinuous { since } if since == 0.0));
}

#[test]
fn zero_components_keep_requesting_at_a_distributed_saddle() {
    // x̄ = (0, 1, 1, 0): the zero brokers still ask for fresh values every τ.
    let p = Prepared::assignment();
    let cfg = TriggerConfig::defaults(&p.graph, TriggerMode::Distributed);
    let init = NetworkState::synchronized(&p.saddle.point());
    let traj = simulate(&p.lp, &p.graph, &cfg, &init, &SimOptions::new(1.0, 100_000)).unwrap();
    let counts = traj.cause_counts();
    let of = |c: Cause| counts.iter().find(|(k, _)| *k == c).map_or(0, |(_, n)| *n);
    assert!(of(Cause::REQUEST) > 0);
    assert_eq!(of(Cause::E), 0);
    let drift = traj.samples.iter().map(|s| common::sup_distance(&s.state.x, &p.saddle.x_bar)).fold(0.0, f64::max);
    assert!(drift < 1e-9);
}

#[test]
fn centralized_assignment_converges_with_fewer_jumps() {
    let p = Prepared::assignment();
    let central = p.run(TriggerMode::Centralized, 200.0, NoiseSpec::off()).unwrap();
    let distributed = p.run(TriggerMode::Distributed, 200.0, NoiseSpec::off()).unwrap();
    assert!(common::sup_distance(&central.final_state().x, &common::X_STAR) <= 0.05);
    assert!(central.jumps() < distributed.jumps());
}
