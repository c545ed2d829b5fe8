//! Post-hoc checks on recorded trajectories.

use serde::{Deserialize, Serialize};

use super::Sample;
use crate::dynamics::{flow_f_unchecked, lyapunov, ActiveSet, DynamicsError, LagrangianParams, LyapunovValues, PrimalDualPoint};
use crate::lp::StandardLp;
use crate::topology::AgentGraph;
use crate::triggers::BroadcastState;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LyapunovViolation {
    pub index: usize,
    pub t: f64,
    pub j: usize,
    pub increase: f64,
}

/// An index entered `σ` between two samples while `|f_i|` was not small at
/// either of them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SigmaGainFailure {
    pub index: usize,
    pub agent: usize,
    pub t: f64,
    pub f_before: f64,
    pub f_after: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LyapunovAudit {
    pub values: Vec<LyapunovValues>,
    pub tolerance: f64,
    pub max_increase: f64,
    pub violations: Vec<LyapunovViolation>,
    pub sigma_gains: usize,
    pub sigma_gain_failures: Vec<SigmaGainFailure>,
    /// False for noisy runs, where increases are reported but tolerated.
    pub enforced: bool,
    pub passed: bool,
}

impl LyapunovAudit {
    pub fn v0(&self) -> f64 {
        self.values.first().map_or(0.0, |v| v.v)
    }

    pub fn v_final(&self) -> f64 {
        self.values.last().map_or(0.0, |v| v.v)
    }
}

/// Flags every rise of `V` between consecutive samples above
/// `1e-7·(1 + V(0))`, and every entry into `σ` at which `f_i` was not close
/// to zero. Noisy runs (those carrying clean sent values) are not enforced.
pub fn lyapunov_audit(
    samples: &[Sample],
    lp: &StandardLp,
    params: &LagrangianParams,
) -> Result<LyapunovAudit, DynamicsError> {
    let enforce = samples.first().is_none_or(|s| s.state.sent.is_none());
    lyapunov_audit_with(samples, lp, params, enforce)
}

pub fn lyapunov_audit_with(
    samples: &[Sample],
    lp: &StandardLp,
    params: &LagrangianParams,
    enforce: bool,
) -> Result<LyapunovAudit, DynamicsError> {
    let values = samples
        .iter()
        .map(|s| lyapunov(lp, params, &s.state.point()))
        .collect::<Result<Vec<_>, _>>()?;
    let v0 = values.first().map_or(0.0, |v| v.v);
    let tolerance = 1e-7 * (1.0 + v0);
    let mut max_increase = f64::NEG_INFINITY;
    let mut violations = Vec::new();
    let mut sigma_gains = 0;
    let mut sigma_gain_failures = Vec::new();
    let mut prev_f: Option<Vec<f64>> = None;
    for (k, s) in samples.iter().enumerate() {
        let f = flow_f_unchecked(lp, &s.state.x, &s.state.z);
        if k > 0 {
            let rise = values[k].v - values[k - 1].v;
            max_increase = max_increase.max(rise);
            if rise > tolerance {
                violations.push(LyapunovViolation { index: k, t: s.time.t, j: s.time.j, increase: rise });
            }
            let before = &samples[k - 1].sigma;
            let pf = prev_f.as_ref().expect("set on previous iteration");
            let scale = 1e-6 * (1.0 + f.iter().fold(0.0_f64, |a, v| a.max(v.abs())));
            for i in s.sigma.difference(before).iter() {
                sigma_gains += 1;
                if pf[i].abs().min(f[i].abs()) > scale {
                    sigma_gain_failures.push(SigmaGainFailure {
                        index: k,
                        agent: i,
                        t: s.time.t,
                        f_before: pf[i],
                        f_after: f[i],
                    });
                }
            }
        }
        prev_f = Some(f);
    }
    let passed = !enforce || (violations.is_empty() && sigma_gain_failures.is_empty());
    Ok(LyapunovAudit {
        values,
        tolerance,
        max_increase: if samples.len() > 1 { max_increase } else { 0.0 },
        violations,
        sigma_gains,
        sigma_gain_failures,
        enforced: enforce,
        passed,
    })
}

/// A maximal stretch during which index `agent` is in `σ(x, z)` but not in
/// `σ(x̂, ẑ)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MismatchInterval {
    pub agent: usize,
    pub onset: f64,
    /// `f_i(x, z)` at the onset. Zero when the mismatch opens by `f_i`
    /// crossing zero during a flow; positive when it opens at a jump whose
    /// state already differs from the new broadcast values.
    pub onset_value: f64,
    /// `None` when the trajectory ends inside the interval.
    pub end: Option<f64>,
    pub duration: f64,
    /// Largest `f_i² / (8 (t − T)² Q)` seen; at most one when the bound holds.
    pub worst_ratio: f64,
    pub bound_ok: bool,
    pub duration_ok: bool,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MismatchReport {
    pub intervals: Vec<MismatchInterval>,
    pub bound_failures: usize,
    pub duration_failures: usize,
}

impl MismatchReport {
    pub fn passed(&self) -> bool {
        self.bound_failures == 0 && self.duration_failures == 0
    }
}

struct Point<'a> {
    t: f64,
    x: &'a [f64],
    z: &'a [f64],
    hat: &'a BroadcastState,
}

struct Open {
    onset: f64,
    onset_value: f64,
    max_q: f64,
    worst_ratio: f64,
    bound_ok: bool,
    duration_ok: bool,
    last_t: f64,
}

/// `f̂ᵀ I_{σ̂ ∩ 𝒩_i^x} f̂ + Σ_{n+ℓ ∈ 𝒩_i^z} (a_ℓᵀx̂ − b_ℓ)²`.
fn neighbor_energy(lp: &StandardLp, graph: &AgentGraph, hat: &BroadcastState, agent: usize) -> f64 {
    let f_hat = flow_f_unchecked(lp, &hat.x_hat, &hat.z_hat);
    let sigma_hat = ActiveSet::from_flow(&f_hat, &hat.x_hat);
    let mut q: f64 = graph
        .real_neighbors(agent)
        .iter()
        .filter(|&&j| sigma_hat.contains(j))
        .map(|&j| f_hat[j] * f_hat[j])
        .sum();
    for &v in graph.virtual_neighbors(agent) {
        let l = v - graph.n_real;
        let r = lp.row_dot(l, &hat.x_hat) - lp.b()[l];
        q += r * r;
    }
    q
}

/// Checks `f_i(x, z)² ≤ 8 (t − T)² · Q_i` and `t − T ≤ τ_i` throughout
/// every mismatch interval, where `T` is the onset and `Q_i` the largest
/// neighbor energy of the broadcast states in force since `T`.
///
/// Each jump is examined twice: with the broadcast values that drove the
/// preceding flow and with the new ones.
pub fn mode_mismatch_audit(samples: &[Sample], lp: &StandardLp, graph: &AgentGraph, tau: &[f64]) -> MismatchReport {
    let n = lp.n();
    let mut open: Vec<Option<Open>> = (0..n).map(|_| None).collect();
    let mut report = MismatchReport::default();
    let mut prev: Option<(Point, Vec<f64>, Vec<bool>)> = None;

    let mut points = Vec::with_capacity(samples.len() * 2);
    for (k, s) in samples.iter().enumerate() {
        if k > 0 && samples[k - 1].state.hat != s.state.hat {
            points.push(Point { t: s.time.t, x: &s.state.x, z: &s.state.z, hat: &samples[k - 1].state.hat });
        }
        points.push(Point { t: s.time.t, x: &s.state.x, z: &s.state.z, hat: &s.state.hat });
    }

    let close = |slot: &mut Option<Open>, agent: usize, end: Option<f64>, report: &mut MismatchReport| {
        if let Some(o) = slot.take() {
            let duration = end.unwrap_or(o.last_t) - o.onset;
            if !o.bound_ok {
                report.bound_failures += 1;
            }
            if !o.duration_ok {
                report.duration_failures += 1;
            }
            report.intervals.push(MismatchInterval {
                agent,
                onset: o.onset,
                onset_value: o.onset_value,
                end,
                duration,
                worst_ratio: o.worst_ratio,
                bound_ok: o.bound_ok,
                duration_ok: o.duration_ok,
            });
        }
    };

    for p in points {
        let f = flow_f_unchecked(lp, p.x, p.z);
        let sigma = ActiveSet::from_flow(&f, p.x);
        let f_hat = flow_f_unchecked(lp, &p.hat.x_hat, &p.hat.z_hat);
        let sigma_hat = ActiveSet::from_flow(&f_hat, &p.hat.x_hat);
        let mismatch: Vec<bool> = (0..n).map(|i| sigma.contains(i) && !sigma_hat.contains(i)).collect();
        let same_flow = prev.as_ref().is_some_and(|(q, _, _)| q.hat == p.hat);

        for i in 0..n {
            if !mismatch[i] {
                close(&mut open[i], i, Some(p.t), &mut report);
                continue;
            }
            let q_here = neighbor_energy(lp, graph, p.hat, i);
            let slot = open[i].get_or_insert_with(|| {
                let (onset, onset_value) = match &prev {
                    Some((q, qf, qm)) if same_flow && !qm[i] => {
                        // f_i is affine along the flow; locate its zero.
                        let (f0, f1) = (qf[i], f[i]);
                        if f0 < 0.0 && f1 >= 0.0 && f1 > f0 {
                            (q.t + (p.t - q.t) * (-f0 / (f1 - f0)), 0.0)
                        } else {
                            (q.t, f0)
                        }
                    }
                    _ => (p.t, f[i]),
                };
                Open { onset, onset_value, max_q: 0.0, worst_ratio: 0.0, bound_ok: true, duration_ok: true, last_t: p.t }
            });
            slot.max_q = slot.max_q.max(q_here);
            slot.last_t = p.t;
            let elapsed = p.t - slot.onset;
            let bound = 8.0 * elapsed * elapsed * slot.max_q;
            let f2 = f[i] * f[i];
            let slack = 1e-12 + 1e-9 * bound;
            if f2 > bound + slack {
                slot.bound_ok = false;
            }
            if bound > 0.0 {
                slot.worst_ratio = slot.worst_ratio.max(f2 / bound);
            } else if f2 > slack {
                slot.worst_ratio = f64::INFINITY;
            }
            if elapsed > tau[i] + 1e-9 {
                slot.duration_ok = false;
            }
        }
        prev = Some((p, f, mismatch));
    }
    for (i, slot) in open.iter_mut().enumerate() {
        close(slot, i, None, &mut report);
    }
    report.intervals.sort_by(|a, b| a.onset.total_cmp(&b.onset).then(a.agent.cmp(&b.agent)));
    report
}

/// Points on flow intervals paired with the broadcast values driving them:
/// every sample, plus the midpoint of each pair of consecutive samples that
/// lie on the same flow interval.
pub fn flow_points(samples: &[Sample]) -> impl Iterator<Item = (PrimalDualPoint, PrimalDualPoint)> + '_ {
    samples.iter().enumerate().flat_map(move |(k, s)| {
        let here = (s.state.point(), s.state.hat_point());
        let mid = samples.get(k + 1).filter(|next| next.time.j == s.time.j && next.time.t > s.time.t).map(|next| {
            let avg = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(p, q)| 0.5 * (p + q)).collect();
            (
                PrimalDualPoint::new(avg(&s.state.x, &next.state.x), avg(&s.state.z, &next.state.z)),
                s.state.hat_point(),
            )
        });
        std::iter::once(here).chain(mid)
    })
}
