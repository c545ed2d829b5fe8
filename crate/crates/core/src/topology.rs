//! Agent network derived from the sparsity of `A`, and the max-consensus
//! preprocessing that rescales the constraints so that `ρ(AᵀA) ≤ 1`.
//!
//! Agents `0..n` own the primal variables. Agent `n + ℓ` is the virtual agent
//! owning the dual variable of constraint `ℓ`.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::lp::{LpError, StandardLp};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentGraph {
    pub n_real: usize,
    pub n_virtual: usize,
    /// `𝒩_i` for every agent, ascending, excluding `i` itself.
    pub neighbors: Vec<Vec<usize>>,
    /// Virtual agents indexed by constraint, adjacent when their constraints
    /// share a variable.
    pub virtual_adjacency: Vec<Vec<usize>>,
}

impl AgentGraph {
    pub fn n_agents(&self) -> usize {
        self.n_real + self.n_virtual
    }

    pub fn is_virtual(&self, agent: usize) -> bool {
        agent >= self.n_real
    }

    /// `𝒩_i^x`.
    pub fn real_neighbors(&self, agent: usize) -> &[usize] {
        let list = &self.neighbors[agent];
        &list[..list.partition_point(|&j| j < self.n_real)]
    }

    /// `𝒩_i^z`, as agent indices `n + ℓ`.
    pub fn virtual_neighbors(&self, agent: usize) -> &[usize] {
        let list = &self.neighbors[agent];
        &list[list.partition_point(|&j| j < self.n_real)..]
    }

    pub fn degree(&self, agent: usize) -> usize {
        self.neighbors[agent].len()
    }

    pub fn are_neighbors(&self, i: usize, j: usize) -> bool {
        self.neighbors[i].binary_search(&j).is_ok()
    }
}

/// For every constraint `ℓ`, the variables with `a_{ℓ,i} ≠ 0` and agent
/// `n + ℓ` become pairwise neighbors.
pub fn build_graph(lp: &StandardLp) -> AgentGraph {
    let n = lp.n();
    let m = lp.m();
    let mut sets: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); n + m];
    for l in 0..m {
        let members: Vec<usize> = lp
            .row(l)
            .iter()
            .map(|&(i, _)| i)
            .chain(std::iter::once(n + l))
            .collect();
        for &p in &members {
            for &q in &members {
                if p != q {
                    sets[p].insert(q);
                }
            }
        }
    }
    let mut shared: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); m];
    for i in 0..n {
        let rows: Vec<usize> = lp.col(i).iter().map(|&(l, _)| l).collect();
        for &p in &rows {
            for &q in &rows {
                if p != q {
                    shared[p].insert(q);
                }
            }
        }
    }
    AgentGraph {
        n_real: n,
        n_virtual: m,
        neighbors: sets.into_iter().map(|s| s.into_iter().collect()).collect(),
        virtual_adjacency: shared.into_iter().map(|s| s.into_iter().collect()).collect(),
    }
}

/// Gershgorin row sums of `AᵀA`, one per variable.
fn gram_row_sums(lp: &StandardLp) -> Vec<f64> {
    let n = lp.n();
    let mut sums = vec![0.0; n];
    let mut row_acc = vec![0.0; n];
    for (i, sum) in sums.iter_mut().enumerate() {
        row_acc.iter_mut().for_each(|v| *v = 0.0);
        for &(l, a_li) in lp.col(i) {
            for &(j, a_lj) in lp.row(l) {
                row_acc[j] += a_li * a_lj;
            }
        }
        *sum = row_acc.iter().map(|v| v.abs()).sum();
    }
    sums
}

/// Estimate held by each virtual agent: the largest Gershgorin row sum of
/// `AᵀA` over the rows it can form, namely those of the variables in its
/// constraint.
pub fn gershgorin_estimates(lp: &StandardLp) -> Vec<f64> {
    let sums = gram_row_sums(lp);
    (0..lp.m())
        .map(|l| lp.row(l).iter().map(|&(i, _)| sums[i]).fold(0.0, f64::max))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScalingResult {
    /// Largest consensus value over all components.
    pub rho_star: f64,
    /// Consensus value reached by each virtual agent.
    pub consensus: Vec<f64>,
    /// Divisor applied to each row, `max(1, ρ*)` of its component.
    pub divisors: Vec<f64>,
    pub scaled: StandardLp,
    /// Synchronous rounds in which some estimate changed.
    pub rounds: usize,
}

impl ScalingResult {
    pub fn a_tilde(&self) -> Vec<Vec<f64>> {
        self.scaled.to_dense()
    }

    pub fn b_tilde(&self) -> &[f64] {
        self.scaled.b()
    }
}

/// Synchronous max-consensus of the Gershgorin estimates over the virtual
/// agents, followed by division of each row by `max(1, ρ*)`. On a
/// disconnected network every component reaches its own maximum.
pub fn max_consensus_scale(lp: &StandardLp, graph: &AgentGraph) -> Result<ScalingResult, LpError> {
    let mut values = gershgorin_estimates(lp);
    let mut rounds = 0;
    loop {
        let next: Vec<f64> = (0..values.len())
            .map(|l| {
                graph.virtual_adjacency[l]
                    .iter()
                    .map(|&k| values[k])
                    .fold(values[l], f64::max)
            })
            .collect();
        if next == values {
            break;
        }
        values = next;
        rounds += 1;
    }
    let divisors: Vec<f64> = values.iter().map(|&v| v.max(1.0)).collect();
    let scaled = lp.with_scaled_rows(&divisors)?;
    log::debug!("max-consensus settled after {rounds} rounds");
    Ok(ScalingResult {
        rho_star: values.iter().copied().fold(0.0, f64::max),
        consensus: values,
        divisors,
        scaled,
        rounds,
    })
}

/// Largest eigenvalue of `AᵀA` by power iteration, reported as a Rayleigh
/// quotient. Deterministic: the start vector depends only on `n`.
pub fn spectral_radius_ata(lp: &StandardLp) -> f64 {
    let n = lp.n();
    if n == 0 || lp.nnz() == 0 {
        return 0.0;
    }
    let apply = |v: &[f64]| lp.at_mul(&lp.a_mul(v));
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let mut v: Vec<f64> = (0..n).map(|i| 1.0 + 0.01 * ((i * 7919) % 101) as f64).collect();
    let s = norm(&v);
    v.iter_mut().for_each(|x| *x /= s);
    let mut estimate = 0.0;
    for _ in 0..20_000 {
        let w = apply(&v);
        let rayleigh: f64 = w.iter().zip(&v).map(|(a, b)| a * b).sum();
        let s = norm(&w);
        if s == 0.0 {
            return 0.0;
        }
        let done = (rayleigh - estimate).abs() <= 1e-14 * rayleigh.abs().max(1.0);
        estimate = rayleigh;
        v = w.into_iter().map(|x| x / s).collect();
        if done {
            break;
        }
    }
    estimate
}
