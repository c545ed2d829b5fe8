//! Problem sources: the assignment relaxation, seeded random instances and
//! the JSON problem file format.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lp::{LpError, StandardLp, Triplet};

#[derive(Debug, Error, PartialEq)]
pub enum ProblemError {
    #[error("assignment needs at least 2 agents, got {0}")]
    TooSmall(usize),
    #[error("benefit matrix must be {0}x{0} with finite nonnegative entries")]
    BadBenefits(usize),
    #[error("problem file declares n = {n}, m = {m} but carries {c} costs and {b} right-hand sides")]
    Header { n: usize, m: usize, c: usize, b: usize },
    #[error(transparent)]
    Lp(#[from] LpError),
}

/// `benefits[i][j]` is what agent `i` gains from task `j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssignmentSpec {
    pub size: usize,
    pub benefits: Vec<Vec<f64>>,
}

impl AssignmentSpec {
    pub fn new(benefits: Vec<Vec<f64>>) -> Self {
        Self { size: benefits.len(), benefits }
    }

    /// The two-agent, two-task example with benefits 5, 15, 20 and 10.
    pub fn two_agent() -> Self {
        Self::new(vec![vec![5.0, 15.0], vec![20.0, 10.0]])
    }

    /// Integer benefits drawn uniformly from `1..=20`.
    pub fn random(size: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let benefits =
            (0..size).map(|_| (0..size).map(|_| f64::from(rng.random_range(1..=20u8))).collect()).collect();
        Self { size, benefits }
    }
}

/// Relaxation of the assignment problem. Variable `x_{i,j}` sits at index
/// `i·N + j`; rows `0..N` say each agent takes one task and rows `N..2N` say
/// each task goes to one agent.
pub fn generate_assignment(spec: &AssignmentSpec) -> Result<StandardLp, ProblemError> {
    let n = spec.size;
    if n < 2 {
        return Err(ProblemError::TooSmall(n));
    }
    let well_formed = spec.benefits.len() == n
        && spec.benefits.iter().all(|r| r.len() == n && r.iter().all(|v| v.is_finite() && *v >= 0.0));
    if !well_formed {
        return Err(ProblemError::BadBenefits(n));
    }
    let c = spec.benefits.iter().flatten().map(|v| -v).collect();
    let mut entries = Vec::with_capacity(2 * n * n);
    for i in 0..n {
        for j in 0..n {
            let col = i * n + j;
            entries.push(Triplet { row: i, col, value: 1.0 });
            entries.push(Triplet { row: n + j, col, value: 1.0 });
        }
    }
    Ok(StandardLp::new(c, vec![1.0; 2 * n], entries)?)
}

/// A feasible, bounded instance. Each entry of `A` is nonzero with
/// probability `density` (every row keeps at least one), `b = A x₀` for a
/// sparse nonnegative `x₀`, and `c = Aᵀy + s` with `s ≥ 0` so the dual is
/// feasible too.
pub fn random_feasible_lp<R: Rng>(rng: &mut R, n: usize, m: usize, density: f64) -> StandardLp {
    let mut entries = Vec::new();
    for row in 0..m {
        let mut any = false;
        for col in 0..n {
            if rng.random_bool(density) {
                entries.push(Triplet { row, col, value: rng.random_range(-1.0..1.0) });
                any = true;
            }
        }
        if !any {
            entries.push(Triplet { row, col: rng.random_range(0..n), value: rng.random_range(0.5..1.0) });
        }
    }
    let x0: Vec<f64> = (0..n).map(|_| if rng.random_bool(0.5) { rng.random_range(0.0..2.0) } else { 0.0 }).collect();
    let y: Vec<f64> = (0..m).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mut b = vec![0.0; m];
    let mut c: Vec<f64> = (0..n).map(|_| if rng.random_bool(0.7) { rng.random_range(0.0..1.0) } else { 0.0 }).collect();
    for t in &entries {
        b[t.row] += t.value * x0[t.col];
        c[t.col] += t.value * y[t.row];
    }
    StandardLp::new(c, b, entries).expect("generated data is finite and in range")
}

/// A random instance with `2 ≤ n ≤ 8` and `1 ≤ m ≤ n`.
pub fn random_desk_lp(seed: u64) -> StandardLp {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(2..=8);
    let m = rng.random_range(1..=n);
    let density = rng.random_range(0.4..0.9);
    random_feasible_lp(&mut rng, n, m, density)
}

/// On-disk problem description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemFile {
    pub n: usize,
    pub m: usize,
    pub c: Vec<f64>,
    pub b: Vec<f64>,
    #[serde(rename = "A")]
    pub a: Vec<Triplet>,
}

impl From<&StandardLp> for ProblemFile {
    fn from(lp: &StandardLp) -> Self {
        Self { n: lp.n(), m: lp.m(), c: lp.c().to_vec(), b: lp.b().to_vec(), a: lp.triplets().collect() }
    }
}

impl TryFrom<ProblemFile> for StandardLp {
    type Error = ProblemError;

    fn try_from(p: ProblemFile) -> Result<Self, ProblemError> {
        if p.c.len() != p.n || p.b.len() != p.m {
            return Err(ProblemError::Header { n: p.n, m: p.m, c: p.c.len(), b: p.b.len() });
        }
        Ok(StandardLp::new(p.c, p.b, p.a)?)
    }
}
