//! Small dense kernels for the desk-scale oracles.

/// Pivots below this fraction of the largest entry count as zero.
const PIVOT_TOL: f64 = 1e-11;

/// Solves the square system `a·x = rhs` by Gaussian elimination with partial
/// pivoting. Returns `None` when the matrix is numerically singular.
pub(crate) fn solve(mut a: Vec<Vec<f64>>, mut rhs: Vec<f64>) -> Option<Vec<f64>> {
    let k = rhs.len();
    debug_assert!(a.len() == k && a.iter().all(|r| r.len() == k));
    let scale = a
        .iter()
        .flatten()
        .fold(0.0_f64, |acc, v| acc.max(v.abs()))
        .max(f64::MIN_POSITIVE);
    for col in 0..k {
        let pivot = (col..k)
            .max_by(|&p, &q| a[p][col].abs().total_cmp(&a[q][col].abs()))
            .expect("non-empty range");
        if a[pivot][col].abs() <= PIVOT_TOL * scale {
            return None;
        }
        a.swap(col, pivot);
        rhs.swap(col, pivot);
        for row in col + 1..k {
            let factor = a[row][col] / a[col][col];
            if factor == 0.0 {
                continue;
            }
            for c in col..k {
                a[row][c] -= factor * a[col][c];
            }
            rhs[row] -= factor * rhs[col];
        }
    }
    let mut x = vec![0.0; k];
    for row in (0..k).rev() {
        let tail: f64 = (row + 1..k).map(|c| a[row][c] * x[c]).sum();
        x[row] = (rhs[row] - tail) / a[row][row];
    }
    Some(x)
}

/// Outcome of reducing `[A | b]` to a maximal set of independent rows.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct RowReduction {
    /// Indices of a maximal linearly independent subset of rows, ascending.
    pub independent: Vec<usize>,
    /// False when some dependent row disagrees with its right-hand side.
    pub consistent: bool,
}

/// Greedily keeps each row that is independent of the rows kept before it.
/// A dependent row whose reduced right-hand side is nonzero makes the system
/// inconsistent.
pub(crate) fn row_reduce(a: &[Vec<f64>], b: &[f64], tol: f64) -> RowReduction {
    let width = a.first().map_or(0, Vec::len);
    // Reduced copies of kept rows with their pivot column.
    let mut basis: Vec<(usize, Vec<f64>, f64)> = Vec::new();
    let mut independent = Vec::new();
    let mut consistent = true;
    for (l, row) in a.iter().enumerate() {
        let mut r = row.clone();
        let mut rb = b[l];
        let norm = r.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()));
        for (pivot, kept, kb) in &basis {
            let factor = r[*pivot] / kept[*pivot];
            if factor != 0.0 {
                for c in 0..width {
                    r[c] -= factor * kept[c];
                }
                rb -= factor * kb;
            }
        }
        let (pivot, peak) = r
            .iter()
            .enumerate()
            .fold((0, 0.0_f64), |best, (c, v)| if v.abs() > best.1 { (c, v.abs()) } else { best });
        if peak > PIVOT_TOL * norm.max(1.0) && peak > 0.0 {
            basis.push((pivot, r, rb));
            independent.push(l);
        } else if rb.abs() > tol * (1.0 + b[l].abs()) {
            consistent = false;
        }
    }
    RowReduction {
        independent,
        consistent,
    }
}
