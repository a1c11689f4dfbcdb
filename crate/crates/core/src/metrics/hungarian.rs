//! Exact minimum-cost assignment with a lexicographic tie-break.

use super::MetricsError;

/// Optimal assignment: `cols[i]` is the column given to row `i`.
#[derive(Clone, Debug, PartialEq)]
pub struct Assignment {
    pub cols: Vec<usize>,
    pub cost: f64,
}

/// Minimum-cost perfect assignment of an `n x n` matrix. Among optimal
/// assignments the lexicographically smallest `cols` is returned.
pub fn hungarian(cost: &[Vec<f64>]) -> Result<Assignment, MetricsError> {
    let n = cost.len();
    for (i, row) in cost.iter().enumerate() {
        if row.len() != n {
            return Err(MetricsError::InvalidInput(format!(
                "cost matrix row {i} has {} entries, expected {n}",
                row.len()
            )));
        }
        if let Some(j) = row.iter().position(|c| !c.is_finite()) {
            return Err(MetricsError::InvalidInput(format!("non-finite cost at ({i}, {j})")));
        }
    }
    if n == 0 {
        return Ok(Assignment {
            cols: Vec::new(),
            cost: 0.0,
        });
    }
    let (mut row_of, u, v) = solve(cost);
    let scale = cost.iter().flatten().fold(0.0f64, |m, c| m.max(c.abs()));
    let tol = 1e-9 * (1.0 + scale);
    let tight: Vec<Vec<bool>> = (0..n)
        .map(|i| (0..n).map(|j| (cost[i][j] - u[i] - v[j]).abs() <= tol).collect())
        .collect();
    // Every optimal assignment is a perfect matching of tight edges under
    // the optimal duals; pick the lexicographically smallest one.
    let mut col_of = vec![0usize; n];
    for (j, &i) in row_of.iter().enumerate() {
        col_of[i] = j;
    }
    let mut fixed = vec![false; n];
    for i in 0..n {
        for j in 0..n {
            if !tight[i][j] || row_of[j] == usize::MAX {
                continue;
            }
            if col_of[i] == j {
                break;
            }
            let r = row_of[j];
            if fixed[r] {
                continue;
            }
            // rematch row r to column col_of[i] through an alternating path
            // that avoids fixed rows, row i and column j
            let target = col_of[i];
            let mut seen = vec![false; n];
            seen[j] = true;
            let mut path = Vec::new();
            if alternate(r, target, &tight, &row_of, &col_of, &fixed, i, &mut seen, &mut path) {
                // path alternates (row, col) pairs to re-assign
                for &(pr, pc) in &path {
                    col_of[pr] = pc;
                    row_of[pc] = pr;
                }
                col_of[i] = j;
                row_of[j] = i;
                break;
            }
        }
        fixed[i] = true;
    }
    let total = (0..n).map(|i| cost[i][col_of[i]]).sum();
    Ok(Assignment { cols: col_of, cost: total })
}

/// Depth-first search for an alternating path that frees `target` for row `r`.
#[allow(clippy::too_many_arguments)]
fn alternate(
    r: usize,
    target: usize,
    tight: &[Vec<bool>],
    row_of: &[usize],
    col_of: &[usize],
    fixed: &[bool],
    skip_row: usize,
    seen: &mut [bool],
    path: &mut Vec<(usize, usize)>,
) -> bool {
    let n = tight.len();
    for c in 0..n {
        if !tight[r][c] || seen[c] || c == col_of[r] {
            continue;
        }
        seen[c] = true;
        if c == target {
            path.push((r, c));
            return true;
        }
        let next = row_of[c];
        if fixed[next] || next == skip_row {
            continue;
        }
        if alternate(next, target, tight, row_of, col_of, fixed, skip_row, seen, path) {
            path.push((r, c));
            return true;
        }
    }
    false
}

/// Shortest augmenting path Hungarian method. Returns the row matched to
/// each column and optimal duals with `cost[i][j] >= u[i] + v[j]`.
fn solve(cost: &[Vec<f64>]) -> (Vec<usize>, Vec<f64>, Vec<f64>) {
    let n = cost.len();
    let inf = f64::INFINITY;
    // 1-based with a virtual column 0
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![inf; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let row_of = (1..=n).map(|j| p[j] - 1).collect();
    (row_of, u[1..].to_vec(), v[1..].to_vec())
}
