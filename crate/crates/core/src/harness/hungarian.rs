//! Minimum-cost one-to-one assignment via shortest augmenting paths with
//! potentials (O(n³)). Rectangular problems match min(rows, cols) pairs;
//! the remainder is reported as unmatched.

/// Result of an assignment: `row_to_col[r]` is the matched column of row
/// `r`, if any.
#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    pub row_to_col: Vec<Option<usize>>,
    pub total_cost: f64,
    pub unmatched_rows: Vec<usize>,
    pub unmatched_cols: Vec<usize>,
}

/// Solve the rectangular linear assignment problem on a row-major cost
/// matrix with nonnegative finite costs.
pub fn hungarian_assign(cost: &[Vec<f64>]) -> Assignment {
    let n_rows = cost.len();
    let n_cols = cost.first().map(|r| r.len()).unwrap_or(0);
    if n_rows == 0 || n_cols == 0 {
        return Assignment {
            row_to_col: vec![None; n_rows],
            total_cost: 0.0,
            unmatched_rows: (0..n_rows).collect(),
            unmatched_cols: (0..n_cols).collect(),
        };
    }
    // pad to square; dummy entries cost zero, so any full matching carries
    // exactly max−min dummies and the real pair sum is minimized
    let n = n_rows.max(n_cols);
    let at = |r: usize, c: usize| -> f64 {
        if r < n_rows && c < n_cols {
            cost[r][c]
        } else {
            0.0
        }
    };

    // shortest-augmenting-path assignment with potentials (1-indexed)
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; n + 1];
    let mut p = vec![0usize; n + 1]; // column -> row
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = at(i0 - 1, j - 1) - u[i0] - v[j];
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

    let mut row_to_col = vec![None; n_rows];
    let mut col_taken = vec![false; n_cols];
    let mut total = 0.0;
    for j in 1..=n {
        let i = p[j];
        if i >= 1 && i <= n_rows && j <= n_cols {
            row_to_col[i - 1] = Some(j - 1);
            col_taken[j - 1] = true;
            total += cost[i - 1][j - 1];
        }
    }
    let unmatched_rows = (0..n_rows).filter(|&r| row_to_col[r].is_none()).collect();
    let unmatched_cols = (0..n_cols).filter(|&c| !col_taken[c]).collect();
    Assignment {
        row_to_col,
        total_cost: total,
        unmatched_rows,
        unmatched_cols,
    }
}
