//! Minimum-cost perfect matching on a dense square cost matrix.
//!
//! Shortest augmenting paths with row/column potentials (the O(n^3) form of the
//! Hungarian method): rows are inserted one at a time and each insertion runs a
//! Dijkstra-like search over reduced costs, scanning only columns not yet
//! reached and updating the potentials once per augmentation. Column
//! reduction first matches many rows for free.

const NONE: usize = usize::MAX;

/// Returns `assign` with `assign[row] = column` minimizing the total cost.
/// `cost` is row-major `n x n`.
pub fn solve_assignment(cost: &[f64], n: usize) -> Vec<usize> {
    assert_eq!(cost.len(), n * n, "cost matrix must be n x n");
    let mut u = vec![0.0f64; n];
    let mut v = vec![0.0f64; n];
    let mut col4row = vec![NONE; n];
    let mut row4col = vec![NONE; n];
    let mut path = vec![NONE; n];
    let mut dist = vec![f64::INFINITY; n];
    let mut remaining: Vec<usize> = Vec::with_capacity(n);
    let mut scanned_rows: Vec<usize> = Vec::with_capacity(n);
    let mut scanned_cols: Vec<usize> = Vec::with_capacity(n);

    // column reduction: v_j = min_i c_ij keeps reduced costs non-negative, and
    // each row may take one column it is the minimizer of
    for j in 0..n {
        let (mut best, mut arg) = (f64::INFINITY, NONE);
        for i in 0..n {
            let c = cost[i * n + j];
            if c < best {
                best = c;
                arg = i;
            }
        }
        v[j] = best;
        if arg != NONE && col4row[arg] == NONE {
            col4row[arg] = j;
            row4col[j] = arg;
        }
    }

    for cur in 0..n {
        if col4row[cur] != NONE {
            continue;
        }
        remaining.clear();
        remaining.extend((0..n).rev());
        scanned_rows.clear();
        scanned_cols.clear();
        dist.iter_mut().for_each(|d| *d = f64::INFINITY);
        let mut min_val = 0.0;
        let mut i = cur;
        let sink = loop {
            scanned_rows.push(i);
            let row = &cost[i * n..(i + 1) * n];
            let base = min_val - u[i];
            let mut lowest = f64::INFINITY;
            let mut index = NONE;
            for (it, &j) in remaining.iter().enumerate() {
                let r = base + row[j] - v[j];
                if r < dist[j] {
                    path[j] = i;
                    dist[j] = r;
                }
                let d = dist[j];
                if d < lowest || (d == lowest && row4col[j] == NONE) {
                    lowest = d;
                    index = it;
                }
            }
            min_val = lowest;
            let j = remaining.swap_remove(index);
            scanned_cols.push(j);
            if row4col[j] == NONE {
                break j;
            }
            i = row4col[j];
        };
        u[cur] += min_val;
        for &r in &scanned_rows[1..] {
            u[r] += min_val - dist[col4row[r]];
        }
        for &c in &scanned_cols {
            v[c] -= min_val - dist[c];
        }
        let mut j = sink;
        loop {
            let r = path[j];
            row4col[j] = r;
            std::mem::swap(&mut col4row[r], &mut j);
            if r == cur {
                break;
            }
        }
    }
    col4row
}

pub fn assignment_cost(cost: &[f64], n: usize, assign: &[usize]) -> f64 {
    assign.iter().enumerate().map(|(i, &j)| cost[i * n + j]).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn brute_force(cost: &[f64], n: usize) -> f64 {
        fn rec(cost: &[f64], n: usize, row: usize, used: &mut Vec<bool>, acc: f64, best: &mut f64) {
            if row == n {
                *best = best.min(acc);
                return;
            }
            for j in 0..n {
                if !used[j] {
                    used[j] = true;
                    rec(cost, n, row + 1, used, acc + cost[row * n + j], best);
                    used[j] = false;
                }
            }
        }
        let mut best = f64::INFINITY;
        rec(cost, n, 0, &mut vec![false; n], 0.0, &mut best);
        best
    }

    #[test]
    fn classic_example() {
        let cost = [4.0, 1.0, 3.0, 2.0, 0.0, 5.0, 3.0, 2.0, 2.0];
        let a = solve_assignment(&cost, 3);
        assert_eq!(assignment_cost(&cost, 3, &a), 5.0);
        let mut seen = a.clone();
        seen.sort();
        assert_eq!(seen, vec![0, 1, 2]);
    }

    #[test]
    fn matches_brute_force_on_integer_costs() {
        let mut state = 12345u64;
        let mut next = || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (state >> 33) % 10
        };
        for n in 1..=6 {
            for _ in 0..30 {
                let cost: Vec<f64> = (0..n * n).map(|_| next() as f64).collect();
                let a = solve_assignment(&cost, n);
                assert_eq!(assignment_cost(&cost, n, &a), brute_force(&cost, n));
            }
        }
    }

    #[test]
    fn matches_brute_force_on_real_costs() {
        let mut state = 99u64;
        let mut next = || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (state >> 11) as f64 / (1u64 << 53) as f64
        };
        for n in 1..=7 {
            for _ in 0..20 {
                let cost: Vec<f64> = (0..n * n).map(|_| next()).collect();
                let a = solve_assignment(&cost, n);
                assert!((assignment_cost(&cost, n, &a) - brute_force(&cost, n)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn optimum_ignores_row_order() {
        let n = 80;
        let cost: Vec<f64> = (0..n * n).map(|k| ((k * 7919) % 1009) as f64 / 1009.0).collect();
        let mut flipped = Vec::with_capacity(n * n);
        for i in (0..n).rev() {
            flipped.extend_from_slice(&cost[i * n..(i + 1) * n]);
        }
        let a = assignment_cost(&cost, n, &solve_assignment(&cost, n));
        let b = assignment_cost(&flipped, n, &solve_assignment(&flipped, n));
        assert!((a - b).abs() < 1e-9, "{a} vs {b}");
    }

    #[test]
    fn empty_problem() {
        assert!(solve_assignment(&[], 0).is_empty());
    }
}
