use ndarray::Array2;
use pigan::metrics::{distance_matrix, solve_assignment, w1_empirical, w1_sorted};
use proptest::prelude::*;

fn brute_force_w1(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    let n = a.nrows();
    let cost = distance_matrix(a.view(), b.view());
    let mut perm: Vec<usize> = (0..n).collect();
    let mut best = f64::INFINITY;
    // Heap's algorithm
    fn visit(k: usize, perm: &mut Vec<usize>, cost: &[f64], n: usize, best: &mut f64) {
        if k == 1 {
            let c: f64 = perm.iter().enumerate().map(|(i, &j)| cost[i * n + j]).sum();
            *best = best.min(c);
            return;
        }
        for i in 0..k {
            visit(k - 1, perm, cost, n, best);
            if k.is_multiple_of(2) {
                perm.swap(i, k - 1);
            } else {
                perm.swap(0, k - 1);
            }
        }
    }
    visit(n, &mut perm, &cost, n, &mut best);
    best / n as f64
}

fn cloud(n: usize, d: usize) -> impl Strategy<Value = Array2<f64>> {
    proptest::collection::vec(-3.0f64..3.0, n * d).prop_map(move |v| Array2::from_shape_vec((n, d), v).unwrap())
}

fn pair() -> impl Strategy<Value = (Array2<f64>, Array2<f64>)> {
    (1usize..=6, 1usize..=3).prop_flat_map(|(n, d)| (cloud(n, d), cloud(n, d)))
}

proptest! {
    #[test]
    fn exact_w1_matches_enumeration((a, b) in pair()) {
        let w = w1_empirical(a.view(), b.view()).unwrap();
        let bf = brute_force_w1(&a, &b);
        prop_assert!((w - bf).abs() <= 1e-12 * (1.0 + bf));
    }

    #[test]
    fn w1_is_a_metric_on_clouds((a, b) in pair(), shift in -1.0f64..1.0) {
        let w_ab = w1_empirical(a.view(), b.view()).unwrap();
        let w_ba = w1_empirical(b.view(), a.view()).unwrap();
        prop_assert!((w_ab - w_ba).abs() <= 1e-12 * (1.0 + w_ab));
        prop_assert_eq!(w1_empirical(a.view(), a.view()).unwrap(), 0.0);
        let c = a.mapv(|v| v + shift);
        let w_ac = w1_empirical(a.view(), c.view()).unwrap();
        let w_cb = w1_empirical(c.view(), b.view()).unwrap();
        prop_assert!(w_ab <= w_ac + w_cb + 1e-12);
        // translating every point by the same vector moves W1 by at most its length
        let d = a.ncols() as f64;
        prop_assert!(w_ac <= shift.abs() * d.sqrt() + 1e-12);
    }

    #[test]
    fn sorted_pairing_is_optimal_on_the_line(a in proptest::collection::vec(-5.0f64..5.0, 1..8)) {
        let n = a.len();
        let b: Vec<f64> = a.iter().rev().map(|v| v * 0.5 + 1.0).collect();
        let am = Array2::from_shape_vec((n, 1), a.clone()).unwrap();
        let bm = Array2::from_shape_vec((n, 1), b).unwrap();
        let cost = distance_matrix(am.view(), bm.view());
        let assign = solve_assignment(&cost, n);
        let hungarian: f64 = assign.iter().enumerate().map(|(i, &j)| cost[i * n + j]).sum::<f64>() / n as f64;
        let sorted = w1_sorted(am.column(0), bm.column(0));
        prop_assert!((hungarian - sorted).abs() <= 1e-12 * (1.0 + sorted));
    }
}

#[test]
fn larger_assignment_is_a_permutation() {
    let n = 200;
    let a = Array2::from_shape_fn((n, 3), |(i, j)| ((i * 31 + j * 17) % 97) as f64 / 97.0);
    let b = Array2::from_shape_fn((n, 3), |(i, j)| ((i * 13 + j * 7) % 89) as f64 / 89.0);
    let cost = distance_matrix(a.view(), b.view());
    let mut assign = solve_assignment(&cost, n);
    let total: f64 = assign.iter().enumerate().map(|(i, &j)| cost[i * n + j]).sum();
    let identity: f64 = (0..n).map(|i| cost[i * n + i]).sum();
    assert!(total <= identity);
    assign.sort();
    assert_eq!(assign, (0..n).collect::<Vec<_>>());
}
