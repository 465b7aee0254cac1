use std::f64::consts::PI;

use pigan::elliptic::{mc_reference, solve_elliptic_fd, Grid1D};
use pigan::processes::{KernelSpec, ProcessSpec, ScalarFn, Transform};

fn max_rel_err(m: usize, f: impl Fn(f64) -> f64, exact: impl Fn(f64) -> f64) -> f64 {
    let g = Grid1D::new(m).unwrap();
    let fv: Vec<f64> = g.points().iter().map(|&x| f(x)).collect();
    let u = solve_elliptic_fd(&vec![1.0; m], &fv, &g).unwrap();
    let scale = g.points().iter().map(|&x| exact(x).abs()).fold(0.0, f64::max);
    u.iter()
        .zip(g.points())
        .map(|(v, &x)| (v - exact(x)).abs() / scale)
        .fold(0.0, f64::max)
}

#[test]
fn refinement_study() {
    let exact = |x: f64| 10.0 * (PI * x).sin() / (PI * PI);
    let errs: Vec<f64> = [51, 101, 201, 401]
        .iter()
        .map(|&m| max_rel_err(m, |x| (PI * x).sin(), exact))
        .collect();
    for w in errs.windows(2) {
        assert!((w[0] / w[1]).log2() >= 1.9, "{errs:?}");
    }
    assert!(errs[2] < 5e-4);
    // the quadratic solution is reproduced to round-off on every grid
    for m in [51, 101, 201, 401] {
        assert!(max_rel_err(m, |_| 1.0, |x| 5.0 * (1.0 - x * x)) < 1e-10);
    }
}

#[test]
fn reference_does_not_depend_on_thread_count() {
    let k = ProcessSpec {
        mean: ScalarFn::Zero,
        kernel: KernelSpec::new(0.2, 0.4).unwrap(),
        transform: Transform::ExpShift {
            shift: ScalarFn::Constant { value: 0.0 },
        },
    };
    let f = ProcessSpec::gaussian(ScalarFn::Zero, KernelSpec::new(0.3, 0.2).unwrap());
    let g = Grid1D::new(31).unwrap();
    let run = |threads: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| mc_reference(&k, &f, 5000, &g, 9, false).unwrap())
    };
    let one = run(1);
    let four = run(4);
    assert_eq!(one, four);
    assert_eq!(one.u.n_paths, 5000);
}
