//! Evaluation quantities: exact empirical W1, PCA spectra, correlation
//! coefficients, relative errors and overfitting diagnostics.

mod assignment;
mod moments;
mod overfit;

pub use assignment::{assignment_cost, solve_assignment};
pub use moments::{CoMoments, PairMoments};
pub use overfit::{overfit_report, w1_baseline, OverfitReport};

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("point clouds differ in size: {0} x {1} vs {2} x {3}")]
    CloudShape(usize, usize, usize, usize),
    #[error("empty point cloud")]
    Empty,
    #[error("need at least 2 paths, got {0}")]
    TooFewPaths(usize),
    #[error("fields have different shapes")]
    ShapeMismatch,
    #[error("reference field has zero norm")]
    ZeroReference,
    #[error("no grid point with positive variance in both fields")]
    NoVariance,
    #[error("need {needed} validation rows, have {have}")]
    InsufficientData { needed: usize, have: usize },
}

/// Empirical W1 between two equal-size uniform point clouds with Euclidean ground cost.
///
/// One-dimensional clouds use the sorted pairing; otherwise the optimal
/// assignment is found exactly.
pub fn w1_empirical(a: ArrayView2<f64>, b: ArrayView2<f64>) -> Result<f64, MetricsError> {
    let (n, d) = a.dim();
    if a.dim() != b.dim() {
        return Err(MetricsError::CloudShape(n, d, b.nrows(), b.ncols()));
    }
    if n == 0 || d == 0 {
        return Err(MetricsError::Empty);
    }
    if d == 1 {
        return Ok(w1_sorted(a.column(0), b.column(0)));
    }
    let cost = distance_matrix(a, b);
    let assign = solve_assignment(&cost, n);
    Ok(assignment_cost(&cost, n, &assign) / n as f64)
}

/// Sorted pairing `mean |a_(i) - b_(i)|`, the exact W1 on the line.
pub fn w1_sorted(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    let mut xs = a.to_vec();
    let mut ys = b.to_vec();
    xs.sort_by(f64::total_cmp);
    ys.sort_by(f64::total_cmp);
    xs.iter().zip(&ys).map(|(x, y)| (x - y).abs()).sum::<f64>() / xs.len() as f64
}

/// Row-major `n x n` matrix of Euclidean distances.
pub fn distance_matrix(a: ArrayView2<f64>, b: ArrayView2<f64>) -> Vec<f64> {
    let mut cost = Vec::with_capacity(a.nrows() * b.nrows());
    for ra in a.outer_iter() {
        for rb in b.outer_iter() {
            let s: f64 = ra.iter().zip(rb.iter()).map(|(x, y)| (x - y) * (x - y)).sum();
            cost.push(s.sqrt());
        }
    }
    cost
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SpectraReport {
    /// Covariance eigenvalues, descending.
    pub eigenvalues: Vec<f64>,
    pub grid: Vec<f64>,
    pub paths: usize,
}

impl SpectraReport {
    /// Number of leading modes holding `fraction` of the total variance.
    pub fn effective_dimension(&self, fraction: f64) -> usize {
        let total: f64 = self.eigenvalues.iter().sum();
        let mut acc = 0.0;
        for (i, e) in self.eigenvalues.iter().enumerate() {
            acc += e;
            if acc >= fraction * total {
                return i + 1;
            }
        }
        self.eigenvalues.len()
    }
}

/// Unbiased sample covariance of the columns of `paths` (`n_paths x grid`).
pub fn covariance(paths: ArrayView2<f64>) -> Result<Array2<f64>, MetricsError> {
    let n = paths.nrows();
    if n < 2 {
        return Err(MetricsError::TooFewPaths(n));
    }
    let mean = paths.mean_axis(Axis(0)).expect("non-empty");
    let centered = &paths - &mean;
    Ok(centered.t().dot(&centered) / (n - 1) as f64)
}

/// Descending eigenvalues of a symmetric matrix; tiny negative round-off is clamped to zero.
pub fn symmetric_eigenvalues(cov: &Array2<f64>) -> Vec<f64> {
    let d = cov.nrows();
    let m = DMatrix::from_fn(d, d, |i, j| 0.5 * (cov[[i, j]] + cov[[j, i]]));
    let trace: f64 = (0..d).map(|i| m[(i, i)]).sum();
    let tol = 1e-12 * trace.abs().max(1.0);
    let mut ev: Vec<f64> = SymmetricEigen::new(m)
        .eigenvalues
        .iter()
        .map(|&e| if e < 0.0 && e >= -tol { 0.0 } else { e })
        .collect();
    ev.sort_by(|a, b| b.total_cmp(a));
    ev
}

/// PCA spectrum of sample paths evaluated on a shared grid.
pub fn spectra(paths: ArrayView2<f64>, grid: &[f64]) -> Result<SpectraReport, MetricsError> {
    if paths.ncols() != grid.len() {
        return Err(MetricsError::ShapeMismatch);
    }
    let cov = covariance(paths)?;
    Ok(SpectraReport {
        eigenvalues: symmetric_eigenvalues(&cov),
        grid: grid.to_vec(),
        paths: paths.nrows(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Correlation {
    pub value: f64,
    /// Grid points used.
    pub points: usize,
    /// Grid points skipped because one of the fields had zero variance there.
    pub excluded: usize,
}

/// Mean over grid points of `|Cov(f1, f2)| / sqrt(Var f1 Var f2)` from paired paths.
pub fn correlation_coefficient(f1: ArrayView2<f64>, f2: ArrayView2<f64>) -> Result<Correlation, MetricsError> {
    if f1.dim() != f2.dim() {
        return Err(MetricsError::ShapeMismatch);
    }
    let mut m = PairMoments::new(f1.ncols());
    for (a, b) in f1.outer_iter().zip(f2.outer_iter()) {
        m.push(&a.to_vec(), &b.to_vec());
    }
    m.correlation()
}

pub(crate) fn correlation_from(cov: &[f64], var_a: &[f64], var_b: &[f64]) -> Result<Correlation, MetricsError> {
    let mut sum = 0.0;
    let mut points = 0;
    for ((c, va), vb) in cov.iter().zip(var_a).zip(var_b) {
        if *va > 0.0 && *vb > 0.0 {
            sum += (c / (va * vb).sqrt()).abs();
            points += 1;
        }
    }
    if points == 0 {
        return Err(MetricsError::NoVariance);
    }
    Ok(Correlation {
        value: sum / points as f64,
        points,
        excluded: cov.len() - points,
    })
}

/// Discrete L2 relative error `|est - ref| / |ref|`.
pub fn relative_error(estimate: &[f64], reference: &[f64]) -> Result<f64, MetricsError> {
    if estimate.len() != reference.len() {
        return Err(MetricsError::ShapeMismatch);
    }
    let num: f64 = estimate.iter().zip(reference).map(|(e, r)| (e - r) * (e - r)).sum();
    let den: f64 = reference.iter().map(|r| r * r).sum();
    if den == 0.0 {
        return Err(MetricsError::ZeroReference);
    }
    Ok((num / den).sqrt())
}

/// Pointwise mean and unbiased standard deviation of paths (`n_paths x grid`).
pub fn mean_std(paths: ArrayView2<f64>) -> Result<(Vec<f64>, Vec<f64>), MetricsError> {
    let n = paths.nrows();
    if n < 2 {
        return Err(MetricsError::TooFewPaths(n));
    }
    let mean = paths.mean_axis(Axis(0)).expect("non-empty");
    let std = paths.var_axis(Axis(0), 1.0).mapv(f64::sqrt);
    Ok((mean.to_vec(), std.to_vec()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array1};

    #[test]
    fn w1_small_cases() {
        let a = array![[0.0]];
        let b = array![[1.0]];
        assert_eq!(w1_empirical(a.view(), b.view()).unwrap(), 1.0);
        let a = array![[0.0], [1.0]];
        let b = array![[1.0], [2.0]];
        assert_eq!(w1_empirical(a.view(), b.view()).unwrap(), 1.0);
        let a = array![[0.0, 1.0], [2.0, -1.0], [0.5, 0.5]];
        assert_eq!(w1_empirical(a.view(), a.view()).unwrap(), 0.0);
        let swapped = array![[0.5, 0.5], [0.0, 1.0], [2.0, -1.0]];
        assert_eq!(w1_empirical(a.view(), swapped.view()).unwrap(), 0.0);
        assert!(w1_empirical(a.view(), b.view()).is_err());
    }

    #[test]
    fn spectra_of_identical_paths() {
        let paths = Array2::from_shape_fn((5, 4), |(_, j)| j as f64);
        let s = spectra(paths.view(), &[0.0, 1.0, 2.0, 3.0]).unwrap();
        assert!(s.eigenvalues.iter().all(|&e| e.abs() < 1e-14));
        assert!(spectra(paths.slice(ndarray::s![..1, ..]), &[0.0, 1.0, 2.0, 3.0]).is_err());
    }

    #[test]
    fn rank_one_spectrum() {
        // paths = a * phi with a of unit sample variance
        let phi = Array1::from(vec![0.5, -1.0, 2.0]);
        let a = [1.0, -1.0, 1.0, -1.0];
        let var_a = {
            let m = a.iter().sum::<f64>() / 4.0;
            a.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / 3.0
        };
        let paths = Array2::from_shape_fn((4, 3), |(i, j)| a[i] / var_a.sqrt() * phi[j]);
        let s = spectra(paths.view(), &[0.0, 0.5, 1.0]).unwrap();
        assert!((s.eigenvalues[0] - 5.25).abs() < 1e-12);
        assert!(s.eigenvalues[1..].iter().all(|e| e.abs() < 1e-12));
        assert_eq!(s.effective_dimension(0.99), 1);
    }

    #[test]
    fn correlation_extremes() {
        let f1 = array![[1.0, 2.0], [2.0, -1.0], [0.0, 0.5], [3.0, 0.0]];
        let c = correlation_coefficient(f1.view(), f1.view()).unwrap();
        // column-major views give the same answer
        let ft = f1.t().to_owned();
        assert_eq!(correlation_coefficient(ft.t(), ft.t()).unwrap(), c);
        assert!((c.value - 1.0).abs() < 1e-14);
        let neg = f1.mapv(|v| -v);
        let c = correlation_coefficient(f1.view(), neg.view()).unwrap();
        assert!((c.value - 1.0).abs() < 1e-14);
        let with_flat = array![[1.0, 7.0], [2.0, 7.0], [0.0, 7.0], [3.0, 7.0]];
        let c = correlation_coefficient(f1.view(), with_flat.view()).unwrap();
        assert_eq!((c.points, c.excluded), (1, 1));
    }

    #[test]
    fn relative_errors() {
        let r = [1.0, -2.0, 2.0];
        assert_eq!(relative_error(&r, &r).unwrap(), 0.0);
        let scaled: Vec<f64> = r.iter().map(|v| 1.1 * v).collect();
        assert!((relative_error(&scaled, &r).unwrap() - 0.1).abs() < 1e-14);
        let bumped = [1.0 + 0.6, -2.0, 2.0];
        assert!((relative_error(&bumped, &r).unwrap() - 0.2).abs() < 1e-15);
        assert_eq!(relative_error(&[1.0], &[0.0]), Err(MetricsError::ZeroReference));
    }
}
