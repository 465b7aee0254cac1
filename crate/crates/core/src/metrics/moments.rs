//! Streaming first and second moments with exact parallel merging.

use super::{correlation_from, Correlation, MetricsError};
use ndarray::{Array2, ArrayView2, Axis};

/// Mean vector and full co-moment matrix of a stream of vectors.
#[derive(Clone, Debug, PartialEq)]
pub struct CoMoments {
    n: u64,
    mean: Vec<f64>,
    // row-major d x d sum of centered outer products
    m2: Vec<f64>,
}

impl CoMoments {
    pub fn new(dim: usize) -> Self {
        Self {
            n: 0,
            mean: vec![0.0; dim],
            m2: vec![0.0; dim * dim],
        }
    }

    /// Moments of the rows of a block, via one matrix product.
    pub fn from_rows(rows: ArrayView2<f64>) -> Self {
        let d = rows.ncols();
        let Some(mean) = rows.mean_axis(Axis(0)) else {
            return Self::new(d);
        };
        let centered = &rows - &mean;
        let m2 = centered.t().dot(&centered);
        Self {
            n: rows.nrows() as u64,
            mean: mean.to_vec(),
            m2: m2.iter().copied().collect(),
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn count(&self) -> u64 {
        self.n
    }

    pub fn push(&mut self, x: &[f64]) {
        let d = self.dim();
        assert_eq!(x.len(), d);
        self.n += 1;
        let inv = 1.0 / self.n as f64;
        let delta: Vec<f64> = x.iter().zip(&self.mean).map(|(x, m)| x - m).collect();
        for (m, dl) in self.mean.iter_mut().zip(&delta) {
            *m += dl * inv;
        }
        for i in 0..d {
            let di = delta[i];
            if di == 0.0 {
                continue;
            }
            let row = &mut self.m2[i * d..(i + 1) * d];
            for ((r, xj), mj) in row.iter_mut().zip(x).zip(&self.mean) {
                *r += di * (xj - mj);
            }
        }
    }

    pub fn merge(&mut self, other: &CoMoments) {
        if other.n == 0 {
            return;
        }
        if self.n == 0 {
            *self = other.clone();
            return;
        }
        let d = self.dim();
        let (na, nb) = (self.n as f64, other.n as f64);
        let n = na + nb;
        let delta: Vec<f64> = other.mean.iter().zip(&self.mean).map(|(b, a)| b - a).collect();
        let w = na * nb / n;
        for i in 0..d {
            for j in 0..d {
                self.m2[i * d + j] += other.m2[i * d + j] + delta[i] * delta[j] * w;
            }
        }
        for (m, dl) in self.mean.iter_mut().zip(&delta) {
            *m += dl * nb / n;
        }
        self.n += other.n;
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    /// Unbiased covariance matrix.
    pub fn covariance(&self) -> Result<Array2<f64>, MetricsError> {
        if self.n < 2 {
            return Err(MetricsError::TooFewPaths(self.n as usize));
        }
        let d = self.dim();
        let c = 1.0 / (self.n - 1) as f64;
        Ok(Array2::from_shape_fn((d, d), |(i, j)| self.m2[i * d + j] * c))
    }

    /// Unbiased pointwise variance.
    pub fn variance(&self) -> Result<Vec<f64>, MetricsError> {
        if self.n < 2 {
            return Err(MetricsError::TooFewPaths(self.n as usize));
        }
        let d = self.dim();
        let c = 1.0 / (self.n - 1) as f64;
        Ok((0..d).map(|i| (self.m2[i * d + i] * c).max(0.0)).collect())
    }

    pub fn std(&self) -> Result<Vec<f64>, MetricsError> {
        Ok(self.variance()?.into_iter().map(f64::sqrt).collect())
    }
}

/// Pointwise means, variances and cross-covariance of two paired fields.
#[derive(Clone, Debug, PartialEq)]
pub struct PairMoments {
    n: u64,
    mean_a: Vec<f64>,
    mean_b: Vec<f64>,
    m2_a: Vec<f64>,
    m2_b: Vec<f64>,
    c_ab: Vec<f64>,
}

impl PairMoments {
    pub fn new(dim: usize) -> Self {
        Self {
            n: 0,
            mean_a: vec![0.0; dim],
            mean_b: vec![0.0; dim],
            m2_a: vec![0.0; dim],
            m2_b: vec![0.0; dim],
            c_ab: vec![0.0; dim],
        }
    }

    pub fn count(&self) -> u64 {
        self.n
    }

    pub fn push(&mut self, a: &[f64], b: &[f64]) {
        assert_eq!(a.len(), self.mean_a.len());
        assert_eq!(b.len(), self.mean_b.len());
        self.n += 1;
        let inv = 1.0 / self.n as f64;
        for i in 0..a.len() {
            let da = a[i] - self.mean_a[i];
            let db = b[i] - self.mean_b[i];
            self.mean_a[i] += da * inv;
            self.mean_b[i] += db * inv;
            self.m2_a[i] += da * (a[i] - self.mean_a[i]);
            self.m2_b[i] += db * (b[i] - self.mean_b[i]);
            self.c_ab[i] += da * (b[i] - self.mean_b[i]);
        }
    }

    pub fn merge(&mut self, other: &PairMoments) {
        if other.n == 0 {
            return;
        }
        if self.n == 0 {
            *self = other.clone();
            return;
        }
        let (na, nb) = (self.n as f64, other.n as f64);
        let n = na + nb;
        let w = na * nb / n;
        for i in 0..self.mean_a.len() {
            let da = other.mean_a[i] - self.mean_a[i];
            let db = other.mean_b[i] - self.mean_b[i];
            self.m2_a[i] += other.m2_a[i] + da * da * w;
            self.m2_b[i] += other.m2_b[i] + db * db * w;
            self.c_ab[i] += other.c_ab[i] + da * db * w;
            self.mean_a[i] += da * nb / n;
            self.mean_b[i] += db * nb / n;
        }
        self.n += other.n;
    }

    pub fn correlation(&self) -> Result<Correlation, MetricsError> {
        if self.n < 2 {
            return Err(MetricsError::TooFewPaths(self.n as usize));
        }
        correlation_from(&self.c_ab, &self.m2_a, &self.m2_b)
    }
}
