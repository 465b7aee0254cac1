use nalgebra::{Cholesky, DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{substream, ProcessError};

/// Squared-exponential kernel `variance * exp(-(x - x')^2 / (2 length^2))`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub variance: f64,
    pub length: f64,
}

impl KernelSpec {
    pub fn new(variance: f64, length: f64) -> Result<Self, ProcessError> {
        let k = Self { variance, length };
        k.validate()?;
        Ok(k)
    }

    /// Kernel written as `variance * exp(-rate (x - x')^2)`.
    pub fn from_rate(variance: f64, rate: f64) -> Result<Self, ProcessError> {
        if !(rate > 0.0) {
            return Err(ProcessError::Kernel(format!("rate must be positive, got {rate}")));
        }
        Self::new(variance, (0.5 / rate).sqrt())
    }

    pub fn validate(&self) -> Result<(), ProcessError> {
        if !(self.variance >= 0.0 && self.variance.is_finite()) {
            return Err(ProcessError::Kernel(format!(
                "variance must be non-negative, got {}",
                self.variance
            )));
        }
        if !(self.length > 0.0 && self.length.is_finite()) {
            return Err(ProcessError::Kernel(format!(
                "correlation length must be positive, got {}",
                self.length
            )));
        }
        Ok(())
    }

    pub fn eval(&self, x: f64, y: f64) -> f64 {
        let d = x - y;
        self.variance * (-(d * d) / (2.0 * self.length * self.length)).exp()
    }
}

pub fn kernel_matrix(points: &[f64], kernel: &KernelSpec) -> DMatrix<f64> {
    let n = points.len();
    DMatrix::from_fn(n, n, |i, j| kernel.eval(points[i], points[j]))
}

/// Deterministic scalar functions used for process means and log-shifts.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScalarFn {
    Zero,
    Constant {
        value: f64,
    },
    /// `amplitude * sin(frequency * (x + offset))`
    Sine {
        amplitude: f64,
        frequency: f64,
        offset: f64,
    },
}

impl ScalarFn {
    pub fn eval(&self, x: f64) -> f64 {
        match *self {
            ScalarFn::Zero => 0.0,
            ScalarFn::Constant { value } => value,
            ScalarFn::Sine {
                amplitude,
                frequency,
                offset,
            } => amplitude * (frequency * (x + offset)).sin(),
        }
    }
}

/// Pointwise map applied to a Gaussian path `g`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Transform {
    Identity,
    /// `exp(shift(x) + g(x))`, strictly positive.
    ExpShift {
        shift: ScalarFn,
    },
    /// `(x^2 - 1) g(x)`, vanishing at `x = +-1`.
    BoundaryFactor,
}

impl Transform {
    pub fn apply(&self, x: f64, g: f64) -> f64 {
        match self {
            Transform::Identity => g,
            Transform::ExpShift { shift } => (shift.eval(x) + g).exp(),
            Transform::BoundaryFactor => (x * x - 1.0) * g,
        }
    }
}

/// Gaussian process with mean and kernel, followed by a pointwise transform.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProcessSpec {
    pub mean: ScalarFn,
    pub kernel: KernelSpec,
    pub transform: Transform,
}

impl ProcessSpec {
    pub fn gaussian(mean: ScalarFn, kernel: KernelSpec) -> Self {
        Self {
            mean,
            kernel,
            transform: Transform::Identity,
        }
    }
}

const JITTER_START: f64 = 1e-12;
const JITTER_MAX: f64 = 1e-8;

/// Cholesky factor of the kernel matrix on a fixed point set.
#[derive(Clone, Debug)]
pub struct GpSampler {
    spec: ProcessSpec,
    points: Vec<f64>,
    mean: Vec<f64>,
    factor: DMatrix<f64>,
    jitter: f64,
}

impl GpSampler {
    pub fn new(points: &[f64], spec: &ProcessSpec) -> Result<Self, ProcessError> {
        spec.kernel.validate()?;
        let k = kernel_matrix(points, &spec.kernel);
        let scale = spec.kernel.variance;
        let mut jitter = 0.0;
        // zero variance: a deterministic path equal to the mean
        let factor = if scale == 0.0 {
            DMatrix::zeros(points.len(), points.len())
        } else {
            loop {
                let mut m = k.clone();
                for i in 0..points.len() {
                    m[(i, i)] += jitter * scale;
                }
                if let Some(c) = Cholesky::new(m) {
                    break c.unpack();
                }
                jitter = if jitter == 0.0 { JITTER_START } else { jitter * 2.0 };
                if jitter > JITTER_MAX * (1.0 + 1e-12) {
                    return Err(ProcessError::Cholesky {
                        jitter: JITTER_MAX * scale,
                        points: points.len(),
                    });
                }
            }
        };
        Ok(Self {
            spec: *spec,
            mean: points.iter().map(|&x| spec.mean.eval(x)).collect(),
            points: points.to_vec(),
            factor,
            jitter: jitter * scale,
        })
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    /// Diagonal jitter that made the factorization succeed (0 when none was needed).
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    /// Gaussian path before the transform.
    pub fn sample_gaussian<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let n = self.points.len();
        let z = DVector::from_iterator(n, (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)));
        let lz = &self.factor * z;
        lz.iter().zip(&self.mean).map(|(a, m)| a + m).collect()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let mut path = self.sample_gaussian(rng);
        for (v, &x) in path.iter_mut().zip(&self.points) {
            *v = self.spec.transform.apply(x, *v);
        }
        path
    }

    /// Path `index` of the stream family `seed`.
    pub fn sample_indexed(&self, seed: u64, index: u64) -> Vec<f64> {
        self.sample(&mut substream(seed, index))
    }
}

/// `n` transformed sample paths on `points`; path `i` uses substream `i` of `seed`.
pub fn sample_gp(points: &[f64], spec: &ProcessSpec, n: usize, seed: u64) -> Result<Vec<Vec<f64>>, ProcessError> {
    if n == 0 {
        return Err(ProcessError::NoPaths);
    }
    let sampler = GpSampler::new(points, spec)?;
    Ok((0..n as u64).into_par_iter().map(|i| sampler.sample_indexed(seed, i)).collect())
}
