//! Target stochastic processes, sensor layouts and snapshot data.

mod dataset;
mod gp;
mod halton;
mod layout;

pub use dataset::{read_dataset, write_csv, write_dataset, DatasetError, DatasetHeader};
pub use gp::{kernel_matrix, sample_gp, GpSampler, KernelSpec, ProcessSpec, ScalarFn, Transform};
pub use halton::{halton, halton_gaussian, inverse_normal_cdf, radical_inverse, PRIMES};
pub use layout::{collect_snapshots, equidistant, equidistant_layout, FieldReads, SensorLayout, SnapshotGroup};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProcessError {
    #[error("invalid kernel: {0}")]
    Kernel(String),
    #[error("Cholesky factorization failed with jitter up to {jitter:e} on {points} points")]
    Cholesky { jitter: f64, points: usize },
    #[error("invalid layout: {0}")]
    Layout(String),
    #[error("field `{field}` has {got} columns, layout expects {expected}")]
    FieldWidth { field: &'static str, expected: usize, got: usize },
    #[error("field `{field}` has {got} rows, expected {expected}")]
    RowCount { field: &'static str, expected: usize, got: usize },
    #[error("non-finite snapshot entry at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },
    #[error("at least one path is required")]
    NoPaths,
}

/// Independent random stream `index` of a master seed.
///
/// Streams depend only on `(seed, index)`, so work split across threads draws
/// the same numbers as a sequential loop.
pub fn substream(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Mixes a label into a seed so that unrelated consumers of one master seed
/// (training, data synthesis, evaluation) never share streams.
pub fn derive_seed(seed: u64, label: &str) -> u64 {
    // FNV-1a over the label, then a splitmix64 finalizer
    let mut h: u64 = 0xcbf29ce484222325;
    for b in label.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x100000001b3);
    }
    let mut z = seed ^ h;
    z = z.wrapping_add(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}
