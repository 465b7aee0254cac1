//! Finite-difference solver for `-(1/10) d/dx (k du/dx) = f` on `[-1, 1]` with
//! `u(-1) = u(1) = 0`, and Monte-Carlo reference statistics built on it.

use std::io::{self, Write};

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::{symmetric_eigenvalues, CoMoments, Correlation, MetricsError, PairMoments};
use crate::processes::{derive_seed, GpSampler, ProcessError, ProcessSpec, SensorLayout, SnapshotGroup};

/// Diffusion prefactor of the operator.
pub const DIFFUSION: f64 = 0.1;

/// Paths per block in Monte-Carlo accumulation; fixes the merge order.
pub const CHUNK: usize = 2048;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EllipticError {
    #[error("grid needs at least 3 points, got {0}")]
    GridSize(usize),
    #[error("field has {got} values, grid has {expected}")]
    Length { expected: usize, got: usize },
    #[error("k must be positive, found {value} at grid point {index}")]
    NonPositiveK { index: usize, value: f64 },
    #[error("tridiagonal system is singular at row {0}")]
    Singular(usize),
    #[error(transparent)]
    Process(#[from] ProcessError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Grid1D {
    m: usize,
    h: f64,
    points: Vec<f64>,
}

impl Grid1D {
    pub fn new(m: usize) -> Result<Self, EllipticError> {
        if m < 3 {
            return Err(EllipticError::GridSize(m));
        }
        Ok(Self {
            m,
            h: 2.0 / (m - 1) as f64,
            points: crate::processes::equidistant(m, -1.0, 1.0),
        })
    }

    pub fn len(&self) -> usize {
        self.m
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    /// Value of a grid function at `x`: exact at grid points, cubic Lagrange otherwise.
    pub fn interpolate(&self, values: &[f64], x: f64) -> f64 {
        let t = (x + 1.0) / self.h;
        let r = t.round();
        if (t - r).abs() < 1e-9 && r >= 0.0 && (r as usize) < self.m {
            return values[r as usize];
        }
        let base = (t.floor() as isize - 1).clamp(0, self.m as isize - 4) as usize;
        let xs = &self.points[base..base + 4];
        let mut acc = 0.0;
        for i in 0..4 {
            let mut w = 1.0;
            for j in 0..4 {
                if i != j {
                    w *= (x - xs[j]) / (xs[i] - xs[j]);
                }
            }
            acc += w * values[base + i];
        }
        acc
    }

    pub fn read(&self, values: &[f64], positions: &[f64]) -> Vec<f64> {
        positions.iter().map(|&x| self.interpolate(values, x)).collect()
    }
}

/// Solves the conservative three-point scheme with arithmetic-mean interface coefficients.
pub fn solve_elliptic_fd(k: &[f64], f: &[f64], grid: &Grid1D) -> Result<Vec<f64>, EllipticError> {
    let m = grid.len();
    for got in [k.len(), f.len()] {
        if got != m {
            return Err(EllipticError::Length { expected: m, got });
        }
    }
    if let Some((index, &value)) = k.iter().enumerate().find(|(_, v)| !(**v > 0.0) || !v.is_finite()) {
        return Err(EllipticError::NonPositiveK { index, value });
    }
    // unknowns u_1 .. u_{m-2}; row i: -kl u_{i-1} + (kl + kr) u_i - kr u_{i+1} = 10 h^2 f_i
    let n = m - 2;
    let rhs_scale = grid.h() * grid.h() / DIFFUSION;
    let mut c_prime = vec![0.0; n];
    let mut d_prime = vec![0.0; n];
    for r in 0..n {
        let i = r + 1;
        let kl = 0.5 * (k[i - 1] + k[i]);
        let kr = 0.5 * (k[i] + k[i + 1]);
        let (a, b, c) = (-kl, kl + kr, -kr);
        let d = rhs_scale * f[i];
        let (denom, prev_d) = if r == 0 {
            (b, 0.0)
        } else {
            (b - a * c_prime[r - 1], d_prime[r - 1])
        };
        if denom == 0.0 || !denom.is_finite() {
            return Err(EllipticError::Singular(i));
        }
        c_prime[r] = c / denom;
        d_prime[r] = (d - a * prev_d) / denom;
    }
    let mut u = vec![0.0; m];
    for r in (0..n).rev() {
        let next = if r + 1 < n { u[r + 2] } else { 0.0 };
        u[r + 1] = d_prime[r] - c_prime[r] * next;
    }
    Ok(u)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReferenceStats {
    pub grid: Vec<f64>,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub n_paths: usize,
    /// Covariance eigenvalues, descending.
    pub spectra: Vec<f64>,
}

impl ReferenceStats {
    pub fn from_moments(grid: &Grid1D, m: &CoMoments) -> Result<Self, EllipticError> {
        Ok(Self {
            grid: grid.points().to_vec(),
            mean: m.mean().to_vec(),
            std: m.std()?,
            n_paths: m.count() as usize,
            spectra: symmetric_eigenvalues(&m.covariance()?),
        })
    }

    /// CSV with columns `x,mean,std`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "x,mean,std")?;
        for ((x, m), s) in self.grid.iter().zip(&self.mean).zip(&self.std) {
            writeln!(out, "{x},{m},{s}")?;
        }
        Ok(())
    }

    /// CSV with columns `mode,eigenvalue`.
    pub fn write_spectra_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "mode,eigenvalue")?;
        for (i, e) in self.spectra.iter().enumerate() {
            writeln!(out, "{},{e}", i + 1)?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct McReference {
    pub k: ReferenceStats,
    pub f: ReferenceStats,
    pub u: ReferenceStats,
    /// `None` when no grid point has variance in both fields.
    pub corr_ku: Option<Correlation>,
    pub corr_kf: Option<Correlation>,
    /// Paths whose solve failed (e.g. non-positive k) and were left out.
    pub skipped: usize,
    /// Solved `u` paths (one row per kept path), when requested.
    #[serde(skip)]
    pub u_paths: Option<Array2<f64>>,
}

/// Samples `k` and `f` of one random event on the grid points.
#[derive(Clone, Debug)]
pub struct EventSampler {
    k: GpSampler,
    f: GpSampler,
    k_seed: u64,
    f_seed: u64,
}

impl EventSampler {
    pub fn new(k: &ProcessSpec, f: &ProcessSpec, grid: &Grid1D, seed: u64) -> Result<Self, EllipticError> {
        Ok(Self {
            k: GpSampler::new(grid.points(), k)?,
            f: GpSampler::new(grid.points(), f)?,
            k_seed: derive_seed(seed, "event-k"),
            f_seed: derive_seed(seed, "event-f"),
        })
    }

    /// Independent `k` and `f` paths of event `index`.
    pub fn fields(&self, index: u64) -> (Vec<f64>, Vec<f64>) {
        (self.k.sample_indexed(self.k_seed, index), self.f.sample_indexed(self.f_seed, index))
    }

    /// `(k, f, u)` of event `index`.
    pub fn event(&self, index: u64, grid: &Grid1D) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>), EllipticError> {
        let (k, f) = self.fields(index);
        let u = solve_elliptic_fd(&k, &f, grid)?;
        Ok((k, f, u))
    }
}

struct Acc {
    k: CoMoments,
    f: CoMoments,
    u: CoMoments,
    ku: PairMoments,
    kf: PairMoments,
    skipped: usize,
    u_rows: Vec<f64>,
}

impl Acc {
    fn new(m: usize) -> Self {
        Self {
            k: CoMoments::new(m),
            f: CoMoments::new(m),
            u: CoMoments::new(m),
            ku: PairMoments::new(m),
            kf: PairMoments::new(m),
            skipped: 0,
            u_rows: Vec::new(),
        }
    }

    fn merge(&mut self, o: Acc) {
        self.k.merge(&o.k);
        self.f.merge(&o.f);
        self.u.merge(&o.u);
        self.ku.merge(&o.ku);
        self.kf.merge(&o.kf);
        self.skipped += o.skipped;
        self.u_rows.extend(o.u_rows);
    }
}

/// Pointwise statistics, spectra and cross-correlations of `n_paths` events.
///
/// Paths are grouped into fixed-size chunks whose partial moments are merged in
/// chunk order, so results do not depend on the number of threads.
pub fn mc_reference(
    k_spec: &ProcessSpec,
    f_spec: &ProcessSpec,
    n_paths: usize,
    grid: &Grid1D,
    seed: u64,
    keep_u_paths: bool,
) -> Result<McReference, EllipticError> {
    if n_paths < 2 {
        return Err(MetricsError::TooFewPaths(n_paths).into());
    }
    let sampler = EventSampler::new(k_spec, f_spec, grid, seed)?;
    let m = grid.len();
    let chunks = n_paths.div_ceil(CHUNK);
    let parts: Vec<Acc> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut acc = Acc::new(m);
            for i in c * CHUNK..((c + 1) * CHUNK).min(n_paths) {
                match sampler.event(i as u64, grid) {
                    Ok((k, f, u)) => {
                        acc.k.push(&k);
                        acc.f.push(&f);
                        acc.u.push(&u);
                        acc.ku.push(&k, &u);
                        acc.kf.push(&k, &f);
                        if keep_u_paths {
                            acc.u_rows.extend_from_slice(&u);
                        }
                    }
                    Err(_) => acc.skipped += 1,
                }
            }
            acc
        })
        .collect();
    let mut total = Acc::new(m);
    for p in parts {
        total.merge(p);
    }
    let kept = total.u.count() as usize;
    let u_paths = keep_u_paths.then(|| Array2::from_shape_vec((kept, m), std::mem::take(&mut total.u_rows)).expect("row count"));
    Ok(McReference {
        k: ReferenceStats::from_moments(grid, &total.k)?,
        f: ReferenceStats::from_moments(grid, &total.f)?,
        u: ReferenceStats::from_moments(grid, &total.u)?,
        corr_ku: total.ku.correlation().ok(),
        corr_kf: total.kf.correlation().ok(),
        skipped: total.skipped,
        u_paths,
    })
}

/// `n` snapshots of the coupled system: each row holds the `k`, `u`, `f` and
/// boundary reads of one event, with `u` from the finite-difference solve.
pub fn simulate_snapshots(
    k_spec: &ProcessSpec,
    f_spec: &ProcessSpec,
    layout: &SensorLayout,
    n: usize,
    grid: &Grid1D,
    seed: u64,
    group: usize,
) -> Result<SnapshotGroup, EllipticError> {
    layout.validate()?;
    let sampler = EventSampler::new(k_spec, f_spec, grid, derive_seed(seed, &format!("group-{group}")))?;
    let rows: Vec<Result<Vec<f64>, EllipticError>> = (0..n as u64)
        .into_par_iter()
        .map(|i| {
            let (k, f, u) = sampler.event(i, grid)?;
            let mut row = grid.read(&k, &layout.k);
            row.extend(grid.read(&u, &layout.u));
            row.extend(grid.read(&f, &layout.f));
            row.extend(grid.read(&u, &layout.b));
            Ok(row)
        })
        .collect();
    let mut data = Vec::with_capacity(n * layout.width());
    for r in rows {
        data.extend(r?);
    }
    let data = Array2::from_shape_vec((n, layout.width()), data).expect("row width");
    Ok(SnapshotGroup::new(group, layout.clone(), data)?)
}
