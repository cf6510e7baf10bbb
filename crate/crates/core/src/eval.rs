//! Ground-truth synthetic fields, full-GP reconstruction, RMSE scoring,
//! the greedy mutual-information baseline, and the path-evaluation harness.

use nalgebra::linalg::Cholesky;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::env::{spatial_distance, Environment, Path};
use crate::error::{invalid, Error, Result};
use crate::kernel::RbfKernel;
use crate::parallel;

const MAX_FIELD_GRID: usize = 10_000;
const MAX_POSTERIOR_OBS: usize = 5_000;

/// A dense ground-truth field sampled from a GP prior over a regular grid.
#[derive(Debug, Clone)]
pub struct Field {
    env: Environment,
    resolution: Vec<usize>,
    values: Vec<f64>,
    kernel: RbfKernel,
    seed: u64,
}

impl Field {
    pub fn env(&self) -> &Environment {
        &self.env
    }

    pub fn resolution(&self) -> &[usize] {
        &self.resolution
    }

    /// Row-major grid values (last dimension fastest).
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn kernel(&self) -> &RbfKernel {
        &self.kernel
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Reassembles a field from stored values (CSV round-trip).
    pub fn from_parts(
        env: Environment,
        resolution: Vec<usize>,
        values: Vec<f64>,
        kernel: RbfKernel,
        seed: u64,
    ) -> Result<Self> {
        let expect: usize = resolution.iter().product();
        if resolution.len() != env.point_dim() {
            return Err(invalid("resolution must cover every environment dimension"));
        }
        if values.len() != expect {
            return Err(invalid(format!(
                "expected {expect} grid values, got {}",
                values.len()
            )));
        }
        Ok(Self {
            env,
            resolution,
            values,
            kernel,
            seed,
        })
    }

    /// Grid coordinates along one dimension, inclusive of both bounds.
    pub fn axis(&self, dim: usize) -> Vec<f64> {
        let (lo, hi) = self.env.coord_bounds()[dim];
        let n = self.resolution[dim];
        (0..n)
            .map(|i| {
                if n == 1 {
                    lo
                } else {
                    lo + (hi - lo) * i as f64 / (n - 1) as f64
                }
            })
            .collect()
    }

    /// All grid points, row-major (last dimension fastest).
    pub fn grid_points(&self) -> Vec<Vec<f64>> {
        let axes: Vec<Vec<f64>> = (0..self.resolution.len()).map(|d| self.axis(d)).collect();
        let total: usize = self.resolution.iter().product();
        let mut out = Vec::with_capacity(total);
        let mut idx = vec![0usize; axes.len()];
        for _ in 0..total {
            out.push(idx.iter().zip(&axes).map(|(&i, ax)| ax[i]).collect());
            for d in (0..axes.len()).rev() {
                idx[d] += 1;
                if idx[d] < self.resolution[d] {
                    break;
                }
                idx[d] = 0;
            }
        }
        out
    }

    /// Multilinear interpolation of the field at an arbitrary in-bounds
    /// point.
    pub fn value_at(&self, point: &[f64]) -> Result<f64> {
        let dims = self.resolution.len();
        if point.len() != dims {
            return Err(invalid(format!(
                "point has {} coordinates, field has {dims}",
                point.len()
            )));
        }
        let bounds = self.env.coord_bounds();
        let mut base = vec![0usize; dims];
        let mut frac = vec![0.0f64; dims];
        for d in 0..dims {
            let (lo, hi) = bounds[d];
            if point[d] < lo - 1e-9 || point[d] > hi + 1e-9 {
                return Err(invalid(format!(
                    "coordinate {d} = {} outside [{lo}, {hi}]",
                    point[d]
                )));
            }
            let n = self.resolution[d];
            if n == 1 {
                continue;
            }
            let pos = (point[d] - lo) / (hi - lo) * (n - 1) as f64;
            let i = (pos.floor() as usize).min(n - 2);
            base[d] = i;
            frac[d] = (pos - i as f64).clamp(0.0, 1.0);
        }
        // accumulate over the 2^dims corner combinations
        let mut value = 0.0;
        for corner in 0..(1usize << dims) {
            let mut weight = 1.0;
            let mut flat = 0usize;
            for d in 0..dims {
                let hi_side = (corner >> d) & 1 == 1;
                let n = self.resolution[d];
                let (i, w) = if n == 1 {
                    (0, if hi_side { 0.0 } else { 1.0 })
                } else if hi_side {
                    (base[d] + 1, frac[d])
                } else {
                    (base[d], 1.0 - frac[d])
                };
                weight *= w;
                flat = flat * n + i;
            }
            if weight > 0.0 {
                value += weight * self.values[flat];
            }
        }
        Ok(value)
    }
}

/// Draws an exact sample from the zero-mean GP prior over a regular grid by
/// dense Cholesky factorization.
pub fn sample_gp_field(
    kernel: &RbfKernel,
    env: &Environment,
    resolution: &[usize],
    seed: u64,
) -> Result<Field> {
    if resolution.len() != env.point_dim() {
        return Err(invalid(format!(
            "resolution has {} entries, environment has {} dimensions",
            resolution.len(),
            env.point_dim()
        )));
    }
    if resolution.iter().any(|&r| r < 2) {
        return Err(invalid("field resolution must be >= 2 per dimension"));
    }
    let total: usize = resolution.iter().product();
    if total > MAX_FIELD_GRID {
        return Err(Error::ResourceLimit(format!(
            "grid of {total} points exceeds the dense-sampling limit of {MAX_FIELD_GRID}; lower the resolution"
        )));
    }
    if kernel.dim() != env.point_dim() {
        return Err(invalid("kernel dimensionality must match the environment"));
    }

    let shell = Field {
        env: env.clone(),
        resolution: resolution.to_vec(),
        values: vec![0.0; total],
        kernel: kernel.clone(),
        seed,
    };
    let grid = shell.grid_points();
    let mut cov = kernel.cov_matrix(&grid, &grid)?;
    for i in 0..total {
        cov[(i, i)] += kernel.jitter();
    }
    let chol = Cholesky::new(cov).ok_or_else(|| {
        Error::NumericalFailure("field covariance is not positive definite".into())
    })?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let z = DVector::from_vec(standard_normals(&mut rng, total));
    let values = (chol.l() * z).iter().copied().collect();
    Field::from_parts(
        env.clone(),
        resolution.to_vec(),
        values,
        kernel.clone(),
        seed,
    )
}

/// Box-Muller standard normals from a seeded ChaCha8 stream.
fn standard_normals(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(n + 1);
    while out.len() < n {
        let u1: f64 = rng.random::<f64>().max(f64::MIN_POSITIVE);
        let u2: f64 = rng.random();
        let r = (-2.0 * u1.ln()).sqrt();
        let (s, c) = (std::f64::consts::TAU * u2).sin_cos();
        out.push(r * c);
        out.push(r * s);
    }
    out.truncate(n);
    out
}

/// Standard GP regression posterior (mean and variance per query point)
/// through one dense factorization of `K_oo + noise * I`.
pub fn gp_posterior(
    kernel: &RbfKernel,
    noise_variance: f64,
    obs_x: &[Vec<f64>],
    obs_y: &[f64],
    query_x: &[Vec<f64>],
) -> Result<(Vec<f64>, Vec<f64>)> {
    if obs_x.is_empty() {
        return Err(invalid("gp_posterior requires at least one observation"));
    }
    if obs_x.len() != obs_y.len() {
        return Err(invalid("observation inputs and values must align"));
    }
    if obs_x.len() > MAX_POSTERIOR_OBS {
        return Err(Error::ResourceLimit(format!(
            "{} observations exceed the dense-solve limit of {MAX_POSTERIOR_OBS}",
            obs_x.len()
        )));
    }
    if noise_variance < 0.0 || !noise_variance.is_finite() {
        return Err(invalid("noise variance must be >= 0"));
    }

    let o = obs_x.len();
    let koo = kernel.cov_matrix(obs_x, obs_x)?;
    // the noise term regularizes the solve; extra jitter only enters if the
    // factorization actually fails, so posterior variance at an observation
    // stays within the noise level
    let mut chol = None;
    for jitter in [
        0.0,
        kernel.jitter(),
        1e2 * kernel.jitter(),
        1e4 * kernel.jitter(),
    ] {
        let mut m = koo.clone();
        for i in 0..o {
            m[(i, i)] += noise_variance + jitter;
        }
        if let Some(c) = Cholesky::new(m) {
            chol = Some(c);
            break;
        }
    }
    let chol = chol.ok_or_else(|| {
        Error::NumericalFailure("observation covariance is not positive definite".into())
    })?;
    let y = DVector::from_column_slice(obs_y);
    let alpha = chol.solve(&y);
    let l = chol.l();

    // chunked so large grids evaluate in parallel without forming one huge
    // cross-covariance
    const CHUNK: usize = 256;
    let chunks: Vec<&[Vec<f64>]> = query_x.chunks(CHUNK).collect();
    let results: Vec<(Vec<f64>, Vec<f64>)> = parallel::map_collect(&chunks, |chunk| {
        let kqo = kernel.cov_matrix(chunk, obs_x).expect("dims checked above");
        let means: Vec<f64> = (0..chunk.len())
            .map(|i| kqo.row(i).transpose().dot(&alpha))
            .collect();
        let half = l
            .solve_lower_triangular(&kqo.transpose())
            .expect("triangular solve after successful Cholesky");
        let vars: Vec<f64> = (0..chunk.len())
            .map(|i| {
                let reduction = half.column(i).norm_squared();
                (kernel.variance() - reduction).max(-1e-10).max(0.0)
            })
            .collect();
        (means, vars)
    });

    let mut means = Vec::with_capacity(query_x.len());
    let mut vars = Vec::with_capacity(query_x.len());
    for (m, v) in results {
        means.extend(m);
        vars.extend(v);
    }
    Ok((means, vars))
}

/// Root-mean-square error between predictions and ground truth.
pub fn rmse(pred: &[f64], truth: &[f64]) -> Result<f64> {
    if pred.is_empty() || pred.len() != truth.len() {
        return Err(invalid(format!(
            "rmse requires equal non-empty lengths, got {} and {}",
            pred.len(),
            truth.len()
        )));
    }
    let sum: f64 = pred.iter().zip(truth).map(|(p, t)| (p - t) * (p - t)).sum();
    Ok((sum / pred.len() as f64).sqrt())
}

/// How observations are gathered along solution paths.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EvalSensing {
    /// Field values at the waypoints only.
    Discrete,
    /// Field values every `step` meters of spatial arc length along each
    /// path (plus both endpoints).
    Continuous { step: f64 },
}

pub struct EvalReport {
    pub rmse: f64,
    pub predictions: Vec<f64>,
    pub observation_count: usize,
    pub observations: Vec<Vec<f64>>,
}

/// Walks a polyline emitting points every `step` meters of spatial arc
/// length, including the start and end.
fn walk_continuous(waypoints: &[Vec<f64>], spatial_dim: usize, step: f64) -> Vec<Vec<f64>> {
    let mut out = vec![waypoints[0].clone()];
    let mut residual = step;
    for w in waypoints.windows(2) {
        let seg = spatial_distance(&w[0], &w[1], spatial_dim);
        if seg <= 0.0 {
            continue;
        }
        let mut along = residual;
        while along < seg {
            let t = along / seg;
            out.push(
                w[0].iter()
                    .zip(&w[1])
                    .map(|(&a, &b)| a + t * (b - a))
                    .collect(),
            );
            along += step;
        }
        residual = along - seg;
    }
    let last = waypoints.last().unwrap();
    if out.last() != Some(last) {
        out.push(last.clone());
    }
    out
}

/// Gathers ground-truth observations along the paths, reconstructs the
/// whole field with a full GP, and scores it against the grid.
pub fn evaluate_paths(
    field: &Field,
    paths: &[Path],
    sensing: EvalSensing,
    noise_variance: f64,
) -> Result<EvalReport> {
    let spatial_dim = field.env().spatial_dim();
    let mut obs: Vec<Vec<f64>> = Vec::new();
    for path in paths {
        match sensing {
            EvalSensing::Discrete => obs.extend(path.waypoints.iter().cloned()),
            EvalSensing::Continuous { step } => {
                if step <= 0.0 || !step.is_finite() {
                    return Err(invalid("continuous sensing requires step > 0"));
                }
                if path.waypoints.len() == 1 {
                    obs.push(path.waypoints[0].clone());
                } else {
                    obs.extend(walk_continuous(&path.waypoints, spatial_dim, step));
                }
            }
        }
    }
    if obs.is_empty() {
        return Err(invalid("no observations gathered from the paths"));
    }
    let obs_y: Vec<f64> = obs
        .iter()
        .map(|p| field.value_at(p))
        .collect::<Result<_>>()?;

    let grid = field.grid_points();
    let (pred, _) = gp_posterior(field.kernel(), noise_variance, &obs, &obs_y, &grid)?;
    let err = rmse(&pred, field.values())?;
    Ok(EvalReport {
        rmse: err,
        predictions: pred,
        observation_count: obs.len(),
        observations: obs,
    })
}

/// Greedy mutual-information placement on a discrete candidate grid: each
/// step adds the candidate maximizing `var(y | A) / var(y | comp)`, the
/// classic greedy MI gain, with ties broken by the lowest grid index.
/// Returns selections in pick order.
pub fn greedy_mi_placement(
    kernel: &RbfKernel,
    candidate_grid: &[Vec<f64>],
    k: usize,
) -> Result<Vec<usize>> {
    let n = candidate_grid.len();
    if n > 1000 {
        return Err(Error::ResourceLimit(format!(
            "{n} candidates exceed the dense MI limit of 1000"
        )));
    }
    if k >= n {
        return Err(invalid(format!(
            "need k < |grid|, got k = {k}, |grid| = {n}"
        )));
    }

    let mut cov = kernel.cov_matrix(candidate_grid, candidate_grid)?;
    for i in 0..n {
        cov[(i, i)] += kernel.jitter();
    }

    let mut selected: Vec<usize> = Vec::with_capacity(k);
    let mut unselected: Vec<usize> = (0..n).collect();

    for _ in 0..k {
        // var(y | selected) for all candidates
        let var_given_sel: Vec<f64> = if selected.is_empty() {
            unselected.iter().map(|&y| cov[(y, y)]).collect()
        } else {
            let ksel = DMatrix::from_fn(selected.len(), selected.len(), |i, j| {
                cov[(selected[i], selected[j])]
            });
            let chol = Cholesky::new(ksel).ok_or_else(|| {
                Error::NumericalFailure("selected-set covariance is singular".into())
            })?;
            unselected
                .iter()
                .map(|&y| {
                    let kys = DVector::from_fn(selected.len(), |i, _| cov[(selected[i], y)]);
                    let half = chol
                        .l()
                        .solve_lower_triangular(&kys)
                        .expect("triangular solve after successful Cholesky");
                    cov[(y, y)] - half.norm_squared()
                })
                .collect()
        };

        // var(y | unselected \ y) via the inverse-covariance diagonal trick:
        // var(y | rest) = 1 / (C^-1)_yy over the unselected block
        let m = unselected.len();
        let kun = DMatrix::from_fn(m, m, |i, j| cov[(unselected[i], unselected[j])]);
        let inv = Cholesky::new(kun)
            .ok_or_else(|| Error::NumericalFailure("candidate covariance is singular".into()))?
            .inverse();

        let mut best_idx = 0;
        let mut best_gain = f64::NEG_INFINITY;
        for (pos, _) in unselected.iter().enumerate() {
            let var_rest = 1.0 / inv[(pos, pos)];
            let gain = var_given_sel[pos] / var_rest;
            if gain > best_gain {
                best_gain = gain;
                best_idx = pos;
            }
        }
        selected.push(unselected.remove(best_idx));
    }
    Ok(selected)
}
