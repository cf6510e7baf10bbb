//! Environment geometry, uniform candidate sampling, and polyline path
//! utilities.
//!
//! Spatial coordinates are in meters; the optional time coordinate (always
//! the last one) is in minutes.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{invalid, Error, Result};

/// Axis-aligned box over `d` spatial dimensions plus an optional time
/// horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct Environment {
    lower: Vec<f64>,
    upper: Vec<f64>,
    time_horizon: Option<(f64, f64)>,
}

impl Environment {
    /// Creates a purely spatial environment from per-dimension bounds.
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.is_empty() || lower.len() != upper.len() {
            return Err(invalid(format!(
                "bounds must be non-empty and of equal length, got {} and {}",
                lower.len(),
                upper.len()
            )));
        }
        for (i, (lo, hi)) in lower.iter().zip(&upper).enumerate() {
            if lo >= hi || !lo.is_finite() || !hi.is_finite() {
                return Err(invalid(format!(
                    "lower[{i}] = {lo} must be < upper[{i}] = {hi}"
                )));
            }
        }
        Ok(Self {
            lower,
            upper,
            time_horizon: None,
        })
    }

    /// Adds a time horizon `(t0, t1)` in minutes.
    pub fn with_time_horizon(mut self, t0: f64, t1: f64) -> Result<Self> {
        if t0 >= t1 || !t0.is_finite() || !t1.is_finite() {
            return Err(invalid(format!(
                "time horizon requires t0 < t1, got ({t0}, {t1})"
            )));
        }
        self.time_horizon = Some((t0, t1));
        Ok(self)
    }

    pub fn spatial_dim(&self) -> usize {
        self.lower.len()
    }

    /// Dimensionality of points in this environment: `d`, or `d + 1` when a
    /// time horizon is present.
    pub fn point_dim(&self) -> usize {
        self.spatial_dim() + usize::from(self.time_horizon.is_some())
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn time_horizon(&self) -> Option<(f64, f64)> {
        self.time_horizon
    }

    /// Per-coordinate `(lower, upper)` including the time dimension.
    pub fn coord_bounds(&self) -> Vec<(f64, f64)> {
        let mut bounds: Vec<(f64, f64)> = self
            .lower
            .iter()
            .zip(&self.upper)
            .map(|(&lo, &hi)| (lo, hi))
            .collect();
        if let Some((t0, t1)) = self.time_horizon {
            bounds.push((t0, t1));
        }
        bounds
    }

    pub fn contains(&self, point: &[f64]) -> bool {
        point.len() == self.point_dim()
            && self
                .coord_bounds()
                .iter()
                .zip(point)
                .all(|(&(lo, hi), &x)| x >= lo && x <= hi)
    }

    /// Largest per-coordinate extent, a convenient normalization scale.
    pub fn max_extent(&self) -> f64 {
        self.coord_bounds()
            .iter()
            .map(|(lo, hi)| hi - lo)
            .fold(f64::MIN, f64::max)
    }
}

/// An ordered sequence of waypoints for one robot.
///
/// Waypoints live in `R^d`, or `R^(d+1)` with the trailing coordinate being
/// time in minutes.
#[derive(Debug, Clone, PartialEq)]
pub struct Path {
    pub robot_id: usize,
    pub waypoints: Vec<Vec<f64>>,
}

impl Path {
    pub fn new(robot_id: usize, waypoints: Vec<Vec<f64>>) -> Result<Self> {
        if waypoints.is_empty() {
            return Err(invalid("a path needs at least one waypoint"));
        }
        let dim = waypoints[0].len();
        if waypoints.iter().any(|w| w.len() != dim) {
            return Err(invalid("all waypoints must share one dimensionality"));
        }
        Ok(Self {
            robot_id,
            waypoints,
        })
    }

    /// Spatial length in meters; `spatial_dim` coordinates count toward
    /// distance, any trailing time coordinate does not.
    pub fn length(&self, spatial_dim: usize) -> f64 {
        spatial_path_length(&self.waypoints, spatial_dim)
    }
}

/// Spatial length of a path in meters: distances over the first
/// `spatial_dim` coordinates only, so a trailing time coordinate never
/// counts toward travel distance.
pub fn path_length(path: &Path, spatial_dim: usize) -> f64 {
    spatial_path_length(&path.waypoints, spatial_dim)
}

/// Sum of Euclidean distances between consecutive waypoints, restricted to
/// the first `spatial_dim` coordinates. A single point has length 0.
pub fn spatial_path_length(waypoints: &[Vec<f64>], spatial_dim: usize) -> f64 {
    waypoints
        .windows(2)
        .map(|w| spatial_distance(&w[0], &w[1], spatial_dim))
        .sum()
}

/// Euclidean distance over the first `spatial_dim` coordinates.
pub fn spatial_distance(a: &[f64], b: &[f64], spatial_dim: usize) -> f64 {
    a.iter()
        .zip(b)
        .take(spatial_dim)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Draws `n` uniform points from the environment (including the time
/// horizon when present). Deterministic and portable for a fixed seed; the
/// generator is ChaCha8 seeded with `seed`.
pub fn sample_uniform(env: &Environment, n: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    if n == 0 {
        return Err(invalid("sample_uniform requires n >= 1"));
    }
    let bounds = env.coord_bounds();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..n)
        .map(|_| {
            bounds
                .iter()
                .map(|&(lo, hi)| rng.random_range(lo..hi))
                .collect()
        })
        .collect())
}

/// Clamps every point to the environment box (and time horizon). Points
/// already inside are returned unchanged; the operation is idempotent.
pub fn project_to_bounds(points: &[Vec<f64>], env: &Environment) -> Result<Vec<Vec<f64>>> {
    let bounds = env.coord_bounds();
    points
        .iter()
        .map(|p| {
            if p.len() != bounds.len() {
                return Err(invalid(format!(
                    "point has {} coordinates, environment expects {}",
                    p.len(),
                    bounds.len()
                )));
            }
            Ok(p.iter()
                .zip(&bounds)
                .map(|(&x, &(lo, hi))| x.clamp(lo, hi))
                .collect())
        })
        .collect()
}

/// Resamples a path to `s` points at equal arc-length spacing along the
/// original polyline. The first and last waypoints are preserved exactly;
/// arc length is measured over all coordinates of the waypoints.
///
/// Ties at segment junctions resolve to the earlier segment.
pub fn resample_path(path: &Path, s: usize) -> Result<Path> {
    if s < 2 {
        return Err(invalid("resample_path requires s >= 2"));
    }
    if path.waypoints.len() < 2 {
        return Err(Error::DegeneratePath(
            "resample_path needs at least 2 waypoints".into(),
        ));
    }
    let dim = path.waypoints[0].len();
    // Full-dimensional arc length so spatio-temporal paths resample in
    // space-time, not just space.
    let seg_lens: Vec<f64> = path
        .waypoints
        .windows(2)
        .map(|w| spatial_distance(&w[0], &w[1], dim))
        .collect();
    let total: f64 = seg_lens.iter().sum();
    if total <= 0.0 {
        return Err(Error::DegeneratePath(
            "resample_path requires positive total length".into(),
        ));
    }

    let mut cumulative = Vec::with_capacity(seg_lens.len() + 1);
    cumulative.push(0.0);
    for l in &seg_lens {
        cumulative.push(cumulative.last().unwrap() + l);
    }

    let mut out = Vec::with_capacity(s);
    out.push(path.waypoints[0].clone());
    for k in 1..s - 1 {
        let target = total * k as f64 / (s - 1) as f64;
        // partition_point returns the first segment whose end is >= target,
        // which is the "earlier segment" tie rule at junctions.
        let seg = cumulative[1..].partition_point(|&c| c < target);
        let seg = seg.min(seg_lens.len() - 1);
        let seg_start = cumulative[seg];
        let w = if seg_lens[seg] > 0.0 {
            (target - seg_start) / seg_lens[seg]
        } else {
            0.0
        };
        let a = &path.waypoints[seg];
        let b = &path.waypoints[seg + 1];
        out.push(a.iter().zip(b).map(|(&x, &y)| x + w * (y - x)).collect());
    }
    out.push(path.waypoints.last().unwrap().clone());
    Path::new(path.robot_id, out)
}
