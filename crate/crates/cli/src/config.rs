//! Strict JSON run configuration. Unknown keys are rejected so config
//! drift fails loudly in batch pipelines.

use serde::{Deserialize, Serialize};

use ipp_core::{Environment, PenaltyConfig, RbfKernel, SensingModel};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvironmentConfig {
    /// Per-dimension lower bounds in meters.
    pub lower: Vec<f64>,
    /// Per-dimension upper bounds in meters.
    pub upper: Vec<f64>,
    /// Optional (t0, t1) horizon in minutes.
    #[serde(default)]
    pub time_horizon: Option<(f64, f64)>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelConfig {
    /// Signal variance in field-units^2.
    pub variance: f64,
    /// Per-dimension lengthscales (meters; minutes for the time dimension).
    pub lengthscales: Vec<f64>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, tag = "kind", rename_all = "snake_case")]
pub enum SensingConfig {
    #[default]
    Point,
    Arc {
        points_per_segment: usize,
    },
    LineFov {
        length_m: f64,
        points_per_line: usize,
    },
    SquareFovHeight {
        half_angle_rad: f64,
        grid_side: usize,
    },
}

impl SensingConfig {
    pub fn to_model(&self) -> SensingModel {
        match *self {
            SensingConfig::Point => SensingModel::Point,
            SensingConfig::Arc { points_per_segment } => SensingModel::Arc { points_per_segment },
            SensingConfig::LineFov {
                length_m,
                points_per_line,
            } => SensingModel::LineFov {
                length: length_m,
                points_per_line,
            },
            SensingConfig::SquareFovHeight {
                half_angle_rad,
                grid_side,
            } => SensingModel::SquareFovHeight {
                half_angle: half_angle_rad,
                grid_side,
            },
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PenaltiesConfig {
    /// Distance budget per robot in meters.
    #[serde(default)]
    pub distance_budget: Option<f64>,
    /// Velocity limit in meters/minute (needs a time horizon).
    #[serde(default)]
    pub velocity_limit: Option<f64>,
    /// Acceleration limit in meters/minute^2 (needs a time horizon).
    #[serde(default)]
    pub accel_limit: Option<f64>,
    /// Penalty weight alpha (dimensionless).
    #[serde(default = "default_weight")]
    pub weight: f64,
}

fn default_weight() -> f64 {
    100.0
}

impl Default for PenaltiesConfig {
    fn default() -> Self {
        Self {
            distance_budget: None,
            velocity_limit: None,
            accel_limit: None,
            weight: default_weight(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    /// Adam step size in normalized coordinates.
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default = "default_iters")]
    pub max_iters: usize,
    /// Relative objective-change threshold over a 20-iteration window.
    #[serde(default = "default_tol")]
    pub tolerance: f64,
}

fn default_lr() -> f64 {
    1e-2
}
fn default_iters() -> usize {
    2000
}
fn default_tol() -> f64 {
    1e-6
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            learning_rate: default_lr(),
            max_iters: default_iters(),
            tolerance: default_tol(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub environment: EnvironmentConfig,
    pub kernel: KernelConfig,
    /// Observation noise variance in field-units^2.
    pub noise_variance: f64,
    /// RNG seed; every output is byte-deterministic given config + seed.
    pub seed: u64,
    #[serde(default = "default_robots")]
    pub robots: usize,
    #[serde(default = "default_waypoints")]
    pub waypoints: usize,
    #[serde(default)]
    pub sensing: SensingConfig,
    #[serde(default)]
    pub penalties: PenaltiesConfig,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    /// Unlabeled SGP training samples; defaults to 1000 (point dim <= 2) or
    /// 2000.
    #[serde(default)]
    pub train_samples: Option<usize>,
    /// Grid resolution per dimension for gen-data; defaults to 25 each.
    #[serde(default)]
    pub field_resolution: Option<Vec<usize>>,
    /// Path to a JSON array of past sample locations `[[x, y, t<=0], ...]`.
    #[serde(default)]
    pub past_data: Option<String>,
    /// Fixed first waypoint (same dimensionality as environment points).
    #[serde(default)]
    pub fixed_start: Option<Vec<f64>>,
    /// Fixed last waypoint.
    #[serde(default)]
    pub fixed_end: Option<Vec<f64>>,
    /// Output directory; the -o flag overrides.
    #[serde(default)]
    pub output_dir: Option<String>,
}

fn default_robots() -> usize {
    1
}
fn default_waypoints() -> usize {
    10
}

impl RunConfig {
    pub fn environment(&self) -> Result<Environment, ipp_core::Error> {
        let env = Environment::new(
            self.environment.lower.clone(),
            self.environment.upper.clone(),
        )?;
        match self.environment.time_horizon {
            Some((t0, t1)) => env.with_time_horizon(t0, t1),
            None => Ok(env),
        }
    }

    pub fn kernel(&self) -> Result<RbfKernel, ipp_core::Error> {
        RbfKernel::new(self.kernel.variance, self.kernel.lengthscales.clone())
    }

    pub fn penalties(&self) -> PenaltyConfig {
        PenaltyConfig {
            distance_budget: self.penalties.distance_budget,
            velocity_limit: self.penalties.velocity_limit,
            accel_limit: self.penalties.accel_limit,
            weight: self.penalties.weight,
        }
    }

    pub fn field_resolution(&self) -> Vec<usize> {
        let dims =
            self.environment.lower.len() + usize::from(self.environment.time_horizon.is_some());
        self.field_resolution
            .clone()
            .unwrap_or_else(|| vec![25; dims])
    }
}
