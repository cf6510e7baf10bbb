//! Informative path planning with gradient-optimized sparse Gaussian
//! processes.
//!
//! A zero-label sparse GP turns sensor placement into continuous
//! optimization: the inducing points are the sensing locations, and
//! ascending the variational bound spreads them to cover the correlated
//! field. Routing structure comes from TSP/VRP ordering of the initial
//! points plus differentiable penalties (distance budget, velocity), and
//! non-point sensors are modeled by expanding each waypoint into its
//! field-of-view point set while aggregating covariances so only a
//! group-sized matrix is ever factorized.
//!
//! Modules:
//! - [`env`]: environment boxes, uniform sampling, polyline utilities
//! - [`kernel`]: anisotropic RBF covariance
//! - [`sgp`]: ELBO, gradients, projected Adam, Continuous-SGP placement
//! - [`transform`]: expansion and mean-aggregation transformations
//! - [`route`]: open-path TSP, balanced VRP, Hungarian waypoint assignment
//! - [`plan`]: penalties and the single-/multi-robot planners
//! - [`eval`]: synthetic GP fields, full-GP reconstruction, greedy-MI
//!   baseline

pub mod env;
pub mod error;
pub mod eval;
pub mod kernel;
pub mod parallel;
pub mod plan;
pub mod route;
pub mod sgp;
pub mod transform;

pub use env::{path_length, project_to_bounds, resample_path, sample_uniform, Environment, Path};
pub use error::{Error, Result};
pub use eval::{
    evaluate_paths, gp_posterior, greedy_mi_placement, rmse, sample_gp_field, EvalReport,
    EvalSensing, Field,
};
pub use kernel::RbfKernel;
pub use plan::{
    attach_past_data, distance_penalty, objective_value_with_sensing, objective_with_sensing,
    plan_multi, plan_single, space_time_combine, velocity_penalty, PastData, PenaltyConfig,
    PlanOutcome, PlanSpec,
};
pub use route::{assign_waypoints, tsp_order, vrp_routes, Tour};
pub use sgp::{
    compute_qnn, continuous_sgp_placement, elbo, elbo_grad, optimize, InducingPaths,
    ObjectiveConfig, OptimizeOutcome, QnnFactors, SgpModel,
};
pub use transform::{
    aggregation_matrix, expand_interpolate, expand_line_fov, expand_square_fov_height,
    qnn_aggregated, AggregationMatrix, SensingModel,
};
