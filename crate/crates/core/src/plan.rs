//! Penalty terms, objective assembly, and the end-to-end single- and
//! multi-robot planners.

use nalgebra::DMatrix;

use crate::env::{sample_uniform, spatial_distance, spatial_path_length, Environment, Path};
use crate::error::{invalid, Error, Result};
use crate::kernel::RbfKernel;
use crate::route::{assign_waypoints, tsp_order, vrp_routes};
use crate::sgp::{
    adam_projected_ascent, derived_seed, optimize, param_spaces, random_subset, AscentOptions,
    InducingPaths, ObjectiveConfig, PathsObjective, SgpModel,
};
use crate::transform::SensingModel;

/// Routing-constraint penalties. Each active constraint contributes
/// `weight * relu(violation)` to the objective, so feasible paths are
/// penalty-free.
#[derive(Debug, Clone)]
pub struct PenaltyConfig {
    /// Distance budget `c` in meters per robot.
    pub distance_budget: Option<f64>,
    /// Velocity limit in meters/minute; requires a time dimension.
    pub velocity_limit: Option<f64>,
    /// Acceleration limit in meters/minute^2; requires a time dimension.
    /// Off by default.
    pub accel_limit: Option<f64>,
    /// Penalty weight alpha.
    pub weight: f64,
}

impl Default for PenaltyConfig {
    fn default() -> Self {
        Self {
            distance_budget: None,
            velocity_limit: None,
            accel_limit: None,
            weight: 100.0,
        }
    }
}

impl PenaltyConfig {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(c) = self.distance_budget {
            if c <= 0.0 || !c.is_finite() {
                return Err(invalid("distance budget must be > 0"));
            }
        }
        if let Some(v) = self.velocity_limit {
            if v <= 0.0 || !v.is_finite() {
                return Err(invalid("velocity limit must be > 0"));
            }
        }
        if let Some(a) = self.accel_limit {
            if a <= 0.0 || !a.is_finite() {
                return Err(invalid("acceleration limit must be > 0"));
            }
        }
        // weight 0 disables all penalties, recovering the unconstrained
        // planner exactly
        if self.weight < 0.0 || !self.weight.is_finite() {
            return Err(invalid("penalty weight must be >= 0"));
        }
        Ok(())
    }

    fn any_active(&self) -> bool {
        self.weight > 0.0
            && (self.distance_budget.is_some()
                || self.velocity_limit.is_some()
                || self.accel_limit.is_some())
    }
}

/// Locations of previously collected samples; time coordinates are minutes
/// before now and must be <= 0.
#[derive(Debug, Clone)]
pub struct PastData {
    points: Vec<Vec<f64>>,
}

impl PastData {
    pub fn new(points: Vec<Vec<f64>>, env: &Environment) -> Result<Self> {
        if env.time_horizon().is_none() {
            return Err(invalid("past data requires a spatio-temporal environment"));
        }
        let dim = env.point_dim();
        for (i, p) in points.iter().enumerate() {
            if p.len() != dim {
                return Err(invalid(format!(
                    "past point {i} has {} coordinates, expected {dim}",
                    p.len()
                )));
            }
            if p[dim - 1] > 0.0 {
                return Err(invalid(format!(
                    "past point {i} has positive time {}",
                    p[dim - 1]
                )));
            }
            for (d, coord) in p.iter().enumerate().take(dim - 1) {
                if *coord < env.lower()[d] || *coord > env.upper()[d] {
                    return Err(invalid(format!(
                        "past point {i} lies outside the spatial bounds"
                    )));
                }
            }
        }
        Ok(Self { points })
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }
}

/// `alpha * relu(path_length(points) - c)`; zero whenever the ordered
/// waypoints stay within the budget.
pub fn distance_penalty(points: &[Vec<f64>], c: f64, alpha: f64, spatial_dim: usize) -> f64 {
    alpha * (spatial_path_length(points, spatial_dim) - c).max(0.0)
}

/// `alpha * sum_i relu(speed_i - v_max)` with per-segment finite-difference
/// speeds. The time coordinate is the trailing one.
pub fn velocity_penalty(
    points: &[Vec<f64>],
    v_max: f64,
    alpha: f64,
    spatial_dim: usize,
) -> Result<f64> {
    if points.iter().any(|p| p.len() < spatial_dim + 1) {
        return Err(invalid("velocity penalty requires a time coordinate"));
    }
    let tcoord = points[0].len() - 1;
    let mut pen = 0.0;
    for w in points.windows(2) {
        let ds = spatial_distance(&w[0], &w[1], spatial_dim);
        let dt = (w[1][tcoord] - w[0][tcoord]).max(MIN_DT);
        pen += (ds / dt - v_max).max(0.0);
    }
    Ok(alpha * pen)
}

/// Floor on segment durations so speeds stay finite while the optimizer
/// moves time coordinates around.
const MIN_DT: f64 = 1e-6;

/// Gradient of the spatial path length with respect to every waypoint
/// coordinate (zero for non-spatial coordinates and zero-length segments).
fn path_length_grad(wps: &DMatrix<f64>, spatial_dim: usize) -> DMatrix<f64> {
    let (t, dim) = (wps.nrows(), wps.ncols());
    let mut g = DMatrix::zeros(t, dim);
    for i in 0..t.saturating_sub(1) {
        let mut norm = 0.0;
        for d in 0..spatial_dim {
            let diff = wps[(i + 1, d)] - wps[(i, d)];
            norm += diff * diff;
        }
        let norm = norm.sqrt();
        if norm > 0.0 {
            for d in 0..spatial_dim {
                let e = (wps[(i + 1, d)] - wps[(i, d)]) / norm;
                g[(i + 1, d)] += e;
                g[(i, d)] -= e;
            }
        }
    }
    g
}

/// Combined penalty value and gradient over one robot's waypoint matrix.
pub(crate) fn penalty_value_and_grad(
    wps: &DMatrix<f64>,
    spatial_dim: usize,
    has_time: bool,
    cfg: &PenaltyConfig,
    want_grad: bool,
) -> Result<(f64, Option<DMatrix<f64>>)> {
    if !cfg.any_active() {
        return Ok((
            0.0,
            want_grad.then(|| DMatrix::zeros(wps.nrows(), wps.ncols())),
        ));
    }
    if (cfg.velocity_limit.is_some() || cfg.accel_limit.is_some()) && !has_time {
        return Err(invalid(
            "velocity/acceleration penalties require a time dimension",
        ));
    }
    let (t, dim) = (wps.nrows(), wps.ncols());
    let tcoord = dim - 1;
    let alpha = cfg.weight;
    let mut value = 0.0;
    let mut grad = DMatrix::zeros(t, dim);

    if let Some(c) = cfg.distance_budget {
        let rows: Vec<Vec<f64>> = (0..t)
            .map(|i| wps.row(i).iter().copied().collect())
            .collect();
        let len = spatial_path_length(&rows, spatial_dim);
        if len > c {
            value += alpha * (len - c);
            if want_grad {
                grad += path_length_grad(wps, spatial_dim) * alpha;
            }
        }
    }

    if let Some(v_max) = cfg.velocity_limit {
        for i in 0..t - 1 {
            let mut norm = 0.0;
            for d in 0..spatial_dim {
                let diff = wps[(i + 1, d)] - wps[(i, d)];
                norm += diff * diff;
            }
            let norm = norm.sqrt();
            let dt_raw = wps[(i + 1, tcoord)] - wps[(i, tcoord)];
            let dt = dt_raw.max(MIN_DT);
            let speed = norm / dt;
            if speed > v_max {
                value += alpha * (speed - v_max);
                if want_grad {
                    if norm > 0.0 {
                        for d in 0..spatial_dim {
                            let e = (wps[(i + 1, d)] - wps[(i, d)]) / norm;
                            grad[(i + 1, d)] += alpha * e / dt;
                            grad[(i, d)] -= alpha * e / dt;
                        }
                    }
                    if dt_raw > MIN_DT {
                        grad[(i + 1, tcoord)] -= alpha * norm / (dt * dt);
                        grad[(i, tcoord)] += alpha * norm / (dt * dt);
                    }
                }
            }
        }
    }

    if let Some(a_max) = cfg.accel_limit {
        accel_penalty(
            wps,
            spatial_dim,
            alpha,
            a_max,
            &mut value,
            want_grad.then_some(&mut grad),
        );
    }

    Ok((value, want_grad.then_some(grad)))
}

/// Second-difference acceleration penalty over consecutive segment
/// velocities.
fn accel_penalty(
    wps: &DMatrix<f64>,
    spatial_dim: usize,
    alpha: f64,
    a_max: f64,
    value: &mut f64,
    mut grad: Option<&mut DMatrix<f64>>,
) {
    let t = wps.nrows();
    let tcoord = wps.ncols() - 1;
    if t < 3 {
        return;
    }
    let dt = |i: usize| (wps[(i + 1, tcoord)] - wps[(i, tcoord)]).max(MIN_DT);
    let vel = |i: usize| -> Vec<f64> {
        (0..spatial_dim)
            .map(|d| (wps[(i + 1, d)] - wps[(i, d)]) / dt(i))
            .collect()
    };
    for i in 1..t - 1 {
        let (v_prev, v_next) = (vel(i - 1), vel(i));
        let u: Vec<f64> = v_next.iter().zip(&v_prev).map(|(a, b)| a - b).collect();
        let n = u.iter().map(|x| x * x).sum::<f64>().sqrt();
        let tau = 0.5 * (dt(i - 1) + dt(i));
        let accel = n / tau;
        if accel <= a_max {
            continue;
        }
        *value += alpha * (accel - a_max);
        let Some(g) = grad.as_deref_mut() else {
            continue;
        };
        if n == 0.0 {
            continue;
        }
        let e: Vec<f64> = u.iter().map(|x| x / n).collect();
        let (dt_prev, dt_next) = (dt(i - 1), dt(i));
        for d in 0..spatial_dim {
            let c = alpha * e[d] / tau;
            // du/ds terms
            g[(i + 1, d)] += c / dt_next;
            g[(i, d)] += c * (-1.0 / dt_next - 1.0 / dt_prev);
            g[(i - 1, d)] += c / dt_prev;
        }
        // du/dt terms (only when above the duration floor)
        let raw_prev = wps[(i, tcoord)] - wps[(i - 1, tcoord)];
        let raw_next = wps[(i + 1, tcoord)] - wps[(i, tcoord)];
        for d in 0..spatial_dim {
            let c = alpha * e[d] / tau;
            let ds_next = wps[(i + 1, d)] - wps[(i, d)];
            let ds_prev = wps[(i, d)] - wps[(i - 1, d)];
            if raw_next > MIN_DT {
                g[(i + 1, tcoord)] += c * (-ds_next / (dt_next * dt_next));
                g[(i, tcoord)] += c * (ds_next / (dt_next * dt_next));
            }
            if raw_prev > MIN_DT {
                g[(i, tcoord)] += c * (ds_prev / (dt_prev * dt_prev));
                g[(i - 1, tcoord)] += c * (-ds_prev / (dt_prev * dt_prev));
            }
        }
        // dtau/dt terms: tau = (t_{i+1} - t_{i-1}) / 2
        let dtau = -alpha * n / (tau * tau) * 0.5;
        g[(i + 1, tcoord)] += dtau;
        g[(i - 1, tcoord)] -= dtau;
    }
}

/// Problem description shared by the planners.
#[derive(Debug, Clone)]
pub struct PlanSpec<'a> {
    pub kernel: &'a RbfKernel,
    pub env: &'a Environment,
    pub noise_variance: f64,
    /// Waypoints per robot, `s`.
    pub waypoints: usize,
    /// Robot count, `r` (ignored by `plan_single`).
    pub robots: usize,
    /// Unlabeled training samples; defaults to 1000 for point dimension
    /// <= 2, 2000 otherwise.
    pub train_samples: Option<usize>,
    pub fixed_start: Option<Vec<f64>>,
    pub fixed_end: Option<Vec<f64>>,
    pub past_data: Option<PastData>,
}

impl<'a> PlanSpec<'a> {
    pub fn new(
        kernel: &'a RbfKernel,
        env: &'a Environment,
        noise_variance: f64,
        waypoints: usize,
    ) -> Self {
        Self {
            kernel,
            env,
            noise_variance,
            waypoints,
            robots: 1,
            train_samples: None,
            fixed_start: None,
            fixed_end: None,
            past_data: None,
        }
    }

    fn train_count(&self) -> usize {
        self.train_samples.unwrap_or(if self.env.point_dim() <= 2 {
            1000
        } else {
            2000
        })
    }
}

pub struct PlanOutcome {
    pub paths: Vec<Path>,
    /// Per-iteration penalized objective.
    pub trace: Vec<f64>,
    /// Final (best-seen) objective value.
    pub objective: f64,
    pub warning: Option<String>,
}

fn check_budget_feasible(spec: &PlanSpec, penalties: &PenaltyConfig) -> Result<()> {
    if let (Some(c), Some(start), Some(end)) = (
        penalties.distance_budget,
        &spec.fixed_start,
        &spec.fixed_end,
    ) {
        let d = spec.env.spatial_dim();
        let needed = spatial_distance(start, end, d);
        if needed > c {
            return Err(Error::InfeasibleConstraint(format!(
                "budget {c} m is below the {needed:.3} m straight-line distance between the fixed endpoints"
            )));
        }
    }
    Ok(())
}

/// Training inputs for the SGP. For FoV sensing the field lives in the 2D
/// ground plane, otherwise in the environment's full point space.
fn build_model(
    spec: &PlanSpec,
    sensing: &SensingModel,
    seed: u64,
) -> Result<(SgpModel, Vec<Vec<f64>>)> {
    let n = spec.train_count();
    let train = sample_uniform(spec.env, n, seed)?;
    let field_dim = sensing.field_dim(spec.env.point_dim());
    let train_field: Vec<Vec<f64>> = if field_dim == spec.env.point_dim() {
        train.clone()
    } else {
        train.iter().map(|p| p[..field_dim].to_vec()).collect()
    };
    if spec.kernel.dim() != field_dim {
        return Err(invalid(format!(
            "kernel is {}-dimensional but the sensing model works in {field_dim} dimensions",
            spec.kernel.dim()
        )));
    }
    let model = SgpModel::new(spec.kernel.clone(), &train_field, spec.noise_variance)?;
    Ok((model, train))
}

/// Extends point-parameterized init positions with the extra FoV parameter
/// (random orientation, mid-range height).
fn lift_to_params(
    init: &[Vec<f64>],
    sensing: &SensingModel,
    env: &Environment,
    seed: u64,
) -> Vec<Vec<f64>> {
    use rand::Rng;
    use rand::SeedableRng;
    match sensing {
        SensingModel::Point | SensingModel::Arc { .. } => init.to_vec(),
        SensingModel::LineFov { .. } => {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            init.iter()
                .map(|p| vec![p[0], p[1], rng.random_range(0.0..std::f64::consts::TAU)])
                .collect()
        }
        SensingModel::SquareFovHeight { .. } => {
            let ext = env.max_extent();
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            init.iter()
                .map(|p| vec![p[0], p[1], rng.random_range(0.1 * ext..0.5 * ext)])
                .collect()
        }
    }
}

/// Single-robot planner: sample unlabeled points, initialize `s` inducing
/// points as a random subset, order them (TSP for spatial environments, by
/// time otherwise), then ascend the penalized objective.
pub fn plan_single(spec: &PlanSpec, cfg: &ObjectiveConfig) -> Result<PlanOutcome> {
    cfg.validate()?;
    let s = spec.waypoints;
    if s < 2 {
        return Err(invalid("plan_single requires s >= 2 waypoints"));
    }
    check_budget_feasible(spec, &cfg.penalties)?;
    let seed = cfg.seed;
    let (model, train) = build_model(spec, &cfg.sensing, seed)?;

    let interior =
        s - usize::from(spec.fixed_start.is_some()) - usize::from(spec.fixed_end.is_some());
    let subset = random_subset(&train, interior, derived_seed(seed, 1));

    let mut points: Vec<Vec<f64>> = Vec::with_capacity(s);
    if let Some(start) = &spec.fixed_start {
        points.push(start.clone());
    }
    points.extend(subset);
    if let Some(end) = &spec.fixed_end {
        points.push(end.clone());
    }
    for p in &points {
        if p.len() != spec.env.point_dim() {
            return Err(invalid(
                "waypoint dimensionality must match the environment",
            ));
        }
    }

    let spatio_temporal = spec.env.time_horizon().is_some();
    let ordered: Vec<Vec<f64>> = if spatio_temporal {
        let tcoord = spec.env.point_dim() - 1;
        let mut interior_pts: Vec<Vec<f64>> = points[usize::from(spec.fixed_start.is_some())
            ..points.len() - usize::from(spec.fixed_end.is_some())]
            .to_vec();
        interior_pts.sort_by(|a, b| a[tcoord].partial_cmp(&b[tcoord]).unwrap());
        let mut out = Vec::with_capacity(s);
        if let Some(start) = &spec.fixed_start {
            out.push(start.clone());
        }
        out.extend(interior_pts);
        if let Some(end) = &spec.fixed_end {
            out.push(end.clone());
        }
        out
    } else {
        let fixed_start = spec.fixed_start.as_ref().map(|_| 0);
        let fixed_end = spec.fixed_end.as_ref().map(|_| points.len() - 1);
        let tour = tsp_order(&points, fixed_start, fixed_end, derived_seed(seed, 2))?;
        tour.order.iter().map(|&i| points[i].clone()).collect()
    };

    let params = lift_to_params(&ordered, &cfg.sensing, spec.env, derived_seed(seed, 3));
    let mut paths = InducingPaths::single_robot(&params)?;
    if spec.fixed_start.is_some() {
        paths.freeze_waypoint(0, 0);
    }
    if spec.fixed_end.is_some() {
        paths.freeze_waypoint(0, s - 1);
    }
    if let Some(past) = &spec.past_data {
        paths = attach_past_data(&model, &paths, past)?;
    }

    let out = optimize(&model, &paths, cfg, spec.env)?;
    let result_paths = finalize_paths(&out.paths, &cfg.sensing, spec.env);
    let objective = best_objective(&out.trace);
    Ok(PlanOutcome {
        paths: result_paths,
        trace: out.trace,
        objective,
        warning: out.warning,
    })
}

fn best_objective(trace: &[f64]) -> f64 {
    trace.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

/// Converts optimized inducing paths into returned `Path`s. FoV
/// parameterizations keep all parameters (x, y, theta/h); point and arc
/// waypoints are already environment points.
fn finalize_paths(paths: &InducingPaths, _sensing: &SensingModel, _env: &Environment) -> Vec<Path> {
    paths.to_paths()
}

/// Multi-robot planner: sample `r * s` initial points, partition with the
/// VRP heuristic, then jointly optimize all paths under per-path penalties.
/// Spatio-temporal environments use the space-time decomposition with one
/// shared temporal inducing point per timestep, followed by an exact
/// waypoint-transition assignment pass.
pub fn plan_multi(spec: &PlanSpec, cfg: &ObjectiveConfig) -> Result<PlanOutcome> {
    cfg.validate()?;
    let (r, s) = (spec.robots, spec.waypoints);
    if r == 0 {
        return Err(invalid("plan_multi requires r >= 1"));
    }
    if s < 2 {
        return Err(invalid("plan_multi requires s >= 2 waypoints"));
    }
    if !matches!(cfg.sensing, SensingModel::Point | SensingModel::Arc { .. }) {
        return Err(invalid("plan_multi supports point and arc sensing"));
    }
    check_budget_feasible(spec, &cfg.penalties)?;
    let seed = cfg.seed;

    if spec.env.time_horizon().is_some() {
        return plan_multi_spacetime(spec, cfg);
    }

    let (model, train) = build_model(spec, &cfg.sensing, seed)?;
    let subset = random_subset(&train, r * s, derived_seed(seed, 1));
    let tours = vrp_routes(&subset, r, derived_seed(seed, 2))?;

    let mut robot_paths: Vec<Vec<Vec<f64>>> = Vec::with_capacity(r);
    for tour in &tours {
        let pts: Vec<Vec<f64>> = tour.order.iter().map(|&i| subset[i].clone()).collect();
        let pts = if pts.len() == s {
            pts
        } else {
            // unbalanced split: resample along the initial polyline
            let path = Path::new(0, pts)?;
            crate::env::resample_path(&path, s)?.waypoints
        };
        robot_paths.push(pts);
    }
    let paths = InducingPaths::from_robot_paths(&robot_paths)?;

    let out = optimize(&model, &paths, cfg, spec.env)?;
    let objective = best_objective(&out.trace);
    Ok(PlanOutcome {
        paths: finalize_paths(&out.paths, &cfg.sensing, spec.env),
        trace: out.trace,
        objective,
        warning: out.warning,
    })
}

/// Decomposed spatio-temporal multi-robot planning: `r*t` spatial inducing
/// points plus `t` shared temporal inducing points, optimized jointly with
/// gradients flowing through the combination.
fn plan_multi_spacetime(spec: &PlanSpec, cfg: &ObjectiveConfig) -> Result<PlanOutcome> {
    let (r, t) = (spec.robots, spec.waypoints);
    let seed = cfg.seed;
    let d = spec.env.spatial_dim();
    let (t0, t1) = spec.env.time_horizon().unwrap();
    let (model, train) = build_model(spec, &cfg.sensing, seed)?;

    let subset = random_subset(&train, r * t, derived_seed(seed, 1));
    let spatial: Vec<Vec<f64>> = subset.iter().map(|p| p[..d].to_vec()).collect();
    let tours = vrp_routes(&spatial, r, derived_seed(seed, 2))?;

    // X_space: r blocks of t rows; X_time: t shared timestamps
    let mut x_space: Vec<Vec<f64>> = Vec::with_capacity(r * t);
    for tour in &tours {
        let pts: Vec<Vec<f64>> = tour.order.iter().map(|&i| spatial[i].clone()).collect();
        let pts = if pts.len() == t {
            pts
        } else {
            let path = Path::new(0, pts)?;
            crate::env::resample_path(&path, t)?.waypoints
        };
        x_space.extend(pts);
    }
    let x_time: Vec<f64> = (0..t)
        .map(|i| t0 + (t1 - t0) * i as f64 / (t - 1).max(1) as f64)
        .collect();

    // flat layout: [space (r*t*d)] ++ [time (t)]
    let mut flat: Vec<f64> = x_space.iter().flatten().copied().collect();
    flat.extend(&x_time);
    let freeze = vec![false; flat.len()];

    let mut spaces = param_spaces(spec.env, &SensingModel::Point, r * t)?;
    // the replicated per-waypoint spaces cover d+1 coords; strip to spatial
    // and append the t temporal domains
    let spatial_spaces: Vec<_> = spaces
        .chunks(d + 1)
        .flat_map(|chunk| chunk[..d].to_vec())
        .collect();
    spaces = spatial_spaces;
    let time_space = param_spaces(spec.env, &SensingModel::Point, 1)?[d];
    spaces.extend(std::iter::repeat_n(time_space, t));

    let combine = |flat: &[f64]| -> Vec<f64> {
        // r x t x (d+1), robot-major
        let mut combined = Vec::with_capacity(r * t * (d + 1));
        for j in 0..r {
            for i in 0..t {
                for dd in 0..d {
                    combined.push(flat[(j * t + i) * d + dd]);
                }
                combined.push(flat[r * t * d + i]);
            }
        }
        combined
    };

    let objective = PathsObjective {
        model: &model,
        sensing: &cfg.sensing,
        penalties: &cfg.penalties,
        robots: r,
        waypoints: t,
        param_dim: d + 1,
        spatial_dim: d,
        has_time: true,
        auxiliary: spec
            .past_data
            .as_ref()
            .map(|p| crate::kernel::rows_to_matrix(p.points())),
    };
    if let Some(past) = &spec.past_data {
        validate_past_against_model(&model, past)?;
    }

    let opts = AscentOptions {
        learning_rate: cfg.learning_rate,
        max_iters: cfg.max_iters,
        tolerance: cfg.tolerance,
    };
    let combine_ref = &combine;
    let (best, trace, warning) = adam_projected_ascent(
        |x| {
            let combined = combine_ref(x);
            let (f, g) = objective.eval(&combined, true)?;
            let g = g.unwrap();
            // pull combined gradients back onto the decomposed factors
            let mut gd = vec![0.0; x.len()];
            for j in 0..r {
                for i in 0..t {
                    for dd in 0..d {
                        gd[(j * t + i) * d + dd] = g[(j * t + i) * (d + 1) + dd];
                    }
                    gd[r * t * d + i] += g[(j * t + i) * (d + 1) + d];
                }
            }
            Ok((f, gd))
        },
        &flat,
        &freeze,
        &spaces,
        &opts,
        |w| {
            // shared temporal inducing points stay sorted
            let times = &mut w[r * t * d..];
            times.sort_by(|a, b| a.partial_cmp(b).unwrap());
        },
    );

    let combined = combine(&best);
    let mut robot_paths: Vec<Vec<Vec<f64>>> = Vec::with_capacity(r);
    for j in 0..r {
        robot_paths.push(
            (0..t)
                .map(|i| combined[(j * t + i) * (d + 1)..(j * t + i + 1) * (d + 1)].to_vec())
                .collect(),
        );
    }
    let paths: Vec<Path> = robot_paths
        .into_iter()
        .enumerate()
        .map(|(j, waypoints)| Path {
            robot_id: j,
            waypoints,
        })
        .collect();
    let paths = assign_waypoints(&paths, d)?;
    let objective_value = best_objective(&trace);
    Ok(PlanOutcome {
        paths,
        trace,
        objective: objective_value,
        warning,
    })
}

/// Combines decoupled spatial and temporal inducing points into the full
/// `r x t x (d+1)` waypoint array. `x_space` is robot-major (`r` blocks of
/// `t` rows); every robot shares `x_time[i]` at timestep `i`. Times are
/// sorted before combination.
pub fn space_time_combine(
    x_space: &[Vec<f64>],
    x_time: &[f64],
    robots: usize,
) -> Result<Vec<Vec<Vec<f64>>>> {
    if robots == 0 {
        return Err(invalid("space_time_combine requires r >= 1"));
    }
    let t = x_time.len();
    if t == 0 || x_space.len() != robots * t {
        return Err(invalid(format!(
            "expected {} spatial points for r = {robots}, t = {t}, got {}",
            robots * t,
            x_space.len()
        )));
    }
    let d = x_space[0].len();
    if x_space.iter().any(|p| p.len() != d) {
        return Err(invalid("all spatial points must share one dimensionality"));
    }
    let mut times = x_time.to_vec();
    times.sort_by(|a, b| a.partial_cmp(b).unwrap());

    Ok((0..robots)
        .map(|j| {
            (0..t)
                .map(|i| {
                    let mut w = x_space[j * t + i].clone();
                    w.push(times[i]);
                    w
                })
                .collect()
        })
        .collect())
}

/// Value and gradient of the penalized sensing objective at a fixed
/// iterate, without running the optimizer. The gradient is flattened in the
/// paths' robot-major layout with frozen coordinates zeroed.
pub fn objective_with_sensing(
    model: &SgpModel,
    paths: &InducingPaths,
    sensing: &SensingModel,
    penalties: &PenaltyConfig,
    env: &Environment,
) -> Result<(f64, Vec<f64>)> {
    let objective = PathsObjective::from_paths(model, sensing, penalties, paths, env);
    let (value, grad) = objective.eval(paths.flat(), true)?;
    let mut grad = grad.expect("gradient requested");
    for (g, &frozen) in grad.iter_mut().zip(paths.freeze_mask()) {
        if frozen {
            *g = 0.0;
        }
    }
    Ok((value, grad))
}

/// Objective value only (no gradient); the independent-evaluation side of
/// finite-difference checks.
pub fn objective_value_with_sensing(
    model: &SgpModel,
    paths: &InducingPaths,
    sensing: &SensingModel,
    penalties: &PenaltyConfig,
    env: &Environment,
) -> Result<f64> {
    let objective = PathsObjective::from_paths(model, sensing, penalties, paths, env);
    Ok(objective.eval(paths.flat(), false)?.0)
}

fn validate_past_against_model(model: &SgpModel, past: &PastData) -> Result<()> {
    let dim = model.kernel().dim();
    let tcoord = dim - 1;
    for p in model.train_points().iter().take(16) {
        if p[tcoord] < 0.0 {
            return Err(invalid(
                "past-data planning requires training samples on the positive timeline",
            ));
        }
    }
    if past.points().iter().any(|p| p.len() != dim) {
        return Err(invalid("past points must match the model dimensionality"));
    }
    Ok(())
}

/// Appends past-sample locations as fully frozen auxiliary inducing points.
/// They shape the objective but are never optimized, never enter path
/// length or penalties, and are not part of the returned paths.
pub fn attach_past_data(
    model: &SgpModel,
    paths: &InducingPaths,
    past: &PastData,
) -> Result<InducingPaths> {
    validate_past_against_model(model, past)?;
    if paths.dim() != model.kernel().dim() {
        return Err(invalid(
            "past data requires spatio-temporal inducing paths matching the model",
        ));
    }
    let mut out = paths.clone();
    out.push_auxiliary(past.points().to_vec());
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::Environment;
    use crate::sgp::elbo;

    #[test]
    fn distance_penalty_within_budget_is_zero() {
        let pts = vec![vec![0.0, 0.0], vec![8.0, 0.0]];
        assert_eq!(distance_penalty(&pts, 10.0, 10.0, 2), 0.0);
    }

    #[test]
    fn distance_penalty_linear_excess() {
        let pts = vec![vec![0.0, 0.0], vec![12.0, 0.0]];
        assert!((distance_penalty(&pts, 10.0, 10.0, 2) - 20.0).abs() < 1e-12);
    }

    #[test]
    fn distance_penalty_gradient_nonzero_iff_violating() {
        let cfg = PenaltyConfig {
            distance_budget: Some(2.0),
            weight: 5.0,
            ..PenaltyConfig::none()
        };
        // within budget: straight path length 1
        let short =
            crate::kernel::rows_to_matrix(&[vec![0.0, 0.0], vec![0.5, 0.0], vec![1.0, 0.0]]);
        let (v, g) = penalty_value_and_grad(&short, 2, false, &cfg, true).unwrap();
        assert_eq!(v, 0.0);
        assert_eq!(g.unwrap().abs().max(), 0.0);

        // violating: FD check on an interior waypoint
        let long = crate::kernel::rows_to_matrix(&[vec![0.0, 0.0], vec![1.5, 2.0], vec![3.0, 0.0]]);
        let (v, g) = penalty_value_and_grad(&long, 2, false, &cfg, true).unwrap();
        assert!(v > 0.0);
        let g = g.unwrap();
        let h = 1e-6;
        for d in 0..2 {
            let mut plus = long.clone();
            plus[(1, d)] += h;
            let mut minus = long.clone();
            minus[(1, d)] -= h;
            let (vp, _) = penalty_value_and_grad(&plus, 2, false, &cfg, false).unwrap();
            let (vm, _) = penalty_value_and_grad(&minus, 2, false, &cfg, false).unwrap();
            let fd = (vp - vm) / (2.0 * h);
            assert!(
                (g[(1, d)] - fd).abs() < 1e-5,
                "d={d}: {} vs {fd}",
                g[(1, d)]
            );
        }
    }

    #[test]
    fn velocity_penalty_zero_when_slow() {
        let pts = vec![vec![0.0, 0.0, 0.0], vec![1.0, 0.0, 2.0]];
        assert_eq!(velocity_penalty(&pts, 1.0, 3.0, 1).unwrap(), 0.0);
    }

    #[test]
    fn velocity_penalty_closed_form() {
        // one segment at speed 2 v_max over dt = 1
        let v_max = 1.5;
        let pts = vec![vec![0.0, 0.0, 0.0], vec![2.0 * v_max, 0.0, 1.0]];
        let pen = velocity_penalty(&pts, v_max, 7.0, 2).unwrap();
        assert!((pen - 7.0 * v_max).abs() < 1e-12);
    }

    #[test]
    fn velocity_penalty_decreases_with_longer_duration() {
        let make = |dt: f64| vec![vec![0.0, 0.0, 0.0], vec![5.0, 0.0, dt]];
        let p1 = velocity_penalty(&make(1.0), 1.0, 1.0, 2).unwrap();
        let p2 = velocity_penalty(&make(2.0), 1.0, 1.0, 2).unwrap();
        assert!(p2 < p1);
    }

    #[test]
    fn velocity_penalty_requires_time() {
        let pts = vec![vec![0.0, 0.0], vec![1.0, 0.0]];
        assert!(velocity_penalty(&pts, 1.0, 1.0, 2).is_err());
    }

    #[test]
    fn velocity_gradient_matches_finite_differences() {
        let cfg = PenaltyConfig {
            velocity_limit: Some(0.5),
            weight: 3.0,
            ..PenaltyConfig::none()
        };
        let wps = crate::kernel::rows_to_matrix(&[
            vec![0.0, 0.0, 0.0],
            vec![1.0, 0.4, 0.8],
            vec![1.5, 1.8, 2.0],
        ]);
        let (_, g) = penalty_value_and_grad(&wps, 2, true, &cfg, true).unwrap();
        let g = g.unwrap();
        let h = 1e-6;
        for i in 0..3 {
            for d in 0..3 {
                let mut plus = wps.clone();
                plus[(i, d)] += h;
                let mut minus = wps.clone();
                minus[(i, d)] -= h;
                let (vp, _) = penalty_value_and_grad(&plus, 2, true, &cfg, false).unwrap();
                let (vm, _) = penalty_value_and_grad(&minus, 2, true, &cfg, false).unwrap();
                let fd = (vp - vm) / (2.0 * h);
                assert!(
                    (g[(i, d)] - fd).abs() < 1e-4 * fd.abs().max(1.0),
                    "({i},{d}): {} vs {fd}",
                    g[(i, d)]
                );
            }
        }
    }

    #[test]
    fn accel_gradient_matches_finite_differences() {
        let cfg = PenaltyConfig {
            accel_limit: Some(0.2),
            weight: 2.0,
            ..PenaltyConfig::none()
        };
        let wps = crate::kernel::rows_to_matrix(&[
            vec![0.0, 0.0, 0.0],
            vec![0.5, 0.1, 1.0],
            vec![2.0, 1.5, 2.0],
            vec![2.1, 1.6, 3.0],
        ]);
        let (v, g) = penalty_value_and_grad(&wps, 2, true, &cfg, true).unwrap();
        assert!(v > 0.0, "instance should violate the accel limit");
        let g = g.unwrap();
        let h = 1e-6;
        for i in 0..4 {
            for d in 0..3 {
                let mut plus = wps.clone();
                plus[(i, d)] += h;
                let mut minus = wps.clone();
                minus[(i, d)] -= h;
                let (vp, _) = penalty_value_and_grad(&plus, 2, true, &cfg, false).unwrap();
                let (vm, _) = penalty_value_and_grad(&minus, 2, true, &cfg, false).unwrap();
                let fd = (vp - vm) / (2.0 * h);
                assert!(
                    (g[(i, d)] - fd).abs() < 1e-4 * fd.abs().max(1.0),
                    "({i},{d}): {} vs {fd}",
                    g[(i, d)]
                );
            }
        }
    }

    fn small_env() -> Environment {
        Environment::new(vec![0.0, 0.0], vec![1.0, 1.0]).unwrap()
    }

    #[test]
    fn plan_single_no_penalties_matches_placement() {
        let env = small_env();
        let kernel = RbfKernel::isotropic(1.0, 0.3, 2).unwrap();
        let mut spec = PlanSpec::new(&kernel, &env, 0.1, 6);
        spec.train_samples = Some(300);
        // identical optimizer settings as the placement routine's defaults,
        // so the two pipelines differ only in waypoint ordering
        let cfg = ObjectiveConfig {
            seed: 42,
            ..Default::default()
        };
        let out = plan_single(&spec, &cfg).unwrap();

        let placement =
            crate::sgp::continuous_sgp_placement(&kernel, &env, 6, 300, 0.1, 42).unwrap();
        let mut a: Vec<String> = out.paths[0]
            .waypoints
            .iter()
            .map(|w| format!("{:.12},{:.12}", w[0], w[1]))
            .collect();
        let mut b: Vec<String> = placement
            .iter()
            .map(|w| format!("{:.12},{:.12}", w[0], w[1]))
            .collect();
        a.sort();
        b.sort();
        assert_eq!(a, b, "waypoint sets differ");
    }

    #[test]
    fn plan_single_freezes_endpoints_exactly() {
        let env = small_env();
        let kernel = RbfKernel::isotropic(1.0, 0.3, 2).unwrap();
        let mut spec = PlanSpec::new(&kernel, &env, 0.1, 5);
        spec.train_samples = Some(200);
        spec.fixed_start = Some(vec![0.0, 0.0]);
        spec.fixed_end = Some(vec![1.0, 1.0]);
        let cfg = ObjectiveConfig {
            seed: 3,
            max_iters: 100,
            ..Default::default()
        };
        let out = plan_single(&spec, &cfg).unwrap();
        let wps = &out.paths[0].waypoints;
        assert_eq!(wps[0], vec![0.0, 0.0]);
        assert_eq!(wps[4], vec![1.0, 1.0]);
    }

    #[test]
    fn plan_single_rejects_infeasible_budget() {
        let env = Environment::new(vec![0.0, 0.0], vec![50.0, 50.0]).unwrap();
        let kernel = RbfKernel::isotropic(1.0, 7.0, 2).unwrap();
        let mut spec = PlanSpec::new(&kernel, &env, 0.1, 5);
        spec.fixed_start = Some(vec![0.0, 0.0]);
        spec.fixed_end = Some(vec![50.0, 50.0]);
        let cfg = ObjectiveConfig {
            penalties: PenaltyConfig {
                distance_budget: Some(10.0),
                ..PenaltyConfig::none()
            },
            ..Default::default()
        };
        assert!(matches!(
            plan_single(&spec, &cfg),
            Err(Error::InfeasibleConstraint(_))
        ));
    }

    #[test]
    fn plan_multi_single_robot_reduces_to_plan_single() {
        let env = small_env();
        let kernel = RbfKernel::isotropic(1.0, 0.3, 2).unwrap();
        let mut spec = PlanSpec::new(&kernel, &env, 0.1, 5);
        spec.train_samples = Some(200);
        spec.robots = 1;
        let cfg = ObjectiveConfig {
            seed: 7,
            max_iters: 150,
            ..Default::default()
        };
        let multi = plan_multi(&spec, &cfg).unwrap();
        assert_eq!(multi.paths.len(), 1);
        assert_eq!(multi.paths[0].waypoints.len(), 5);

        // r = 1 is bit-identical to the single-robot pipeline
        let single = plan_single(&spec, &cfg).unwrap();
        for (a, b) in multi.paths[0]
            .waypoints
            .iter()
            .zip(&single.paths[0].waypoints)
        {
            for (x, y) in a.iter().zip(b) {
                assert_eq!(x.to_bits(), y.to_bits(), "multi/single paths diverge");
            }
        }
    }

    #[test]
    fn zero_weight_disables_penalties_exactly() {
        let env = small_env();
        let kernel = RbfKernel::isotropic(1.0, 0.3, 2).unwrap();
        let train = sample_uniform(&env, 80, 9).unwrap();
        let model = SgpModel::new(kernel, &train, 0.1).unwrap();
        // budget tight enough to be violated
        let wps = vec![vec![0.05, 0.05], vec![0.95, 0.95], vec![0.05, 0.95]];
        let paths = InducingPaths::single_robot(&wps).unwrap();
        let sensing = SensingModel::Point;
        let active = PenaltyConfig {
            distance_budget: Some(0.5),
            weight: 100.0,
            ..PenaltyConfig::none()
        };
        let disabled = PenaltyConfig {
            weight: 0.0,
            ..active.clone()
        };
        let f_plain = elbo(&model, &wps).unwrap();
        let f_active =
            crate::plan::objective_value_with_sensing(&model, &paths, &sensing, &active, &env)
                .unwrap();
        let f_disabled =
            crate::plan::objective_value_with_sensing(&model, &paths, &sensing, &disabled, &env)
                .unwrap();
        assert!(f_active < f_plain, "penalty should bind");
        assert_eq!(f_disabled.to_bits(), f_plain.to_bits());
    }

    #[test]
    fn plan_multi_each_path_has_s_waypoints() {
        let env = small_env();
        let kernel = RbfKernel::isotropic(1.0, 0.3, 2).unwrap();
        let mut spec = PlanSpec::new(&kernel, &env, 0.1, 4);
        spec.train_samples = Some(200);
        spec.robots = 3;
        let cfg = ObjectiveConfig {
            seed: 11,
            max_iters: 100,
            ..Default::default()
        };
        let out = plan_multi(&spec, &cfg).unwrap();
        assert_eq!(out.paths.len(), 3);
        for p in &out.paths {
            assert_eq!(p.waypoints.len(), 4);
            for w in &p.waypoints {
                assert!(env.contains(w));
            }
        }
    }

    #[test]
    fn plan_multi_spacetime_times_nondecreasing_and_synchronized() {
        let env = Environment::new(vec![0.0, 0.0], vec![1.0, 1.0])
            .unwrap()
            .with_time_horizon(0.0, 30.0)
            .unwrap();
        let kernel = RbfKernel::new(1.0, vec![0.3, 0.3, 10.0]).unwrap();
        let mut spec = PlanSpec::new(&kernel, &env, 0.1, 4);
        spec.train_samples = Some(200);
        spec.robots = 2;
        let cfg = ObjectiveConfig {
            seed: 5,
            max_iters: 120,
            ..Default::default()
        };
        let out = plan_multi(&spec, &cfg).unwrap();
        assert_eq!(out.paths.len(), 2);
        for p in &out.paths {
            for w in p.waypoints.windows(2) {
                assert!(w[0][2] <= w[1][2] + 1e-12, "time decreased");
            }
        }
        // shared temporal inducing points: synchronized timestamps
        for i in 0..4 {
            assert!(
                (out.paths[0].waypoints[i][2] - out.paths[1].waypoints[i][2]).abs() < 1e-9,
                "timestep {i} not synchronized"
            );
        }
    }

    #[test]
    fn space_time_combine_shapes_and_sorting() {
        let x_space: Vec<Vec<f64>> = (0..6).map(|i| vec![i as f64, 0.0]).collect();
        let x_time = vec![3.0, 1.0, 2.0];
        let combined = space_time_combine(&x_space, &x_time, 2).unwrap();
        assert_eq!(combined.len(), 2);
        assert_eq!(combined[0].len(), 3);
        assert_eq!(combined[0][0].len(), 3);
        for j in 0..2 {
            let times: Vec<f64> = combined[j].iter().map(|w| w[2]).collect();
            assert_eq!(times, vec![1.0, 2.0, 3.0]);
        }
        // shared across robots
        for i in 0..3 {
            assert_eq!(combined[0][i][2], combined[1][i][2]);
        }
    }

    #[test]
    fn space_time_combine_rejects_size_mismatch() {
        let x_space: Vec<Vec<f64>> = (0..5).map(|i| vec![i as f64]).collect();
        assert!(space_time_combine(&x_space, &[0.0, 1.0, 2.0], 2).is_err());
    }

    #[test]
    fn past_data_validation() {
        let env = Environment::new(vec![0.0, 0.0], vec![1.0, 1.0])
            .unwrap()
            .with_time_horizon(0.0, 10.0)
            .unwrap();
        assert!(PastData::new(vec![vec![0.5, 0.5, -3.0]], &env).is_ok());
        assert!(PastData::new(vec![vec![0.5, 0.5, 2.0]], &env).is_err());
        assert!(PastData::new(vec![vec![5.0, 0.5, -1.0]], &env).is_err());
    }

    #[test]
    fn attach_past_data_freezes_auxiliaries() {
        let env = Environment::new(vec![0.0, 0.0], vec![1.0, 1.0])
            .unwrap()
            .with_time_horizon(0.0, 10.0)
            .unwrap();
        let kernel = RbfKernel::new(1.0, vec![0.3, 0.3, 5.0]).unwrap();
        let train = sample_uniform(&env, 100, 1).unwrap();
        let model = SgpModel::new(kernel, &train, 0.1).unwrap();
        let past = PastData::new(vec![vec![0.2, 0.2, -1.0], vec![0.8, 0.8, -2.0]], &env).unwrap();
        let base = InducingPaths::single_robot(&[
            vec![0.1, 0.1, 1.0],
            vec![0.5, 0.5, 5.0],
            vec![0.9, 0.9, 9.0],
        ])
        .unwrap();
        let augmented = attach_past_data(&model, &base, &past).unwrap();
        assert_eq!(augmented.auxiliary().len(), 2);
        for p in augmented.auxiliary() {
            assert!(p[2] <= 0.0);
        }

        // optimization leaves the auxiliaries bit-identical and excludes
        // them from the returned path
        let cfg = ObjectiveConfig {
            max_iters: 50,
            ..Default::default()
        };
        let out = optimize(&model, &augmented, &cfg, &env).unwrap();
        assert_eq!(out.paths.auxiliary(), augmented.auxiliary());
        assert_eq!(out.paths.to_paths()[0].waypoints.len(), 3);
    }

    #[test]
    fn zero_weight_recovers_unpenalized_objective() {
        // alpha -> 0 limit: penalized objective equals the ELBO on the
        // feasible set and everywhere when constraints are inactive
        let env = small_env();
        let kernel = RbfKernel::isotropic(1.0, 0.3, 2).unwrap();
        let train = sample_uniform(&env, 100, 2).unwrap();
        let model = SgpModel::new(kernel, &train, 0.1).unwrap();
        let wps = vec![vec![0.2, 0.2], vec![0.4, 0.8], vec![0.9, 0.3]];
        let f_plain = elbo(&model, &wps).unwrap();

        let penalties = PenaltyConfig {
            distance_budget: Some(100.0),
            ..PenaltyConfig::none()
        };
        let sensing = SensingModel::Point;
        let obj = PathsObjective {
            model: &model,
            sensing: &sensing,
            penalties: &penalties,
            robots: 1,
            waypoints: 3,
            param_dim: 2,
            spatial_dim: 2,
            has_time: false,
            auxiliary: None,
        };
        let flat: Vec<f64> = wps.iter().flatten().copied().collect();
        let (f_pen, _) = obj.eval(&flat, false).unwrap();
        assert!((f_plain - f_pen).abs() < 1e-12);
    }
}
