//! Zero-label variational sparse GP: Nyström approximation, ELBO objective,
//! analytic gradients with respect to inducing points, and the projected
//! gradient-ascent optimizer.
//!
//! The objective maximized is the standard variational free energy bound
//! with zero training labels and zero mean,
//!
//! ```text
//! F = -(n/2) log 2pi - (1/2) log|Q_nn + s2*I| - (1/(2 s2)) Tr(K_nn - Q_nn)
//! ```
//!
//! with `Q_nn = K_nm K_mm^-1 K_mn` and `s2` the noise variance. The label
//! term vanishes because labels are identically zero. All linear algebra
//! works through the m x m factorization: with `U = K_nm`, `V = K_mm + jI`
//! and `W = s2*V + U^T U`,
//!
//! ```text
//! log|Q_nn + s2*I| = log|W| - log|V| + (n - m) log s2
//! Tr(Q_nn)         = ||L_V^-1 U^T||_F^2
//! dF/dU            = U (V^-1 / s2 - W^-1)
//! dF/dV            = (1/2) W^-1 M V^-1 - (1/(2 s2)) V^-1 M V^-1,  M = U^T U
//! ```
//!
//! The n x n matrix is never materialized except on explicit request for
//! test oracles.

use nalgebra::linalg::Cholesky;
use nalgebra::{DMatrix, Dyn};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::env::{project_to_bounds, sample_uniform, Environment, Path};
use crate::error::{invalid, Error, Result};
use crate::kernel::{matrix_to_rows, rows_to_matrix, RbfKernel};
use crate::plan::PenaltyConfig;
use crate::transform::{AggregationMatrix, SensingModel};

/// Multiplicative jitter escalation ladder, relative to the kernel's base
/// jitter of `1e-6 * variance`. The last rung corresponds to `1e-2 *
/// variance`; failing there is a numerical failure.
const JITTER_LADDER: [f64; 5] = [1.0, 10.0, 100.0, 1e3, 1e4];

/// Sparse GP over a fixed set of unlabeled training inputs.
///
/// Labels are pinned to the zero vector and the mean to zero; neither is
/// configurable.
#[derive(Debug, Clone)]
pub struct SgpModel {
    kernel: RbfKernel,
    train: DMatrix<f64>,
    noise_variance: f64,
    trace_knn: f64,
}

impl SgpModel {
    pub fn new(kernel: RbfKernel, train_points: &[Vec<f64>], noise_variance: f64) -> Result<Self> {
        if train_points.is_empty() {
            return Err(invalid("SgpModel requires at least one training point"));
        }
        if noise_variance <= 0.0 || !noise_variance.is_finite() {
            return Err(invalid(format!(
                "noise variance must be > 0, got {noise_variance}"
            )));
        }
        if train_points.iter().any(|p| p.len() != kernel.dim()) {
            return Err(invalid(format!(
                "training points must be {}-dimensional",
                kernel.dim()
            )));
        }
        let trace_knn = kernel.diag(train_points.len()).iter().sum();
        Ok(Self {
            kernel,
            train: rows_to_matrix(train_points),
            noise_variance,
            trace_knn,
        })
    }

    pub fn n(&self) -> usize {
        self.train.nrows()
    }

    pub fn kernel(&self) -> &RbfKernel {
        &self.kernel
    }

    pub fn noise_variance(&self) -> f64 {
        self.noise_variance
    }

    pub fn train_points(&self) -> Vec<Vec<f64>> {
        matrix_to_rows(&self.train)
    }

    pub(crate) fn train_matrix(&self) -> &DMatrix<f64> {
        &self.train
    }
}

/// Cached factorization state shared by the ELBO value and gradient paths.
pub(crate) struct ElboFactors {
    /// K between training inputs and expanded inducing inputs, n x M.
    pub u_raw: DMatrix<f64>,
    /// K between expanded inducing inputs, M x M.
    pub kee: DMatrix<f64>,
    /// Aggregated cross-covariance, n x g.
    pub u: DMatrix<f64>,
    /// Aggregated inducing covariance plus jitter, g x g.
    pub v: DMatrix<f64>,
    pub chol_v: Cholesky<f64, Dyn>,
    pub chol_w: Cholesky<f64, Dyn>,
    /// U^T U, cached for the gradient.
    pub utu: DMatrix<f64>,
    pub jitter: f64,
    /// The ELBO value F.
    pub value: f64,
    /// Tr(K_nn - Q_nn).
    pub residual_trace: f64,
    /// Tr(Q_nn).
    pub trace_qnn: f64,
}

/// Builds the ELBO factors for expanded inducing points under a column
/// aggregation. For plain inducing points pass the identity aggregation.
pub(crate) fn elbo_factors(
    model: &SgpModel,
    expanded: &DMatrix<f64>,
    agg: &AggregationMatrix,
) -> Result<ElboFactors> {
    if expanded.nrows() == 0 {
        return Err(invalid("need at least one inducing point"));
    }
    if expanded.ncols() != model.kernel.dim() {
        return Err(invalid(format!(
            "inducing points are {}-dimensional, kernel expects {}",
            expanded.ncols(),
            model.kernel.dim()
        )));
    }
    if agg.rows() != expanded.nrows() {
        return Err(invalid(format!(
            "aggregation has {} rows, expanded set has {}",
            agg.rows(),
            expanded.nrows()
        )));
    }

    let n = model.n();
    let s2 = model.noise_variance;
    let u_raw = model.kernel.cov_rows(&model.train, expanded);
    let kee = model.kernel.cov_rows(expanded, expanded);
    let u = agg.aggregate_cols(&u_raw);
    let v_raw = agg.aggregate_square(&kee);
    let g = v_raw.nrows();

    let utu = u.transpose() * &u;

    let base = model.kernel.jitter();
    for &scale in JITTER_LADDER.iter() {
        let jitter = base * scale;
        let mut v = v_raw.clone();
        for i in 0..g {
            v[(i, i)] += jitter;
        }
        let Some(chol_v) = Cholesky::new(v.clone()) else {
            continue;
        };
        let mut w = &v * s2;
        w += &utu;
        let Some(chol_w) = Cholesky::new(w) else {
            continue;
        };

        // A = L_V^-1 U^T, g x n
        let a = match chol_v.l().solve_lower_triangular(&u.transpose()) {
            Some(a) => a,
            None => continue,
        };
        let trace_qnn = a.norm_squared();
        let residual_trace = model.trace_knn - trace_qnn;

        let logdet_v = 2.0 * chol_v.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
        let logdet_w = 2.0 * chol_w.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
        let logdet_qs = logdet_w - logdet_v + (n as f64 - g as f64) * s2.ln();

        let value = -0.5 * (n as f64) * (2.0 * std::f64::consts::PI).ln()
            - 0.5 * logdet_qs
            - residual_trace / (2.0 * s2);

        if !value.is_finite() {
            continue;
        }

        return Ok(ElboFactors {
            u_raw,
            kee,
            u,
            v,
            chol_v,
            chol_w,
            utu,
            jitter,
            value,
            residual_trace,
            trace_qnn,
        });
    }
    Err(Error::NumericalFailure(format!(
        "Cholesky failed for every jitter up to {:.1e}",
        base * JITTER_LADDER.last().unwrap()
    )))
}

/// Gradient of the ELBO with respect to the expanded inducing coordinates,
/// M x D. `agg` must be the aggregation used to build `factors`.
pub(crate) fn elbo_grad_expanded(
    model: &SgpModel,
    factors: &ElboFactors,
    expanded: &DMatrix<f64>,
    agg: &AggregationMatrix,
) -> DMatrix<f64> {
    let s2 = model.noise_variance;

    // With M = U^T U and W = s2*V + M,
    //   V^-1/s2 - W^-1 = V^-1 M W^-1 / s2
    // which avoids subtracting two near-equal ill-conditioned inverses.
    // Everything goes through Cholesky solves, never explicit inverses.
    let a1 = factors.chol_v.solve(&factors.utu); // V^-1 M
    let w_m_vi = factors.chol_w.solve(&a1.transpose()); // W^-1 M V^-1
    let mix = w_m_vi.transpose() / s2; // V^-1 M W^-1 / s2

    // dF/dU = U (V^-1/s2 - W^-1)
    let g_u = &factors.u * &mix;

    // dF/dV = 1/2 (W^-1 - V^-1/s2) M V^-1 = -(1/(2 s2)) V^-1 M W^-1 M V^-1
    let g_v = &mix * a1.transpose() * (-0.5);
    let g_v = (&g_v + g_v.transpose()) * 0.5;

    let group_of = agg.group_of();
    let weights = agg.weights();
    let (n, m_e) = (factors.u_raw.nrows(), factors.u_raw.ncols());
    let d = expanded.ncols();
    let ls = model.kernel.lengthscales();

    // H[i,a] = dF/dK_nE[i,a] * K_nE[i,a]
    let mut h = DMatrix::<f64>::zeros(n, m_e);
    for a in 0..m_e {
        let (ga, wa) = (group_of[a], weights[a]);
        for i in 0..n {
            h[(i, a)] = g_u[(i, ga)] * wa * factors.u_raw[(i, a)];
        }
    }

    // M2[a,b] = 2 * dF/dK_EE[a,b] * K_EE[a,b]
    let mut m2 = DMatrix::<f64>::zeros(m_e, m_e);
    for a in 0..m_e {
        for b in 0..m_e {
            let gv = g_v[(group_of[a], group_of[b])];
            m2[(a, b)] = 2.0 * weights[a] * weights[b] * gv * factors.kee[(a, b)];
        }
    }

    // grad_E[a,d] = 1/l_d^2 [ sum_i H[i,a](X[i,d]-E[a,d])
    //                        + sum_b M2[a,b](E[b,d]-E[a,d]) ]
    let ht_x = h.transpose() * model.train_matrix(); // M x D
    let m2_e = &m2 * expanded; // M x D
    let mut col_h = vec![0.0; m_e];
    let mut row_m2 = vec![0.0; m_e];
    for a in 0..m_e {
        for i in 0..n {
            col_h[a] += h[(i, a)];
        }
        for b in 0..m_e {
            row_m2[a] += m2[(a, b)];
        }
    }

    DMatrix::from_fn(m_e, d, |a, dd| {
        let inv_l2 = 1.0 / (ls[dd] * ls[dd]);
        let t1 = ht_x[(a, dd)] - expanded[(a, dd)] * col_h[a];
        let t2 = m2_e[(a, dd)] - expanded[(a, dd)] * row_m2[a];
        (t1 + t2) * inv_l2
    })
}

/// Nyström machinery for a fixed inducing set: cached factorizations plus
/// on-demand dense views for test oracles.
pub struct QnnFactors {
    factors: ElboFactors,
    n: usize,
}

impl QnnFactors {
    /// Materializes the dense n x n matrix `Q_nn = A^T A`. Intended for
    /// small-n oracles only.
    pub fn dense(&self) -> DMatrix<f64> {
        let a = self
            .factors
            .chol_v
            .l()
            .solve_lower_triangular(&self.factors.u.transpose())
            .expect("triangular solve cannot fail after successful Cholesky");
        a.transpose() * a
    }

    /// Diagonal of Q_nn without forming the full matrix.
    pub fn diag(&self) -> Vec<f64> {
        let a = self
            .factors
            .chol_v
            .l()
            .solve_lower_triangular(&self.factors.u.transpose())
            .expect("triangular solve cannot fail after successful Cholesky");
        (0..self.n).map(|i| a.column(i).norm_squared()).collect()
    }

    pub fn trace_qnn(&self) -> f64 {
        self.factors.trace_qnn
    }

    /// `Tr(K_nn - Q_nn)`, the uncovered-variance residual.
    pub fn residual_trace(&self) -> f64 {
        self.factors.residual_trace
    }

    pub fn groups(&self) -> usize {
        self.factors.v.nrows()
    }

    pub fn jitter(&self) -> f64 {
        self.factors.jitter
    }

    pub fn elbo(&self) -> f64 {
        self.factors.value
    }
}

pub(crate) fn qnn_from_factors(factors: ElboFactors, n: usize) -> QnnFactors {
    QnnFactors { factors, n }
}

/// Builds the Nyström factors `Q_nn = K_nm K_mm^-1 K_mn` for plain inducing
/// points.
pub fn compute_qnn(model: &SgpModel, inducing: &[Vec<f64>]) -> Result<QnnFactors> {
    let xm = rows_to_matrix(inducing);
    if inducing.is_empty() {
        return Err(invalid("need at least one inducing point"));
    }
    let agg = AggregationMatrix::identity(inducing.len());
    let factors = elbo_factors(model, &xm, &agg)?;
    Ok(QnnFactors {
        factors,
        n: model.n(),
    })
}

/// The ELBO `F` for plain inducing points.
pub fn elbo(model: &SgpModel, inducing: &[Vec<f64>]) -> Result<f64> {
    Ok(compute_qnn(model, inducing)?.elbo())
}

/// Analytic gradient of the ELBO with respect to each inducing coordinate.
/// Entries whose `freeze` flag is set are exactly zero.
pub fn elbo_grad(
    model: &SgpModel,
    inducing: &[Vec<f64>],
    freeze: Option<&[Vec<bool>]>,
) -> Result<Vec<Vec<f64>>> {
    if inducing.is_empty() {
        return Err(invalid("need at least one inducing point"));
    }
    if let Some(mask) = freeze {
        if mask.len() != inducing.len()
            || mask.iter().zip(inducing).any(|(m, p)| m.len() != p.len())
        {
            return Err(invalid("freeze mask shape must match inducing points"));
        }
    }
    let xm = rows_to_matrix(inducing);
    let agg = AggregationMatrix::identity(inducing.len());
    let factors = elbo_factors(model, &xm, &agg)?;
    let grad = elbo_grad_expanded(model, &factors, &xm, &agg);
    let mut out = matrix_to_rows(&grad);
    if let Some(mask) = freeze {
        for (row, mrow) in out.iter_mut().zip(mask) {
            for (g, &frozen) in row.iter_mut().zip(mrow) {
                if frozen {
                    *g = 0.0;
                }
            }
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Inducing paths and the optimizer
// ---------------------------------------------------------------------------

/// Ordered inducing points for `r` robots with `t` waypoints each, plus a
/// per-coordinate freeze mask and optional frozen auxiliary points.
///
/// Storage is row-major: robot-major blocks of `t` rows of `dim`
/// coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct InducingPaths {
    robots: usize,
    waypoints: usize,
    dim: usize,
    flat: Vec<f64>,
    freeze: Vec<bool>,
    auxiliary: Vec<Vec<f64>>,
}

impl InducingPaths {
    pub fn new(robots: usize, waypoints: usize, dim: usize, flat: Vec<f64>) -> Result<Self> {
        if robots == 0 || waypoints == 0 || dim == 0 {
            return Err(invalid("InducingPaths requires r, t, dim >= 1"));
        }
        if flat.len() != robots * waypoints * dim {
            return Err(invalid(format!(
                "expected {} coordinates, got {}",
                robots * waypoints * dim,
                flat.len()
            )));
        }
        let len = flat.len();
        Ok(Self {
            robots,
            waypoints,
            dim,
            flat,
            freeze: vec![false; len],
            auxiliary: Vec::new(),
        })
    }

    pub fn from_robot_paths(paths: &[Vec<Vec<f64>>]) -> Result<Self> {
        if paths.is_empty() || paths[0].is_empty() || paths[0][0].is_empty() {
            return Err(invalid("InducingPaths requires non-empty paths"));
        }
        let (t, dim) = (paths[0].len(), paths[0][0].len());
        if paths
            .iter()
            .any(|p| p.len() != t || p.iter().any(|w| w.len() != dim))
        {
            return Err(invalid("all robot paths must share t and dim"));
        }
        let flat = paths
            .iter()
            .flat_map(|p| p.iter().flat_map(|w| w.iter().copied()))
            .collect();
        Self::new(paths.len(), t, dim, flat)
    }

    pub fn single_robot(waypoints: &[Vec<f64>]) -> Result<Self> {
        Self::from_robot_paths(&[waypoints.to_vec()])
    }

    pub fn robots(&self) -> usize {
        self.robots
    }

    pub fn waypoints_per_robot(&self) -> usize {
        self.waypoints
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn flat(&self) -> &[f64] {
        &self.flat
    }

    pub fn freeze_mask(&self) -> &[bool] {
        &self.freeze
    }

    fn offset(&self, robot: usize, idx: usize) -> usize {
        (robot * self.waypoints + idx) * self.dim
    }

    pub fn waypoint(&self, robot: usize, idx: usize) -> &[f64] {
        let o = self.offset(robot, idx);
        &self.flat[o..o + self.dim]
    }

    pub fn set_waypoint(&mut self, robot: usize, idx: usize, value: &[f64]) {
        let o = self.offset(robot, idx);
        self.flat[o..o + self.dim].copy_from_slice(value);
    }

    /// Freezes every coordinate of one waypoint.
    pub fn freeze_waypoint(&mut self, robot: usize, idx: usize) {
        let o = self.offset(robot, idx);
        self.freeze[o..o + self.dim].fill(true);
    }

    pub fn robot_waypoints(&self, robot: usize) -> Vec<Vec<f64>> {
        (0..self.waypoints)
            .map(|i| self.waypoint(robot, i).to_vec())
            .collect()
    }

    /// Frozen auxiliary inducing points: they contribute to the objective
    /// but are never optimized, never ordered, and never returned in paths.
    pub fn auxiliary(&self) -> &[Vec<f64>] {
        &self.auxiliary
    }

    pub fn push_auxiliary(&mut self, points: Vec<Vec<f64>>) {
        self.auxiliary.extend(points);
    }

    pub fn to_paths(&self) -> Vec<Path> {
        (0..self.robots)
            .map(|j| Path {
                robot_id: j,
                waypoints: self.robot_waypoints(j),
            })
            .collect()
    }

    pub(crate) fn with_flat(&self, flat: Vec<f64>) -> Self {
        debug_assert_eq!(flat.len(), self.flat.len());
        Self {
            flat,
            ..self.clone()
        }
    }
}

/// Configuration for the penalized objective and its optimizer.
#[derive(Debug, Clone)]
pub struct ObjectiveConfig {
    pub sensing: SensingModel,
    pub penalties: PenaltyConfig,
    /// Adam step size in normalized coordinates (coordinates pre-scaled by
    /// the environment extent).
    pub learning_rate: f64,
    pub max_iters: usize,
    /// Relative objective-change threshold over a 20-iteration window.
    pub tolerance: f64,
    pub seed: u64,
}

impl Default for ObjectiveConfig {
    fn default() -> Self {
        Self {
            sensing: SensingModel::Point,
            penalties: PenaltyConfig::default(),
            learning_rate: 1e-2,
            max_iters: 2000,
            tolerance: 1e-6,
            seed: 0,
        }
    }
}

impl ObjectiveConfig {
    pub fn validate(&self) -> Result<()> {
        if self.learning_rate <= 0.0 || !self.learning_rate.is_finite() {
            return Err(invalid("learning_rate must be > 0"));
        }
        if self.max_iters == 0 {
            return Err(invalid("max_iters must be >= 1"));
        }
        if self.tolerance <= 0.0 || !self.tolerance.is_finite() {
            return Err(invalid("tolerance must be > 0"));
        }
        self.sensing.validate()?;
        self.penalties.validate()
    }
}

pub struct OptimizeOutcome {
    pub paths: InducingPaths,
    /// Objective value at every iteration, starting with the initial one.
    pub trace: Vec<f64>,
    /// Set when a numerical failure interrupted the run; the returned paths
    /// are then the best-seen iterate.
    pub warning: Option<String>,
}

/// Per-coordinate parameter domain used by the projected optimizer.
#[derive(Debug, Clone, Copy)]
pub(crate) enum CoordSpace {
    /// Clamped to `[lo, hi]`.
    Bounded { lo: f64, hi: f64 },
    /// Wrapped modulo `period` (angles).
    Wrapped { period: f64 },
}

impl CoordSpace {
    fn scale(self) -> f64 {
        match self {
            CoordSpace::Bounded { lo, hi } => hi - lo,
            CoordSpace::Wrapped { period } => period,
        }
    }

    fn to_norm(self, x: f64) -> f64 {
        match self {
            CoordSpace::Bounded { lo, hi } => (x - lo) / (hi - lo),
            CoordSpace::Wrapped { period } => x / period,
        }
    }

    fn to_world(self, n: f64) -> f64 {
        match self {
            CoordSpace::Bounded { lo, hi } => lo + n * (hi - lo),
            CoordSpace::Wrapped { period } => n * period,
        }
    }

    fn project(self, n: f64) -> f64 {
        match self {
            CoordSpace::Bounded { .. } => n.clamp(0.0, 1.0),
            CoordSpace::Wrapped { .. } => n.rem_euclid(1.0),
        }
    }
}

pub(crate) struct AscentOptions {
    pub learning_rate: f64,
    pub max_iters: usize,
    pub tolerance: f64,
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;
const CONVERGENCE_WINDOW: usize = 20;

/// Adam ascent on a flat parameter vector with per-coordinate projection.
///
/// Frozen coordinates keep their input bits untouched. Returns the
/// best-seen iterate, the per-iteration objective trace, and a warning if
/// the objective failed mid-run.
pub(crate) fn adam_projected_ascent<F, P>(
    mut objective: F,
    x0: &[f64],
    freeze: &[bool],
    spaces: &[CoordSpace],
    opts: &AscentOptions,
    mut post_project: P,
) -> (Vec<f64>, Vec<f64>, Option<String>)
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
    P: FnMut(&mut [f64]),
{
    let dim = x0.len();
    debug_assert_eq!(freeze.len(), dim);
    debug_assert_eq!(spaces.len(), dim);

    let mut norm: Vec<f64> = x0
        .iter()
        .zip(spaces)
        .map(|(&x, sp)| sp.to_norm(x))
        .collect();
    let world = |norm: &[f64]| -> Vec<f64> {
        norm.iter()
            .enumerate()
            .map(|(c, &nv)| {
                if freeze[c] {
                    x0[c]
                } else {
                    spaces[c].to_world(nv)
                }
            })
            .collect()
    };

    let mut m = vec![0.0; dim];
    let mut v = vec![0.0; dim];
    let mut best_x = x0.to_vec();
    let mut best_f = f64::NEG_INFINITY;
    let mut trace = Vec::new();
    let mut warning = None;

    for iter in 0..opts.max_iters {
        let x = world(&norm);
        let (f, grad) = match objective(&x) {
            Ok(fg) => fg,
            Err(e) => {
                warning = Some(e.to_string());
                break;
            }
        };
        trace.push(f);
        if f > best_f {
            best_f = f;
            best_x = x;
        }

        if iter >= CONVERGENCE_WINDOW {
            let prev = trace[iter - CONVERGENCE_WINDOW];
            let rel = (f - prev).abs() / prev.abs().max(1e-12);
            if rel < opts.tolerance {
                break;
            }
        }

        let t = (iter + 1) as f64;
        let bc1 = 1.0 - ADAM_BETA1.powf(t);
        let bc2 = 1.0 - ADAM_BETA2.powf(t);
        for c in 0..dim {
            if freeze[c] {
                continue;
            }
            let g = grad[c] * spaces[c].scale();
            m[c] = ADAM_BETA1 * m[c] + (1.0 - ADAM_BETA1) * g;
            v[c] = ADAM_BETA2 * v[c] + (1.0 - ADAM_BETA2) * g * g;
            let step = opts.learning_rate * (m[c] / bc1) / ((v[c] / bc2).sqrt() + ADAM_EPS);
            norm[c] = spaces[c].project(norm[c] + step);
        }

        // structure-specific projection (isotonic time ordering)
        let mut w = world(&norm);
        post_project(&mut w);
        for c in 0..dim {
            if !freeze[c] {
                norm[c] = spaces[c].to_norm(w[c]);
            }
        }
    }

    if best_f == f64::NEG_INFINITY {
        // objective failed at the very first evaluation
        best_x = x0.to_vec();
    }
    (best_x, trace, warning)
}

/// Sorts the time coordinate (the trailing coordinate) of each robot's
/// waypoints into non-decreasing order. Frozen time entries stay in place;
/// unfrozen runs between them are sorted and clamped to the enclosing
/// frozen values.
pub(crate) fn isotonic_time_projection(
    flat: &mut [f64],
    freeze: &[bool],
    robots: usize,
    waypoints: usize,
    dim: usize,
) {
    let tcoord = dim - 1;
    for j in 0..robots {
        let idx = |i: usize| -> usize { (j * waypoints + i) * dim + tcoord };
        let mut run: Vec<usize> = Vec::new();
        let mut lo_bound = f64::NEG_INFINITY;
        fn flush(run: &mut Vec<usize>, lo: f64, hi: f64, flat: &mut [f64]) {
            if run.is_empty() {
                return;
            }
            let mut vals: Vec<f64> = run.iter().map(|&c| flat[c]).collect();
            vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let (lo, hi) = (lo.min(hi), hi.max(lo));
            for (c, v) in run.iter().zip(vals) {
                flat[*c] = v.clamp(lo, hi);
            }
            run.clear();
        }
        for i in 0..waypoints {
            let c = idx(i);
            if freeze[c] {
                let hi = flat[c];
                flush(&mut run, lo_bound, hi, flat);
                lo_bound = hi;
            } else {
                run.push(c);
            }
        }
        flush(&mut run, lo_bound, f64::INFINITY, flat);
    }
}

/// Builds the per-coordinate optimizer domains for one waypoint
/// parameterization under `sensing`, replicated over all waypoints.
pub(crate) fn param_spaces(
    env: &Environment,
    sensing: &SensingModel,
    total_waypoints: usize,
) -> Result<Vec<CoordSpace>> {
    let per: Vec<CoordSpace> = match sensing {
        SensingModel::Point | SensingModel::Arc { .. } => env
            .coord_bounds()
            .iter()
            .map(|&(lo, hi)| CoordSpace::Bounded { lo, hi })
            .collect(),
        SensingModel::LineFov { .. } => {
            if env.spatial_dim() != 2 || env.time_horizon().is_some() {
                return Err(invalid(
                    "line FoV sensing requires a 2D spatial environment",
                ));
            }
            vec![
                CoordSpace::Bounded {
                    lo: env.lower()[0],
                    hi: env.upper()[0],
                },
                CoordSpace::Bounded {
                    lo: env.lower()[1],
                    hi: env.upper()[1],
                },
                CoordSpace::Wrapped {
                    period: std::f64::consts::TAU,
                },
            ]
        }
        SensingModel::SquareFovHeight { .. } => {
            if env.spatial_dim() != 2 || env.time_horizon().is_some() {
                return Err(invalid(
                    "height-dependent FoV sensing requires a 2D spatial environment",
                ));
            }
            let ext = env.max_extent();
            vec![
                CoordSpace::Bounded {
                    lo: env.lower()[0],
                    hi: env.upper()[0],
                },
                CoordSpace::Bounded {
                    lo: env.lower()[1],
                    hi: env.upper()[1],
                },
                // sensor height stays strictly positive
                CoordSpace::Bounded {
                    lo: 1e-3 * ext,
                    hi: ext,
                },
            ]
        }
    };
    Ok(per
        .iter()
        .cycle()
        .take(per.len() * total_waypoints)
        .copied()
        .collect())
}

/// Penalized-objective evaluator over an `InducingPaths` layout.
pub(crate) struct PathsObjective<'a> {
    pub model: &'a SgpModel,
    pub sensing: &'a SensingModel,
    pub penalties: &'a PenaltyConfig,
    pub robots: usize,
    pub waypoints: usize,
    pub param_dim: usize,
    /// Number of leading coordinates that are spatial (penalty distance).
    pub spatial_dim: usize,
    pub has_time: bool,
    pub auxiliary: Option<DMatrix<f64>>,
}

impl<'a> PathsObjective<'a> {
    pub fn from_paths(
        model: &'a SgpModel,
        sensing: &'a SensingModel,
        penalties: &'a PenaltyConfig,
        paths: &InducingPaths,
        env: &Environment,
    ) -> Self {
        let aux = if paths.auxiliary().is_empty() {
            None
        } else {
            Some(rows_to_matrix(paths.auxiliary()))
        };
        let has_time = env.time_horizon().is_some()
            && matches!(sensing, SensingModel::Point | SensingModel::Arc { .. });
        Self {
            model,
            sensing,
            penalties,
            robots: paths.robots(),
            waypoints: paths.waypoints_per_robot(),
            param_dim: paths.dim(),
            spatial_dim: match sensing {
                SensingModel::Point | SensingModel::Arc { .. } => env.spatial_dim(),
                _ => 2,
            },
            has_time,
            auxiliary: aux,
        }
    }

    fn robot_matrix(&self, flat: &[f64], robot: usize) -> DMatrix<f64> {
        DMatrix::from_fn(self.waypoints, self.param_dim, |i, d| {
            flat[(robot * self.waypoints + i) * self.param_dim + d]
        })
    }

    /// Objective value and, when requested, the gradient over the flattened
    /// waypoint parameters.
    pub fn eval(&self, flat: &[f64], want_grad: bool) -> Result<(f64, Option<Vec<f64>>)> {
        // expansion per robot, concatenated, auxiliary appended as frozen
        // singleton groups
        let mut expansions = Vec::with_capacity(self.robots);
        let mut total_rows = 0;
        let mut group_sizes = Vec::new();
        for j in 0..self.robots {
            let wps = self.robot_matrix(flat, j);
            let exp = self.sensing.expand_waypoints(&wps)?;
            total_rows += exp.points.nrows();
            group_sizes.extend_from_slice(&exp.group_sizes);
            expansions.push((wps, exp));
        }
        let aux_rows = self.auxiliary.as_ref().map_or(0, |a| a.nrows());
        group_sizes.extend(std::iter::repeat_n(1, aux_rows));

        let field_dim = expansions[0].1.points.ncols();
        let mut expanded = DMatrix::<f64>::zeros(total_rows + aux_rows, field_dim);
        let mut row = 0;
        for (_, exp) in &expansions {
            expanded
                .rows_mut(row, exp.points.nrows())
                .copy_from(&exp.points);
            row += exp.points.nrows();
        }
        if let Some(aux) = &self.auxiliary {
            expanded.rows_mut(row, aux_rows).copy_from(aux);
        }

        let agg = AggregationMatrix::from_group_sizes(group_sizes);
        let factors = elbo_factors(self.model, &expanded, &agg)?;

        // penalties act on the waypoint parameterization, per robot
        let mut value = factors.value;
        let mut pen_grads: Vec<DMatrix<f64>> = Vec::new();
        for (wps, _) in &expansions {
            let (pv, pg) = crate::plan::penalty_value_and_grad(
                wps,
                self.spatial_dim,
                self.has_time,
                self.penalties,
                want_grad,
            )?;
            value -= pv;
            if let Some(g) = pg {
                pen_grads.push(g);
            }
        }

        if !want_grad {
            return Ok((value, None));
        }

        let grad_e = elbo_grad_expanded(self.model, &factors, &expanded, &agg);
        let mut grad = vec![0.0; self.robots * self.waypoints * self.param_dim];
        let mut row = 0;
        for (j, (wps, exp)) in expansions.iter().enumerate() {
            let ge = grad_e.rows(row, exp.points.nrows()).into_owned();
            row += exp.points.nrows();
            let mut gw = exp.backprop(&ge, wps);
            if let Some(pg) = pen_grads.get(j) {
                gw -= pg;
            }
            for i in 0..self.waypoints {
                for d in 0..self.param_dim {
                    grad[(j * self.waypoints + i) * self.param_dim + d] = gw[(i, d)];
                }
            }
        }
        // auxiliary rows contribute to the objective but receive no updates
        Ok((value, Some(grad)))
    }
}

/// Runs projected Adam ascent of the penalized ELBO over the inducing
/// paths. Returns the best-seen iterate together with the objective trace;
/// numerical failures mid-run surface as a warning rather than an error.
pub fn optimize(
    model: &SgpModel,
    init: &InducingPaths,
    cfg: &ObjectiveConfig,
    env: &Environment,
) -> Result<OptimizeOutcome> {
    cfg.validate()?;
    let expected_dim = cfg.sensing.param_dim(env.point_dim());
    if init.dim() != expected_dim {
        return Err(invalid(format!(
            "inducing paths have dim {}, sensing model expects {}",
            init.dim(),
            expected_dim
        )));
    }

    let objective = PathsObjective::from_paths(model, &cfg.sensing, &cfg.penalties, init, env);
    let spaces = param_spaces(
        env,
        &cfg.sensing,
        init.robots() * init.waypoints_per_robot(),
    )?;
    let opts = AscentOptions {
        learning_rate: cfg.learning_rate,
        max_iters: cfg.max_iters,
        tolerance: cfg.tolerance,
    };

    let (robots, waypoints, dim) = (init.robots(), init.waypoints_per_robot(), init.dim());
    let needs_isotonic = objective.has_time;
    let freeze = init.freeze_mask().to_vec();
    let freeze_for_project = freeze.clone();

    let (best, trace, warning) = adam_projected_ascent(
        |x| {
            let (f, g) = objective.eval(x, true)?;
            Ok((f, g.unwrap()))
        },
        init.flat(),
        &freeze,
        &spaces,
        &opts,
        |w| {
            if needs_isotonic {
                isotonic_time_projection(w, &freeze_for_project, robots, waypoints, dim);
            }
        },
    );

    Ok(OptimizeOutcome {
        paths: init.with_flat(best),
        trace,
        warning,
    })
}

/// Deterministic sub-stream derivation so pipeline stages never reuse the
/// caller's seed directly.
pub(crate) fn derived_seed(seed: u64, stream: u64) -> u64 {
    seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Samples `s` distinct elements of `points` without replacement.
pub fn random_subset(points: &[Vec<f64>], s: usize, seed: u64) -> Vec<Vec<f64>> {
    debug_assert!(s <= points.len());
    let mut idx: Vec<usize> = (0..points.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in 0..s {
        let j = rng.random_range(i..idx.len());
        idx.swap(i, j);
    }
    idx[..s].iter().map(|&i| points[i].clone()).collect()
}

/// Sensor placement by inducing-point optimization: draw `n` uniform
/// unlabeled samples, initialize `s` inducing points as a random subset,
/// and ascend the ELBO with no penalties. Returns the optimized placements,
/// all inside the environment.
pub fn continuous_sgp_placement(
    kernel: &RbfKernel,
    env: &Environment,
    s: usize,
    n: usize,
    noise_variance: f64,
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    if s == 0 || s > n {
        return Err(invalid(format!("need 1 <= s <= n, got s = {s}, n = {n}")));
    }
    let train = sample_uniform(env, n, seed)?;
    let init = random_subset(&train, s, derived_seed(seed, 1));
    let model = SgpModel::new(kernel.clone(), &train, noise_variance)?;
    let paths = InducingPaths::single_robot(&init)?;
    let cfg = ObjectiveConfig {
        seed,
        ..ObjectiveConfig::default()
    };
    let outcome = optimize(&model, &paths, &cfg, env)?;
    project_to_bounds(&outcome.paths.robot_waypoints(0), env)
}
