//! Expansion transformations that map waypoint parameterizations to FoV or
//! arc point sets, and the mean-aggregation transformation that shrinks the
//! inverted covariance block from `mp x mp` back to the group count.

use nalgebra::DMatrix;

use crate::error::{invalid, Result};
use crate::kernel::{matrix_to_rows, rows_to_matrix};
use crate::sgp::{elbo_factors, qnn_from_factors, QnnFactors, SgpModel};

/// Sensor descriptor driving expansion and aggregation.
///
/// - `Point`: waypoints are the sensing locations, no expansion.
/// - `Arc`: `p` points interpolated inclusively between every consecutive
///   waypoint pair; groups are the `m - 1` segments.
/// - `LineFov`: waypoints are `(x, y, theta)`; each maps to `p` points on a
///   line of length `length` from `(x, y)` along `theta`; groups are the
///   `m` sensors.
/// - `SquareFovHeight`: waypoints are `(x, y, h)`; each maps to an
///   inclusive `grid_side x grid_side` grid in the ground plane centered at
///   `(x, y)` with side `2 h tan(half_angle)`; groups are the `m` sensors.
#[derive(Debug, Clone, PartialEq)]
pub enum SensingModel {
    Point,
    Arc { points_per_segment: usize },
    LineFov { length: f64, points_per_line: usize },
    SquareFovHeight { half_angle: f64, grid_side: usize },
}

impl SensingModel {
    pub fn validate(&self) -> Result<()> {
        match *self {
            SensingModel::Point => Ok(()),
            SensingModel::Arc { points_per_segment } => {
                if points_per_segment < 2 {
                    Err(invalid("arc sensing requires p >= 2"))
                } else {
                    Ok(())
                }
            }
            SensingModel::LineFov {
                length,
                points_per_line,
            } => {
                if length <= 0.0 || !length.is_finite() {
                    Err(invalid("line FoV length must be > 0"))
                } else if points_per_line < 1 {
                    Err(invalid("line FoV requires p >= 1"))
                } else {
                    Ok(())
                }
            }
            SensingModel::SquareFovHeight {
                half_angle,
                grid_side,
            } => {
                if !(half_angle > 0.0 && half_angle < std::f64::consts::FRAC_PI_2) {
                    Err(invalid("half angle must lie in (0, pi/2)"))
                } else if grid_side < 2 {
                    Err(invalid("FoV grid side must be >= 2"))
                } else {
                    Ok(())
                }
            }
        }
    }

    /// Dimensionality of the waypoint parameterization given the
    /// environment's point dimensionality.
    pub fn param_dim(&self, env_point_dim: usize) -> usize {
        match self {
            SensingModel::Point | SensingModel::Arc { .. } => env_point_dim,
            SensingModel::LineFov { .. } | SensingModel::SquareFovHeight { .. } => 3,
        }
    }

    /// Dimensionality of the expanded points fed to the kernel.
    pub fn field_dim(&self, env_point_dim: usize) -> usize {
        match self {
            SensingModel::Point | SensingModel::Arc { .. } => env_point_dim,
            SensingModel::LineFov { .. } | SensingModel::SquareFovHeight { .. } => 2,
        }
    }

    /// Expands one robot's ordered waypoints (rows) into kernel-space
    /// points plus the backprop context.
    pub(crate) fn expand_waypoints(&self, wps: &DMatrix<f64>) -> Result<Expansion> {
        let m = wps.nrows();
        match *self {
            SensingModel::Point => Ok(Expansion {
                points: wps.clone(),
                group_sizes: vec![1; m],
                kind: ExpansionKind::Identity,
            }),
            SensingModel::Arc {
                points_per_segment: p,
            } => {
                if m < 2 {
                    return Err(invalid("arc expansion requires at least 2 waypoints"));
                }
                if p < 2 {
                    return Err(invalid("arc expansion requires p >= 2"));
                }
                let d = wps.ncols();
                let mut points = DMatrix::zeros((m - 1) * p, d);
                for seg in 0..m - 1 {
                    for k in 0..p {
                        let w = k as f64 / (p - 1) as f64;
                        for dd in 0..d {
                            points[(seg * p + k, dd)] =
                                (1.0 - w) * wps[(seg, dd)] + w * wps[(seg + 1, dd)];
                        }
                    }
                }
                Ok(Expansion {
                    points,
                    group_sizes: vec![p; m - 1],
                    kind: ExpansionKind::Interp { p },
                })
            }
            SensingModel::LineFov {
                length,
                points_per_line: p,
            } => {
                if wps.ncols() != 3 {
                    return Err(invalid("line FoV expansion expects (x, y, theta) inputs"));
                }
                if p < 1 {
                    return Err(invalid("line FoV expansion requires p >= 1"));
                }
                let mut points = DMatrix::zeros(m * p, 2);
                for i in 0..m {
                    let (x, y, theta) = (wps[(i, 0)], wps[(i, 1)], wps[(i, 2)]);
                    for k in 0..p {
                        let t = if p == 1 {
                            0.0
                        } else {
                            k as f64 / (p - 1) as f64
                        };
                        points[(i * p + k, 0)] = x + t * length * theta.cos();
                        points[(i * p + k, 1)] = y + t * length * theta.sin();
                    }
                }
                Ok(Expansion {
                    points,
                    group_sizes: vec![p; m],
                    kind: ExpansionKind::Line { length, p },
                })
            }
            SensingModel::SquareFovHeight {
                half_angle,
                grid_side: g,
            } => {
                if wps.ncols() != 3 {
                    return Err(invalid("square FoV expansion expects (x, y, h) inputs"));
                }
                if g < 2 {
                    return Err(invalid("square FoV expansion requires grid side >= 2"));
                }
                let tan_half = half_angle.tan();
                let mut points = DMatrix::zeros(m * g * g, 2);
                for i in 0..m {
                    let (x, y, h) = (wps[(i, 0)], wps[(i, 1)], wps[(i, 2)]);
                    if h <= 0.0 || !h.is_finite() {
                        return Err(invalid(format!("sensor height must be > 0, got {h}")));
                    }
                    for gu in 0..g {
                        for gv in 0..g {
                            let u = -1.0 + 2.0 * gu as f64 / (g - 1) as f64;
                            let v = -1.0 + 2.0 * gv as f64 / (g - 1) as f64;
                            let row = i * g * g + gu * g + gv;
                            points[(row, 0)] = x + u * h * tan_half;
                            points[(row, 1)] = y + v * h * tan_half;
                        }
                    }
                }
                Ok(Expansion {
                    points,
                    group_sizes: vec![g * g; m],
                    kind: ExpansionKind::Square { tan_half, g },
                })
            }
        }
    }
}

pub(crate) enum ExpansionKind {
    Identity,
    Interp { p: usize },
    Line { length: f64, p: usize },
    Square { tan_half: f64, g: usize },
}

/// Expanded points plus enough structure to push gradients back to the
/// original waypoint parameters.
pub(crate) struct Expansion {
    pub points: DMatrix<f64>,
    pub group_sizes: Vec<usize>,
    kind: ExpansionKind,
}

impl Expansion {
    /// Maps a gradient over expanded rows back to the waypoint parameters.
    /// `wps` must be the waypoint matrix the expansion was built from.
    pub(crate) fn backprop(&self, grad_e: &DMatrix<f64>, wps: &DMatrix<f64>) -> DMatrix<f64> {
        let m = wps.nrows();
        match self.kind {
            ExpansionKind::Identity => grad_e.clone(),
            ExpansionKind::Interp { p } => {
                let d = wps.ncols();
                let mut g = DMatrix::zeros(m, d);
                for seg in 0..m - 1 {
                    for k in 0..p {
                        let w = k as f64 / (p - 1) as f64;
                        for dd in 0..d {
                            let ge = grad_e[(seg * p + k, dd)];
                            g[(seg, dd)] += (1.0 - w) * ge;
                            g[(seg + 1, dd)] += w * ge;
                        }
                    }
                }
                g
            }
            ExpansionKind::Line { length, p } => {
                let mut g = DMatrix::zeros(m, 3);
                for i in 0..m {
                    let theta = wps[(i, 2)];
                    let (sin_t, cos_t) = theta.sin_cos();
                    for k in 0..p {
                        let t = if p == 1 {
                            0.0
                        } else {
                            k as f64 / (p - 1) as f64
                        };
                        let gx = grad_e[(i * p + k, 0)];
                        let gy = grad_e[(i * p + k, 1)];
                        g[(i, 0)] += gx;
                        g[(i, 1)] += gy;
                        g[(i, 2)] += gx * (-t * length * sin_t) + gy * (t * length * cos_t);
                    }
                }
                g
            }
            ExpansionKind::Square { tan_half, g: side } => {
                let mut g = DMatrix::zeros(m, 3);
                for i in 0..m {
                    for gu in 0..side {
                        for gv in 0..side {
                            let u = -1.0 + 2.0 * gu as f64 / (side - 1) as f64;
                            let v = -1.0 + 2.0 * gv as f64 / (side - 1) as f64;
                            let row = i * side * side + gu * side + gv;
                            let gx = grad_e[(row, 0)];
                            let gy = grad_e[(row, 1)];
                            g[(i, 0)] += gx;
                            g[(i, 1)] += gy;
                            g[(i, 2)] += gx * u * tan_half + gy * v * tan_half;
                        }
                    }
                }
                g
            }
        }
    }
}

/// Mean-aggregation transformation. Row `i` of the dense matrix has a
/// single nonzero entry `1 / size(group(i))` in the column of its group, so
/// `T^T K T` averages covariance blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregationMatrix {
    group_sizes: Vec<usize>,
}

impl AggregationMatrix {
    /// Uniform aggregation: `groups` groups of `p` consecutive rows each,
    /// entry `(i, j) = 1/p` when `floor(i / p) = j`.
    pub fn uniform(groups: usize, p: usize) -> Self {
        Self {
            group_sizes: vec![p; groups],
        }
    }

    /// One group per row; the dense form is the identity.
    pub fn identity(rows: usize) -> Self {
        Self::uniform(rows, 1)
    }

    pub(crate) fn from_group_sizes(group_sizes: Vec<usize>) -> Self {
        debug_assert!(group_sizes.iter().all(|&s| s > 0));
        Self { group_sizes }
    }

    pub fn groups(&self) -> usize {
        self.group_sizes.len()
    }

    pub fn rows(&self) -> usize {
        self.group_sizes.iter().sum()
    }

    pub fn group_sizes(&self) -> &[usize] {
        &self.group_sizes
    }

    /// Group index of every expanded row.
    pub(crate) fn group_of(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.rows());
        for (g, &s) in self.group_sizes.iter().enumerate() {
            out.extend(std::iter::repeat_n(g, s));
        }
        out
    }

    /// Per-row weight `1 / size(group(row))`.
    pub(crate) fn weights(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.rows());
        for &s in &self.group_sizes {
            out.extend(std::iter::repeat_n(1.0 / s as f64, s));
        }
        out
    }

    pub fn dense(&self) -> DMatrix<f64> {
        let mut t = DMatrix::zeros(self.rows(), self.groups());
        let mut row = 0;
        for (g, &s) in self.group_sizes.iter().enumerate() {
            for _ in 0..s {
                t[(row, g)] = 1.0 / s as f64;
                row += 1;
            }
        }
        t
    }

    /// `M T`: group-mean over column blocks, n x rows -> n x groups.
    pub(crate) fn aggregate_cols(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        debug_assert_eq!(m.ncols(), self.rows());
        let n = m.nrows();
        let mut out = DMatrix::zeros(n, self.groups());
        let mut col = 0;
        for (g, &s) in self.group_sizes.iter().enumerate() {
            let w = 1.0 / s as f64;
            for _ in 0..s {
                for i in 0..n {
                    out[(i, g)] += m[(i, col)] * w;
                }
                col += 1;
            }
        }
        out
    }

    /// `T^T M T`: block means of a square matrix, rows x rows -> groups x
    /// groups.
    pub(crate) fn aggregate_square(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        debug_assert_eq!(m.nrows(), self.rows());
        debug_assert_eq!(m.ncols(), self.rows());
        let group_of = self.group_of();
        let weights = self.weights();
        let mut out = DMatrix::zeros(self.groups(), self.groups());
        for a in 0..m.nrows() {
            for b in 0..m.ncols() {
                out[(group_of[a], group_of[b])] += m[(a, b)] * weights[a] * weights[b];
            }
        }
        out
    }
}

/// The uniform mean-aggregation operator: shape `(groups * p) x groups`.
pub fn aggregation_matrix(groups: usize, p: usize) -> AggregationMatrix {
    AggregationMatrix::uniform(groups, p)
}

/// Inclusive linear interpolation of `p` points between every consecutive
/// waypoint pair: `(m - 1) * p` output points, junction waypoints repeated
/// across adjacent segments.
pub fn expand_interpolate(waypoints: &[Vec<f64>], p: usize) -> Result<Vec<Vec<f64>>> {
    if waypoints.len() < 2 {
        return Err(invalid("expand_interpolate requires m >= 2"));
    }
    if p < 2 {
        return Err(invalid("expand_interpolate requires p >= 2"));
    }
    let model = SensingModel::Arc {
        points_per_segment: p,
    };
    let exp = model.expand_waypoints(&rows_to_matrix(waypoints))?;
    Ok(matrix_to_rows(&exp.points))
}

/// Expands `(x, y, theta)` parameterizations into `p` points along a line
/// segment of length `l` starting at `(x, y)` in direction `theta`.
pub fn expand_line_fov(waypoints: &[Vec<f64>], l: f64, p: usize) -> Result<Vec<Vec<f64>>> {
    if waypoints.iter().any(|w| w.len() != 3) {
        return Err(invalid("expand_line_fov expects (x, y, theta) inputs"));
    }
    let model = SensingModel::LineFov {
        length: l,
        points_per_line: p,
    };
    let exp = model.expand_waypoints(&rows_to_matrix(waypoints))?;
    Ok(matrix_to_rows(&exp.points))
}

/// Expands `(x, y, h)` parameterizations into a `g x g` ground-plane grid
/// centered at `(x, y)` with side `2 h tan(half_angle)`.
pub fn expand_square_fov_height(
    waypoints: &[Vec<f64>],
    half_angle: f64,
    g: usize,
) -> Result<Vec<Vec<f64>>> {
    if waypoints.iter().any(|w| w.len() != 3) {
        return Err(invalid("expand_square_fov_height expects (x, y, h) inputs"));
    }
    let model = SensingModel::SquareFovHeight {
        half_angle,
        grid_side: g,
    };
    model.validate()?;
    let exp = model.expand_waypoints(&rows_to_matrix(waypoints))?;
    Ok(matrix_to_rows(&exp.points))
}

/// Nyström machinery through the aggregation transformation:
/// `Q_nn = (K_nE T)(T^T K_EE T + jI)^-1 (T^T K_En)`. Only the group-sized
/// matrix is factorized.
pub fn qnn_aggregated(
    model: &SgpModel,
    expanded: &[Vec<f64>],
    t: &AggregationMatrix,
) -> Result<QnnFactors> {
    if t.rows() != expanded.len() {
        return Err(invalid(format!(
            "aggregation expects {} rows, got {} expanded points",
            t.rows(),
            expanded.len()
        )));
    }
    let e = rows_to_matrix(expanded);
    let factors = elbo_factors(model, &e, t)?;
    Ok(qnn_from_factors(factors, model.n()))
}
