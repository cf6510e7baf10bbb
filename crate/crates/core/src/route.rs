//! Heuristic combinatorial solvers: open-path TSP ordering, balanced
//! multi-robot VRP partitioning, and exact assignment-based waypoint
//! reindexing.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::env::{spatial_distance, Path};
use crate::error::{invalid, Result};

/// An open tour over point indices.
#[derive(Debug, Clone, PartialEq)]
pub struct Tour {
    /// Permutation of `0..n`, visitation order.
    pub order: Vec<usize>,
    /// Open tours have no return leg.
    pub open: bool,
    pub fixed_start: Option<usize>,
    pub fixed_end: Option<usize>,
}

impl Tour {
    pub fn length(&self, points: &[Vec<f64>]) -> f64 {
        let d = points.first().map_or(0, Vec::len);
        self.order
            .windows(2)
            .map(|w| spatial_distance(&points[w[0]], &points[w[1]], d))
            .sum()
    }
}

fn dist(points: &[Vec<f64>], i: usize, j: usize) -> f64 {
    spatial_distance(&points[i], &points[j], points[i].len())
}

/// Nearest-neighbor construction from `start`, optionally forcing `end`
/// last.
fn nearest_neighbor(
    points: &[Vec<f64>],
    start: usize,
    end: Option<usize>,
    pool: &[usize],
) -> Vec<usize> {
    let mut remaining: Vec<usize> = pool
        .iter()
        .copied()
        .filter(|&i| i != start && Some(i) != end)
        .collect();
    let mut order = vec![start];
    let mut current = start;
    while !remaining.is_empty() {
        let mut best = 0;
        let mut best_d = f64::MAX;
        for (k, &cand) in remaining.iter().enumerate() {
            let d = dist(points, current, cand);
            if d < best_d {
                best_d = d;
                best = k;
            }
        }
        current = remaining.swap_remove(best);
        order.push(current);
    }
    if let Some(e) = end {
        order.push(e);
    }
    order
}

/// First-improvement 2-opt for an open path. Endpoints marked fixed are
/// never moved; edges past the path ends cost nothing.
fn two_opt_open(points: &[Vec<f64>], order: &mut [usize], fix_first: bool, fix_last: bool) {
    let n = order.len();
    if n < 3 {
        return;
    }
    let lo = if fix_first { 1 } else { 0 };
    let hi = if fix_last { n - 1 } else { n };
    loop {
        let mut improved = false;
        // reverse order[i..=j]
        'outer: for i in lo..hi.saturating_sub(1) {
            for j in (i + 1)..hi {
                // edge before i and edge after j; virtual zero-cost edges
                // beyond the open ends
                let before = if i > 0 {
                    dist(points, order[i - 1], order[i])
                } else {
                    0.0
                };
                let after = if j + 1 < n {
                    dist(points, order[j], order[j + 1])
                } else {
                    0.0
                };
                let new_before = if i > 0 {
                    dist(points, order[i - 1], order[j])
                } else {
                    0.0
                };
                let new_after = if j + 1 < n {
                    dist(points, order[i], order[j + 1])
                } else {
                    0.0
                };
                if new_before + new_after + 1e-12 < before + after {
                    order[i..=j].reverse();
                    improved = true;
                    break 'outer;
                }
            }
        }
        if !improved {
            break;
        }
    }
}

fn open_path_length(points: &[Vec<f64>], order: &[usize]) -> f64 {
    order.windows(2).map(|w| dist(points, w[0], w[1])).sum()
}

/// Orders points into an open tour by nearest-neighbor construction plus
/// 2-opt until no improving swap remains.
///
/// Free endpoints are chosen by best-of-all-starts; fixed endpoints are
/// indices into `points` and always occupy the first/last slots. The
/// algorithm is fully deterministic; `seed` is accepted for interface
/// stability and currently unused.
pub fn tsp_order(
    points: &[Vec<f64>],
    fixed_start: Option<usize>,
    fixed_end: Option<usize>,
    seed: u64,
) -> Result<Tour> {
    let _ = seed;
    let n = points.len();
    if n < 2 {
        return Err(invalid("tsp_order requires at least 2 points"));
    }
    for idx in [fixed_start, fixed_end].into_iter().flatten() {
        if idx >= n {
            return Err(invalid(format!("fixed endpoint index {idx} out of range")));
        }
    }
    if fixed_start.is_some() && fixed_start == fixed_end {
        return Err(invalid("fixed start and end must differ"));
    }

    let pool: Vec<usize> = (0..n).collect();
    let mut best: Option<(f64, Vec<usize>)> = None;
    let starts: Vec<usize> = match fixed_start {
        Some(s) => vec![s],
        None => pool.clone(),
    };
    for &start in &starts {
        if Some(start) == fixed_end {
            continue;
        }
        let mut order = nearest_neighbor(points, start, fixed_end, &pool);
        two_opt_open(
            points,
            &mut order,
            fixed_start.is_some(),
            fixed_end.is_some(),
        );
        let len = open_path_length(points, &order);
        if best.as_ref().is_none_or(|(l, _)| len < *l) {
            best = Some((len, order));
        }
    }
    let (_, order) = best.expect("at least one start is always available");
    Ok(Tour {
        order,
        open: true,
        fixed_start,
        fixed_end,
    })
}

/// Seeded balanced k-means: Lloyd iterations with capacity
/// `ceil(n / r)` enforced by assigning points (in index order) to the
/// nearest center with free capacity.
fn balanced_kmeans(points: &[Vec<f64>], r: usize, seed: u64) -> Vec<Vec<usize>> {
    let n = points.len();
    let cap = n.div_ceil(r);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // distinct random initial centers
    let mut idx: Vec<usize> = (0..n).collect();
    for i in 0..r {
        let j = rng.random_range(i..n);
        idx.swap(i, j);
    }
    let mut centers: Vec<Vec<f64>> = idx[..r].iter().map(|&i| points[i].clone()).collect();

    let d = points[0].len();
    let mut assignment = vec![0usize; n];
    for _ in 0..100 {
        // capacity-constrained assignment, deterministic in index order
        let mut load = vec![0usize; r];
        let mut next = vec![0usize; n];
        for (i, p) in points.iter().enumerate() {
            let mut best = usize::MAX;
            let mut best_d = f64::MAX;
            for (c, center) in centers.iter().enumerate() {
                if load[c] >= cap {
                    continue;
                }
                let dd = spatial_distance(p, center, d);
                if dd < best_d {
                    best_d = dd;
                    best = c;
                }
            }
            next[i] = best;
            load[best] += 1;
        }
        let stable = next == assignment;
        assignment = next;

        // recompute centers
        let mut sums = vec![vec![0.0; d]; r];
        let mut counts = vec![0usize; r];
        for (i, p) in points.iter().enumerate() {
            let c = assignment[i];
            counts[c] += 1;
            for (s, &x) in sums[c].iter_mut().zip(p) {
                *s += x;
            }
        }
        for c in 0..r {
            if counts[c] > 0 {
                for s in &mut sums[c] {
                    *s /= counts[c] as f64;
                }
                centers[c] = sums[c].clone();
            }
        }
        if stable {
            break;
        }
    }

    let mut clusters = vec![Vec::new(); r];
    for (i, &c) in assignment.iter().enumerate() {
        clusters[c].push(i);
    }
    clusters
}

/// Partitions points into `r` routes: balanced k-means clustering followed
/// by a per-cluster open TSP. With `r = 1` this reduces exactly to
/// `tsp_order`.
pub fn vrp_routes(points: &[Vec<f64>], r: usize, seed: u64) -> Result<Vec<Tour>> {
    if r == 0 {
        return Err(invalid("vrp_routes requires r >= 1"));
    }
    if points.len() < r {
        return Err(invalid(format!(
            "cannot split {} points into {r} routes",
            points.len()
        )));
    }
    if r == 1 {
        return Ok(vec![tsp_order(points, None, None, seed)?]);
    }

    let clusters = balanced_kmeans(points, r, seed);
    let mut tours = Vec::with_capacity(r);
    for members in clusters {
        if members.len() < 2 {
            // single-point route, nothing to order
            tours.push(Tour {
                order: members,
                open: true,
                fixed_start: None,
                fixed_end: None,
            });
            continue;
        }
        let sub: Vec<Vec<f64>> = members.iter().map(|&i| points[i].clone()).collect();
        let local = tsp_order(&sub, None, None, seed)?;
        tours.push(Tour {
            order: local.order.into_iter().map(|k| members[k]).collect(),
            open: true,
            fixed_start: None,
            fixed_end: None,
        });
    }
    Ok(tours)
}

/// Exact Hungarian solver (Jonker-style shortest augmenting paths with
/// potentials, O(n^3)). Returns `assign[row] = col` minimizing total cost.
pub(crate) fn hungarian(cost: &[Vec<f64>]) -> Vec<usize> {
    let n = cost.len();
    // 1-indexed potentials over rows (u) and columns (v)
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; n + 1];
    let mut p = vec![0usize; n + 1]; // p[col] = row matched to col; 0 = free
    let mut way = vec![0usize; n + 1];

    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        // augment along the alternating path
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let mut assign = vec![0usize; n];
    for j in 1..=n {
        if p[j] > 0 {
            assign[p[j] - 1] = j - 1;
        }
    }
    assign
}

/// Reindexes synchronized multi-robot waypoints so that every timestep
/// transition has minimal total Euclidean cost.
///
/// For each timestep `i`, the `r x r` cost matrix
/// `C[j][k] = ||spatial(X[j][i]) - spatial(X[k][i+1])||` is solved exactly
/// with the Hungarian method and the waypoints at `i + 1` are reordered
/// accordingly. Waypoint multisets per timestep are preserved.
pub fn assign_waypoints(paths: &[Path], spatial_dim: usize) -> Result<Vec<Path>> {
    if paths.is_empty() {
        return Err(invalid("assign_waypoints requires at least one path"));
    }
    let r = paths.len();
    let t = paths[0].waypoints.len();
    if t < 2 {
        return Err(invalid("assign_waypoints requires t >= 2 waypoints"));
    }
    if paths.iter().any(|p| p.waypoints.len() != t) {
        return Err(invalid("all paths must have the same waypoint count"));
    }

    let mut wps: Vec<Vec<Vec<f64>>> = paths.iter().map(|p| p.waypoints.clone()).collect();
    if r == 1 {
        return Ok(paths.to_vec());
    }

    for i in 0..t - 1 {
        let mut cost = vec![vec![0.0; r]; r];
        for (j, row) in cost.iter_mut().enumerate() {
            for (k, c) in row.iter_mut().enumerate() {
                *c = spatial_distance(&wps[j][i], &wps[k][i + 1], spatial_dim);
            }
        }
        let assign = hungarian(&cost);
        // robot j continues into old row assign[j] at time i+1..t; reorder
        // the tails accordingly
        let tails: Vec<Vec<Vec<f64>>> = wps.iter().map(|p| p[i + 1..].to_vec()).collect();
        for (j, &src) in assign.iter().enumerate() {
            for (offset, w) in tails[src].iter().enumerate() {
                wps[j][i + 1 + offset] = w.clone();
            }
        }
    }

    Ok(wps
        .into_iter()
        .enumerate()
        .map(|(j, waypoints)| Path {
            robot_id: paths[j].robot_id,
            waypoints,
        })
        .collect())
}
