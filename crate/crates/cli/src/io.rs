//! File formats: field.csv + field.meta.json, paths.json, report.json,
//! trace.csv. All floating-point JSON output uses shortest round-trip
//! formatting; field.csv pins 9 significant digits. Byte determinism is a
//! contract.

use std::fs;
use std::path::{Path as FsPath, PathBuf};

use serde::{Deserialize, Serialize};

use ipp_core::{Environment, Error, Field, RbfKernel, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldMeta {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub time_horizon: Option<(f64, f64)>,
    pub resolution: Vec<usize>,
    pub kernel_variance: f64,
    pub kernel_lengthscales: Vec<f64>,
    pub noise_variance: f64,
    pub seed: u64,
}

/// Column header for the grid CSV: spatial axes, optional time, value.
fn field_header(spatial_dims: usize, has_time: bool) -> String {
    let names = ["x", "y", "z"];
    let mut cols: Vec<&str> = names[..spatial_dims].to_vec();
    if has_time {
        cols.push("t");
    }
    cols.push("value");
    cols.join(",")
}

pub fn write_field(field: &Field, noise_variance: f64, dir: &FsPath) -> Result<(PathBuf, PathBuf)> {
    let env = field.env();
    let meta = FieldMeta {
        lower: env.lower().to_vec(),
        upper: env.upper().to_vec(),
        time_horizon: env.time_horizon(),
        resolution: field.resolution().to_vec(),
        kernel_variance: field.kernel().variance(),
        kernel_lengthscales: field.kernel().lengthscales().to_vec(),
        noise_variance,
        seed: field.seed(),
    };

    let mut csv = String::new();
    csv.push_str(&field_header(
        env.spatial_dim(),
        env.time_horizon().is_some(),
    ));
    csv.push('\n');
    for (point, value) in field.grid_points().iter().zip(field.values()) {
        for c in point {
            csv.push_str(&format!("{c:.8e},"));
        }
        csv.push_str(&format!("{value:.8e}\n"));
    }

    let csv_path = dir.join("field.csv");
    let meta_path = dir.join("field.meta.json");
    fs::write(&csv_path, csv).map_err(io_err)?;
    fs::write(
        &meta_path,
        serde_json::to_string_pretty(&meta).expect("meta serializes"),
    )
    .map_err(io_err)?;
    Ok((csv_path, meta_path))
}

/// Loads a field from `field.csv` plus its sibling `field.meta.json`.
pub fn read_field(csv_path: &FsPath) -> Result<(Field, FieldMeta)> {
    let meta_path = csv_path.with_file_name(
        csv_path
            .file_stem()
            .and_then(|s| s.to_str())
            .map(|s| format!("{s}.meta.json"))
            .unwrap_or_else(|| "field.meta.json".into()),
    );
    let meta: FieldMeta = serde_json::from_str(
        &fs::read_to_string(&meta_path)
            .map_err(|e| Error::InvalidArgument(format!("{}: {e}", meta_path.display())))?,
    )
    .map_err(|e| Error::InvalidArgument(format!("{}: {e}", meta_path.display())))?;

    let text = fs::read_to_string(csv_path)
        .map_err(|e| Error::InvalidArgument(format!("{}: {e}", csv_path.display())))?;
    let mut values = Vec::new();
    for (lineno, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let last = line
            .rsplit(',')
            .next()
            .ok_or_else(|| Error::InvalidArgument(format!("line {}: empty row", lineno + 1)))?;
        values.push(
            last.trim().parse::<f64>().map_err(|e| {
                Error::InvalidArgument(format!("line {}: bad value: {e}", lineno + 1))
            })?,
        );
    }

    let env = Environment::new(meta.lower.clone(), meta.upper.clone())?;
    let env = match meta.time_horizon {
        Some((t0, t1)) => env.with_time_horizon(t0, t1)?,
        None => env,
    };
    let kernel = RbfKernel::new(meta.kernel_variance, meta.kernel_lengthscales.clone())?;
    let field = Field::from_parts(env, meta.resolution.clone(), values, kernel, meta.seed)?;
    Ok((field, meta))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RobotPathJson {
    pub id: usize,
    pub waypoints: Vec<Vec<f64>>,
    pub length_m: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathsJson {
    pub robots: Vec<RobotPathJson>,
    pub objective: f64,
    pub seed: u64,
    pub warning: Option<String>,
}

pub fn write_paths(paths: &PathsJson, dir: &FsPath) -> Result<PathBuf> {
    let path = dir.join("paths.json");
    fs::write(
        &path,
        serde_json::to_string_pretty(paths).expect("paths serialize"),
    )
    .map_err(io_err)?;
    Ok(path)
}

pub fn read_paths(path: &FsPath) -> Result<PathsJson> {
    serde_json::from_str(
        &fs::read_to_string(path)
            .map_err(|e| Error::InvalidArgument(format!("{}: {e}", path.display())))?,
    )
    .map_err(|e| Error::InvalidArgument(format!("{}: {e}", path.display())))
}

pub fn write_trace(trace: &[f64], dir: &FsPath) -> Result<PathBuf> {
    let mut csv = String::from("iter,objective\n");
    for (i, f) in trace.iter().enumerate() {
        csv.push_str(&format!("{i},{f}\n"));
    }
    let path = dir.join("trace.csv");
    fs::write(&path, csv).map_err(io_err)?;
    Ok(path)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportJson {
    pub rmse: f64,
    pub observation_count: usize,
    pub per_robot_lengths: Vec<f64>,
}

pub fn write_report(report: &ReportJson, dir: &FsPath) -> Result<PathBuf> {
    let path = dir.join("report.json");
    fs::write(
        &path,
        serde_json::to_string_pretty(report).expect("report serializes"),
    )
    .map_err(io_err)?;
    Ok(path)
}

fn io_err(e: std::io::Error) -> Error {
    Error::InvalidArgument(format!("io error: {e}"))
}
