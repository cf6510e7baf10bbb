//! Subcommand implementations. Each returns the process exit code.

use std::fs;
use std::path::{Path as FsPath, PathBuf};

use ipp_core::{
    evaluate_paths, plan_multi, plan_single, sample_gp_field, Error, EvalSensing, PastData, Path,
    PlanOutcome, PlanSpec, Result,
};

use crate::config::RunConfig;
use crate::io::{
    read_field, read_paths, write_field, write_paths, write_report, write_trace, PathsJson,
    ReportJson, RobotPathJson,
};
use crate::plot;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_RESOURCE: i32 = 3;
pub const EXIT_CONSTRAINT: i32 = 4;
pub const EXIT_NUMERICAL: i32 = 5;

pub fn exit_code_for(err: &Error) -> i32 {
    match err {
        Error::InvalidArgument(_) | Error::DegeneratePath(_) => EXIT_CONFIG,
        Error::ResourceLimit(_) => EXIT_RESOURCE,
        Error::InfeasibleConstraint(_) => EXIT_CONSTRAINT,
        Error::NumericalFailure(_) => EXIT_NUMERICAL,
    }
}

fn fail(err: &Error) -> i32 {
    eprintln!("error: {err}");
    exit_code_for(err)
}

pub fn load_config(path: &FsPath) -> std::result::Result<RunConfig, i32> {
    let text = fs::read_to_string(path).map_err(|e| {
        eprintln!("error: cannot read config {}: {e}", path.display());
        EXIT_CONFIG
    })?;
    serde_json::from_str(&text).map_err(|e| {
        // serde_json reports line/column and the offending key
        eprintln!("error: invalid config {}: {e}", path.display());
        EXIT_CONFIG
    })
}

fn ensure_dir(dir: &FsPath) -> std::result::Result<(), i32> {
    fs::create_dir_all(dir).map_err(|e| {
        eprintln!("error: cannot create output dir {}: {e}", dir.display());
        EXIT_CONFIG
    })
}

pub fn output_dir(cfg: &RunConfig, flag: Option<&PathBuf>) -> PathBuf {
    flag.cloned()
        .or_else(|| cfg.output_dir.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("."))
}

pub fn cmd_gen_data(config_path: &FsPath, out_flag: Option<&PathBuf>) -> i32 {
    let cfg = match load_config(config_path) {
        Ok(c) => c,
        Err(code) => return code,
    };
    let dir = output_dir(&cfg, out_flag);
    if let Err(code) = ensure_dir(&dir) {
        return code;
    }
    match gen_data_inner(&cfg, &dir) {
        Ok(()) => EXIT_OK,
        Err(e) => fail(&e),
    }
}

fn gen_data_inner(cfg: &RunConfig, dir: &FsPath) -> Result<()> {
    let env = cfg.environment()?;
    let kernel = cfg.kernel()?;
    let field = sample_gp_field(&kernel, &env, &cfg.field_resolution(), cfg.seed)?;
    let (csv, meta) = write_field(&field, cfg.noise_variance, dir)?;
    println!(
        "{}",
        serde_json::json!({
            "field": csv.display().to_string(),
            "meta": meta.display().to_string(),
            "grid_points": field.values().len(),
        })
    );
    Ok(())
}

fn load_past_data(cfg: &RunConfig) -> Result<Option<PastData>> {
    let Some(path) = &cfg.past_data else {
        return Ok(None);
    };
    let text = fs::read_to_string(path)
        .map_err(|e| Error::InvalidArgument(format!("past data {path}: {e}")))?;
    let points: Vec<Vec<f64>> = serde_json::from_str(&text)
        .map_err(|e| Error::InvalidArgument(format!("past data {path}: {e}")))?;
    Ok(Some(PastData::new(points, &cfg.environment()?)?))
}

fn run_plan(cfg: &RunConfig, seed: u64) -> Result<PlanOutcome> {
    let env = cfg.environment()?;
    let kernel = cfg.kernel()?;
    let mut spec = PlanSpec::new(&kernel, &env, cfg.noise_variance, cfg.waypoints);
    spec.robots = cfg.robots;
    spec.train_samples = cfg.train_samples;
    spec.fixed_start = cfg.fixed_start.clone();
    spec.fixed_end = cfg.fixed_end.clone();
    spec.past_data = load_past_data(cfg)?;
    let objective = ipp_core::ObjectiveConfig {
        sensing: cfg.sensing.to_model(),
        penalties: cfg.penalties(),
        learning_rate: cfg.optimizer.learning_rate,
        max_iters: cfg.optimizer.max_iters,
        tolerance: cfg.optimizer.tolerance,
        seed,
    };
    if cfg.robots <= 1 {
        plan_single(&spec, &objective)
    } else {
        plan_multi(&spec, &objective)
    }
}

/// Worker cap for `--restarts`: IPP_THREADS, else available parallelism.
fn thread_cap() -> usize {
    std::env::var("IPP_THREADS")
        .ok()
        .and_then(|s| s.parse::<usize>().ok())
        .filter(|&n| n >= 1)
        .unwrap_or_else(|| {
            std::thread::available_parallelism()
                .map(|n| n.get())
                .unwrap_or(1)
        })
}

pub fn cmd_plan(
    config_path: &FsPath,
    field_path: Option<&PathBuf>,
    out_flag: Option<&PathBuf>,
    restarts: usize,
) -> i32 {
    let cfg = match load_config(config_path) {
        Ok(c) => c,
        Err(code) => return code,
    };
    let dir = output_dir(&cfg, out_flag);
    if let Err(code) = ensure_dir(&dir) {
        return code;
    }

    // independent seeds, merged by best objective (ties to the lowest seed);
    // deterministic regardless of scheduling
    let k = restarts.max(1);
    let seeds: Vec<u64> = (0..k as u64).map(|i| cfg.seed + i).collect();
    let mut results: Vec<(u64, Result<PlanOutcome>)> = Vec::with_capacity(k);
    let cap = thread_cap().min(k).max(1);
    if cap == 1 || k == 1 {
        for &s in &seeds {
            results.push((s, run_plan(&cfg, s)));
        }
    } else {
        for chunk in seeds.chunks(cap) {
            let outcomes: Vec<(u64, Result<PlanOutcome>)> = std::thread::scope(|scope| {
                let handles: Vec<_> = chunk
                    .iter()
                    .map(|&s| {
                        let cfg = &cfg;
                        scope.spawn(move || (s, run_plan(cfg, s)))
                    })
                    .collect();
                handles
                    .into_iter()
                    .map(|h| h.join().expect("plan worker"))
                    .collect()
            });
            results.extend(outcomes);
        }
    }

    let mut best: Option<(u64, PlanOutcome)> = None;
    let mut first_err: Option<Error> = None;
    for (s, res) in results {
        match res {
            Ok(out) => {
                let better = match &best {
                    None => true,
                    Some((_, b)) => out.objective > b.objective,
                };
                if better {
                    best = Some((s, out));
                }
            }
            Err(e) => {
                if first_err.is_none() {
                    first_err = Some(e);
                }
            }
        }
    }

    let Some((seed, outcome)) = best else {
        return fail(&first_err.expect("no results at all"));
    };

    let env = match cfg.environment() {
        Ok(e) => e,
        Err(e) => return fail(&e),
    };
    let spatial_dim = env.spatial_dim();
    let robots: Vec<RobotPathJson> = outcome
        .paths
        .iter()
        .map(|p| RobotPathJson {
            id: p.robot_id,
            waypoints: p.waypoints.clone(),
            length_m: p.length(spatial_dim),
        })
        .collect();
    let lengths: Vec<f64> = robots.iter().map(|r| r.length_m).collect();
    let paths_json = PathsJson {
        robots,
        objective: outcome.objective,
        seed,
        warning: outcome.warning.clone(),
    };
    if let Err(e) = write_paths(&paths_json, &dir) {
        return fail(&e);
    }
    if let Err(e) = write_trace(&outcome.trace, &dir) {
        return fail(&e);
    }

    let rmse = field_path.and_then(|f| {
        let (field, meta) = read_field(f).ok()?;
        evaluate_paths(
            &field,
            &outcome.paths,
            EvalSensing::Discrete,
            meta.noise_variance,
        )
        .ok()
        .map(|r| r.rmse)
    });
    let mut line = serde_json::json!({
        "objective": outcome.objective,
        "lengths": lengths,
        "seed": seed,
    });
    if let Some(r) = rmse {
        line["rmse"] = serde_json::json!(r);
    }
    if let Some(w) = &outcome.warning {
        line["warning"] = serde_json::json!(w);
    }
    println!("{line}");

    if outcome.warning.is_some() {
        EXIT_NUMERICAL
    } else {
        EXIT_OK
    }
}

pub fn cmd_eval(
    paths_path: &FsPath,
    field_path: &FsPath,
    sensing: &str,
    step: Option<f64>,
    out_flag: Option<&PathBuf>,
) -> i32 {
    let paths_json = match read_paths(paths_path) {
        Ok(p) => p,
        Err(e) => return fail(&e),
    };
    let (field, meta) = match read_field(field_path) {
        Ok(f) => f,
        Err(e) => return fail(&e),
    };

    // bounds check with robot/index diagnostics
    for robot in &paths_json.robots {
        for (i, w) in robot.waypoints.iter().enumerate() {
            if w.len() != field.env().point_dim() {
                eprintln!(
                    "error: robot {} waypoint {i} has {} coordinates, field expects {}",
                    robot.id,
                    w.len(),
                    field.env().point_dim()
                );
                return EXIT_CONFIG;
            }
            if !field.env().contains(w) {
                eprintln!(
                    "error: robot {} waypoint {i} at {w:?} is outside the field bounds",
                    robot.id
                );
                return EXIT_CONSTRAINT;
            }
        }
    }

    let sensing = match sensing {
        "discrete" => EvalSensing::Discrete,
        "continuous" => {
            let default_step = meta
                .kernel_lengthscales
                .iter()
                .take(field.env().spatial_dim())
                .cloned()
                .fold(f64::MAX, f64::min)
                / 5.0;
            EvalSensing::Continuous {
                step: step.unwrap_or(default_step),
            }
        }
        other => {
            eprintln!("error: unknown sensing mode '{other}' (discrete|continuous)");
            return EXIT_CONFIG;
        }
    };

    let paths: Vec<Path> = match paths_json
        .robots
        .iter()
        .map(|r| Path::new(r.id, r.waypoints.clone()))
        .collect::<Result<Vec<_>>>()
    {
        Ok(p) => p,
        Err(e) => return fail(&e),
    };

    let report = match evaluate_paths(&field, &paths, sensing, meta.noise_variance) {
        Ok(r) => r,
        Err(e) => return fail(&e),
    };

    let dir = out_flag.cloned().unwrap_or_else(|| PathBuf::from("."));
    if let Err(code) = ensure_dir(&dir) {
        return code;
    }
    let spatial_dim = field.env().spatial_dim();
    let out = ReportJson {
        rmse: report.rmse,
        observation_count: report.observation_count,
        per_robot_lengths: paths.iter().map(|p| p.length(spatial_dim)).collect(),
    };
    match write_report(&out, &dir) {
        Ok(path) => {
            println!(
                "{}",
                serde_json::json!({
                    "report": path.display().to_string(),
                    "rmse": out.rmse,
                    "observations": out.observation_count,
                })
            );
            EXIT_OK
        }
        Err(e) => fail(&e),
    }
}

pub fn cmd_plot(
    paths_path: &FsPath,
    field_path: Option<&PathBuf>,
    out_flag: Option<&PathBuf>,
) -> i32 {
    let paths_json = match read_paths(paths_path) {
        Ok(p) => p,
        Err(e) => return fail(&e),
    };
    if paths_json.robots.is_empty()
        || paths_json
            .robots
            .iter()
            .any(|r| r.waypoints.is_empty() || r.waypoints.iter().any(|w| w.len() < 2))
    {
        eprintln!("error: plot requires at least one robot with 2D waypoints");
        return EXIT_CONFIG;
    }
    let field = match field_path {
        Some(p) => match read_field(p) {
            Ok((f, _)) => Some(f),
            Err(e) => return fail(&e),
        },
        None => None,
    };
    let svg = plot::render(&paths_json, field.as_ref());
    let dir = out_flag.cloned().unwrap_or_else(|| PathBuf::from("."));
    if let Err(code) = ensure_dir(&dir) {
        return code;
    }
    let path = dir.join("plot.svg");
    match fs::write(&path, svg) {
        Ok(()) => {
            println!(
                "{}",
                serde_json::json!({ "plot": path.display().to_string() })
            );
            EXIT_OK
        }
        Err(e) => {
            eprintln!("error: cannot write {}: {e}", path.display());
            EXIT_CONFIG
        }
    }
}
