//! `ipp`: batch informative-path-planning runs with deterministic file
//! outputs.

mod commands;
mod config;
mod io;
mod plot;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

const CONFIG_KEYS: &str = "\
Config keys (JSON, unknown keys rejected):
  environment.lower            per-dimension lower bounds [m]
  environment.upper            per-dimension upper bounds [m]
  environment.time_horizon     optional [t0, t1] horizon [min]
  kernel.variance              signal variance [field-units^2]
  kernel.lengthscales          per-dimension lengthscales [m; min for time]
  noise_variance               observation noise variance [field-units^2]
  seed                         RNG seed (u64); outputs are byte-deterministic
  robots                       robot count r (default 1)
  waypoints                    waypoints per robot s (default 10)
  sensing.kind                 point | arc | line_fov | square_fov_height
  sensing.points_per_segment   arc: interpolated points per segment
  sensing.length_m             line_fov: segment length [m]
  sensing.points_per_line      line_fov: points per segment
  sensing.half_angle_rad       square_fov_height: FoV half angle [rad]
  sensing.grid_side            square_fov_height: grid side count
  penalties.distance_budget    optional budget c per robot [m]
  penalties.velocity_limit     optional limit [m/min], needs time horizon
  penalties.accel_limit        optional limit [m/min^2], needs time horizon
  penalties.weight             penalty weight alpha (default 100)
  optimizer.learning_rate      Adam step in normalized coordinates (default 0.01)
  optimizer.max_iters          iteration cap (default 2000)
  optimizer.tolerance          relative objective change over a 20-iteration
                               window (default 1e-6)
  train_samples                unlabeled SGP samples n (default 1000; 2000 when
                               the point dimension exceeds 2)
  field_resolution             gen-data grid points per dimension (default 25)
  past_data                    optional JSON file of past samples [[x,y,t<=0],..]
  fixed_start / fixed_end      optional frozen first/last waypoints
  output_dir                   output directory (the -o flag overrides)";

#[derive(Parser)]
#[command(
    name = "ipp",
    about = "Sparse-GP informative path planning",
    version,
    after_help = "Exit codes: 0 ok, 2 config/parse, 3 resource limit, 4 constraint/bounds, 5 numerical failure."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample a synthetic ground-truth field onto field.csv + field.meta.json.
    #[command(after_help = CONFIG_KEYS)]
    GenData {
        /// Run configuration (JSON).
        #[arg(short, long)]
        config: PathBuf,
        /// Output directory.
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Plan sensing paths; writes paths.json + trace.csv and prints a JSON
    /// summary line.
    #[command(after_help = CONFIG_KEYS)]
    Plan {
        /// Run configuration (JSON).
        #[arg(short, long)]
        config: PathBuf,
        /// Optional field.csv for immediate RMSE evaluation.
        #[arg(long)]
        field: Option<PathBuf>,
        /// Output directory.
        #[arg(short, long)]
        output: Option<PathBuf>,
        /// Independent seeded restarts merged by best objective
        /// (IPP_THREADS caps the parallel workers).
        #[arg(long, default_value_t = 1)]
        restarts: usize,
    },
    /// Reconstruct the field from path observations and write report.json.
    #[command(after_help = CONFIG_KEYS)]
    Eval {
        /// paths.json produced by `ipp plan`.
        #[arg(long)]
        paths: PathBuf,
        /// field.csv produced by `ipp gen-data` (field.meta.json sibling).
        #[arg(long)]
        field: PathBuf,
        /// Observation model along each path.
        #[arg(long, default_value = "discrete")]
        sensing: String,
        /// Arc-length step for continuous sensing [m]
        /// (default: min lengthscale / 5).
        #[arg(long)]
        step: Option<f64>,
        /// Output directory.
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Render paths (optionally over a field heatmap) to plot.svg.
    Plot {
        /// paths.json produced by `ipp plan`.
        #[arg(long)]
        paths: PathBuf,
        /// Optional field.csv heatmap layer.
        #[arg(long)]
        field: Option<PathBuf>,
        /// Output directory.
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let code = match &cli.command {
        Command::GenData { config, output } => commands::cmd_gen_data(config, output.as_ref()),
        Command::Plan {
            config,
            field,
            output,
            restarts,
        } => commands::cmd_plan(config, field.as_ref(), output.as_ref(), *restarts),
        Command::Eval {
            paths,
            field,
            sensing,
            step,
            output,
        } => commands::cmd_eval(paths, field, sensing, *step, output.as_ref()),
        Command::Plot {
            paths,
            field,
            output,
        } => commands::cmd_plot(paths, field.as_ref(), output.as_ref()),
    };
    ExitCode::from(code as u8)
}
