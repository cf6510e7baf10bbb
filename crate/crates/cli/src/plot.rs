//! Static SVG figures: one polyline per robot over an optional field
//! heatmap, waypoint markers (time-colored for spatio-temporal paths), and
//! a legend with per-path lengths.

use ipp_core::Field;

use crate::io::PathsJson;

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 720.0;
const MARGIN: f64 = 40.0;

const PALETTE: [&str; 6] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf",
];

struct Frame {
    min_x: f64,
    max_x: f64,
    min_y: f64,
    max_y: f64,
}

impl Frame {
    fn to_px(&self, x: f64, y: f64) -> (f64, f64) {
        let sx = (WIDTH - 2.0 * MARGIN) / (self.max_x - self.min_x).max(1e-12);
        let sy = (HEIGHT - 2.0 * MARGIN) / (self.max_y - self.min_y).max(1e-12);
        // y axis points up in world coordinates
        (
            MARGIN + (x - self.min_x) * sx,
            HEIGHT - MARGIN - (y - self.min_y) * sy,
        )
    }
}

/// Blue-to-red ramp for heatmap values and time-colored markers.
fn ramp(t: f64) -> String {
    let t = t.clamp(0.0, 1.0);
    let r = (255.0 * t) as u8;
    let g = (64.0 + 64.0 * (1.0 - (2.0 * t - 1.0).abs())) as u8;
    let b = (255.0 * (1.0 - t)) as u8;
    format!("#{r:02x}{g:02x}{b:02x}")
}

fn fmt(v: f64) -> String {
    format!("{:.2}", (v * 100.0).round() / 100.0)
}

/// Renders paths (and optionally a 2D field heatmap) into an SVG document.
/// Waypoints of width 3 are treated as (x, y, t) with markers colored along
/// the time ramp.
pub fn render(paths: &PathsJson, field: Option<&Field>) -> String {
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for robot in &paths.robots {
        for w in &robot.waypoints {
            xs.push(w[0]);
            if w.len() > 1 {
                ys.push(w[1]);
            }
        }
    }
    if let Some(f) = field {
        xs.push(f.env().lower()[0]);
        xs.push(f.env().upper()[0]);
        if f.env().spatial_dim() > 1 {
            ys.push(f.env().lower()[1]);
            ys.push(f.env().upper()[1]);
        }
    }
    let frame = Frame {
        min_x: xs.iter().copied().fold(f64::MAX, f64::min),
        max_x: xs.iter().copied().fold(f64::MIN, f64::max),
        min_y: ys.iter().copied().fold(f64::MAX, f64::min),
        max_y: ys.iter().copied().fold(f64::MIN, f64::max),
    };

    let mut svg = format!(
        r#"<svg version="1.1" width="{WIDTH}" height="{HEIGHT}" xmlns="http://www.w3.org/2000/svg">"#
    );
    svg.push('\n');

    // heatmap layer: one rect per grid cell of a pure-2D field
    if let Some(f) = field {
        if f.env().spatial_dim() == 2 && f.env().time_horizon().is_none() {
            let (lo, hi) = f
                .values()
                .iter()
                .fold((f64::MAX, f64::MIN), |(lo, hi), &v| (lo.min(v), hi.max(v)));
            let span = (hi - lo).max(1e-12);
            let xs_axis = f.axis(0);
            let ys_axis = f.axis(1);
            let (nx, ny) = (xs_axis.len(), ys_axis.len());
            let cell_w = (f.env().upper()[0] - f.env().lower()[0]) / (nx - 1) as f64;
            let cell_h = (f.env().upper()[1] - f.env().lower()[1]) / (ny - 1) as f64;
            for (i, &x) in xs_axis.iter().enumerate() {
                for (j, &y) in ys_axis.iter().enumerate() {
                    let v = f.values()[i * ny + j];
                    let (px, py) = frame.to_px(x - cell_w / 2.0, y + cell_h / 2.0);
                    let (px2, py2) = frame.to_px(x + cell_w / 2.0, y - cell_h / 2.0);
                    svg.push_str(&format!(
                        r#"<rect x="{}" y="{}" width="{}" height="{}" fill="{}" fill-opacity="0.55"/>"#,
                        fmt(px),
                        fmt(py),
                        fmt(px2 - px),
                        fmt(py2 - py),
                        ramp((v - lo) / span)
                    ));
                    svg.push('\n');
                }
            }
        }
    }

    // time ramp endpoints across the whole file
    let times: Vec<f64> = paths
        .robots
        .iter()
        .flat_map(|r| r.waypoints.iter())
        .filter(|w| w.len() >= 3)
        .map(|w| w[2])
        .collect();
    let (t_min, t_max) = times
        .iter()
        .fold((f64::MAX, f64::MIN), |(lo, hi), &t| (lo.min(t), hi.max(t)));

    for (k, robot) in paths.robots.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let mut d = String::new();
        for (i, w) in robot.waypoints.iter().enumerate() {
            let (px, py) = frame.to_px(w[0], w[1]);
            d.push_str(if i == 0 { "M" } else { " L" });
            d.push_str(&format!("{} {}", fmt(px), fmt(py)));
        }
        svg.push_str(&format!(
            r#"<path d="{d}" stroke="{color}" stroke-width="2.5" fill="none"/>"#
        ));
        svg.push('\n');
        for w in &robot.waypoints {
            let (px, py) = frame.to_px(w[0], w[1]);
            let fill = if w.len() >= 3 && t_max > t_min {
                ramp((w[2] - t_min) / (t_max - t_min))
            } else {
                color.to_string()
            };
            svg.push_str(&format!(
                r#"<circle cx="{}" cy="{}" r="4" fill="{}" stroke="black" stroke-width="0.5"/>"#,
                fmt(px),
                fmt(py),
                fill
            ));
            svg.push('\n');
        }
    }

    // legend: per-path lengths
    for (k, robot) in paths.robots.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let y = 18.0 + 18.0 * k as f64;
        svg.push_str(&format!(
            r#"<rect x="8" y="{}" width="12" height="12" fill="{color}"/>"#,
            fmt(y - 10.0)
        ));
        svg.push_str(&format!(
            r#"<text x="26" y="{}" font-family="monospace" font-size="13">robot {}: {} m</text>"#,
            fmt(y),
            robot.id,
            fmt(robot.length_m)
        ));
        svg.push('\n');
    }

    svg.push_str("</svg>\n");
    svg
}
