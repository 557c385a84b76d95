//! CSV, metrics and SVG output.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::harness::engine::RunOutput;
use crate::harness::metrics::RunMetrics;

pub const TRAJECTORY_FILE: &str = "trajectories.csv";
pub const METRICS_FILE: &str = "metrics.toml";
pub const SVG_FILE: &str = "trajectories.svg";

/// Rounds `v` to 9 significant digits and prints the shortest form that
/// reads back to the rounded value.
pub fn format_sig9(v: f64) -> String {
    if !v.is_finite() {
        return v.to_string();
    }
    let rounded: f64 = format!("{v:.8e}").parse().expect("formatted float parses");
    if rounded == 0.0 {
        "0".to_string()
    } else {
        rounded.to_string()
    }
}

pub fn trajectory_csv(output: &RunOutput) -> String {
    let h = output.spec.horizon;
    let mut out = String::from("round,vehicle_id,t,x,y,v,theta");
    for axis in ["x", "y"] {
        for k in 1..=h {
            write!(out, ",plan_{axis}{k}").unwrap();
        }
    }
    out.push('\n');
    for log in &output.logs {
        for v in &log.vehicles {
            let s = &v.state;
            write!(
                out,
                "{},{},{},{},{},{},{}",
                log.round,
                v.id,
                format_sig9(log.time),
                format_sig9(s.position.x),
                format_sig9(s.position.y),
                format_sig9(s.speed),
                format_sig9(s.heading)
            )
            .unwrap();
            for p in v.plan.points() {
                write!(out, ",{}", format_sig9(p.x)).unwrap();
            }
            for p in v.plan.points() {
                write!(out, ",{}", format_sig9(p.y)).unwrap();
            }
            out.push('\n');
        }
    }
    out
}

pub fn metrics_text(metrics: &RunMetrics) -> Result<String> {
    Ok(toml::to_string(metrics)?)
}

const COLORS: [&str; 6] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b",
];

/// Executed path (solid) and last plan (dashed) of every vehicle.
pub fn trajectory_svg(output: &RunOutput) -> String {
    let count = output.spec.vehicles.len();
    let mut executed: Vec<Vec<(f64, f64)>> = vec![Vec::new(); count];
    for log in &output.logs {
        for (i, v) in log.vehicles.iter().enumerate() {
            executed[i].push((v.state.position.x, v.state.position.y));
        }
    }
    for (i, s) in output.final_states.iter().enumerate() {
        executed[i].push((s.position.x, s.position.y));
    }
    let planned: Vec<Vec<(f64, f64)>> = match output.logs.last() {
        Some(log) => log
            .vehicles
            .iter()
            .map(|v| v.plan.points().iter().map(|p| (p.x, p.y)).collect())
            .collect(),
        None => vec![Vec::new(); count],
    };

    let all = executed.iter().chain(&planned).flatten();
    let (mut x0, mut x1, mut y0, mut y1) = (
        f64::INFINITY,
        f64::NEG_INFINITY,
        f64::INFINITY,
        f64::NEG_INFINITY,
    );
    for &(x, y) in all {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if !x0.is_finite() {
        (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
    }
    let pad = 5.0;
    let (x0, y0) = (x0 - pad, y0 - pad);
    let (w, h) = (x1 - x0 + pad, y1 - y0 + pad);
    let scale = 800.0 / w.max(h);
    let px = |x: f64| (x - x0) * scale;
    let py = |y: f64| (y0 + h - y) * scale;

    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{:.0}\" height=\"{:.0}\">\n<title>{}</title>\n",
        w * scale,
        h * scale,
        output.spec.name
    );
    for (i, path) in executed.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let pts: Vec<String> = path
            .iter()
            .map(|&(x, y)| format!("{:.2},{:.2}", px(x), py(y)))
            .collect();
        writeln!(
            svg,
            "<polyline data-vehicle=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"2\" points=\"{}\"/>",
            output.spec.vehicles[i].id,
            pts.join(" ")
        )
        .unwrap();
        let plan: Vec<String> = planned[i]
            .iter()
            .map(|&(x, y)| format!("{:.2},{:.2}", px(x), py(y)))
            .collect();
        writeln!(
            svg,
            "<path fill=\"none\" stroke=\"{color}\" stroke-dasharray=\"4 3\" d=\"M {}\"/>",
            plan.join(" L ")
        )
        .unwrap();
    }
    svg.push_str("</svg>\n");
    svg
}

fn write(path: PathBuf, text: &str) -> Result<PathBuf> {
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

/// Writes the CSV and metrics, plus the SVG when `svg` is set. Returns the
/// written paths.
pub fn export(output: &RunOutput, out_dir: &Path, svg: bool) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut written = vec![
        write(out_dir.join(TRAJECTORY_FILE), &trajectory_csv(output))?,
        write(out_dir.join(METRICS_FILE), &metrics_text(&output.metrics)?)?,
    ];
    if svg {
        written.push(write(out_dir.join(SVG_FILE), &trajectory_svg(output))?);
    }
    Ok(written)
}
