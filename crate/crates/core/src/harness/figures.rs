//! SVG figures and matching CSV series.

use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;

use super::sim::TraceEvent;
use crate::geometry::{Obstacle, Point, Track, Trajectory};
use crate::{Error, Result};

/// Representative denoising times of the snapshot panel.
pub const SNAPSHOT_TIMES: [f64; 3] = [1.0, 0.591, 0.002];

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];
const WIDTH: f64 = 640.0;
const PAD: f64 = 20.0;

/// One titled panel of a figure.
#[derive(Debug, Clone, Default)]
pub struct Panel {
    pub title: String,
    pub obstacles: Vec<Obstacle>,
    pub trajectories: Vec<(String, Trajectory)>,
    /// Free polylines in global coordinates, such as a driven path.
    pub paths: Vec<(String, Vec<Point>)>,
}

#[derive(Debug, Serialize)]
struct SeriesRow<'a> {
    panel: usize,
    series: &'a str,
    index: usize,
    s: f64,
    y_hat: f64,
    phi_hat: f64,
    x: f64,
    y: f64,
}

struct View {
    min: Point,
    scale: f64,
    height: f64,
}

impl View {
    fn new(track: &Track) -> Self {
        let hw = track.half_width();
        let mut min = [f64::INFINITY; 2];
        let mut max = [f64::NEG_INFINITY; 2];
        for f in track.stations() {
            for side in [-1.0, 1.0] {
                let p = [f.point[0] + side * hw * f.normal[0], f.point[1] + side * hw * f.normal[1]];
                for i in 0..2 {
                    min[i] = min[i].min(p[i]);
                    max[i] = max[i].max(p[i]);
                }
            }
        }
        let scale = (WIDTH - 2.0 * PAD) / (max[0] - min[0]);
        Self {
            min,
            scale,
            height: (max[1] - min[1]) * scale + 2.0 * PAD,
        }
    }

    fn px(&self, p: Point) -> (f64, f64) {
        (
            PAD + (p[0] - self.min[0]) * self.scale,
            self.height - PAD - (p[1] - self.min[1]) * self.scale,
        )
    }

    fn polyline(&self, pts: &[Point], closed: bool, stroke: &str, width: f64, extra: &str) -> String {
        let mut d = String::new();
        for (i, p) in pts.iter().enumerate() {
            let (x, y) = self.px(*p);
            let _ = write!(d, "{}{x:.2},{y:.2} ", if i == 0 { "M" } else { "L" });
        }
        if closed {
            d.push('Z');
        }
        format!(r#"<path d="{}" fill="none" stroke="{stroke}" stroke-width="{width}"{extra}/>"#, d.trim_end())
    }
}

fn edge(track: &Track, side: f64) -> Vec<Point> {
    let hw = track.half_width();
    track
        .stations()
        .iter()
        .map(|f| [f.point[0] + side * hw * f.normal[0], f.point[1] + side * hw * f.normal[1]])
        .collect()
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// SVG 1.1 document with the panels stacked vertically.
pub fn render_svg(track: &Track, panels: &[Panel]) -> String {
    let view = View::new(track);
    let title_h = 24.0;
    let panel_h = view.height + title_h;
    let count = panels.len().max(1);
    let mut out = String::new();
    let _ = writeln!(out, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{WIDTH:.0}" height="{:.0}" viewBox="0 0 {WIDTH:.0} {:.0}">"#,
        panel_h * count as f64,
        panel_h * count as f64
    );
    let empty = Panel::default();
    let list: Vec<&Panel> = if panels.is_empty() { vec![&empty] } else { panels.iter().collect() };
    for (i, panel) in list.into_iter().enumerate() {
        let _ = writeln!(out, r#"<g transform="translate(0,{:.2})">"#, i as f64 * panel_h);
        if !panel.title.is_empty() {
            let _ = writeln!(out, r#"<text x="{PAD}" y="16" font-family="sans-serif" font-size="14">{}</text>"#, escape(&panel.title));
        }
        let _ = writeln!(out, r#"<g transform="translate(0,{title_h})">"#);
        let _ = writeln!(out, "{}", view.polyline(&edge(track, 1.0), true, "#333333", 1.5, ""));
        let _ = writeln!(out, "{}", view.polyline(&edge(track, -1.0), true, "#333333", 1.5, ""));
        let center: Vec<Point> = track.stations().iter().map(|f| f.point).collect();
        let _ = writeln!(out, "{}", view.polyline(&center, true, "#999999", 0.8, r#" stroke-dasharray="4,3""#));
        for o in &panel.obstacles {
            let (x, y) = view.px(o.center);
            let _ = writeln!(
                out,
                r##"<circle cx="{x:.2}" cy="{y:.2}" r="{:.2}" fill="#7f7f7f" fill-opacity="0.6" stroke="#000000"/>"##,
                o.radius * view.scale
            );
        }
        for (j, (_, traj)) in panel.trajectories.iter().enumerate() {
            let pts = traj.global_points(track);
            let _ = writeln!(out, "{}", view.polyline(&pts, true, PALETTE[j % PALETTE.len()], 1.2, ""));
        }
        for (_, pts) in &panel.paths {
            let _ = writeln!(out, "{}", view.polyline(pts, false, "#000000", 1.0, r#" stroke-opacity="0.7""#));
        }
        let _ = writeln!(out, "</g>\n</g>");
    }
    out.push_str("</svg>\n");
    out
}

/// Writes `<stem>.svg` and `<stem>.csv` (one row per station per
/// trajectory, one row per point per path) into `dir`.
pub fn write_figure(dir: impl AsRef<Path>, stem: &str, track: &Track, panels: &[Panel]) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let svg = dir.join(format!("{stem}.svg"));
    std::fs::write(&svg, render_svg(track, panels)).map_err(|e| Error::io(&svg, e))?;
    let csv_path = dir.join(format!("{stem}.csv"));
    let mut w = csv::Writer::from_path(&csv_path)?;
    for (p, panel) in panels.iter().enumerate() {
        for (name, traj) in &panel.trajectories {
            for (k, g) in traj.global_points(track).into_iter().enumerate() {
                w.serialize(SeriesRow {
                    panel: p,
                    series: name,
                    index: k,
                    s: track.station(k).s,
                    y_hat: traj.y_hat[k],
                    phi_hat: traj.phi_hat[k],
                    x: g[0],
                    y: g[1],
                })?;
            }
        }
        for (name, pts) in &panel.paths {
            for (k, g) in pts.iter().enumerate() {
                w.serialize(SeriesRow {
                    panel: p,
                    series: name,
                    index: k,
                    s: f64::NAN,
                    y_hat: f64::NAN,
                    phi_hat: f64::NAN,
                    x: g[0],
                    y: g[1],
                })?;
            }
        }
    }
    if panels.is_empty() {
        w.write_record(["panel", "series", "index", "s", "y_hat", "phi_hat", "x", "y"])?;
    }
    w.flush().map_err(|e| Error::io(&csv_path, e))
}

/// Panels from a closed-loop trace: the first, middle and last plan with the
/// obstacles at that tick, and the driven path on the last panel.
pub fn trace_panels(trace: &str) -> Result<Vec<Panel>> {
    let mut ticks: Vec<(f64, Vec<Obstacle>, Trajectory)> = Vec::new();
    let mut obstacles = Vec::new();
    let mut path = Vec::new();
    for line in trace.lines().filter(|l| !l.trim().is_empty()) {
        match serde_json::from_str::<TraceEvent>(line)? {
            TraceEvent::Obstacles { obstacles: o, .. } => {
                obstacles = o.into_iter().map(|o| Obstacle::fixed(o.center, o.radius)).collect();
            }
            TraceEvent::Plan { time, y_hat, phi_hat, .. } => {
                ticks.push((time, obstacles.clone(), Trajectory { y_hat, phi_hat }));
            }
            TraceEvent::Pose { x, y, .. } => path.push([x, y]),
            _ => {}
        }
    }
    if ticks.is_empty() {
        return Ok(Vec::new());
    }
    let mut picks = vec![0, ticks.len() / 2, ticks.len() - 1];
    picks.dedup();
    let last = *picks.last().expect("non-empty");
    Ok(picks
        .into_iter()
        .map(|i| {
            let (time, obs, traj) = &ticks[i];
            Panel {
                title: format!("plan at t = {time:.1} s"),
                obstacles: obs.clone(),
                trajectories: vec![(format!("plan_{i}"), traj.clone())],
                paths: if i == last { vec![("vehicle".into(), path.clone())] } else { Vec::new() },
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn track() -> Track {
        Track::ellipse(2.0, 1.2, 0.5, 32).unwrap()
    }

    #[test]
    fn empty_batch_renders_track_only() {
        let svg = render_svg(&track(), &[]);
        assert!(svg.starts_with("<?xml"));
        assert!(svg.contains(r#"version="1.1""#));
        assert_eq!(svg.matches("<path").count(), 3);
        assert!(!svg.contains("<circle"));
        assert!(svg.trim_end().ends_with("</svg>"));
    }

    #[test]
    fn csv_has_one_row_per_station() {
        let tr = track();
        let dir = tempfile::tempdir().unwrap();
        let panel = Panel {
            title: "a < b".into(),
            obstacles: vec![Obstacle::fixed(tr.point_at(1.0, 0.1), 0.1)],
            trajectories: vec![("a".into(), Trajectory::zeros(32)), ("b".into(), Trajectory::zeros(32))],
            paths: Vec::new(),
        };
        write_figure(dir.path(), "fig", &tr, &[panel]).unwrap();
        let text = std::fs::read_to_string(dir.path().join("fig.csv")).unwrap();
        assert_eq!(text.lines().count(), 1 + 2 * 32);
        assert_eq!(text.lines().filter(|l| l.contains(",a,")).count(), 32);
        let svg = std::fs::read_to_string(dir.path().join("fig.svg")).unwrap();
        assert!(svg.contains("a &lt; b"));
        assert_eq!(svg.matches("<circle").count(), 1);
    }
}
