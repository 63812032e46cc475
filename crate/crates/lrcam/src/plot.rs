//! Deterministic SVG rendering of episode traces.
//!
//! Trajectories are drawn per agent in a fixed palette with opacity growing
//! along the episode, interrupted steps get yellow markers, goals get ring
//! markers, and agents that ended in a collision get a disc of the collision
//! radius at their final pose. The output is a pure function of the trace, so
//! renders are byte-identical across runs.

use crate::env::{AgentStatus, EpisodeTrace};
use std::fmt::Write as _;
use std::path::Path;

const VIEW: f64 = 600.0;
const PAD: f64 = 40.0;

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf", "#8c564b", "#e377c2",
];

struct Frame {
    min_x: f64,
    min_y: f64,
    scale: f64,
}

impl Frame {
    fn fit(trace: &EpisodeTrace) -> Self {
        let mut min_x = f64::INFINITY;
        let mut max_x = f64::NEG_INFINITY;
        let mut min_y = f64::INFINITY;
        let mut max_y = f64::NEG_INFINITY;
        for step in &trace.steps {
            for a in &step.agents {
                min_x = min_x.min(a.px);
                max_x = max_x.max(a.px);
                min_y = min_y.min(a.py);
                max_y = max_y.max(a.py);
            }
        }
        if !min_x.is_finite() {
            (min_x, max_x, min_y, max_y) = (-1.0, 1.0, -1.0, 1.0);
        }
        // keep the aspect ratio and leave room for collision discs
        let r = trace.collision_radius;
        min_x -= r;
        max_x += r;
        min_y -= r;
        max_y += r;
        let span = (max_x - min_x).max(max_y - min_y).max(1e-9);
        Self { min_x, min_y, scale: (VIEW - 2.0 * PAD) / span }
    }

    fn x(&self, wx: f64) -> f64 {
        PAD + (wx - self.min_x) * self.scale
    }

    /// SVG y grows downward; world y grows upward.
    fn y(&self, wy: f64) -> f64 {
        VIEW - PAD - (wy - self.min_y) * self.scale
    }
}

fn fmt(v: f64) -> String {
    format!("{v:.2}")
}

/// Render one episode to an SVG document string.
pub fn render_trace_svg(trace: &EpisodeTrace) -> String {
    let frame = Frame::fit(trace);
    let n = trace.n_agents();
    let steps = trace.steps.len();
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{VIEW}\" height=\"{VIEW}\" \
         viewBox=\"0 0 {VIEW} {VIEW}\">"
    );
    let _ = writeln!(svg, "<rect width=\"{VIEW}\" height=\"{VIEW}\" fill=\"white\"/>");

    // trajectories: one short segment per step so opacity can ramp with time
    for i in 0..n {
        let color = PALETTE[i % PALETTE.len()];
        for t in 1..steps {
            let a = &trace.steps[t - 1].agents[i];
            let b = &trace.steps[t].agents[i];
            if !a.acting && !b.acting {
                continue;
            }
            let opacity = 0.25 + 0.75 * t as f64 / steps.max(1) as f64;
            let _ = writeln!(
                svg,
                "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"{color}\" \
                 stroke-width=\"2\" stroke-opacity=\"{}\"/>",
                fmt(frame.x(a.px)),
                fmt(frame.y(a.py)),
                fmt(frame.x(b.px)),
                fmt(frame.y(b.py)),
                fmt(opacity),
            );
        }
    }

    // interrupt markers
    for step in &trace.steps {
        for a in &step.agents {
            if a.interrupt {
                let _ = writeln!(
                    svg,
                    "<circle cx=\"{}\" cy=\"{}\" r=\"3\" fill=\"#ffd700\" stroke=\"#806000\" \
                     stroke-width=\"0.5\"/>",
                    fmt(frame.x(a.px)),
                    fmt(frame.y(a.py)),
                );
            }
        }
    }

    // final poses: collision discs and terminal markers
    if let Some(last_seen) = final_positions(trace) {
        for i in 0..n {
            let (px, py) = last_seen[i];
            let color = PALETTE[i % PALETTE.len()];
            match trace.final_status[i] {
                AgentStatus::Collision => {
                    let _ = writeln!(
                        svg,
                        "<circle cx=\"{}\" cy=\"{}\" r=\"{}\" fill=\"#d62728\" \
                         fill-opacity=\"0.35\" stroke=\"#d62728\"/>",
                        fmt(frame.x(px)),
                        fmt(frame.y(py)),
                        fmt(trace.collision_radius * frame.scale),
                    );
                }
                AgentStatus::Success => {
                    let _ = writeln!(
                        svg,
                        "<circle cx=\"{}\" cy=\"{}\" r=\"5\" fill=\"none\" stroke=\"{color}\" \
                         stroke-width=\"2\"/>",
                        fmt(frame.x(px)),
                        fmt(frame.y(py)),
                    );
                }
                _ => {
                    let _ = writeln!(
                        svg,
                        "<circle cx=\"{}\" cy=\"{}\" r=\"3.5\" fill=\"{color}\"/>",
                        fmt(frame.x(px)),
                        fmt(frame.y(py)),
                    );
                }
            }
        }
    }

    svg.push_str("</svg>\n");
    svg
}

fn final_positions(trace: &EpisodeTrace) -> Option<Vec<(f64, f64)>> {
    let last = trace.steps.last()?;
    Some(last.agents.iter().map(|a| (a.px, a.py)).collect())
}

pub fn save_trace_svg(trace: &EpisodeTrace, path: &Path) -> std::io::Result<()> {
    std::fs::write(path, render_trace_svg(trace))
}
