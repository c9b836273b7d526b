//! SVG rendering of two-dimensional partitions.
//!
//! Cells are computed by clipping the plot box against the bisector
//! half-planes of each center. Every clipped edge remembers which bisector
//! produced it, so shared cell boundaries are drawn exactly once.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{QuantizationSolution, QuantizerError, Result};
use crate::scenario::ScenarioSet;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 640.0;
const MARGIN: f64 = 40.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlotBox {
    pub min: [f64; 2],
    pub max: [f64; 2],
}

impl PlotBox {
    /// Bounding box of scenarios and centers, padded by 10% per side.
    pub fn around(set: &ScenarioSet, centers: &[Vec<f64>]) -> Self {
        let mut min = [f64::INFINITY; 2];
        let mut max = [f64::NEG_INFINITY; 2];
        for p in set.points().chain(centers.iter().map(Vec::as_slice)) {
            for j in 0..2 {
                min[j] = min[j].min(p[j]);
                max[j] = max[j].max(p[j]);
            }
        }
        for j in 0..2 {
            let pad = ((max[j] - min[j]) * 0.1).max(0.5);
            min[j] -= pad;
            max[j] += pad;
        }
        Self { min, max }
    }

    fn corners(&self) -> Vec<[f64; 2]> {
        vec![
            [self.min[0], self.min[1]],
            [self.max[0], self.min[1]],
            [self.max[0], self.max[1]],
            [self.min[0], self.max[1]],
        ]
    }
}

/// Where a polygon edge came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EdgeSource {
    Box,
    /// Bisector with the given other center.
    Bisector(usize),
}

/// Convex polygon; edge `i` runs from `vertices[i]` to `vertices[i + 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub vertices: Vec<[f64; 2]>,
    pub edges: Vec<EdgeSource>,
}

impl Cell {
    /// Even-odd ray test; points on the boundary may go either way.
    pub fn contains(&self, p: [f64; 2]) -> bool {
        let v = &self.vertices;
        let mut inside = false;
        let mut j = v.len().wrapping_sub(1);
        for i in 0..v.len() {
            if (v[i][1] > p[1]) != (v[j][1] > p[1])
                && p[0] < (v[j][0] - v[i][0]) * (p[1] - v[i][1]) / (v[j][1] - v[i][1]) + v[i][0]
            {
                inside = !inside;
            }
            j = i;
        }
        inside
    }
}

/// Voronoi cells of `centers` clipped to `plot`.
pub fn voronoi_cells(centers: &[Vec<f64>], plot: &PlotBox) -> Vec<Cell> {
    (0..centers.len())
        .map(|s| {
            let mut cell = Cell {
                vertices: plot.corners(),
                edges: vec![EdgeSource::Box; 4],
            };
            for j in 0..centers.len() {
                if j != s {
                    cell = clip(&cell, &centers[s], &centers[j], j);
                }
            }
            cell
        })
        .collect()
}

// Keeps the half-plane of points at least as close to `own` as to `other`:
// a.x <= b with a = 2 (other - own), b = |other|^2 - |own|^2.
fn clip(cell: &Cell, own: &[f64], other: &[f64], other_index: usize) -> Cell {
    let a = [2.0 * (other[0] - own[0]), 2.0 * (other[1] - own[1])];
    let b = other[0] * other[0] + other[1] * other[1] - own[0] * own[0] - own[1] * own[1];
    let side = |p: &[f64; 2]| a[0] * p[0] + a[1] * p[1] - b;
    let mut out = Cell {
        vertices: Vec::new(),
        edges: Vec::new(),
    };
    let n = cell.vertices.len();
    for i in 0..n {
        let (p, q) = (cell.vertices[i], cell.vertices[(i + 1) % n]);
        let (fp, fq) = (side(&p), side(&q));
        let (p_in, q_in) = (fp <= 0.0, fq <= 0.0);
        let cross = || {
            let t = fp / (fp - fq);
            [p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])]
        };
        match (p_in, q_in) {
            (true, true) => {
                out.vertices.push(p);
                out.edges.push(cell.edges[i]);
            }
            (true, false) => {
                out.vertices.push(p);
                out.edges.push(cell.edges[i]);
                out.vertices.push(cross());
                out.edges.push(EdgeSource::Bisector(other_index));
            }
            (false, true) => {
                out.vertices.push(cross());
                out.edges.push(cell.edges[i]);
            }
            (false, false) => {}
        }
    }
    out
}

/// Boundary segments shared by two cells, each emitted once.
pub fn boundary_segments(cells: &[Cell]) -> Vec<[[f64; 2]; 2]> {
    let mut segments = Vec::new();
    for (s, cell) in cells.iter().enumerate() {
        let n = cell.vertices.len();
        for (i, edge) in cell.edges.iter().enumerate() {
            if let EdgeSource::Bisector(j) = *edge {
                let (p, q) = (cell.vertices[i], cell.vertices[(i + 1) % n]);
                let length = ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt();
                if s < j && length > 1e-12 {
                    segments.push([p, q]);
                }
            }
        }
    }
    segments
}

/// SVG document with cells, boundaries, scenario points (area
/// proportional to weight) and centers.
pub fn render_partition_svg(solution: &QuantizationSolution, set: &ScenarioSet) -> Result<String> {
    if set.dim() != 2 {
        return Err(QuantizerError::DimensionNotTwo(set.dim()));
    }
    if solution.partition.dim() != 2 {
        return Err(QuantizerError::DimensionNotTwo(solution.partition.dim()));
    }
    let centers = solution.partition.centers();
    let plot = PlotBox::around(set, centers);
    let cells = voronoi_cells(centers, &plot);
    let sx = (WIDTH - 2.0 * MARGIN) / (plot.max[0] - plot.min[0]);
    let sy = (HEIGHT - 2.0 * MARGIN) / (plot.max[1] - plot.min[1]);
    let px = |p: [f64; 2]| (MARGIN + (p[0] - plot.min[0]) * sx, HEIGHT - MARGIN - (p[1] - plot.min[1]) * sy);
    let points = |vs: &[[f64; 2]]| {
        vs.iter()
            .map(|&v| {
                let (x, y) = px(v);
                format!("{x:.2},{y:.2}")
            })
            .collect::<Vec<_>>()
            .join(" ")
    };
    const PALETTE: [&str; 8] = [
        "#dbe9f6", "#fde0c5", "#d9f0d3", "#f4d6e6", "#e8e1f5", "#fff5bf", "#d5eeee", "#eadccf",
    ];

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    for (s, cell) in cells.iter().enumerate() {
        let _ = writeln!(
            svg,
            r#"<polygon class="cell" data-state="{}" points="{}" fill="{}" stroke="none"/>"#,
            s + 1,
            points(&cell.vertices),
            PALETTE[s % PALETTE.len()]
        );
    }
    for seg in boundary_segments(&cells) {
        let _ = writeln!(
            svg,
            r##"<polyline class="boundary" points="{}" fill="none" stroke="#333" stroke-width="1.5"/>"##,
            points(&seg)
        );
    }
    let max_w = set.weights().iter().cloned().fold(0.0, f64::max);
    for (l, p) in set.points().enumerate() {
        let (x, y) = px([p[0], p[1]]);
        let r = 2.0 + 4.0 * (set.weight(l) / max_w).sqrt();
        let _ = writeln!(
            svg,
            r##"<circle class="scenario" cx="{x:.2}" cy="{y:.2}" r="{r:.2}" fill="#1f77b4" fill-opacity="0.7"/>"##
        );
    }
    for (s, c) in centers.iter().enumerate() {
        let (x, y) = px([c[0], c[1]]);
        let _ = writeln!(
            svg,
            r##"<path class="center" data-state="{}" d="M {:.2} {:.2} l 12 12 m 0 -12 l -12 12" stroke="#d62728" stroke-width="2.5"/>"##,
            s + 1,
            x - 6.0,
            y - 6.0
        );
        let _ = writeln!(
            svg,
            r#"<text x="{:.2}" y="{:.2}" font-family="sans-serif" font-size="13">ω{}</text>"#,
            x + 8.0,
            y - 8.0,
            s + 1
        );
    }
    let (x0, y0) = px(plot.min);
    let (x1, y1) = px(plot.max);
    let _ = writeln!(
        svg,
        r#"<rect class="frame" x="{x0:.2}" y="{y1:.2}" width="{:.2}" height="{:.2}" fill="none" stroke="black"/>"#,
        x1 - x0,
        y0 - y1
    );
    let _ = writeln!(
        svg,
        r#"<text x="{:.2}" y="{:.2}" font-family="sans-serif" font-size="12">ξ1</text>"#,
        WIDTH / 2.0,
        HEIGHT - 10.0
    );
    let _ = writeln!(
        svg,
        r#"<text x="8" y="{:.2}" font-family="sans-serif" font-size="12">ξ2</text>"#,
        HEIGHT / 2.0
    );
    svg.push_str("</svg>\n");
    Ok(svg)
}

pub fn export_partition_svg(solution: &QuantizationSolution, set: &ScenarioSet, path: impl AsRef<Path>) -> Result<()> {
    let svg = render_partition_svg(solution, set)?;
    fs::write(path, svg)?;
    Ok(())
}
