//! Deterministic SVG renderings of 2-D decision geometry.
//!
//! A plot shows the substitute's cross-entropy contours, the decision
//! boundaries of the substitute (solid) and an optional victim (dashed), the
//! attacked input, sampled boundary points and an attack trajectory. Inputs of
//! dimension above two are drawn on a planar slice through an anchor point.
//!
//! Output bytes depend only on the scene and the spec: coordinates are written
//! with a fixed number of decimals and contour chains are emitted in a
//! canonical order.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{LabeledPoint, ModelParams};

/// A chain of points in plot coordinates.
pub type Polyline = Vec<[f64; 2]>;

/// Planar slice of a higher-dimensional input space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Slice {
    /// Input coordinates mapped to the horizontal and vertical axes.
    pub dims: (usize, usize),
    /// Values of every other coordinate.
    pub anchor: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlotSpec {
    /// Grid cells per side used for contouring.
    pub resolution: usize,
    /// Visible window as `[u_min, u_max, v_min, v_max]`.
    pub window: [f64; 4],
    pub loss_levels: usize,
    /// Side length of the square drawing area in pixels.
    pub size_px: f64,
    pub slice: Option<Slice>,
}

impl Default for PlotSpec {
    fn default() -> Self {
        PlotSpec { resolution: 96, window: [0.0, 1.0, 0.0, 1.0], loss_levels: 8, size_px: 480.0, slice: None }
    }
}

/// Everything drawn in one figure.
#[derive(Debug, Clone, Copy)]
pub struct Scene<'a> {
    pub substitute: &'a ModelParams,
    pub victim: Option<&'a ModelParams>,
    /// Attacked input; its label selects the loss that is contoured.
    pub input: Option<&'a LabeledPoint>,
    pub boundary_points: &'a [Vec<f64>],
    pub trajectory: &'a [Vec<f64>],
}

/// Maps plot coordinates to full input vectors and back.
#[derive(Debug, Clone)]
pub struct Plane {
    dims: (usize, usize),
    anchor: Vec<f64>,
}

impl Plane {
    pub fn new(input_dim: usize, slice: Option<&Slice>) -> Result<Self> {
        match slice {
            None if input_dim == 2 => Ok(Plane { dims: (0, 1), anchor: vec![0.0; 2] }),
            None => Err(Error::InvalidInput(format!(
                "input dimension {input_dim} needs a slice (two axes and an anchor) to plot"
            ))),
            Some(s) => {
                let (i, j) = s.dims;
                if s.anchor.len() != input_dim {
                    return Err(Error::InvalidInput(format!(
                        "slice anchor has {} coordinates, model expects {input_dim}",
                        s.anchor.len()
                    )));
                }
                if i == j || i >= input_dim || j >= input_dim {
                    return Err(Error::InvalidInput(format!(
                        "invalid slice axes ({i}, {j}) for dimension {input_dim}"
                    )));
                }
                Ok(Plane { dims: s.dims, anchor: s.anchor.clone() })
            }
        }
    }

    pub fn lift(&self, u: f64, v: f64) -> Vec<f64> {
        let mut x = self.anchor.clone();
        x[self.dims.0] = u;
        x[self.dims.1] = v;
        x
    }

    pub fn project(&self, x: &[f64]) -> [f64; 2] {
        [x[self.dims.0], x[self.dims.1]]
    }

    pub fn dims(&self) -> (usize, usize) {
        self.dims
    }
}

/// Scalar field sampled on a regular grid, `values[j][i]` at `(us[i], vs[j])`.
#[derive(Debug, Clone)]
pub struct Grid {
    pub us: Vec<f64>,
    pub vs: Vec<f64>,
    pub values: Vec<Vec<f64>>,
}

impl Grid {
    pub fn sample(spec: &PlotSpec, mut f: impl FnMut(f64, f64) -> Result<f64>) -> Result<Self> {
        let n = spec.resolution;
        let [u0, u1, v0, v1] = spec.window;
        let us: Vec<f64> = (0..=n).map(|i| u0 + (u1 - u0) * i as f64 / n as f64).collect();
        let vs: Vec<f64> = (0..=n).map(|j| v0 + (v1 - v0) * j as f64 / n as f64).collect();
        let mut values = Vec::with_capacity(vs.len());
        for &v in &vs {
            let row = us.iter().map(|&u| f(u, v)).collect::<Result<Vec<_>>>()?;
            values.push(row);
        }
        Ok(Grid { us, vs, values })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Edge {
    // Between nodes (i, j) and (i + 1, j).
    Horizontal(usize, usize),
    // Between nodes (i, j) and (i, j + 1).
    Vertical(usize, usize),
}

/// Level set `values == level` by marching squares, chained into polylines.
///
/// Every vertex lies on a grid edge whose endpoints sit on opposite sides of
/// the level; ambiguous saddle cells are resolved by the cell-centre average.
pub fn contour(grid: &Grid, level: f64) -> Vec<Polyline> {
    let nu = grid.us.len();
    let nv = grid.vs.len();
    if nu < 2 || nv < 2 {
        return Vec::new();
    }
    let above = |i: usize, j: usize| grid.values[j][i] > level;
    let mut segments: Vec<(Edge, Edge)> = Vec::new();
    for j in 0..nv - 1 {
        for i in 0..nu - 1 {
            let corners = [above(i, j), above(i + 1, j), above(i + 1, j + 1), above(i, j + 1)];
            // Edge k joins corner k and corner k + 1.
            let edges =
                [Edge::Horizontal(i, j), Edge::Vertical(i + 1, j), Edge::Horizontal(i, j + 1), Edge::Vertical(i, j)];
            let crossed: Vec<usize> = (0..4).filter(|&k| corners[k] != corners[(k + 1) % 4]).collect();
            match crossed.len() {
                2 => segments.push((edges[crossed[0]], edges[crossed[1]])),
                4 => {
                    let centre =
                        (grid.values[j][i] + grid.values[j][i + 1] + grid.values[j + 1][i + 1] + grid.values[j + 1][i])
                            / 4.0;
                    let centre_above = centre > level;
                    for k in 0..4 {
                        if corners[k] != centre_above {
                            segments.push((edges[(k + 3) % 4], edges[k]));
                        }
                    }
                }
                _ => {}
            }
        }
    }

    let mut incident: BTreeMap<Edge, Vec<usize>> = BTreeMap::new();
    for (s, &(a, b)) in segments.iter().enumerate() {
        incident.entry(a).or_default().push(s);
        incident.entry(b).or_default().push(s);
    }
    let mut used = vec![false; segments.len()];
    let mut chains = Vec::new();
    let open_starts: Vec<Edge> = incident.iter().filter(|(_, s)| s.len() == 1).map(|(e, _)| *e).collect();
    let all_starts: Vec<Edge> = incident.keys().copied().collect();
    for start in open_starts.into_iter().chain(all_starts) {
        let mut edges = vec![start];
        let mut at = start;
        while let Some(&s) = incident[&at].iter().find(|&&s| !used[s]) {
            used[s] = true;
            let (a, b) = segments[s];
            at = if a == at { b } else { a };
            edges.push(at);
        }
        if edges.len() > 1 {
            chains.push(edges.into_iter().map(|e| edge_point(grid, e, level)).collect());
        }
    }
    chains
}

fn edge_point(grid: &Grid, edge: Edge, level: f64) -> [f64; 2] {
    let lerp = |a: f64, b: f64, fa: f64, fb: f64| a + (level - fa) / (fb - fa) * (b - a);
    match edge {
        Edge::Horizontal(i, j) => {
            [lerp(grid.us[i], grid.us[i + 1], grid.values[j][i], grid.values[j][i + 1]), grid.vs[j]]
        }
        Edge::Vertical(i, j) => {
            [grid.us[i], lerp(grid.vs[j], grid.vs[j + 1], grid.values[j][i], grid.values[j + 1][i])]
        }
    }
}

/// Margin of class `c`: its logit minus the largest competing logit.
pub fn class_margin(logits: &[f64], c: usize) -> f64 {
    let rival = logits.iter().enumerate().filter(|&(j, _)| j != c).map(|(_, &l)| l).fold(f64::NEG_INFINITY, f64::max);
    logits[c] - rival
}

/// Decision-boundary polylines of `model` on the plotted plane.
///
/// Each class contributes the zero set of its margin; for two classes only
/// the first is traced since both margins share a zero set.
pub fn decision_polylines(model: &ModelParams, spec: &PlotSpec) -> Result<Vec<Polyline>> {
    let plane = Plane::new(model.input_dim(), spec.slice.as_ref())?;
    validate_spec(spec)?;
    let logits = logit_grid(model, &plane, spec)?;
    let k = model.num_classes();
    let traced = if k == 2 { 1 } else { k };
    let mut lines = Vec::new();
    for c in 0..traced {
        let values = logits.values.iter().map(|row| row.iter().map(|l| class_margin(l, c)).collect()).collect();
        let grid = Grid { us: logits.us.clone(), vs: logits.vs.clone(), values };
        lines.extend(contour(&grid, 0.0));
    }
    Ok(lines)
}

struct LogitGrid {
    us: Vec<f64>,
    vs: Vec<f64>,
    values: Vec<Vec<Vec<f64>>>,
}

fn logit_grid(model: &ModelParams, plane: &Plane, spec: &PlotSpec) -> Result<LogitGrid> {
    let shape = Grid::sample(spec, |_, _| Ok(0.0))?;
    let values = shape
        .vs
        .iter()
        .map(|&v| shape.us.iter().map(|&u| model.forward(&plane.lift(u, v))).collect::<Result<Vec<_>>>())
        .collect::<Result<Vec<_>>>()?;
    Ok(LogitGrid { us: shape.us, vs: shape.vs, values })
}

fn validate_spec(spec: &PlotSpec) -> Result<()> {
    let [u0, u1, v0, v1] = spec.window;
    if spec.resolution < 2 {
        return Err(Error::InvalidConfig(format!("plot resolution must be at least 2, got {}", spec.resolution)));
    }
    if !(u0 < u1 && v0 < v1) || spec.window.iter().any(|w| !w.is_finite()) {
        return Err(Error::InvalidConfig(format!("plot window {:?} is empty or not finite", spec.window)));
    }
    if !(spec.size_px.is_finite() && spec.size_px > 0.0) {
        return Err(Error::InvalidConfig(format!("plot size must be positive, got {}", spec.size_px)));
    }
    Ok(())
}

const MARGIN_PX: f64 = 24.0;

struct Canvas {
    window: [f64; 4],
    size: f64,
    out: String,
}

impl Canvas {
    fn px(&self, p: [f64; 2]) -> (f64, f64) {
        let [u0, u1, v0, v1] = self.window;
        (MARGIN_PX + (p[0] - u0) / (u1 - u0) * self.size, MARGIN_PX + (v1 - p[1]) / (v1 - v0) * self.size)
    }

    fn polyline(&mut self, line: &[[f64; 2]]) {
        self.out.push_str("<polyline points=\"");
        for (n, &p) in line.iter().enumerate() {
            let (x, y) = self.px(p);
            if n > 0 {
                self.out.push(' ');
            }
            let _ = write!(self.out, "{x:.2},{y:.2}");
        }
        self.out.push_str("\"/>\n");
    }

    fn circle(&mut self, p: [f64; 2], r: f64) {
        let (x, y) = self.px(p);
        let _ = writeln!(self.out, "<circle cx=\"{x:.2}\" cy=\"{y:.2}\" r=\"{r:.1}\"/>");
    }
}

/// Renders a scene to an SVG document.
pub fn render_svg(scene: &Scene<'_>, spec: &PlotSpec) -> Result<String> {
    validate_spec(spec)?;
    let model = scene.substitute;
    let plane = Plane::new(model.input_dim(), spec.slice.as_ref())?;
    if let Some(victim) = scene.victim {
        if victim.input_dim() != model.input_dim() {
            return Err(Error::InvalidInput(format!(
                "victim input dimension {} differs from substitute {}",
                victim.input_dim(),
                model.input_dim()
            )));
        }
    }
    for p in scene.boundary_points.iter().chain(scene.trajectory).chain(scene.input.map(|i| &i.x)) {
        if p.len() != model.input_dim() {
            return Err(Error::InvalidInput(format!(
                "plotted point has {} coordinates, model expects {}",
                p.len(),
                model.input_dim()
            )));
        }
    }

    let full = spec.size_px + 2.0 * MARGIN_PX;
    let mut c = Canvas { window: spec.window, size: spec.size_px, out: String::new() };
    let _ = writeln!(
        c.out,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{full:.0}\" height=\"{full:.0}\" viewBox=\"0 0 {full:.0} {full:.0}\">"
    );
    let _ = writeln!(c.out, "<rect x=\"0\" y=\"0\" width=\"{full:.0}\" height=\"{full:.0}\" fill=\"#ffffff\"/>");
    let _ = writeln!(
        c.out,
        "<rect x=\"{MARGIN_PX:.0}\" y=\"{MARGIN_PX:.0}\" width=\"{0:.0}\" height=\"{0:.0}\" fill=\"none\" stroke=\"#808080\"/>",
        spec.size_px
    );

    if let Some(input) = scene.input {
        let loss = Grid::sample(spec, |u, v| model.loss(&plane.lift(u, v), input.y))?;
        let lo = loss.values.iter().flatten().copied().fold(f64::INFINITY, f64::min);
        let hi = loss.values.iter().flatten().copied().fold(f64::NEG_INFINITY, f64::max);
        c.out.push_str("<g class=\"loss-contours\" fill=\"none\" stroke=\"#8fb3cc\" stroke-width=\"0.8\">\n");
        if hi > lo {
            for n in 1..=spec.loss_levels {
                let level = lo + (hi - lo) * n as f64 / (spec.loss_levels + 1) as f64;
                for line in contour(&loss, level) {
                    c.polyline(&line);
                }
            }
        }
        c.out.push_str("</g>\n");
    }

    c.out.push_str("<g class=\"substitute-boundary\" fill=\"none\" stroke=\"#000000\" stroke-width=\"2\">\n");
    for line in decision_polylines(model, spec)? {
        c.polyline(&line);
    }
    c.out.push_str("</g>\n");
    if let Some(victim) = scene.victim {
        c.out.push_str("<g class=\"victim-boundary\" fill=\"none\" stroke=\"#000000\" stroke-width=\"1.5\" stroke-dasharray=\"6 4\">\n");
        for line in decision_polylines(victim, spec)? {
            c.polyline(&line);
        }
        c.out.push_str("</g>\n");
    }

    if !scene.boundary_points.is_empty() {
        c.out.push_str("<g class=\"boundary-points\" fill=\"#d95f02\">\n");
        for p in scene.boundary_points {
            c.circle(plane.project(p), 2.5);
        }
        c.out.push_str("</g>\n");
    }
    if !scene.trajectory.is_empty() {
        let line: Vec<[f64; 2]> = scene.trajectory.iter().map(|p| plane.project(p)).collect();
        c.out.push_str("<g class=\"trajectory\" fill=\"none\" stroke=\"#1b6ac9\" stroke-width=\"1.5\">\n");
        c.polyline(&line);
        c.out.push_str("</g>\n<g class=\"iterates\" fill=\"#1b6ac9\">\n");
        for &p in &line {
            c.circle(p, 2.0);
        }
        c.out.push_str("</g>\n");
    }
    if let Some(input) = scene.input {
        c.out.push_str("<g class=\"input\" fill=\"#000000\" stroke=\"#ffffff\">\n");
        c.circle(plane.project(&input.x), 5.0);
        c.out.push_str("</g>\n");
    }
    let (du, dv) = plane.dims();
    let _ = writeln!(
        c.out,
        "<text x=\"{:.0}\" y=\"{:.0}\" font-family=\"monospace\" font-size=\"12\" text-anchor=\"middle\">x{du}</text>",
        MARGIN_PX + spec.size_px / 2.0,
        full - 6.0
    );
    let _ = writeln!(
        c.out,
        "<text x=\"12\" y=\"{:.0}\" font-family=\"monospace\" font-size=\"12\" text-anchor=\"middle\" transform=\"rotate(-90 12 {0:.0})\">x{dv}</text>",
        MARGIN_PX + spec.size_px / 2.0
    );
    c.out.push_str("</svg>\n");
    Ok(c.out)
}
