use std::f64::consts::{FRAC_PI_2, PI};
use std::io::Write;
use std::sync::Arc;

use serde::Serialize;

use super::comparison::ComparisonPair;
use crate::error::{Error, Result};

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Orientation {
    /// Counterclockwise turns, crossable inward only through the gates.
    Entering,
    /// Clockwise turns, crossable outward only through the gates.
    Exiting,
}

/// Polyline on the level set `H_energy = level`, marched in angle.
#[derive(Clone, Debug, Serialize)]
pub struct SpiralArc {
    pub id: String,
    pub energy: usize,
    pub level: f64,
    pub phi: Vec<f64>,
    pub points: Vec<(f64, f64)>,
}

#[derive(Clone, Debug, Serialize)]
pub struct SpiralTurn {
    pub index: usize,
    /// Anchor on the positive y axis where the turn starts.
    pub y_start: f64,
    /// First x-axis anchor (x̂_j or x̌_j).
    pub x_first: f64,
    /// Second x-axis anchor (x̂_j′ or x̌_j′).
    pub x_second: f64,
    pub y_end: f64,
    pub arcs: Vec<SpiralArc>,
}

#[derive(Clone, Debug)]
pub struct SpiralCurve {
    pub orientation: Orientation,
    pub turns: Vec<SpiralTurn>,
    pub points_per_quadrant: usize,
    pub pair: Arc<ComparisonPair>,
}

/// Closed polyline `C_j`: the three arcs of a turn closed by the gate on the
/// positive y axis. Vertices are stored with increasing ray angle.
#[derive(Clone, Debug)]
pub struct ClosedCurve {
    pub phi: Vec<f64>,
    pub points: Vec<(f64, f64)>,
    pub gate: (f64, f64),
}

fn cross(a: (f64, f64), b: (f64, f64)) -> f64 {
    a.0 * b.1 - a.1 * b.0
}

fn segments_intersect(p1: (f64, f64), p2: (f64, f64), q1: (f64, f64), q2: (f64, f64)) -> bool {
    let d = |a: (f64, f64), b: (f64, f64), c: (f64, f64)| cross((b.0 - a.0, b.1 - a.1), (c.0 - a.0, c.1 - a.1));
    let d1 = d(q1, q2, p1);
    let d2 = d(q1, q2, p2);
    let d3 = d(p1, p2, q1);
    let d4 = d(p1, p2, q2);
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0)) && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0)) {
        return true;
    }
    let on = |a: (f64, f64), b: (f64, f64), c: (f64, f64)| {
        c.0 >= a.0.min(b.0) && c.0 <= a.0.max(b.0) && c.1 >= a.1.min(b.1) && c.1 <= a.1.max(b.1)
    };
    (d1 == 0.0 && on(q1, q2, p1))
        || (d2 == 0.0 && on(q1, q2, p2))
        || (d3 == 0.0 && on(p1, p2, q1))
        || (d4 == 0.0 && on(p1, p2, q2))
}

/// Ray angle in `[0, 2π)`, measured from the positive y axis towards +x.
pub fn ray_angle(x: f64, y: f64) -> f64 {
    let a = x.atan2(y);
    if a < 0.0 {
        a + 2.0 * PI
    } else {
        a
    }
}

impl ClosedCurve {
    /// Radius of the boundary along the ray at angle `phi` in `(0, 2π)`.
    pub fn boundary_radius(&self, phi: f64) -> f64 {
        let n = self.phi.len();
        let k = self.phi.partition_point(|v| *v <= phi).clamp(1, n - 1);
        let (p, q) = (self.points[k - 1], self.points[k]);
        let d = (phi.sin(), phi.cos());
        let e = (q.0 - p.0, q.1 - p.1);
        let den = cross(d, e);
        if den.abs() < 1e-300 {
            return p.0.hypot(p.1).max(q.0.hypot(q.1));
        }
        cross(p, e) / den
    }

    pub fn inside(&self, x: f64, y: f64) -> bool {
        if x == 0.0 {
            if y <= 0.0 {
                return y > -self.boundary_radius(PI);
            }
            return y < self.gate.0;
        }
        let phi = ray_angle(x, y);
        let r = self.boundary_radius(phi);
        x * x + y * y < r * r
    }

    /// Inside or on the boundary, with relative slack `tol`.
    pub fn contains(&self, x: f64, y: f64, tol: f64) -> bool {
        if x == 0.0 && y > 0.0 {
            return y <= self.gate.0 * (1.0 + tol);
        }
        x.hypot(y) <= self.boundary_radius(ray_angle(x, y)) * (1.0 + tol)
    }

    pub fn on_gate(&self, x: f64, y: f64, tol: f64) -> bool {
        x.abs() <= tol * (1.0 + y.abs()) && y >= self.gate.0 * (1.0 - tol) && y <= self.gate.1 * (1.0 + tol)
    }

    /// Edges including the closing gate segment.
    pub fn edges(&self) -> Vec<((f64, f64), (f64, f64))> {
        let n = self.points.len();
        let mut e: Vec<_> = (0..n - 1).map(|i| (self.points[i], self.points[i + 1])).collect();
        e.push((self.points[n - 1], self.points[0]));
        e
    }

    /// No two non-adjacent edges intersect.
    pub fn is_simple(&self) -> bool {
        let edges = self.edges();
        let n = edges.len();
        let bbox: Vec<_> = edges
            .iter()
            .map(|(a, b)| (a.0.min(b.0), a.0.max(b.0), a.1.min(b.1), a.1.max(b.1)))
            .collect();
        for i in 0..n {
            for j in i + 2..n {
                if i == 0 && j == n - 1 {
                    continue;
                }
                let (bi, bj) = (bbox[i], bbox[j]);
                if bi.1 < bj.0 || bj.1 < bi.0 || bi.3 < bj.2 || bj.3 < bi.2 {
                    continue;
                }
                let (p1, p2) = edges[i];
                let (q1, q2) = edges[j];
                if segments_intersect(p1, p2, q1, q2) {
                    return false;
                }
            }
        }
        true
    }

    /// Smallest distance from the origin to the boundary.
    pub fn min_radius(&self) -> f64 {
        self.edges()
            .iter()
            .map(|&(a, b)| {
                let e = (b.0 - a.0, b.1 - a.1);
                let l2 = e.0 * e.0 + e.1 * e.1;
                let s = if l2 > 0.0 { (-(a.0 * e.0 + a.1 * e.1) / l2).clamp(0.0, 1.0) } else { 0.0 };
                (a.0 + s * e.0).hypot(a.1 + s * e.1)
            })
            .fold(f64::INFINITY, f64::min)
    }

    pub fn max_radius(&self) -> f64 {
        self.points.iter().map(|p| p.0.hypot(p.1)).fold(0.0, f64::max)
    }
}

struct Chain<'a> {
    pair: &'a ComparisonPair,
    n: usize,
}

impl Chain<'_> {
    fn arc(&self, id: String, energy: usize, level: f64, phi_a: f64, phi_b: f64, ends: ((f64, f64), (f64, f64))) -> Result<SpiralArc> {
        let quadrants = ((phi_b - phi_a).abs() / FRAC_PI_2).round().max(1.0) as usize;
        let n = self.n * quadrants;
        let mut phi = Vec::with_capacity(n + 1);
        let mut points = Vec::with_capacity(n + 1);
        for k in 0..=n {
            let a = phi_a + (phi_b - phi_a) * k as f64 / n as f64;
            let p = if k == 0 {
                ends.0
            } else if k == n {
                ends.1
            } else {
                let r = self.pair.ray_radius(energy, level, a)?;
                (r * a.sin(), r * a.cos())
            };
            phi.push(a);
            points.push(p);
        }
        Ok(SpiralArc { id, energy, level, phi, points })
    }

    fn turn(&self, orientation: Orientation, j: usize, y_start: f64, scale: f64) -> Result<SpiralTurn> {
        let p = self.pair;
        let e = 0.5 * y_start * y_start;
        let (ea, eb, sa) = match orientation {
            Orientation::Entering => (2, 1, -1.0),
            Orientation::Exiting => (1, 2, 1.0),
        };
        let x_first = p.solve_g(ea, e, sa)?;
        let level_b = p.big_g(eb, x_first);
        let x_true = p.solve_g(eb, level_b, -sa)?;
        let x_second = scale * x_true;
        let level_c = p.big_g(ea, x_second);
        if !(level_c > 0.0) {
            return Err(Error::RootBracket(format!("turn {j}: closing level {level_c:e} is not positive")));
        }
        let y_end = (2.0 * level_c).sqrt();
        let id = |k: usize| format!("{j}.{k}");
        let arcs = match orientation {
            Orientation::Entering => vec![
                self.arc(id(1), ea, e, 2.0 * PI, 1.5 * PI, ((0.0, y_start), (x_first, 0.0)))?,
                self.arc(id(2), eb, level_b, 1.5 * PI, 0.5 * PI, ((x_first, 0.0), (x_true, 0.0)))?,
                self.arc(id(3), ea, level_c, 0.5 * PI, 0.0, ((x_second, 0.0), (0.0, y_end)))?,
            ],
            Orientation::Exiting => vec![
                self.arc(id(1), ea, e, 0.0, 0.5 * PI, ((0.0, y_start), (x_first, 0.0)))?,
                self.arc(id(2), eb, level_b, 0.5 * PI, 1.5 * PI, ((x_first, 0.0), (x_true, 0.0)))?,
                self.arc(id(3), ea, level_c, 1.5 * PI, 2.0 * PI, ((x_second, 0.0), (0.0, y_end)))?,
            ],
        };
        Ok(SpiralTurn { index: j, y_start, x_first, x_second, y_end, arcs })
    }
}

fn build_chain(pair: Arc<ComparisonPair>, orientation: Orientation, y_start: f64, turns: usize, n: usize, scale: f64) -> Result<SpiralCurve> {
    let floor = (2.0 * pair.e0).sqrt();
    if !(y_start > floor) {
        return Err(Error::Domain(format!("spiral start {y_start} must exceed sqrt(2 E0) = {floor}")));
    }
    if turns == 0 || n < 2 {
        return Err(Error::Config("spiral needs at least one turn and two points per quadrant".into()));
    }
    let chain = Chain { pair: &pair, n };
    let mut out = Vec::with_capacity(turns);
    let mut y = y_start;
    for j in 1..=turns {
        let turn = chain.turn(orientation, j, y, scale)?;
        y = turn.y_end;
        out.push(turn);
    }
    Ok(SpiralCurve { orientation, turns: out, points_per_quadrant: n, pair })
}

/// Guiding spiral with `turns` turns starting at `(0, y_start)`, 512 points
/// per quadrant.
pub fn build_spiral(pair: Arc<ComparisonPair>, orientation: Orientation, y_start: f64, turns: usize) -> Result<SpiralCurve> {
    build_chain(pair, orientation, y_start, turns, 512, 1.0)
}

pub fn build_spiral_with(
    pair: Arc<ComparisonPair>,
    orientation: Orientation,
    y_start: f64,
    turns: usize,
    points_per_quadrant: usize,
) -> Result<SpiralCurve> {
    build_chain(pair, orientation, y_start, turns, points_per_quadrant, 1.0)
}

impl SpiralCurve {
    /// y-axis anchors `y_1, ..., y_{turns+1}`.
    pub fn y_anchors(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self.turns.iter().map(|t| t.y_start).collect();
        if let Some(t) = self.turns.last() {
            v.push(t.y_end);
        }
        v
    }

    pub fn terminal_anchor(&self) -> f64 {
        self.turns.last().map(|t| t.y_end).unwrap_or(f64::NAN)
    }

    pub fn anchors_increasing(&self) -> bool {
        self.y_anchors().windows(2).all(|w| w[1] > w[0])
    }

    /// Largest gap between consecutive arc endpoints, including turn to turn.
    pub fn endpoint_mismatch(&self) -> f64 {
        let mut worst = 0.0f64;
        let mut prev: Option<(f64, f64)> = None;
        for turn in &self.turns {
            for arc in &turn.arcs {
                if let Some(p) = prev {
                    let q = arc.points[0];
                    worst = worst.max((p.0 - q.0).hypot(p.1 - q.1));
                }
                prev = arc.points.last().copied();
            }
        }
        worst
    }

    /// The closed curve of turn `j` (1-based).
    pub fn closed_curve(&self, j: usize) -> ClosedCurve {
        let turn = &self.turns[j - 1];
        let mut phi = Vec::new();
        let mut points = Vec::new();
        for arc in &turn.arcs {
            for (k, (&a, &p)) in arc.phi.iter().zip(&arc.points).enumerate() {
                if k == 0 && !points.is_empty() && points.last() == Some(&p) {
                    continue;
                }
                phi.push(a);
                points.push(p);
            }
        }
        if self.orientation == Orientation::Entering {
            phi.reverse();
            points.reverse();
        }
        ClosedCurve { phi, points, gate: (turn.y_start, turn.y_end) }
    }

    /// Every closed curve is simple.
    pub fn all_simple(&self) -> bool {
        (1..=self.turns.len()).all(|j| self.closed_curve(j).is_simple())
    }

    /// Disc of radius `disc` inside the first region and the regions nested.
    pub fn inclusion_chain(&self, disc: f64) -> bool {
        if self.turns.is_empty() || !(self.closed_curve(1).min_radius() > disc) {
            return false;
        }
        (1..self.turns.len()).all(|j| {
            let inner = self.closed_curve(j);
            let outer = self.closed_curve(j + 1);
            inner.points.iter().all(|p| outer.contains(p.0, p.1, 1e-9))
        })
    }

    /// Same chain with every second x-axis anchor scaled by `factor`; the
    /// closing arcs are retraced from the moved anchors, leaving a jump
    /// along the x axis. Used as a negative control for the barrier audit.
    pub fn corrupted(&self, factor: f64) -> Result<SpiralCurve> {
        build_chain(
            self.pair.clone(),
            self.orientation,
            self.turns[0].y_start,
            self.turns.len(),
            self.points_per_quadrant,
            factor,
        )
    }

    /// CSV polylines with columns `arc_id,x,y`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "arc_id,x,y")?;
        for turn in &self.turns {
            for arc in &turn.arcs {
                for p in &arc.points {
                    writeln!(w, "{},{:.17e},{:.17e}", arc.id, p.0, p.1)?;
                }
            }
        }
        Ok(())
    }
}
