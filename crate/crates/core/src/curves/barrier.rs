use std::f64::consts::PI;

use rayon::prelude::*;
use serde::Serialize;

use super::spiral::{ClosedCurve, Orientation, SpiralCurve};
use crate::error::{Error, Result};
use crate::integrator::{integrate_time, IntegratorConfig, StopCondition};
use crate::system::{PlanarField, State};

#[derive(Clone, Debug, Serialize)]
pub struct ProbeCrossing {
    pub probe: usize,
    pub turn: usize,
    pub t: f64,
    pub x: f64,
    pub y: f64,
    pub inward: bool,
    pub on_gate: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct BarrierReport {
    pub orientation: Orientation,
    pub sign_points: usize,
    pub sign_violations: usize,
    /// Most adverse value of the energy derivative, signed so that the
    /// barrier needs it to be nonnegative.
    pub worst_sign_margin: f64,
    pub probes: usize,
    pub failed_probes: usize,
    pub crossings: Vec<ProbeCrossing>,
    pub violations: Vec<ProbeCrossing>,
}

impl BarrierReport {
    pub fn passed(&self) -> bool {
        self.sign_violations == 0 && self.violations.is_empty()
    }
}

/// Energy derivative `g_i(x) f - y g` signed by orientation, at every 8th arc
/// point and every t of the comparison grid.
fn sign_audit(spiral: &SpiralCurve, fld: &PlanarField) -> (usize, usize, f64) {
    let pair = &spiral.pair;
    let sign = match spiral.orientation {
        Orientation::Entering => 1.0,
        Orientation::Exiting => -1.0,
    };
    let mut count = 0;
    let mut bad = 0;
    let mut worst = f64::INFINITY;
    for turn in &spiral.turns {
        for arc in &turn.arcs {
            for &(x, y) in arc.points.iter().step_by(8) {
                let gi = pair.g_i(arc.energy, x);
                for &t in &pair.t_grid {
                    let (f, g) = fld.fg(t, x, y);
                    let d = sign * (gi * f - y * g);
                    let scale = (gi * f).abs() + (y * g).abs();
                    count += 1;
                    worst = worst.min(d);
                    if d < -1e-9 * scale.max(1e-300) {
                        bad += 1;
                    }
                }
            }
        }
    }
    (count, bad, worst)
}

fn frac(v: f64) -> f64 {
    v - v.floor()
}

fn run_probe(
    spiral: &SpiralCurve,
    curves: &[ClosedCurve],
    fld: &PlanarField,
    p: usize,
    cfg: &IntegratorConfig,
) -> Option<Vec<ProbeCrossing>> {
    let j = p % curves.len();
    let curve = &curves[j];
    let phi = 2.0 * PI * frac((p + 1) as f64 * 0.618_033_988_749_895);
    let t0 = fld.period * frac((p + 1) as f64 * 0.414_213_562_373_095);
    let factor = match spiral.orientation {
        Orientation::Entering => 1.03,
        Orientation::Exiting => 0.97,
    };
    let r = factor * curve.boundary_radius(phi);
    let s0 = State::new(t0, r * phi.sin(), r * phi.cos());
    let seg = integrate_time(fld, s0, StopCondition::UntilRotation(2.5 * PI), cfg);
    if seg.samples.len() < 2 {
        return None;
    }
    let samples = seg.dense_samples(16);
    let mut out = Vec::new();
    let mut prev = &samples[0];
    let mut prev_in = curve.inside(prev.x, prev.y);
    for s in &samples[1..] {
        let now_in = curve.inside(s.x, s.y);
        if now_in != prev_in {
            let (mut a, mut b) = (prev.t, s.t);
            let mut hit = (s.x, s.y, s.t);
            for _ in 0..200 {
                let m = 0.5 * (a + b);
                if m <= a || m >= b {
                    break;
                }
                let q = seg.state_at(m)?;
                if curve.inside(q.x, q.y) == prev_in {
                    a = m;
                } else {
                    b = m;
                    hit = (q.x, q.y, q.t);
                }
            }
            out.push(ProbeCrossing {
                probe: p,
                turn: j + 1,
                t: hit.2,
                x: hit.0,
                y: hit.1,
                inward: now_in,
                on_gate: curve.on_gate(hit.0, hit.1, 1e-6),
            });
        }
        prev = s;
        prev_in = now_in;
    }
    Some(out)
}

/// Sign audit of the energy derivative on the arcs plus `n_probes` simulated
/// trajectories started just outside (entering) or inside (exiting) the
/// closed curves. Returns `BarrierViolation` if either check fails.
pub fn barrier_check(
    spiral: &SpiralCurve,
    fld: &PlanarField,
    n_probes: usize,
    cfg: &IntegratorConfig,
) -> Result<BarrierReport> {
    let report = barrier_audit(spiral, fld, n_probes, cfg);
    if report.sign_violations > 0 {
        return Err(Error::BarrierViolation(format!(
            "{} of {} sign samples have the wrong energy derivative (worst {:e})",
            report.sign_violations, report.sign_points, report.worst_sign_margin
        )));
    }
    if let Some(v) = report.violations.first() {
        return Err(Error::BarrierViolation(format!(
            "probe {} crossed curve {} {} off the gate at t={}, (x, y) = ({}, {}); {} violations total",
            v.probe,
            v.turn,
            if v.inward { "inward" } else { "outward" },
            v.t,
            v.x,
            v.y,
            report.violations.len()
        )));
    }
    Ok(report)
}

/// Like [`barrier_check`] but returns the report regardless of outcome.
pub fn barrier_audit(spiral: &SpiralCurve, fld: &PlanarField, n_probes: usize, cfg: &IntegratorConfig) -> BarrierReport {
    let (sign_points, sign_violations, worst_sign_margin) = sign_audit(spiral, fld);
    let curves: Vec<ClosedCurve> = (1..=spiral.turns.len()).map(|j| spiral.closed_curve(j)).collect();
    let cfg = cfg.with_time_guard(cfg.time_guard.min(100.0 * fld.period));
    let results: Vec<Option<Vec<ProbeCrossing>>> =
        (0..n_probes).into_par_iter().map(|p| run_probe(spiral, &curves, fld, p, &cfg)).collect();
    let failed_probes = results.iter().filter(|r| r.is_none()).count();
    let crossings: Vec<ProbeCrossing> = results.into_iter().flatten().flatten().collect();
    let guarded_inward = spiral.orientation == Orientation::Entering;
    let violations = crossings.iter().filter(|c| c.inward == guarded_inward && !c.on_gate).cloned().collect();
    BarrierReport {
        orientation: spiral.orientation,
        sign_points,
        sign_violations,
        worst_sign_margin,
        probes: n_probes,
        failed_probes,
        crossings,
        violations,
    }
}
