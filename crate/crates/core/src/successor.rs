//! The successor map: from a point `(t0, 0, y0)` on the positive y half-axis
//! to the next return after exactly one full turn of the unwrapped angle.

use std::f64::consts::{FRAC_PI_2, PI};

use serde::Serialize;

use crate::error::{Error, Result, SuccessorFailure};
use crate::integrator::{
    integrate_time, Axis, CrossingEvent, IntegratorConfig, SegmentStatus, StopCondition,
    TrajectorySegment,
};
use crate::system::{PlanarField, State};

#[derive(Clone, Debug, Serialize)]
pub struct SuccessorResult {
    pub t0: f64,
    pub y0: f64,
    pub t1: f64,
    pub y1: f64,
    /// Crossings of pos_x, neg_y, neg_x and the returning pos_y, in order.
    pub crossings: [CrossingEvent; 4],
    pub min_radius: f64,
    pub max_radius: f64,
    pub steps: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct IterateResult {
    pub turns: Vec<SuccessorResult>,
    pub t_m: f64,
    pub y_m: f64,
}

#[derive(Copy, Clone, Debug, Serialize, PartialEq)]
pub struct RotationCount {
    pub value: f64,
    pub interval: (f64, f64),
}

/// Two tolerance settings disagree by more than their error estimates.
#[derive(Clone, Debug, Serialize)]
pub struct NonUniquenessWarning {
    pub dt1: f64,
    pub dy1: f64,
    pub bound: f64,
}

/// Successor together with the full arc it was computed from.
pub fn successor_with_trajectory(
    fld: &PlanarField,
    t0: f64,
    y0: f64,
    cfg: &IntegratorConfig,
) -> Result<(SuccessorResult, TrajectorySegment)> {
    if !(y0 > 0.0 && y0.is_finite()) {
        return Err(Error::Domain(format!("successor needs y0 > 0, got {y0}")));
    }
    let seg = integrate_time(fld, State::new(t0, 0.0, y0), StopCondition::UntilRotation(2.0 * PI), cfg);
    if seg.status != SegmentStatus::HitEvent {
        let kind = SuccessorFailure::from_status(seg.status);
        return Err(Error::successor(1, kind, seg));
    }
    let end = *seg.last();
    if !(end.y > 0.0) {
        return Err(Error::successor(1, SuccessorFailure::NegativeReturn, seg));
    }
    let mut picked: [Option<CrossingEvent>; 4] = [None; 4];
    for c in seg.crossings.iter().filter(|c| c.forward) {
        let n = (c.theta / FRAC_PI_2).round() as i64;
        if (1..=4).contains(&n) {
            picked[(n - 1) as usize] = Some(*c);
        }
    }
    let crossings = match picked {
        [Some(a), Some(b), Some(c), Some(d)] => [a, b, c, d],
        _ => return Err(Error::successor(1, SuccessorFailure::StepFailure, seg)),
    };
    let dense = seg.dense_samples(4);
    let (mut rmin, mut rmax) = (f64::INFINITY, 0.0f64);
    for s in &dense {
        let r2 = s.radius_sq();
        rmin = rmin.min(r2);
        rmax = rmax.max(r2);
    }
    let res = SuccessorResult {
        t0,
        y0,
        t1: end.t,
        y1: end.y,
        crossings,
        min_radius: rmin.sqrt(),
        max_radius: rmax.sqrt(),
        steps: seg.steps(),
    };
    Ok((res, seg))
}

pub fn successor(fld: &PlanarField, t0: f64, y0: f64, cfg: &IntegratorConfig) -> Result<SuccessorResult> {
    successor_with_trajectory(fld, t0, y0, cfg).map(|r| r.0)
}

fn with_turn(err: Error, turn: usize) -> Error {
    match err {
        Error::Successor(mut e) => {
            e.turn = turn;
            Error::Successor(e)
        }
        other => other,
    }
}

pub fn successor_iterate(
    fld: &PlanarField,
    t0: f64,
    y0: f64,
    m: usize,
    cfg: &IntegratorConfig,
) -> Result<IterateResult> {
    if m == 0 {
        return Err(Error::Domain("iterate count must be at least 1".into()));
    }
    let mut turns = Vec::with_capacity(m);
    let (mut t, mut y) = (t0, y0);
    for j in 1..=m {
        let r = successor(fld, t, y, cfg).map_err(|e| with_turn(e, j))?;
        t = r.t1;
        y = r.y1;
        turns.push(r);
    }
    Ok(IterateResult { turns, t_m: t, y_m: y })
}

/// Rotation number of the arc over `[a, b]` from the unwrapped lift.
pub fn rotation_number(seg: &TrajectorySegment, a: f64, b: f64) -> Result<RotationCount> {
    let sa = seg.state_at(a).ok_or_else(|| Error::Domain(format!("{a} outside segment")))?;
    let sb = seg.state_at(b).ok_or_else(|| Error::Domain(format!("{b} outside segment")))?;
    for s in seg.samples.iter().filter(|s| s.t >= a && s.t <= b) {
        if s.radius_sq().sqrt() < 1e-14 {
            return Err(Error::Domain(format!("trajectory passes through the origin near t={}", s.t)));
        }
    }
    Ok(RotationCount { value: (sb.theta - sa.theta) / (2.0 * PI), interval: (a, b) })
}

/// Number of dense samples whose signs break the quadrant table between
/// consecutive crossings (first quadrant, then fourth, third, second).
pub fn quadrant_violations(res: &SuccessorResult, seg: &TrajectorySegment, per_step: usize) -> usize {
    let bounds = [
        res.t0,
        res.crossings[0].t_cross,
        res.crossings[1].t_cross,
        res.crossings[2].t_cross,
        res.crossings[3].t_cross,
    ];
    let signs = [(1.0, 1.0), (1.0, -1.0), (-1.0, -1.0), (-1.0, 1.0)];
    let mut bad = 0;
    for s in seg.dense_samples(per_step) {
        for q in 0..4 {
            if s.t > bounds[q] && s.t < bounds[q + 1] {
                let (sx, sy) = signs[q];
                if !(s.x * sx > 0.0 && s.y * sy > 0.0) {
                    bad += 1;
                }
            }
        }
    }
    bad
}

/// Whether the crossing record is pos_x, neg_y, neg_x, pos_y with strictly
/// increasing times after t0.
pub fn crossing_order_ok(res: &SuccessorResult) -> bool {
    let want = [Axis::PosX, Axis::NegY, Axis::NegX, Axis::PosY];
    let mut prev = res.t0;
    for (c, w) in res.crossings.iter().zip(want) {
        if c.axis != w || !(c.t_cross > prev) || !c.axis.sign_ok(c.x, c.y) {
            return false;
        }
        prev = c.t_cross;
    }
    true
}

/// Recompute with a tenfold tighter tolerance and compare against a crude
/// a-priori error estimate of both runs.
pub fn uniqueness_check(
    fld: &PlanarField,
    t0: f64,
    y0: f64,
    cfg: &IntegratorConfig,
) -> Result<Option<NonUniquenessWarning>> {
    let a = successor(fld, t0, y0, cfg)?;
    let tight = cfg.with_tol(cfg.rel_tol / 10.0, cfg.abs_tol / 10.0);
    let b = successor(fld, t0, y0, &tight)?;
    let estimate = |r: &SuccessorResult, c: &IntegratorConfig| {
        (c.rel_tol + c.abs_tol) * r.steps as f64 * r.max_radius.max(1.0).max(r.t1.abs())
    };
    let bound = estimate(&a, cfg) + estimate(&b, &tight);
    let (dt1, dy1) = (a.t1 - b.t1, a.y1 - b.y1);
    if dt1.abs() > bound || dy1.abs() > bound {
        Ok(Some(NonUniquenessWarning { dt1, dy1, bound }))
    } else {
        Ok(None)
    }
}
