//! Adaptive integration of planar fields with half-axis event detection.
//!
//! Time integration carries the angle as a third state component
//! (`theta' = (g x + f y) / r²`) so the unwrapped lift is continuous even
//! when a step spans several quarter turns' worth of `atan2` branches.
//! Steps advancing the angle by more than half a radian are rejected, which
//! keeps at most one axis per step and makes sign tests on the event function
//! reliable.

pub mod dopri;
mod segment;

use std::cell::Cell;
use std::f64::consts::FRAC_PI_2;

use serde::{Deserialize, Serialize};

pub use dopri::DenseStep;
pub use segment::{Axis, CrossingEvent, DenseTrack, Sample, SegmentStatus, TrajectorySegment};

use crate::numeric::brent;
use crate::system::{raw_angle, PlanarField, State};
use dopri::{Control, Options, Outcome, Problem};

const MAX_ANGLE_STEP: f64 = 0.5;

#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct IntegratorConfig {
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub max_step: f64,
    pub radius_guard: f64,
    /// Longest elapsed time a single integration may cover.
    pub time_guard: f64,
    pub event_tol: f64,
    pub max_steps: usize,
    pub stall_floor: f64,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        IntegratorConfig {
            rel_tol: 1e-9,
            abs_tol: 1e-12,
            max_step: f64::INFINITY,
            radius_guard: 1e6,
            time_guard: 1e6,
            event_tol: 1e-11,
            max_steps: 5_000_000,
            stall_floor: 1e-12,
        }
    }
}

impl IntegratorConfig {
    pub fn with_tol(mut self, rel_tol: f64, abs_tol: f64) -> Self {
        self.rel_tol = rel_tol;
        self.abs_tol = abs_tol;
        self
    }

    pub fn with_radius_guard(mut self, r: f64) -> Self {
        self.radius_guard = r;
        self
    }

    pub fn with_time_guard(mut self, t: f64) -> Self {
        self.time_guard = t;
        self
    }

    fn options(&self) -> Options {
        Options {
            rel_tol: self.rel_tol,
            abs_tol: self.abs_tol,
            max_step: self.max_step,
            max_steps: self.max_steps,
            initial_step: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum StopCondition {
    UntilTime(f64),
    /// Stop at the `count`-th forward crossing of `axis`.
    UntilAxisCrossing(Axis, usize),
    /// Stop when the unwrapped angle has advanced by this much.
    UntilRotation(f64),
}

struct TimeProblem<'a> {
    fld: &'a PlanarField,
}

impl Problem<3> for TimeProblem<'_> {
    #[inline]
    fn rhs(&self, t: f64, y: &[f64; 3]) -> [f64; 3] {
        let (f, g) = self.fld.fg(t, y[0], y[1]);
        let r2 = y[0] * y[0] + y[1] * y[1];
        let w = if r2 > 0.0 { (g * y[0] + f * y[1]) / r2 } else { 0.0 };
        [f, -g, w]
    }

    fn admissible(&self, y0: &[f64; 3], y1: &[f64; 3]) -> bool {
        (y1[2] - y0[2]).abs() <= MAX_ANGLE_STEP
    }
}

/// `r sin(theta - level)` evaluated from Cartesian coordinates.
#[inline]
fn level_fn(x: f64, y: f64, level: f64) -> f64 {
    x * level.cos() - y * level.sin()
}

pub fn integrate_time(
    fld: &PlanarField,
    s0: State,
    stop: StopCondition,
    cfg: &IntegratorConfig,
) -> TrajectorySegment {
    let theta0 = if s0.x == 0.0 && s0.y == 0.0 { 0.0 } else { raw_angle(s0.x, s0.y) };
    let mut samples = vec![Sample { t: s0.t, x: s0.x, y: s0.y, theta: theta0 }];
    let mut steps: Vec<DenseStep<3>> = Vec::new();
    let mut crossings: Vec<CrossingEvent> = Vec::new();
    let mut status = SegmentStatus::Completed;

    let guard_end = s0.t + cfg.time_guard;
    let (t_end, target_is_guard) = match stop {
        StopCondition::UntilTime(t) if t <= guard_end => (t, false),
        _ => (guard_end, true),
    };
    let rot_level = match stop {
        StopCondition::UntilRotation(d) => Some(theta0 + d),
        _ => None,
    };
    let mut axis_count = 0usize;
    let radius_guard_sq = cfg.radius_guard * cfg.radius_guard;
    let event_tol = cfg.event_tol;

    let problem = TimeProblem { fld };
    let stats = dopri::integrate(&problem, s0.t, [s0.x, s0.y, theta0], t_end, &cfg.options(), |step| {
        let (ta, tb) = (step.x0, step.x1);
        let (th_a, th_b) = (step.y0[2], step.y1[2]);
        let lo = th_a.min(th_b) - 0.3;
        let hi = th_a.max(th_b) + 0.3;

        // Axis crossings in this step, in time order.
        let mut found: Vec<CrossingEvent> = Vec::new();
        let n_lo = (lo / FRAC_PI_2).ceil() as i64;
        let n_hi = (hi / FRAC_PI_2).floor() as i64;
        for n in n_lo..=n_hi {
            let level = n as f64 * FRAC_PI_2;
            let fa = level_fn(step.y0[0], step.y0[1], level);
            let fb = level_fn(step.y1[0], step.y1[1], level);
            let forward = fa < 0.0 && fb >= 0.0;
            let backward = fa > 0.0 && fb <= 0.0;
            if !(forward || backward) {
                continue;
            }
            let tc = if fb == 0.0 {
                tb
            } else {
                let f = |t: f64| {
                    let v = step.eval(t);
                    level_fn(v[0], v[1], level)
                };
                brent(f, ta, tb, event_tol).unwrap_or(tb)
            };
            let s = segment::time_sample(step, tc);
            found.push(CrossingEvent {
                axis: Axis::from_quarter(n),
                t_cross: tc,
                x: s.x,
                y: s.y,
                theta: level,
                forward,
            });
        }
        found.sort_by(|a, b| a.t_cross.total_cmp(&b.t_cross));

        let mut stop_at: Option<(f64, SegmentStatus)> = None;
        for ev in &found {
            crossings.push(*ev);
            if let StopCondition::UntilAxisCrossing(axis, count) = stop {
                if ev.forward && ev.axis == axis {
                    axis_count += 1;
                    if axis_count >= count {
                        stop_at = Some((ev.t_cross, SegmentStatus::HitEvent));
                        break;
                    }
                }
            }
            if let Some(level) = rot_level {
                if ev.forward && (ev.theta - level).abs() < 1e-12 * level.abs().max(1.0) {
                    stop_at = Some((ev.t_cross, SegmentStatus::HitEvent));
                    break;
                }
            }
        }
        if let (None, Some(level)) = (stop_at, rot_level) {
            let on_axis = ((level / FRAC_PI_2).round() * FRAC_PI_2 - level).abs()
                < 1e-12 * level.abs().max(1.0);
            if !on_axis && level >= lo && level <= hi {
                let fa = level_fn(step.y0[0], step.y0[1], level);
                let fb = level_fn(step.y1[0], step.y1[1], level);
                if fa < 0.0 && fb >= 0.0 {
                    let f = |t: f64| {
                        let v = step.eval(t);
                        level_fn(v[0], v[1], level)
                    };
                    let tc = if fb == 0.0 { tb } else { brent(f, ta, tb, event_tol).unwrap_or(tb) };
                    stop_at = Some((tc, SegmentStatus::HitEvent));
                }
            }
        }
        // Drop crossings recorded after the stop time.
        if let Some((tc, _)) = stop_at {
            while crossings.last().is_some_and(|c| c.t_cross > tc) {
                crossings.pop();
            }
        }

        let end_t = stop_at.map(|s| s.0).unwrap_or(tb);
        let r2_end = {
            let v = step.eval(end_t);
            v[0] * v[0] + v[1] * v[1]
        };
        if r2_end >= radius_guard_sq && step.y0[0].powi(2) + step.y0[1].powi(2) < radius_guard_sq {
            let f = |t: f64| {
                let v = step.eval(t);
                (v[0] * v[0] + v[1] * v[1]).sqrt() - cfg.radius_guard
            };
            let tg = brent(f, ta, end_t, event_tol).unwrap_or(end_t);
            while crossings.last().is_some_and(|c| c.t_cross > tg) {
                crossings.pop();
            }
            stop_at = Some((tg, SegmentStatus::RadiusGuard));
        } else if r2_end >= radius_guard_sq {
            stop_at = Some((ta, SegmentStatus::RadiusGuard));
        }

        steps.push(step.clone());
        match stop_at {
            Some((tc, st)) => {
                samples.push(segment::time_sample(step, tc));
                status = st;
                Control::Stop
            }
            None => {
                samples.push(segment::time_sample(step, tb));
                Control::Continue
            }
        }
    });

    match stats.outcome {
        Outcome::Completed => {
            if target_is_guard {
                status = SegmentStatus::TimeGuard;
            }
        }
        Outcome::Stopped => {}
        Outcome::StepUnderflow | Outcome::MaxSteps => {
            let last = samples.last().expect("initial sample");
            if !(last.x.is_finite() && last.y.is_finite()) || fld.field_eval(&last.state()).is_err() {
                status = SegmentStatus::FieldError;
            } else {
                status = SegmentStatus::StepFailure;
            }
        }
        Outcome::Aborted => status = SegmentStatus::StepFailure,
    }
    // Non-finite field at the very start.
    if steps.is_empty() && status == SegmentStatus::Completed && fld.field_eval(&s0).is_err() {
        status = SegmentStatus::FieldError;
    }

    TrajectorySegment {
        samples,
        dense: DenseTrack::Time(steps),
        status,
        crossings,
        rejected_steps: stats.rejected,
    }
}

struct AngleProblem<'a> {
    fld: &'a PlanarField,
    floor: f64,
    stall: Cell<Option<(f64, f64)>>,
}

impl Problem<2> for AngleProblem<'_> {
    fn rhs(&self, theta: f64, y: &[f64; 2]) -> [f64; 2] {
        let (t, rho) = (y[0], y[1]);
        let r = (2.0 * rho).sqrt();
        let (s, c) = theta.sin_cos();
        let (x, yy) = (r * s, r * c);
        let (f, g) = self.fld.fg(t, x, yy);
        let w = (g * x + f * yy) / (2.0 * rho);
        if !(w >= self.floor) {
            if w.is_finite() && self.stall.get().is_none() {
                self.stall.set(Some((t, w)));
            }
            return [f64::NAN, f64::NAN];
        }
        let rho_dot = x * f - yy * g;
        [1.0 / w, rho_dot / w]
    }

    fn aborted(&self) -> bool {
        self.stall.get().is_some()
    }
}

/// Integrate with the angle as independent variable over
/// `[theta0, theta0 + delta_theta]`.
pub fn integrate_angle(
    fld: &PlanarField,
    s0: State,
    delta_theta: f64,
    cfg: &IntegratorConfig,
) -> crate::error::Result<TrajectorySegment> {
    let r2 = s0.radius_sq();
    if r2 == 0.0 {
        return Err(crate::error::Error::Domain("angle integration from the origin".into()));
    }
    if !(delta_theta > 0.0) {
        return Err(crate::error::Error::Domain("delta_theta must be positive".into()));
    }
    let theta0 = raw_angle(s0.x, s0.y);
    let theta_end = theta0 + delta_theta;
    let problem = AngleProblem { fld, floor: cfg.stall_floor, stall: Cell::new(None) };
    let mut samples = vec![Sample { t: s0.t, x: s0.x, y: s0.y, theta: theta0 }];
    let mut steps: Vec<DenseStep<2>> = Vec::new();
    let mut crossings = Vec::new();
    let mut status = SegmentStatus::Completed;
    let rho_guard = 0.5 * cfg.radius_guard * cfg.radius_guard;
    let mut opts = cfg.options();
    opts.max_step = opts.max_step.min(MAX_ANGLE_STEP);

    let stats = dopri::integrate(&problem, theta0, [s0.t, 0.5 * r2], theta_end, &opts, |step| {
        let (a, b) = (step.x0, step.x1);
        let n_lo = (a / FRAC_PI_2).floor() as i64 + 1;
        let n_hi = (b / FRAC_PI_2).floor() as i64;
        for n in n_lo..=n_hi {
            let level = n as f64 * FRAC_PI_2;
            let s = segment::angle_sample(step, level);
            crossings.push(CrossingEvent {
                axis: Axis::from_quarter(n),
                t_cross: s.t,
                x: s.x,
                y: s.y,
                theta: level,
                forward: true,
            });
        }
        steps.push(step.clone());
        samples.push(segment::angle_sample(step, b));
        if step.y1[1] >= rho_guard {
            status = SegmentStatus::RadiusGuard;
            return Control::Stop;
        }
        if step.y1[0] - s0.t >= cfg.time_guard {
            status = SegmentStatus::TimeGuard;
            return Control::Stop;
        }
        Control::Continue
    });
    match stats.outcome {
        Outcome::Completed | Outcome::Stopped => {}
        Outcome::Aborted => {
            let (t, omega) = problem.stall.get().unwrap_or((f64::NAN, f64::NAN));
            return Err(crate::error::Error::AngularStall { t, omega });
        }
        _ => status = SegmentStatus::StepFailure,
    }
    Ok(TrajectorySegment {
        samples,
        dense: DenseTrack::Angle(steps),
        status,
        crossings,
        rejected_steps: stats.rejected,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn cfg() -> IntegratorConfig {
        IntegratorConfig::default()
    }

    #[test]
    fn harmonic_quarter_period() {
        let h = PlanarField::harmonic(1.0);
        let seg = integrate_time(&h, State::new(0.0, 0.0, 1.0), StopCondition::UntilTime(PI / 2.0), &cfg());
        assert_eq!(seg.status, SegmentStatus::Completed);
        let e = seg.last();
        assert_eq!(e.t, PI / 2.0);
        assert!((e.x - 1.0).abs() < 1e-9 && e.y.abs() < 1e-9);
    }

    #[test]
    fn harmonic_axis_event() {
        let h = PlanarField::harmonic(1.0);
        let seg = integrate_time(
            &h,
            State::new(0.0, 0.0, 1.0),
            StopCondition::UntilAxisCrossing(Axis::PosX, 1),
            &cfg(),
        );
        assert_eq!(seg.status, SegmentStatus::HitEvent);
        assert_eq!(seg.crossings.len(), 1);
        assert!((seg.crossings[0].t_cross - PI / 2.0).abs() < 1e-10);
        assert_eq!(seg.last().t, seg.crossings[0].t_cross);
    }

    #[test]
    fn full_rotation_records_four_axes() {
        let h = PlanarField::harmonic(1.0);
        let seg = integrate_time(&h, State::new(0.0, 0.0, 1.0), StopCondition::UntilRotation(2.0 * PI), &cfg());
        assert_eq!(seg.status, SegmentStatus::HitEvent);
        let axes: Vec<Axis> = seg.crossings.iter().map(|c| c.axis).collect();
        assert_eq!(axes, vec![Axis::PosX, Axis::NegY, Axis::NegX, Axis::PosY]);
        for (i, c) in seg.crossings.iter().enumerate() {
            assert!((c.t_cross - (i + 1) as f64 * PI / 2.0).abs() < 1e-9);
        }
        assert!((seg.last().theta - 2.0 * PI).abs() < 1e-12);
    }

    #[test]
    fn rotation_to_off_axis_level() {
        let h = PlanarField::harmonic(1.0);
        let seg = integrate_time(&h, State::new(0.0, 0.0, 1.0), StopCondition::UntilRotation(1.0), &cfg());
        assert!((seg.last().t - 1.0).abs() < 1e-10);
    }

    #[test]
    fn blow_up_hits_radius_guard() {
        let f = PlanarField::general("y", "-x^3", 10.0, "blowup").unwrap();
        let seg = integrate_time(&f, State::new(0.0, 0.0, 1.0), StopCondition::UntilTime(10.0), &cfg());
        assert_eq!(seg.status, SegmentStatus::RadiusGuard);
        let r = seg.last().radius_sq().sqrt();
        assert!((r - 1e6).abs() < 1e-3 * 1e6, "{r}");
        assert!(seg.last().t < 10.0);
    }

    #[test]
    fn time_guard_fires() {
        let h = PlanarField::harmonic(1.0);
        let c = cfg().with_time_guard(3.0);
        let seg = integrate_time(&h, State::new(0.0, 0.0, 1.0), StopCondition::UntilRotation(4.0 * PI), &c);
        assert_eq!(seg.status, SegmentStatus::TimeGuard);
        assert_eq!(seg.last().t, 3.0);
    }

    #[test]
    fn theta_lift_is_continuous() {
        let h = PlanarField::duffing_forced(1.0);
        let seg = integrate_time(&h, State::new(0.0, 0.0, 3.0), StopCondition::UntilTime(30.0), &cfg());
        for w in seg.dense_samples(4).windows(2) {
            assert!((w[1].theta - w[0].theta).abs() < PI);
        }
    }

    #[test]
    fn interpolant_matches_samples() {
        let h = PlanarField::duffing_forced(1.0);
        let seg = integrate_time(&h, State::new(0.0, 0.0, 2.0), StopCondition::UntilTime(10.0), &cfg());
        for s in &seg.samples {
            assert_eq!(seg.state_at(s.t).unwrap(), *s);
        }
    }

    #[test]
    fn mid_step_interpolation_vs_reintegration() {
        let fld = PlanarField::duffing_forced(1.0);
        let c = cfg();
        let seg = integrate_time(&fld, State::new(0.0, 0.0, 2.0), StopCondition::UntilTime(5.0), &c);
        for i in (0..seg.steps()).step_by(7) {
            let (a, b) = (seg.samples[i], seg.samples[i + 1]);
            let tm = 0.5 * (a.t + b.t);
            let interp = seg.state_at(tm).unwrap();
            let tight = c.with_tol(1e-13, 1e-15);
            let re = integrate_time(&fld, a.state(), StopCondition::UntilTime(tm), &tight);
            let e = re.last();
            let scale = (a.x.abs() + a.y.abs()).max(1.0);
            assert!((e.x - interp.x).abs() < 10.0 * c.rel_tol * scale);
            assert!((e.y - interp.y).abs() < 10.0 * c.rel_tol * scale);
        }
    }

    #[test]
    fn angle_integration_harmonic() {
        let h = PlanarField::harmonic(1.0);
        let seg = integrate_angle(&h, State::new(0.0, 0.0, 1.0), 2.0 * PI, &cfg()).unwrap();
        let e = seg.last();
        assert!((e.t - 2.0 * PI).abs() < 1e-9);
        assert!(e.x.abs() < 1e-9 && (e.y - 1.0).abs() < 1e-9);
        let seg = integrate_angle(&h, State::new(0.0, 0.0, 1.0), PI, &cfg()).unwrap();
        let e = seg.last();
        assert!((e.t - PI).abs() < 1e-9 && (e.y + 1.0).abs() < 1e-9);
        assert_eq!(e.theta, PI);
    }

    #[test]
    fn angle_integration_radial_hamiltonian() {
        // H = (1 + sin(t)/2) rho + rho^2 keeps rho fixed; the time to turn
        // once solves 2 t + (1 - cos t)/2 = 2 pi when rho = 1/2.
        let f = PlanarField::general(
            "y*(1 + 0.5*sin(t) + x^2 + y^2)",
            "x*(1 + 0.5*sin(t) + x^2 + y^2)",
            2.0 * PI,
            "radial",
        )
        .unwrap();
        let seg = integrate_angle(&f, State::new(0.0, 0.0, 1.0), 2.0 * PI, &cfg()).unwrap();
        let oracle = brent(|t| 2.0 * t + 0.5 * (1.0 - t.cos()) - 2.0 * PI, 0.0, 2.0 * PI, 1e-15).unwrap();
        assert!((seg.last().t - oracle).abs() < 1e-9);
    }

    #[test]
    fn angle_stall_is_reported() {
        // g x + f y = y^2 vanishes on the x axis.
        let f = PlanarField::general("y", "0", 1.0, "shear").unwrap();
        let r = integrate_angle(&f, State::new(0.0, 0.0, 1.0), PI, &cfg());
        assert!(matches!(r, Err(crate::error::Error::AngularStall { .. })));
    }

    #[test]
    fn time_and_angle_agree() {
        let f = PlanarField::duffing_forced(1.0);
        let s0 = State::new(0.7, 0.0, 2.0);
        let a = integrate_angle(&f, s0, 2.0 * PI, &cfg()).unwrap();
        let t = integrate_time(&f, s0, StopCondition::UntilRotation(2.0 * PI), &cfg());
        let (ea, et) = (a.last(), t.last());
        assert!((ea.t - et.t).abs() < 1e-7 * et.t.abs());
        assert!((ea.y - et.y).abs() < 1e-7 * et.y.abs());
    }

    #[test]
    fn csv_export_has_header() {
        let h = PlanarField::harmonic(1.0);
        let seg = integrate_time(&h, State::new(0.0, 0.0, 1.0), StopCondition::UntilTime(1.0), &cfg());
        let mut buf = Vec::new();
        seg.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("t,x,y,theta\n"));
        assert_eq!(text.lines().count(), seg.samples.len() + 1);
    }
}
