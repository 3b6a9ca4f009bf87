use std::io::Write;

use serde::Serialize;

use super::dopri::DenseStep;
use crate::system::{raw_angle, unwrap_near, State};

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    PosY,
    PosX,
    NegY,
    NegX,
}

impl Axis {
    /// Axis reached at angle `n * pi/2`.
    pub fn from_quarter(n: i64) -> Axis {
        match n.rem_euclid(4) {
            0 => Axis::PosY,
            1 => Axis::PosX,
            2 => Axis::NegY,
            _ => Axis::NegX,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Axis::PosY => "pos_y",
            Axis::PosX => "pos_x",
            Axis::NegY => "neg_y",
            Axis::NegX => "neg_x",
        }
    }

    /// Whether (x, y) lies on the correct side for this half-axis.
    pub fn sign_ok(self, x: f64, y: f64) -> bool {
        match self {
            Axis::PosY => y > 0.0,
            Axis::PosX => x > 0.0,
            Axis::NegY => y < 0.0,
            Axis::NegX => x < 0.0,
        }
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Serialize)]
pub struct CrossingEvent {
    pub axis: Axis,
    pub t_cross: f64,
    pub x: f64,
    pub y: f64,
    /// Unwrapped angle level n*pi/2 that was crossed.
    pub theta: f64,
    /// False when the angle was decreasing through the level.
    pub forward: bool,
}

impl CrossingEvent {
    pub fn state(&self) -> State {
        State::new(self.t_cross, self.x, self.y)
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SegmentStatus {
    Completed,
    HitEvent,
    RadiusGuard,
    TimeGuard,
    StepFailure,
    AngularStall,
    FieldError,
}

#[derive(Copy, Clone, Debug, PartialEq, Serialize)]
pub struct Sample {
    pub t: f64,
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

impl Sample {
    pub fn state(&self) -> State {
        State::new(self.t, self.x, self.y)
    }

    pub fn radius_sq(&self) -> f64 {
        self.x * self.x + self.y * self.y
    }
}

/// Continuous extension of every step: time-parametrised `(x, y, theta)` or
/// angle-parametrised `(t, rho)`.
#[derive(Clone, Debug)]
pub enum DenseTrack {
    Time(Vec<DenseStep<3>>),
    Angle(Vec<DenseStep<2>>),
}

#[derive(Clone, Debug)]
pub struct TrajectorySegment {
    /// Step boundaries; `samples[i]` starts step `i`.
    pub samples: Vec<Sample>,
    pub dense: DenseTrack,
    pub status: SegmentStatus,
    pub crossings: Vec<CrossingEvent>,
    pub rejected_steps: usize,
}

pub(crate) fn time_sample(step: &DenseStep<3>, t: f64) -> Sample {
    let [x, y, th] = step.eval(t);
    let theta = if x == 0.0 && y == 0.0 { th } else { unwrap_near(raw_angle(x, y), th) };
    Sample { t, x, y, theta }
}

pub(crate) fn angle_sample(step: &DenseStep<2>, theta: f64) -> Sample {
    let [t, rho] = step.eval(theta);
    let r = (2.0 * rho.max(0.0)).sqrt();
    Sample { t, x: r * theta.sin(), y: r * theta.cos(), theta }
}

impl TrajectorySegment {
    pub fn t_start(&self) -> f64 {
        self.samples[0].t
    }

    pub fn t_end(&self) -> f64 {
        self.samples.last().map(|s| s.t).unwrap_or(f64::NAN)
    }

    pub fn first(&self) -> &Sample {
        &self.samples[0]
    }

    pub fn last(&self) -> &Sample {
        self.samples.last().expect("segment has samples")
    }

    pub fn steps(&self) -> usize {
        self.samples.len() - 1
    }

    /// Index of the step containing `t` (clamped to the ends).
    fn step_index(&self, t: f64) -> usize {
        let n = self.steps();
        if n == 0 {
            return 0;
        }
        let idx = self.samples.partition_point(|s| s.t <= t);
        idx.saturating_sub(1).min(n - 1)
    }

    /// Interpolated sample at time `t`; `None` outside the span.
    pub fn state_at(&self, t: f64) -> Option<Sample> {
        if !(t >= self.t_start() && t <= self.t_end()) {
            return None;
        }
        let i = self.step_index(t);
        if t == self.samples[i].t {
            return Some(self.samples[i]);
        }
        if t == self.samples[i + 1].t {
            return Some(self.samples[i + 1]);
        }
        match &self.dense {
            DenseTrack::Time(steps) => Some(time_sample(&steps[i], t)),
            DenseTrack::Angle(steps) => {
                let step = &steps[i];
                let (a, b) = (self.samples[i].theta, self.samples[i + 1].theta);
                let theta = crate::numeric::brent(|th| step.eval(th)[0] - t, a, b, 1e-15 * (1.0 + b.abs()))
                    .unwrap_or(0.5 * (a + b));
                let mut s = angle_sample(step, theta);
                s.t = t;
                Some(s)
            }
        }
    }

    /// Dense samples: every step boundary plus `per_step - 1` interior points.
    pub fn dense_samples(&self, per_step: usize) -> Vec<Sample> {
        let mut out = Vec::with_capacity(self.steps() * per_step + 1);
        for i in 0..self.steps() {
            let (a, b) = (self.samples[i], self.samples[i + 1]);
            out.push(a);
            for j in 1..per_step {
                let frac = j as f64 / per_step as f64;
                let s = match &self.dense {
                    DenseTrack::Time(steps) => time_sample(&steps[i], a.t + frac * (b.t - a.t)),
                    DenseTrack::Angle(steps) => {
                        angle_sample(&steps[i], a.theta + frac * (b.theta - a.theta))
                    }
                };
                out.push(s);
            }
        }
        out.push(*self.last());
        out
    }

    pub fn max_radius(&self) -> f64 {
        self.samples.iter().map(|s| s.radius_sq()).fold(0.0, f64::max).sqrt()
    }

    pub fn min_radius(&self) -> f64 {
        self.samples.iter().map(|s| s.radius_sq()).fold(f64::INFINITY, f64::min).sqrt()
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "t,x,y,theta")?;
        for s in &self.samples {
            writeln!(w, "{:?},{:?},{:?},{:?}", s.t, s.x, s.y, s.theta)?;
        }
        Ok(())
    }
}
