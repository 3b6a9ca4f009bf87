//! Fixed points of the shifted iterated successor map: kT-periodic orbits
//! with m turns, found by nested one-dimensional solves.

use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::integrator::{integrate_time, IntegratorConfig, StopCondition, TrajectorySegment};
use crate::numeric::{brent_try, lcm, periodic_grid};
use crate::successor::{rotation_number, successor_iterate};
use crate::system::{PlanarField, State};
use crate::twist::TwistCertificate;

const FLAT: f64 = 1e-9;

#[derive(Clone, Debug, Serialize)]
pub struct LeafSolution {
    pub t0: f64,
    pub y0: f64,
    /// `T^m(t0, y0) - t0 - kT` at the returned root.
    pub f1: f64,
    pub sign_changes: usize,
}

/// `F1(y0) = T^m(t0, y0) - t0 - kT`.
pub fn time_residual(fld: &PlanarField, t0: f64, y0: f64, m: usize, k: usize, cfg: &IntegratorConfig) -> Result<f64> {
    let r = successor_iterate(fld, t0, y0, m, cfg)?;
    Ok(r.t_m - t0 - k as f64 * fld.period)
}

/// Root in `y0` of the return-time residual within `bracket`, the smallest
/// one when the 24-point scan shows several sign changes.
pub fn solve_time_leaf(
    fld: &PlanarField,
    t0: f64,
    m: usize,
    k: usize,
    bracket: (f64, f64),
    cfg: &IntegratorConfig,
) -> Result<LeafSolution> {
    let (a, b) = bracket;
    if !(a > 0.0 && b > a) {
        return Err(Error::Config(format!("leaf bracket must satisfy 0 < alpha < beta, got ({a}, {b})")));
    }
    let n = 24;
    let ys: Vec<f64> = (0..n).map(|i| a * (b / a).powf(i as f64 / (n - 1) as f64)).collect();
    let fs = ys.iter().map(|&y| time_residual(fld, t0, y, m, k, cfg)).collect::<Result<Vec<f64>>>()?;
    let max_abs = fs.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
    if max_abs < FLAT {
        return Err(Error::FlatResidual { max_abs });
    }
    let changes: Vec<usize> = (0..n - 1).filter(|&i| (fs[i] > 0.0) != (fs[i + 1] > 0.0)).collect();
    let Some(&i) = changes.first() else {
        return Err(Error::NoSignChange { t0 });
    };
    let kt = k as f64 * fld.period;
    let f = |y: f64| time_residual(fld, t0, y, m, k, cfg);
    let y0 = if fs[i] == 0.0 {
        ys[i]
    } else {
        brent_try(f, ys[i], ys[i + 1], fs[i], fs[i + 1], 1e-15 * ys[i + 1])?
    };
    let f1 = time_residual(fld, t0, y0, m, k, cfg)?;
    if f1.abs() >= 1e-10 * kt {
        return Err(Error::Domain(format!("leaf at t0={t0} stalled with |F1| = {:e}", f1.abs())));
    }
    Ok(LeafSolution { t0, y0, f1, sign_changes: changes.len() })
}

#[derive(Copy, Clone, Debug, Serialize)]
pub struct Zero {
    pub t: f64,
    pub slope: f64,
}

/// Sign changes of x on `[a, b)`, refined on dense output. Zeros within
/// `1e-9 (b - a)` of `b` belong to the next period and are dropped.
pub fn count_simple_zeros(traj: &TrajectorySegment, interval: (f64, f64), threshold: f64) -> Result<Vec<Zero>> {
    let (a, b) = interval;
    let eps = 1e-9 * (b - a);
    let x_at = |t: f64| traj.state_at(t).map(|s| s.x).unwrap_or(f64::NAN);
    let slope_at = |t: f64| {
        let h = 1e-6 * (b - a).max(1e-300);
        let lo = (t - h).max(traj.t_start());
        let hi = (t + h).min(traj.t_end());
        (x_at(hi) - x_at(lo)) / (hi - lo)
    };
    let mut zeros: Vec<Zero> = Vec::new();
    let samples: Vec<_> = traj.dense_samples(8).into_iter().filter(|s| s.t >= a - eps && s.t <= b + eps).collect();
    let push = |t: f64, zeros: &mut Vec<Zero>| -> Result<()> {
        if t < a - eps || t >= b - eps || zeros.last().is_some_and(|z| (t - z.t).abs() <= eps) {
            return Ok(());
        }
        let slope = slope_at(t);
        if !(slope.abs() > threshold) {
            return Err(Error::NonSimpleZero { t, slope: slope.abs() });
        }
        zeros.push(Zero { t: t.max(a), slope });
        Ok(())
    };
    for w in samples.windows(2) {
        let (p, q) = (w[0], w[1]);
        if p.x == 0.0 {
            push(p.t, &mut zeros)?;
        } else if (p.x > 0.0) != (q.x > 0.0) && q.x != 0.0 {
            let t = crate::numeric::brent(x_at, p.t, q.t, 1e-15 * (1.0 + q.t.abs()))?;
            push(t, &mut zeros)?;
        }
    }
    if let Some(l) = samples.last() {
        if l.x == 0.0 {
            push(l.t, &mut zeros)?;
        }
    }
    Ok(zeros)
}

#[derive(Clone, Debug, Serialize)]
pub struct PeriodicOrbit {
    pub t0_star: f64,
    pub y0_star: f64,
    pub m: usize,
    pub k: usize,
    /// (time defect, y defect) of the m-fold successor.
    pub residual: (f64, f64),
    /// Largest state defect after direct integration over one period.
    pub closure_residual: f64,
    pub zeros: Vec<Zero>,
    pub rot: f64,
    pub min_radius_sq: f64,
    pub max_radius_sq: f64,
    /// Some `y(t)` with `t` in the first period lies strictly in `(alpha, beta)`.
    pub localized: bool,
    #[serde(skip)]
    pub trajectory: TrajectorySegment,
    #[serde(skip)]
    pub period: f64,
}

impl PeriodicOrbit {
    /// State at time `t`, using kT-periodicity.
    pub fn state(&self, t: f64) -> (f64, f64) {
        let kt = self.k as f64 * self.period;
        let s = self.t0_star + (t - self.t0_star).rem_euclid(kt);
        self.trajectory.state_at(s.min(self.trajectory.t_end())).map(|p| (p.x, p.y)).unwrap_or((f64::NAN, f64::NAN))
    }

    pub fn invariants_hold(&self) -> bool {
        let kt = self.k as f64 * self.period;
        self.residual.0.abs() < 1e-8 * kt
            && self.residual.1.abs() < 1e-8 * self.y0_star.max(1.0)
            && self.zeros.len() == 2 * self.m
            && (self.rot - self.m as f64).abs() < 1e-6
    }

    pub fn write_csv<W: Write>(&self, w: W) -> std::io::Result<()> {
        self.trajectory.write_csv(w)
    }
}

/// Build and validate the orbit through `(t0, y0)`.
pub fn build_orbit(
    fld: &PlanarField,
    t0: f64,
    y0: f64,
    m: usize,
    k: usize,
    annulus: (f64, f64),
    cfg: &IntegratorConfig,
) -> Result<PeriodicOrbit> {
    let kt = k as f64 * fld.period;
    let it = successor_iterate(fld, t0, y0, m, cfg)?;
    let residual = (it.t_m - t0 - kt, it.y_m - y0);
    let seg = integrate_time(fld, State::new(t0, 0.0, y0), StopCondition::UntilTime(t0 + kt), cfg);
    let end = *seg.last();
    if !(end.t == t0 + kt) {
        return Err(Error::Domain(format!("orbit integration from t0={t0} ended early with {:?}", seg.status)));
    }
    let closure_residual = end.x.abs().max((end.y - y0).abs());
    let zeros = count_simple_zeros(&seg, (t0, t0 + kt), 1e-6)?;
    let rot = rotation_number(&seg, t0, t0 + kt)?.value;
    let dense = seg.dense_samples(4);
    let min_radius_sq = dense.iter().map(|s| s.radius_sq()).fold(f64::INFINITY, f64::min);
    let max_radius_sq = dense.iter().map(|s| s.radius_sq()).fold(0.0, f64::max);
    let localized = dense.iter().any(|s| s.t < t0 + fld.period && s.y > annulus.0 && s.y < annulus.1);
    Ok(PeriodicOrbit {
        t0_star: t0,
        y0_star: y0,
        m,
        k,
        residual,
        closure_residual,
        zeros,
        rot,
        min_radius_sq,
        max_radius_sq,
        localized,
        trajectory: seg,
        period: fld.period,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct GSample {
    pub t0: f64,
    pub y0: f64,
    pub g: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct FinderReport {
    pub orbits: Vec<PeriodicOrbit>,
    pub samples: Vec<GSample>,
    pub sign_changes: usize,
    pub flat: bool,
    pub diagnostics: Vec<String>,
}

fn displacement(fld: &PlanarField, t0: f64, m: usize, k: usize, bracket: (f64, f64), cfg: &IntegratorConfig) -> Result<(f64, f64)> {
    let leaf = solve_time_leaf(fld, t0, m, k, bracket, cfg)?;
    let it = successor_iterate(fld, t0, leaf.y0, m, cfg)?;
    Ok((leaf.y0, it.y_m - leaf.y0))
}

/// Scan `G(t0) = Y^m(t0, y0(t0)) - y0(t0)` over `[0, T)` along the time
/// leaf, refine each sign change and validate the orbits found.
pub fn find_periodic(
    fld: &PlanarField,
    cert: &TwistCertificate,
    t0_grid_n: usize,
    cfg: &IntegratorConfig,
) -> Result<FinderReport> {
    if !cert.valid {
        return Err(Error::Domain(format!(
            "twist certificate at ({}, {}) is not valid; no bracket for the time leaf",
            cert.alpha, cert.beta
        )));
    }
    if t0_grid_n < 2 {
        return Err(Error::Config("the t0 grid needs at least two points".into()));
    }
    let (m, k) = (cert.m, cert.k);
    let bracket = (cert.alpha, cert.beta);
    let grid = periodic_grid(fld.period, t0_grid_n);
    let evals: Vec<Result<(f64, f64)>> = grid.par_iter().map(|&t0| displacement(fld, t0, m, k, bracket, cfg)).collect();
    let mut diagnostics = Vec::new();
    let mut samples = Vec::with_capacity(grid.len());
    for (&t0, e) in grid.iter().zip(evals) {
        match e {
            Ok((y0, g)) => samples.push(GSample { t0, y0, g }),
            Err(err) => {
                diagnostics.push(format!("t0={t0}: {err}"));
                samples.push(GSample { t0, y0: f64::NAN, g: f64::NAN });
            }
        }
    }
    let finite: Vec<&GSample> = samples.iter().filter(|s| s.g.is_finite()).collect();
    let flat = !finite.is_empty() && finite.len() == samples.len() && finite.iter().all(|s| s.g.abs() < FLAT);
    if flat {
        let s = &samples[0];
        let max_abs = finite.iter().map(|s| s.g.abs()).fold(0.0, f64::max);
        diagnostics.push(format!(
            "fixed-point residual is flat in t0 (max |G| = {max_abs:e}): a continuum of orbits; returning the t0 = 0 member"
        ));
        let orbit = build_orbit(fld, s.t0, s.y0, m, k, bracket, cfg)?;
        return Ok(FinderReport { orbits: vec![orbit], samples, sign_changes: 0, flat, diagnostics });
    }
    let n = samples.len();
    let mut brackets = Vec::new();
    for i in 0..n {
        let (p, q) = (&samples[i], &samples[(i + 1) % n]);
        let tq = if i + 1 == n { q.t0 + fld.period } else { q.t0 };
        if !(p.g.is_finite() && q.g.is_finite()) {
            continue;
        }
        if p.g == 0.0 {
            brackets.push((p.t0, p.t0, p.g, p.g));
        } else if (p.g > 0.0) != (q.g > 0.0) && q.g != 0.0 {
            brackets.push((p.t0, tq, p.g, q.g));
        }
    }
    let sign_changes = brackets.len();
    if sign_changes == 0 {
        diagnostics.push("G has no sign change on the t0 grid".into());
    }
    let roots: Vec<Result<(f64, f64)>> = brackets
        .par_iter()
        .map(|&(a, b, ga, gb)| {
            let t = if a == b {
                a
            } else {
                brent_try(|t| displacement(fld, t, m, k, bracket, cfg).map(|r| r.1), a, b, ga, gb, 1e-13 * fld.period)?
            };
            let t = t.rem_euclid(fld.period);
            let leaf = solve_time_leaf(fld, t, m, k, bracket, cfg)?;
            Ok((t, leaf.y0))
        })
        .collect();
    let mut orbits = Vec::new();
    for r in roots {
        match r.and_then(|(t, y)| build_orbit(fld, t, y, m, k, bracket, cfg)) {
            Ok(o) => orbits.push(o),
            Err(e) => diagnostics.push(format!("refinement failed: {e}")),
        }
    }
    Ok(FinderReport { orbits, samples, sign_changes, flat, diagnostics })
}

/// Whether `o1` differs from every shift `o2(· + jT)` by more than `tol`
/// somewhere on a common grid. Orbits of different k are compared over the
/// least common multiple of their periods.
pub fn distinct_mod_shift(o1: &PeriodicOrbit, o2: &PeriodicOrbit, period: f64, tol: f64) -> bool {
    let big_k = lcm(o1.k as u32, o2.k as u32) as usize;
    let span = big_k as f64 * period;
    let n = 512 * big_k;
    let ts: Vec<f64> = (0..n).map(|i| span * i as f64 / n as f64).collect();
    (0..big_k).all(|j| {
        let shift = j as f64 * period;
        ts.iter().any(|&t| {
            let (x1, y1) = o1.state(t);
            let (x2, y2) = o2.state(t + shift);
            (x1 - x2).abs().max((y1 - y2).abs()) > tol
        })
    })
}

#[cfg(test)]
mod tests {
    use std::f64::consts::PI;

    use super::*;

    fn harmonic_seg(turns: f64) -> TrajectorySegment {
        let cfg = IntegratorConfig::default().with_tol(1e-12, 1e-14);
        integrate_time(&PlanarField::harmonic(1.0), State::new(0.0, 0.0, 1.0), StopCondition::UntilTime(turns * 2.0 * PI), &cfg)
    }

    #[test]
    fn sine_zeros() {
        let seg = harmonic_seg(1.0);
        let z = count_simple_zeros(&seg, (0.0, 2.0 * PI), 1e-6).unwrap();
        assert_eq!(z.len(), 2);
        assert!(z[0].t.abs() < 1e-12 && (z[1].t - PI).abs() < 1e-9);
        let seg = harmonic_seg(2.0);
        assert_eq!(count_simple_zeros(&seg, (0.0, 4.0 * PI), 1e-6).unwrap().len(), 4);
    }

    #[test]
    fn grazing_zero_is_reported() {
        let cfg = IntegratorConfig::default();
        let fld = PlanarField::general("0", "0", 1.0, "frozen").unwrap();
        let seg = integrate_time(&fld, State::new(0.0, 0.0, 1.0), StopCondition::UntilTime(1.0), &cfg);
        assert!(matches!(count_simple_zeros(&seg, (0.0, 1.0), 1e-6), Err(Error::NonSimpleZero { .. })));
    }

    #[test]
    fn isochronous_leaf_is_flat() {
        let fld = PlanarField::linear_lambda(1.0);
        let r = solve_time_leaf(&fld, 0.0, 1, 1, (0.5, 4.0), &IntegratorConfig::default().with_tol(1e-12, 1e-14));
        assert!(matches!(r, Err(Error::FlatResidual { .. })));
    }

    #[test]
    fn leaf_without_twist() {
        let fld = PlanarField::linear_lambda(2.0);
        let r = solve_time_leaf(&fld, 0.0, 1, 1, (0.5, 4.0), &IntegratorConfig::default());
        assert!(matches!(r, Err(Error::NoSignChange { .. })));
    }

    #[test]
    fn shift_detection() {
        let fld = PlanarField::duffing_autonomous(1.0);
        let cfg = IntegratorConfig::default().with_tol(1e-12, 1e-14);
        let leaf = solve_time_leaf(&fld, 0.0, 1, 1, (0.5, 5.0), &cfg).unwrap();
        let o1 = build_orbit(&fld, 0.0, leaf.y0, 1, 1, (0.5, 5.0), &cfg).unwrap();
        assert!(o1.invariants_hold(), "{o1:?}");
        assert!(!distinct_mod_shift(&o1, &o1, fld.period, 1e-4));
        let o2 = build_orbit(&fld, fld.period, leaf.y0, 1, 1, (0.5, 5.0), &cfg).unwrap();
        assert!(!distinct_mod_shift(&o1, &o2, fld.period, 1e-4));
        let o3 = build_orbit(&fld, 1.0, leaf.y0, 1, 1, (0.5, 5.0), &cfg).unwrap();
        assert!(distinct_mod_shift(&o1, &o3, fld.period, 1e-4));
    }
}
