//! Twist certificates at two radii and the quantitative thresholds that make
//! them hold for superlinear scalar equations.

use std::f64::consts::PI;
use std::io::Write;
use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;

use crate::curves::{
    build_comparison, build_modified, build_spiral, ClosedCurve, ComparisonPair, ModifiedSystem, Orientation,
    SpiralCurve,
};
use crate::error::{Error, Result};
use crate::expr::ExprAst;
use crate::hypotheses::{prop_5_3_constants, superlinearity_profile, AuditGrid, RotationBound};
use crate::integrator::{integrate_time, Axis, IntegratorConfig, SegmentStatus, StopCondition};
use crate::numeric::{golden_max, linspace, periodic_grid};
use crate::successor::successor_iterate;
use crate::system::{PlanarField, State};

#[derive(Clone, Debug, Serialize)]
pub struct TwistCertificate {
    pub alpha: f64,
    pub beta: f64,
    pub m: usize,
    pub k: usize,
    pub period: f64,
    pub t0_grid: Vec<f64>,
    /// `T^m(t0, alpha) - t0 - kT`; NaN where the iterate failed.
    pub inner_margins: Vec<f64>,
    /// `kT - (T^m(t0, beta) - t0)`; NaN where the iterate failed.
    pub outer_margins: Vec<f64>,
    pub failures: Vec<String>,
    pub valid: bool,
}

impl TwistCertificate {
    pub fn valid_at(&self, i: usize) -> bool {
        self.inner_margins[i] > 0.0 && self.outer_margins[i] > 0.0
    }

    pub fn min_inner(&self) -> f64 {
        self.inner_margins.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn min_outer(&self) -> f64 {
        self.outer_margins.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// CSV with columns `t0,inner_margin,outer_margin`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "t0,inner_margin,outer_margin")?;
        for i in 0..self.t0_grid.len() {
            writeln!(w, "{:.17e},{:.17e},{:.17e}", self.t0_grid[i], self.inner_margins[i], self.outer_margins[i])?;
        }
        Ok(())
    }
}

/// Return-time margins at `alpha` and `beta` for `m` turns against `kT`.
pub fn scan_twist(
    fld: &PlanarField,
    alpha: f64,
    beta: f64,
    m: usize,
    k: usize,
    t0_grid_n: usize,
    cfg: &IntegratorConfig,
) -> Result<TwistCertificate> {
    if !(alpha > 0.0 && beta > alpha) {
        return Err(Error::Config(format!("need 0 < alpha < beta, got {alpha}, {beta}")));
    }
    if m == 0 || k == 0 || t0_grid_n == 0 {
        return Err(Error::Config("m, k and the t0 grid size must be positive".into()));
    }
    let t0_grid = periodic_grid(fld.period, t0_grid_n);
    let kt = k as f64 * fld.period;
    let rows: Vec<(f64, f64, Vec<String>)> = t0_grid
        .par_iter()
        .map(|&t0| {
            let mut notes = Vec::new();
            let mut time = |y0: f64| match successor_iterate(fld, t0, y0, m, cfg) {
                Ok(r) => r.t_m - t0,
                Err(e) => {
                    notes.push(format!("t0={t0}, y0={y0}: {e}"));
                    f64::NAN
                }
            };
            let inner = time(alpha) - kt;
            let outer = kt - time(beta);
            (inner, outer, notes)
        })
        .collect();
    let mut inner_margins = Vec::with_capacity(rows.len());
    let mut outer_margins = Vec::with_capacity(rows.len());
    let mut failures = Vec::new();
    for (a, b, n) in rows {
        inner_margins.push(a);
        outer_margins.push(b);
        failures.extend(n);
    }
    let valid = failures.is_empty() && inner_margins.iter().chain(&outer_margins).all(|v| *v > 0.0);
    Ok(TwistCertificate { alpha, beta, m, k, period: fld.period, t0_grid, inner_margins, outer_margins, failures, valid })
}

/// Entering spiral of `m + 1` turns from `max(sqrt(2 E0), sqrt(sigma1))`;
/// its terminal anchor is `Y_m`.
pub fn compute_y_m(pair: &Arc<ComparisonPair>, m: usize, sigma1: f64) -> Result<(f64, SpiralCurve)> {
    let y1 = (2.0 * pair.e0).sqrt().max(sigma1.sqrt()) * (1.0 + 1e-3);
    let spiral = build_spiral(pair.clone(), Orientation::Entering, y1, m + 1)?;
    if !spiral.inclusion_chain(sigma1.sqrt()) {
        return Err(Error::Domain("entering spiral does not enclose the disc of radius² sigma1".into()));
    }
    Ok((spiral.terminal_anchor(), spiral))
}

#[derive(Clone, Debug, Serialize)]
pub struct RegionMax {
    pub value: f64,
    pub refined: f64,
    pub at: (f64, f64, f64),
    pub n_phi: usize,
    pub n_r: usize,
    pub n_t: usize,
}

fn outer_radius(curve: &ClosedCurve, phi: f64) -> f64 {
    if phi <= 0.0 || phi >= 2.0 * PI {
        curve.boundary_radius(1e-12).max(curve.boundary_radius(2.0 * PI - 1e-12))
    } else {
        curve.boundary_radius(phi)
    }
}

/// Maximum of `(y² + x g(t, x)) / (x² + y²)` over the closed curve's interior
/// outside radius² `sigma1`, on a polar grid times a t grid.
fn ratio_max(g: &ExprAst, period: f64, curve: &ClosedCurve, sigma1: f64, n_phi: usize, n_r: usize, n_t: usize) -> (f64, (f64, f64, f64)) {
    let ts = periodic_grid(period, n_t);
    let r_in = sigma1.sqrt();
    (0..n_phi)
        .into_par_iter()
        .map(|i| {
            let phi = 2.0 * PI * i as f64 / n_phi as f64;
            let r_out = outer_radius(curve, phi);
            let (s, c) = phi.sin_cos();
            let mut best = (f64::NEG_INFINITY, (0.0, 0.0, 0.0));
            for r in linspace(r_in, r_out.max(r_in), n_r) {
                let (x, y) = (r * s, r * c);
                for &t in &ts {
                    let v = (y * y + x * g.eval(t, x, 0.0)) / (r * r);
                    if v > best.0 {
                        best = (v, (t, x, y));
                    }
                }
            }
            best
        })
        .reduce(|| (f64::NEG_INFINITY, (0.0, 0.0, 0.0)), |a, b| if b.0 > a.0 { b } else { a })
}

#[derive(Clone, Debug)]
pub struct ThetaResult {
    pub theta: RegionMax,
    pub lambda_mk: f64,
    pub spiral: SpiralCurve,
}

pub fn lambda_from_theta(m: usize, k: usize, period: f64, theta: f64) -> f64 {
    let v = 2.0 * PI * m as f64 / (k as f64 * period * theta);
    v * v
}

/// Bound on the rotation speed over the region swept by `m` turns from
/// `Y_m`, and the resulting `lambda_{m,k}`.
pub fn compute_lambda_mk(pair: &Arc<ComparisonPair>, m: usize, k: usize, period: f64, r0: f64, y_m: f64) -> Result<ThetaResult> {
    let sigma1 = r0 * r0 + 1.0;
    let spiral = build_spiral(pair.clone(), Orientation::Exiting, y_m * (1.0 + 1e-3), m + 1)?;
    let curve = spiral.closed_curve(m + 1);
    let (n_phi, n_r, n_t) = (128, 32, 32);
    let (value, at) = ratio_max(&pair.g, period, &curve, sigma1, n_phi, n_r, n_t);
    let (refined, at_fine) = ratio_max(&pair.g, period, &curve, sigma1, 4 * n_phi, 4 * n_r, 4 * n_t);
    if !(value > 0.0) || (refined - value).abs() > 0.01 * value {
        return Err(Error::Domain(format!(
            "rotation-speed maximum not resolved: {value} on the coarse grid, {refined} on the fine grid"
        )));
    }
    let theta = RegionMax {
        value: value.max(refined),
        refined,
        at: if refined >= value { at_fine } else { at },
        n_phi,
        n_r,
        n_t,
    };
    let lambda_mk = lambda_from_theta(m, k, period, theta.value);
    Ok(ThetaResult { theta, lambda_mk, spiral })
}

#[derive(Clone, Debug)]
pub struct ZResult {
    pub big_m: f64,
    pub r_m: f64,
    pub b: f64,
    pub big_r_m: f64,
    pub z: f64,
    pub spiral: SpiralCurve,
}

/// `min over t and sign of x g(t, x) / x² - M` at `|x| = r`.
fn growth_excess(g: &ExprAst, ts: &[f64], r: f64, big_m: f64) -> f64 {
    ts.iter()
        .flat_map(|&t| [g.eval(t, r, 0.0) / r, g.eval(t, -r, 0.0) / -r])
        .fold(f64::INFINITY, f64::min)
        - big_m
}

/// Smallest radius beyond which `x g >= M x²` on the sample from `r_lo` to
/// `r_hi`, bisected at the last sign change.
pub fn superlinear_radius(g: &ExprAst, period: f64, big_m: f64, r_hi: f64) -> Result<f64> {
    let ts = periodic_grid(period, 64);
    let n = 4000;
    let rs: Vec<f64> = (0..=n).map(|i| 1e-3 * (r_hi / 1e-3).powf(i as f64 / n as f64)).collect();
    let ex: Vec<f64> = rs.iter().map(|&r| growth_excess(g, &ts, r, big_m)).collect();
    if !(ex[n] >= 0.0) {
        return Err(Error::MNotAchievable(big_m));
    }
    let mut i = n;
    while i > 0 && ex[i - 1] >= 0.0 {
        i -= 1;
    }
    if i == 0 {
        return Ok(rs[0]);
    }
    let (mut a, mut b) = (rs[i - 1], rs[i]);
    for _ in 0..100 {
        let mid = 0.5 * (a + b);
        if growth_excess(g, &ts, mid, big_m) >= 0.0 {
            b = mid;
        } else {
            a = mid;
        }
        if b - a <= 1e-14 * b {
            break;
        }
    }
    Ok(b)
}

/// `max over |x| <= r and t of (M x²/2 - x g(t, x))`.
pub fn energy_deficit(g: &ExprAst, period: f64, big_m: f64, r: f64) -> f64 {
    let ts = periodic_grid(period, 64);
    let h = |x: f64| ts.iter().map(|&t| 0.5 * big_m * x * x - x * g.eval(t, x, 0.0)).fold(f64::NEG_INFINITY, f64::max);
    let xs = linspace(-r, r, 2001);
    let (mut best_x, mut best) = (0.0, f64::NEG_INFINITY);
    for &x in &xs {
        let v = h(x);
        if v > best {
            best = v;
            best_x = x;
        }
    }
    let dx = 2.0 * r / 2000.0;
    let (_, polished) = golden_max(h, (best_x - dx).max(-r), (best_x + dx).min(r), 1e-12 * r.max(1.0));
    best.max(polished).max(0.0)
}

pub fn big_m_for(m: usize, k: usize, period: f64, lambda: f64) -> f64 {
    let v = 4.0 * m as f64 * PI / (lambda.sqrt() * k as f64 * period);
    1.1 * v * v
}

/// Fast-rotation radius `R_M` for `lambda` and the outer twist radius `Z`.
pub fn compute_z(pair: &Arc<ComparisonPair>, m: usize, k: usize, period: f64, lambda: f64, y_m: f64) -> Result<ZResult> {
    let big_m = big_m_for(m, k, period, lambda);
    let r_m = superlinear_radius(&pair.g, period, big_m, pair.x_max)?;
    let b = energy_deficit(&pair.g, period, big_m, r_m);
    let big_r_m = (r_m * r_m + 2.0 * b).sqrt();
    let mut y1 = big_r_m.max((2.0 * pair.e0).sqrt()) * (1.0 + 1e-3);
    loop {
        let spiral = build_spiral(pair.clone(), Orientation::Entering, y1, m + 1)?;
        if spiral.closed_curve(1).min_radius() > big_r_m {
            let z = spiral.terminal_anchor().max(y_m) * (1.0 + 1e-9);
            return Ok(ZResult { big_m, r_m, b, big_r_m, z, spiral });
        }
        y1 *= 1.5;
    }
}

/// Squared radius bound for arcs started below `Z`, with its spiral.
pub fn compute_sigma1(pair: &Arc<ComparisonPair>, m: usize, z: f64) -> Result<(f64, SpiralCurve)> {
    let spiral = build_spiral(pair.clone(), Orientation::Exiting, z * (1.0 + 1e-3), m + 1)?;
    let r = spiral.closed_curve(m + 1).max_radius();
    Ok((r * r * 1.05, spiral))
}

#[derive(Clone, Debug, Serialize)]
pub struct ThresholdOptions {
    /// lambda used for M, R_M and Z, as a fraction of lambda_{m,k}.
    pub lambda_fraction: f64,
    /// Fixed lambda; overrides the fraction when set.
    pub lambda: Option<f64>,
    pub t_grid_n: usize,
    pub x_range: f64,
}

impl Default for ThresholdOptions {
    fn default() -> Self {
        ThresholdOptions { lambda_fraction: 0.9, lambda: None, t_grid_n: 64, x_range: 1e4 }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct Provenance {
    pub r_bar: f64,
    pub rotation_bound: RotationBound,
    pub e0: f64,
    pub comparison_t_grid: usize,
    pub comparison_x_range: f64,
    pub y_spiral_anchors: Vec<f64>,
    pub theta_spiral_anchors: Vec<f64>,
    pub z_spiral_anchors: Vec<f64>,
    pub sigma_spiral_anchors: Vec<f64>,
    pub theta_grid: RegionMax,
    pub safety_m: f64,
    pub safety_sigma1: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct ThresholdBundle {
    pub m: usize,
    pub k: usize,
    pub period: f64,
    pub c: f64,
    pub r0: f64,
    pub sigma1: f64,
    #[serde(rename = "Y_m")]
    pub y_m: f64,
    #[serde(rename = "Theta_m")]
    pub theta_m: f64,
    pub lambda_mk: f64,
    pub lambda: f64,
    #[serde(rename = "M")]
    pub big_m: f64,
    pub r_m: f64,
    #[serde(rename = "B")]
    pub b: f64,
    #[serde(rename = "R_M")]
    pub big_r_m: f64,
    #[serde(rename = "Z")]
    pub z: f64,
    #[serde(rename = "Sigma1")]
    pub sigma1_bound: f64,
    pub provenance: Provenance,
}

/// Constants and comparison pair shared by the threshold computations.
pub struct Setup {
    pub r_bar: f64,
    pub bound: RotationBound,
    pub pair: Arc<ComparisonPair>,
    pub modified: ModifiedSystem,
}

pub fn prepare(fld: &PlanarField, opts: &ThresholdOptions) -> Result<Setup> {
    let g = fld
        .g_scalar()
        .ok_or_else(|| Error::Config("thresholds need a scalar second-order field".into()))?;
    let xs: Vec<f64> = (0..=400).map(|i| 1e-2 * (1e4f64).powf(i as f64 / 400.0)).collect();
    let prof = superlinearity_profile(g, &periodic_grid(fld.period, opts.t_grid_n), &xs);
    let r_bar = prof
        .r_bar
        .ok_or_else(|| Error::Domain("x g(t, x) >= x² does not hold on the sampled tail".into()))?;
    let bound = prop_5_3_constants(fld, r_bar, &AuditGrid::new(r_bar))?;
    let pair = Arc::new(build_comparison(g, fld.period, opts.t_grid_n, opts.x_range, bound.r0)?);
    let modified = build_modified(fld, bound.c, bound.r0)?;
    Ok(Setup { r_bar, bound, pair, modified })
}

/// The full chain `(c, r0) -> Y_m -> Theta_m, lambda_{m,k} -> M, R_M, Z -> Sigma1`.
pub fn compute_thresholds(fld: &PlanarField, m: usize, k: usize, opts: &ThresholdOptions) -> Result<(ThresholdBundle, Setup)> {
    if m == 0 || k == 0 {
        return Err(Error::Config("m and k must be positive".into()));
    }
    let setup = prepare(fld, opts)?;
    let bundle = thresholds_from(&setup, fld.period, m, k, opts)?;
    Ok((bundle, setup))
}

pub fn thresholds_from(setup: &Setup, period: f64, m: usize, k: usize, opts: &ThresholdOptions) -> Result<ThresholdBundle> {
    let pair = &setup.pair;
    let r0 = setup.bound.r0;
    let sigma1 = r0 * r0 + 1.0;
    let (y_m, y_spiral) = compute_y_m(pair, m, sigma1)?;
    let th = compute_lambda_mk(pair, m, k, period, r0, y_m)?;
    let lambda = opts.lambda.unwrap_or(opts.lambda_fraction * th.lambda_mk);
    if !(lambda > 0.0) {
        return Err(Error::Config(format!("lambda must be positive, got {lambda}")));
    }
    let zr = compute_z(pair, m, k, period, lambda, y_m)?;
    let (sigma1_bound, s_spiral) = compute_sigma1(pair, m, zr.z)?;
    Ok(ThresholdBundle {
        m,
        k,
        period,
        c: setup.bound.c,
        r0,
        sigma1,
        y_m,
        theta_m: th.theta.value,
        lambda_mk: th.lambda_mk,
        lambda,
        big_m: zr.big_m,
        r_m: zr.r_m,
        b: zr.b,
        big_r_m: zr.big_r_m,
        z: zr.z,
        sigma1_bound,
        provenance: Provenance {
            r_bar: setup.r_bar,
            rotation_bound: setup.bound.clone(),
            e0: pair.e0,
            comparison_t_grid: pair.t_grid.len(),
            comparison_x_range: pair.x_max,
            y_spiral_anchors: y_spiral.y_anchors(),
            theta_spiral_anchors: th.spiral.y_anchors(),
            z_spiral_anchors: zr.spiral.y_anchors(),
            sigma_spiral_anchors: s_spiral.y_anchors(),
            theta_grid: th.theta,
            safety_m: 1.1,
            safety_sigma1: 1.05,
        },
    })
}

impl ThresholdBundle {
    /// Integrator settings whose radius guard clears the containment bound.
    pub fn integrator_config(&self, base: &IntegratorConfig) -> IntegratorConfig {
        base.with_radius_guard(base.radius_guard.max(10.0 * self.sigma1_bound.sqrt()))
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ContainmentAudit {
    pub seeds: usize,
    pub max_radius_sq: f64,
    pub min_radius_sq: f64,
    pub bound: f64,
    pub floor: f64,
    pub passed: bool,
}

/// Integrate `m` turns from seeds on `[Y_m, Z]` and record the radius range.
pub fn containment_audit(fld: &PlanarField, bundle: &ThresholdBundle, seeds: &[(f64, f64)], cfg: &IntegratorConfig) -> Result<ContainmentAudit> {
    let cfg = bundle.integrator_config(cfg);
    let ranges: Vec<Result<(f64, f64)>> = seeds
        .par_iter()
        .map(|&(t0, y0)| {
            let seg = integrate_time(fld, State::new(t0, 0.0, y0), StopCondition::UntilAxisCrossing(Axis::PosY, bundle.m), &cfg);
            if seg.status != SegmentStatus::HitEvent {
                return Err(Error::Domain(format!("containment seed ({t0}, {y0}) ended with {:?}", seg.status)));
            }
            let d = seg.dense_samples(4);
            let hi = d.iter().map(|s| s.radius_sq()).fold(0.0, f64::max);
            let lo = d.iter().map(|s| s.radius_sq()).fold(f64::INFINITY, f64::min);
            Ok((lo, hi))
        })
        .collect();
    let mut max_radius_sq = 0.0f64;
    let mut min_radius_sq = f64::INFINITY;
    for r in ranges {
        let (lo, hi) = r?;
        max_radius_sq = max_radius_sq.max(hi);
        min_radius_sq = min_radius_sq.min(lo);
    }
    Ok(ContainmentAudit {
        seeds: seeds.len(),
        max_radius_sq,
        min_radius_sq,
        bound: bundle.sigma1_bound,
        floor: bundle.sigma1,
        passed: max_radius_sq < bundle.sigma1_bound && min_radius_sq > bundle.sigma1,
    })
}
