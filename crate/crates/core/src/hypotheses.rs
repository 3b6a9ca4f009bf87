//! Grid certification of the rotation and sign hypotheses on planar fields,
//! superlinearity profiles and the lower rotation bound for scalar
//! second-order equations.
//!
//! Every check evaluates a normalised margin on a tensor grid, then refines
//! eightfold around the worst point. The drop between the coarse and the
//! refined minimum serves as the estimate of what the grid might still miss;
//! a verdict closer to the threshold than that is reported as indeterminate.

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expr::{ExprAst, Var};
use crate::numeric::linspace;
use crate::system::{FieldKind, PlanarField, State};

#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq)]
pub struct AuditGrid {
    pub n_t: usize,
    pub n_r: usize,
    pub n_angle: usize,
    pub r_min: f64,
    pub r_audit: f64,
}

impl AuditGrid {
    /// Default resolution on radii `[r_min, 10 max(r_bar, 1)]`.
    pub fn new(r_bar: f64) -> Self {
        AuditGrid { n_t: 32, n_r: 48, n_angle: 128, r_min: 1e-2, r_audit: 10.0 * r_bar.max(1.0) }
    }

    pub fn refined(&self, factor: usize) -> Self {
        AuditGrid {
            n_t: self.n_t * factor,
            n_r: self.n_r * factor,
            n_angle: self.n_angle * factor,
            ..*self
        }
    }

    fn t_axis(&self, fld: &PlanarField) -> Vec<f64> {
        if fld.is_autonomous() {
            vec![0.0]
        } else {
            (0..self.n_t).map(|i| fld.period * i as f64 / self.n_t as f64).collect()
        }
    }
}

fn geomspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    if n <= 1 || a == b {
        return vec![a];
    }
    let (la, lb) = (a.ln(), b.ln());
    (0..n).map(|i| (la + (lb - la) * i as f64 / (n - 1) as f64).exp()).collect()
}

#[derive(Copy, Clone, Debug, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Pass,
    Fail,
    Indeterminate,
}

#[derive(Clone, Debug, Serialize)]
pub struct HypothesisCheck {
    pub name: String,
    pub status: Verdict,
    pub worst_point: State,
    /// Refined minimum of the margin over the threshold.
    pub worst_margin: f64,
    /// Drop of the minimum under local refinement.
    pub grid_variation: f64,
    pub note: Option<String>,
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct Constants {
    pub c1: Option<f64>,
    #[serde(rename = "R")]
    pub big_r: Option<f64>,
    pub delta: Option<f64>,
    #[serde(rename = "D")]
    pub big_d: Option<f64>,
    pub c: Option<f64>,
    pub r0: Option<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct HypothesisReport {
    pub checks: Vec<HypothesisCheck>,
    pub grid: AuditGrid,
    pub constants: Constants,
    pub warnings: Vec<String>,
}

impl HypothesisReport {
    pub fn get(&self, name: &str) -> Option<&HypothesisCheck> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn all_pass(&self) -> bool {
        self.checks.iter().all(|c| c.status == Verdict::Pass)
    }

    pub fn any_fail(&self) -> bool {
        self.checks.iter().any(|c| c.status == Verdict::Fail)
    }
}

/// A margin sampled on the product of three axes.
struct BoxAudit<'a, F> {
    axes: [Vec<f64>; 3],
    eval: &'a F,
}

impl<F> BoxAudit<'_, F>
where
    F: Fn(f64, f64, f64) -> (f64, State) + Sync,
{
    fn min_over(axes: &[Vec<f64>; 3], eval: &F) -> (f64, State, [usize; 3]) {
        let init = (f64::INFINITY, State::new(0.0, 0.0, 0.0), [0usize; 3]);
        (0..axes[0].len())
            .into_par_iter()
            .map(|i| {
                let mut best = init;
                for (j, &b) in axes[1].iter().enumerate() {
                    for (k, &c) in axes[2].iter().enumerate() {
                        let (m, s) = eval(axes[0][i], b, c);
                        // NaN margins count as violations
                        let m = if m.is_nan() { f64::NEG_INFINITY } else { m };
                        if m < best.0 {
                            best = (m, s, [i, j, k]);
                        }
                    }
                }
                best
            })
            .reduce(|| init, |a, b| if b.0 < a.0 { b } else { a })
    }

    /// (coarse min, refined min, refined worst state)
    fn run(&self) -> (f64, f64, State) {
        let (coarse, s0, idx) = Self::min_over(&self.axes, self.eval);
        if !coarse.is_finite() {
            return (coarse, coarse, s0);
        }
        let local: [Vec<f64>; 3] = std::array::from_fn(|d| {
            let ax = &self.axes[d];
            if ax.len() == 1 {
                return ax.clone();
            }
            let lo = ax[idx[d].saturating_sub(1)];
            let hi = ax[(idx[d] + 1).min(ax.len() - 1)];
            linspace(lo, hi, 17)
        });
        let (refined, s1, _) = Self::min_over(&local, self.eval);
        if refined < coarse {
            (coarse, refined, s1)
        } else {
            (coarse, coarse, s0)
        }
    }
}

fn decide(name: &str, coarse: f64, refined: f64, worst: State, strict: bool) -> HypothesisCheck {
    let nu = (coarse - refined).max(0.0);
    let violates = |v: f64| if strict { v <= 0.0 } else { v < -1e-12 };
    let status = if violates(refined) {
        Verdict::Fail
    } else if violates(refined - nu) {
        Verdict::Indeterminate
    } else {
        Verdict::Pass
    };
    HypothesisCheck {
        name: name.to_string(),
        status,
        worst_point: worst,
        worst_margin: refined,
        grid_variation: nu,
        note: None,
    }
}

fn audit<F>(name: &str, axes: [Vec<f64>; 3], eval: F, strict: bool) -> HypothesisCheck
where
    F: Fn(f64, f64, f64) -> (f64, State) + Sync,
{
    let (coarse, refined, worst) = BoxAudit { axes, eval: &eval }.run();
    decide(name, coarse, refined, worst, strict)
}

fn rotation_ratio(fld: &PlanarField, t: f64, x: f64, y: f64) -> f64 {
    let (f, g) = fld.fg(t, x, y);
    (g * x + f * y) / (x * x + y * y)
}

/// A1 (`g x + f y > 0` off the origin) and A2 (`g x + f y >= c1 r²` for
/// `r >= R`), both in normalised form.
pub fn check_a1_a2(fld: &PlanarField, grid: &AuditGrid, c1: f64, big_r: f64) -> Vec<HypothesisCheck> {
    let t_axis = grid.t_axis(fld);
    let angles: Vec<f64> = (0..grid.n_angle).map(|j| 2.0 * PI * j as f64 / grid.n_angle as f64).collect();
    let polar = |t: f64, r: f64, th: f64| {
        let (x, y) = (r * th.sin(), r * th.cos());
        (rotation_ratio(fld, t, x, y), State::new(t, x, y))
    };
    let a1 = audit(
        "A1",
        [t_axis.clone(), geomspace(grid.r_min, grid.r_audit, grid.n_r), angles.clone()],
        polar,
        true,
    );
    let r_lo = big_r.max(grid.r_min);
    let r_hi = grid.r_audit.max(2.0 * r_lo);
    let mut a2 = audit(
        "A2",
        [t_axis, geomspace(r_lo, r_hi, grid.n_r), angles],
        |t, r, th| {
            let (m, s) = polar(t, r, th);
            (m - c1, s)
        },
        false,
    );
    a2.note = Some(format!("c1 = {c1}, radii in [{r_lo}, {r_hi}]"));
    vec![a1, a2]
}

/// Sup of |f| per |y| band and |g| per |x| band on the grid.
fn sampled_envelope(fld: &PlanarField, grid: &AuditGrid) -> (f64, f64) {
    let t_axis = grid.t_axis(fld);
    let vals = linspace(-grid.r_audit, grid.r_audit, grid.n_r.max(2));
    let mut fmax = 0.0f64;
    let mut gmax = 0.0f64;
    for &t in &t_axis {
        for &x in &vals {
            for &y in &vals {
                let (f, g) = fld.fg(t, x, y);
                fmax = fmax.max(f.abs());
                gmax = gmax.max(g.abs());
            }
        }
    }
    (fmax, gmax)
}

/// A3 structurally when f ignores x and g ignores y; otherwise only a
/// sampled envelope is available and the verdict is indeterminate.
/// A4 on the axis strips of half-width `delta`, A5 on the corners beyond `big_d`.
pub fn check_a3_a4_a5(
    fld: &PlanarField,
    delta: f64,
    big_d: f64,
    grid: &AuditGrid,
) -> (Vec<HypothesisCheck>, Vec<String>) {
    let mut warnings = Vec::new();
    let (f_x, _) = fld.depends_on(Var::X);
    let (_, g_y) = fld.depends_on(Var::Y);
    let structural = fld.kind() == FieldKind::ScalarSecondOrder || (!f_x && !g_y);
    let a3 = if structural {
        warnings.push("StructuralOnlyWarning: A3 certified from variable dependence only".to_string());
        HypothesisCheck {
            name: "A3".into(),
            status: Verdict::Pass,
            worst_point: State::new(0.0, 0.0, 0.0),
            worst_margin: f64::INFINITY,
            grid_variation: 0.0,
            note: Some("structural: f does not depend on x, g does not depend on y".into()),
        }
    } else {
        let (fmax, gmax) = sampled_envelope(fld, grid);
        HypothesisCheck {
            name: "A3".into(),
            status: Verdict::Indeterminate,
            worst_point: State::new(0.0, 0.0, 0.0),
            worst_margin: f64::NAN,
            grid_variation: 0.0,
            note: Some(format!(
                "sampled envelope on |x|,|y| <= {}: sup|f| = {fmax:e}, sup|g| = {gmax:e}",
                grid.r_audit
            )),
        }
    };

    let t_axis = grid.t_axis(fld);
    let across = linspace(0.0, delta, grid.n_r.max(2));
    let along = geomspace(grid.r_min, grid.r_audit, grid.n_r);
    // Strip |x| <= delta, xy >= 0, y != 0: f y > 0.
    let strip_f = |t: f64, u: f64, v: f64| {
        let mut worst = (f64::INFINITY, State::new(t, 0.0, 0.0));
        for sign in [1.0, -1.0] {
            let (x, y) = (sign * u, sign * v);
            let (f, _) = fld.fg(t, x, y);
            let m = f * y / (y * y);
            if !(m >= worst.0) {
                worst = (m, State::new(t, x, y));
            }
        }
        worst
    };
    // Strip |y| <= delta, xy <= 0, x != 0: g x > 0.
    let strip_g = |t: f64, u: f64, v: f64| {
        let mut worst = (f64::INFINITY, State::new(t, 0.0, 0.0));
        for sign in [1.0, -1.0] {
            let (x, y) = (sign * v, -sign * u);
            let (_, g) = fld.fg(t, x, y);
            let m = g * x / (x * x);
            if !(m >= worst.0) {
                worst = (m, State::new(t, x, y));
            }
        }
        worst
    };
    let a4a = audit("A4a", [t_axis.clone(), across.clone(), along.clone()], strip_f, true);
    let a4b = audit("A4b", [t_axis.clone(), across, along], strip_g, true);
    let mut a4 = if a4a.status == Verdict::Pass { a4b } else { a4a };
    a4.name = "A4".into();
    a4.note = Some(format!("delta = {delta}"));

    let far = geomspace(big_d, grid.r_audit.max(2.0 * big_d), grid.n_r);
    let corners = |t: f64, u: f64, v: f64| {
        let mut worst = (f64::INFINITY, State::new(t, 0.0, 0.0));
        for (sx, sy) in [(1.0, 1.0), (1.0, -1.0), (-1.0, -1.0), (-1.0, 1.0)] {
            let (x, y) = (sx * u, sy * v);
            let (f, g) = fld.fg(t, x, y);
            // xy <= 0 needs f y > 0, xy >= 0 needs g x > 0
            let m = if x * y <= 0.0 { f * y / (y * y) } else { g * x / (x * x) };
            if !(m >= worst.0) {
                worst = (m, State::new(t, x, y));
            }
        }
        worst
    };
    let mut a5 = audit("A5", [t_axis, far.clone(), far], corners, true);
    a5.note = Some(format!("D = {big_d}"));
    (vec![a3, a4, a5], warnings)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CheckOptions {
    pub c1: f64,
    #[serde(rename = "R")]
    pub big_r: f64,
    pub delta: f64,
    #[serde(rename = "D")]
    pub big_d: f64,
    pub grid: Option<AuditGrid>,
}

impl Default for CheckOptions {
    fn default() -> Self {
        CheckOptions { c1: 0.5, big_r: 10.0, delta: 0.5, big_d: 1.0, grid: None }
    }
}

pub fn check_all(fld: &PlanarField, opts: &CheckOptions) -> HypothesisReport {
    let grid = opts.grid.unwrap_or_else(|| AuditGrid::new(opts.big_r.max(opts.big_d)));
    let mut checks = check_a1_a2(fld, &grid, opts.c1, opts.big_r);
    let (rest, warnings) = check_a3_a4_a5(fld, opts.delta, opts.big_d, &grid);
    checks.extend(rest);
    HypothesisReport {
        checks,
        grid,
        constants: Constants {
            c1: Some(opts.c1),
            big_r: Some(opts.big_r),
            delta: Some(opts.delta),
            big_d: Some(opts.big_d),
            c: None,
            r0: None,
        },
        warnings,
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct SuperlinearityProfile {
    /// (|x|, min over t and sign of g(t, x)/x)
    pub entries: Vec<(f64, f64)>,
    /// Smallest sampled |x| from which `x g >= x²` holds at every larger sample.
    pub r_bar: Option<f64>,
    pub superlinear: bool,
}

pub fn superlinearity_profile(g: &ExprAst, t_grid: &[f64], x_values: &[f64]) -> SuperlinearityProfile {
    let mut xs: Vec<f64> = x_values.iter().map(|x| x.abs()).filter(|x| *x > 0.0).collect();
    xs.sort_by(f64::total_cmp);
    xs.dedup();
    let entries: Vec<(f64, f64)> = xs
        .iter()
        .map(|&x| {
            let m = t_grid
                .iter()
                .flat_map(|&t| [g.eval(t, x, 0.0) / x, g.eval(t, -x, 0.0) / -x])
                .fold(f64::INFINITY, f64::min);
            (x, m)
        })
        .collect();
    let mut r_bar = None;
    for (x, m) in entries.iter().rev() {
        if *m >= 1.0 {
            r_bar = Some(*x);
        } else {
            break;
        }
    }
    let superlinear = if entries.len() >= 4 {
        let mut vals: Vec<f64> = entries.iter().map(|e| e.1).collect();
        let upper = &vals[vals.len() / 2..];
        let monotone = upper.windows(2).all(|w| w[1] >= w[0]);
        let last = *vals.last().unwrap();
        vals.sort_by(f64::total_cmp);
        let median = vals[vals.len() / 2];
        monotone && last > 2.0 * median.max(0.0) && last > 0.0
    } else {
        false
    };
    SuperlinearityProfile { entries, r_bar, superlinear }
}

#[derive(Clone, Debug, Serialize)]
pub struct RotationBound {
    pub c: f64,
    pub r0: f64,
    /// Minimum of the ratio over the sampled region `r >= r0`.
    pub sampled_min: f64,
    pub grid: AuditGrid,
}

/// Minimum of `(y² + x g(t,x)) / (x² + y²)` on each circle of `radii`.
fn circle_minima(g: &ExprAst, period: f64, radii: &[f64], n_t: usize, n_angle: usize) -> Vec<f64> {
    let ts: Vec<f64> = (0..n_t).map(|i| period * i as f64 / n_t as f64).collect();
    radii
        .par_iter()
        .map(|&r| {
            let mut m = f64::INFINITY;
            for j in 0..n_angle {
                let th = 2.0 * PI * j as f64 / n_angle as f64;
                let (x, y) = (r * th.sin(), r * th.cos());
                for &t in &ts {
                    let v = (y * y + x * g.eval(t, x, 0.0)) / (r * r);
                    m = m.min(v);
                }
            }
            m
        })
        .collect()
}

/// Smallest grid radius `r0 >= r_bar` and the largest certified `c < 1`
/// with `(y² + x g) / (x² + y²) >= c` on `r0 <= r <= r_audit`.
pub fn prop_5_3_constants(fld: &PlanarField, r_bar: f64, grid: &AuditGrid) -> Result<RotationBound> {
    let g = fld
        .g_scalar()
        .ok_or_else(|| Error::Domain("rotation bound needs a scalar second-order field".into()))?;
    let n_t = grid.n_t.max(128) + grid.n_t.max(128) % 2;
    let n_angle = grid.n_angle.max(256);
    let r_start = r_bar.max(grid.r_min);
    let radii = geomspace(r_start, grid.r_audit.max(2.0 * r_start), grid.n_r.max(64));
    let minima = circle_minima(g, fld.period, &radii, n_t, n_angle);
    let mut tail = vec![f64::INFINITY; radii.len()];
    let mut acc = f64::INFINITY;
    for i in (0..radii.len()).rev() {
        acc = acc.min(minima[i]);
        tail[i] = acc;
    }
    for i in 0..radii.len() {
        let c = tail[i].min(1.0) - 0.01;
        if c > 0.0 {
            return Ok(RotationBound {
                c,
                r0: radii[i],
                sampled_min: tail[i],
                grid: AuditGrid { n_t, n_angle, n_r: radii.len(), r_min: radii[i], r_audit: *radii.last().unwrap() },
            });
        }
    }
    Err(Error::NotFound(format!("no (c, r0) certified on radii [{r_start}, {}]", radii.last().unwrap())))
}

/// Re-check `(y² + x g)/(x² + y²) >= c` on `[r0, r_audit]` with a finer grid.
pub fn verify_rotation_bound(fld: &PlanarField, bound: &RotationBound, factor: usize) -> Result<bool> {
    let g = fld
        .g_scalar()
        .ok_or_else(|| Error::Domain("rotation bound needs a scalar second-order field".into()))?;
    let radii = geomspace(bound.r0, bound.grid.r_audit, bound.grid.n_r * factor);
    let minima = circle_minima(g, fld.period, &radii, bound.grid.n_t * factor, bound.grid.n_angle * factor);
    Ok(minima.iter().all(|m| *m >= bound.c))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid() -> AuditGrid {
        AuditGrid::new(1.0)
    }

    #[test]
    fn cubic_plus_linear_passes_everything() {
        let fld = PlanarField::scalar("x + x^3", 2.0 * PI, 1.0, "g").unwrap();
        let opts = CheckOptions { c1: 1.0, big_r: 1.0, delta: 0.5, big_d: 1.0, grid: Some(grid()) };
        let rep = check_all(&fld, &opts);
        for c in &rep.checks {
            assert_eq!(c.status, Verdict::Pass, "{c:?}");
        }
        assert!(!rep.warnings.is_empty());
    }

    #[test]
    fn cubic_fails_a2_near_origin() {
        let fld = PlanarField::duffing_autonomous(1.0);
        let a = check_a1_a2(&fld, &grid(), 0.5, 0.1);
        assert_eq!(a[0].status, Verdict::Pass);
        assert_eq!(a[1].status, Verdict::Fail);
        // ratio x² at the inner radius on the x axis
        assert!((a[1].worst_margin - (0.01 - 0.5)).abs() < 1e-9);
    }

    #[test]
    fn cubic_passes_a2_far_out() {
        let fld = PlanarField::duffing_autonomous(1.0);
        let a = check_a1_a2(&fld, &grid(), 0.5, 10.0);
        assert_eq!(a[1].status, Verdict::Pass);
    }

    #[test]
    fn cubic_with_unit_c1_misses_by_a_hair() {
        // min over the circle of radius R of 1 - s + R² s² is 1 - 1/(4R²)
        let fld = PlanarField::duffing_autonomous(1.0);
        let a = check_a1_a2(&fld, &grid(), 1.0, 10.0);
        assert_eq!(a[1].status, Verdict::Fail);
        assert!((a[1].worst_margin + 1.0 / 400.0).abs() < 1e-4, "{}", a[1].worst_margin);
    }

    #[test]
    fn forcing_breaks_a4() {
        let fld = PlanarField::duffing_forced(1.0);
        let (checks, warnings) = check_a3_a4_a5(&fld, 0.5, 1.0, &grid());
        assert_eq!(checks[0].status, Verdict::Pass);
        assert!(warnings[0].contains("StructuralOnly"));
        assert_eq!(checks[1].status, Verdict::Fail);
        assert_eq!(checks[2].status, Verdict::Pass);
    }

    #[test]
    fn general_field_a3_is_indeterminate() {
        let fld = PlanarField::general("y + 0.1*x", "x", 1.0, "mix").unwrap();
        let (checks, _) = check_a3_a4_a5(&fld, 0.5, 1.0, &grid());
        assert_eq!(checks[0].status, Verdict::Indeterminate);
    }

    #[test]
    fn profile_examples() {
        let cubic = crate::expr::parse("x^3").unwrap();
        let p = superlinearity_profile(&cubic, &[0.0], &[1.0, 2.0, 4.0]);
        assert_eq!(p.entries, vec![(1.0, 1.0), (2.0, 4.0), (4.0, 16.0)]);
        assert_eq!(p.r_bar, Some(1.0));

        let forced = crate::expr::parse("x^3 + 0.5*cos(t)").unwrap();
        let ts: Vec<f64> = (0..64).map(|i| 2.0 * PI * i as f64 / 64.0).collect();
        let p = superlinearity_profile(&forced, &ts, &[2.0]);
        assert!((p.entries[0].1 - 3.75).abs() < 1e-12);

        let lin = crate::expr::parse("x").unwrap();
        let xs: Vec<f64> = (1..20).map(|i| i as f64).collect();
        assert!(!superlinearity_profile(&lin, &[0.0], &xs).superlinear);
        assert!(superlinearity_profile(&cubic, &[0.0], &xs).superlinear);
    }

    #[test]
    fn rotation_bound_for_cubic_plus_linear() {
        let fld = PlanarField::scalar("x + x^3", 2.0 * PI, 1.0, "g").unwrap();
        let b = prop_5_3_constants(&fld, 0.05, &grid()).unwrap();
        assert!(b.c >= 0.99 - 1e-12);
        assert!((b.r0 - 0.05).abs() < 1e-12);
    }

    #[test]
    fn rotation_bound_for_forced_duffing() {
        let fld = PlanarField::duffing_forced(1.0);
        let ts: Vec<f64> = (0..128).map(|i| 2.0 * PI * i as f64 / 128.0).collect();
        let xs: Vec<f64> = (1..=200).map(|i| 0.05 * i as f64).collect();
        let prof = superlinearity_profile(fld.g_scalar().unwrap(), &ts, &xs);
        let r_bar = prof.r_bar.unwrap();
        let b = prop_5_3_constants(&fld, r_bar, &AuditGrid::new(r_bar)).unwrap();
        assert!(b.c > 0.0 && b.c < 1.0 && b.r0 >= r_bar);
        assert!(verify_rotation_bound(&fld, &b, 4).unwrap());
    }
}
