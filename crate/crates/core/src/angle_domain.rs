//! The angle-domain formulation: with the angle as independent variable,
//! the pair (time, energy) evolves under the Hamiltonian `Psi(theta, tau, h)`
//! defined implicitly by `H(tau, ray(theta, Psi)) = h`.

use std::cell::RefCell;
use std::f64::consts::PI;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::expr::{self, ExprAst};
use crate::integrator::dopri::{self, Control, Options, Outcome, Problem};
use crate::integrator::IntegratorConfig;
use crate::successor::successor;
use crate::system::{FieldBody, PlanarField};

/// A Hamiltonian with its partials `f = dH/dy`, `g = dH/dx`.
#[derive(Clone, Debug)]
pub struct HamiltonianSpec {
    pub h: ExprAst,
    pub f: ExprAst,
    pub g: ExprAst,
    pub period: f64,
}

/// Point at polar coordinates (theta, rho).
#[inline]
pub fn ray(theta: f64, rho: f64) -> (f64, f64) {
    let r = (2.0 * rho).sqrt();
    (r * theta.sin(), r * theta.cos())
}

impl HamiltonianSpec {
    pub fn parse(h: &str, f: &str, g: &str, period: f64) -> Result<Self> {
        if !(period > 0.0) {
            return Err(Error::Config(format!("period must be positive, got {period}")));
        }
        Ok(HamiltonianSpec { h: expr::parse(h)?, f: expr::parse(f)?, g: expr::parse(g)?, period })
    }

    /// `H = (1 + sin(t)/2) rho + rho²`.
    pub fn radial_forced() -> Self {
        let core = "(1 + 0.5*sin(t) + x^2 + y^2)";
        Self::parse(
            "(1 + 0.5*sin(t))*(x^2 + y^2)/2 + ((x^2 + y^2)/2)^2",
            &format!("y*{core}"),
            &format!("x*{core}"),
            2.0 * PI,
        )
        .expect("valid builtin")
    }

    /// `H = y²/2 + x⁴/4 + (x² + y²)/2`.
    pub fn quartic() -> Self {
        Self::parse("0.5*y^2 + 0.25*x^4 + 0.5*(x^2 + y^2)", "2*y", "x^3 + x", 2.0 * PI)
            .expect("valid builtin")
    }

    pub fn eval(&self, t: f64, x: f64, y: f64) -> f64 {
        self.h.eval(t, x, y)
    }

    pub fn eval_polar(&self, t: f64, theta: f64, rho: f64) -> f64 {
        let (x, y) = ray(theta, rho);
        self.h.eval(t, x, y)
    }

    /// The planar field `x' = dH/dy`, `-y' = dH/dx`.
    pub fn field(&self) -> PlanarField {
        let body = FieldBody::General { f: self.f.clone(), g: self.g.clone() };
        PlanarField::new(body, self.period, 1.0, "hamiltonian").expect("valid period")
    }

    /// Minimum of `g x + f y` and `|H(t, 0, 0)|` over an audit grid.
    pub fn audit(&self, n_t: usize, radii: &[f64], n_angle: usize) -> (f64, f64) {
        let mut min_h1 = f64::INFINITY;
        let mut max_h0 = 0.0f64;
        for i in 0..n_t {
            let t = self.period * i as f64 / n_t as f64;
            max_h0 = max_h0.max(self.h.eval(t, 0.0, 0.0).abs());
            for &r in radii {
                for j in 0..n_angle {
                    let th = 2.0 * PI * j as f64 / n_angle as f64;
                    let (x, y) = (r * th.sin(), r * th.cos());
                    let v = self.g.eval(t, x, y) * x + self.f.eval(t, x, y) * y;
                    min_h1 = min_h1.min(v);
                }
            }
        }
        (min_h1, max_h0)
    }
}

/// Solves `H(tau, ray(theta, rho)) = h` for rho.
#[derive(Clone, Debug)]
pub struct PsiSolver {
    pub spec: HamiltonianSpec,
    pub bracket_growth: f64,
    pub tol: f64,
}

const RHO_CEILING: f64 = 1e12;

impl PsiSolver {
    pub fn new(spec: HamiltonianSpec) -> Self {
        PsiSolver { spec, bracket_growth: 2.0, tol: 1e-12 }
    }

    /// d/drho of H along the ray, from the explicit partials.
    fn d_rho_exact(&self, theta: f64, tau: f64, rho: f64) -> f64 {
        let (x, y) = ray(theta, rho);
        let r = (2.0 * rho).sqrt();
        (self.spec.g.eval(tau, x, y) * theta.sin() + self.spec.f.eval(tau, x, y) * theta.cos()) / r
    }

    pub fn psi(&self, theta: f64, tau: f64, h: f64) -> Result<f64> {
        if !(h > 0.0) {
            return Err(Error::Domain(format!("psi needs h > 0, got {h}")));
        }
        let phi = |rho: f64| self.spec.eval_polar(tau, theta, rho) - h;
        let mut lo = 0.0;
        let mut hi = h.max(1e-6);
        let mut f_hi = phi(hi);
        while f_hi < 0.0 {
            lo = hi;
            hi *= self.bracket_growth;
            if hi > RHO_CEILING {
                return Err(Error::Bracket(format!(
                    "H stays below {h} along theta={theta} up to rho={RHO_CEILING:e}"
                )));
            }
            f_hi = phi(hi);
        }
        if !f_hi.is_finite() {
            return Err(Error::Bracket(format!("H is not finite at rho={hi}")));
        }
        let target = self.tol * h.max(1.0);
        // Bisection to a narrow bracket, then safeguarded Newton.
        while hi - lo > 1e-3 * hi {
            let mid = 0.5 * (lo + hi);
            if phi(mid) < 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let mut rho = 0.5 * (lo + hi);
        for _ in 0..100 {
            let v = phi(rho);
            if v.abs() <= target {
                return Ok(rho);
            }
            if v < 0.0 {
                lo = rho;
            } else {
                hi = rho;
            }
            let d = self.d_rho_exact(theta, tau, rho);
            let newton = rho - v / d;
            rho = if d > 0.0 && newton > lo && newton < hi { newton } else { 0.5 * (lo + hi) };
            if hi - lo <= 4.0 * f64::EPSILON * hi {
                break;
            }
        }
        let v = phi(rho);
        if v.abs() <= 10.0 * target {
            Ok(rho)
        } else {
            Err(Error::Bracket(format!("psi did not converge: residual {v:e}")))
        }
    }

    /// Central-difference partials (dH/drho, dH/dt) at a polar point.
    pub fn partials(&self, theta: f64, tau: f64, rho: f64) -> (f64, f64) {
        let hr = 1e-6 * rho.max(1.0);
        // keep the stencil inside rho > 0
        let hr = hr.min(0.5 * rho);
        let d_rho = (self.spec.eval_polar(tau, theta, rho + hr) - self.spec.eval_polar(tau, theta, rho - hr))
            / (2.0 * hr);
        let ht = 1e-6 * tau.abs().max(1.0);
        let d_t = (self.spec.eval_polar(tau + ht, theta, rho) - self.spec.eval_polar(tau - ht, theta, rho))
            / (2.0 * ht);
        (d_rho, d_t)
    }
}

struct AngleHamiltonian<'a> {
    solver: &'a PsiSolver,
    failure: RefCell<Option<Error>>,
}

impl Problem<2> for AngleHamiltonian<'_> {
    fn rhs(&self, theta: f64, y: &[f64; 2]) -> [f64; 2] {
        let (tau, h) = (y[0], y[1]);
        let rho = match self.solver.psi(theta, tau, h) {
            Ok(r) => r,
            Err(e) => {
                self.failure.borrow_mut().get_or_insert(e);
                return [f64::NAN; 2];
            }
        };
        let (d_rho, d_t) = self.solver.partials(theta, tau, rho);
        if !(d_rho >= 1e-12) {
            self.failure
                .borrow_mut()
                .get_or_insert(Error::AngularStall { t: tau, omega: d_rho });
            return [f64::NAN; 2];
        }
        [1.0 / d_rho, d_t / d_rho]
    }

    fn aborted(&self) -> bool {
        self.failure.borrow().is_some()
    }
}

/// Integrate the angle-domain system from `theta0` over `delta_theta`;
/// returns `(tau1, h1)`.
pub fn integrate_angle_hamiltonian(
    solver: &PsiSolver,
    theta0: f64,
    tau0: f64,
    h0: f64,
    delta_theta: f64,
    cfg: &IntegratorConfig,
) -> Result<(f64, f64)> {
    let problem = AngleHamiltonian { solver, failure: RefCell::new(None) };
    let opts = Options {
        rel_tol: cfg.rel_tol,
        abs_tol: cfg.abs_tol,
        max_step: cfg.max_step.min(0.5),
        max_steps: cfg.max_steps,
        initial_step: None,
    };
    let mut end = [tau0, h0];
    let stats = dopri::integrate(&problem, theta0, [tau0, h0], theta0 + delta_theta, &opts, |s| {
        end = s.y1;
        Control::Continue
    });
    if let Some(e) = problem.failure.into_inner() {
        return Err(e);
    }
    match stats.outcome {
        Outcome::Completed => Ok((end[0], end[1])),
        other => Err(Error::Domain(format!("angle-domain integration ended with {other:?}"))),
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct EquivalencePoint {
    pub t0: f64,
    pub y0: f64,
    pub h0: f64,
    pub t1_time: f64,
    pub h1_time: f64,
    pub t1_angle: f64,
    pub h1_angle: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct EquivalenceReport {
    pub points: Vec<EquivalencePoint>,
    pub max_dt1: f64,
    pub max_dh1: f64,
    pub failures: Vec<String>,
}

/// Compare successor + energy evaluation with the angle-domain map over one
/// full turn for every seed.
pub fn verify_prop_2_3(
    solver: &PsiSolver,
    fld: &PlanarField,
    grid: &[(f64, f64)],
    cfg: &IntegratorConfig,
) -> EquivalenceReport {
    let results: Vec<std::result::Result<EquivalencePoint, String>> = grid
        .par_iter()
        .map(|&(t0, y0)| {
            let h0 = solver.spec.eval(t0, 0.0, y0);
            let s = successor(fld, t0, y0, cfg).map_err(|e| format!("({t0},{y0}) successor: {e}"))?;
            let h1_time = solver.spec.eval(s.t1, 0.0, s.y1);
            let (t1_angle, h1_angle) = integrate_angle_hamiltonian(solver, 0.0, t0, h0, 2.0 * PI, cfg)
                .map_err(|e| format!("({t0},{y0}) angle domain: {e}"))?;
            Ok(EquivalencePoint { t0, y0, h0, t1_time: s.t1, h1_time, t1_angle, h1_angle })
        })
        .collect();
    let mut report = EquivalenceReport { points: Vec::new(), max_dt1: 0.0, max_dh1: 0.0, failures: Vec::new() };
    for r in results {
        match r {
            Ok(p) => {
                report.max_dt1 = report.max_dt1.max((p.t1_time - p.t1_angle).abs());
                report.max_dh1 = report.max_dh1.max((p.h1_time - p.h1_angle).abs());
                report.points.push(p);
            }
            Err(e) => report.failures.push(e),
        }
    }
    report
}

/// 5 x 5 seed grid: t0 in {0, T/5, ..}, y0 in {0.5, 1, .., 2.5}.
pub fn standard_grid(period: f64) -> Vec<(f64, f64)> {
    let mut g = Vec::with_capacity(25);
    for i in 0..5 {
        for j in 0..5 {
            g.push((period * i as f64 / 5.0, 0.5 * (j + 1) as f64));
        }
    }
    g
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rho_spec() -> HamiltonianSpec {
        HamiltonianSpec::parse("(x^2 + y^2)/2", "y", "x", 2.0 * PI).unwrap()
    }

    fn rho_sq_spec() -> HamiltonianSpec {
        HamiltonianSpec::parse("((x^2 + y^2)/2)^2", "y*(x^2 + y^2)", "x*(x^2 + y^2)", 2.0 * PI).unwrap()
    }

    #[test]
    fn psi_of_rho_is_identity() {
        let s = PsiSolver::new(rho_spec());
        for &h in &[0.1, 1.0, 7.5] {
            assert!((s.psi(0.3, 1.0, h).unwrap() - h).abs() < 1e-11 * h.max(1.0));
        }
    }

    #[test]
    fn psi_of_rho_squared() {
        let s = PsiSolver::new(rho_sq_spec());
        assert!((s.psi(1.1, 0.0, 4.0).unwrap() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn psi_radial_quadratic() {
        let s = PsiSolver::new(HamiltonianSpec::radial_forced());
        let oracle = 0.5 * (5f64.sqrt() - 1.0);
        assert!((s.psi(0.0, 0.0, 1.0).unwrap() - oracle).abs() < 1e-12);
    }

    #[test]
    fn psi_bracket_failure() {
        let s = PsiSolver::new(HamiltonianSpec::parse("x^2/(1 + x^2)", "0", "0", 1.0).unwrap());
        assert!(matches!(s.psi(PI / 2.0, 0.0, 2.0), Err(Error::Bracket(_))));
    }

    #[test]
    fn angle_map_for_rho() {
        let s = PsiSolver::new(rho_spec());
        let (t1, h1) = integrate_angle_hamiltonian(&s, 0.0, 0.5, 1.5, 2.0 * PI, &IntegratorConfig::default()).unwrap();
        assert!((t1 - 0.5 - 2.0 * PI).abs() < 1e-9);
        assert!((h1 - 1.5).abs() < 1e-12);
    }

    #[test]
    fn angle_map_for_rho_squared() {
        let s = PsiSolver::new(rho_sq_spec());
        let h0 = 2.0;
        let (t1, h1) = integrate_angle_hamiltonian(&s, 0.0, 0.0, h0, 2.0 * PI, &IntegratorConfig::default()).unwrap();
        assert!((t1 - PI / h0.sqrt()).abs() < 1e-8);
        assert!((h1 - h0).abs() < 1e-9);
    }

    #[test]
    fn autonomous_energy_is_conserved() {
        let s = PsiSolver::new(HamiltonianSpec::quartic());
        let (_, h1) = integrate_angle_hamiltonian(&s, 0.0, 0.0, 3.0, 2.0 * PI, &IntegratorConfig::default()).unwrap();
        assert!((h1 - 3.0).abs() < 1e-9);
    }

    #[test]
    fn equivalence_for_rho() {
        let spec = rho_spec();
        let s = PsiSolver::new(spec.clone());
        let cfg = IntegratorConfig::default().with_tol(1e-11, 1e-13);
        let rep = verify_prop_2_3(&s, &spec.field(), &[(0.0, 1.0), (1.0, 2.0)], &cfg);
        assert!(rep.failures.is_empty());
        assert!(rep.max_dt1 < 1e-9 && rep.max_dh1 < 1e-9, "{rep:?}");
    }

    #[test]
    fn builtins_are_normalised_and_rotating() {
        for spec in [HamiltonianSpec::radial_forced(), HamiltonianSpec::quartic()] {
            let (h1, h0) = spec.audit(16, &[0.01, 0.5, 1.0, 5.0], 32);
            assert!(h1 > 0.0);
            assert_eq!(h0, 0.0);
        }
    }

    #[test]
    fn partials_match_explicit_fields() {
        let spec = HamiltonianSpec::radial_forced();
        let s = PsiSolver::new(spec);
        let (rho, theta, tau) = (0.8, 0.4, 1.3);
        let (d_rho, d_t) = s.partials(theta, tau, rho);
        assert!((d_rho - s.d_rho_exact(theta, tau, rho)).abs() < 1e-8);
        assert!((d_t - 0.5 * tau.cos() * rho).abs() < 1e-8);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn psi_is_periodic(theta in -4.0f64..4.0, tau in -4.0f64..4.0, h in 0.05f64..20.0) {
            let s = PsiSolver::new(HamiltonianSpec::radial_forced());
            let p = s.psi(theta, tau, h).unwrap();
            let p_theta = s.psi(theta + 2.0 * PI, tau, h).unwrap();
            let p_tau = s.psi(theta, tau + 2.0 * PI, h).unwrap();
            prop_assert!((p - p_theta).abs() < 1e-10 * p.max(1.0));
            prop_assert!((p - p_tau).abs() < 1e-10 * p.max(1.0));
        }

        #[test]
        fn psi_inverts_h(theta in -4.0f64..4.0, tau in -4.0f64..4.0, rho in 0.01f64..10.0) {
            let s = PsiSolver::new(HamiltonianSpec::quartic());
            let h = s.spec.eval_polar(tau, theta, rho);
            let back = s.psi(theta, tau, h).unwrap();
            prop_assert!((back - rho).abs() < 1e-9 * rho.max(1.0));
            let h2 = s.spec.eval_polar(tau, theta, back);
            prop_assert!((h2 - h).abs() <= 1e-11 * h.max(1.0));
        }
    }
}
