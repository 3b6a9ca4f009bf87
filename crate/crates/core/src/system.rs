//! Planar systems `x' = f(t,x,y)`, `-y' = g(t,x,y)` and the polar lift.
//!
//! Angles follow the modified polar coordinates `x = sqrt(2 rho) sin(theta)`,
//! `y = sqrt(2 rho) cos(theta)`: theta is zero on the positive y half-axis and
//! grows in the direction the flow rotates when `g x + f y > 0`.

use std::f64::consts::PI;
use std::sync::Arc;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::expr::{self, ExprAst, Var};
use crate::numeric::GaussRule;

#[derive(Copy, Clone, Debug, PartialEq, Serialize)]
pub struct State {
    pub t: f64,
    pub x: f64,
    pub y: f64,
}

impl State {
    pub fn new(t: f64, x: f64, y: f64) -> Self {
        State { t, x, y }
    }

    pub fn radius_sq(&self) -> f64 {
        self.x * self.x + self.y * self.y
    }
}

#[derive(Copy, Clone, Debug, PartialEq)]
pub struct PolarPoint {
    pub theta: f64,
    pub rho: f64,
}

impl PolarPoint {
    pub fn cartesian(&self) -> (f64, f64) {
        let r = (2.0 * self.rho).sqrt();
        (r * self.theta.sin(), r * self.theta.cos())
    }
}

/// Angle of (x, y) in the modified polar convention, in (-pi, pi].
pub fn raw_angle(x: f64, y: f64) -> f64 {
    x.atan2(y)
}

/// Shift `angle` by a multiple of 2 pi so it lies within pi of `hint`.
pub fn unwrap_near(angle: f64, hint: f64) -> f64 {
    let two_pi = 2.0 * PI;
    angle + two_pi * ((hint - angle) / two_pi).round()
}

pub fn polar_lift(x: f64, y: f64, theta_hint: f64) -> Result<PolarPoint> {
    let r2 = x * x + y * y;
    if r2 == 0.0 || !r2.is_finite() {
        return Err(Error::Domain(format!("polar lift undefined at ({x}, {y})")));
    }
    Ok(PolarPoint { theta: unwrap_near(raw_angle(x, y), theta_hint), rho: 0.5 * r2 })
}

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum FieldKind {
    General,
    ScalarSecondOrder,
}

/// Smooth monotone transition from 0 (s <= 0) to 1 (s >= 1) built from
/// `exp(-1/s)` bumps, with its derivative.
pub fn smooth_step(s: f64) -> (f64, f64) {
    if s <= 0.0 {
        return (0.0, 0.0);
    }
    if s >= 1.0 {
        return (1.0, 0.0);
    }
    let a = (-1.0 / s).exp();
    let b = (-1.0 / (1.0 - s)).exp();
    let sum = a + b;
    let phi = a / sum;
    let dphi = a * b * (1.0 / (s * s) + 1.0 / ((1.0 - s) * (1.0 - s))) / (sum * sum);
    (phi, dphi)
}

/// Cutoff-regularised scalar system: linear `c x` near the origin, the base
/// equation outside radius² `sigma1`.
#[derive(Clone, Debug)]
pub struct ModifiedParams {
    pub g_scalar: ExprAst,
    pub c: f64,
    pub sigma0: f64,
    pub sigma1: f64,
    /// Constant added to the primitive of g so that `G - c x²/2 >= 0`.
    pub offset: f64,
    rule: GaussRule,
}

impl ModifiedParams {
    pub fn new(g_scalar: ExprAst, c: f64, sigma0: f64, sigma1: f64, offset: f64) -> Self {
        ModifiedParams { g_scalar, c, sigma0, sigma1, offset, rule: GaussRule::new(10) }
    }

    /// Primitive of g in x from 0, without the offset.
    pub fn primitive(&self, t: f64, x: f64) -> f64 {
        let panels = ((x.abs() / 0.5).ceil() as usize).clamp(1, 64);
        self.rule.composite(|s| self.g_scalar.eval(t, s, 0.0), 0.0, x, panels)
    }

    /// phi(sigma) and phi'(sigma) for sigma = x² + y².
    pub fn cutoff(&self, sigma: f64) -> (f64, f64) {
        let width = self.sigma1 - self.sigma0;
        let (phi, dphi) = smooth_step((sigma - self.sigma0) / width);
        (phi, dphi / width)
    }

    /// Unscaled (f, g) of the modified Hamiltonian.
    fn eval(&self, t: f64, x: f64, y: f64) -> (f64, f64) {
        let sigma = x * x + y * y;
        if sigma >= self.sigma1 {
            return (y, self.g_scalar.eval(t, x, 0.0));
        }
        if sigma <= self.sigma0 {
            return (y, self.c * x);
        }
        let (phi, dphi) = self.cutoff(sigma);
        let gx = self.g_scalar.eval(t, x, 0.0);
        let ghat = self.primitive(t, x) + self.offset - 0.5 * self.c * x * x;
        let f = y * (1.0 + 2.0 * ghat * dphi);
        let g = self.c * x + (gx - self.c * x) * phi + 2.0 * x * ghat * dphi;
        (f, g)
    }
}

#[derive(Clone, Debug)]
pub enum FieldBody {
    /// f and g given directly; lambda is carried as metadata only.
    General { f: ExprAst, g: ExprAst },
    /// `f = sqrt(lambda) y`, `g = sqrt(lambda) g_scalar(t, x)`.
    Scalar { g: ExprAst },
    Modified(Arc<ModifiedParams>),
}

#[derive(Clone, Debug)]
pub struct PlanarField {
    pub body: FieldBody,
    pub period: f64,
    pub lambda: f64,
    pub label: String,
    sqrt_lambda: f64,
}

impl PlanarField {
    pub fn new(body: FieldBody, period: f64, lambda: f64, label: impl Into<String>) -> Result<Self> {
        if !(period > 0.0 && period.is_finite()) {
            return Err(Error::Config(format!("period must be positive, got {period}")));
        }
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(Error::Config(format!("lambda must be positive, got {lambda}")));
        }
        Ok(PlanarField { body, period, lambda, label: label.into(), sqrt_lambda: lambda.sqrt() })
    }

    pub fn general(f: &str, g: &str, period: f64, label: impl Into<String>) -> Result<Self> {
        let body = FieldBody::General { f: expr::parse(f)?, g: expr::parse(g)? };
        Self::new(body, period, 1.0, label)
    }

    pub fn scalar(g: &str, period: f64, lambda: f64, label: impl Into<String>) -> Result<Self> {
        Self::new(FieldBody::Scalar { g: expr::parse(g)? }, period, lambda, label)
    }

    /// `x' = sqrt(lambda) y`, `y' = -sqrt(lambda) x`; period 2 pi.
    pub fn harmonic(lambda: f64) -> Self {
        let s = lambda.sqrt();
        let scaled = |v: Var| {
            ExprAst::Binary(expr::BinOp::Mul, Box::new(ExprAst::Const(s)), Box::new(ExprAst::Var(v)))
        };
        let body = FieldBody::General { f: scaled(Var::Y), g: scaled(Var::X) };
        Self::new(body, 2.0 * PI, lambda, "harmonic").expect("positive lambda")
    }

    pub fn linear_lambda(lambda: f64) -> Self {
        Self::scalar("x", 2.0 * PI, lambda, "linear_lambda").expect("valid builtin")
    }

    pub fn duffing_autonomous(lambda: f64) -> Self {
        Self::scalar("x^3", 2.0 * PI, lambda, "duffing_autonomous").expect("valid builtin")
    }

    pub fn duffing_forced(lambda: f64) -> Self {
        Self::scalar("x^3 + 0.5*cos(t)", 2.0 * PI, lambda, "duffing_forced").expect("valid builtin")
    }

    pub fn modified(params: ModifiedParams, period: f64, lambda: f64, label: impl Into<String>) -> Result<Self> {
        Self::new(FieldBody::Modified(Arc::new(params)), period, lambda, label)
    }

    pub fn with_lambda(&self, lambda: f64) -> Result<Self> {
        Self::new(self.body.clone(), self.period, lambda, self.label.clone())
    }

    pub fn kind(&self) -> FieldKind {
        match self.body {
            FieldBody::Scalar { .. } => FieldKind::ScalarSecondOrder,
            _ => FieldKind::General,
        }
    }

    pub fn sqrt_lambda(&self) -> f64 {
        self.sqrt_lambda
    }

    /// The scalar nonlinearity g(t, x) for second-order fields.
    pub fn g_scalar(&self) -> Option<&ExprAst> {
        match &self.body {
            FieldBody::Scalar { g } => Some(g),
            FieldBody::Modified(p) => Some(&p.g_scalar),
            FieldBody::General { .. } => None,
        }
    }

    /// The pair (f, g) with x' = f, -y' = g, unchecked.
    #[inline]
    pub fn fg(&self, t: f64, x: f64, y: f64) -> (f64, f64) {
        match &self.body {
            FieldBody::General { f, g } => (f.eval(t, x, y), g.eval(t, x, y)),
            FieldBody::Scalar { g } => (self.sqrt_lambda * y, self.sqrt_lambda * g.eval(t, x, 0.0)),
            FieldBody::Modified(p) => {
                let (f, g) = p.eval(t, x, y);
                (self.sqrt_lambda * f, self.sqrt_lambda * g)
            }
        }
    }

    /// Time derivatives (x', y') = (f, -g), unchecked.
    #[inline]
    pub fn deriv(&self, t: f64, x: f64, y: f64) -> (f64, f64) {
        let (f, g) = self.fg(t, x, y);
        (f, -g)
    }

    pub fn field_eval(&self, s: &State) -> Result<(f64, f64)> {
        let (dx, dy) = self.deriv(s.t, s.x, s.y);
        if dx.is_finite() && dy.is_finite() {
            Ok((dx, dy))
        } else {
            Err(Error::FieldEval { t: s.t, x: s.x, y: s.y })
        }
    }

    /// theta' = (g x + f y) / (x² + y²).
    pub fn angular_velocity(&self, s: &State) -> Result<f64> {
        let r2 = s.radius_sq();
        if r2 == 0.0 {
            return Err(Error::Domain("angular velocity undefined at the origin".into()));
        }
        let (f, g) = self.fg(s.t, s.x, s.y);
        let w = (g * s.x + f * s.y) / r2;
        if w.is_finite() {
            Ok(w)
        } else {
            Err(Error::FieldEval { t: s.t, x: s.x, y: s.y })
        }
    }

    /// Whether f or g depends on `var`.
    pub fn depends_on(&self, var: Var) -> (bool, bool) {
        match &self.body {
            FieldBody::General { f, g } => (f.references(var), g.references(var)),
            FieldBody::Scalar { g } => (var == Var::Y, var != Var::Y && g.references(var)),
            FieldBody::Modified(p) => {
                let dep = var != Var::T || p.g_scalar.references(Var::T);
                (dep, dep)
            }
        }
    }

    pub fn is_autonomous(&self) -> bool {
        let (f, g) = self.depends_on(Var::T);
        !f && !g
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn harmonic_field_at_top() {
        let h = PlanarField::harmonic(1.0);
        assert_eq!(h.field_eval(&State::new(0.0, 0.0, 1.0)).unwrap(), (1.0, 0.0));
    }

    #[test]
    fn scalar_field_scales_with_root_lambda() {
        let d = PlanarField::duffing_autonomous(4.0);
        assert_eq!(d.field_eval(&State::new(0.0, 1.0, 0.0)).unwrap(), (0.0, -2.0));
    }

    #[test]
    fn forced_duffing_at_origin() {
        let d = PlanarField::duffing_forced(1.0);
        assert_eq!(d.field_eval(&State::new(0.0, 0.0, 0.0)).unwrap(), (0.0, -0.5));
    }

    #[test]
    fn non_finite_field_is_reported() {
        let f = PlanarField::general("y", "1/x", 1.0, "bad").unwrap();
        assert!(matches!(f.field_eval(&State::new(0.0, 0.0, 1.0)), Err(Error::FieldEval { .. })));
    }

    #[test]
    fn angular_velocity_examples() {
        let h = PlanarField::harmonic(1.0);
        assert!((h.angular_velocity(&State::new(0.3, 0.2, -1.7)).unwrap() - 1.0).abs() < 1e-15);
        let l = PlanarField::linear_lambda(4.0);
        assert!((l.angular_velocity(&State::new(0.0, 1.0, 1.0)).unwrap() - 2.0).abs() < 1e-15);
        let d = PlanarField::duffing_autonomous(1.0);
        assert_eq!(d.angular_velocity(&State::new(0.0, 1.0, 0.0)).unwrap(), 1.0);
        assert!(h.angular_velocity(&State::new(0.0, 0.0, 0.0)).is_err());
    }

    #[test]
    fn polar_lift_examples() {
        let p = polar_lift(0.0, 1.0, 0.0).unwrap();
        assert_eq!((p.theta, p.rho), (0.0, 0.5));
        let p = polar_lift(1.0, 0.0, 0.0).unwrap();
        assert!((p.theta - PI / 2.0).abs() < 1e-15 && p.rho == 0.5);
        let p = polar_lift(0.0, 1.0, 6.0).unwrap();
        assert!((p.theta - 2.0 * PI).abs() < 1e-15);
        assert!(polar_lift(0.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn smooth_step_limits() {
        assert_eq!(smooth_step(-0.1), (0.0, 0.0));
        assert_eq!(smooth_step(1.2), (1.0, 0.0));
        let (p, _) = smooth_step(0.5);
        assert!((p - 0.5).abs() < 1e-15);
    }

    #[test]
    fn smooth_step_derivative_matches_difference() {
        for &s in &[0.1, 0.3, 0.5, 0.77, 0.95] {
            let h = 1e-6;
            let fd = (smooth_step(s + h).0 - smooth_step(s - h).0) / (2.0 * h);
            let (_, d) = smooth_step(s);
            assert!((fd - d).abs() < 1e-6, "s={s}: {fd} vs {d}");
        }
    }

    #[test]
    fn autonomy_detection() {
        assert!(PlanarField::duffing_autonomous(1.0).is_autonomous());
        assert!(!PlanarField::duffing_forced(1.0).is_autonomous());
        assert!(PlanarField::harmonic(2.0).is_autonomous());
    }

    proptest! {
        #[test]
        fn polar_reconstruction(theta in -50.0f64..50.0, rho in 1e-6f64..1e6) {
            let p = PolarPoint { theta, rho };
            let (x, y) = p.cartesian();
            let q = polar_lift(x, y, theta).unwrap();
            prop_assert!((q.theta - theta).abs() < 1e-12 * theta.abs().max(1.0));
            prop_assert!((q.rho - rho).abs() < 1e-12 * rho);
        }

        #[test]
        fn harmonic_rotates_at_root_lambda(lambda in 0.01f64..100.0, x in -10.0f64..10.0, y in -10.0f64..10.0) {
            prop_assume!(x * x + y * y > 1e-6);
            let w = PlanarField::harmonic(lambda).angular_velocity(&State::new(0.0, x, y)).unwrap();
            prop_assert!((w - lambda.sqrt()).abs() < 1e-12 * lambda.sqrt());
        }

        #[test]
        fn polar_lift_stays_near_hint(x in -10.0f64..10.0, y in -10.0f64..10.0, hint in -100.0f64..100.0) {
            prop_assume!(x * x + y * y > 1e-12);
            let p = polar_lift(x, y, hint).unwrap();
            prop_assert!((p.theta - hint).abs() <= PI + 1e-12);
        }
    }
}
