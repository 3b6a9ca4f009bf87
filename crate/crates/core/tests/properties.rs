use std::f64::consts::PI;
use std::sync::{Arc, OnceLock};

use proptest::prelude::*;

use successor_kit::curves::{build_comparison, build_spiral_with, ComparisonPair, Orientation};
use successor_kit::expr::parse;
use successor_kit::integrator::IntegratorConfig;
use successor_kit::successor::{crossing_order_ok, quadrant_violations, successor, successor_with_trajectory};
use successor_kit::system::PlanarField;
use successor_kit::twist::lambda_from_theta;

fn cfg() -> IntegratorConfig {
    IntegratorConfig::default().with_tol(1e-11, 1e-13)
}

fn cubic_pair() -> Arc<ComparisonPair> {
    static PAIR: OnceLock<Arc<ComparisonPair>> = OnceLock::new();
    PAIR.get_or_init(|| Arc::new(build_comparison(&parse("x^3 + 0.5*cos(t)").unwrap(), 2.0 * PI, 64, 1e3, 1.2).unwrap()))
        .clone()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    // Near the origin the forcing beats x³ and the angle can move backwards;
    // outside radius 1 the angular velocity y² + x⁴ + x cos(t)/2 is positive.
    #[test]
    fn forced_successor_respects_quadrants(t0 in 0.0f64..6.3, y0 in 3.0f64..20.0) {
        let fld = PlanarField::duffing_forced(1.0);
        let (r, seg) = successor_with_trajectory(&fld, t0, y0, &cfg()).unwrap();
        prop_assume!(r.min_radius > 1.0);
        prop_assert!(crossing_order_ok(&r));
        prop_assert_eq!(quadrant_violations(&r, &seg, 8), 0);
        prop_assert!(r.t1 > t0 && r.y1 > 0.0);
    }

    #[test]
    fn successor_commutes_with_period_shift(t0 in 0.0f64..6.3, y0 in 0.2f64..10.0, j in 1i32..4) {
        let fld = PlanarField::duffing_forced(1.0);
        let shift = j as f64 * fld.period;
        let a = successor(&fld, t0, y0, &cfg()).unwrap();
        let b = successor(&fld, t0 + shift, y0, &cfg()).unwrap();
        prop_assert!((b.t1 - shift - a.t1).abs() < 1e-8 * a.t1.max(1.0));
        prop_assert!((b.y1 - a.y1).abs() < 1e-8 * y0.max(1.0));
    }

    #[test]
    fn autonomous_return_time_scales_with_root_lambda(lambda in 0.1f64..10.0, y0 in 0.2f64..5.0) {
        let c = IntegratorConfig::default().with_tol(1e-12, 1e-14);
        let one = successor(&PlanarField::duffing_autonomous(1.0), 0.0, y0, &c).unwrap();
        let scaled = successor(&PlanarField::duffing_autonomous(lambda), 0.0, y0, &c).unwrap();
        prop_assert!((scaled.t1 * lambda.sqrt() - one.t1).abs() < 1e-8 * one.t1);
        prop_assert!((scaled.y1 - y0).abs() < 1e-8 * y0);
    }

    #[test]
    fn lambda_threshold_scaling(m in 1usize..5, k in 1usize..5, theta in 0.1f64..50.0) {
        let l = lambda_from_theta(m, k, 2.0 * PI, theta);
        prop_assert!((lambda_from_theta(2 * m, k, 2.0 * PI, theta) - 4.0 * l).abs() < 1e-12 * l);
        prop_assert!((lambda_from_theta(m, 2 * k, 2.0 * PI, theta) - l / 4.0).abs() < 1e-12 * l);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn spirals_are_monotone_simple_and_nested(scale in 1.001f64..3.0, exiting in any::<bool>()) {
        let pair = cubic_pair();
        let y = (2.0 * pair.e0).sqrt().max(pair.disc_radius()) * scale;
        let o = if exiting { Orientation::Exiting } else { Orientation::Entering };
        let s = build_spiral_with(pair.clone(), o, y, 3, 128).unwrap();
        prop_assert!(s.anchors_increasing());
        prop_assert!(s.endpoint_mismatch() < 1e-9);
        prop_assert!(s.all_simple());
        prop_assert!(s.inclusion_chain(pair.disc_radius()));
    }
}
