use std::f64::consts::PI;
use std::sync::Arc;

use successor_kit::curves::{barrier_check, build_comparison, build_spiral, Orientation};
use successor_kit::hypotheses::{prop_5_3_constants, superlinearity_profile, AuditGrid};
use successor_kit::integrator::IntegratorConfig;
use successor_kit::numeric::{linspace, periodic_grid};
use successor_kit::system::PlanarField;
use successor_kit::Error;

fn r0_for(fld: &PlanarField) -> f64 {
    let g = fld.g_scalar().unwrap();
    let prof = superlinearity_profile(g, &periodic_grid(fld.period, 64), &linspace(0.05, 20.0, 400));
    let r_bar = prof.r_bar.unwrap();
    prop_5_3_constants(fld, r_bar, &AuditGrid::new(r_bar)).unwrap().r0
}

fn suite(fld: PlanarField) {
    let started = std::time::Instant::now();
    let r0 = r0_for(&fld);
    let pair = Arc::new(build_comparison(fld.g_scalar().unwrap(), fld.period, 64, 1e3, r0).unwrap());
    let y1 = (2.0 * pair.e0).sqrt().max(pair.disc_radius()) * 1.001;
    let cfg = IntegratorConfig::default();
    for o in [Orientation::Entering, Orientation::Exiting] {
        let s = build_spiral(pair.clone(), o, y1, 5).unwrap();
        assert!(s.anchors_increasing());
        assert!(s.endpoint_mismatch() < 1e-9);
        assert!(s.all_simple());
        assert!(s.inclusion_chain(pair.disc_radius()));
        let rep = barrier_check(&s, &fld, 100, &cfg).unwrap();
        assert!(rep.violations.is_empty() && rep.failed_probes == 0);
        let bad = s.corrupted(0.9).unwrap();
        assert!(matches!(barrier_check(&bad, &fld, 100, &cfg), Err(Error::BarrierViolation(_))));
    }
    eprintln!("{}: {:?}", fld.label, started.elapsed());
}

#[test]
fn linear_spirals() {
    suite(PlanarField::linear_lambda(1.0));
}

#[test]
fn cubic_spirals() {
    suite(PlanarField::duffing_autonomous(1.0));
}

#[test]
fn forced_cubic_spirals() {
    suite(PlanarField::duffing_forced(1.0));
}

#[test]
fn exiting_linear_anchor_mirror() {
    let pair = Arc::new(build_comparison(&successor_kit::expr::parse("x").unwrap(), 2.0 * PI, 64, 200.0, 0.5).unwrap());
    let s = build_spiral(pair, Orientation::Exiting, 2.0, 1).unwrap();
    // x²/2 - x = 2 on x > 0, then x²/2 + x = that level on x < 0, then x²/2 - x.
    let xa = 1.0 + 5f64.sqrt();
    let level = 0.5 * xa * xa + xa;
    let xb = -1.0 - (1.0 + 2.0 * level).sqrt();
    let y2 = (xb * xb - 2.0 * xb).sqrt();
    let t = &s.turns[0];
    assert!((t.x_first - xa).abs() < 1e-9);
    assert!((t.x_second - xb).abs() < 1e-9);
    assert!((t.y_end - y2).abs() < 1e-9);
}
