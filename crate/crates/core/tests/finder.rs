use successor_kit::finder::{distinct_mod_shift, find_periodic, PeriodicOrbit};
use successor_kit::integrator::IntegratorConfig;
use successor_kit::system::PlanarField;
use successor_kit::twist::{prepare, scan_twist, thresholds_from, ThresholdOptions};

#[test]
fn forced_duffing_multiplicity() {
    let started = std::time::Instant::now();
    let base = PlanarField::duffing_forced(1.0);
    let opts = ThresholdOptions::default();
    let setup = prepare(&base, &opts).unwrap();
    let mut found: Vec<(usize, usize, Vec<PeriodicOrbit>)> = Vec::new();
    for (m, k) in [(1, 1), (1, 2), (2, 1)] {
        let b = thresholds_from(&setup, base.period, m, k, &opts).unwrap();
        let fld = setup.modified.field.with_lambda(b.lambda).unwrap();
        let cfg = b.integrator_config(&IntegratorConfig::default().with_tol(1e-12, 1e-14));
        let cert = scan_twist(&fld, b.y_m, b.z, m, k, 16, &cfg).unwrap();
        assert!(cert.valid, "{cert:?}");
        let rep = find_periodic(&fld, &cert, 16, &cfg).unwrap();
        eprintln!("({m},{k}) lambda={} sign changes {} diag {:?} t={:?}", b.lambda, rep.sign_changes, rep.diagnostics, started.elapsed());
        for o in &rep.orbits {
            eprintln!(
                "  t0*={} y0*={} res={:?} closure={:e} zeros={} rot={} rmin2={} loc={}",
                o.t0_star, o.y0_star, o.residual, o.closure_residual, o.zeros.len(), o.rot, o.min_radius_sq, o.localized
            );
            assert!(o.invariants_hold());
            assert!(o.closure_residual < 1e-8);
            assert!(o.min_radius_sq > b.sigma1);
        }
        assert!(!rep.orbits.is_empty());
        found.push((m, k, rep.orbits));
    }
    let period = base.period;
    for o2 in &found[1].2 {
        for o1 in &found[0].2 {
            assert!(distinct_mod_shift(o1, o2, period, 1e-4));
        }
    }
    eprintln!("total {:?}", started.elapsed());
}
