use successor_kit::integrator::IntegratorConfig;
use successor_kit::system::PlanarField;
use successor_kit::twist::{compute_thresholds, containment_audit, scan_twist, ThresholdOptions};

#[test]
fn forced_duffing_pipeline() {
    let started = std::time::Instant::now();
    let base = PlanarField::duffing_forced(1.0);
    let (b, setup) = compute_thresholds(&base, 1, 1, &ThresholdOptions::default()).unwrap();
    eprintln!("{}", serde_json::to_string_pretty(&b).unwrap());
    eprintln!("thresholds: {:?}", started.elapsed());
    assert!(b.y_m < b.z && b.sigma1_bound > b.z * b.z);
    assert!((b.lambda_mk - (2.0 * std::f64::consts::PI / (b.period * b.theta_m)).powi(2)).abs() < 1e-15 * b.lambda_mk);
    let fld = setup.modified.field.with_lambda(b.lambda).unwrap();
    let cfg = b.integrator_config(&IntegratorConfig::default());
    let cert = scan_twist(&fld, b.y_m, b.z, 1, 1, 16, &cfg).unwrap();
    eprintln!("inner {:?}\nouter {:?}\n{:?}", cert.inner_margins, cert.outer_margins, cert.failures);
    assert!(cert.valid);
    let seeds: Vec<(f64, f64)> = (0..20).map(|i| (0.3 * i as f64, b.y_m + (b.z - b.y_m) * (i as f64 / 19.0))).collect();
    let audit = containment_audit(&fld, &b, &seeds, &cfg).unwrap();
    eprintln!("{audit:?}");
    assert!(audit.passed);
    eprintln!("total: {:?}", started.elapsed());
}
