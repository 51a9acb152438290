use reefsfm::objective::AdjointFaults;
use reefsfm::verify::{run_verify, Suite, VerifyOptions};

fn gradient_with(faults: AdjointFaults) -> f64 {
    let report = run_verify(&VerifyOptions {
        suites: vec![Suite::Gradient],
        gradient_instances: 6,
        faults,
        ..Default::default()
    });
    let c = report.get("gradient_max_relative_error").unwrap();
    assert_eq!(c.passed, report.passed);
    assert!(c.passed == (c.measured <= c.tolerance));
    c.measured
}

#[test]
fn correct_adjoint_passes() {
    let report = run_verify(&VerifyOptions {
        suites: vec![Suite::Gradient],
        gradient_instances: 6,
        ..Default::default()
    });
    assert!(report.passed, "{:?}", report.checks);
}

#[test]
fn every_adjoint_fault_is_caught() {
    let cases: [(&str, fn(&mut AdjointFaults)); 5] = [
        ("l1", |f| f.flip_l1 = true),
        ("ssim", |f| f.flip_ssim = true),
        ("smoothness", |f| f.flip_smoothness = true),
        ("geometric", |f| f.flip_geometric = true),
        ("rotation", |f| f.flip_rotation = true),
    ];
    let tolerance = run_verify(&VerifyOptions {
        suites: vec![Suite::Gradient],
        gradient_instances: 1,
        ..Default::default()
    })
    .get("gradient_max_relative_error")
    .unwrap()
    .tolerance;
    for (name, set) in cases {
        let mut faults = AdjointFaults::default();
        set(&mut faults);
        let err = gradient_with(faults);
        assert!(!(err <= tolerance), "flipped {name} adjoint went unnoticed: {err:e}");
    }
}

#[test]
fn cheap_suites_pass() {
    let report = run_verify(&VerifyOptions {
        suites: vec![Suite::Geometry, Suite::Filters, Suite::Ortho],
        ..Default::default()
    });
    for c in &report.checks {
        assert!(c.passed, "{}: {}", c.name, c.detail);
    }
    assert!(report.passed);
    assert_eq!(report.seconds.len(), 3);
    assert!(report.checks.iter().all(|c| c.suite != Suite::Gradient));
}

#[test]
fn suite_names_parse() {
    for s in Suite::ALL {
        assert_eq!(Suite::parse(s.name()), Some(s));
    }
    assert_eq!(Suite::parse("everything"), None);
    let empty = run_verify(&VerifyOptions {
        suites: vec![],
        ..Default::default()
    });
    assert!(empty.checks.is_empty());
}
