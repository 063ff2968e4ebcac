mod common;

use common::cases;

fn assert_report(what: &str, r: &common::GradReport) {
    assert!(r.passed(), "{what}: {} of {} failed, e.g. {:?}", r.failures.len(), r.checked, r.failures.first());
}

#[test]
fn msm_parameters_match_finite_differences() {
    assert_report("msm", &cases::msm(1e-4));
}

#[test]
fn sfm_parameters_match_finite_differences() {
    assert_report("sfm", &cases::sfm(1e-4));
}

#[test]
fn full_model_parameters_match_finite_differences() {
    let (n, r) = cases::unet(1e-3);
    assert!(n <= 5000, "{n} parameters");
    assert_eq!(r.checked, n);
    assert_report("unet", &r);
}
