use convm::checks::{run_suite, SuiteOptions};
use convm::fault::set_conv_sign_flip;

#[test]
fn sign_flipped_conv_gradient_fails_the_suite() {
    set_conv_sign_flip(true);
    let results = run_suite(&SuiteOptions { op: Some("conv2d".into()), ..Default::default() });
    set_conv_sign_flip(false);
    let results = results.unwrap();
    assert!(!results[0].report.passed);
    assert!(results[0].report.max_rel_error > 1.0);
}
