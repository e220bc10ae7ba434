use subcrit::brw::Intensity;
use subcrit::exploration::{calibrate_constants, CalibrationBudget};

#[test]
fn default_budget_reproduces_the_fixture() {
    let text = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/tests/fixtures/calibration.json")).unwrap();
    let intensity = Intensity::new(0.09, 0.25).unwrap();
    let c = calibrate_constants(&intensity, 0.5, &CalibrationBudget::default()).unwrap();
    assert_eq!(serde_json::to_string_pretty(&c).unwrap(), text.trim_end());
    // the calibrated constants satisfy their defining conditions
    assert!(c.inf_probability >= c.epsilon);
    assert!(c.y_tail_probability >= 5.0 * c.epsilon);
    assert!(c.overflow_probability <= c.epsilon);
    assert!(c.u0 < 0.5 && (2.0 * (1.0 + 1.0 / c.a)) * c.u0.powf(c.rho) < 1.0);
}

#[test]
fn calibration_rejects_bad_b() {
    let intensity = Intensity::new(0.09, 0.25).unwrap();
    assert!(calibrate_constants(&intensity, 1.5, &CalibrationBudget::default()).is_err());
}
