//! Calibrates the exploration constants for `gamma = 0.25`, `beta = 0.1`
//! (exploration density `tilde_beta = 0.09`), `b = 1/2` and prints the result
//! as JSON. `tests/fixtures/calibration.json` holds the output.

use subcrit::brw::Intensity;
use subcrit::exploration::{calibrate_constants, CalibrationBudget};

fn main() -> subcrit::Result<()> {
    let intensity = Intensity::new(0.09, 0.25)?;
    let calibration = calibrate_constants(&intensity, 0.5, &CalibrationBudget::default())?;
    println!("{}", serde_json::to_string_pretty(&calibration)?);
    Ok(())
}
