//! Two-mode controlled-phase gate from the macronode angle table, for both time-bin parities.

use std::f64::consts::{FRAC_PI_3, FRAC_PI_4};

use cvbsl::gaussian_graph::max_abs;
use cvbsl::homodyne_mbqc::{cz_angle_table, cz_target, two_mode_gate, TwoModeOutcomes};

fn main() -> Result<(), cvbsl::Error> {
    for k in [0, 1] {
        for phi in [FRAC_PI_4, FRAC_PI_3] {
            let angles = cz_angle_table(phi, k);
            let gate = two_mode_gate(&angles, &TwoModeOutcomes::default(), k)?;
            let err = max_abs(&(gate.matrix() - cz_target(phi, k)?.matrix()));
            println!("k = {k}, φ = {phi:.4}: C_Z weight {:.6}, deviation {err:.1e}", 2.0 / phi.tan());
            println!("  {angles:?}");
        }
    }
    Ok(())
}
