//! One macronode step on a wire: finite-squeezing simulation against the ideal V gate.

use std::f64::consts::FRAC_PI_3;

use cvbsl::gaussian_graph::GraphState;
use cvbsl::homodyne_mbqc::{gaussian_distance, simulate_single_mode_gate, v_gate};

fn main() -> Result<(), cvbsl::Error> {
    let input = GraphState::coherent(0.5, -0.25);
    let (t1, t2) = (FRAC_PI_3, -0.4);
    println!("θ₁ = {t1:.4}, θ₂ = {t2:.4}");
    println!("{:>4} {:>10} {:>10} {:>12} {:>12}", "r", "m₁", "m₂", "cov error", "mean error");
    for r in [2.0, 4.0, 6.0, 8.0] {
        for (label, outcomes) in [("fixed", Some([0.3, -0.6])), ("sampled", None)] {
            let (out, record) = simulate_single_mode_gate(&input, t1, t2, r, outcomes, 11)?;
            let m = record.outcomes();
            let ideal = input.apply(&v_gate(t1, t2, m[0], m[1])?)?;
            let (dc, dm) = gaussian_distance(&out, &ideal)?;
            println!("{r:>4} {:>10.3} {:>10.3} {dc:>12.2e} {dm:>12.2e}  {label}", m[0], m[1]);
        }
    }
    Ok(())
}
