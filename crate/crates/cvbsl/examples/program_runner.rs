//! Runs a homodyne program on the lattice twice and compares the runs through their outcome frames.

use cvbsl::gaussian_graph::GraphState;
use cvbsl::homodyne_mbqc::{graph_distance, run_program, Basis, Program, Step};
use cvbsl::temporal_bsl::{Detector, LatticeConfig};

fn main() -> Result<(), cvbsl::Error> {
    let steps = (0..4)
        .flat_map(|t| {
            [
                Step { time_index: t, detector: Detector::B, basis: Basis::Theta(0.25 * t as f64), outcome: None },
                Step { time_index: t, detector: Detector::C, basis: Basis::Theta(-0.3), outcome: None },
            ]
        })
        .collect();
    let program = Program { lattice: LatticeConfig::new(3, 2, 1.0), input: None, steps };
    println!("{}", serde_json::to_string_pretty(&program).expect("program serializes"));

    let a = run_program(&program, 1)?;
    let b = run_program(&program, 2)?;
    for e in &a.record.events {
        println!("mode {:>2} θ = {:+.3}: m = {:+.4}", e.mode, e.theta, e.outcome);
    }
    let sa = GraphState::try_from(a.state)?;
    let sb = GraphState::try_from(b.state)?;
    println!("remaining modes {}, Z difference between seeds {:.1e}", sa.n_modes(), graph_distance(&sa, &sb)?);
    Ok(())
}
