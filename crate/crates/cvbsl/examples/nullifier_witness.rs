//! Analytic and sampled nullifier witnesses on the Φ-transformed lattice for a squeezing sweep.

use cvbsl::nullifier_witness::{
    ingest, phi_transform, quadrature_nullifiers, sample_homodyne_dataset, witness_from_state, Setting,
};
use cvbsl::temporal_bsl::{build_bsl, ideal_graph, LatticeConfig};

fn main() -> Result<(), cvbsl::Error> {
    println!("{:>5} {:>12} {:>12} {:>12} {:>8}", "r", "analytic", "sampled", "threshold", "verdict");
    for r in [0.25, 0.5, 1.0, 1.5] {
        let config = LatticeConfig::new(2, 2, r);
        let state = phi_transform(&build_bsl(&config)?.0)?;
        let nulls = quadrature_nullifiers(&ideal_graph(&config)?);
        let analytic = witness_from_state(&state, &nulls, 0.5)?;

        let q = sample_homodyne_dataset(&state, Setting::Q, 20_000, 1)?;
        let p = sample_homodyne_dataset(&state, Setting::P, 20_000, 2)?;
        let sampled = ingest(&q, &p, &nulls, 0.5)?.report;

        let worst = |rows: &[cvbsl::nullifier_witness::RowReport]| rows.iter().map(|x| x.variance).fold(0.0, f64::max);
        println!(
            "{r:>5} {:>12.5} {:>12.5} {:>12.5} {:>8}",
            worst(&analytic.rows),
            worst(&sampled.rows),
            analytic.rows[0].threshold,
            if sampled.verdict { "pass" } else { "fail" }
        );
    }
    Ok(())
}
