//! Synthesizes the bilayer square lattice from temporal modes and prints its graph statistics.
//!
//! `cargo run --example build_lattice -- 3 3 1.0`

use cvbsl::temporal_bsl::{build_bsl, ideal_graph, to_dot, LatticeConfig, UniformitySummary};

fn main() -> Result<(), cvbsl::Error> {
    let args: Vec<f64> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let (n, m, r) = match args[..] {
        [n, m, r] => (n as usize, m as usize, r),
        _ => (3, 3, 1.0),
    };
    let config = LatticeConfig::new(n, m, r);
    let (state, lattice) = build_bsl(&config)?;
    println!("BSL({n},{m}) at r = {r}: {} time bins, {} modes", config.bins(), state.n_modes());
    println!("{}", UniformitySummary::of(&state));

    let v = ideal_graph(&config)?;
    let n_modes = v.nrows();
    let sq = (&v * &v - nalgebra::DMatrix::identity(n_modes, n_modes)).amax();
    println!("ideal V: trace {:.1e}, |V² - I| {:.1e}", v.trace(), sq);

    if n * m <= 4 {
        println!("\n{}", to_dot(&state, &lattice));
    }
    Ok(())
}
