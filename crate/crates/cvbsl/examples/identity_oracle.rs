//! Position-grid checks of the non-Gaussian gate identities with convergence in r.

use cvbsl::homodyne_mbqc::CubicParams;
use cvbsl::wavefunction_oracle::{
    verify_commutation, verify_e_identity, verify_l_gate, verify_m_circuit, CubicOutcomes, Grid, WaveFunction,
};

fn main() -> Result<(), cvbsl::Error> {
    let e_grid = Grid::new(24.0, 1024)?;
    let phi = WaveFunction::cubic_phase(e_grid, 0.2, 1.0);
    let psi = WaveFunction::squeezed_vacuum(e_grid, 0.3);
    let e = verify_e_identity(&phi, &psi, 0.4)?;
    println!("E identity: 1 - F = {:.1e}", e.infidelity());

    let m_grid = Grid::new(16.0, 1024)?;
    let gate_grid = Grid::new(40.0, 2048)?;
    let params = CubicParams { chi: 0.2, sigma: 0.3 };
    let outcomes = CubicOutcomes { m_a: 0.1, m_e: -0.2, m_f: 0.3 };
    println!("{:>4} {:>12} {:>12} {:>12}", "r", "M circuit", "L gate", "commutation");
    for r in [2.0, 3.0, 4.0] {
        let m = verify_m_circuit(0.5, 0.2, r, &WaveFunction::vacuum(m_grid))?;
        let l = verify_l_gate(params, outcomes, r, r, &WaveFunction::vacuum(gate_grid))?;
        let c = verify_commutation(0.3, -0.2, params, outcomes, r, r, &WaveFunction::vacuum(gate_grid))?;
        println!("{r:>4} {:>12.2e} {:>12.2e} {:>12.2e}", m.infidelity(), l.infidelity(), c.infidelity());
    }
    Ok(())
}
