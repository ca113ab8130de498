use std::f64::consts::{FRAC_PI_2, PI, SQRT_2};

use cvbsl::gaussian_graph::{GraphState, SymplecticGate};
use cvbsl::homodyne_mbqc::{adapted_sigma, kappa, tau, zeta, CubicParams};
use cvbsl::wavefunction_oracle::{
    e_operation, fidelity_up_to_phase, l_circuit, l_closed_form, m_circuit, parse_batch, run_batch,
    verify_commutation, verify_e_identity, verify_l_gate, verify_m_circuit, Case, CubicOutcomes, Grid,
    StateSpec, WaveFunction, E_FIDELITY,
};
use cvbsl::Error;
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use proptest::prelude::*;

type GridGate = Box<dyn Fn(&WaveFunction) -> WaveFunction>;

fn grid() -> Grid {
    Grid::new(12.0, 1024).unwrap()
}

fn gate_grid() -> Grid {
    Grid::new(40.0, 2048).unwrap()
}

fn displaced_vacuum(g: Grid, q: f64, p: f64) -> WaveFunction {
    StateSpec::Gaussian { r: 0.0, theta: 0.0, q, p }.build(g).unwrap()
}

fn moments_close(wf: &WaveFunction, st: &GraphState, tol: f64) -> Result<(), String> {
    let (mean, cov) = wf.moments().unwrap();
    let dm = (&mean - st.mean()).amax();
    let dc = (&cov - st.covariance().unwrap()).amax();
    if dm <= tol && dc <= tol {
        Ok(())
    } else {
        Err(format!("mean gap {dm:.2e}, covariance gap {dc:.2e}"))
    }
}

#[test]
fn rotation_by_pi_is_parity() {
    let g = grid();
    let wf = StateSpec::PolyGaussian { coeffs: vec![0.2, 1.0, -0.4], r: 0.3 }.build(g).unwrap().x_shift(0.6, 0).unwrap();
    let twice = wf.rotate(FRAC_PI_2, 0).unwrap().rotate(FRAC_PI_2, 0).unwrap();
    let mirrored = WaveFunction::from_amplitudes(
        g,
        1,
        (0..g.p).map(|j| wf.amplitudes()[(g.p - j) % g.p]).collect(),
    )
    .unwrap();
    // equal up to the global phase of R(π)
    let phase = mirrored.inner(&twice).unwrap();
    assert!((phase.norm() - 1.0).abs() < 1e-8);
    for (a, b) in twice.amplitudes().iter().zip(mirrored.amplitudes()) {
        assert!((a - b * phase).norm() < 1e-8);
    }
}

#[test]
fn squeeze_round_trip_is_identity() {
    let wf = WaveFunction::cubic_phase(grid(), 0.1, 0.0);
    let back = wf.squeeze(0.5, 0).unwrap().squeeze(-0.5, 0).unwrap();
    let err = wf.amplitudes().iter().zip(back.amplitudes()).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
    assert!(err < 1e-7, "{err:e}");
}

#[test]
fn gates_preserve_norm() {
    let g = grid();
    let wf = WaveFunction::cubic_phase(g, 0.2, 0.3);
    let outs = [
        wf.x_shift(1.3, 0).unwrap(),
        wf.z_shift(-0.8, 0).unwrap(),
        wf.rotate(0.9, 0).unwrap(),
        wf.rotate(-2.4, 0).unwrap(),
        wf.squeeze(0.4, 0).unwrap(),
        wf.shear(0.7, 0).unwrap(),
        wf.kubic(0.25, 0).unwrap(),
    ];
    for o in outs {
        assert!((o.norm() - 1.0).abs() < 1e-7);
    }
    let g2 = Grid::new(10.0, 256).unwrap();
    let two = WaveFunction::vacuum(g2).tensor(&displaced_vacuum(g2, 0.5, -0.3)).unwrap();
    assert!((two.beamsplitter(0.7).unwrap().norm() - 1.0).abs() < 1e-7);
    assert!((two.cz(0.4).unwrap().norm() - 1.0).abs() < 1e-7);
}

#[test]
fn vacuum_under_every_gate_matches_gaussian_engine() {
    let g = grid();
    let gates: Vec<(SymplecticGate, GridGate)> = vec![
        (SymplecticGate::rotation(0.7, 0, 1).unwrap(), Box::new(|w| w.rotate(0.7, 0).unwrap())),
        (SymplecticGate::squeeze(-0.5, 0, 1).unwrap(), Box::new(|w| w.squeeze(-0.5, 0).unwrap())),
        (SymplecticGate::shear(0.9, 0, 1).unwrap(), Box::new(|w| w.shear(0.9, 0).unwrap())),
        (SymplecticGate::displacement_gate(0.4, -1.1, 0, 1).unwrap(), Box::new(|w| w.x_shift(0.4, 0).unwrap().z_shift(-1.1, 0).unwrap())),
    ];
    for (gate, apply) in gates {
        let st = GraphState::vacuum(1).apply(&gate).unwrap();
        moments_close(&apply(&WaveFunction::vacuum(g)), &st, 1e-6).unwrap();
    }
}

#[test]
fn two_mode_gates_match_gaussian_engine() {
    let g = Grid::new(10.0, 256).unwrap();
    let st0 = GraphState::squeezed_vacua(&[0.3, -0.2]).with_mean(DVector::from_vec(vec![0.5, -0.2, 0.1, 0.4])).unwrap();
    let wf0 = WaveFunction::gaussian(g, &st0).unwrap();
    moments_close(&wf0, &st0, 1e-6).unwrap();
    let st = st0
        .apply(&SymplecticGate::beamsplitter(0.6, 0, 1, 2).unwrap())
        .unwrap()
        .apply(&SymplecticGate::cz(0.5, 0, 1, 2).unwrap())
        .unwrap();
    let wf = wf0.beamsplitter(0.6).unwrap().cz(0.5).unwrap();
    moments_close(&wf, &st, 1e-6).unwrap();
}

#[test]
fn shift_commutation_phase_is_exp_minus_ist() {
    let (s, t) = (0.7, -0.45);
    let wf = WaveFunction::cubic_phase(grid(), 0.1, 0.4);
    let xz = wf.z_shift(t, 0).unwrap().x_shift(s, 0).unwrap();
    let zx = wf.x_shift(s, 0).unwrap().z_shift(t, 0).unwrap();
    assert!((fidelity_up_to_phase(&xz, &zx).unwrap() - 1.0).abs() < 1e-9);
    let phase = zx.inner(&xz).unwrap();
    assert!((phase - Complex64::from_polar(1.0, -s * t)).norm() < 1e-6);
}

#[test]
fn fidelity_basic_cases() {
    let g = grid();
    let a = WaveFunction::cubic_phase(g, 0.1, 0.2);
    assert!((fidelity_up_to_phase(&a, &a).unwrap() - 1.0).abs() < 1e-12);
    let b = a.scaled(Complex64::from_polar(1.0, PI / 7.0));
    assert!((fidelity_up_to_phase(&a, &b).unwrap() - 1.0).abs() < 1e-12);
    let far = fidelity_up_to_phase(&displaced_vacuum(g, -5.0, 0.0), &displaced_vacuum(g, 5.0, 0.0)).unwrap();
    assert!(far < 1e-6);
    let other = WaveFunction::vacuum(Grid::new(12.0, 512).unwrap());
    assert!(matches!(fidelity_up_to_phase(&a, &other), Err(Error::GridMismatch(_))));
}

#[test]
fn overflowing_state_is_rejected() {
    let g = grid();
    let wide = WaveFunction::squeezed_vacuum(g, 2.0);
    assert!(matches!(wide.check_resident(), Err(Error::GridOverflow { .. })));
    let r = verify_e_identity(&wide, &WaveFunction::vacuum(g), 0.1);
    assert!(matches!(r, Err(Error::GridOverflow { .. })));
}

#[test]
fn product_slice_returns_other_factor() {
    let g = Grid::new(10.0, 256).unwrap();
    let a = displaced_vacuum(g, 0.3, 0.2);
    let b = WaveFunction::cubic_phase(g, 0.2, 0.3);
    let slice = a.tensor(&b).unwrap().project_q(0, 0.41).unwrap();
    assert!((fidelity_up_to_phase(&slice, &b).unwrap() - 1.0).abs() < 1e-10);
    assert!(a.tensor(&b).unwrap().project_q(0, 11.0).is_err());
}

#[test]
fn epr_slice_shifts_partner_and_integrates_to_marginal() {
    // two-mode squeezed state: measuring q₀ = m moves the partner mean by (Σ₀₁/Σ₀₀) m
    let g = Grid::new(10.0, 256).unwrap();
    let r = 0.5;
    let st = GraphState::squeezed_vacua(&[r, -r]).apply(&SymplecticGate::beamsplitter(PI / 4.0, 0, 1, 2).unwrap()).unwrap();
    let wf = WaveFunction::gaussian(g, &st).unwrap();
    let m = 0.8;
    let slice = wf.project_q(0, m).unwrap();
    let (mean, _) = slice.moments().unwrap();
    let cov = st.covariance().unwrap();
    let var = cov[(0, 0)];
    assert!(cov[(0, 1)].abs() > 0.1);
    assert!((mean[0] - cov[(0, 1)] / var * m).abs() < 1e-8, "{}", mean[0]);
    let density = (-m * m / (2.0 * var)).exp() / (2.0 * PI * var).sqrt();
    assert!((slice.norm().powi(2) - density).abs() < 1e-9);
}

#[test]
fn e_identity_gaussian_and_cubic_examples() {
    let g = Grid::new(24.0, 1024).unwrap();
    let rep = verify_e_identity(&WaveFunction::squeezed_vacuum(g, 1.0), &displaced_vacuum(g, 0.4, -0.3), 0.4).unwrap();
    assert!(rep.pass, "{rep:?}");
    let g2 = Grid::new(36.0, 2048).unwrap();
    let rep = verify_e_identity(&WaveFunction::cubic_phase(g2, 0.1, 2.0), &WaveFunction::vacuum(g2), -0.3).unwrap();
    assert!(rep.pass, "{rep:?}");
    assert!(rep.fidelity >= E_FIDELITY);
}

#[test]
fn e_identity_zero_outcome_closed_form() {
    // φ = ψ = vacuum, m = 0: S(ln√2)[e^{-q²}/√π], a Gaussian with Z = 2i before the squeezer
    let g = grid();
    let vac = WaveFunction::vacuum(g);
    let out = e_operation(&vac, &vac, 0.0).unwrap();
    let want = WaveFunction::gaussian(
        g,
        &GraphState::new(DMatrix::from_element(1, 1, Complex64::new(0.0, 2.0)), DVector::zeros(2)).unwrap(),
    )
    .unwrap()
    .squeeze(0.5 * 2f64.ln(), 0)
    .unwrap();
    assert!((fidelity_up_to_phase(&out, &want).unwrap() - 1.0).abs() < 1e-12);
    assert!((out.norm() - (2.0 * PI).powf(-0.25)).abs() < 1e-12 * 2f64.powf(0.25) + 1e-12);
}

#[test]
fn e_identity_detects_wrong_outcome_sign() {
    let g = Grid::new(24.0, 1024).unwrap();
    let phi = WaveFunction::cubic_phase(g, 0.2, 0.8);
    let psi = displaced_vacuum(g, 0.5, 0.0);
    let lhs = psi.tensor(&phi).unwrap().beamsplitter(PI / 4.0).unwrap().project_q(1, 1.5).unwrap();
    assert!((fidelity_up_to_phase(&lhs, &e_operation(&phi, &psi, 1.5).unwrap()).unwrap() - 1.0).abs() < 1e-9);
    let wrong = e_operation(&phi, &psi, -1.5).unwrap();
    assert!(fidelity_up_to_phase(&lhs, &wrong).unwrap() < 0.9);
}

#[test]
fn m_circuit_zero_angle_outputs_squeezed_vacuum() {
    let g = Grid::new(16.0, 1024).unwrap();
    let out = m_circuit(0.0, 0.0, 8.0, &WaveFunction::vacuum(g)).unwrap();
    // R(-π/2) S(ln ½)|0⟩ = S(ln 2)|0⟩
    let st = GraphState::vacuum(1).apply(&SymplecticGate::squeeze(2f64.ln(), 0, 1).unwrap()).unwrap();
    moments_close(&out, &st, 1e-5).unwrap();
}

#[test]
fn m_circuit_converges_with_squeezing() {
    let g = Grid::new(16.0, 1024).unwrap();
    let psi = displaced_vacuum(g, 0.7, -0.2);
    let eps: Vec<f64> = [2.0, 3.0, 4.0]
        .iter()
        .map(|&r| verify_m_circuit(PI / 6.0, 0.5, r, &psi).unwrap().infidelity())
        .collect();
    assert!(eps[0] > eps[1] && eps[1] > eps[2], "{eps:?}");
    assert!(verify_m_circuit(PI / 6.0, 0.5, 4.0, &psi).unwrap().pass);
}

#[test]
fn l_gate_formula_values() {
    let p = CubicParams { chi: 0.2, sigma: 0.3 };
    let t = tau(p, 0.1, 0.4);
    assert!((t - (1.2 + 0.8 * (0.1 + SQRT_2 * 0.4))).abs() < 1e-14);
    assert!((t - 1.7325).abs() < 1e-4);
    let zero = CubicOutcomes::default();
    assert_eq!(kappa(p, zero.m_a, zero.m_e, zero.m_f), 0.0);
    assert_eq!(tau(p, 0.0, 0.0), 4.0 * p.sigma);
}

#[test]
fn l_gate_three_way_agreement_converges() {
    let g = gate_grid();
    let psi = WaveFunction::vacuum(g);
    let p = CubicParams { chi: 0.2, sigma: 0.3 };
    let m = CubicOutcomes { m_a: 0.1, m_e: -0.2, m_f: 0.4 };
    let reps: Vec<_> = [2.0, 3.0, 4.0].iter().map(|&r| verify_l_gate(p, m, r, r, &psi).unwrap()).collect();
    assert!(reps[0].infidelity() > reps[1].infidelity() && reps[1].infidelity() > reps[2].infidelity());
    assert!(reps[2].pass, "{:?}", reps[2]);
    assert!(1.0 - reps[2].fidelities["ideal_operator_vs_closed"] < 1e-9);
}

#[test]
fn l_gate_without_cubic_term_is_the_gaussian_composition() {
    let g = gate_grid();
    let p = CubicParams { chi: 0.0, sigma: 0.25 };
    let m = CubicOutcomes { m_a: 0.3, m_e: -0.5, m_f: 0.2 };
    let st0 = GraphState::coherent(0.4, -0.3);
    let psi = WaveFunction::gaussian(g, &st0).unwrap();
    let gate = SymplecticGate::shear(tau(p, m.m_a, m.m_f), 0, 1)
        .unwrap()
        .then(&SymplecticGate::rotation(-FRAC_PI_2, 0, 1).unwrap())
        .unwrap()
        .then(&SymplecticGate::displacement_gate(kappa(p, m.m_a, m.m_e, m.m_f), SQRT_2 * m.m_a, 0, 1).unwrap())
        .unwrap();
    let st = st0.apply(&gate).unwrap();
    moments_close(&l_closed_form(p, m, &psi).unwrap(), &st, 1e-6).unwrap();
    moments_close(&l_circuit(p, m, 5.0, 5.0, &psi).unwrap(), &st, 1e-3).unwrap();
}

#[test]
fn l_gate_rejects_out_of_range_parameters() {
    let g = gate_grid();
    let r = verify_l_gate(CubicParams { chi: 5.0, sigma: 0.0 }, CubicOutcomes::default(), 4.0, 4.0, &WaveFunction::vacuum(g));
    assert!(matches!(r, Err(Error::InvalidParameter(_))));
}

#[test]
fn commutation_example_passes_and_zeta_reduces_without_cubic_term() {
    let p = CubicParams { chi: 0.15, sigma: 0.4 };
    let m = CubicOutcomes { m_a: 0.2, m_e: 0.1, m_f: -0.4 };
    let rep = verify_commutation(0.3, -0.2, p, m, 4.0, 4.0, &WaveFunction::vacuum(gate_grid())).unwrap();
    assert!(rep.pass, "{rep:?}");
    let g0 = CubicParams { chi: 0.0, sigma: 0.5 };
    assert_eq!(adapted_sigma(g0, 0.3), 0.5);
    assert!((zeta(g0, 0.3, 0.1, -0.4) - 4.0 * 0.3 * 0.5).abs() < 1e-15);
}

#[test]
fn commutation_detects_unadapted_shear() {
    // using σ instead of σ' on the left side must break the X commutation
    let g = gate_grid();
    let p = CubicParams { chi: 0.3, sigma: 0.5 };
    let m = CubicOutcomes { m_a: 0.1, m_e: -0.4, m_f: 0.3 };
    let s = 0.6;
    let psi = WaveFunction::vacuum(g);
    let lhs = l_circuit(p, m, 4.0, 4.0, &psi.x_shift(s, 0).unwrap()).unwrap();
    let rhs = l_circuit(p, m, 4.0, 4.0, &psi)
        .unwrap()
        .x_shift(zeta(p, s, m.m_e, m.m_f), 0)
        .unwrap()
        .z_shift(-s, 0)
        .unwrap();
    assert!(fidelity_up_to_phase(&lhs, &rhs).unwrap() < 0.99);
}

#[test]
fn batch_runner_reports_per_case_errors() {
    let json = r#"[
        {"identity": "e_identity", "phi": {"kind": "cubic", "chi": 0.1, "r_env": 1.0},
         "psi": {"kind": "gaussian", "q": 0.3}, "m": 0.2},
        {"identity": "l_gate", "chi": 5.0, "sigma": 0.1,
         "outcomes": {"m_a": 0.0, "m_e": 0.0, "m_f": 0.0}, "r": 4.0, "r_env": null,
         "psi": {"kind": "gaussian"}}
    ]"#;
    let cases = parse_batch(json).unwrap();
    let out = run_batch(&cases);
    assert!(out[0].as_ref().unwrap().pass);
    assert!(matches!(out[1], Err(Error::InvalidParameter(_))));
    let text = serde_json::to_string(out[0].as_ref().unwrap()).unwrap();
    for key in ["\"identity\"", "\"params\"", "\"fidelity\"", "\"norms\"", "\"grid\"", "\"r\"", "\"pass\""] {
        assert!(text.contains(key), "{key}");
    }
    let back: Vec<Case> = serde_json::from_str(&serde_json::to_string(&cases).unwrap()).unwrap();
    assert_eq!(back, cases);
}

#[derive(Clone, Debug)]
enum G {
    Rot(usize, f64),
    Sq(usize, f64),
    Shear(usize, f64),
    Disp(usize, f64, f64),
    Bs(f64),
    Cz(f64),
}

fn gate_strategy() -> impl Strategy<Value = G> {
    prop_oneof![
        (0usize..2, -3.2f64..3.2).prop_map(|(m, t)| G::Rot(m, t)),
        (0usize..2, -0.4f64..0.4).prop_map(|(m, r)| G::Sq(m, r)),
        (0usize..2, -0.8f64..0.8).prop_map(|(m, s)| G::Shear(m, s)),
        (0usize..2, -1.0f64..1.0, -1.0f64..1.0).prop_map(|(m, s, t)| G::Disp(m, s, t)),
        (-1.6f64..1.6).prop_map(G::Bs),
        (-0.5f64..0.5).prop_map(G::Cz),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(30))]

    #[test]
    fn grid_moments_track_gaussian_engine(two in any::<bool>(), gates in prop::collection::vec(gate_strategy(), 1..=6)) {
        let n = if two { 2 } else { 1 };
        let g = if two { Grid::new(12.0, 256).unwrap() } else { Grid::new(12.0, 1024).unwrap() };
        let mut st = GraphState::vacuum(n);
        let mut wf = WaveFunction::gaussian(g, &st).unwrap();
        for gate in gates {
            let (sg, w) = match gate {
                G::Rot(m, t) if m < n => (SymplecticGate::rotation(t, m, n), wf.rotate(t, m)),
                G::Sq(m, r) if m < n => (SymplecticGate::squeeze(r, m, n), wf.squeeze(r, m)),
                G::Shear(m, s) if m < n => (SymplecticGate::shear(s, m, n), wf.shear(s, m)),
                G::Disp(m, s, t) if m < n => (
                    SymplecticGate::displacement_gate(s, t, m, n),
                    wf.x_shift(s, m).and_then(|w| w.z_shift(t, m)),
                ),
                G::Bs(t) if n == 2 => (SymplecticGate::beamsplitter(t, 0, 1, 2), wf.beamsplitter(t)),
                G::Cz(c) if n == 2 => (SymplecticGate::cz(c, 0, 1, 2), wf.cz(c)),
                _ => continue,
            };
            st = st.apply(&sg.unwrap()).unwrap();
            wf = w.unwrap();
        }
        prop_assert!(wf.check_resident().is_ok());
        let res = moments_close(&wf, &st, 1e-5);
        prop_assert!(res.is_ok(), "{:?}", res);
    }
}
