use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, FRAC_PI_8, PI};

use cvbsl::gaussian_graph::{max_abs, symplectic_deviation, GraphState, SymplecticGate};
use cvbsl::homodyne_mbqc::{
    cz_angle_table, cz_target, deletion_schedule, decouple_wires, feedforward, gaussian_distance,
    graph_distance, measure_quadrature, measure_schedule, outcome_marginal, run_program,
    simulate_single_mode_gate, two_mode_gate, v_gate, wire_modes, cross_cut_weight,
    Basis, Frame, GateKind, HomodyneRun, Program, Step, TwoModeAngles, TwoModeOutcomes,
};
use cvbsl::temporal_bsl::{build_bsl, Detector, LatticeConfig};
use cvbsl::Error;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use statrs::distribution::{ContinuousCDF, Normal};

fn random_state(n: usize, seed: u64) -> GraphState {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut st = GraphState::vacuum(n);
    for k in 0..n {
        st = st.apply(&SymplecticGate::squeeze(rng.random_range(-0.8..0.8), k, n).unwrap()).unwrap();
        st = st.apply(&SymplecticGate::shear(rng.random_range(-1.0..1.0), k, n).unwrap()).unwrap();
    }
    for _ in 0..2 * n * usize::from(n > 1) {
        let i = rng.random_range(0..n);
        let j = (i + 1 + rng.random_range(0..n - 1)) % n;
        st = st.apply(&SymplecticGate::beamsplitter(rng.random_range(0.0..PI), i, j, n).unwrap()).unwrap();
        st = st.apply(&SymplecticGate::rotation(rng.random_range(0.0..PI), i, n).unwrap()).unwrap();
    }
    let mean = DVector::from_fn(2 * n, |_, _| rng.random_range(-1.0..1.0));
    st.with_mean(mean).unwrap()
}

/// Gaussian conditioning on the covariance: `Σ_rr - Σ_rk Σ_kr / Σ_kk`.
fn conditioned_by_covariance(state: &GraphState, k: usize, theta: f64, m: f64) -> (DMatrix<f64>, DVector<f64>) {
    let n = state.n_modes();
    let st = state.apply(&SymplecticGate::rotation(theta, k, n).unwrap()).unwrap();
    let sigma = st.covariance().unwrap();
    let idx: Vec<usize> = (0..n).filter(|&i| i != k).chain((0..n).filter(|&i| i != k).map(|i| i + n)).collect();
    let skk = sigma[(k, k)];
    let cov = DMatrix::from_fn(idx.len(), idx.len(), |a, b| sigma[(idx[a], idx[b])] - sigma[(idx[a], k)] * sigma[(k, idx[b])] / skk);
    let mean = DVector::from_fn(idx.len(), |a, _| st.mean()[idx[a]] + sigma[(idx[a], k)] / skk * (m - st.mean()[k]));
    (cov, mean)
}

#[test]
fn conditioning_matches_covariance_oracle() {
    for seed in 0..10 {
        let st = random_state(3, seed);
        let (out, _) = measure_quadrature(&st, 1, 0.4, Some(0.3), None).unwrap();
        let (cov, mean) = conditioned_by_covariance(&st, 1, 0.4, 0.3);
        assert!(max_abs(&(out.covariance().unwrap() - cov)) < 1e-9, "seed {seed}");
        assert!((out.mean() - mean).amax() < 1e-9, "seed {seed}");
    }
}

#[test]
fn two_mode_squeezed_mean_follows_outcome() {
    let r = 0.8;
    let st = GraphState::squeezed_vacua(&[-r, r])
        .apply(&SymplecticGate::beamsplitter(FRAC_PI_4, 0, 1, 2).unwrap())
        .unwrap();
    let shift = |m: f64| measure_quadrature(&st, 0, 0.0, Some(m), None).unwrap().0.mean()[0];
    // q1 + q2 is squeezed after the beamsplitter, so q2 follows -q1 with slope tanh 2r
    assert!((shift(1.0) + (2.0 * r).tanh()).abs() < 1e-12);
    assert!((shift(-2.0) - 2.0 * (2.0 * r).tanh()).abs() < 1e-12);
}

#[test]
fn sampled_outcomes_follow_the_marginal() {
    let st = random_state(3, 99);
    let (mu, var) = outcome_marginal(&st, 2, 1.1).unwrap();
    let nd = Normal::new(mu, var.sqrt()).unwrap();
    let mut rng = ChaCha20Rng::seed_from_u64(2024);
    let mut xs: Vec<f64> = (0..10_000)
        .map(|_| measure_quadrature(&st, 2, 1.1, None, Some(&mut rng)).unwrap().1)
        .collect();
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    let d = xs
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = nd.cdf(x);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max);
    // 1% critical value of the one-sample KS statistic
    assert!(d < 1.63 / n.sqrt(), "KS D = {d}");
}

#[test]
fn total_covariance_is_recovered() {
    // E[Cov(rest | m)] + Cov(E[rest | m]) = Σ_rr
    let st = random_state(3, 5);
    let (mu, var) = outcome_marginal(&st, 0, 0.0).unwrap();
    let (c0, m0) = conditioned_by_covariance(&st, 0, 0.0, mu);
    let (out, _) = measure_quadrature(&st, 0, 0.0, Some(mu + 1.0), None).unwrap();
    let slope = out.mean() - &m0;
    let total = out.covariance().unwrap() + &slope * slope.transpose() * var;
    let sigma = st.covariance().unwrap();
    let idx = [1, 2, 4, 5];
    let rr = DMatrix::from_fn(4, 4, |a, b| sigma[(idx[a], idx[b])]);
    assert!(max_abs(&(total - rr)) < 1e-9);
    assert!(max_abs(&(out.covariance().unwrap() - c0)) < 1e-9);
}

#[test]
fn deletion_decouples_rows_at_high_squeezing() {
    let cfg = LatticeConfig::new(3, 3, 6.0);
    let (st, lat) = build_bsl(&cfg).unwrap();
    for row in 0..3 {
        let d = decouple_wires(&st, &lat, &[row]).unwrap();
        assert!(d.cross_cut().unwrap() < 1e-6, "row {row}");
    }
}

#[test]
fn deletion_residual_does_not_grow_with_squeezing() {
    let mut prev = f64::INFINITY;
    for r in [1.0, 2.0, 4.0, 6.0] {
        let (st, lat) = build_bsl(&LatticeConfig::new(3, 3, r)).unwrap();
        let w = decouple_wires(&st, &lat, &[0]).unwrap().cross_cut().unwrap();
        assert!(w <= prev + 1e-12, "r={r}: {w} > {prev}");
        prev = w;
    }
}

#[test]
fn flipped_deletion_angle_leaves_edges() {
    let (st, lat) = build_bsl(&LatticeConfig::new(3, 3, 4.0)).unwrap();
    let mut sched = deletion_schedule(&lat, &[0]).unwrap();
    sched[1].1 = -sched[1].1;
    let mut run = HomodyneRun::unlabeled(st);
    measure_schedule(&mut run, &sched, None).unwrap();
    let w = cross_cut_weight(&run, &[wire_modes(&lat, 0).unwrap()]).unwrap();
    assert!(w > 0.1, "{w}");
}

#[test]
fn v_gate_examples() {
    let g = v_gate(3.0 * FRAC_PI_8, FRAC_PI_8, 0.0, 0.0).unwrap();
    let r = |t: f64| DMatrix::from_row_slice(2, 2, &[t.cos(), -t.sin(), t.sin(), t.cos()]);
    let t = FRAC_PI_8.tan();
    let s = DMatrix::from_row_slice(2, 2, &[t, 0.0, 0.0, 1.0 / t]);
    assert!(max_abs(&(g.matrix() - r(FRAC_PI_4) * s * r(FRAC_PI_4))) < 1e-15);
    assert!(symplectic_deviation(g.matrix()) < 1e-12);
}

#[test]
fn v_gate_displacement_matches_complex_argument() {
    let (t1, t2, m1, m2) = (1.1, -0.4, 0.7, -1.3);
    let i = num_complex::Complex64::i();
    let alpha = (-i * (i * t2).exp() * m1 - i * (i * t1).exp() * m2) / (t1 - t2).sin();
    let d = v_gate(t1, t2, m1, m2).unwrap();
    assert!((d.displacement()[0] - 2f64.sqrt() * alpha.re).abs() < 1e-13);
    assert!((d.displacement()[1] - 2f64.sqrt() * alpha.im).abs() < 1e-13);
}

#[test]
fn coherent_input_is_rotated() {
    let inp = GraphState::coherent(0.8, -0.3);
    let (out, rec) = simulate_single_mode_gate(&inp, FRAC_PI_2, 0.0, 6.0, Some([0.7, -1.2]), 0).unwrap();
    let m = rec.outcomes();
    let want = inp.apply(&v_gate(FRAC_PI_2, 0.0, m[0], m[1]).unwrap()).unwrap();
    let (dc, dm) = gaussian_distance(&out, &want).unwrap();
    assert!(dc < 1e-4 && dm < 1e-4, "{dc:e} {dm:e}");
    // quarter turn moves the coherent amplitude (0.8, -0.3) to (0.3, 0.8) plus the frame
    let frame = v_gate(FRAC_PI_2, 0.0, m[0], m[1]).unwrap();
    assert!((out.mean()[0] - 0.3 - frame.displacement()[0]).abs() < 1e-4);
    assert!((out.mean()[1] - 0.8 - frame.displacement()[1]).abs() < 1e-4);
}

fn step_error(inp: &GraphState, t1: f64, t2: f64, r: f64, m: [f64; 2]) -> (f64, f64) {
    let (out, _) = simulate_single_mode_gate(inp, t1, t2, r, Some(m), 0).unwrap();
    let want = inp.apply(&v_gate(t1, t2, m[0], m[1]).unwrap()).unwrap();
    gaussian_distance(&out, &want).unwrap()
}

#[test]
fn macronode_error_decays_at_least_as_exp_minus_2r() {
    let mut rng = ChaCha20Rng::seed_from_u64(17);
    for draw in 0..20 {
        let t1 = rng.random_range(0.0..2.0 * PI);
        let tm = rng.random_range(0.3..FRAC_PI_2 - 0.3);
        let m = [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)];
        let inp = random_state(1, draw);
        let (c4, m4) = step_error(&inp, t1, t1 - 2.0 * tm, 4.0, m);
        let (c5, m5) = step_error(&inp, t1, t1 - 2.0 * tm, 5.0, m);
        let k = (-2f64).exp() * 1.05;
        assert!(c5 <= c4 * k + 1e-12 && m5 <= m4 * k + 1e-12, "draw {draw}: {c4:e}->{c5:e}, {m4:e}->{m5:e}");
        assert!(c4 < 0.1 && m4 < 0.1, "draw {draw}: {c4:e} {m4:e}");
    }
}

#[test]
fn pure_rotation_steps_are_accurate_at_r6() {
    // coherent input and tan θ₋ = 1: the leading e^{-2r} term cancels
    let mut rng = ChaCha20Rng::seed_from_u64(23);
    for draw in 0..10 {
        let t1 = rng.random_range(0.0..2.0 * PI);
        let m = [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)];
        let inp = GraphState::coherent(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        let (dc, dm) = step_error(&inp, t1, t1 - FRAC_PI_2, 6.0, m);
        assert!(dc < 1e-5 && dm < 1e-4, "draw {draw}: {dc:e} {dm:e}");
    }
}

#[test]
fn sampled_outcomes_spread_as_exp_r() {
    // the input port sees half of a CVCS pair, whose local variance is cosh(2r)/2
    let inp = GraphState::vacuum(1);
    let spread = |r: f64| {
        (0..400)
            .map(|s| simulate_single_mode_gate(&inp, 1.0, -0.2, r, None, s).unwrap().1.outcomes()[0].powi(2))
            .sum::<f64>()
            / 400.0
    };
    let ratio = spread(3.0) / spread(2.0);
    assert!((ratio / 2f64.exp() - 1.0).abs() < 0.25, "{ratio}");
}

#[test]
fn macronode_error_shrinks_as_exp_minus_2r() {
    let inp = random_state(1, 4);
    let err = |r: f64| {
        let (out, rec) = simulate_single_mode_gate(&inp, 1.0, -0.2, r, Some([0.4, -0.9]), 0).unwrap();
        let m = rec.outcomes();
        let want = inp.apply(&v_gate(1.0, -0.2, m[0], m[1]).unwrap()).unwrap();
        gaussian_distance(&out, &want).unwrap().0
    };
    let ratio = err(5.0) / err(4.0);
    assert!((ratio * 2f64.exp() - 1.0).abs() < 0.05, "ratio {ratio}");
}

#[test]
fn two_mode_gate_factorizes_for_diagonal_middle_angles() {
    let mut rng = ChaCha20Rng::seed_from_u64(8);
    for k in [0usize, 1] {
        let s = if k == 0 { 1.0 } else { -1.0 };
        let mut a = || rng.random_range(0.2..1.3);
        let angles = TwoModeAngles {
            theta2a: a(),
            theta2b: -a(),
            theta3a: -s * FRAC_PI_4,
            theta3b: -s * FRAC_PI_4,
            theta4a: a(),
            theta4b: -a(),
        };
        let g = two_mode_gate(&angles, &TwoModeOutcomes::default(), k).unwrap();
        let m = g.matrix();
        for (i, j) in [(0, 1), (0, 3), (2, 1), (2, 3), (1, 0), (1, 2), (3, 0), (3, 2)] {
            assert!(m[(i, j)].abs() < 1e-10, "k={k} ({i},{j}) = {}", m[(i, j)]);
        }
    }
}

#[test]
fn cz_table_reproduces_weighted_cz() {
    for k in [0usize, 1] {
        for phi in [FRAC_PI_4, PI / 3.0] {
            let g = two_mode_gate(&cz_angle_table(phi, k), &TwoModeOutcomes::default(), k).unwrap();
            let target = cz_target(phi, k).unwrap();
            assert!(max_abs(&(g.matrix() - target.matrix())) < 1e-9, "k={k} φ={phi}");
        }
    }
}

#[test]
fn cz_weight_vanishes_at_half_pi() {
    let t = cz_target(FRAC_PI_2, 0).unwrap();
    let local = SymplecticGate::rotation(-3.0 * FRAC_PI_4, 0, 2)
        .unwrap()
        .then(&SymplecticGate::rotation(FRAC_PI_4, 1, 2).unwrap())
        .unwrap();
    assert!(max_abs(&(t.matrix() - local.matrix())) < 1e-15);
}

#[test]
fn two_mode_displacements_are_linear_in_outcomes() {
    let angles = cz_angle_table(PI / 3.0, 0);
    let o1 = TwoModeOutcomes { m1b: 0.3, m3a: -0.2, m3b: 0.5, m5a: 0.1, m2a: -0.7, m2b: 0.4, m4a: 0.9, m4b: -0.6 };
    let o2 = TwoModeOutcomes { m1b: 0.6, m3a: -0.4, m3b: 1.0, m5a: 0.2, m2a: -1.4, m2b: 0.8, m4a: 1.8, m4b: -1.2 };
    let d1 = two_mode_gate(&angles, &o1, 0).unwrap().displacement().clone();
    let d2 = two_mode_gate(&angles, &o2, 0).unwrap().displacement().clone();
    assert!((d2 - d1 * 2.0).amax() < 1e-12);
    assert_eq!(two_mode_gate(&angles, &TwoModeOutcomes::default(), 0).unwrap().displacement().amax(), 0.0);
}

fn ten_step_program() -> Program {
    let steps = (0..5)
        .flat_map(|t| {
            [
                Step { time_index: t, detector: Detector::B, basis: Basis::Theta(0.3 * t as f64), outcome: None },
                Step { time_index: t, detector: Detector::C, basis: Basis::Theta(-0.2), outcome: None },
            ]
        })
        .collect();
    Program { lattice: LatticeConfig::new(3, 2, 1.0), input: None, steps }
}

#[test]
fn gaussian_program_differs_only_by_frame() {
    let p = ten_step_program();
    let a = run_program(&p, 1).unwrap();
    let b = run_program(&p, 2).unwrap();
    assert_eq!(a.record.events.len(), 10);
    let sa = GraphState::try_from(a.state.clone()).unwrap();
    let sb = GraphState::try_from(b.state.clone()).unwrap();
    assert!(graph_distance(&sa, &sb).unwrap() < 1e-9);
    let n = sa.n_modes();
    for i in 0..n {
        let dq = sa.mean()[i] - sb.mean()[i];
        let dp = sa.mean()[n + i] - sb.mean()[n + i];
        assert!((dq - (a.record.frame.s[i] - b.record.frame.s[i])).abs() < 1e-8);
        assert!((dp - (a.record.frame.t[i] - b.record.frame.t[i])).abs() < 1e-8);
    }
    assert_ne!(a.record.outcomes(), b.record.outcomes());
}

#[test]
fn replayed_outcomes_reproduce_state() {
    let p = ten_step_program();
    let a = run_program(&p, 1).unwrap();
    let mut replay = p.clone();
    for (s, e) in replay.steps.iter_mut().zip(&a.record.events) {
        s.outcome = Some(e.outcome);
    }
    let b = run_program(&replay, 77).unwrap();
    assert_eq!(a, b);
}

#[test]
fn wire_program_tracks_ideal_frame() {
    let inp = GraphState::coherent(0.2, 0.1);
    let angles = [(1.2, 0.1), (0.4, -0.9), (2.0, 1.1)];
    let given = [0.3, -0.8, 1.1, 0.2, -0.5, 0.9];
    let steps = angles
        .iter()
        .enumerate()
        .flat_map(|(j, &(t1, t2))| {
            let t = 2 * j;
            [
                Step { time_index: t, detector: Detector::X, basis: Basis::Theta(t1 - FRAC_PI_2), outcome: Some(given[2 * j]) },
                Step { time_index: t, detector: Detector::A, basis: Basis::Theta(t2 - FRAC_PI_2), outcome: Some(given[2 * j + 1]) },
            ]
        })
        .collect();
    let p = Program { lattice: LatticeConfig::new(2, 3, 7.0), input: Some(inp.to_json_value()), steps };
    let out = run_program(&p, 5).unwrap();
    let m = out.record.outcomes();
    assert_eq!(m, given);
    let mut frame = Frame::default();
    let mut ideal = SymplecticGate::identity(1);
    for (j, &(t1, t2)) in angles.iter().enumerate() {
        let g = v_gate(t1, t2, m[2 * j], m[2 * j + 1]).unwrap();
        frame = feedforward(frame, &GateKind::Gaussian(g.clone())).unwrap().frame;
        ideal = ideal.then(&g.linear_part()).unwrap();
    }
    let got = GraphState::try_from(out.state).unwrap();
    let want = inp.apply(&ideal).unwrap();
    assert!((got.mean()[0] - want.mean()[0] - frame.s).abs() < 1e-4);
    assert!((got.mean()[1] - want.mean()[1] - frame.t).abs() < 1e-4);
    assert!((out.record.frame.s[0] - frame.s).abs() < 1e-4);
    assert!((out.record.frame.t[0] - frame.t).abs() < 1e-4);
    let ig = out.ideal_gate.unwrap();
    assert!((ig[0][0] - ideal.matrix()[(0, 0)]).abs() < 1e-12);
}

#[test]
fn program_rejects_double_measurement() {
    let mut p = ten_step_program();
    p.steps.push(p.steps[0]);
    assert!(matches!(run_program(&p, 0), Err(Error::Program(_))));
}

#[test]
fn gaussian_frame_propagation() {
    let g = SymplecticGate::rotation(FRAC_PI_2, 0, 1).unwrap();
    let f = feedforward(Frame { s: 1.0, t: 0.0 }, &GateKind::Gaussian(g)).unwrap();
    assert!((f.frame.s).abs() < 1e-15 && (f.frame.t - 1.0).abs() < 1e-15);
    assert_eq!(f.sigma_prime, None);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn measurement_consistency(seed in any::<u64>(), k in 0usize..3, theta in -3.2f64..3.2, m in -3.0f64..3.0) {
        let st = random_state(3, seed);
        let (out, _) = measure_quadrature(&st, k, theta, Some(m), None).unwrap();
        let (cov, mean) = conditioned_by_covariance(&st, k, theta, m);
        prop_assert!(max_abs(&(out.covariance().unwrap() - cov)) < 1e-8);
        prop_assert!((out.mean() - mean).amax() < 1e-8);
    }

    #[test]
    fn v_gate_is_symplectic(t1 in -3.0f64..3.0, d in 0.05f64..3.09, m1 in -2.0f64..2.0, m2 in -2.0f64..2.0) {
        let g = v_gate(t1, t1 - d, m1, m2).unwrap();
        prop_assert!(symplectic_deviation(g.matrix()) < 1e-9 * (1.0 + max_abs(g.matrix()).powi(2)));
    }

    #[test]
    fn two_mode_gate_is_symplectic(k in 0usize..2, phi in 0.2f64..1.4) {
        let g = two_mode_gate(&cz_angle_table(phi, k), &TwoModeOutcomes::default(), k).unwrap();
        prop_assert!(symplectic_deviation(g.matrix()) < 1e-10);
    }

    #[test]
    fn frame_matches_mean_difference(seed in any::<u64>(), s1 in any::<u64>(), s2 in any::<u64>()) {
        let st = random_state(4, seed);
        let sched = [(0usize, 0.3), (2, -1.0), (1, 0.7)];
        let run = |s: u64| {
            let mut rng = ChaCha20Rng::seed_from_u64(s);
            let mut r = HomodyneRun::unlabeled(st.clone());
            measure_schedule(&mut r, &sched, Some(&mut rng)).unwrap();
            r
        };
        let (a, b) = (run(s1), run(s2));
        let (fa, fb) = (a.frame(), b.frame());
        let dm = a.state().mean() - b.state().mean();
        prop_assert!((dm[0] - (fa.s[0] - fb.s[0])).abs() < 1e-9);
        prop_assert!((dm[1] - (fa.t[0] - fb.t[0])).abs() < 1e-9);
    }
}
