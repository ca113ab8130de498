//! Homodyne measurement on graph states and the macronode protocols of the BSL.
//!
//! Measuring `q̂(θ) = q̂ cos θ - p̂ sin θ` rotates the mode by `R(θ)` and
//! projects onto a `q̂` eigenstate. `p̂(θ)` is `q̂(θ - π/2)`. The remaining
//! state keeps the graph block `Z_rr`; only its mean moves, linearly in the
//! outcome. [`HomodyneRun`] tracks that linear response exactly, so the
//! outcome-dependent displacement (the frame) of any Gaussian program is known.

use std::collections::{BTreeMap, BTreeSet};
use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, SQRT_2};

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussian_graph::{max_abs, GraphState, GraphStateJson, SymplecticGate};
use crate::temporal_bsl::{apply_ops, build_bsl, cvcs_pair_ops, Detector, LatticeConfig, MacronodeLattice};

/// One homodyne event: the mode label, the `q̂(θ)` angle and the outcome.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub mode: usize,
    pub theta: f64,
    pub outcome: f64,
}

/// Outcome-dependent displacement of the remaining modes.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ModeFrame {
    /// q shifts.
    pub s: Vec<f64>,
    /// p shifts.
    pub t: Vec<f64>,
}

/// Ordered events, the labels of the unmeasured modes and their frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeasurementRecord {
    pub events: Vec<Event>,
    pub modes: Vec<usize>,
    pub frame: ModeFrame,
}

impl MeasurementRecord {
    pub fn outcomes(&self) -> Vec<f64> {
        self.events.iter().map(|e| e.outcome).collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Mean and variance of the `q̂(θ)` outcome on `mode`.
pub fn outcome_marginal(state: &GraphState, mode: usize, theta: f64) -> Result<(f64, f64)> {
    let st = rotate(state, mode, theta)?;
    let v = st.z().map(|c| c.im);
    let vinv = v.cholesky().ok_or(Error::NotNormalizable)?.inverse();
    Ok((st.mean()[mode], 0.5 * vinv[(mode, mode)]))
}

fn reborrow<'a>(rng: &'a mut Option<&mut dyn RngCore>) -> Option<&'a mut dyn RngCore> {
    match rng {
        Some(r) => Some(&mut **r),
        None => None,
    }
}

fn check_mode(mode: usize, n: usize) -> Result<()> {
    if mode >= n {
        return Err(Error::ModeOutOfRange { index: mode, n });
    }
    Ok(())
}

fn rotate(state: &GraphState, mode: usize, theta: f64) -> Result<GraphState> {
    check_mode(mode, state.n_modes())?;
    if theta == 0.0 {
        return Ok(state.clone());
    }
    state.apply(&SymplecticGate::rotation(theta, mode, state.n_modes())?)
}

struct Conditioned {
    state: GraphState,
    /// `∂ mean_rest / ∂ m`, in `(q_r, p_r)` order.
    gain: DVector<f64>,
}

/// Projects mode `k` onto `q̂ = m`. The caller has already rotated the mode.
fn condition_q(state: &GraphState, k: usize, m: f64) -> Result<Conditioned> {
    let n = state.n_modes();
    let rest: Vec<usize> = (0..n).filter(|&i| i != k).collect();
    let nr = rest.len();
    let z = state.z();
    let z_rr = DMatrix::from_fn(nr, nr, |a, b| z[(rest[a], rest[b])]);
    let u_rr = z_rr.map(|c| c.re);
    let v_rr = z_rr.map(|c| c.im);
    let u_rk = DVector::from_fn(nr, |a, _| z[(rest[a], k)].re);
    let v_rk = DVector::from_fn(nr, |a, _| z[(rest[a], k)].im);
    let w = if nr == 0 {
        DVector::zeros(0)
    } else {
        -v_rr.cholesky().ok_or(Error::NotNormalizable)?.solve(&v_rk)
    };
    let u = &u_rk + &u_rr * &w;
    let mean = state.mean();
    let delta = m - mean[k];
    let mut gain = DVector::zeros(2 * nr);
    let mut new_mean = DVector::zeros(2 * nr);
    for (a, &i) in rest.iter().enumerate() {
        gain[a] = w[a];
        gain[nr + a] = u[a];
        new_mean[a] = mean[i] + w[a] * delta;
        new_mean[nr + a] = mean[n + i] + u[a] * delta;
    }
    Ok(Conditioned { state: GraphState::new(z_rr, new_mean)?, gain })
}

/// Measures `q̂(θ)` on `mode`, using `outcome` when given and sampling from the
/// exact marginal with `rng` otherwise. Returns the state on the other modes and the outcome.
pub fn measure_quadrature(
    state: &GraphState,
    mode: usize,
    theta: f64,
    outcome: Option<f64>,
    rng: Option<&mut dyn RngCore>,
) -> Result<(GraphState, f64)> {
    let st = rotate(state, mode, theta)?;
    let m = resolve_outcome(&st, mode, outcome, rng)?;
    Ok((condition_q(&st, mode, m)?.state, m))
}

fn resolve_outcome(rotated: &GraphState, mode: usize, outcome: Option<f64>, rng: Option<&mut dyn RngCore>) -> Result<f64> {
    match (outcome, rng) {
        (Some(m), _) if m.is_finite() => Ok(m),
        (Some(m), _) => Err(Error::InvalidParameter(format!("outcome {m} is not finite"))),
        (None, Some(rng)) => {
            let v = rotated.z().map(|c| c.im);
            let vinv = v.cholesky().ok_or(Error::NotNormalizable)?.inverse();
            let sd = (0.5 * vinv[(mode, mode)]).sqrt();
            let x: f64 = StandardNormal.sample(rng);
            Ok(rotated.mean()[mode] + sd * x)
        }
        (None, None) => Err(Error::InvalidParameter("either an outcome or a random generator is required".into())),
    }
}

/// A Gaussian state under a sequence of gates and homodyne measurements.
///
/// Modes carry caller-chosen labels that survive re-indexing. The response
/// matrix `F` (one column per event) gives the exact outcome dependence of the
/// mean: `mean = mean(all outcomes zero) + F m`.
#[derive(Clone, Debug)]
pub struct HomodyneRun {
    state: GraphState,
    labels: Vec<usize>,
    response: DMatrix<f64>,
    events: Vec<Event>,
}

impl HomodyneRun {
    pub fn new(state: GraphState, labels: Vec<usize>) -> Result<Self> {
        if labels.len() != state.n_modes() {
            return Err(Error::DimensionMismatch { expected: state.n_modes(), found: labels.len() });
        }
        if labels.iter().collect::<BTreeSet<_>>().len() != labels.len() {
            return Err(Error::InvalidParameter("mode labels must be distinct".into()));
        }
        let n = state.n_modes();
        Ok(Self { state, labels, response: DMatrix::zeros(2 * n, 0), events: Vec::new() })
    }

    /// Labels `0..n`.
    pub fn unlabeled(state: GraphState) -> Self {
        let n = state.n_modes();
        Self { state, labels: (0..n).collect(), response: DMatrix::zeros(2 * n, 0), events: Vec::new() }
    }

    pub fn state(&self) -> &GraphState {
        &self.state
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    /// `∂ mean / ∂ m`, one column per event.
    pub fn response(&self) -> &DMatrix<f64> {
        &self.response
    }

    /// Current index of a label.
    pub fn index_of(&self, label: usize) -> Result<usize> {
        self.labels
            .iter()
            .position(|&l| l == label)
            .ok_or_else(|| Error::InvalidParameter(format!("mode {label} is not present (already measured or unknown)")))
    }

    /// Applies a gate on the current mode ordering.
    pub fn apply(&mut self, gate: &SymplecticGate) -> Result<()> {
        self.state = self.state.apply(gate)?;
        self.response = gate.matrix() * &self.response;
        Ok(())
    }

    /// Applies a local `2k×2k` gate to the labeled modes.
    pub fn apply_local(&mut self, labels: &[usize], local: &DMatrix<f64>, disp: &[f64]) -> Result<()> {
        let idx = labels.iter().map(|&l| self.index_of(l)).collect::<Result<Vec<_>>>()?;
        let gate = SymplecticGate::local(self.state.n_modes(), &idx, local, disp)?;
        self.apply(&gate)
    }

    /// Appends fresh modes with the given labels.
    pub fn extend(&mut self, ancilla: &GraphState, labels: &[usize]) -> Result<()> {
        if labels.len() != ancilla.n_modes() {
            return Err(Error::DimensionMismatch { expected: ancilla.n_modes(), found: labels.len() });
        }
        for l in labels {
            if self.labels.contains(l) {
                return Err(Error::InvalidParameter(format!("mode label {l} is already in use")));
            }
        }
        let (n, a) = (self.state.n_modes(), ancilla.n_modes());
        let mut f = DMatrix::zeros(2 * (n + a), self.response.ncols());
        f.view_mut((0, 0), (n, self.response.ncols())).copy_from(&self.response.rows(0, n));
        f.view_mut((n + a, 0), (n, self.response.ncols())).copy_from(&self.response.rows(n, n));
        self.state = self.state.tensor(ancilla);
        self.labels.extend_from_slice(labels);
        self.response = f;
        Ok(())
    }

    /// Gives a mode a new label.
    pub fn relabel(&mut self, from: usize, to: usize) -> Result<()> {
        let i = self.index_of(from)?;
        if from != to && self.labels.contains(&to) {
            return Err(Error::InvalidParameter(format!("mode label {to} is already in use")));
        }
        self.labels[i] = to;
        Ok(())
    }

    /// Measures `q̂(θ)` on a labeled mode and removes it.
    pub fn measure(&mut self, label: usize, theta: f64, outcome: Option<f64>, rng: Option<&mut dyn RngCore>) -> Result<f64> {
        let k = self.index_of(label)?;
        let n = self.state.n_modes();
        if theta != 0.0 {
            self.apply(&SymplecticGate::rotation(theta, k, n)?)?;
        }
        let m = resolve_outcome(&self.state, k, outcome, rng)?;
        let c = condition_q(&self.state, k, m)?;
        let rows: Vec<usize> = (0..n).filter(|&i| i != k).chain((0..n).filter(|&i| i != k).map(|i| i + n)).collect();
        let e = self.response.ncols();
        let mut f = DMatrix::zeros(2 * (n - 1), e + 1);
        for (a, &row) in rows.iter().enumerate() {
            for j in 0..e {
                f[(a, j)] = self.response[(row, j)] - c.gain[a] * self.response[(k, j)];
            }
            f[(a, e)] = c.gain[a];
        }
        self.state = c.state;
        self.response = f;
        self.labels.remove(k);
        self.events.push(Event { mode: label, theta, outcome: m });
        Ok(m)
    }

    /// Outcome-dependent part of the current mean, `F m`.
    pub fn frame(&self) -> ModeFrame {
        let m = DVector::from_iterator(self.events.len(), self.events.iter().map(|e| e.outcome));
        let shift = &self.response * m;
        let n = self.state.n_modes();
        ModeFrame { s: shift.rows(0, n).iter().cloned().collect(), t: shift.rows(n, n).iter().cloned().collect() }
    }

    pub fn record(&self) -> MeasurementRecord {
        MeasurementRecord { events: self.events.clone(), modes: self.labels.clone(), frame: self.frame() }
    }
}

/// `θ₊ = (θ₁ + θ₂)/2` and `θ₋ = (θ₁ - θ₂)/2` of a macronode measurement.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VAngles {
    pub theta1: f64,
    pub theta2: f64,
}

impl VAngles {
    pub fn new(theta1: f64, theta2: f64) -> Self {
        Self { theta1, theta2 }
    }

    pub fn plus(&self) -> f64 {
        0.5 * (self.theta1 + self.theta2)
    }

    pub fn minus(&self) -> f64 {
        0.5 * (self.theta1 - self.theta2)
    }
}

/// Parameters of the cubic-phase macronode gate.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CubicParams {
    pub chi: f64,
    pub sigma: f64,
}

/// `τ = 4σ + 4χ(m_a + √2 m_f)`.
pub fn tau(p: CubicParams, m_a: f64, m_f: f64) -> f64 {
    4.0 * p.sigma + 4.0 * p.chi * (m_a + SQRT_2 * m_f)
}

/// `κ = -2 m_e √(1+σ²) - 2σ(√2 m_a + m_f) - √2 χ (m_a + √2 m_f)²`.
pub fn kappa(p: CubicParams, m_a: f64, m_e: f64, m_f: f64) -> f64 {
    let mix = m_a + SQRT_2 * m_f;
    -2.0 * m_e * (1.0 + p.sigma * p.sigma).sqrt() - 2.0 * p.sigma * (SQRT_2 * m_a + m_f) - SQRT_2 * p.chi * mix * mix
}

/// `σ' = σ + √2 s χ`.
pub fn adapted_sigma(p: CubicParams, s: f64) -> f64 {
    p.sigma + SQRT_2 * s * p.chi
}

/// `ζ = 4sσ + 2√2 sχ(m_f + s) - 2 m_e (√(1+σ'²) - √(1+σ²))`.
pub fn zeta(p: CubicParams, s: f64, m_e: f64, m_f: f64) -> f64 {
    let sp = adapted_sigma(p, s);
    4.0 * s * p.sigma + 2.0 * SQRT_2 * s * p.chi * (m_f + s)
        - 2.0 * m_e * ((1.0 + sp * sp).sqrt() - (1.0 + p.sigma * p.sigma).sqrt())
}

fn rot2(theta: f64) -> DMatrix<f64> {
    let (s, c) = theta.sin_cos();
    DMatrix::from_row_slice(2, 2, &[c, -s, s, c])
}

/// Heisenberg matrix `R(θ₊) diag(tan θ₋, cot θ₋) R(θ₊)`.
///
/// For `tan θ₋ < 0` this is the continuation `S(ln tan θ₋) = R(π) S(ln |tan θ₋|)`.
pub fn v_gate_matrix(theta1: f64, theta2: f64) -> Result<DMatrix<f64>> {
    let a = VAngles::new(theta1, theta2);
    let delta = (theta1 - theta2).sin();
    let t = a.minus().tan();
    if delta.abs() < 1e-12 || !t.is_finite() || t.abs() < 1e-12 || t.abs() > 1e12 {
        return Err(Error::InvalidParameter(format!(
            "singular angle pair (θ₁, θ₂) = ({theta1}, {theta2}): sin(θ₁-θ₂) = {delta:.3e}"
        )));
    }
    let r = rot2(a.plus());
    Ok(&r * DMatrix::from_diagonal(&DVector::from_vec(vec![t, 1.0 / t])) * &r)
}

/// Displacement `(√2/Δ)(s₂m₁ + s₁m₂, -(c₂m₁ + c₁m₂))`, `Δ = sin(θ₁-θ₂)`, of the macronode gate.
pub fn v_gate_displacement(theta1: f64, theta2: f64, m1: f64, m2: f64) -> [f64; 2] {
    let (s1, c1) = theta1.sin_cos();
    let (s2, c2) = theta2.sin_cos();
    let k = SQRT_2 / (theta1 - theta2).sin();
    [k * (s2 * m1 + s1 * m2), -k * (c2 * m1 + c1 * m2)]
}

/// Gate `D[(-i e^{iθ₂} m₁ - i e^{iθ₁} m₂)/sin(θ₁-θ₂)] R(θ₊) S(ln tan θ₋) R(θ₊)`
/// implemented by measuring `p̂(θ₁)`, `p̂(θ₂)` on one macronode with outcomes `m₁`, `m₂`.
pub fn v_gate(theta1: f64, theta2: f64, m1: f64, m2: f64) -> Result<SymplecticGate> {
    let s = v_gate_matrix(theta1, theta2)?;
    SymplecticGate::single_mode(&s, v_gate_displacement(theta1, theta2, m1, m2))
}

/// Two-mode CVCS `S(-r)|0⟩ ⊗ S(r)|0⟩` through `B(π/4)` and `R(-π/4)⊗R(-π/4)`: edge `+tanh 2r`.
pub fn cvcs_pair(r: f64) -> Result<GraphState> {
    apply_ops(&GraphState::vacuum(2), &cvcs_pair_ops(r, 0, 1))
}

/// Labels used by one wire step.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct WireLabels {
    pub input: usize,
    pub ancilla: usize,
    pub output: usize,
}

/// One teleportation step: `B(π/4)` couples the input to half of a fresh CVCS
/// pair; measuring `p̂(θ₁)` on the input and `p̂(θ₂)` on the ancilla leaves
/// `v_gate(θ₁, θ₂, m₁, m₂)` applied to the input on the output mode.
pub fn wire_step(
    run: &mut HomodyneRun,
    labels: WireLabels,
    angles: VAngles,
    r: f64,
    outcomes: [Option<f64>; 2],
    mut rng: Option<&mut dyn RngCore>,
) -> Result<[f64; 2]> {
    v_gate_matrix(angles.theta1, angles.theta2)?;
    run.extend(&cvcs_pair(r)?, &[labels.ancilla, labels.output])?;
    let i = run.index_of(labels.input)?;
    let a = run.index_of(labels.ancilla)?;
    run.apply(&SymplecticGate::beamsplitter(FRAC_PI_4, i, a, run.state().n_modes())?)?;
    let m1 = run.measure(labels.input, angles.theta1 - FRAC_PI_2, outcomes[0], reborrow(&mut rng))?;
    let m2 = run.measure(labels.ancilla, angles.theta2 - FRAC_PI_2, outcomes[1], rng)?;
    Ok([m1, m2])
}

/// Runs one macronode step at squeezing `r` on a single-mode input and returns
/// the output state with its record. Outcomes are sampled from `seed` unless given.
pub fn simulate_single_mode_gate(
    input: &GraphState,
    theta1: f64,
    theta2: f64,
    r: f64,
    outcomes: Option<[f64; 2]>,
    seed: u64,
) -> Result<(GraphState, MeasurementRecord)> {
    if input.n_modes() != 1 {
        return Err(Error::DimensionMismatch { expected: 1, found: input.n_modes() });
    }
    let mut run = HomodyneRun::new(input.clone(), vec![0])?;
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let given = outcomes.map_or([None, None], |[a, b]| [Some(a), Some(b)]);
    wire_step(
        &mut run,
        WireLabels { input: 0, ancilla: 1, output: 2 },
        VAngles::new(theta1, theta2),
        r,
        given,
        Some(&mut rng),
    )?;
    Ok((run.state().clone(), run.record()))
}

/// Largest entrywise covariance and mean differences between two states.
pub fn gaussian_distance(a: &GraphState, b: &GraphState) -> Result<(f64, f64)> {
    if a.n_modes() != b.n_modes() {
        return Err(Error::DimensionMismatch { expected: a.n_modes(), found: b.n_modes() });
    }
    let dc = max_abs(&(a.covariance()? - b.covariance()?));
    let dm = (a.mean() - b.mean()).amax();
    Ok((dc, dm))
}

/// Deletion measurements for wire rows: `q̂((-1)^t π/4)` at detectors `b` and `c`
/// of every bin whose row is `ρ` or `ρ + 1` for a wire row `ρ`.
pub fn deletion_schedule(lattice: &MacronodeLattice, rows: &[usize]) -> Result<Vec<(usize, f64)>> {
    let n = lattice.n;
    let mut cut = BTreeSet::new();
    for &row in rows {
        if row >= n {
            return Err(Error::InvalidParameter(format!("row {row} out of range for N = {n}")));
        }
        cut.insert(row);
        cut.insert((row + 1) % n);
    }
    let mut out = Vec::new();
    for t in 0..lattice.bins() {
        if cut.contains(&(t % n)) {
            let theta = if t % 2 == 0 { FRAC_PI_4 } else { -FRAC_PI_4 };
            out.push((lattice.mode_index(t, Detector::B)?, theta));
            out.push((lattice.mode_index(t, Detector::C)?, theta));
        }
    }
    Ok(out)
}

/// Modes `x`, `a` of the B-layer macronodes in `row`.
pub fn wire_modes(lattice: &MacronodeLattice, row: usize) -> Result<Vec<usize>> {
    let mut out = Vec::new();
    for t in (row..lattice.bins()).step_by(lattice.n) {
        out.push(lattice.mode_index(t, Detector::X)?);
        out.push(lattice.mode_index(t, Detector::A)?);
    }
    Ok(out)
}

/// Lattice state after the deletion measurements.
#[derive(Clone, Debug)]
pub struct Decoupled {
    pub run: HomodyneRun,
    pub wires: Vec<Vec<usize>>,
}

impl Decoupled {
    /// Largest `|Z_jk|` between a wire and any mode outside it.
    pub fn cross_cut(&self) -> Result<f64> {
        cross_cut_weight(&self.run, &self.wires)
    }
}

/// Largest `|Z_jk|` joining a mode of one wire to a mode outside that wire.
pub fn cross_cut_weight(run: &HomodyneRun, wires: &[Vec<usize>]) -> Result<f64> {
    let z = run.state().z();
    let mut worst: f64 = 0.0;
    for wire in wires {
        let inside = wire.iter().map(|&l| run.index_of(l)).collect::<Result<BTreeSet<_>>>()?;
        for &i in &inside {
            for j in (0..z.ncols()).filter(|j| !inside.contains(j)) {
                worst = worst.max(z[(i, j)].norm());
            }
        }
    }
    Ok(worst)
}

/// Applies a measurement schedule with outcomes from `rng`, or zero outcomes when `rng` is `None`.
pub fn measure_schedule(run: &mut HomodyneRun, schedule: &[(usize, f64)], mut rng: Option<&mut dyn RngCore>) -> Result<()> {
    for &(mode, theta) in schedule {
        let given = if rng.is_some() { None } else { Some(0.0) };
        run.measure(mode, theta, given, reborrow(&mut rng))?;
    }
    Ok(())
}

/// Decouples the given rows of a BSL state into independent wires. The
/// resulting graph does not depend on the outcomes; zero outcomes are used.
pub fn decouple_wires(state: &GraphState, lattice: &MacronodeLattice, rows: &[usize]) -> Result<Decoupled> {
    if state.n_modes() != lattice.coords.len() {
        return Err(Error::DimensionMismatch { expected: lattice.coords.len(), found: state.n_modes() });
    }
    let mut run = HomodyneRun::unlabeled(state.clone());
    measure_schedule(&mut run, &deletion_schedule(lattice, rows)?, None)?;
    let wires = rows.iter().map(|&r| wire_modes(lattice, r)).collect::<Result<Vec<_>>>()?;
    Ok(Decoupled { run, wires })
}

/// Measurement angles on macronodes 2, 3 and 4 of the two-mode gate.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TwoModeAngles {
    pub theta2a: f64,
    pub theta2b: f64,
    pub theta3a: f64,
    pub theta3b: f64,
    pub theta4a: f64,
    pub theta4b: f64,
}

/// Outcomes entering the two-mode gate.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TwoModeOutcomes {
    pub m1b: f64,
    pub m3a: f64,
    pub m3b: f64,
    pub m5a: f64,
    pub m2a: f64,
    pub m2b: f64,
    pub m4a: f64,
    pub m4b: f64,
}

fn parity_sign(k: usize) -> f64 {
    if k.is_multiple_of(2) {
        1.0
    } else {
        -1.0
    }
}

/// `B · [V(s π/4, θ₃α) ⊗ V(θ₃β, s π/4)] · B · [V(θ₂α, θ₂β) ⊗ V(θ₄α, θ₄β)]` with
/// `s = (-1)^k` and `B = B(π/4)` on the two symmetric modes; the rightmost factor acts first.
pub fn two_mode_gate(angles: &TwoModeAngles, m: &TwoModeOutcomes, k: usize) -> Result<SymplecticGate> {
    let s = parity_sign(k) * FRAC_PI_4;
    let first = v_gate(angles.theta2a, angles.theta2b, m.m2a, m.m2b)?
        .tensor(&v_gate(angles.theta4a, angles.theta4b, m.m4a, m.m4b)?);
    let middle = v_gate(s, angles.theta3a, m.m1b, m.m3a)?.tensor(&v_gate(angles.theta3b, s, m.m3b, m.m5a)?);
    let b = SymplecticGate::beamsplitter(FRAC_PI_4, 0, 1, 2)?;
    first.then(&b)?.then(&middle)?.then(&b)
}

/// Angle table giving `[R((-1)^{k+1} 3π/4) ⊗ R((-1)^k π/4)] C_Z(2 cot φ)` up to displacement.
pub fn cz_angle_table(phi: f64, k: usize) -> TwoModeAngles {
    let s = parity_sign(k);
    TwoModeAngles {
        theta2a: -s * FRAC_PI_4 / 2.0,
        theta2b: s * 3.0 * FRAC_PI_4 / 2.0,
        theta3a: s * FRAC_PI_4 + phi,
        theta3b: s * FRAC_PI_4 - phi,
        theta4a: -s * FRAC_PI_4 / 2.0,
        theta4b: s * 3.0 * FRAC_PI_4 / 2.0,
    }
}

/// `[R((-1)^{k+1} 3π/4) ⊗ R((-1)^k π/4)] C_Z(2 cot φ)`.
pub fn cz_target(phi: f64, k: usize) -> Result<SymplecticGate> {
    let s = parity_sign(k);
    let local = SymplecticGate::rotation(-s * 3.0 * FRAC_PI_4, 0, 2)?.then(&SymplecticGate::rotation(s * FRAC_PI_4, 1, 2)?)?;
    SymplecticGate::cz(2.0 / phi.tan(), 0, 1, 2)?.then(&local)
}

/// Known displacement `X(s) Z(t)` in front of the ideal single-mode state.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    pub s: f64,
    pub t: f64,
}

/// Gate whose frame propagation is tracked by [`feedforward`].
#[derive(Clone, Debug, PartialEq)]
pub enum GateKind {
    /// Single-mode Gaussian gate; its displacement joins the frame.
    Gaussian(SymplecticGate),
    /// Cubic macronode gate with the outcomes `m_e`, `m_f` it produced.
    Cubic { params: CubicParams, m_e: f64, m_f: f64 },
}

/// Frame after a gate, with the adapted shear and `ζ` for cubic gates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Feedforward {
    pub frame: Frame,
    pub sigma_prime: Option<f64>,
    pub zeta: Option<f64>,
}

/// Propagates the frame through a gate.
///
/// Gaussian gates map `(s, t)` to `S (s, t) + d`. The cubic gate is run with
/// `σ' = σ + √2 s χ`, so that `L(σ') X(s) Z(t) = X(t + ζ) Z(-s) L(σ)` and the
/// frame becomes `(ζ + t, -s)`.
pub fn feedforward(frame: Frame, gate: &GateKind) -> Result<Feedforward> {
    match gate {
        GateKind::Gaussian(g) => {
            if g.n_modes() != 1 {
                return Err(Error::DimensionMismatch { expected: 1, found: g.n_modes() });
            }
            let v = g.matrix() * DVector::from_vec(vec![frame.s, frame.t]) + g.displacement();
            Ok(Feedforward { frame: Frame { s: v[0], t: v[1] }, sigma_prime: None, zeta: None })
        }
        GateKind::Cubic { params, m_e, m_f } => {
            let z = zeta(*params, frame.s, *m_e, *m_f);
            Ok(Feedforward {
                frame: Frame { s: z + frame.t, t: -frame.s },
                sigma_prime: Some(adapted_sigma(*params, frame.s)),
                zeta: Some(z),
            })
        }
    }
}

/// Basis of one program step: `q̂(θ)` or a cubic macronode measurement.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Basis {
    Theta(f64),
    Cubic { chi: f64, sigma: f64 },
}

/// One homodyne detection in a program.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Step {
    pub time_index: usize,
    pub detector: Detector,
    pub basis: Basis,
    /// Replays a known outcome instead of sampling.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub outcome: Option<f64>,
}

/// A measurement program.
///
/// Without `input` the steps measure modes of the synthesized lattice. With a
/// single-mode `input` the steps are grouped by time index into macronode
/// steps on a wire: `x` carries `θ₁` and `a` carries `θ₂` of the gate, where
/// the step angle is the `q̂(θ)` angle, so `θ₁ = θ_x + π/2` and `θ₂ = θ_a + π/2`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Program {
    pub lattice: LatticeConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input: Option<GraphStateJson>,
    pub steps: Vec<Step>,
}

impl Program {
    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

/// Final state, the labels of its modes and the measurement record.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProgramOutput {
    pub state: GraphStateJson,
    pub record: MeasurementRecord,
    /// Ideal gate (linear part) of a wire program.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ideal_gate: Option<Vec<Vec<f64>>>,
}

fn theta_of(step: &Step) -> Result<f64> {
    match step.basis {
        Basis::Theta(t) if t.is_finite() => Ok(t),
        Basis::Theta(t) => Err(Error::Program(format!("angle {t} is not finite"))),
        Basis::Cubic { .. } => Err(Error::Program(format!(
            "step at time {} detector {} needs a cubic-phase ancilla; only Gaussian steps can be executed",
            step.time_index, step.detector
        ))),
    }
}

/// Executes a program with outcomes drawn from `seed` (steps with a given outcome replay it).
pub fn run_program(program: &Program, seed: u64) -> Result<ProgramOutput> {
    program.lattice.validate()?;
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    match &program.input {
        None => run_on_lattice(program, &mut rng),
        Some(input) => run_on_wire(program, GraphState::try_from(input.clone())?, &mut rng),
    }
}

fn run_on_lattice(program: &Program, rng: &mut ChaCha20Rng) -> Result<ProgramOutput> {
    let (state, lattice) = build_bsl(&program.lattice)?;
    let mut run = HomodyneRun::unlabeled(state);
    for step in &program.steps {
        let mode = lattice.mode_index(step.time_index, step.detector).map_err(|e| Error::Program(e.to_string()))?;
        let theta = theta_of(step)?;
        run.index_of(mode)
            .map_err(|_| Error::Program(format!("mode {mode} ({}{}) is measured twice", step.detector, step.time_index)))?;
        run.measure(mode, theta, step.outcome, Some(rng))?;
    }
    Ok(ProgramOutput { state: run.state().to_json_value(), record: run.record(), ideal_gate: None })
}

fn run_on_wire(program: &Program, input: GraphState, rng: &mut ChaCha20Rng) -> Result<ProgramOutput> {
    if input.n_modes() != 1 {
        return Err(Error::Program(format!("wire input must have one mode, found {}", input.n_modes())));
    }
    let lattice = MacronodeLattice::new(program.lattice.n, program.lattice.m);
    let mut groups: BTreeMap<usize, [Option<&Step>; 2]> = BTreeMap::new();
    for step in &program.steps {
        let slot = match step.detector {
            Detector::X => 0,
            Detector::A => 1,
            other => {
                return Err(Error::Program(format!(
                    "wire steps use detectors x and a, found {other} at time {}",
                    step.time_index
                )))
            }
        };
        lattice.mode_index(step.time_index, step.detector).map_err(|e| Error::Program(e.to_string()))?;
        let g = groups.entry(step.time_index).or_insert([None, None]);
        if g[slot].is_some() {
            return Err(Error::Program(format!("detector {} at time {} is measured twice", step.detector, step.time_index)));
        }
        g[slot] = Some(step);
    }
    let times: Vec<usize> = groups.keys().cloned().collect();
    let output_label = lattice.coords.len();
    let first = times.first().map_or(Ok(output_label), |&t| lattice.mode_index(t, Detector::X))?;
    let mut run = HomodyneRun::new(input, vec![first])?;
    let mut ideal = DMatrix::<f64>::identity(2, 2);
    for (j, &t) in times.iter().enumerate() {
        let [Some(sx), Some(sa)] = groups[&t] else {
            return Err(Error::Program(format!("macronode at time {t} needs both an x and an a step")));
        };
        let angles = VAngles::new(theta_of(sx)? + FRAC_PI_2, theta_of(sa)? + FRAC_PI_2);
        ideal = v_gate_matrix(angles.theta1, angles.theta2)? * ideal;
        let next = times.get(j + 1).map_or(Ok(output_label), |&u| lattice.mode_index(u, Detector::X))?;
        let labels = WireLabels {
            input: lattice.mode_index(t, Detector::X)?,
            ancilla: lattice.mode_index(t, Detector::A)?,
            output: next,
        };
        wire_step(&mut run, labels, angles, program.lattice.r, [sx.outcome, sa.outcome], Some(rng))?;
    }
    let ideal_gate = Some(ideal.row_iter().map(|r| r.iter().cloned().collect()).collect());
    Ok(ProgramOutput { state: run.state().to_json_value(), record: run.record(), ideal_gate })
}

/// Largest `|Z_a - Z_b|` entry.
pub fn graph_distance(a: &GraphState, b: &GraphState) -> Result<f64> {
    if a.n_modes() != b.n_modes() {
        return Err(Error::DimensionMismatch { expected: a.n_modes(), found: b.n_modes() });
    }
    let d: DMatrix<Complex64> = a.z() - b.z();
    Ok(d.iter().map(|c| c.norm()).fold(0.0, f64::max))
}
