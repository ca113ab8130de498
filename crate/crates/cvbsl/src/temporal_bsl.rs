//! Temporal-mode synthesis of the bilayer square lattice.
//!
//! Every time bin `t` emits four squeezed modes. Two CVCS pairs are made from
//! them and merged into a square by one 50:50 beamsplitter. A 1-step delay and
//! an `N`-step delay then bring half of each square back to meet later bins at
//! two more beamsplitters. Delays are modeled as static mode re-indexing over
//! `T = N·M` bins, so the circuit is one fixed list of gates on `4T` modes.
//!
//! Mode `4t + d` is the mode of bin `t` that reaches detector `d`, with
//! `x = 0`, `a = 1`, `b = 2`, `c = 3`. Detectors `x`/`a` form macronode `B_t`
//! (ports `α`/`β`) and `b`/`c` form macronode `A_t`.

use std::collections::BTreeMap;
use std::collections::BTreeSet;
use std::f64::consts::{FRAC_PI_2, FRAC_PI_4};
use std::fmt::{self, Write as _};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussian_graph::{max_abs_c, GraphState, GraphStateJson, SymplecticGate};

/// Relative threshold separating graph edges from roundoff.
pub const EDGE_THRESHOLD: f64 = 1e-6;

/// Squeezing used to extract the ideal graph.
pub const IDEAL_R: f64 = 8.0;

/// Squeezing used to confirm the ideal graph has converged.
pub const IDEAL_R_CHECK: f64 = 10.0;

/// How delay-line couplings that reach past the ends of the run are treated.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Boundary {
    /// Bin indices wrap modulo `N·M`; every macronode has full degree.
    #[default]
    Periodic,
    /// Couplings that would reach bins before `0` are skipped.
    Open,
}

/// Size and squeezing of a lattice run.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatticeConfig {
    /// Long-delay length in bins (lattice rows).
    pub n: usize,
    /// Number of `N`-bin segments (lattice columns).
    pub m: usize,
    /// Squeezing parameter of every source.
    pub r: f64,
    #[serde(default)]
    pub boundary: Boundary,
    /// Apply a `π/4` phase delay to every mode before detection.
    #[serde(default)]
    pub phase_delays: bool,
}

impl LatticeConfig {
    pub fn new(n: usize, m: usize, r: f64) -> Self {
        Self { n, m, r, boundary: Boundary::Periodic, phase_delays: false }
    }

    pub fn with_boundary(mut self, boundary: Boundary) -> Self {
        self.boundary = boundary;
        self
    }

    pub fn with_r(mut self, r: f64) -> Self {
        self.r = r;
        self
    }

    /// Number of time bins `N·M`.
    pub fn bins(&self) -> usize {
        self.n * self.m
    }

    /// Number of modes `4·N·M`.
    pub fn n_modes(&self) -> usize {
        4 * self.bins()
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(Error::InvalidParameter(format!("N must be at least 2, got {}", self.n)));
        }
        if self.m < 1 {
            return Err(Error::InvalidParameter(format!("M must be at least 1, got {}", self.m)));
        }
        if !self.r.is_finite() || self.r < 0.0 {
            return Err(Error::InvalidParameter(format!("r must be finite and non-negative, got {}", self.r)));
        }
        Ok(())
    }
}

/// Homodyne detector a mode ends at.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Detector {
    X,
    A,
    B,
    C,
}

impl Detector {
    pub const ALL: [Detector; 4] = [Detector::X, Detector::A, Detector::B, Detector::C];

    /// Slot of this detector inside a time bin.
    pub fn slot(self) -> usize {
        match self {
            Detector::X => 0,
            Detector::A => 1,
            Detector::B => 2,
            Detector::C => 3,
        }
    }

    pub fn from_slot(slot: usize) -> Detector {
        Detector::ALL[slot % 4]
    }

    pub fn layer(self) -> Layer {
        match self {
            Detector::X | Detector::A => Layer::B,
            Detector::B | Detector::C => Layer::A,
        }
    }

    pub fn port(self) -> Port {
        match self {
            Detector::X | Detector::B => Port::Alpha,
            Detector::A | Detector::C => Port::Beta,
        }
    }

    pub fn parse(s: &str) -> Result<Detector> {
        match s.trim().to_ascii_lowercase().as_str() {
            "x" => Ok(Detector::X),
            "a" => Ok(Detector::A),
            "b" => Ok(Detector::B),
            "c" => Ok(Detector::C),
            other => Err(Error::InvalidParameter(format!("unknown detector '{other}'"))),
        }
    }
}

impl fmt::Display for Detector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let c = match self {
            Detector::X => "x",
            Detector::A => "a",
            Detector::B => "b",
            Detector::C => "c",
        };
        f.write_str(c)
    }
}

/// Layer of the bilayer lattice: `A` holds detectors `b`,`c`; `B` holds `x`,`a`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Layer {
    A,
    B,
}

/// Mode within a macronode.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Port {
    Alpha,
    Beta,
}

/// Position of one temporal mode in the lattice.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LatticeCoord {
    pub mode: usize,
    pub time: usize,
    pub detector: Detector,
    /// `ξ = t mod N`.
    pub row: usize,
    /// `t div N`.
    pub col: usize,
    pub layer: Layer,
    pub port: Port,
}

/// Bookkeeping between mode indices, detectors and lattice coordinates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MacronodeLattice {
    pub n: usize,
    pub m: usize,
    pub coords: Vec<LatticeCoord>,
}

impl MacronodeLattice {
    pub fn new(n: usize, m: usize) -> Self {
        let t_max = n * m;
        let coords = (0..4 * t_max)
            .map(|mode| {
                let time = mode / 4;
                let detector = Detector::from_slot(mode % 4);
                LatticeCoord {
                    mode,
                    time,
                    detector,
                    row: time % n,
                    col: time / n,
                    layer: detector.layer(),
                    port: detector.port(),
                }
            })
            .collect();
        Self { n, m, coords }
    }

    pub fn bins(&self) -> usize {
        self.n * self.m
    }

    /// Mode index of `(time, detector)`.
    pub fn mode_index(&self, time: usize, detector: Detector) -> Result<usize> {
        if time >= self.bins() {
            return Err(Error::InvalidParameter(format!(
                "time index {time} outside run of {} bins",
                self.bins()
            )));
        }
        Ok(4 * time + detector.slot())
    }

    /// Lattice coordinate of `(time, detector)`.
    pub fn lookup(&self, time: usize, detector: Detector) -> Result<LatticeCoord> {
        Ok(self.coords[self.mode_index(time, detector)?])
    }

    /// Both modes `(α, β)` of a macronode.
    pub fn macronode_modes(&self, time: usize, layer: Layer) -> Result<(usize, usize)> {
        match layer {
            Layer::A => Ok((self.mode_index(time, Detector::B)?, self.mode_index(time, Detector::C)?)),
            Layer::B => Ok((self.mode_index(time, Detector::X)?, self.mode_index(time, Detector::A)?)),
        }
    }

    /// True iff the macronodes of modes `i` and `j` are lattice neighbours.
    ///
    /// Square `t` spans `A_t`, `B_t`, `A_{t+1}` and `B_{t+N}`, so neighbouring
    /// macronodes are `0`, `1`, `N - 1` or `N` bins apart (modulo the run).
    pub fn neighbouring_macronodes(&self, i: usize, j: usize) -> bool {
        let bins = self.bins();
        let (ti, tj) = (self.coords[i].time, self.coords[j].time);
        let d = (tj + bins - ti) % bins;
        let near = |x: usize| x == 0 || x == 1 || x == self.n - 1 || x == self.n;
        near(d) || near((bins - d) % bins)
    }
}

/// Free-function form of [`MacronodeLattice::lookup`].
pub fn macronode_lookup(lattice: &MacronodeLattice, time: usize, detector: Detector) -> Result<LatticeCoord> {
    lattice.lookup(time, detector)
}

/// One optical element of the synthesis circuit.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "gate", rename_all = "snake_case")]
pub enum GateOp {
    Squeeze { mode: usize, r: f64 },
    Rotation { mode: usize, theta: f64 },
    Beamsplitter { i: usize, j: usize, theta: f64 },
}

impl GateOp {
    pub fn to_gate(&self, n: usize) -> Result<SymplecticGate> {
        match *self {
            GateOp::Squeeze { mode, r } => SymplecticGate::squeeze(r, mode, n),
            GateOp::Rotation { mode, theta } => SymplecticGate::rotation(theta, mode, n),
            GateOp::Beamsplitter { i, j, theta } => SymplecticGate::beamsplitter(theta, i, j, n),
        }
    }

    pub fn is_beamsplitter(&self) -> bool {
        matches!(self, GateOp::Beamsplitter { .. })
    }

    pub fn is_passive(&self) -> bool {
        !matches!(self, GateOp::Squeeze { .. })
    }

    pub fn modes(&self) -> Vec<usize> {
        match *self {
            GateOp::Squeeze { mode, .. } | GateOp::Rotation { mode, .. } => vec![mode],
            GateOp::Beamsplitter { i, j, .. } => vec![i, j],
        }
    }
}

/// Applies `ops` in order, fusing runs of passive gates confined to two modes.
///
/// Fusing keeps the graph update well conditioned: a lone `R(π/2)` on a
/// p-squeezed mode would create the large intermediate `Z = i e^{2r}`, while
/// the fused pair optics act on the squeezed inputs through a matrix with
/// condition number of order one.
pub fn apply_ops(state: &GraphState, ops: &[GateOp]) -> Result<GraphState> {
    let n = state.n_modes();
    let mut st = state.clone();
    let mut pending: Option<(SymplecticGate, BTreeSet<usize>)> = None;
    for op in ops {
        if op.is_passive() {
            let g = op.to_gate(n)?;
            let support: BTreeSet<usize> = op.modes().into_iter().collect();
            pending = match pending.take() {
                Some((acc, sup)) if sup.union(&support).count() <= 2 => {
                    let sup = sup.union(&support).cloned().collect();
                    Some((acc.then(&g)?, sup))
                }
                Some((acc, _)) => {
                    st = st.apply(&acc)?;
                    Some((g, support))
                }
                None => Some((g, support)),
            };
        } else {
            if let Some((acc, _)) = pending.take() {
                st = st.apply(&acc)?;
            }
            st = st.apply(&op.to_gate(n)?)?;
        }
    }
    if let Some((acc, _)) = pending {
        st = st.apply(&acc)?;
    }
    Ok(st)
}

/// Gate applied during a given time bin.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScheduledGate {
    pub time: usize,
    pub op: GateOp,
}

/// Two-mode CVCS with edge `+tanh 2r` from a q-squeezed and a p-squeezed source.
///
/// The q-squeezed source is written as `R(π/2) S(r)`, which equals `S(-r)` on the vacuum.
pub fn cvcs_pair_ops(r: f64, first: usize, second: usize) -> [GateOp; 6] {
    [
        GateOp::Squeeze { mode: first, r },
        GateOp::Squeeze { mode: second, r },
        GateOp::Rotation { mode: first, theta: FRAC_PI_2 },
        GateOp::Beamsplitter { i: first, j: second, theta: FRAC_PI_4 },
        GateOp::Rotation { mode: first, theta: -FRAC_PI_4 },
        GateOp::Rotation { mode: second, theta: -FRAC_PI_4 },
    ]
}

/// Square modes of bin `t`: `(u1, d1, u2, dN)`.
///
/// `u1` and `u2` stay in bin `t`; `d1` and `dN` are delayed by 1 and `N` bins.
fn square_modes(t: usize, n: usize, bins: usize) -> (usize, usize, usize, usize) {
    let u1 = 4 * t + Detector::C.slot();
    let u2 = 4 * t + Detector::A.slot();
    let d1 = 4 * ((t + 1) % bins) + Detector::B.slot();
    let dn = 4 * ((t + n) % bins) + Detector::X.slot();
    (u1, d1, u2, dn)
}

fn square_ops(r: f64, u1: usize, d1: usize, u2: usize, dn: usize) -> Vec<GateOp> {
    let mut ops = Vec::with_capacity(13);
    ops.extend(cvcs_pair_ops(r, u1, u2));
    ops.extend(cvcs_pair_ops(r, d1, dn));
    ops.push(GateOp::Beamsplitter { i: u2, j: dn, theta: FRAC_PI_4 });
    ops
}

/// Four-mode square cluster `(u1, d1, u2, dN)`: a 4-cycle with diagonals `{u1,d1}`, `{u2,dN}`.
pub fn build_square(r: f64) -> Result<GraphState> {
    apply_ops(&GraphState::vacuum(4), &square_ops(r, 0, 1, 2, 3))
}

/// Ordered gate list of the synthesis circuit.
pub fn schedule(config: &LatticeConfig) -> Result<Vec<ScheduledGate>> {
    config.validate()?;
    let (n, bins) = (config.n, config.bins());
    let mut out = Vec::new();
    for t in 0..bins {
        let (u1, d1, u2, dn) = square_modes(t, n, bins);
        out.extend(square_ops(config.r, u1, d1, u2, dn).into_iter().map(|op| ScheduledGate { time: t, op }));
    }
    for t in 0..bins {
        let open = config.boundary == Boundary::Open;
        // short delay: d1 of bin t-1 meets u1 of bin t at macronode A_t
        if !(open && t < 1) {
            out.push(ScheduledGate {
                time: t,
                op: GateOp::Beamsplitter {
                    i: 4 * t + Detector::B.slot(),
                    j: 4 * t + Detector::C.slot(),
                    theta: FRAC_PI_4,
                },
            });
        }
        // long delay: dN of bin t-N meets u2 of bin t at macronode B_t
        let wraps_onto_itself = bins == n;
        if !(open && t < n) && !wraps_onto_itself {
            out.push(ScheduledGate {
                time: t,
                op: GateOp::Beamsplitter {
                    i: 4 * t + Detector::X.slot(),
                    j: 4 * t + Detector::A.slot(),
                    theta: FRAC_PI_4,
                },
            });
        }
    }
    if config.phase_delays {
        for mode in 0..config.n_modes() {
            out.push(ScheduledGate { time: mode / 4, op: GateOp::Rotation { mode, theta: FRAC_PI_4 } });
        }
    }
    Ok(out)
}

/// Runs the synthesis circuit and returns the lattice state with its mode map.
pub fn build_bsl(config: &LatticeConfig) -> Result<(GraphState, MacronodeLattice)> {
    let sched = schedule(config)?;
    let ops: Vec<GateOp> = sched.iter().map(|g| g.op).collect();
    let st = apply_ops(&GraphState::vacuum(config.n_modes()), &ops)?;
    Ok((st, MacronodeLattice::new(config.n, config.m)))
}

/// Ideal graph `V = lim Re Z / tanh 2r`, with entries snapped to their magnitude levels.
pub fn ideal_graph(config: &LatticeConfig) -> Result<DMatrix<f64>> {
    let extract = |r: f64| -> Result<DMatrix<f64>> {
        let (st, _) = build_bsl(&config.with_r(r))?;
        Ok(st.z().map(|c| c.re) / (2.0 * r).tanh())
    };
    let raw = extract(IDEAL_R)?;
    let check = extract(IDEAL_R_CHECK)?;
    let drift = crate::gaussian_graph::max_abs(&(&raw - &check));
    if drift > 1e-6 {
        return Err(Error::Verification(format!(
            "ideal graph not converged between r={IDEAL_R} and r={IDEAL_R_CHECK}: drift {drift:.3e}"
        )));
    }
    Ok(snap_uniform(&raw))
}

/// Snaps entries to `0` or `±v_k`, where the `v_k` are the distinct magnitude levels
/// present (entries within `1e-6` relative of each other share a level).
pub fn snap_uniform(raw: &DMatrix<f64>) -> DMatrix<f64> {
    let max = crate::gaussian_graph::max_abs(raw);
    let cut = EDGE_THRESHOLD * max.max(f64::MIN_POSITIVE);
    let mut mags: Vec<f64> = raw.iter().filter(|x| x.abs() > cut).map(|x| x.abs()).collect();
    mags.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut levels: Vec<(f64, f64, usize)> = Vec::new();
    for m in mags {
        match levels.last_mut() {
            Some((lo, sum, count)) if m - *lo <= 1e-6 * m => {
                *sum += m;
                *count += 1;
            }
            _ => levels.push((m, m, 1)),
        }
    }
    let snap = |x: f64| -> f64 {
        if x.abs() <= cut {
            return 0.0;
        }
        let level = levels
            .iter()
            .map(|&(_, sum, count)| sum / count as f64)
            .min_by(|a, b| (a - x.abs()).abs().partial_cmp(&(b - x.abs()).abs()).unwrap())
            .unwrap();
        level * x.signum()
    };
    let snapped = raw.map(snap);
    (&snapped + snapped.transpose()) * 0.5
}

/// Off-diagonal edges `(j, k, Z_jk)` with `|Z_jk| > EDGE_THRESHOLD · max|Z|`, `j < k`.
pub fn edges(state: &GraphState) -> Vec<(usize, usize, num_complex::Complex64)> {
    let z = state.z();
    let cut = EDGE_THRESHOLD * max_abs_c(z);
    let mut out = Vec::new();
    for j in 0..z.nrows() {
        for k in j + 1..z.ncols() {
            if z[(j, k)].norm() > cut {
                out.push((j, k, z[(j, k)]));
            }
        }
    }
    out
}

/// Edge and self-loop statistics of a lattice state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UniformitySummary {
    pub n_modes: usize,
    pub n_edges: usize,
    pub edge_min: f64,
    pub edge_max: f64,
    pub loop_min: f64,
    pub loop_max: f64,
    pub degree_min: usize,
    pub degree_max: usize,
    pub negative_edges: usize,
}

impl UniformitySummary {
    pub fn of(state: &GraphState) -> Self {
        let n = state.n_modes();
        let e = edges(state);
        let mut degree = vec![0usize; n];
        for &(j, k, _) in &e {
            degree[j] += 1;
            degree[k] += 1;
        }
        let mags: Vec<f64> = e.iter().map(|x| x.2.norm()).collect();
        let loops: Vec<f64> = (0..n).map(|k| state.z()[(k, k)].norm()).collect();
        let fmin = |v: &[f64]| v.iter().cloned().fold(f64::INFINITY, f64::min);
        let fmax = |v: &[f64]| v.iter().cloned().fold(0.0, f64::max);
        Self {
            n_modes: n,
            n_edges: e.len(),
            edge_min: fmin(&mags),
            edge_max: fmax(&mags),
            loop_min: fmin(&loops),
            loop_max: fmax(&loops),
            degree_min: degree.iter().cloned().min().unwrap_or(0),
            degree_max: degree.iter().cloned().max().unwrap_or(0),
            negative_edges: e.iter().filter(|x| x.2.re < 0.0).count(),
        }
    }

    /// Largest relative spread among edge magnitudes.
    pub fn edge_spread(&self) -> f64 {
        (self.edge_max - self.edge_min) / self.edge_max
    }

    /// Largest relative spread among self-loop magnitudes.
    pub fn loop_spread(&self) -> f64 {
        (self.loop_max - self.loop_min) / self.loop_max
    }
}

impl fmt::Display for UniformitySummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "modes            {}", self.n_modes)?;
        writeln!(f, "edges            {} ({} negative)", self.n_edges, self.negative_edges)?;
        writeln!(f, "edge magnitude   [{:.12}, {:.12}]", self.edge_min, self.edge_max)?;
        writeln!(f, "self-loop        [{:.12e}, {:.12e}]", self.loop_min, self.loop_max)?;
        write!(f, "degree           [{}, {}]", self.degree_min, self.degree_max)
    }
}

/// Graphviz rendering of the rounded adjacency; negative edges are red.
pub fn to_dot(state: &GraphState, lattice: &MacronodeLattice) -> String {
    let mut s = String::from("graph bsl {\n  node [shape=circle, fontsize=9];\n");
    let mut by_macronode: BTreeMap<(usize, Layer), Vec<usize>> = BTreeMap::new();
    for c in &lattice.coords {
        by_macronode.entry((c.time, c.layer)).or_default().push(c.mode);
    }
    for ((t, layer), modes) in &by_macronode {
        let _ = writeln!(s, "  subgraph cluster_{t}_{layer:?} {{ label=\"{layer:?}{t}\";");
        for &m in modes {
            let c = lattice.coords[m];
            let _ = writeln!(s, "    m{m} [label=\"{}{}\"];", c.time, c.detector);
        }
        s.push_str("  }\n");
    }
    for (j, k, z) in edges(state) {
        let color = if z.re < 0.0 { "red" } else { "black" };
        let _ = writeln!(s, "  m{j} -- m{k} [color={color}, weight={:.6}];", z.norm());
    }
    s.push_str("}\n");
    s
}

/// JSON export of a lattice run.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BslExport {
    pub config: LatticeConfig,
    pub state: GraphStateJson,
    #[serde(rename = "V")]
    pub v: Option<Vec<Vec<f64>>>,
    pub lattice: MacronodeLattice,
}

impl BslExport {
    pub fn new(config: LatticeConfig, state: &GraphState, v: Option<&DMatrix<f64>>, lattice: MacronodeLattice) -> Self {
        let v = v.map(|v| (0..v.nrows()).map(|i| v.row(i).iter().cloned().collect()).collect());
        Self { config, state: state.to_json_value(), v, lattice }
    }
}
