//! Position-space wavefunctions on uniform grids for one or two modes.
//!
//! This engine shares no code with [`crate::gaussian_graph`]: gates act on
//! sampled amplitudes by phase multiplication, FFT phases and band-limited
//! interpolation, so it can certify identities involving the cubic phase
//! `K(χ) = exp(iχq³/3)` and cross-check the Gaussian calculus.
//!
//! Conventions: `X(s)ψ(x) = ψ(x - s)`, `Z(t)ψ(x) = e^{itx}ψ(x)`,
//! `P(σ) = e^{iσq²/2}`, `S(r)ψ(x) = e^{-r/2}ψ(e^{-r}x)`, `C_Z(g) = e^{igq₁q₂}`,
//! `R(θ)` maps `q` to `q cos θ - p sin θ` and `B(θ)ψ(y) = ψ(Oᵀy)` for the
//! rotation `O` of angle `θ`. Global phases are never compared.

use std::cell::RefCell;
use std::collections::BTreeMap;
use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI, SQRT_2};
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussian_graph::GraphState;
use crate::homodyne_mbqc::{kappa, tau, zeta, CubicParams};

/// Fraction of the half-width beyond which a resident state carries negligible mass.
pub const RESIDENT_FRACTION: f64 = 0.9;

/// Largest norm fraction allowed beyond `0.9 L`.
pub const RESIDENT_MASS: f64 = 1e-8;

/// Fidelity required by the beamsplitter-slice identity.
pub const E_FIDELITY: f64 = 1.0 - 1e-5;

/// Relative norm agreement required by the beamsplitter-slice identity.
pub const E_NORM_TOL: f64 = 1e-4;

/// Fidelity required by finite-squeezing gate checks.
pub const GATE_FIDELITY: f64 = 0.999;

type C64 = Complex64;

/// Uniform grid `x_j = -L + jΔ`, `Δ = 2L/P`, used for every mode.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    #[serde(rename = "L")]
    pub l: f64,
    #[serde(rename = "P")]
    pub p: usize,
}

impl Grid {
    pub fn new(l: f64, p: usize) -> Result<Self> {
        if !(l.is_finite() && l > 0.0) {
            return Err(Error::InvalidParameter(format!("grid half-width must be positive, got {l}")));
        }
        if p < 16 || !p.is_power_of_two() {
            return Err(Error::InvalidParameter(format!("grid points must be a power of two ≥ 16, got {p}")));
        }
        Ok(Self { l, p })
    }

    pub fn dx(&self) -> f64 {
        2.0 * self.l / self.p as f64
    }

    pub fn x(&self, j: usize) -> f64 {
        -self.l + j as f64 * self.dx()
    }

    pub fn points(&self) -> Vec<f64> {
        (0..self.p).map(|j| self.x(j)).collect()
    }

    /// Angular frequency of FFT bin `i`.
    pub fn k(&self, i: usize) -> f64 {
        let idx = if i < self.p / 2 { i as f64 } else { i as f64 - self.p as f64 };
        PI * idx / self.l
    }

    /// Largest representable frequency `π/Δ`.
    pub fn k_max(&self) -> f64 {
        PI / self.dx()
    }
}

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

fn plans(p: usize) -> (Arc<dyn Fft<f64>>, Arc<dyn Fft<f64>>) {
    PLANNER.with(|pl| {
        let mut pl = pl.borrow_mut();
        (pl.plan_fft_forward(p), pl.plan_fft_inverse(p))
    })
}

/// Multiplies the spectrum of every row of `data` (rows of length `p`) by `h(row, k)`.
fn spectral_rows(data: &mut [C64], grid: &Grid, h: impl Fn(usize, f64) -> C64 + Sync) {
    let p = grid.p;
    let (fwd, inv) = plans(p);
    let ks: Vec<f64> = (0..p).map(|i| grid.k(i)).collect();
    let scale = 1.0 / p as f64;
    data.par_chunks_mut(p).enumerate().for_each(|(row, line)| {
        let mut scratch = vec![C64::new(0.0, 0.0); fwd.get_inplace_scratch_len().max(inv.get_inplace_scratch_len())];
        fwd.process_with_scratch(line, &mut scratch);
        for (v, &k) in line.iter_mut().zip(&ks) {
            *v *= h(row, k) * scale;
        }
        inv.process_with_scratch(line, &mut scratch);
    });
}

fn transpose(data: &[C64], p: usize) -> Vec<C64> {
    let mut out = vec![C64::new(0.0, 0.0); data.len()];
    for i in 0..p {
        for j in 0..p {
            out[j * p + i] = data[i * p + j];
        }
    }
    out
}

/// Band-limited (trigonometric) interpolant of one grid line at arbitrary points.
/// Points outside `[-L, L)` evaluate to zero.
fn interpolate_line(line: &[C64], grid: &Grid, ys: &[f64]) -> Vec<C64> {
    let p = grid.p;
    let (fwd, _) = plans(p);
    let mut spec = line.to_vec();
    fwd.process(&mut spec);
    let half = p / 2;
    // reorder to k index -half+1 ..= half-1; the Nyquist bin is kept as a cosine
    let dk = PI / grid.l;
    let x0 = grid.x(0);
    let nyq = spec[half];
    let ordered: Vec<C64> = (1..p).map(|n| spec[(n + half) % p]).collect();
    let kmin = -(half as f64 - 1.0) * dk;
    ys.par_iter()
        .map(|&y| {
            if y < -grid.l || y >= grid.l {
                return C64::new(0.0, 0.0);
            }
            let u = y - x0;
            let mut cur = C64::from_polar(1.0, kmin * u);
            let step = C64::from_polar(1.0, dk * u);
            let mut acc = C64::new(0.0, 0.0);
            for f in &ordered {
                acc += f * cur;
                cur *= step;
            }
            acc += nyq * (PI * u / grid.dx()).cos();
            acc / p as f64
        })
        .collect()
}

/// Weights `w_j` with `f(m) = Σ_j w_j f_j` for the band-limited interpolant.
fn interpolation_weights(grid: &Grid, m: f64) -> Vec<C64> {
    let p = grid.p;
    let half = p / 2;
    let u = m - grid.x(0);
    let mut e: Vec<C64> = (0..p)
        .map(|i| if i == half { C64::new((PI * u / grid.dx()).cos(), 0.0) } else { C64::from_polar(1.0, grid.k(i) * u) })
        .collect();
    // w_j = (1/P) Σ_i e_i e^{-2πi ij/P}
    let (fwd, _) = plans(p);
    fwd.process(&mut e);
    e.iter().map(|v| v / p as f64).collect()
}

/// Sampled amplitudes of a one- or two-mode state; mode 0 is the slow index.
#[derive(Clone, Debug, PartialEq)]
pub struct WaveFunction {
    grid: Grid,
    modes: usize,
    amp: Vec<C64>,
}

impl WaveFunction {
    pub fn from_fn(grid: Grid, f: impl Fn(f64) -> C64) -> Self {
        Self { grid, modes: 1, amp: grid.points().into_iter().map(f).collect() }
    }

    pub fn from_fn2(grid: Grid, f: impl Fn(f64, f64) -> C64 + Sync) -> Self {
        let p = grid.p;
        let amp = (0..p * p).into_par_iter().map(|n| f(grid.x(n / p), grid.x(n % p))).collect();
        Self { grid, modes: 2, amp }
    }

    pub fn from_amplitudes(grid: Grid, modes: usize, amp: Vec<C64>) -> Result<Self> {
        if !(1..=2).contains(&modes) {
            return Err(Error::InvalidParameter(format!("grids hold one or two modes, not {modes}")));
        }
        let want = grid.p.pow(modes as u32);
        if amp.len() != want {
            return Err(Error::DimensionMismatch { expected: want, found: amp.len() });
        }
        Ok(Self { grid, modes, amp })
    }

    /// `ψ(q) = (det Im Z)^{1/4} π^{-n/4} exp[i (q-q₀)ᵀ Z (q-q₀)/2 + i p₀ᵀ q]`.
    pub fn gaussian(grid: Grid, state: &GraphState) -> Result<Self> {
        let n = state.n_modes();
        if !(1..=2).contains(&n) {
            return Err(Error::InvalidParameter(format!("grids hold one or two modes, not {n}")));
        }
        let z = state.z().clone();
        let det = z.map(|c| c.im).determinant();
        let pref = det.powf(0.25) / PI.powf(n as f64 / 4.0);
        let mean = state.mean().clone();
        if n == 1 {
            let (q0, p0, z) = (mean[0], mean[1], z[(0, 0)]);
            Ok(Self::from_fn(grid, |x| {
                let d = x - q0;
                (C64::i() * (0.5 * z * d * d + p0 * x)).exp() * pref
            }))
        } else {
            let (q0, q1, p0, p1) = (mean[0], mean[1], mean[2], mean[3]);
            let (z00, z01, z11) = (z[(0, 0)], z[(0, 1)], z[(1, 1)]);
            Ok(Self::from_fn2(grid, |x, y| {
                let (a, b) = (x - q0, y - q1);
                let quad = 0.5 * (z00 * a * a + 2.0 * z01 * a * b + z11 * b * b);
                (C64::i() * (quad + p0 * x + p1 * y)).exp() * pref
            }))
        }
    }

    pub fn vacuum(grid: Grid) -> Self {
        Self::from_fn(grid, |x| C64::new(vacuum_amplitude(x, 0.0), 0.0))
    }

    /// `S(r)|0⟩`.
    pub fn squeezed_vacuum(grid: Grid, r: f64) -> Self {
        Self::from_fn(grid, |x| C64::new(vacuum_amplitude(x, r), 0.0))
    }

    /// Cubic-phase state `e^{iχq³/3}` under the envelope of `S(r_env)|0⟩`.
    pub fn cubic_phase(grid: Grid, chi: f64, r_env: f64) -> Self {
        Self::from_fn(grid, |x| regularized_cubic(x, chi, r_env))
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn n_modes(&self) -> usize {
        self.modes
    }

    pub fn amplitudes(&self) -> &[C64] {
        &self.amp
    }

    fn cell(&self) -> f64 {
        self.grid.dx().powi(self.modes as i32)
    }

    pub fn norm(&self) -> f64 {
        (self.amp.iter().map(|a| a.norm_sqr()).sum::<f64>() * self.cell()).sqrt()
    }

    pub fn normalized(&self) -> Result<Self> {
        let n = self.norm();
        if !(n > 0.0 && n.is_finite()) {
            return Err(Error::NotNormalizable);
        }
        Ok(self.scaled(C64::new(1.0 / n, 0.0)))
    }

    pub fn scaled(&self, c: C64) -> Self {
        Self { grid: self.grid, modes: self.modes, amp: self.amp.iter().map(|a| a * c).collect() }
    }

    /// `⟨self|other⟩`.
    pub fn inner(&self, other: &WaveFunction) -> Result<C64> {
        self.same_layout(other)?;
        Ok(self.amp.iter().zip(&other.amp).map(|(a, b)| a.conj() * b).sum::<C64>() * self.cell())
    }

    fn same_layout(&self, other: &WaveFunction) -> Result<()> {
        if self.grid != other.grid || self.modes != other.modes {
            return Err(Error::GridMismatch(format!(
                "{} mode(s) on L={} P={} vs {} mode(s) on L={} P={}",
                self.modes, self.grid.l, self.grid.p, other.modes, other.grid.l, other.grid.p
            )));
        }
        Ok(())
    }

    /// Norm fraction lying beyond `0.9 L` in any coordinate.
    pub fn boundary_mass(&self) -> f64 {
        let edge = RESIDENT_FRACTION * self.grid.l;
        let p = self.grid.p;
        let outside = |j: usize| self.grid.x(j).abs() > edge;
        let total: f64 = self.amp.iter().map(|a| a.norm_sqr()).sum();
        let out: f64 = self
            .amp
            .iter()
            .enumerate()
            .filter(|(n, _)| if self.modes == 1 { outside(*n) } else { outside(n / p) || outside(n % p) })
            .map(|(_, a)| a.norm_sqr())
            .sum();
        if total > 0.0 {
            out / total
        } else {
            0.0
        }
    }

    /// Fails with [`Error::GridOverflow`] when the state leaves the window.
    pub fn check_resident(&self) -> Result<()> {
        let mass = self.boundary_mass();
        if mass > RESIDENT_MASS {
            return Err(Error::GridOverflow { mass });
        }
        Ok(())
    }

    /// `self ⊗ other` for two single-mode states.
    pub fn tensor(&self, other: &WaveFunction) -> Result<Self> {
        self.same_layout(other)?;
        if self.modes != 1 {
            return Err(Error::InvalidParameter("tensor product needs two single-mode states".into()));
        }
        let p = self.grid.p;
        let amp = (0..p * p).into_par_iter().map(|n| self.amp[n / p] * other.amp[n % p]).collect();
        Ok(Self { grid: self.grid, modes: 2, amp })
    }

    fn check_mode(&self, mode: usize) -> Result<()> {
        if mode >= self.modes {
            return Err(Error::ModeOutOfRange { index: mode, n: self.modes });
        }
        Ok(())
    }

    /// Multiplies by `f(q_mode)`.
    pub fn multiply(&self, mode: usize, f: impl Fn(f64) -> C64 + Sync) -> Result<Self> {
        self.check_mode(mode)?;
        let p = self.grid.p;
        let fv: Vec<C64> = self.grid.points().into_iter().map(f).collect();
        let amp = self
            .amp
            .par_iter()
            .enumerate()
            .map(|(n, a)| {
                let j = if self.modes == 1 { n } else if mode == 0 { n / p } else { n % p };
                a * fv[j]
            })
            .collect();
        Ok(Self { grid: self.grid, modes: self.modes, amp })
    }

    /// Runs `op` on every line along `mode` (rows of length `P`).
    fn along(&self, mode: usize, op: impl FnOnce(&mut [C64])) -> Result<Self> {
        self.check_mode(mode)?;
        let p = self.grid.p;
        let mut data = if self.modes == 2 && mode == 0 { transpose(&self.amp, p) } else { self.amp.clone() };
        op(&mut data);
        if self.modes == 2 && mode == 0 {
            data = transpose(&data, p);
        }
        Ok(Self { grid: self.grid, modes: self.modes, amp: data })
    }

    /// `X(s)`: `ψ(x) -> ψ(x - s)`.
    pub fn x_shift(&self, s: f64, mode: usize) -> Result<Self> {
        let g = self.grid;
        self.along(mode, |d| spectral_rows(d, &g, |_, k| C64::from_polar(1.0, -k * s)))
    }

    /// `Z(t) = e^{itq}`.
    pub fn z_shift(&self, t: f64, mode: usize) -> Result<Self> {
        self.multiply(mode, |x| C64::from_polar(1.0, t * x))
    }

    /// `P(σ) = e^{iσq²/2}`.
    pub fn shear(&self, sigma: f64, mode: usize) -> Result<Self> {
        self.multiply(mode, |x| C64::from_polar(1.0, 0.5 * sigma * x * x))
    }

    /// `K(χ) = e^{iχq³/3}`.
    pub fn kubic(&self, chi: f64, mode: usize) -> Result<Self> {
        self.multiply(mode, |x| C64::from_polar(1.0, chi * x * x * x / 3.0))
    }

    /// `exp(iγp²/2)`: Heisenberg action `q -> q - γp`.
    fn momentum_shear(&self, gamma: f64, mode: usize) -> Result<Self> {
        let g = self.grid;
        self.along(mode, |d| spectral_rows(d, &g, |_, k| C64::from_polar(1.0, 0.5 * gamma * k * k)))
    }

    fn parity(&self, mode: usize) -> Result<Self> {
        let p = self.grid.p;
        self.along(mode, |d| {
            d.par_chunks_mut(p).for_each(|line| {
                let src = line.to_vec();
                for j in 0..p {
                    line[j] = src[(p - j) % p];
                }
            })
        })
    }

    /// `R(θ)`, as shears `Q P(sin θ) Q` with `Q = exp(i tan(θ/2) p²/2)` on steps of at most `π/4`;
    /// `R(π)` is applied as the exact parity.
    pub fn rotate(&self, theta: f64, mode: usize) -> Result<Self> {
        self.check_mode(mode)?;
        let mut th = theta.rem_euclid(2.0 * PI);
        if th > PI {
            th -= 2.0 * PI;
        }
        let mut out = self.clone();
        if th.abs() > FRAC_PI_2 {
            out = out.parity(mode)?;
            th -= PI * th.signum();
        }
        let steps = (th.abs() / FRAC_PI_4).ceil().max(1.0) as usize;
        let step = th / steps as f64;
        if step == 0.0 {
            return Ok(out);
        }
        for _ in 0..steps {
            let gamma = (0.5 * step).tan();
            out = out.momentum_shear(gamma, mode)?.shear(step.sin(), mode)?.momentum_shear(gamma, mode)?;
        }
        Ok(out)
    }

    /// `S(r)`: `ψ(x) -> e^{-r/2} ψ(e^{-r} x)` by band-limited interpolation.
    pub fn squeeze(&self, r: f64, mode: usize) -> Result<Self> {
        let g = self.grid;
        let ys: Vec<f64> = g.points().into_iter().map(|x| (-r).exp() * x).collect();
        let pref = (-0.5 * r).exp();
        self.along(mode, |d| {
            let rows: Vec<Vec<C64>> = d.chunks(g.p).map(|line| interpolate_line(line, &g, &ys)).collect();
            for (line, new) in d.chunks_mut(g.p).zip(rows) {
                for (v, n) in line.iter_mut().zip(new) {
                    *v = n * pref;
                }
            }
        })
    }

    /// `C_Z(g) = e^{ig q₀ q₁}`.
    pub fn cz(&self, g: f64) -> Result<Self> {
        self.two_mode()?;
        let p = self.grid.p;
        let grid = self.grid;
        let amp = self
            .amp
            .par_iter()
            .enumerate()
            .map(|(n, a)| a * C64::from_polar(1.0, g * grid.x(n / p) * grid.x(n % p)))
            .collect();
        Ok(Self { grid, modes: 2, amp })
    }

    fn two_mode(&self) -> Result<()> {
        if self.modes != 2 {
            return Err(Error::InvalidParameter("operation needs a two-mode state".into()));
        }
        Ok(())
    }

    /// `B(θ)`: `Ψ(y) -> Ψ(Oᵀ y)`, with `Oᵀ` written as three coordinate shears
    /// `[[1, u], [0, 1]] [[1, 0], [v, 1]] [[1, u], [0, 1]]`, `u = tan(θ/2)`, `v = -sin θ`.
    pub fn beamsplitter(&self, theta: f64) -> Result<Self> {
        self.two_mode()?;
        let g = self.grid;
        let (u, v) = ((0.5 * theta).tan(), -theta.sin());
        // f(y0 + u y1, y1): each mode-0 line (fixed y1) is translated by -u y1
        let shift0 = |f: &WaveFunction, c: f64| {
            f.along(0, |d| spectral_rows(d, &g, |row, k| C64::from_polar(1.0, k * c * g.x(row))))
        };
        let shift1 = |f: &WaveFunction, c: f64| {
            f.along(1, |d| spectral_rows(d, &g, |row, k| C64::from_polar(1.0, k * c * g.x(row))))
        };
        let a = shift0(self, u)?;
        let b = shift1(&a, v)?;
        shift0(&b, u)
    }

    /// Band-limited values of a single-mode state at arbitrary points (zero outside the window).
    pub fn sample_at(&self, ys: &[f64]) -> Result<Vec<C64>> {
        if self.modes != 1 {
            return Err(Error::InvalidParameter("point evaluation needs a single-mode state".into()));
        }
        Ok(interpolate_line(&self.amp, &self.grid, ys))
    }

    /// Unnormalized slice `_{q_mode}⟨m|Ψ⟩` of a two-mode state, by band-limited interpolation.
    pub fn project_q(&self, mode: usize, m: f64) -> Result<WaveFunction> {
        self.two_mode()?;
        self.check_mode(mode)?;
        if !(m >= -self.grid.l && m < self.grid.l) {
            return Err(Error::InvalidParameter(format!("outcome {m} lies outside the grid window ±{}", self.grid.l)));
        }
        let p = self.grid.p;
        let w = interpolation_weights(&self.grid, m);
        let amp: Vec<C64> = (0..p)
            .into_par_iter()
            .map(|o| {
                (0..p)
                    .map(|j| {
                        let n = if mode == 0 { j * p + o } else { o * p + j };
                        w[j] * self.amp[n]
                    })
                    .sum()
            })
            .collect();
        Ok(WaveFunction { grid: self.grid, modes: 1, amp })
    }

    /// `p̂ψ` along `mode` (spectral derivative).
    fn momentum_applied(&self, mode: usize) -> Result<Self> {
        let g = self.grid;
        self.along(mode, |d| spectral_rows(d, &g, |_, k| C64::new(k, 0.0)))
    }

    /// Means `(q.., p..)` and symmetrized covariance from the grid.
    pub fn moments(&self) -> Result<(DVector<f64>, DMatrix<f64>)> {
        let n = self.modes;
        let psi = self.normalized()?;
        let p = self.grid.p;
        let qs: Vec<WaveFunction> = (0..n)
            .map(|m| {
                let grid = self.grid;
                let amp = psi
                    .amp
                    .iter()
                    .enumerate()
                    .map(|(idx, a)| {
                        let j = if n == 1 { idx } else if m == 0 { idx / p } else { idx % p };
                        a * grid.x(j)
                    })
                    .collect();
                WaveFunction { grid, modes: n, amp }
            })
            .collect();
        let ps = (0..n).map(|m| psi.momentum_applied(m)).collect::<Result<Vec<_>>>()?;
        let ops: Vec<&WaveFunction> = qs.iter().chain(ps.iter()).collect();
        let mean = DVector::from_fn(2 * n, |i, _| psi.inner(ops[i]).map(|c| c.re).unwrap_or(f64::NAN));
        let mut cov = DMatrix::zeros(2 * n, 2 * n);
        for i in 0..2 * n {
            for j in i..2 * n {
                let v = ops[i].inner(ops[j])?.re - mean[i] * mean[j];
                cov[(i, j)] = v;
                cov[(j, i)] = v;
            }
        }
        Ok((mean, cov))
    }
}

/// `|⟨a|b⟩| / (‖a‖ ‖b‖)`.
pub fn fidelity_up_to_phase(a: &WaveFunction, b: &WaveFunction) -> Result<f64> {
    let ip = a.inner(b)?;
    let (na, nb) = (a.norm(), b.norm());
    if na == 0.0 || nb == 0.0 {
        return Err(Error::NotNormalizable);
    }
    Ok((ip.norm() / (na * nb)).min(1.0))
}

/// Amplitude of `S(r)|0⟩` at `x` (real, normalized on the line).
pub fn vacuum_amplitude(x: f64, r: f64) -> f64 {
    let w = (-2.0 * r).exp();
    PI.powf(-0.25) * (-0.5 * r).exp() * (-0.5 * w * x * x).exp()
}

/// `e^{iχx³/3}` times the `S(r_env)|0⟩` envelope.
pub fn regularized_cubic(x: f64, chi: f64, r_env: f64) -> C64 {
    C64::from_polar(vacuum_amplitude(x, r_env), chi * x * x * x / 3.0)
}

/// `⟨m| R(φ) |x⟩` up to a constant phase.
fn rotation_kernel(phi: f64, m: f64, x: f64) -> C64 {
    let (s, c) = phi.sin_cos();
    C64::from_polar(1.0, -((m * m + x * x) * c - 2.0 * m * x) / (2.0 * s)) / (2.0 * PI * s.abs()).sqrt()
}

/// Single-mode wavefunction described by parameters, for batch files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StateSpec {
    /// `X(q) Z(p) R(theta) S(r)|0⟩`.
    Gaussian {
        #[serde(default)]
        r: f64,
        #[serde(default)]
        theta: f64,
        #[serde(default)]
        q: f64,
        #[serde(default)]
        p: f64,
    },
    /// Regularized cubic-phase state.
    Cubic { chi: f64, r_env: f64 },
    /// `(Σ c_k q^k) × S(r)|0⟩`, normalized on the grid.
    PolyGaussian { coeffs: Vec<f64>, r: f64 },
}

impl StateSpec {
    pub fn build(&self, grid: Grid) -> Result<WaveFunction> {
        match self {
            StateSpec::Gaussian { r, theta, q, p } => {
                let (s, c) = theta.sin_cos();
                let z = C64::new(0.0, (-2.0 * r).exp());
                // R(θ) acts on the graph as z -> (s + c z)/(c - s z)
                let zr = (s + c * z) / (c - s * z);
                let st = GraphState::new(
                    DMatrix::from_element(1, 1, zr),
                    DVector::from_vec(vec![*q, *p]),
                )?;
                WaveFunction::gaussian(grid, &st)
            }
            StateSpec::Cubic { chi, r_env } => Ok(WaveFunction::cubic_phase(grid, *chi, *r_env)),
            StateSpec::PolyGaussian { coeffs, r } => {
                let wf = WaveFunction::from_fn(grid, |x| {
                    let poly = coeffs.iter().rev().fold(0.0, |acc, c| acc * x + c);
                    C64::new(poly * vacuum_amplitude(x, *r), 0.0)
                });
                wf.normalized()
            }
        }
    }
}

/// Outcome of one identity check, serialized as `{identity, params, fidelity, norms, grid, r, pass}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub identity: String,
    pub params: BTreeMap<String, f64>,
    /// Smallest pairwise fidelity.
    pub fidelity: f64,
    pub fidelities: BTreeMap<String, f64>,
    pub norms: BTreeMap<String, f64>,
    pub grid: Grid,
    pub r: Option<f64>,
    pub threshold: f64,
    pub pass: bool,
}

impl VerificationReport {
    /// `1 - fidelity`.
    pub fn infidelity(&self) -> f64 {
        1.0 - self.fidelity
    }
}

fn params(pairs: &[(&str, f64)]) -> BTreeMap<String, f64> {
    pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
}

#[allow(clippy::too_many_arguments)]
fn report(
    identity: &str,
    params: BTreeMap<String, f64>,
    fidelities: BTreeMap<String, f64>,
    norms: BTreeMap<String, f64>,
    grid: Grid,
    r: Option<f64>,
    threshold: f64,
    extra_ok: bool,
) -> VerificationReport {
    let fidelity = fidelities.values().cloned().fold(1.0, f64::min);
    VerificationReport {
        identity: identity.into(),
        params,
        fidelity,
        fidelities,
        norms,
        grid,
        r,
        threshold,
        pass: extra_ok && fidelity >= threshold,
    }
}

/// `E_{φ,m} ψ = X(-m) S(ln√2) [φ(√2 m - q) ψ]` evaluated with grid operations.
pub fn e_operation(phi: &WaveFunction, psi: &WaveFunction, m: f64) -> Result<WaveFunction> {
    let pts: Vec<f64> = psi.grid().points().into_iter().map(|x| SQRT_2 * m - x).collect();
    let vals = phi.sample_at(&pts)?;
    let prod = WaveFunction::from_amplitudes(
        *psi.grid(),
        1,
        psi.amplitudes().iter().zip(vals).map(|(a, b)| a * b).collect(),
    )?;
    prod.squeeze(0.5 * 2f64.ln(), 0)?.x_shift(-m, 0)
}

/// Checks `_{q₂}⟨m| B₁₂ |ψ⟩|φ⟩ = E_{φ,m} ψ`: the slice is taken from the
/// two-mode grid after the beamsplitter, the right side from three single-mode
/// operations. Norms are compared after the factor `2^{1/4}` of the slice normalization.
pub fn verify_e_identity(phi: &WaveFunction, psi: &WaveFunction, m: f64) -> Result<VerificationReport> {
    phi.check_resident()?;
    psi.check_resident()?;
    let lhs = psi.tensor(phi)?.beamsplitter(FRAC_PI_4)?.project_q(1, m)?;
    let rhs = e_operation(phi, psi, m)?;
    lhs.check_resident()?;
    let fid = fidelity_up_to_phase(&lhs, &rhs)?;
    let (nl, nr) = (lhs.norm(), rhs.norm() * 2f64.powf(0.25));
    let rel = (nl - nr).abs() / nl.max(nr);
    Ok(report(
        "e_identity",
        params(&[("m", m)]),
        BTreeMap::from([("slice_vs_formula".to_string(), fid)]),
        BTreeMap::from([("slice".to_string(), nl), ("formula".to_string(), nr), ("relative_gap".to_string(), rel)]),
        *psi.grid(),
        None,
        E_FIDELITY,
        rel <= E_NORM_TOL,
    ))
}

/// `M_{θ,m} ψ = X(-2m sec θ) R(-π/2) S(ln ½) P(tan θ) ψ` by grid operations.
pub fn m_operation(theta: f64, m: f64, psi: &WaveFunction) -> Result<WaveFunction> {
    psi.shear(theta.tan(), 0)?
        .squeeze(0.5f64.ln(), 0)?
        .rotate(-FRAC_PI_2, 0)?
        .x_shift(-2.0 * m / theta.cos(), 0)
}

/// Runs the teleportation circuit on a two-mode grid: input on mode 0, `S(r)|0⟩`
/// on mode 1, `C_Z(-tanh(2r)/2)`, then `p̂(θ)` on mode 0 (as `R(θ - π/2)` and a
/// `q̂` slice at `m`). Returns the normalized state left on mode 1.
pub fn m_circuit(theta: f64, m: f64, r: f64, psi: &WaveFunction) -> Result<WaveFunction> {
    let g = *psi.grid();
    let anc = WaveFunction::squeezed_vacuum(g, r);
    let two = psi.tensor(&anc)?.cz(-(2.0 * r).tanh() / 2.0)?;
    two.rotate(theta - FRAC_PI_2, 0)?.project_q(0, m)?.normalized()
}

/// Compares [`m_circuit`] with [`m_operation`].
pub fn verify_m_circuit(theta: f64, m: f64, r: f64, psi: &WaveFunction) -> Result<VerificationReport> {
    if theta.cos().abs() < 1e-9 {
        return Err(Error::InvalidParameter("θ = ±π/2 has no finite sec θ".into()));
    }
    psi.check_resident()?;
    let circ = m_circuit(theta, m, r, psi)?;
    let formula = m_operation(theta, m, psi)?;
    circ.check_resident()?;
    formula.check_resident()?;
    let fid = fidelity_up_to_phase(&circ, &formula)?;
    Ok(report(
        "m_circuit",
        params(&[("theta", theta), ("m", m)]),
        BTreeMap::from([("circuit_vs_formula".to_string(), fid)]),
        BTreeMap::from([("formula".to_string(), formula.norm())]),
        *psi.grid(),
        Some(r),
        GATE_FIDELITY,
        true,
    ))
}

/// Outcomes `(m_a, m_e, m_f)` of the cubic macronode gate.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CubicOutcomes {
    pub m_a: f64,
    pub m_e: f64,
    pub m_f: f64,
}

/// Closed form `Z(√2 m_a) X(κ) R(-π/2) P(τ) K(-2√2 χ)`.
pub fn l_closed_form(params: CubicParams, m: CubicOutcomes, psi: &WaveFunction) -> Result<WaveFunction> {
    psi.kubic(-2.0 * SQRT_2 * params.chi, 0)?
        .shear(tau(params, m.m_a, m.m_f), 0)?
        .rotate(-FRAC_PI_2, 0)?
        .x_shift(kappa(params, m.m_a, m.m_e, m.m_f), 0)?
        .z_shift(SQRT_2 * m.m_a, 0)
}

/// Operator product `Z(t_r(√2 m_a - m_f)/2) M_{atan σ, m_e} E_{φ, m_f} E_{S(r)|0⟩, m_a}`.
/// With `r = None` the infinite-squeezing limit is taken analytically: `t_r = 1`,
/// the `S(r)|0⟩` factor is dropped and `φ` is the bare cubic phase.
pub fn l_operator_form(
    params: CubicParams,
    m: CubicOutcomes,
    r: Option<f64>,
    r_env: f64,
    psi: &WaveFunction,
) -> Result<WaveFunction> {
    let tr = r.map_or(1.0, |r| (2.0 * r).tanh());
    let chi = params.chi;
    let mut f = psi.clone();
    if let Some(r) = r {
        f = f.multiply(0, |x| C64::new(vacuum_amplitude(SQRT_2 * m.m_a - x, r), 0.0))?;
    }
    f = f.squeeze(0.5 * 2f64.ln(), 0)?.x_shift(-m.m_a, 0)?;
    f = match r {
        Some(_) => f.multiply(0, |x| regularized_cubic(SQRT_2 * m.m_f - x, chi, r_env))?,
        None => f.multiply(0, |x| {
            let s = SQRT_2 * m.m_f - x;
            C64::from_polar(1.0, chi * s * s * s / 3.0)
        })?,
    };
    f = f.squeeze(0.5 * 2f64.ln(), 0)?.x_shift(-m.m_f, 0)?;
    let theta = params.sigma.atan();
    m_operation(theta, m.m_e, &f)?.z_shift(tr * (SQRT_2 * m.m_a - m.m_f) / 2.0, 0)
}

/// Full four-mode circuit at squeezing `r`: input `ψ` (mode 1), `S(r)|0⟩` on
/// modes 2 and 3, the cubic-phase state (envelope `r_env`) on mode 4;
/// `C_Z₂₃(tanh 2r)`, `B₁₂(π/4)` and `q̂₂ = m_a`, `B₁₄(π/4)` and `q̂₄ = m_f`,
/// then `p̂₁(atan σ) = m_e`. Mode 3 enters only through the diagonal `C_Z`, so the
/// output amplitude at `q₃ = y` is `⟨S(r)|0⟩(y)` times the three-mode amplitude
/// with the extra phase `e^{i tanh(2r) y q₂}`. The beamsplitter slices are exact
/// coordinate maps; the last projection uses the rotated-quadrature kernel.
pub fn l_circuit(
    params: CubicParams,
    m: CubicOutcomes,
    r: f64,
    r_env: f64,
    psi: &WaveFunction,
) -> Result<WaveFunction> {
    let g = *psi.grid();
    let tr = (2.0 * r).tanh();
    let xs = g.points();
    // mode-1 coordinate after both slices is x; trace it back through B₁₄ and B₁₂
    let u: Vec<f64> = xs.iter().map(|x| (x + m.m_f) / SQRT_2).collect();
    let q1: Vec<f64> = u.iter().map(|u| (u + m.m_a) / SQRT_2).collect();
    let psi_vals = psi.sample_at(&q1)?;
    let phi = params.sigma.atan() - FRAC_PI_2;
    let dx = g.dx();
    let weights: Vec<C64> = (0..g.p)
        .map(|j| {
            let q2 = (m.m_a - u[j]) / SQRT_2;
            let q4 = (m.m_f - xs[j]) / SQRT_2;
            psi_vals[j]
                * vacuum_amplitude(q2, r)
                * regularized_cubic(q4, params.chi, r_env)
                * rotation_kernel(phi, m.m_e, xs[j])
                * dx
        })
        .collect();
    let coeff: Vec<f64> = u.iter().map(|u| tr * (m.m_a - u) / SQRT_2).collect();
    let amp: Vec<C64> = xs
        .par_iter()
        .map(|&y| {
            let a: C64 = weights.iter().zip(&coeff).map(|(w, c)| w * C64::from_polar(1.0, c * y)).sum();
            a * vacuum_amplitude(y, r)
        })
        .collect();
    WaveFunction::from_amplitudes(g, 1, amp)?.normalized()
}

/// Three-way comparison of the cubic gate: full circuit, operator product and
/// closed form at squeezing `r`, plus the operator product in the
/// infinite-squeezing limit against the closed form.
pub fn verify_l_gate(
    params: CubicParams,
    m: CubicOutcomes,
    r: f64,
    r_env: f64,
    psi: &WaveFunction,
) -> Result<VerificationReport> {
    if params.chi.abs() > 0.3 || [m.m_a, m.m_e, m.m_f].iter().any(|v| v.abs() > 1.0) {
        return Err(Error::InvalidParameter("validated range is |χ| ≤ 0.3 and |m| ≤ 1".into()));
    }
    psi.check_resident()?;
    let circ = l_circuit(params, m, r, r_env, psi)?;
    let op = l_operator_form(params, m, Some(r), r_env, psi)?.normalized()?;
    let closed = l_closed_form(params, m, psi)?.normalized()?;
    let ideal = l_operator_form(params, m, None, r_env, psi)?.normalized()?;
    for w in [&circ, &op, &closed, &ideal] {
        w.check_resident()?;
    }
    let fids = BTreeMap::from([
        ("circuit_vs_operator".to_string(), fidelity_up_to_phase(&circ, &op)?),
        ("circuit_vs_closed".to_string(), fidelity_up_to_phase(&circ, &closed)?),
        ("operator_vs_closed".to_string(), fidelity_up_to_phase(&op, &closed)?),
        ("ideal_operator_vs_closed".to_string(), fidelity_up_to_phase(&ideal, &closed)?),
    ]);
    Ok(report(
        "l_gate",
        params_l(params, m, r_env),
        fids,
        BTreeMap::new(),
        *psi.grid(),
        Some(r),
        GATE_FIDELITY,
        true,
    ))
}

fn params_l(p: CubicParams, m: CubicOutcomes, r_env: f64) -> BTreeMap<String, f64> {
    params(&[
        ("chi", p.chi),
        ("sigma", p.sigma),
        ("m_a", m.m_a),
        ("m_e", m.m_e),
        ("m_f", m.m_f),
        ("tau", tau(p, m.m_a, m.m_f)),
        ("kappa", kappa(p, m.m_a, m.m_e, m.m_f)),
        ("r_env", r_env),
    ])
}

/// Checks `L Z(t) ψ = X(t) L ψ` and `L(σ') X(s) ψ = Z(-s) X(ζ) L(σ) ψ` with the
/// full circuit at squeezing `r`, `σ' = σ + √2 s χ` and `ζ` from its formula.
pub fn verify_commutation(
    s: f64,
    t: f64,
    params: CubicParams,
    m: CubicOutcomes,
    r: f64,
    r_env: f64,
    psi: &WaveFunction,
) -> Result<VerificationReport> {
    psi.check_resident()?;
    let l = |p: CubicParams, input: &WaveFunction| l_circuit(p, m, r, r_env, input);
    let base = l(params, psi)?;
    let lhs_a = l(params, &psi.z_shift(t, 0)?)?;
    let rhs_a = base.x_shift(t, 0)?;
    let adapted = CubicParams { chi: params.chi, sigma: crate::homodyne_mbqc::adapted_sigma(params, s) };
    let z = zeta(params, s, m.m_e, m.m_f);
    let lhs_b = l(adapted, &psi.x_shift(s, 0)?)?;
    let rhs_b = base.x_shift(z, 0)?.z_shift(-s, 0)?;
    for w in [&lhs_a, &rhs_a, &lhs_b, &rhs_b] {
        w.check_resident()?;
    }
    let fids = BTreeMap::from([
        ("z_commutation".to_string(), fidelity_up_to_phase(&lhs_a, &rhs_a)?),
        ("x_commutation".to_string(), fidelity_up_to_phase(&lhs_b, &rhs_b)?),
    ]);
    let mut pr = params_l(params, m, r_env);
    pr.insert("s".into(), s);
    pr.insert("t".into(), t);
    pr.insert("sigma_prime".into(), adapted.sigma);
    pr.insert("zeta".into(), z);
    Ok(report("commutation", pr, fids, BTreeMap::new(), *psi.grid(), Some(r), GATE_FIDELITY, true))
}

fn default_e_grid() -> Grid {
    Grid { l: 24.0, p: 1024 }
}

fn default_gate_grid() -> Grid {
    Grid { l: 40.0, p: 2048 }
}

fn default_m_grid() -> Grid {
    Grid { l: 16.0, p: 1024 }
}

/// One entry of a batch file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "identity", rename_all = "snake_case")]
pub enum Case {
    EIdentity {
        phi: StateSpec,
        psi: StateSpec,
        m: f64,
        #[serde(default = "default_e_grid")]
        grid: Grid,
    },
    MCircuit {
        theta: f64,
        m: f64,
        r: f64,
        psi: StateSpec,
        #[serde(default = "default_m_grid")]
        grid: Grid,
    },
    LGate {
        chi: f64,
        sigma: f64,
        outcomes: CubicOutcomes,
        r: f64,
        r_env: Option<f64>,
        psi: StateSpec,
        #[serde(default = "default_gate_grid")]
        grid: Grid,
    },
    Commutation {
        s: f64,
        t: f64,
        chi: f64,
        sigma: f64,
        outcomes: CubicOutcomes,
        r: f64,
        r_env: Option<f64>,
        psi: StateSpec,
        #[serde(default = "default_gate_grid")]
        grid: Grid,
    },
}

impl Case {
    /// Same case on another grid.
    pub fn with_grid(mut self, new: Grid) -> Self {
        match &mut self {
            Case::EIdentity { grid, .. }
            | Case::MCircuit { grid, .. }
            | Case::LGate { grid, .. }
            | Case::Commutation { grid, .. } => *grid = new,
        }
        self
    }

    pub fn run(&self) -> Result<VerificationReport> {
        match self {
            Case::EIdentity { phi, psi, m, grid } => verify_e_identity(&phi.build(*grid)?, &psi.build(*grid)?, *m),
            Case::MCircuit { theta, m, r, psi, grid } => verify_m_circuit(*theta, *m, *r, &psi.build(*grid)?),
            Case::LGate { chi, sigma, outcomes, r, r_env, psi, grid } => verify_l_gate(
                CubicParams { chi: *chi, sigma: *sigma },
                *outcomes,
                *r,
                r_env.unwrap_or(*r),
                &psi.build(*grid)?,
            ),
            Case::Commutation { s, t, chi, sigma, outcomes, r, r_env, psi, grid } => verify_commutation(
                *s,
                *t,
                CubicParams { chi: *chi, sigma: *sigma },
                *outcomes,
                *r,
                r_env.unwrap_or(*r),
                &psi.build(*grid)?,
            ),
        }
    }
}

/// Runs cases in parallel; each entry keeps its own error.
pub fn run_batch(cases: &[Case]) -> Vec<Result<VerificationReport>> {
    cases.par_iter().map(Case::run).collect()
}

/// Parses a JSON list of cases.
pub fn parse_batch(json: &str) -> Result<Vec<Case>> {
    Ok(serde_json::from_str(json)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid() -> Grid {
        Grid::new(10.0, 256).unwrap()
    }

    #[test]
    fn vacuum_is_normalized() {
        assert!((WaveFunction::vacuum(grid()).norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn grid_validation() {
        assert!(Grid::new(10.0, 100).is_err());
        assert!(Grid::new(-1.0, 64).is_err());
    }

    #[test]
    fn interpolation_reproduces_grid_values() {
        let g = grid();
        let wf = WaveFunction::squeezed_vacuum(g, 0.3).x_shift(0.4, 0).unwrap();
        let back = wf.sample_at(&g.points()).unwrap();
        for (a, b) in wf.amplitudes().iter().zip(back) {
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn interpolation_weights_match_interpolant() {
        let g = grid();
        let wf = WaveFunction::squeezed_vacuum(g, -0.2).z_shift(0.7, 0).unwrap();
        let w = interpolation_weights(&g, 0.3337);
        let direct: C64 = w.iter().zip(wf.amplitudes()).map(|(a, b)| a * b).sum();
        let interp = wf.sample_at(&[0.3337]).unwrap()[0];
        assert!((direct - interp).norm() < 1e-12);
    }

    #[test]
    fn rotation_kernel_matches_grid_rotation() {
        let g = Grid::new(12.0, 512).unwrap();
        let wf = WaveFunction::squeezed_vacuum(g, 0.4).x_shift(0.5, 0).unwrap();
        let phi = -1.1;
        let rot = wf.rotate(phi, 0).unwrap();
        let ms = [-0.7, 0.2, 1.3];
        let via_kernel: Vec<C64> = ms
            .iter()
            .map(|&m| g.points().iter().zip(wf.amplitudes()).map(|(x, a)| rotation_kernel(phi, m, *x) * a * g.dx()).sum())
            .collect();
        let via_grid = rot.sample_at(&ms).unwrap();
        // equal up to one common phase
        let ph = via_grid[0] / via_kernel[0];
        assert!((ph.norm() - 1.0).abs() < 1e-8);
        for (a, b) in via_kernel.iter().zip(via_grid) {
            assert!((a * ph - b).norm() < 1e-8);
        }
    }
}
