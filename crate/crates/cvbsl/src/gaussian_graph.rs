//! Gaussian pure states in the graphical calculus.
//!
//! A pure Gaussian state on `n` modes is stored as a complex symmetric graph
//! `Z` with positive-definite imaginary part plus a real mean vector. The
//! position wavefunction is `exp(i (q - q0)ᵀ Z (q - q0) / 2 + i p0ᵀ q)` up to
//! normalization and phase.
//!
//! All phase-space vectors and matrices use the ordering
//! `(q_1, ..., q_n, p_1, ..., p_n)` with vacuum variance `1/2`. A gate with
//! Heisenberg matrix `S` and displacement `d` maps the mean as `x -> S x + d`
//! and the covariance as `Σ -> S Σ Sᵀ`.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest condition number of `A + B Z` accepted by [`GraphState::apply`].
pub const MAX_CONDITION: f64 = 1e12;

/// Tolerance used by [`SymplecticGate::new`] on `S Ω Sᵀ - Ω`, relative to `‖S‖²`.
pub const SYMPLECTIC_TOL: f64 = 1e-12;

/// Symplectic form `Ω = (0 I; -I 0)` on `n` modes.
pub fn omega(n: usize) -> DMatrix<f64> {
    let mut w = DMatrix::zeros(2 * n, 2 * n);
    for i in 0..n {
        w[(i, n + i)] = 1.0;
        w[(n + i, i)] = -1.0;
    }
    w
}

/// Maximum absolute entry of a real matrix.
pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0, |a, x| a.max(x.abs()))
}

/// Maximum absolute entry of a complex matrix.
pub fn max_abs_c(m: &DMatrix<Complex64>) -> f64 {
    m.iter().fold(0.0, |a, x| a.max(x.norm()))
}

fn symmetrize(z: &DMatrix<Complex64>) -> DMatrix<Complex64> {
    (z + z.transpose()) * Complex64::new(0.5, 0.0)
}

fn is_positive_definite(m: &DMatrix<f64>) -> bool {
    m.nrows() == 0 || m.clone().cholesky().is_some()
}

/// Condition number from the singular values of a complex matrix.
pub fn condition_number(m: &DMatrix<Complex64>) -> f64 {
    if m.nrows() == 0 {
        return 1.0;
    }
    let sv = m.clone().singular_values();
    let max = sv.iter().cloned().fold(0.0, f64::max);
    let min = sv.iter().cloned().fold(f64::INFINITY, f64::min);
    if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// A Gaussian pure state: graph `Z` and mean `(q0, p0)`.
#[derive(Clone, Debug, PartialEq)]
pub struct GraphState {
    z: DMatrix<Complex64>,
    mean: DVector<f64>,
}

impl GraphState {
    /// Builds a state from a graph and mean. `Z` is symmetrized; `Im Z` must be positive definite.
    pub fn new(z: DMatrix<Complex64>, mean: DVector<f64>) -> Result<Self> {
        let n = z.nrows();
        if z.ncols() != n {
            return Err(Error::DimensionMismatch { expected: n, found: z.ncols() });
        }
        if mean.len() != 2 * n {
            return Err(Error::DimensionMismatch { expected: 2 * n, found: mean.len() });
        }
        let z = symmetrize(&z);
        if !is_positive_definite(&z.map(|c| c.im)) {
            return Err(Error::NotNormalizable);
        }
        Ok(Self { z, mean })
    }

    /// Vacuum on `n` modes: `Z = i I`, zero mean.
    pub fn vacuum(n: usize) -> Self {
        Self {
            z: DMatrix::identity(n, n) * Complex64::i(),
            mean: DVector::zeros(2 * n),
        }
    }

    /// Product of squeezed vacua `S(r_k)|0⟩`; `r > 0` squeezes momentum.
    pub fn squeezed_vacua(r: &[f64]) -> Self {
        let n = r.len();
        let mut z = DMatrix::zeros(n, n);
        for (k, rk) in r.iter().enumerate() {
            z[(k, k)] = Complex64::new(0.0, (-2.0 * rk).exp());
        }
        Self { z, mean: DVector::zeros(2 * n) }
    }

    /// Single-mode coherent state with mean `(q, p)`.
    pub fn coherent(q: f64, p: f64) -> Self {
        Self {
            z: DMatrix::from_element(1, 1, Complex64::i()),
            mean: DVector::from_vec(vec![q, p]),
        }
    }

    pub fn n_modes(&self) -> usize {
        self.z.nrows()
    }

    pub fn z(&self) -> &DMatrix<Complex64> {
        &self.z
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    /// Position part `q0` of the mean.
    pub fn mean_q(&self) -> DVector<f64> {
        self.mean.rows(0, self.n_modes()).into_owned()
    }

    /// Momentum part `p0` of the mean.
    pub fn mean_p(&self) -> DVector<f64> {
        let n = self.n_modes();
        self.mean.rows(n, n).into_owned()
    }

    /// Same graph with a new mean.
    pub fn with_mean(&self, mean: DVector<f64>) -> Result<Self> {
        if mean.len() != self.mean.len() {
            return Err(Error::DimensionMismatch { expected: self.mean.len(), found: mean.len() });
        }
        Ok(Self { z: self.z.clone(), mean })
    }

    /// Tensor product; the modes of `self` come first.
    pub fn tensor(&self, other: &GraphState) -> GraphState {
        let (a, b) = (self.n_modes(), other.n_modes());
        let n = a + b;
        let mut z = DMatrix::zeros(n, n);
        z.view_mut((0, 0), (a, a)).copy_from(&self.z);
        z.view_mut((a, a), (b, b)).copy_from(&other.z);
        let mut mean = DVector::zeros(2 * n);
        mean.rows_mut(0, a).copy_from(&self.mean.rows(0, a));
        mean.rows_mut(a, b).copy_from(&other.mean.rows(0, b));
        mean.rows_mut(n, a).copy_from(&self.mean.rows(a, a));
        mean.rows_mut(n + a, b).copy_from(&other.mean.rows(b, b));
        GraphState { z, mean }
    }

    /// Reorders modes so that new mode `k` is old mode `order[k]`.
    pub fn permuted(&self, order: &[usize]) -> Result<GraphState> {
        let n = self.n_modes();
        if order.len() != n {
            return Err(Error::DimensionMismatch { expected: n, found: order.len() });
        }
        let mut seen = vec![false; n];
        for &o in order {
            if o >= n {
                return Err(Error::ModeOutOfRange { index: o, n });
            }
            if seen[o] {
                return Err(Error::InvalidParameter(format!("mode {o} repeated in permutation")));
            }
            seen[o] = true;
        }
        let z = DMatrix::from_fn(n, n, |i, j| self.z[(order[i], order[j])]);
        let mean = DVector::from_fn(2 * n, |i, _| {
            if i < n {
                self.mean[order[i]]
            } else {
                self.mean[n + order[i - n]]
            }
        });
        Ok(GraphState { z, mean })
    }

    /// Applies a symplectic gate: `Z' = (C + D Z)(A + B Z)^{-1}`, `mean' = S mean + d`.
    pub fn apply(&self, gate: &SymplecticGate) -> Result<GraphState> {
        let n = self.n_modes();
        if gate.n_modes() != n {
            return Err(Error::DimensionMismatch { expected: n, found: gate.n_modes() });
        }
        let s = gate.s.map(|x| Complex64::new(x, 0.0));
        let a = s.view((0, 0), (n, n));
        let b = s.view((0, n), (n, n));
        let c = s.view((n, 0), (n, n));
        let d = s.view((n, n), (n, n));
        let den = a + b * &self.z;
        let num = c + d * &self.z;
        let cond = condition_number(&den);
        if cond.is_nan() || cond > MAX_CONDITION {
            return Err(Error::Singular { cond, limit: MAX_CONDITION });
        }
        // Z' den = num  <=>  denᵀ Z'ᵀ = numᵀ
        let zt = den
            .transpose()
            .lu()
            .solve(&num.transpose())
            .ok_or(Error::Singular { cond: f64::INFINITY, limit: MAX_CONDITION })?;
        let z = symmetrize(&zt.transpose());
        if !is_positive_definite(&z.map(|c| c.im)) {
            return Err(Error::NotNormalizable);
        }
        let mean = &gate.s * &self.mean + &gate.d;
        Ok(GraphState { z, mean })
    }

    /// Covariance `½ [[V⁻¹, V⁻¹U], [UV⁻¹, V + UV⁻¹U]]` for `Z = U + iV`.
    pub fn covariance(&self) -> Result<DMatrix<f64>> {
        let n = self.n_modes();
        let u = self.z.map(|c| c.re);
        let v = self.z.map(|c| c.im);
        let vinv = v.clone().cholesky().ok_or(Error::NotNormalizable)?.inverse();
        let mut sigma = DMatrix::zeros(2 * n, 2 * n);
        let vu = &vinv * &u;
        let uv = &u * &vinv;
        let lower = &v + &u * &vinv * &u;
        sigma.view_mut((0, 0), (n, n)).copy_from(&vinv);
        sigma.view_mut((0, n), (n, n)).copy_from(&vu);
        sigma.view_mut((n, 0), (n, n)).copy_from(&uv);
        sigma.view_mut((n, n), (n, n)).copy_from(&lower);
        sigma *= 0.5;
        Ok((&sigma + sigma.transpose()) * 0.5)
    }

    /// True iff graphs and means agree entrywise within `tol`.
    pub fn equal_up_to_phase(&self, other: &GraphState, tol: f64) -> Result<bool> {
        if self.n_modes() != other.n_modes() {
            return Err(Error::DimensionMismatch { expected: self.n_modes(), found: other.n_modes() });
        }
        let dz = max_abs_c(&(&self.z - &other.z));
        let dm = (&self.mean - &other.mean).amax();
        Ok(dz <= tol && dm <= tol)
    }

    /// Serializable form `{n, Z_re, Z_im, mean}`.
    pub fn to_json_value(&self) -> GraphStateJson {
        GraphStateJson::from(self)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_json_value())?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let j: GraphStateJson = serde_json::from_str(s)?;
        j.try_into()
    }
}

/// JSON layout of a [`GraphState`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraphStateJson {
    pub n: usize,
    #[serde(rename = "Z_re")]
    pub z_re: Vec<Vec<f64>>,
    #[serde(rename = "Z_im")]
    pub z_im: Vec<Vec<f64>>,
    pub mean: Vec<f64>,
}

impl From<&GraphState> for GraphStateJson {
    fn from(g: &GraphState) -> Self {
        let n = g.n_modes();
        let rows = |f: fn(&Complex64) -> f64| -> Vec<Vec<f64>> {
            (0..n).map(|i| (0..n).map(|j| f(&g.z[(i, j)])).collect()).collect()
        };
        GraphStateJson {
            n,
            z_re: rows(|c| c.re),
            z_im: rows(|c| c.im),
            mean: g.mean.iter().cloned().collect(),
        }
    }
}

impl TryFrom<GraphStateJson> for GraphState {
    type Error = Error;

    fn try_from(j: GraphStateJson) -> Result<Self> {
        let n = j.n;
        let check = |m: &Vec<Vec<f64>>| -> Result<()> {
            if m.len() != n {
                return Err(Error::DimensionMismatch { expected: n, found: m.len() });
            }
            for row in m {
                if row.len() != n {
                    return Err(Error::DimensionMismatch { expected: n, found: row.len() });
                }
            }
            Ok(())
        };
        check(&j.z_re)?;
        check(&j.z_im)?;
        let z = DMatrix::from_fn(n, n, |i, k| Complex64::new(j.z_re[i][k], j.z_im[i][k]));
        let state = GraphState::new(z, DVector::from_vec(j.mean))?;
        Ok(state)
    }
}

/// Heisenberg matrix `S` plus displacement `d` on `n` modes.
#[derive(Clone, Debug, PartialEq)]
pub struct SymplecticGate {
    s: DMatrix<f64>,
    d: DVector<f64>,
}

fn check_mode(i: usize, n: usize) -> Result<()> {
    if i >= n {
        Err(Error::ModeOutOfRange { index: i, n })
    } else {
        Ok(())
    }
}

/// Deviation `max |S Ω Sᵀ - Ω|`.
pub fn symplectic_deviation(s: &DMatrix<f64>) -> f64 {
    let n = s.nrows() / 2;
    let w = omega(n);
    max_abs(&(s * &w * s.transpose() - &w))
}

impl SymplecticGate {
    /// Validates `S Ω Sᵀ = Ω` before accepting the matrix.
    pub fn new(s: DMatrix<f64>, d: DVector<f64>) -> Result<Self> {
        let m = s.nrows();
        if s.ncols() != m || !m.is_multiple_of(2) {
            return Err(Error::DimensionMismatch { expected: m, found: s.ncols() });
        }
        if d.len() != m {
            return Err(Error::DimensionMismatch { expected: m, found: d.len() });
        }
        let dev = symplectic_deviation(&s);
        let scale = max_abs(&s).powi(2).max(1.0);
        if dev > SYMPLECTIC_TOL * scale {
            return Err(Error::NotSymplectic(dev));
        }
        Ok(Self { s, d })
    }

    pub fn identity(n: usize) -> Self {
        Self { s: DMatrix::identity(2 * n, 2 * n), d: DVector::zeros(2 * n) }
    }

    pub fn n_modes(&self) -> usize {
        self.s.nrows() / 2
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.s
    }

    pub fn displacement(&self) -> &DVector<f64> {
        &self.d
    }

    /// Embeds a local `2k×2k` matrix in `(q.., p..)` order acting on `modes`.
    pub fn local(n: usize, modes: &[usize], local: &DMatrix<f64>, disp: &[f64]) -> Result<Self> {
        let k = modes.len();
        for (a, &i) in modes.iter().enumerate() {
            check_mode(i, n)?;
            if modes[..a].contains(&i) {
                return Err(Error::SameMode(i));
            }
        }
        if local.nrows() != 2 * k || local.ncols() != 2 * k || disp.len() != 2 * k {
            return Err(Error::DimensionMismatch { expected: 2 * k, found: local.nrows() });
        }
        let idx: Vec<usize> = modes.iter().cloned().chain(modes.iter().map(|m| m + n)).collect();
        let mut s = DMatrix::identity(2 * n, 2 * n);
        let mut d = DVector::zeros(2 * n);
        for (a, &ia) in idx.iter().enumerate() {
            for (b, &ib) in idx.iter().enumerate() {
                s[(ia, ib)] = local[(a, b)];
            }
            d[ia] = disp[a];
        }
        Ok(Self { s, d })
    }

    /// Beamsplitter `B_ij(θ)`: both quadrature blocks are `[[cos θ, -sin θ], [sin θ, cos θ]]`.
    pub fn beamsplitter(theta: f64, i: usize, j: usize, n: usize) -> Result<Self> {
        if i == j {
            return Err(Error::SameMode(i));
        }
        let (s, c) = theta.sin_cos();
        let m = DMatrix::from_row_slice(
            4,
            4,
            &[c, -s, 0.0, 0.0, s, c, 0.0, 0.0, 0.0, 0.0, c, -s, 0.0, 0.0, s, c],
        );
        Self::local(n, &[i, j], &m, &[0.0; 4])
    }

    /// Phase rotation `R(θ)`: `q -> q cos θ - p sin θ`, `p -> q sin θ + p cos θ`.
    pub fn rotation(theta: f64, i: usize, n: usize) -> Result<Self> {
        let (s, c) = theta.sin_cos();
        Self::local(n, &[i], &DMatrix::from_row_slice(2, 2, &[c, -s, s, c]), &[0.0; 2])
    }

    /// Squeezer `S(r)`: `q -> e^r q`, `p -> e^{-r} p`.
    pub fn squeeze(r: f64, i: usize, n: usize) -> Result<Self> {
        let m = DMatrix::from_row_slice(2, 2, &[r.exp(), 0.0, 0.0, (-r).exp()]);
        Self::local(n, &[i], &m, &[0.0; 2])
    }

    /// Shear `P(σ) = exp(i σ q²/2)`: `p -> p + σ q`.
    pub fn shear(sigma: f64, i: usize, n: usize) -> Result<Self> {
        Self::local(n, &[i], &DMatrix::from_row_slice(2, 2, &[1.0, 0.0, sigma, 1.0]), &[0.0; 2])
    }

    /// Controlled-Z `C_Z(g) = exp(i g q_i q_j)`: `p_i += g q_j`, `p_j += g q_i`.
    pub fn cz(g: f64, i: usize, j: usize, n: usize) -> Result<Self> {
        if i == j {
            return Err(Error::SameMode(i));
        }
        let mut m = DMatrix::identity(4, 4);
        m[(2, 1)] = g;
        m[(3, 0)] = g;
        Self::local(n, &[i, j], &m, &[0.0; 4])
    }

    /// Displacement `X(s) Z(t)`: `q -> q + s`, `p -> p + t`.
    pub fn displacement_gate(s: f64, t: f64, i: usize, n: usize) -> Result<Self> {
        Self::local(n, &[i], &DMatrix::identity(2, 2), &[s, t])
    }

    /// Single-mode gate from a `2×2` Heisenberg matrix and displacement.
    pub fn single_mode(m: &DMatrix<f64>, d: [f64; 2]) -> Result<Self> {
        Self::new(m.clone(), DVector::from_vec(d.to_vec()))
    }

    /// Gate that applies `self` first and then `next`.
    pub fn then(&self, next: &SymplecticGate) -> Result<Self> {
        if self.n_modes() != next.n_modes() {
            return Err(Error::DimensionMismatch { expected: self.n_modes(), found: next.n_modes() });
        }
        Ok(Self { s: &next.s * &self.s, d: &next.s * &self.d + &next.d })
    }

    /// Inverse gate.
    pub fn inverse(&self) -> Self {
        let n = self.n_modes();
        let w = omega(n);
        let sinv = -&w * self.s.transpose() * &w;
        let d = -(&sinv * &self.d);
        Self { s: sinv, d }
    }

    /// Tensor product with `self` on the first modes.
    pub fn tensor(&self, other: &SymplecticGate) -> Self {
        let (a, b) = (self.n_modes(), other.n_modes());
        let n = a + b;
        let mut s = DMatrix::zeros(2 * n, 2 * n);
        let mut d = DVector::zeros(2 * n);
        let map_a = |k: usize| if k < a { k } else { n + k - a };
        let map_b = |k: usize| if k < b { a + k } else { n + a + k - b };
        for r in 0..2 * a {
            for c in 0..2 * a {
                s[(map_a(r), map_a(c))] = self.s[(r, c)];
            }
            d[map_a(r)] = self.d[r];
        }
        for r in 0..2 * b {
            for c in 0..2 * b {
                s[(map_b(r), map_b(c))] = other.s[(r, c)];
            }
            d[map_b(r)] = other.d[r];
        }
        Self { s, d }
    }

    /// Same matrix with displacement removed.
    pub fn linear_part(&self) -> Self {
        Self { s: self.s.clone(), d: DVector::zeros(self.d.len()) }
    }
}

/// Free-function form of [`GraphState::vacuum`].
pub fn vacuum(n: usize) -> GraphState {
    GraphState::vacuum(n)
}

/// Free-function form of [`GraphState::squeezed_vacua`].
pub fn squeezed_vacua(r: &[f64]) -> GraphState {
    GraphState::squeezed_vacua(r)
}

/// Free-function form of [`GraphState::apply`].
pub fn apply(state: &GraphState, gate: &SymplecticGate) -> Result<GraphState> {
    state.apply(gate)
}

/// Free-function form of [`GraphState::covariance`].
pub fn covariance(state: &GraphState) -> Result<DMatrix<f64>> {
    state.covariance()
}

/// Free-function form of [`GraphState::equal_up_to_phase`].
pub fn equal_up_to_phase(a: &GraphState, b: &GraphState, tol: f64) -> Result<bool> {
    a.equal_up_to_phase(b, tol)
}

/// Purity residual `max |(Σ Ω)² + I/4|`.
pub fn purity_residual(sigma: &DMatrix<f64>) -> f64 {
    let n = sigma.nrows() / 2;
    let so = sigma * omega(n);
    max_abs(&(&so * &so + DMatrix::identity(2 * n, 2 * n) * 0.25))
}

/// Symplectic eigenvalues of a covariance matrix, sorted ascending.
pub fn symplectic_eigenvalues(sigma: &DMatrix<f64>) -> Vec<f64> {
    let n = sigma.nrows() / 2;
    let m = omega(n) * sigma;
    let ev = m.complex_eigenvalues();
    let mut vals: Vec<f64> = ev.iter().filter(|c| c.im > 0.0).map(|c| c.im).collect();
    vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
    vals
}
