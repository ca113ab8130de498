//! Nullifiers, the `R(π/4)` reweighting of self-inverse graphs, and
//! variance-based entanglement witnesses from covariances or homodyne data.
//!
//! A nullifier row is the operator `Σ_k (cp_k p̂_k + cq_k q̂_k)`. Its variance
//! is the bilinear form `cᵀ Σ c` with `c = (cq, cp)` stacked in `(q, p)`
//! order. For real coefficients this is the usual variance; for the complex
//! rows `p̂ - Z q̂` it is the symmetrized second moment `⟨N²⟩`, which vanishes
//! exactly because `N|ψ⟩ = 0`.

use std::f64::consts::FRAC_PI_4;
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussian_graph::{max_abs, max_abs_c, GraphState, SymplecticGate};

/// Default witness margin: variance must fall below this fraction of the vacuum value.
pub const DEFAULT_WITNESS_FACTOR: f64 = 0.5;

/// Minimum number of shots accepted by [`ingest_samples`].
pub const MIN_SHOTS: usize = 100;

/// Jitter added to the diagonal when a sampling covariance fails Cholesky.
pub const SAMPLING_JITTER: f64 = 1e-12;

/// `z± = i sech 2r ± tanh 2r`.
pub fn z_pm(r: f64, sign: f64) -> Complex64 {
    Complex64::new(sign * (2.0 * r).tanh(), 1.0 / (2.0 * r).cosh())
}

/// `|(1 + z±)/(1 - z±) - i e^{±2r}|` for both signs.
pub fn z_pm_identity_residual(r: f64) -> [f64; 2] {
    [1.0, -1.0].map(|sign| {
        let z = z_pm(r, sign);
        let lhs = (Complex64::new(1.0, 0.0) + z) / (Complex64::new(1.0, 0.0) - z);
        (lhs - Complex64::new(0.0, (sign * 2.0 * r).exp())).norm()
    })
}

/// Rows `coeff_p · p̂ + coeff_q · q̂`.
#[derive(Clone, Debug, PartialEq)]
pub struct NullifierSet {
    pub coeff_p: DMatrix<Complex64>,
    pub coeff_q: DMatrix<Complex64>,
}

/// Quadrature touched by a nullifier row.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Setting {
    Q,
    P,
    Mixed,
    Empty,
}

impl fmt::Display for Setting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Setting::Q => "q",
            Setting::P => "p",
            Setting::Mixed => "q+p",
            Setting::Empty => "-",
        })
    }
}

impl NullifierSet {
    pub fn n_rows(&self) -> usize {
        self.coeff_p.nrows()
    }

    pub fn n_modes(&self) -> usize {
        self.coeff_p.ncols()
    }

    /// Stacked `(q, p)` coefficient vector of row `j`.
    pub fn row_vector(&self, j: usize) -> DVector<Complex64> {
        let n = self.n_modes();
        DVector::from_fn(2 * n, |i, _| if i < n { self.coeff_q[(j, i)] } else { self.coeff_p[(j, i - n)] })
    }

    /// Which quadrature row `j` touches.
    pub fn setting(&self, j: usize) -> Setting {
        let has_q = self.coeff_q.row(j).iter().any(|c| c.norm() > 0.0);
        let has_p = self.coeff_p.row(j).iter().any(|c| c.norm() > 0.0);
        match (has_q, has_p) {
            (true, true) => Setting::Mixed,
            (true, false) => Setting::Q,
            (false, true) => Setting::P,
            (false, false) => Setting::Empty,
        }
    }

    /// Every row touches only q̂ or only p̂.
    pub fn is_quadrature_pure(&self) -> bool {
        (0..self.n_rows()).all(|j| self.setting(j) != Setting::Mixed)
    }

    /// Modes with a nonzero coefficient in row `j`.
    pub fn support(&self, j: usize) -> Vec<usize> {
        (0..self.n_modes())
            .filter(|&k| self.coeff_q[(j, k)].norm() > 0.0 || self.coeff_p[(j, k)].norm() > 0.0)
            .collect()
    }

    /// Rank of the stacked coefficient matrix.
    pub fn rank(&self, tol: f64) -> usize {
        let n = self.n_modes();
        let mut m = DMatrix::<Complex64>::zeros(self.n_rows(), 2 * n);
        m.view_mut((0, 0), (self.n_rows(), n)).copy_from(&self.coeff_q);
        m.view_mut((0, n), (self.n_rows(), n)).copy_from(&self.coeff_p);
        m.singular_values().iter().filter(|&&s| s > tol).count()
    }
}

/// `p̂ - Z q̂`: one exact nullifier per mode.
pub fn exact_nullifiers(state: &GraphState) -> NullifierSet {
    let n = state.n_modes();
    NullifierSet { coeff_p: DMatrix::identity(n, n), coeff_q: -state.z().clone() }
}

/// `R(π/4)` on every mode.
pub fn phi_transform(state: &GraphState) -> Result<GraphState> {
    let n = state.n_modes();
    let mut s = DMatrix::zeros(2 * n, 2 * n);
    let (sn, cs) = FRAC_PI_4.sin_cos();
    for k in 0..n {
        s[(k, k)] = cs;
        s[(k, n + k)] = -sn;
        s[(n + k, k)] = sn;
        s[(n + k, n + k)] = cs;
    }
    state.apply(&SymplecticGate::new(s, DVector::zeros(2 * n))?)
}

/// Outcome of [`reweighting_check`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReweightingReport {
    pub r: f64,
    pub n_modes: usize,
    /// `max |Z_Φ - (i cosh 2r I + i sinh 2r V)|`.
    pub max_deviation: f64,
    /// `max |Z_Φ,jk / Z_Ψ,jk - i cosh 2r|` over edges.
    pub edge_factor_deviation: f64,
    /// `max |Z_Φ,jj / Z_Ψ,jj - cosh² 2r|` over nodes without a self-edge in `V`.
    pub loop_factor_deviation: f64,
    pub pass: bool,
}

/// Checks `V² = I` and `tr V = 0`.
pub fn check_self_inverse_trace_zero(v: &DMatrix<f64>, tol: f64) -> Result<()> {
    let n = v.nrows();
    if v.ncols() != n {
        return Err(Error::DimensionMismatch { expected: n, found: v.ncols() });
    }
    if max_abs(&(v - v.transpose())) > tol {
        return Err(Error::GraphPrecondition("V is not symmetric".into()));
    }
    let sq = max_abs(&(v * v - DMatrix::identity(n, n)));
    if sq > tol {
        return Err(Error::GraphPrecondition(format!("V² differs from I by {sq:.3e}")));
    }
    if v.trace().abs() > tol {
        return Err(Error::GraphPrecondition(format!("tr V = {:.3e}", v.trace())));
    }
    Ok(())
}

/// Builds `Z_Ψ = i sech 2r I + tanh 2r V`, applies `R(π/4)` to every mode and
/// compares with `i cosh 2r I + i sinh 2r V` to `1e-9`.
pub fn reweighting_check(v: &DMatrix<f64>, r: f64) -> Result<ReweightingReport> {
    check_self_inverse_trace_zero(v, 1e-8)?;
    let n = v.nrows();
    let (ch, sh, th) = ((2.0 * r).cosh(), (2.0 * r).sinh(), (2.0 * r).tanh());
    let z_psi = DMatrix::from_fn(n, n, |i, j| {
        Complex64::new(th * v[(i, j)], if i == j { 1.0 / ch } else { 0.0 })
    });
    let psi = GraphState::new(z_psi.clone(), DVector::zeros(2 * n))?;
    let phi = phi_transform(&psi)?;
    let expected = DMatrix::from_fn(n, n, |i, j| {
        Complex64::new(0.0, sh * v[(i, j)] + if i == j { ch } else { 0.0 })
    });
    let max_deviation = max_abs_c(&(phi.z() - &expected));
    let mut edge_dev: f64 = 0.0;
    let mut loop_dev: f64 = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j && v[(i, j)].abs() > 1e-12 {
                let f = phi.z()[(i, j)] / z_psi[(i, j)];
                edge_dev = edge_dev.max((f - Complex64::new(0.0, ch)).norm());
            }
        }
        if v[(i, i)].abs() <= 1e-12 {
            let f = phi.z()[(i, i)] / z_psi[(i, i)];
            loop_dev = loop_dev.max((f - Complex64::new(ch * ch, 0.0)).norm() / (ch * ch));
        }
    }
    let pass = max_deviation <= 1e-9 && edge_dev <= 1e-9 * ch && loop_dev <= 1e-9;
    Ok(ReweightingReport {
        r,
        n_modes: n,
        max_deviation,
        edge_factor_deviation: edge_dev,
        loop_factor_deviation: loop_dev,
        pass,
    })
}

/// Rows `(I - V) p̂` followed by rows `(I + V) q̂`.
pub fn quadrature_nullifiers(v: &DMatrix<f64>) -> NullifierSet {
    let n = v.nrows();
    let id = DMatrix::<f64>::identity(n, n);
    let mut coeff_p = DMatrix::zeros(2 * n, n);
    let mut coeff_q = DMatrix::zeros(2 * n, n);
    let minus = (&id - v).map(|x| Complex64::new(x, 0.0));
    let plus = (&id + v).map(|x| Complex64::new(x, 0.0));
    coeff_p.view_mut((0, 0), (n, n)).copy_from(&minus);
    coeff_q.view_mut((n, 0), (n, n)).copy_from(&plus);
    NullifierSet { coeff_p, coeff_q }
}

/// `|cᵀ Σ c|` for every row.
pub fn nullifier_variances(state: &GraphState, nulls: &NullifierSet) -> Result<Vec<f64>> {
    if nulls.n_modes() != state.n_modes() {
        return Err(Error::DimensionMismatch { expected: state.n_modes(), found: nulls.n_modes() });
    }
    let sigma = state.covariance()?.map(|x| Complex64::new(x, 0.0));
    Ok(variances_from_covariance(&sigma, nulls))
}

fn variances_from_covariance(sigma: &DMatrix<Complex64>, nulls: &NullifierSet) -> Vec<f64> {
    (0..nulls.n_rows())
        .map(|j| {
            let c = nulls.row_vector(j);
            (c.transpose() * sigma * &c)[(0, 0)].norm()
        })
        .collect()
}

/// Variance of a row in the vacuum: `½ Σ |c_k|²`.
pub fn vacuum_variance(nulls: &NullifierSet, j: usize) -> f64 {
    0.5 * nulls.row_vector(j).iter().map(|c| c.norm_sqr()).sum::<f64>()
}

/// One nullifier row in a witness report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RowReport {
    pub row: usize,
    pub setting: Setting,
    pub variance: f64,
    pub vacuum_variance: f64,
    pub threshold: f64,
    pub pass: bool,
}

/// Variance witness: every non-empty row must lie below `factor ×` its vacuum variance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WitnessReport {
    pub factor: f64,
    pub shots: Option<usize>,
    pub rows: Vec<RowReport>,
    pub verdict: bool,
}

impl WitnessReport {
    pub fn from_variances(nulls: &NullifierSet, variances: &[f64], factor: f64, shots: Option<usize>) -> Self {
        let rows: Vec<RowReport> = variances
            .iter()
            .enumerate()
            .filter(|(j, _)| nulls.setting(*j) != Setting::Empty)
            .map(|(j, &variance)| {
                let vac = vacuum_variance(nulls, j);
                let threshold = factor * vac;
                RowReport {
                    row: j,
                    setting: nulls.setting(j),
                    variance,
                    vacuum_variance: vac,
                    threshold,
                    pass: variance >= 0.0 && variance < threshold,
                }
            })
            .collect();
        let verdict = !rows.is_empty() && rows.iter().all(|r| r.pass);
        Self { factor, shots, rows, verdict }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

impl fmt::Display for WitnessReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:>5} {:>4} {:>14} {:>14} {:>6}", "row", "quad", "variance", "threshold", "pass")?;
        for r in &self.rows {
            writeln!(
                f,
                "{:>5} {:>4} {:>14.6e} {:>14.6e} {:>6}",
                r.row, r.setting, r.variance, r.threshold, r.pass
            )?;
        }
        let shots = self.shots.map(|s| format!(" from {s} shots")).unwrap_or_default();
        write!(f, "verdict{}: {}", shots, if self.verdict { "entangled" } else { "not certified" })
    }
}

/// Witness evaluated from the exact covariance.
pub fn witness_from_state(state: &GraphState, nulls: &NullifierSet, factor: f64) -> Result<WitnessReport> {
    let v = nullifier_variances(state, nulls)?;
    Ok(WitnessReport::from_variances(nulls, &v, factor, None))
}

/// Homodyne samples of one quadrature on every mode; one row per shot.
#[derive(Clone, Debug, PartialEq)]
pub struct Samples {
    pub n_modes: usize,
    pub rows: Vec<Vec<f64>>,
}

impl Samples {
    pub fn shots(&self) -> usize {
        self.rows.len()
    }

    /// CSV with header `mode_0,...,mode_{n-1}`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record((0..self.n_modes).map(|k| format!("mode_{k}")))?;
        for row in &self.rows {
            wr.write_record(row.iter().map(|x| format!("{x:e}")))?;
        }
        wr.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rd = csv::ReaderBuilder::new().has_headers(true).from_reader(r);
        let header = rd.headers()?.clone();
        if header.is_empty() || (header.len() == 1 && header[0].is_empty()) {
            return Err(Error::MalformedSamples("missing header".into()));
        }
        for (k, h) in header.iter().enumerate() {
            if h.trim() != format!("mode_{k}") {
                return Err(Error::MalformedSamples(format!("column {k} is '{h}', expected 'mode_{k}'")));
            }
        }
        let n = header.len();
        let mut rows = Vec::new();
        for (i, rec) in rd.records().enumerate() {
            let rec = rec?;
            if rec.len() != n {
                return Err(Error::MalformedSamples(format!("row {i} has {} fields, expected {n}", rec.len())));
            }
            let row = rec
                .iter()
                .map(|x| {
                    x.trim()
                        .parse::<f64>()
                        .ok()
                        .filter(|v| v.is_finite())
                        .ok_or_else(|| Error::MalformedSamples(format!("row {i}: '{x}' is not a finite number")))
                })
                .collect::<Result<Vec<f64>>>()?;
            rows.push(row);
        }
        Ok(Samples { n_modes: n, rows })
    }

    /// Unbiased sample covariance (divides by `shots - 1`).
    pub fn covariance(&self) -> DMatrix<f64> {
        let n = self.n_modes;
        let s = self.shots() as f64;
        let mut mean = DVector::zeros(n);
        for row in &self.rows {
            mean += DVector::from_column_slice(row);
        }
        mean /= s;
        let mut cov = DMatrix::zeros(n, n);
        for row in &self.rows {
            let d = DVector::from_column_slice(row) - &mean;
            cov += &d * d.transpose();
        }
        cov / (s - 1.0)
    }
}

/// Draws `shots` homodyne records of all modes in quadrature `setting` (`Q` or `P`).
pub fn sample_homodyne_dataset(state: &GraphState, setting: Setting, shots: usize, seed: u64) -> Result<Samples> {
    if shots == 0 {
        return Err(Error::InvalidParameter("shots must be at least 1".into()));
    }
    let n = state.n_modes();
    let offset = match setting {
        Setting::Q => 0,
        Setting::P => n,
        other => return Err(Error::InvalidParameter(format!("sampling setting must be q or p, got {other}"))),
    };
    let sigma = state.covariance()?;
    let block = sigma.view((offset, offset), (n, n)).into_owned();
    let mean = state.mean().rows(offset, n).into_owned();
    let chol = match block.clone().cholesky() {
        Some(c) => c,
        None => (block + DMatrix::identity(n, n) * SAMPLING_JITTER)
            .cholesky()
            .ok_or(Error::NotNormalizable)?,
    };
    let l = chol.l();
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let rows = (0..shots)
        .map(|_| {
            let z = DVector::from_fn(n, |_, _| StandardNormal.sample(&mut rng));
            (&mean + &l * z).iter().cloned().collect()
        })
        .collect();
    Ok(Samples { n_modes: n, rows })
}

/// Empirical covariances of both settings plus the witness built from them.
#[derive(Clone, Debug)]
pub struct Ingested {
    pub cov_q: DMatrix<f64>,
    pub cov_p: DMatrix<f64>,
    pub report: WitnessReport,
}

/// Evaluates quadrature-pure nullifiers on two sample sets (q setting and p setting).
pub fn ingest(q: &Samples, p: &Samples, nulls: &NullifierSet, factor: f64) -> Result<Ingested> {
    if !nulls.is_quadrature_pure() {
        return Err(Error::InvalidParameter("sample data can only evaluate quadrature-pure nullifiers".into()));
    }
    for s in [q, p] {
        if s.shots() < MIN_SHOTS {
            return Err(Error::InsufficientShots { found: s.shots(), required: MIN_SHOTS });
        }
        if s.n_modes != nulls.n_modes() {
            return Err(Error::DimensionMismatch { expected: nulls.n_modes(), found: s.n_modes });
        }
    }
    let cov_q = q.covariance();
    let cov_p = p.covariance();
    let variances: Vec<f64> = (0..nulls.n_rows())
        .map(|j| {
            let (cov, coeff) = match nulls.setting(j) {
                Setting::Q => (&cov_q, &nulls.coeff_q),
                _ => (&cov_p, &nulls.coeff_p),
            };
            let c = coeff.row(j).transpose().map(|x| x.re);
            (c.transpose() * cov * &c)[(0, 0)]
        })
        .collect();
    let report = WitnessReport::from_variances(nulls, &variances, factor, Some(q.shots().min(p.shots())));
    Ok(Ingested { cov_q, cov_p, report })
}

/// Reads the two CSV files and evaluates the witness.
pub fn ingest_samples(q_path: &Path, p_path: &Path, nulls: &NullifierSet, factor: f64) -> Result<Ingested> {
    let q = Samples::read_csv(std::fs::File::open(q_path)?)?;
    let p = Samples::read_csv(std::fs::File::open(p_path)?)?;
    ingest(&q, &p, nulls, factor)
}
