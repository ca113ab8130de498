//! Experiment runner behind the `cvbsl` binary.
//!
//! Four subcommands: `build-bsl`, `verify-nullifiers`, `run-program` and
//! `verify-identities`. Results go to `--out` (or stdout) in the chosen
//! `--format`; human summaries go to stderr. Exit codes: 0 success,
//! 1 verification failure, 2 usage or I/O error.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::json;

use crate::error::{Error, Result};
use crate::gaussian_graph::{GraphState, GraphStateJson};
use crate::homodyne_mbqc::{run_program, Program};
use crate::nullifier_witness::{
    ingest, ingest_samples, phi_transform, quadrature_nullifiers, sample_homodyne_dataset, witness_from_state,
    Setting, WitnessReport, DEFAULT_WITNESS_FACTOR,
};
use crate::temporal_bsl::{build_bsl, edges, ideal_graph, to_dot, Boundary, BslExport, LatticeConfig, UniformitySummary};
use crate::wavefunction_oracle::{run_batch, parse_batch, Case, CubicOutcomes, Grid, StateSpec, VerificationReport};

/// Exit code of a successful run.
pub const EXIT_OK: i32 = 0;
/// Exit code when a verification does not pass.
pub const EXIT_FAIL: i32 = 1;
/// Exit code for usage, parse and I/O errors.
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "cvbsl", version, about = "Bilayer square lattice MBQC toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Synthesize the lattice with the temporal-mode circuit and export its graph.
    BuildBsl(BuildArgs),
    /// Evaluate the quadrature-nullifier entanglement witness, analytically or from samples.
    VerifyNullifiers(NullifierArgs),
    /// Execute a homodyne measurement program.
    RunProgram(ProgramArgs),
    /// Run the wavefunction-oracle identity batteries.
    VerifyIdentities(IdentityArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Csv,
    Dot,
    Table,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum BoundaryArg {
    Periodic,
    Open,
}

#[derive(Debug, Args)]
pub struct Output {
    /// Output file (stdout when absent).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Output format.
    #[arg(long, value_enum, default_value_t = Format::Json)]
    pub format: Format,
}

#[derive(Debug, Args)]
pub struct BuildArgs {
    /// Lattice size `N,M` (rows, columns), N ≥ 2.
    #[arg(long, value_parser = parse_lattice, default_value = "3,3")]
    pub lattice: (usize, usize),
    /// Squeezing parameter r of every source.
    #[arg(long, default_value_t = 1.0)]
    pub squeezing: f64,
    #[arg(long, value_enum, default_value_t = BoundaryArg::Periodic)]
    pub boundary: BoundaryArg,
    /// Apply a π/4 phase delay before every detector.
    #[arg(long)]
    pub phase_delays: bool,
    /// Also write the Graphviz rendering here.
    #[arg(long)]
    pub dot: Option<PathBuf>,
    #[command(flatten)]
    pub output: Output,
}

#[derive(Debug, Args)]
pub struct NullifierArgs {
    /// Lattice size `N,M` whose ideal graph defines the nullifiers.
    #[arg(long, value_parser = parse_lattice, default_value = "2,2")]
    pub lattice: (usize, usize),
    /// Squeezing values, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "1")]
    pub squeezing: Vec<f64>,
    /// Graph-state JSON to test instead of the synthesized lattice.
    #[arg(long)]
    pub graph: Option<PathBuf>,
    /// Also estimate the witness from this many sampled shots per setting.
    #[arg(long)]
    pub shots: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Variance threshold as a fraction of the vacuum variance.
    #[arg(long, default_value_t = DEFAULT_WITNESS_FACTOR)]
    pub factor: f64,
    /// q-setting samples (CSV, one column per mode).
    #[arg(long, requires = "p_samples")]
    pub q_samples: Option<PathBuf>,
    /// p-setting samples (CSV, one column per mode).
    #[arg(long, requires = "q_samples")]
    pub p_samples: Option<PathBuf>,
    /// Write the sampled datasets as `<DIR>/q_r<r>.csv` and `<DIR>/p_r<r>.csv`.
    #[arg(long, requires = "shots")]
    pub save_samples: Option<PathBuf>,
    #[command(flatten)]
    pub output: Output,
}

#[derive(Debug, Args)]
pub struct ProgramArgs {
    /// Program JSON.
    pub program: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Override the lattice squeezing of the program.
    #[arg(long)]
    pub squeezing: Option<f64>,
    #[command(flatten)]
    pub output: Output,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Suite {
    E,
    M,
    L,
    Commutation,
    All,
}

#[derive(Debug, Args)]
pub struct IdentityArgs {
    #[arg(value_enum, default_value_t = Suite::All)]
    pub suite: Suite,
    /// Batch JSON with explicit cases (replaces the built-in battery).
    #[arg(long)]
    pub cases: Option<PathBuf>,
    /// Grid `L,P` used for every case.
    #[arg(long, value_parser = parse_grid)]
    pub grid: Option<Grid>,
    /// Squeezing of the finite-squeezing checks.
    #[arg(long, default_value_t = 4.0)]
    pub squeezing: f64,
    /// Cubic strength for the L-gate and commutation cases.
    #[arg(long)]
    pub chi: Option<f64>,
    /// Shear parameter for the L-gate and commutation cases.
    #[arg(long)]
    pub sigma: Option<f64>,
    #[command(flatten)]
    pub output: Output,
}

fn parse_lattice(s: &str) -> std::result::Result<(usize, usize), String> {
    let (a, b) = s.split_once(',').ok_or_else(|| format!("expected N,M, got '{s}'"))?;
    let n = a.trim().parse().map_err(|e| format!("N: {e}"))?;
    let m = b.trim().parse().map_err(|e| format!("M: {e}"))?;
    Ok((n, m))
}

fn parse_grid(s: &str) -> std::result::Result<Grid, String> {
    let (a, b) = s.split_once(',').ok_or_else(|| format!("expected L,P, got '{s}'"))?;
    let l: f64 = a.trim().parse().map_err(|e| format!("L: {e}"))?;
    let p: usize = b.trim().parse().map_err(|e| format!("P: {e}"))?;
    Grid::new(l, p).map_err(|e| e.to_string())
}

/// Parses `args` (program name first), runs the command and returns the exit code.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if e.use_stderr() { stderr.write_all(text.as_bytes()) } else { stdout.write_all(text.as_bytes()) };
            return code;
        }
    };
    match execute(&cli.command, stdout, stderr) {
        Ok(true) => EXIT_OK,
        Ok(false) => EXIT_FAIL,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            match e {
                Error::Verification(_) => EXIT_FAIL,
                _ => EXIT_USAGE,
            }
        }
    }
}

/// Runs one command; `Ok(false)` means a verification did not pass.
pub fn execute(cmd: &Command, stdout: &mut dyn Write, stderr: &mut dyn Write) -> Result<bool> {
    match cmd {
        Command::BuildBsl(a) => build_cmd(a, stdout, stderr),
        Command::VerifyNullifiers(a) => nullifier_cmd(a, stdout, stderr),
        Command::RunProgram(a) => program_cmd(a, stdout, stderr),
        Command::VerifyIdentities(a) => identity_cmd(a, stdout, stderr),
    }
}

fn emit(output: &Output, text: &str, stdout: &mut dyn Write) -> Result<()> {
    match &output.out {
        Some(p) => std::fs::write(p, text)?,
        None => stdout.write_all(text.as_bytes())?,
    }
    Ok(())
}

fn unsupported(cmd: &str, f: Format) -> Error {
    Error::InvalidParameter(format!("{cmd} does not write {f:?} output"))
}

fn pretty<T: Serialize>(v: &T) -> Result<String> {
    Ok(serde_json::to_string_pretty(v)? + "\n")
}

fn csv_text(header: &[&str], rows: Vec<Vec<String>>) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(&r)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    String::from_utf8(bytes).map_err(|e| Error::InvalidParameter(e.to_string()))
}

fn lattice_config(lattice: (usize, usize), r: f64) -> Result<LatticeConfig> {
    let cfg = LatticeConfig::new(lattice.0, lattice.1, r);
    cfg.validate()?;
    Ok(cfg)
}

fn build_cmd(a: &BuildArgs, stdout: &mut dyn Write, stderr: &mut dyn Write) -> Result<bool> {
    let boundary = match a.boundary {
        BoundaryArg::Periodic => Boundary::Periodic,
        BoundaryArg::Open => Boundary::Open,
    };
    let mut cfg = lattice_config(a.lattice, a.squeezing)?.with_boundary(boundary);
    cfg.phase_delays = a.phase_delays;
    let (state, lattice) = build_bsl(&cfg)?;
    let summary = UniformitySummary::of(&state);
    let dot = to_dot(&state, &lattice);
    let text = match a.output.format {
        Format::Json => {
            let v = ideal_graph(&cfg).ok();
            pretty(&BslExport::new(cfg, &state, v.as_ref(), lattice))?
        }
        Format::Dot => dot.clone(),
        Format::Csv => {
            let z = state.z();
            let loops = (0..state.n_modes()).map(|k| (k, k, z[(k, k)]));
            let rows = loops
                .chain(edges(&state))
                .map(|(j, k, v)| vec![j.to_string(), k.to_string(), v.re.to_string(), v.im.to_string()])
                .collect();
            csv_text(&["j", "k", "re", "im"], rows)?
        }
        Format::Table => format!("{summary}\n"),
    };
    emit(&a.output, &text, stdout)?;
    if let Some(p) = &a.dot {
        std::fs::write(p, &dot)?;
    }
    writeln!(stderr, "{summary}")?;
    Ok(true)
}

#[derive(Serialize)]
struct WitnessEntry {
    r: f64,
    analytic: WitnessReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    sampled: Option<WitnessReport>,
}

impl WitnessEntry {
    fn pass(&self) -> bool {
        self.analytic.verdict && self.sampled.as_ref().is_none_or(|s| s.verdict)
    }
}

fn nullifier_cmd(a: &NullifierArgs, stdout: &mut dyn Write, stderr: &mut dyn Write) -> Result<bool> {
    if a.output.format == Format::Dot {
        return Err(unsupported("verify-nullifiers", Format::Dot));
    }
    if a.squeezing.is_empty() {
        return Err(Error::InvalidParameter("at least one squeezing value is required".into()));
    }
    let base = lattice_config(a.lattice, a.squeezing[0])?;
    let nulls = quadrature_nullifiers(&ideal_graph(&base)?);
    let given = match &a.graph {
        Some(p) => {
            let text = read_text(p)?;
            let js: GraphStateJson = serde_json::from_str(&text)?;
            Some(GraphState::try_from(js)?)
        }
        None => None,
    };
    let mut entries = Vec::new();
    for &r in &a.squeezing {
        let state = match &given {
            Some(s) => s.clone(),
            None => phi_transform(&build_bsl(&base.with_r(r))?.0)?,
        };
        if state.n_modes() != nulls.n_modes() {
            return Err(Error::DimensionMismatch { expected: nulls.n_modes(), found: state.n_modes() });
        }
        let analytic = witness_from_state(&state, &nulls, a.factor)?;
        let sampled = match (a.shots, &a.q_samples, &a.p_samples) {
            (_, Some(q), Some(p)) => Some(ingest_samples(q, p, &nulls, a.factor)?.report),
            (Some(shots), _, _) => {
                let q = sample_homodyne_dataset(&state, Setting::Q, shots, a.seed)?;
                let p = sample_homodyne_dataset(&state, Setting::P, shots, a.seed.wrapping_add(1))?;
                if let Some(dir) = &a.save_samples {
                    std::fs::create_dir_all(dir)?;
                    q.write_csv(std::fs::File::create(dir.join(format!("q_r{r}.csv")))?)?;
                    p.write_csv(std::fs::File::create(dir.join(format!("p_r{r}.csv")))?)?;
                }
                Some(ingest(&q, &p, &nulls, a.factor)?.report)
            }
            _ => None,
        };
        entries.push(WitnessEntry { r, analytic, sampled });
    }
    let pass = entries.iter().all(WitnessEntry::pass);
    let text = match a.output.format {
        Format::Json => pretty(&json!({
            "config": {
                "lattice": [a.lattice.0, a.lattice.1],
                "squeezing": a.squeezing,
                "graph": a.graph,
                "shots": a.shots,
                "seed": a.seed,
                "factor": a.factor,
            },
            "results": entries,
            "pass": pass,
        }))?,
        Format::Csv => {
            let mut rows = Vec::new();
            for e in &entries {
                for (source, rep) in [("analytic", Some(&e.analytic)), ("sampled", e.sampled.as_ref())] {
                    for row in rep.map(|r| r.rows.as_slice()).unwrap_or_default() {
                        rows.push(vec![
                            e.r.to_string(),
                            source.to_string(),
                            row.row.to_string(),
                            row.setting.to_string(),
                            row.variance.to_string(),
                            row.threshold.to_string(),
                            row.pass.to_string(),
                        ]);
                    }
                }
            }
            csv_text(&["r", "source", "row", "setting", "variance", "threshold", "pass"], rows)?
        }
        _ => {
            let mut s = String::new();
            for e in &entries {
                let _ = writeln!(s, "r = {}\n{}", e.r, e.analytic);
                if let Some(sm) = &e.sampled {
                    let _ = writeln!(s, "{sm}");
                }
            }
            s
        }
    };
    emit(&a.output, &text, stdout)?;
    for e in &entries {
        writeln!(stderr, "r = {}: {}", e.r, if e.pass() { "entangled" } else { "not certified" })?;
    }
    Ok(pass)
}

fn program_cmd(a: &ProgramArgs, stdout: &mut dyn Write, stderr: &mut dyn Write) -> Result<bool> {
    if a.output.format == Format::Dot {
        return Err(unsupported("run-program", Format::Dot));
    }
    let mut program = Program::from_json(&read_text(&a.program)?)?;
    if let Some(r) = a.squeezing {
        program.lattice.r = r;
    }
    let out = run_program(&program, a.seed)?;
    let text = match a.output.format {
        Format::Csv => csv_text(
            &["index", "mode", "theta", "outcome"],
            out.record
                .events
                .iter()
                .enumerate()
                .map(|(i, e)| vec![i.to_string(), e.mode.to_string(), e.theta.to_string(), e.outcome.to_string()])
                .collect(),
        )?,
        Format::Table => {
            let mut s = String::new();
            for e in &out.record.events {
                let _ = writeln!(s, "mode {:>5}  θ {:>10.6}  m {:>12.6}", e.mode, e.theta, e.outcome);
            }
            let _ = writeln!(s, "remaining modes {:?}", out.record.modes);
            s
        }
        _ => pretty(&json!({
            "config": { "program": a.program, "seed": a.seed, "squeezing": program.lattice.r },
            "output": out,
        }))?,
    };
    emit(&a.output, &text, stdout)?;
    writeln!(stderr, "{} measurements, {} modes remain", out.record.events.len(), out.record.modes.len())?;
    Ok(true)
}

/// Built-in battery for one suite at squeezing `r`.
pub fn default_cases(suite: Suite, r: f64, chi: Option<f64>, sigma: Option<f64>) -> Vec<Case> {
    use std::f64::consts::PI;
    let gauss = |q: f64, p: f64| StateSpec::Gaussian { r: 0.0, theta: 0.0, q, p };
    let e_grid = Grid { l: 24.0, p: 1024 };
    let wide_grid = Grid { l: 36.0, p: 2048 };
    let m_grid = Grid { l: 16.0, p: 1024 };
    let gate_grid = Grid { l: 40.0, p: 2048 };
    let mut cases = Vec::new();
    if matches!(suite, Suite::E | Suite::All) {
        let phis = [
            (StateSpec::Gaussian { r: 1.0, theta: 0.0, q: 0.0, p: 0.0 }, gauss(0.4, -0.3), 0.4, e_grid),
            (StateSpec::Cubic { chi: 0.1, r_env: 2.0 }, gauss(0.0, 0.0), -0.3, wide_grid),
            (StateSpec::Cubic { chi: 0.2, r_env: 1.0 }, gauss(-0.5, 0.2), 0.7, e_grid),
            (StateSpec::PolyGaussian { coeffs: vec![0.3, -1.0, 0.5], r: 0.2 }, gauss(0.3, 0.0), -0.6, e_grid),
            (StateSpec::PolyGaussian { coeffs: vec![1.0, 0.0, 0.0, 0.4], r: -0.3 }, gauss(0.0, 0.8), 0.1, e_grid),
        ];
        cases.extend(phis.into_iter().map(|(phi, psi, m, grid)| Case::EIdentity { phi, psi, m, grid }));
    }
    if matches!(suite, Suite::M | Suite::All) {
        cases.push(Case::MCircuit { theta: PI / 6.0, m: 0.5, r, psi: gauss(0.7, -0.2), grid: m_grid });
        cases.push(Case::MCircuit { theta: 0.0, m: 0.0, r, psi: gauss(0.0, 0.0), grid: m_grid });
        cases.push(Case::MCircuit { theta: -0.9, m: -0.3, r, psi: StateSpec::Cubic { chi: 0.1, r_env: 0.0 }, grid: gate_grid });
    }
    let chi_or = |c: f64| chi.unwrap_or(c);
    let sigma_or = |s: f64| sigma.unwrap_or(s);
    if matches!(suite, Suite::L | Suite::All) {
        cases.push(Case::LGate {
            chi: chi_or(0.2),
            sigma: sigma_or(0.3),
            outcomes: CubicOutcomes { m_a: 0.1, m_e: -0.2, m_f: 0.4 },
            r,
            r_env: None,
            psi: gauss(0.0, 0.0),
            grid: gate_grid,
        });
        cases.push(Case::LGate {
            chi: chi_or(0.0),
            sigma: sigma_or(0.25),
            outcomes: CubicOutcomes { m_a: 0.3, m_e: -0.5, m_f: 0.2 },
            r,
            r_env: None,
            psi: gauss(0.4, -0.3),
            grid: gate_grid,
        });
        cases.push(Case::LGate {
            chi: chi_or(-0.3),
            sigma: sigma_or(-0.4),
            outcomes: CubicOutcomes::default(),
            r,
            r_env: None,
            psi: gauss(0.0, 0.0),
            grid: gate_grid,
        });
    }
    if matches!(suite, Suite::Commutation | Suite::All) {
        cases.push(Case::Commutation {
            s: 0.3,
            t: -0.2,
            chi: chi_or(0.15),
            sigma: sigma_or(0.4),
            outcomes: CubicOutcomes { m_a: 0.2, m_e: 0.1, m_f: -0.4 },
            r,
            r_env: None,
            psi: gauss(0.0, 0.0),
            grid: gate_grid,
        });
        cases.push(Case::Commutation {
            s: -0.5,
            t: 0.6,
            chi: chi_or(0.0),
            sigma: sigma_or(0.2),
            outcomes: CubicOutcomes { m_a: -0.3, m_e: 0.4, m_f: 0.1 },
            r,
            r_env: None,
            psi: gauss(0.2, 0.1),
            grid: gate_grid,
        });
    }
    cases
}

#[derive(Serialize)]
#[serde(untagged)]
enum CaseOutcome {
    Report(VerificationReport),
    Error { identity: String, error: String, pass: bool },
}

fn case_name(c: &Case) -> &'static str {
    match c {
        Case::EIdentity { .. } => "e_identity",
        Case::MCircuit { .. } => "m_circuit",
        Case::LGate { .. } => "l_gate",
        Case::Commutation { .. } => "commutation",
    }
}

fn identity_cmd(a: &IdentityArgs, stdout: &mut dyn Write, stderr: &mut dyn Write) -> Result<bool> {
    if a.output.format == Format::Dot {
        return Err(unsupported("verify-identities", Format::Dot));
    }
    let mut cases = match &a.cases {
        Some(p) => parse_batch(&read_text(p)?)?,
        None => default_cases(a.suite, a.squeezing, a.chi, a.sigma),
    };
    if let Some(g) = a.grid {
        cases = cases.into_iter().map(|c| c.with_grid(g)).collect();
    }
    let results: Vec<CaseOutcome> = run_batch(&cases)
        .into_iter()
        .zip(&cases)
        .map(|(r, c)| match r {
            Ok(rep) => CaseOutcome::Report(rep),
            Err(e) => CaseOutcome::Error { identity: case_name(c).into(), error: e.to_string(), pass: false },
        })
        .collect();
    let pass = results.iter().all(|r| matches!(r, CaseOutcome::Report(rep) if rep.pass));
    let text = match a.output.format {
        Format::Json => pretty(&json!({
            "config": {
                "suite": format!("{:?}", a.suite).to_lowercase(),
                "cases": a.cases,
                "grid": a.grid,
                "squeezing": a.squeezing,
                "chi": a.chi,
                "sigma": a.sigma,
            },
            "reports": results,
            "pass": pass,
        }))?,
        Format::Csv => csv_text(
            &["identity", "fidelity", "threshold", "pass", "error"],
            results
                .iter()
                .map(|r| match r {
                    CaseOutcome::Report(rep) => vec![
                        rep.identity.clone(),
                        rep.fidelity.to_string(),
                        rep.threshold.to_string(),
                        rep.pass.to_string(),
                        String::new(),
                    ],
                    CaseOutcome::Error { identity, error, .. } => {
                        vec![identity.clone(), String::new(), String::new(), "false".into(), error.clone()]
                    }
                })
                .collect(),
        )?,
        _ => identity_table(&results),
    };
    emit(&a.output, &text, stdout)?;
    write!(stderr, "{}", identity_table(&results))?;
    Ok(pass)
}

fn identity_table(results: &[CaseOutcome]) -> String {
    let mut s = String::new();
    for r in results {
        match r {
            CaseOutcome::Report(rep) => {
                let _ = writeln!(
                    s,
                    "{:<12} 1-F = {:>10.3e}  (threshold {:.1e})  {}",
                    rep.identity,
                    rep.infidelity(),
                    1.0 - rep.threshold,
                    if rep.pass { "PASS" } else { "FAIL" }
                );
            }
            CaseOutcome::Error { identity, error, .. } => {
                let _ = writeln!(s, "{identity:<12} error: {error}  FAIL");
            }
        }
    }
    s
}

/// Entry point used by the binary.
pub fn main_exit() -> i32 {
    let mut out = std::io::stdout().lock();
    let mut err = std::io::stderr().lock();
    run(std::env::args_os(), &mut out, &mut err)
}

/// Reads a file into a string with the path in the error message.
pub fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path)
        .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}
