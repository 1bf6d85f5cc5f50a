//! Command implementations behind the `smolpod` binary.
//!
//! Each `cmd_*` function is a pure function of its configuration and input
//! files: it runs one stage and writes its artifacts into an output directory.
//!
//! Artifacts:
//!
//! | file | content |
//! |------|---------|
//! | `trajectory.podmat` | one row per record time: `t, n_1 .. n_N` |
//! | `diagnostics.csv` | moments, outgoing mass flux, mass-balance residual |
//! | `basis.podmat` | `V`, `N × R` |
//! | `greedy_trace.csv` | one row per processed window |
//! | `terminal_state.podmat` | `1 × (1 + N)`: `T_basis, n(T_basis)` |
//! | `reduced_source.podmat` | `J̃`, `R × 1` |
//! | `reduced_tensor.podmat` | `S̃` as `R × R²`, entry `[α, β R + γ]` |
//! | `reduced_trajectory.podmat` | rows `t, x_1 .. x_R` |
//! | `reconstructed.podmat` | rows `t, (V x)_1 .. (V x)_N` |
//! | `errors.csv` | relative reconstruction error per time |
//! | `*.json` | metadata and summaries |

use std::collections::{HashMap, HashSet};
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::greedy::{build_basis_with, GreedyResult};
use crate::integrator::{integrate, integrate_observed, IntegratorConfig, Rhs, Trajectory};
use crate::kernel::{build_kernel, dense_kernel, KernelSpec, LowRankKernel};
use crate::pod::{lift, project, random_orthonormal_basis, BasisMeta, ReductionBasis};
use crate::podmat::PodMat;
use crate::reduced::{basis_fingerprint, solve_reduced, ReducedMode, ReducedSystem, ReducedTensor};
use crate::rhs::{moment, rhs_direct, FastRhs, SourceVector, StateVector};

pub const RESOLVED_CONFIG: &str = "config.resolved";
pub const TRAJECTORY: &str = "trajectory.podmat";
pub const DIAGNOSTICS: &str = "diagnostics.csv";
pub const BASIS: &str = "basis.podmat";
pub const BASIS_META: &str = "basis_meta.json";
pub const GREEDY_TRACE: &str = "greedy_trace.csv";
pub const TERMINAL_STATE: &str = "terminal_state.podmat";
pub const REDUCED_SOURCE: &str = "reduced_source.podmat";
pub const REDUCED_TENSOR: &str = "reduced_tensor.podmat";
pub const REDUCED_META: &str = "reduced_meta.json";
pub const REDUCED_TRAJECTORY: &str = "reduced_trajectory.podmat";
pub const RECONSTRUCTED: &str = "reconstructed.podmat";
pub const ERRORS: &str = "errors.csv";
pub const SUMMARY: &str = "summary.json";

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)
        .map_err(|e| Error::io(path, std::io::Error::other(e)))?;
    writeln!(w).and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))
}

fn write_resolved_config(cfg: &RunConfig, dir: &Path) -> Result<()> {
    let path = dir.join(RESOLVED_CONFIG);
    fs::write(&path, cfg.to_resolved_text()).map_err(|e| Error::io(&path, e))
}

pub fn trajectory_to_podmat(traj: &Trajectory) -> PodMat {
    let cols = 1 + traj.dim();
    let mut data = Vec::with_capacity(traj.len() * cols);
    for (t, s) in traj.times.iter().zip(&traj.states) {
        data.push(*t);
        data.extend_from_slice(s);
    }
    PodMat {
        rows: traj.len(),
        cols,
        data,
    }
}

pub fn trajectory_from_podmat(m: &PodMat, origin: &Path) -> Result<Trajectory> {
    if m.cols == 0 {
        return Err(Error::format(origin, "trajectory needs a time column"));
    }
    let mut traj = Trajectory::default();
    for r in 0..m.rows {
        let row = m.row(r);
        traj.times.push(row[0]);
        traj.states.push(row[1..].to_vec());
    }
    if traj.times.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::format(origin, "trajectory times are not strictly increasing"));
    }
    Ok(traj)
}

pub fn save_trajectory(path: &Path, traj: &Trajectory) -> Result<()> {
    trajectory_to_podmat(traj).save(path)
}

pub fn load_trajectory(path: &Path) -> Result<Trajectory> {
    trajectory_from_podmat(&PodMat::load(path)?, path)
}

/// `t0, t0 + stride, …` up to `t1`; the integrator always adds `t1` itself.
pub fn record_grid(t0: f64, t1: f64, stride: f64) -> Vec<f64> {
    let count = ((t1 - t0) / stride + 1e-9).floor() as u64;
    (0..=count).map(|k| t0 + k as f64 * stride).collect()
}

fn full_system(cfg: &RunConfig) -> Result<(LowRankKernel, SourceVector)> {
    let kernel = build_kernel(cfg.kernel)?;
    let source = cfg.source_vector()?;
    Ok((kernel, source))
}

// ---------------------------------------------------------------------------
// full solve with diagnostics

/// Diagnostics at one record time.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiagnosticRow {
    pub t: f64,
    /// `Σ n_k`
    pub number: f64,
    /// `Σ k n_k`
    pub mass: f64,
    /// `Σ k² n_k`
    pub moment2: f64,
    pub flux_out: f64,
    /// `|dM/dt − (Σ k J_k − Φ)| / (Σ k J_k + Φ)` by central difference over one step.
    pub mass_balance_residual: Option<f64>,
}

#[derive(Debug)]
pub struct FullSolve {
    pub trajectory: Trajectory,
    pub diagnostics: Vec<DiagnosticRow>,
    /// Largest relative defect of `Σ k f_k = Σ k J_k − Φ` over every RHS call.
    pub max_identity_defect: f64,
    /// Largest finite-difference mass-balance residual over all interior steps.
    pub max_fd_residual: f64,
    pub rhs_calls: u64,
    pub wall_seconds: f64,
    /// Set when the integration stopped on a non-finite state.
    pub failure: Option<Error>,
}

/// RHS wrapper checking the mass identity on each call.
struct BalanceCheckedRhs {
    inner: FastRhs,
    max_defect: f64,
    calls: u64,
}

impl Rhs for BalanceCheckedRhs {
    fn eval(&mut self, y: &[f64], dy: &mut [f64]) {
        let b = self.inner.eval_balance_unchecked(y, dy);
        self.max_defect = self.max_defect.max(b.relative_defect());
        self.calls += 1;
    }
}

/// Integrates the full system on `[t0, t1]`, recording states at
/// `record_times` and mass-balance diagnostics along the way.
pub fn solve_full_monitored(
    kernel: &LowRankKernel,
    source: &SourceVector,
    n0: &[f64],
    cfg: &IntegratorConfig,
    record_times: &[f64],
) -> Result<FullSolve> {
    let steps = cfg.steps()?;
    let mut rhs = BalanceCheckedRhs {
        inner: FastRhs::new(kernel.clone(), source.clone())?,
        max_defect: 0.0,
        calls: 0,
    };
    let mut probe = FastRhs::new(kernel.clone(), source.clone())?;
    let source_rate = source.mass_rate();

    let mut record_steps = HashSet::new();
    for &t in record_times {
        if let Some(k) = crate::integrator::grid_index(t - cfg.t0, cfg.dt) {
            record_steps.insert(k.min(steps));
        }
    }
    record_steps.insert(steps);

    let mut trajectory = Trajectory::default();
    let mut diagnostics: Vec<DiagnosticRow> = Vec::new();
    let mut row_of_step: HashMap<u64, usize> = HashMap::new();
    // (mass at k-1, (mass, flux) at k)
    let mut prev_mass: Option<f64> = None;
    let mut current: Option<(f64, f64)> = None;
    let mut max_fd: f64 = 0.0;

    let started = Instant::now();
    let result = integrate_observed(&mut rhs, n0, cfg, record_times, |k, t, y| {
        let mass = moment(y, 1);
        let flux = probe.mass_flux_out(y).unwrap_or(f64::NAN);
        if let (Some(m_prev), Some((_, flux_mid))) = (prev_mass, current) {
            let derivative = (mass - m_prev) / (2.0 * cfg.dt);
            let expected = source_rate - flux_mid;
            let scale = source_rate.abs() + flux_mid.abs();
            let defect = (derivative - expected).abs();
            let residual = if scale > 0.0 { defect / scale } else { defect };
            max_fd = max_fd.max(residual);
            if let Some(&row) = row_of_step.get(&(k - 1)) {
                diagnostics[row].mass_balance_residual = Some(residual);
            }
        }
        prev_mass = current.map(|(m, _)| m);
        current = Some((mass, flux));
        if record_steps.contains(&k) {
            row_of_step.insert(k, diagnostics.len());
            diagnostics.push(DiagnosticRow {
                t,
                number: moment(y, 0),
                mass,
                moment2: moment(y, 2),
                flux_out: flux,
                mass_balance_residual: None,
            });
            trajectory.times.push(t);
            trajectory.states.push(y.to_vec());
        }
    });
    let wall_seconds = started.elapsed().as_secs_f64();
    let failure = match result {
        Ok(_) => None,
        Err(e @ Error::Divergence { .. }) => Some(e),
        Err(e) => return Err(e),
    };
    Ok(FullSolve {
        trajectory,
        diagnostics,
        max_identity_defect: rhs.max_defect,
        max_fd_residual: max_fd,
        rhs_calls: rhs.calls,
        wall_seconds,
        failure,
    })
}

pub fn write_diagnostics_csv(path: &Path, rows: &[DiagnosticRow]) -> Result<()> {
    let mut w = create(path)?;
    let io = |e| Error::io(path, e);
    writeln!(w, "t,number,mass,moment2,flux_out,mass_balance_residual").map_err(io)?;
    for r in rows {
        writeln!(
            w,
            "{},{:e},{:e},{:e},{:e},{}",
            r.t,
            r.number,
            r.mass,
            r.moment2,
            r.flux_out,
            r.mass_balance_residual.map(|x| format!("{x:e}")).unwrap_or_default()
        )
        .map_err(io)?;
    }
    w.flush().map_err(io)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolveFullSummary {
    pub status: String,
    pub error: Option<String>,
    pub kernel: KernelSpec,
    pub n: usize,
    pub t_end: f64,
    pub records: usize,
    pub rhs_calls: u64,
    pub wall_seconds: f64,
    pub max_identity_defect: f64,
    pub max_mass_balance_residual: f64,
}

pub fn cmd_solve_full(cfg: &RunConfig, out: &Path) -> Result<SolveFullSummary> {
    ensure_dir(out)?;
    write_resolved_config(cfg, out)?;
    let (kernel, source) = full_system(cfg)?;
    let n0 = cfg.initial_state()?;
    let icfg = IntegratorConfig::new(cfg.dt, 0.0, cfg.t_end)?;
    let grid = record_grid(0.0, cfg.t_end, cfg.record_stride);
    let solve = solve_full_monitored(&kernel, &source, &n0.n, &icfg, &grid)?;

    save_trajectory(&out.join(TRAJECTORY), &solve.trajectory)?;
    write_diagnostics_csv(&out.join(DIAGNOSTICS), &solve.diagnostics)?;
    let summary = SolveFullSummary {
        status: if solve.failure.is_some() { "diverged" } else { "ok" }.into(),
        error: solve.failure.as_ref().map(|e| e.to_string()),
        kernel: cfg.kernel,
        n: cfg.size(),
        t_end: cfg.t_end,
        records: solve.trajectory.len(),
        rhs_calls: solve.rhs_calls,
        wall_seconds: solve.wall_seconds,
        max_identity_defect: solve.max_identity_defect,
        max_mass_balance_residual: solve.max_fd_residual,
    };
    write_json(&out.join(SUMMARY), &summary)?;
    match solve.failure {
        Some(e) => Err(e),
        None => Ok(summary),
    }
}

// ---------------------------------------------------------------------------
// basis

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BasisMetaFile {
    pub n: usize,
    pub rank: usize,
    pub kernel: KernelSpec,
    pub tau: f64,
    pub snapshots: usize,
    pub eps: f64,
    pub eps_prime: f64,
    pub delta: f64,
    pub dt: f64,
    pub t_basis: f64,
    pub terminated: bool,
    pub windows_processed: usize,
    pub basis_id: String,
    pub meta: BasisMeta,
}

/// Runs the greedy construction for `cfg`, reporting each window to `progress`.
pub fn run_greedy<P: FnMut(&crate::greedy::WindowRecord)>(
    cfg: &RunConfig,
    progress: P,
) -> Result<GreedyResult> {
    let (kernel, source) = full_system(cfg)?;
    let mut rhs = FastRhs::new(kernel, source)?;
    let n0 = cfg.initial_state()?;
    build_basis_with(&mut rhs, &n0, &cfg.greedy, progress)
}

pub fn write_basis_artifacts(cfg: &RunConfig, res: &GreedyResult, out: &Path) -> Result<BasisMetaFile> {
    ensure_dir(out)?;
    write_resolved_config(cfg, out)?;
    PodMat::from_dmatrix(res.basis.matrix()).save(out.join(BASIS))?;
    let trace_path = out.join(GREEDY_TRACE);
    let mut w = create(&trace_path)?;
    res.trace
        .write_csv(&mut w)
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(&trace_path, e))?;
    let mut terminal = vec![res.terminal_state.t];
    terminal.extend_from_slice(&res.terminal_state.n);
    PodMat::new(1, terminal.len(), terminal)?.save(out.join(TERMINAL_STATE))?;
    let meta = BasisMetaFile {
        n: cfg.size(),
        rank: res.basis.rank(),
        kernel: cfg.kernel,
        tau: cfg.greedy.tau,
        snapshots: cfg.greedy.snapshots,
        eps: cfg.greedy.eps,
        eps_prime: cfg.greedy.eps_prime,
        delta: cfg.greedy.delta,
        dt: cfg.dt,
        t_basis: res.t_basis,
        terminated: res.terminated,
        windows_processed: res.trace.windows.len(),
        basis_id: basis_fingerprint(&res.basis),
        meta: res.basis.meta.clone(),
    };
    write_json(&out.join(BASIS_META), &meta)?;
    Ok(meta)
}

pub fn cmd_build_basis(cfg: &RunConfig, out: &Path) -> Result<BasisMetaFile> {
    let res = run_greedy(cfg, |_| {})?;
    write_basis_artifacts(cfg, &res, out)
}

/// Loads `basis.podmat` from `dir` (or a direct file path).
pub fn load_basis(path: &Path) -> Result<ReductionBasis> {
    let file = if path.is_dir() { path.join(BASIS) } else { path.to_path_buf() };
    let m = PodMat::load(&file)?;
    ReductionBasis::from_matrix(m.to_dmatrix(), 1e-10)
}

pub fn load_terminal_state(path: &Path) -> Result<StateVector> {
    let m = PodMat::load(path)?;
    if m.rows != 1 || m.cols < 2 {
        return Err(Error::format(path, "terminal state must be a 1 x (1 + N) row"));
    }
    StateVector::new(m.data[0], m.data[1..].to_vec())
}

// ---------------------------------------------------------------------------
// reduce

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReducedMeta {
    pub n: usize,
    pub r: usize,
    pub kernel: KernelSpec,
    pub basis_id: String,
    pub t_basis: Option<f64>,
    pub eps: Option<f64>,
    pub eps_prime: Option<f64>,
    pub delta: Option<f64>,
    pub tensor_layout: String,
    pub tensor_max_asymmetry: f64,
    pub build_seconds: f64,
}

pub fn save_reduced_system(sys: &ReducedSystem, meta: &ReducedMeta, out: &Path) -> Result<()> {
    ensure_dir(out)?;
    let r = sys.rank();
    PodMat::new(r, 1, sys.source().to_vec())?.save(out.join(REDUCED_SOURCE))?;
    PodMat::new(r, r * r, sys.tensor().as_slice().to_vec())?.save(out.join(REDUCED_TENSOR))?;
    write_json(&out.join(REDUCED_META), meta)
}

pub fn load_reduced_system(dir: &Path) -> Result<(ReducedSystem, ReducedMeta)> {
    let meta: ReducedMeta = read_json(&dir.join(REDUCED_META))?;
    let src_path = dir.join(REDUCED_SOURCE);
    let src = PodMat::load(&src_path)?;
    let ten_path = dir.join(REDUCED_TENSOR);
    let ten = PodMat::load(&ten_path)?;
    let r = meta.r;
    if src.rows != r || src.cols != 1 {
        return Err(Error::format(&src_path, format!("expected {r}x1, found {}x{}", src.rows, src.cols)));
    }
    if ten.rows != r || ten.cols != r * r {
        return Err(Error::format(
            &ten_path,
            format!("expected {r}x{}, found {}x{}", r * r, ten.rows, ten.cols),
        ));
    }
    let sys = ReducedSystem::new(src.data, ReducedTensor::from_vec(r, ten.data)?, meta.basis_id.clone())?;
    Ok((sys, meta))
}

/// Builds `J̃, S̃` for the basis found at `basis_path` (a build-basis output
/// directory or a `basis.podmat` file).
pub fn cmd_reduce(cfg: &RunConfig, basis_path: &Path, out: &Path) -> Result<ReducedMeta> {
    let basis = load_basis(basis_path)?;
    if basis.is_empty() {
        return Err(Error::Refused(
            "basis has R = 0 columns; nothing to reduce onto".into(),
        ));
    }
    if basis.dim() != cfg.size() {
        return Err(Error::validation(format!(
            "basis has N = {} rows but the configured system has N = {}",
            basis.dim(),
            cfg.size()
        )));
    }
    let basis_dir = if basis_path.is_dir() { Some(basis_path.to_path_buf()) } else { basis_path.parent().map(Path::to_path_buf) };
    let basis_meta: Option<BasisMetaFile> = basis_dir
        .as_ref()
        .map(|d| d.join(BASIS_META))
        .filter(|p| p.exists())
        .map(|p| read_json(&p))
        .transpose()?;

    let (kernel, source) = full_system(cfg)?;
    let started = Instant::now();
    let sys = ReducedSystem::build(&kernel, &basis, &source)?;
    let build_seconds = started.elapsed().as_secs_f64();

    let meta = ReducedMeta {
        n: cfg.size(),
        r: sys.rank(),
        kernel: cfg.kernel,
        basis_id: sys.basis_id().to_string(),
        t_basis: basis_meta.as_ref().map(|m| m.t_basis),
        eps: basis_meta.as_ref().map(|m| m.eps),
        eps_prime: basis_meta.as_ref().map(|m| m.eps_prime),
        delta: basis_meta.as_ref().map(|m| m.delta),
        tensor_layout: "R x R^2 row-major; entry [a, b*R + c] = S[a][b][c], a = output index".into(),
        tensor_max_asymmetry: sys.tensor().max_asymmetry(),
        build_seconds,
    };
    save_reduced_system(&sys, &meta, out)?;
    write_resolved_config(cfg, out)?;
    PodMat::from_dmatrix(basis.matrix()).save(out.join(BASIS))?;
    if let Some(d) = basis_dir {
        let terminal = d.join(TERMINAL_STATE);
        if terminal.exists() {
            fs::copy(&terminal, out.join(TERMINAL_STATE)).map_err(|e| Error::io(&terminal, e))?;
        }
    }
    Ok(meta)
}

// ---------------------------------------------------------------------------
// reduced solve

#[derive(Debug, Clone)]
pub struct ReducedSolve {
    pub reduced: Trajectory,
    pub reconstructed: Option<Trajectory>,
    pub wall_seconds: f64,
}

/// Integrates the reduced system over `[t_start, t_end]` from `Vᵀ n_start`.
pub fn run_reduced(
    sys: &ReducedSystem,
    basis: &ReductionBasis,
    n_start: &StateVector,
    t_end: f64,
    dt: f64,
    stride: f64,
    reconstruct: bool,
) -> Result<ReducedSolve> {
    let x0 = project(basis, &n_start.n)?;
    let icfg = IntegratorConfig::new(dt, n_start.t, t_end)?;
    let grid = record_grid(n_start.t, t_end, stride);
    let started = Instant::now();
    let reduced = solve_reduced(sys, &x0, &icfg, &grid)?;
    let wall_seconds = started.elapsed().as_secs_f64();
    let reconstructed = if reconstruct {
        let mut traj = Trajectory::default();
        for (t, x) in reduced.times.iter().zip(&reduced.states) {
            traj.times.push(*t);
            traj.states.push(lift(basis, x)?);
        }
        Some(traj)
    } else {
        None
    };
    Ok(ReducedSolve {
        reduced,
        reconstructed,
        wall_seconds,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReducedSolveSummary {
    pub mode: String,
    pub r: usize,
    pub t_start: f64,
    pub t_end: f64,
    pub records: usize,
    pub wall_seconds: f64,
}

/// Re-solve mode starts at `t = 0` from the configured initial state;
/// continuation starts at `T_basis` from the saved terminal state.
pub fn cmd_solve_reduced(
    cfg: &RunConfig,
    reduced_dir: &Path,
    out: &Path,
    reconstruct: bool,
) -> Result<ReducedSolveSummary> {
    let (sys, _meta) = load_reduced_system(reduced_dir)?;
    let basis = load_basis(reduced_dir)?;
    if basis.rank() != sys.rank() || basis.dim() != cfg.size() {
        return Err(Error::validation(format!(
            "basis is {}x{}, reduced system has R = {} and config N = {}",
            basis.dim(),
            basis.rank(),
            sys.rank(),
            cfg.size()
        )));
    }
    let start = match cfg.reduced_mode {
        ReducedMode::Resolve => cfg.initial_state()?,
        ReducedMode::Continuation => load_terminal_state(&reduced_dir.join(TERMINAL_STATE))?,
    };
    if start.t >= cfg.t_end {
        return Err(Error::validation(format!(
            "reduced solve would start at t = {} which is not before integrator.t_end = {}",
            start.t, cfg.t_end
        )));
    }
    let solve = run_reduced(&sys, &basis, &start, cfg.t_end, cfg.reduced_dt, cfg.record_stride, reconstruct)?;
    ensure_dir(out)?;
    write_resolved_config(cfg, out)?;
    save_trajectory(&out.join(REDUCED_TRAJECTORY), &solve.reduced)?;
    if let Some(recon) = &solve.reconstructed {
        save_trajectory(&out.join(RECONSTRUCTED), recon)?;
    }
    let summary = ReducedSolveSummary {
        mode: cfg.reduced_mode.to_string(),
        r: sys.rank(),
        t_start: start.t,
        t_end: cfg.t_end,
        records: solve.reduced.len(),
        wall_seconds: solve.wall_seconds,
    };
    write_json(&out.join(SUMMARY), &summary)?;
    Ok(summary)
}

// ---------------------------------------------------------------------------
// compare

/// `‖n − ñ‖₂ / ‖n‖₂`; `0/0` is 0 and `x/0` is infinite.
pub fn relative_error(n: &[f64], approx: &[f64]) -> f64 {
    let (mut diff, mut norm) = (0.0, 0.0);
    for (a, b) in n.iter().zip(approx) {
        diff += (a - b) * (a - b);
        norm += a * a;
    }
    if norm == 0.0 {
        if diff == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        (diff / norm).sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegimeStats {
    pub count: usize,
    pub max: f64,
    pub mean: f64,
}

impl RegimeStats {
    fn of(values: impl Iterator<Item = f64>) -> Option<Self> {
        let (mut count, mut max, mut sum) = (0usize, 0.0f64, 0.0);
        for v in values {
            count += 1;
            max = max.max(v);
            sum += v;
        }
        (count > 0).then(|| Self {
            count,
            max,
            mean: sum / count as f64,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub times: Vec<f64>,
    pub errors: Vec<f64>,
    pub t_basis: Option<f64>,
    pub overall: Option<RegimeStats>,
    /// Times `t ≤ T_basis`.
    pub interpolation: Option<RegimeStats>,
    /// Times `t > T_basis`.
    pub extrapolation: Option<RegimeStats>,
}

fn same_time(a: f64, b: f64) -> bool {
    a == b || (a - b).abs() <= 1e-12 * a.abs().max(b.abs()).max(1.0)
}

/// Rows of `full` at the times of `target`; every target time must be present.
pub fn align_to(full: &Trajectory, target: &Trajectory) -> Result<Trajectory> {
    let mut out = Trajectory::default();
    let mut i = 0;
    for &t in &target.times {
        while i < full.len() && full.times[i] < t && !same_time(full.times[i], t) {
            i += 1;
        }
        if i == full.len() || !same_time(full.times[i], t) {
            return Err(Error::validation(format!("time {t} has no matching full-solution record")));
        }
        out.times.push(full.times[i]);
        out.states.push(full.states[i].clone());
        i += 1;
    }
    Ok(out)
}

pub fn compare_trajectories(full: &Trajectory, approx: &Trajectory, t_basis: Option<f64>) -> Result<Comparison> {
    if full.len() != approx.len() {
        return Err(Error::validation(format!(
            "time grids differ in length: {} vs {}",
            full.len(),
            approx.len()
        )));
    }
    let mut errors = Vec::with_capacity(full.len());
    for (k, (ta, tb)) in full.times.iter().zip(&approx.times).enumerate() {
        if !same_time(*ta, *tb) {
            return Err(Error::validation(format!("time grids differ at record {k}: {ta} vs {tb}")));
        }
        if full.states[k].len() != approx.states[k].len() {
            return Err(Error::validation(format!("state dimensions differ at record {k}")));
        }
        errors.push(relative_error(&full.states[k], &approx.states[k]));
    }
    let pairs = || full.times.iter().copied().zip(errors.iter().copied());
    let split = t_basis.unwrap_or(f64::INFINITY);
    Ok(Comparison {
        overall: RegimeStats::of(pairs().map(|(_, e)| e)),
        interpolation: RegimeStats::of(pairs().filter(|(t, _)| *t <= split).map(|(_, e)| e)),
        extrapolation: RegimeStats::of(pairs().filter(|(t, _)| *t > split).map(|(_, e)| e)),
        times: full.times.clone(),
        errors,
        t_basis,
    })
}

impl Comparison {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = create(path)?;
        let io = |e| Error::io(path, e);
        writeln!(w, "t,relative_error,regime").map_err(io)?;
        let split = self.t_basis.unwrap_or(f64::INFINITY);
        for (t, e) in self.times.iter().zip(&self.errors) {
            let regime = if *t <= split { "interpolation" } else { "extrapolation" };
            writeln!(w, "{t},{e:e},{regime}").map_err(io)?;
        }
        w.flush().map_err(io)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CompareSummary {
    pub t_basis: Option<f64>,
    pub records: usize,
    pub overall: Option<RegimeStats>,
    pub interpolation: Option<RegimeStats>,
    pub extrapolation: Option<RegimeStats>,
}

pub fn cmd_compare(
    full_path: &Path,
    approx_path: &Path,
    t_basis: Option<f64>,
    align: bool,
    out: &Path,
) -> Result<CompareSummary> {
    let mut full = load_trajectory(full_path)?;
    let approx = load_trajectory(approx_path)?;
    if align {
        full = align_to(&full, &approx)?;
    }
    let cmp = compare_trajectories(&full, &approx, t_basis)?;
    ensure_dir(out)?;
    cmp.write_csv(&out.join(ERRORS))?;
    let summary = CompareSummary {
        t_basis,
        records: cmp.times.len(),
        overall: cmp.overall,
        interpolation: cmp.interpolation,
        extrapolation: cmp.extrapolation,
    };
    write_json(&out.join(SUMMARY), &summary)?;
    Ok(summary)
}

// ---------------------------------------------------------------------------
// pipeline

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Timings {
    pub basis_build_s: f64,
    pub full_solve_s: f64,
    pub tensor_build_s: f64,
    pub reduced_solve_s: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunSummary {
    pub kernel: KernelSpec,
    pub n: usize,
    pub mode: String,
    pub basis_size: usize,
    pub t_basis: f64,
    pub terminated: bool,
    pub windows_processed: usize,
    pub horizon: f64,
    pub timings: Timings,
    pub interpolation: Option<RegimeStats>,
    pub extrapolation: Option<RegimeStats>,
    pub final_relative_error: f64,
    pub max_orthonormality_defect: f64,
    pub max_merge_residual: f64,
    pub tensor_max_asymmetry: f64,
    pub config: String,
}

/// Everything a pipeline run produced, kept in memory for inspection.
#[derive(Debug)]
pub struct PipelineRun {
    pub summary: RunSummary,
    pub greedy: GreedyResult,
    pub reduced_system: ReducedSystem,
    pub reference: Trajectory,
    pub reduced: ReducedSolve,
    pub comparison: Comparison,
}

/// Basis → reduce → reduced solve, compared against a separate full solve on
/// `[0, horizon]`. Artifacts go to `out/{basis,reduced,full,reduced_solve}`
/// and the summary to `out/summary.json`.
pub fn cmd_pipeline(cfg: &RunConfig, out: &Path) -> Result<PipelineRun> {
    run_pipeline(cfg, Some(out), |_| {})
}

pub fn run_pipeline<P: FnMut(&crate::greedy::WindowRecord)>(
    cfg: &RunConfig,
    out: Option<&Path>,
    progress: P,
) -> Result<PipelineRun> {
    let (kernel, source) = full_system(cfg)?;

    let started = Instant::now();
    let greedy = run_greedy(cfg, progress)?;
    let basis_build_s = started.elapsed().as_secs_f64();
    if greedy.basis.is_empty() {
        return Err(Error::Refused(format!(
            "greedy construction produced an empty basis after {} window(s)",
            greedy.trace.windows.len()
        )));
    }
    let t_basis = greedy.t_basis;
    let horizon = cfg.horizon.unwrap_or(2.0 * t_basis);

    let started = Instant::now();
    let reduced_system = ReducedSystem::build(&kernel, &greedy.basis, &source)?;
    let tensor_build_s = started.elapsed().as_secs_f64();

    let n0 = cfg.initial_state()?;
    let full_cfg = IntegratorConfig::new(cfg.dt, 0.0, horizon)?;
    let grid = record_grid(0.0, horizon, cfg.record_stride);
    let mut rhs = FastRhs::new(kernel.clone(), source.clone())?;
    let started = Instant::now();
    let reference = integrate(&mut rhs, &n0.n, &full_cfg, &grid)?;
    let full_solve_s = started.elapsed().as_secs_f64();

    let start = match cfg.reduced_mode {
        ReducedMode::Resolve => n0.clone(),
        ReducedMode::Continuation => greedy.terminal_state.clone(),
    };
    let reduced = run_reduced(
        &reduced_system,
        &greedy.basis,
        &start,
        horizon,
        cfg.reduced_dt,
        cfg.record_stride,
        true,
    )?;
    let recon = reduced.reconstructed.as_ref().expect("reconstruction requested");
    let aligned = align_to(&reference, recon)?;
    let comparison = compare_trajectories(&aligned, recon, Some(t_basis))?;

    let trace = &greedy.trace.windows;
    let summary = RunSummary {
        kernel: cfg.kernel,
        n: cfg.size(),
        mode: cfg.reduced_mode.to_string(),
        basis_size: greedy.basis.rank(),
        t_basis,
        terminated: greedy.terminated,
        windows_processed: trace.len(),
        horizon,
        timings: Timings {
            basis_build_s,
            full_solve_s,
            tensor_build_s,
            reduced_solve_s: reduced.wall_seconds,
        },
        interpolation: comparison.interpolation,
        extrapolation: comparison.extrapolation,
        final_relative_error: comparison.errors.last().copied().unwrap_or(0.0),
        max_orthonormality_defect: trace
            .iter()
            .map(|w| w.snapshot_orthonormality.max(w.basis_orthonormality))
            .fold(0.0, f64::max),
        max_merge_residual: trace.iter().filter_map(|w| w.merge_residual).fold(0.0, f64::max),
        tensor_max_asymmetry: reduced_system.tensor().max_asymmetry(),
        config: cfg.to_resolved_text(),
    };

    if let Some(out) = out {
        ensure_dir(out)?;
        write_resolved_config(cfg, out)?;
        write_basis_artifacts(cfg, &greedy, &out.join("basis"))?;
        let reduced_dir = out.join("reduced");
        let meta = ReducedMeta {
            n: cfg.size(),
            r: reduced_system.rank(),
            kernel: cfg.kernel,
            basis_id: reduced_system.basis_id().to_string(),
            t_basis: Some(t_basis),
            eps: Some(cfg.greedy.eps),
            eps_prime: Some(cfg.greedy.eps_prime),
            delta: Some(cfg.greedy.delta),
            tensor_layout: "R x R^2 row-major; entry [a, b*R + c] = S[a][b][c], a = output index".into(),
            tensor_max_asymmetry: summary.tensor_max_asymmetry,
            build_seconds: tensor_build_s,
        };
        save_reduced_system(&reduced_system, &meta, &reduced_dir)?;
        PodMat::from_dmatrix(greedy.basis.matrix()).save(reduced_dir.join(BASIS))?;
        let full_dir = out.join("full");
        ensure_dir(&full_dir)?;
        save_trajectory(&full_dir.join(TRAJECTORY), &reference)?;
        let rs_dir = out.join("reduced_solve");
        ensure_dir(&rs_dir)?;
        save_trajectory(&rs_dir.join(REDUCED_TRAJECTORY), &reduced.reduced)?;
        save_trajectory(&rs_dir.join(RECONSTRUCTED), recon)?;
        comparison.write_csv(&out.join(ERRORS))?;
        write_json(&out.join(SUMMARY), &summary)?;
    }

    Ok(PipelineRun {
        summary,
        greedy,
        reduced_system,
        reference,
        reduced,
        comparison,
    })
}

// ---------------------------------------------------------------------------
// bench

/// Seconds per call of `f`: the best of three batches, each at least `min_batch_s` long.
pub fn seconds_per_call<F: FnMut()>(mut f: F, min_batch_s: f64) -> f64 {
    f();
    let mut best = f64::INFINITY;
    for _ in 0..3 {
        let mut calls = 0u64;
        let started = Instant::now();
        loop {
            f();
            calls += 1;
            let elapsed = started.elapsed().as_secs_f64();
            if elapsed >= min_batch_s {
                best = best.min(elapsed / calls as f64);
                break;
            }
        }
    }
    best
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchRow {
    pub operation: String,
    pub n: usize,
    pub r: usize,
    pub seconds_per_call: f64,
}

fn positive_state(size: usize, seed: u64) -> Vec<f64> {
    use rand::{RngExt, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    (0..size).map(|_| rng.random_range(0.0..1.0)).collect()
}

/// Times the fast and direct full right-hand sides at `N` and `4N` and the
/// reduced right-hand side at `R = reduced_rank` for bases of both sizes.
pub fn run_bench(spec: KernelSpec, reduced_rank: usize, min_batch_s: f64) -> Result<Vec<BenchRow>> {
    let mut rows = Vec::new();
    let base = spec.size;
    for n in [base, 4 * base] {
        let s = KernelSpec { size: n, ..spec };
        let mut rhs = FastRhs::new(build_kernel(s)?, SourceVector::monomer(n, 1.0)?)?;
        let y = positive_state(n, 1);
        let mut out = vec![0.0; n];
        let t = seconds_per_call(|| rhs.eval_unchecked(&y, &mut out), min_batch_s);
        rows.push(BenchRow { operation: "rhs_fast".into(), n, r: 0, seconds_per_call: t });
    }
    let direct_base = base.min(crate::kernel::DENSE_ORACLE_CAP / 4);
    for n in [direct_base, 4 * direct_base] {
        let s = KernelSpec { size: n, ..spec };
        let c = dense_kernel(&s)?;
        let j = SourceVector::monomer(n, 1.0)?;
        let y = positive_state(n, 2);
        let t = seconds_per_call(
            || {
                std::hint::black_box(rhs_direct(&c, &j, &y).expect("dimensions fixed"));
            },
            min_batch_s,
        );
        rows.push(BenchRow { operation: "rhs_direct".into(), n, r: 0, seconds_per_call: t });
    }
    for n in [base, 4 * base] {
        let s = KernelSpec { size: n, ..spec };
        let basis = random_orthonormal_basis(n, reduced_rank.min(n), 7)?;
        let sys = ReducedSystem::build(&build_kernel(s)?, &basis, &SourceVector::monomer(n, 1.0)?)?;
        let x = positive_state(sys.rank(), 3);
        let mut out = vec![0.0; sys.rank()];
        let mut outer = vec![0.0; sys.scratch_len()];
        let t = seconds_per_call(|| sys.eval_into(&x, &mut out, &mut outer), min_batch_s);
        rows.push(BenchRow {
            operation: "rhs_reduced".into(),
            n,
            r: sys.rank(),
            seconds_per_call: t,
        });
    }
    Ok(rows)
}

pub fn cmd_bench(cfg: &RunConfig, out: &Path) -> Result<Vec<BenchRow>> {
    let rows = run_bench(cfg.kernel, 50, 0.2)?;
    ensure_dir(out)?;
    write_resolved_config(cfg, out)?;
    let path = out.join("bench.csv");
    let mut w = create(&path)?;
    let io = |e| Error::io(&path, e);
    writeln!(w, "operation,n,r,seconds_per_call").map_err(io)?;
    for r in &rows {
        writeln!(w, "{},{},{},{:e}", r.operation, r.n, r.r, r.seconds_per_call).map_err(io)?;
    }
    w.flush().map_err(io)?;
    Ok(rows)
}

/// Resolves the output directory: `--out` wins over `output.dir`.
pub fn output_dir(cfg: &RunConfig, out: Option<PathBuf>) -> PathBuf {
    out.unwrap_or_else(|| cfg.out_dir.clone())
}
