//! Greedy windowed basis construction.
//!
//! The full system is integrated one window of width `tau` at a time. Each
//! window yields a snapshot basis `V̂_k`; its distance from the current basis
//! `e_k = ‖(I − V_{k−1}V_{k−1}ᵀ) V̂_k‖₂` decides what happens next:
//!
//! - `e_k ≤ eps`: stop and return `V_{k−1}`;
//! - `e_k > eps_prime`: `V_k = V_{k−1} ⊕_δ V̂_k`;
//! - otherwise keep `V_k = V_{k−1}` and move on.

use std::io::Write;
use std::time::Instant;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::integrator::{grid_index, integrate, IntegratorConfig, Rhs};
use crate::pod::{merge_bases, projection_error, snapshot_basis, ReductionBasis, SnapshotMatrix};
use crate::rhs::StateVector;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GreedyConfig {
    /// Window width.
    pub tau: f64,
    /// Snapshots per window, endpoints included.
    pub snapshots: usize,
    /// Termination threshold.
    pub eps: f64,
    /// Merge threshold; windows with `eps < e_k ≤ eps_prime` are skipped.
    pub eps_prime: f64,
    /// Singular-value cut for snapshot truncation and merging.
    pub delta: f64,
    pub max_windows: usize,
    /// Full-system time step.
    pub dt: f64,
}

impl Default for GreedyConfig {
    fn default() -> Self {
        Self {
            tau: 2.0,
            snapshots: 65,
            eps: 1e-13,
            eps_prime: 1e-10,
            delta: 1e-13,
            max_windows: 256,
            dt: 2f64.powi(-12),
        }
    }
}

impl GreedyConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau.is_finite() && self.tau > 0.0) {
            return Err(Error::validation(format!("window width tau must be positive, got {}", self.tau)));
        }
        if self.snapshots < 2 {
            return Err(Error::validation(format!(
                "need at least 2 snapshots per window, got {}",
                self.snapshots
            )));
        }
        if !(self.eps > 0.0 && self.eps_prime > self.eps && self.eps_prime.is_finite()) {
            return Err(Error::validation(format!(
                "thresholds must satisfy eps_prime > eps > 0, got eps = {}, eps_prime = {}",
                self.eps, self.eps_prime
            )));
        }
        if !(self.delta.is_finite() && self.delta > 0.0) {
            return Err(Error::validation(format!("delta must be positive, got {}", self.delta)));
        }
        if self.max_windows == 0 {
            return Err(Error::validation("max_windows must be positive"));
        }
        self.steps_per_snapshot()?;
        Ok(())
    }

    /// Integrator steps between consecutive snapshots.
    pub fn steps_per_snapshot(&self) -> Result<u64> {
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(Error::validation(format!("time step must be positive, got {}", self.dt)));
        }
        let spacing = self.tau / (self.snapshots - 1) as f64;
        match grid_index(spacing, self.dt) {
            Some(k) if k > 0 => Ok(k),
            _ => Err(Error::validation(format!(
                "dt = {} does not divide the snapshot spacing tau/(m-1) = {spacing}",
                self.dt
            ))),
        }
    }

    fn window(&self, k: usize) -> (f64, f64) {
        ((k - 1) as f64 * self.tau, k as f64 * self.tau)
    }
}

/// One processed window.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowRecord {
    /// 1-based window index.
    pub index: usize,
    pub t_end: f64,
    pub projection_error: f64,
    /// Basis size after this window.
    pub basis_size: usize,
    pub merged: bool,
    pub wall_seconds: f64,
    pub snapshot_rank: usize,
    /// `‖V̂ᵀV̂ − I‖_F` of the window's snapshot basis.
    pub snapshot_orthonormality: f64,
    /// `‖VᵀV − I‖_F` of the basis after the window.
    pub basis_orthonormality: f64,
    /// `‖(I − V_k V_kᵀ)(V_{k−1} | V̂_k)‖₂` when merged, otherwise `None`.
    pub merge_residual: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct GreedyTrace {
    pub windows: Vec<WindowRecord>,
}

impl GreedyTrace {
    pub const CSV_HEADER: &'static str = "window_index,t_end,projection_error,basis_size,merged,\
snapshot_rank,snapshot_orthonormality,basis_orthonormality,merge_residual,wall_seconds";

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{}", Self::CSV_HEADER)?;
        for r in &self.windows {
            writeln!(
                w,
                "{},{},{:e},{},{},{},{:e},{:e},{},{}",
                r.index,
                r.t_end,
                r.projection_error,
                r.basis_size,
                r.merged as u8,
                r.snapshot_rank,
                r.snapshot_orthonormality,
                r.basis_orthonormality,
                r.merge_residual.map(|x| format!("{x:e}")).unwrap_or_default(),
                r.wall_seconds
            )?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct GreedyResult {
    pub basis: ReductionBasis,
    pub trace: GreedyTrace,
    /// End of the last processed window.
    pub t_basis: f64,
    /// Full solution at `t_basis`.
    pub terminal_state: StateVector,
    /// True iff the run stopped on the `eps` criterion.
    pub terminated: bool,
}

/// Integrates window `k` (1-based) from `start` and samples `m` uniformly
/// spaced snapshots including both endpoints.
pub fn window_snapshots<F: Rhs + ?Sized>(
    system: &mut F,
    start: &StateVector,
    k: usize,
    cfg: &GreedyConfig,
) -> Result<(SnapshotMatrix, StateVector)> {
    if k == 0 {
        return Err(Error::validation("window indices start at 1"));
    }
    let stride = cfg.steps_per_snapshot()?;
    let (t0, t1) = cfg.window(k);
    let steps = stride * (cfg.snapshots as u64 - 1);
    // Grid step derived from the snapshot stride so every sample is a step boundary.
    let dt = cfg.tau / steps as f64;
    let icfg = IntegratorConfig::new(dt, t0, t1)?;
    let record: Vec<f64> = (0..cfg.snapshots as u64)
        .map(|j| icfg.time_at(j * stride))
        .collect();
    let traj = integrate(system, &start.n, &icfg, &record)?;
    debug_assert_eq!(traj.len(), cfg.snapshots);
    let end = StateVector {
        t: t1,
        n: traj.states.last().expect("final state recorded").clone(),
    };
    let times = traj.times.clone();
    let snaps = SnapshotMatrix::from_columns(&traj.states, times)?;
    Ok((snaps, end))
}

pub fn build_basis<F: Rhs + ?Sized>(
    system: &mut F,
    n0: &StateVector,
    cfg: &GreedyConfig,
) -> Result<GreedyResult> {
    build_basis_with(system, n0, cfg, |_| {})
}

/// [`build_basis`] with a callback invoked after each window record is made.
pub fn build_basis_with<F, P>(
    system: &mut F,
    n0: &StateVector,
    cfg: &GreedyConfig,
    mut progress: P,
) -> Result<GreedyResult>
where
    F: Rhs + ?Sized,
    P: FnMut(&WindowRecord),
{
    cfg.validate()?;
    let dim = n0.n.len();
    let mut basis = ReductionBasis::empty(dim);
    let mut state = StateVector { t: 0.0, n: n0.n.clone() };
    let mut trace = GreedyTrace::default();

    for k in 1..=cfg.max_windows {
        let started = Instant::now();
        let (snaps, end) = window_snapshots(system, &state, k, cfg)?;
        let window_basis = snapshot_basis(&snaps, cfg.delta)?;
        let err = projection_error(&basis, window_basis.matrix())?;
        state = end;

        let terminate = err <= cfg.eps;
        let merged = !terminate && err > cfg.eps_prime;
        let mut merge_residual = None;
        if merged {
            let merged_basis = merge_bases(&basis, &window_basis, cfg.delta)?;
            let mut joined = DMatrix::zeros(dim, basis.rank() + window_basis.rank());
            joined.columns_mut(0, basis.rank()).copy_from(basis.matrix());
            joined
                .columns_mut(basis.rank(), window_basis.rank())
                .copy_from(window_basis.matrix());
            merge_residual = Some(projection_error(&merged_basis, &joined)?);
            basis = merged_basis;
        }
        let record = WindowRecord {
            index: k,
            t_end: state.t,
            projection_error: err,
            basis_size: basis.rank(),
            merged,
            wall_seconds: started.elapsed().as_secs_f64(),
            snapshot_rank: window_basis.rank(),
            snapshot_orthonormality: window_basis.orthonormality_defect(),
            basis_orthonormality: basis.orthonormality_defect(),
            merge_residual,
        };
        progress(&record);
        trace.windows.push(record);

        if terminate {
            return Ok(GreedyResult {
                basis,
                trace,
                t_basis: state.t,
                terminal_state: state,
                terminated: true,
            });
        }
    }
    Ok(GreedyResult {
        basis,
        trace,
        t_basis: state.t,
        terminal_state: state,
        terminated: false,
    })
}
