//! Fixed-step explicit midpoint integration of autonomous systems.

use crate::error::{Error, Result};
use crate::rhs::FastRhs;

/// Grid tolerance, in units of steps, for time points that must coincide
/// with step boundaries.
pub const GRID_TOLERANCE: f64 = 1e-9;

/// Autonomous right-hand side `y' = f(y)`.
pub trait Rhs {
    fn eval(&mut self, y: &[f64], dy: &mut [f64]);
}

impl<F> Rhs for F
where
    F: FnMut(&[f64], &mut [f64]),
{
    fn eval(&mut self, y: &[f64], dy: &mut [f64]) {
        self(y, dy)
    }
}

impl Rhs for FastRhs {
    fn eval(&mut self, y: &[f64], dy: &mut [f64]) {
        self.eval_unchecked(y, dy)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntegratorConfig {
    pub dt: f64,
    pub t0: f64,
    pub t1: f64,
}

impl IntegratorConfig {
    pub fn new(dt: f64, t0: f64, t1: f64) -> Result<Self> {
        let cfg = Self { dt, t0, t1 };
        cfg.steps()?;
        Ok(cfg)
    }

    /// Number of steps, validated to be an integer.
    pub fn steps(&self) -> Result<u64> {
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(Error::validation(format!(
                "time step must be positive and finite, got {}",
                self.dt
            )));
        }
        if !(self.t0.is_finite() && self.t1.is_finite() && self.t0 < self.t1) {
            return Err(Error::validation(format!(
                "time interval [{}, {}] is empty or non-finite",
                self.t0, self.t1
            )));
        }
        grid_index(self.t1 - self.t0, self.dt).ok_or_else(|| {
            Error::validation(format!(
                "interval length {} is not a multiple of dt = {}",
                self.t1 - self.t0,
                self.dt
            ))
        })
    }

    /// Time of grid point `k`, computed without accumulation.
    #[inline]
    pub fn time_at(&self, k: u64) -> f64 {
        self.t0 + k as f64 * self.dt
    }
}

/// Step index for an offset that must be a whole number of steps.
pub fn grid_index(offset: f64, dt: f64) -> Option<u64> {
    let steps = offset / dt;
    let rounded = steps.round();
    if rounded < 0.0 || (steps - rounded).abs() > GRID_TOLERANCE * rounded.max(1.0) {
        None
    } else {
        Some(rounded as u64)
    }
}

/// Recorded states, ordered by strictly increasing time.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.states.first().map_or(0, Vec::len)
    }

    pub fn last(&self) -> Option<(f64, &[f64])> {
        self.times
            .last()
            .zip(self.states.last())
            .map(|(t, s)| (*t, s.as_slice()))
    }
}

/// Work buffers for one midpoint step.
struct Midpoint {
    k1: Vec<f64>,
    mid: Vec<f64>,
    k2: Vec<f64>,
}

impl Midpoint {
    fn new(dim: usize) -> Self {
        Self {
            k1: vec![0.0; dim],
            mid: vec![0.0; dim],
            k2: vec![0.0; dim],
        }
    }

    /// `y ← y + dt f(y + dt/2 f(y))`; returns false if the result is not finite.
    fn step<F: Rhs + ?Sized>(&mut self, f: &mut F, y: &mut [f64], dt: f64) -> bool {
        f.eval(y, &mut self.k1);
        let half = 0.5 * dt;
        for ((m, &yi), &k) in self.mid.iter_mut().zip(y.iter()).zip(&self.k1) {
            *m = yi + half * k;
        }
        f.eval(&self.mid, &mut self.k2);
        let mut finite = true;
        for (yi, &k) in y.iter_mut().zip(&self.k2) {
            *yi += dt * k;
            finite &= yi.is_finite();
        }
        finite
    }
}

pub fn midpoint_step<F: Rhs + ?Sized>(f: &mut F, y: &[f64], dt: f64) -> Result<Vec<f64>> {
    let mut out = y.to_vec();
    if Midpoint::new(y.len()).step(f, &mut out, dt) {
        Ok(out)
    } else {
        Err(Error::Divergence {
            step: 1,
            t: 0.0,
            last_state: Box::new(y.to_vec()),
        })
    }
}

pub fn integrate<F: Rhs + ?Sized>(
    f: &mut F,
    y0: &[f64],
    cfg: &IntegratorConfig,
    record_times: &[f64],
) -> Result<Trajectory> {
    integrate_observed(f, y0, cfg, record_times, |_, _, _| {})
}

/// Like [`integrate`], calling `observer(step, t, y)` at every grid point
/// including the initial one.
pub fn integrate_observed<F, O>(
    f: &mut F,
    y0: &[f64],
    cfg: &IntegratorConfig,
    record_times: &[f64],
    mut observer: O,
) -> Result<Trajectory>
where
    F: Rhs + ?Sized,
    O: FnMut(u64, f64, &[f64]),
{
    let steps = cfg.steps()?;
    let mut record_steps = Vec::with_capacity(record_times.len() + 1);
    for &t in record_times {
        if !t.is_finite() || t < cfg.t0 - GRID_TOLERANCE * cfg.dt || t > cfg.t1 + GRID_TOLERANCE * cfg.dt
        {
            return Err(Error::validation(format!(
                "record time {t} is outside [{}, {}]",
                cfg.t0, cfg.t1
            )));
        }
        let k = grid_index(t - cfg.t0, cfg.dt).ok_or_else(|| {
            Error::validation(format!("record time {t} is not on the step grid (dt = {})", cfg.dt))
        })?;
        record_steps.push(k.min(steps));
    }
    record_steps.push(steps);
    record_steps.sort_unstable();
    record_steps.dedup();

    let mut traj = Trajectory::default();
    let mut next = record_steps.iter().copied().peekable();
    let mut y = y0.to_vec();
    let mut last_finite = y0.to_vec();
    let mut stepper = Midpoint::new(y.len());

    for k in 0..=steps {
        if k > 0 {
            if !stepper.step(f, &mut y, cfg.dt) {
                return Err(Error::Divergence {
                    step: k,
                    t: cfg.time_at(k - 1),
                    last_state: Box::new(last_finite),
                });
            }
            last_finite.copy_from_slice(&y);
        }
        let t = cfg.time_at(k);
        observer(k, t, &y);
        if next.peek() == Some(&k) {
            next.next();
            traj.times.push(t);
            traj.states.push(y.clone());
        }
    }
    Ok(traj)
}
