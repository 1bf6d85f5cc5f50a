//! Run configuration: flat UTF-8 `key = value` lines with dotted keys.
//!
//! Blank lines and lines starting with `#` are ignored. Numeric values accept
//! plain floats and powers written as `base^exponent` (e.g. `2^-12`).

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::greedy::GreedyConfig;
use crate::kernel::{KernelForm, KernelSpec};
use crate::podmat::PodMat;
use crate::reduced::ReducedMode;
use crate::rhs::{SourceVector, StateVector};

#[derive(Debug, Clone, PartialEq)]
pub enum SourceSpec {
    /// `J = rate · δ_{k1}`
    Monomer { rate: f64 },
    /// PODMAT1 file holding N values.
    File(PathBuf),
}

#[derive(Debug, Clone, PartialEq)]
pub enum InitialSpec {
    Zero,
    File(PathBuf),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub kernel: KernelSpec,
    pub source: SourceSpec,
    pub initial: InitialSpec,
    pub dt: f64,
    pub t_end: f64,
    /// Step for the reduced system; defaults to `dt`.
    pub reduced_dt: f64,
    pub greedy: GreedyConfig,
    pub reduced_mode: ReducedMode,
    /// End of the pipeline comparison; `None` means twice the basis span.
    pub horizon: Option<f64>,
    pub out_dir: PathBuf,
    pub record_stride: f64,
}

const KEYS: &[&str] = &[
    "system.N",
    "kernel.form",
    "kernel.a",
    "kernel.nu",
    "kernel.mu",
    "kernel.c",
    "source.kind",
    "source.rate",
    "source.path",
    "init.kind",
    "init.path",
    "integrator.dt",
    "integrator.t_end",
    "integrator.reduced_dt",
    "greedy.tau",
    "greedy.m",
    "greedy.eps",
    "greedy.eps_prime",
    "greedy.delta",
    "greedy.max_windows",
    "reduced.mode",
    "pipeline.horizon",
    "output.dir",
    "output.record_stride",
];

/// Parsed but untyped key/value pairs.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RawConfig {
    entries: BTreeMap<String, String>,
}

impl RawConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut raw = Self::default();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            raw.set_assignment(line)
                .map_err(|e| Error::validation(format!("config line {}: {e}", lineno + 1)))?;
        }
        Ok(raw)
    }

    /// Applies one `key=value` assignment.
    pub fn set_assignment(&mut self, assignment: &str) -> Result<()> {
        let (key, value) = assignment
            .split_once('=')
            .ok_or_else(|| Error::validation(format!("expected key=value, got '{assignment}'")))?;
        self.set(key.trim(), value.trim())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        if !KEYS.contains(&key) {
            return Err(Error::validation(format!("unknown config key '{key}'")));
        }
        self.entries.insert(key.to_string(), value.to_string());
        Ok(())
    }

    fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    fn real(&self, key: &str, default: f64) -> Result<f64> {
        self.get(key).map_or(Ok(default), |v| parse_real(key, v))
    }

    fn count(&self, key: &str, default: usize) -> Result<usize> {
        match self.get(key) {
            None => Ok(default),
            Some(v) => v
                .parse()
                .map_err(|_| Error::validation(format!("{key}: '{v}' is not a non-negative integer"))),
        }
    }

    fn path(&self, key: &str, base: &Path) -> Result<PathBuf> {
        let v = self
            .get(key)
            .ok_or_else(|| Error::validation(format!("{key} is required")))?;
        Ok(base.join(v))
    }
}

pub fn parse_real(key: &str, v: &str) -> Result<f64> {
    let bad = || Error::validation(format!("{key}: '{v}' is not a number"));
    let x = match v.split_once('^') {
        Some((b, e)) => {
            let b: f64 = b.trim().parse().map_err(|_| bad())?;
            let e: f64 = e.trim().parse().map_err(|_| bad())?;
            b.powf(e)
        }
        None => v.parse().map_err(|_| bad())?,
    };
    if x.is_finite() {
        Ok(x)
    } else {
        Err(bad())
    }
}

impl RunConfig {
    /// Builds a typed configuration; relative paths resolve against `base`.
    pub fn from_raw(raw: &RawConfig, base: &Path) -> Result<Self> {
        let size = raw.count("system.N", 2048)?;
        let form = match raw.get("kernel.form").unwrap_or("brownian") {
            "brownian" => KernelForm::Brownian {
                a: raw.real("kernel.a", 0.8)?,
            },
            "generalized" => KernelForm::Generalized {
                nu: raw.real("kernel.nu", 0.0)?,
                mu: raw.real("kernel.mu", 0.0)?,
                c: raw.real("kernel.c", 0.0)?,
            },
            other => {
                return Err(Error::validation(format!(
                    "kernel.form: unknown form '{other}' (expected brownian or generalized)"
                )))
            }
        };
        let kernel = KernelSpec { form, size };
        kernel.validate()?;

        let source = match raw.get("source.kind").unwrap_or("monomer") {
            "monomer" => SourceSpec::Monomer {
                rate: raw.real("source.rate", 1.0)?,
            },
            "file" => SourceSpec::File(raw.path("source.path", base)?),
            other => return Err(Error::validation(format!("source.kind: unknown kind '{other}'"))),
        };
        let initial = match raw.get("init.kind").unwrap_or("zero") {
            "zero" => InitialSpec::Zero,
            "file" => InitialSpec::File(raw.path("init.path", base)?),
            other => return Err(Error::validation(format!("init.kind: unknown kind '{other}'"))),
        };

        let dt = raw.real("integrator.dt", 2f64.powi(-12))?;
        let t_end = raw.real("integrator.t_end", 64.0)?;
        let reduced_dt = raw.real("integrator.reduced_dt", dt)?;
        let greedy = GreedyConfig {
            tau: raw.real("greedy.tau", 2.0)?,
            snapshots: raw.count("greedy.m", 65)?,
            eps: raw.real("greedy.eps", 1e-13)?,
            eps_prime: raw.real("greedy.eps_prime", 1e-10)?,
            delta: raw.real("greedy.delta", 1e-13)?,
            max_windows: raw.count("greedy.max_windows", 256)?,
            dt,
        };
        let reduced_mode = raw.get("reduced.mode").unwrap_or("re-solve").parse()?;
        let horizon = match raw.get("pipeline.horizon") {
            None | Some("auto") => None,
            Some(v) => Some(parse_real("pipeline.horizon", v)?),
        };
        let out_dir = base.join(raw.get("output.dir").unwrap_or("out"));
        let record_stride = raw.real("output.record_stride", 2f64.powi(-4))?;

        let cfg = Self {
            kernel,
            source,
            initial,
            dt,
            t_end,
            reduced_dt,
            greedy,
            reduced_mode,
            horizon,
            out_dir,
            record_stride,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn parse(text: &str, overrides: &[String], base: &Path) -> Result<Self> {
        let mut raw = RawConfig::parse(text)?;
        for o in overrides {
            raw.set_assignment(o)?;
        }
        Self::from_raw(&raw, base)
    }

    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
                let base = p.parent().unwrap_or(Path::new("."));
                Self::parse(&text, overrides, base)
            }
            None => Self::parse("", overrides, Path::new(".")),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.kernel.validate()?;
        if let SourceSpec::Monomer { rate } = self.source {
            if rate < 0.0 {
                return Err(Error::validation("source.rate must be non-negative"));
            }
        }
        for (key, x) in [
            ("integrator.dt", self.dt),
            ("integrator.t_end", self.t_end),
            ("integrator.reduced_dt", self.reduced_dt),
            ("output.record_stride", self.record_stride),
        ] {
            if !(x > 0.0) {
                return Err(Error::validation(format!("{key} must be positive, got {x}")));
            }
        }
        self.greedy.validate()?;
        for (key, step) in [("integrator.dt", self.dt), ("integrator.reduced_dt", self.reduced_dt)] {
            if crate::integrator::grid_index(self.record_stride, step).is_none() {
                return Err(Error::validation(format!(
                    "output.record_stride {} is not a multiple of {key} {step}",
                    self.record_stride
                )));
            }
        }
        if let Some(h) = self.horizon {
            if !(h > 0.0) {
                return Err(Error::validation("pipeline.horizon must be positive"));
            }
        }
        Ok(())
    }

    pub fn size(&self) -> usize {
        self.kernel.size
    }

    pub fn source_vector(&self) -> Result<SourceVector> {
        match &self.source {
            SourceSpec::Monomer { rate } => SourceVector::monomer(self.size(), *rate),
            SourceSpec::File(p) => SourceVector::new(load_vector(p, self.size())?),
        }
    }

    pub fn initial_state(&self) -> Result<StateVector> {
        match &self.initial {
            InitialSpec::Zero => Ok(StateVector::zeros(self.size())),
            InitialSpec::File(p) => StateVector::new(0.0, load_vector(p, self.size())?),
        }
    }

    /// Every key with its effective value, one per line.
    pub fn to_resolved_text(&self) -> String {
        let mut s = String::new();
        let mut line = |k: &str, v: String| {
            let _ = writeln!(s, "{k}={v}");
        };
        line("system.N", self.kernel.size.to_string());
        match self.kernel.form {
            KernelForm::Brownian { a } => {
                line("kernel.form", "brownian".into());
                line("kernel.a", a.to_string());
            }
            KernelForm::Generalized { nu, mu, c } => {
                line("kernel.form", "generalized".into());
                line("kernel.nu", nu.to_string());
                line("kernel.mu", mu.to_string());
                line("kernel.c", c.to_string());
            }
        }
        match &self.source {
            SourceSpec::Monomer { rate } => {
                line("source.kind", "monomer".into());
                line("source.rate", rate.to_string());
            }
            SourceSpec::File(p) => {
                line("source.kind", "file".into());
                line("source.path", p.display().to_string());
            }
        }
        match &self.initial {
            InitialSpec::Zero => line("init.kind", "zero".into()),
            InitialSpec::File(p) => {
                line("init.kind", "file".into());
                line("init.path", p.display().to_string());
            }
        }
        line("integrator.dt", self.dt.to_string());
        line("integrator.t_end", self.t_end.to_string());
        line("integrator.reduced_dt", self.reduced_dt.to_string());
        line("greedy.tau", self.greedy.tau.to_string());
        line("greedy.m", self.greedy.snapshots.to_string());
        line("greedy.eps", self.greedy.eps.to_string());
        line("greedy.eps_prime", self.greedy.eps_prime.to_string());
        line("greedy.delta", self.greedy.delta.to_string());
        line("greedy.max_windows", self.greedy.max_windows.to_string());
        line("reduced.mode", self.reduced_mode.to_string());
        line(
            "pipeline.horizon",
            self.horizon.map_or("auto".into(), |h| h.to_string()),
        );
        line("output.dir", self.out_dir.display().to_string());
        line("output.record_stride", self.record_stride.to_string());
        s
    }
}

/// Reads an `N × 1` or `1 × N` PODMAT1 file as a vector.
pub fn load_vector(path: &Path, size: usize) -> Result<Vec<f64>> {
    let m = PodMat::load(path)?;
    if m.data.len() != size || (m.rows != 1 && m.cols != 1) {
        return Err(Error::format(
            path,
            format!("expected a vector of length {size}, found {}x{}", m.rows, m.cols),
        ));
    }
    Ok(m.data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults() {
        let cfg = RunConfig::parse("", &[], Path::new(".")).unwrap();
        assert_eq!(cfg.kernel, KernelSpec::brownian(0.8, 2048));
        assert_eq!(cfg.dt, 2f64.powi(-12));
        assert_eq!(cfg.greedy.snapshots, 65);
        assert_eq!(cfg.greedy.eps, 1e-13);
        assert_eq!(cfg.greedy.eps_prime, 1e-10);
        assert_eq!(cfg.greedy.delta, 1e-13);
        assert_eq!(cfg.greedy.tau, 2.0);
        assert_eq!(cfg.reduced_mode, ReducedMode::Resolve);
        assert_eq!(cfg.source, SourceSpec::Monomer { rate: 1.0 });
        assert_eq!(cfg.record_stride, 0.0625);
    }

    #[test]
    fn parse_with_comments_and_overrides() {
        let text = "# desk run\nsystem.N = 512\nkernel.a=0.6\n\ngreedy.eps = 1e-12\nintegrator.dt = 2^-10\n";
        let cfg = RunConfig::parse(text, &["kernel.a=0.7".into(), "reduced.mode=continuation".into()], Path::new("."))
            .unwrap();
        assert_eq!(cfg.kernel, KernelSpec::brownian(0.7, 512));
        assert_eq!(cfg.greedy.eps, 1e-12);
        assert_eq!(cfg.dt, 2f64.powi(-10));
        assert_eq!(cfg.greedy.dt, cfg.dt);
        assert_eq!(cfg.reduced_dt, cfg.dt);
        assert_eq!(cfg.reduced_mode, ReducedMode::Continuation);
    }

    #[test]
    fn resolved_text_round_trips() {
        let text = "system.N=300\nkernel.form=generalized\nkernel.nu=0.1\nkernel.mu=0.9\nkernel.c=2\n\
                    integrator.dt=0.001953125\npipeline.horizon=50\ngreedy.m=33";
        let cfg = RunConfig::parse(text, &[], Path::new("")).unwrap();
        let again = RunConfig::parse(&cfg.to_resolved_text(), &[], Path::new("")).unwrap();
        assert_eq!(cfg, again);
    }

    #[test]
    fn rejects_bad_input() {
        let p = Path::new(".");
        assert!(RunConfig::parse("system.M=3", &[], p).is_err());
        assert!(RunConfig::parse("no equals sign", &[], p).is_err());
        assert!(RunConfig::parse("kernel.a=abc", &[], p).is_err());
        assert!(RunConfig::parse("system.N=1", &[], p).is_err());
        assert!(RunConfig::parse("kernel.form=ballistic", &[], p).is_err());
        assert!(RunConfig::parse("greedy.eps=1e-9", &[], p).is_err());
        assert!(RunConfig::parse("integrator.dt=0.3", &[], p).is_err());
        assert!(RunConfig::parse("source.kind=file", &[], p).is_err());
        assert!(RunConfig::parse("", &["oops".into()], p).is_err());
    }
}
