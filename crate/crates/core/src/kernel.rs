//! Coagulation kernels and their separable factorization.
//!
//! Every kernel supported here is a short sum of rank-one terms
//!
//! ```text
//! C_ij = Σ_p u_i^(p) v_j^(p)
//! ```
//!
//! which is what makes the convolution-based right-hand side and the
//! projected tensor build cheap. Particle masses are 1-based in all formulas;
//! vectors store mass `k` at offset `k - 1`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest `N` for which [`dense_kernel`] will materialize an `N × N` matrix.
pub const DENSE_ORACLE_CAP: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "form", rename_all = "snake_case")]
pub enum KernelForm {
    /// `C_ij = i^a j^-a + i^-a j^a`
    Brownian { a: f64 },
    /// `C_ij = i^nu j^mu + i^mu j^nu + c`
    Generalized { nu: f64, mu: f64, c: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    #[serde(flatten)]
    pub form: KernelForm,
    /// Truncation size: the largest particle mass kept in the system.
    pub size: usize,
}

impl KernelSpec {
    pub fn brownian(a: f64, size: usize) -> Self {
        Self {
            form: KernelForm::Brownian { a },
            size,
        }
    }

    pub fn generalized(nu: f64, mu: f64, c: f64, size: usize) -> Self {
        Self {
            form: KernelForm::Generalized { nu, mu, c },
            size,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.size < 2 {
            return Err(Error::validation(format!(
                "kernel size N must be at least 2, got {}",
                self.size
            )));
        }
        match self.form {
            KernelForm::Brownian { a } => {
                if !a.is_finite() {
                    return Err(Error::validation("kernel exponent a must be finite"));
                }
            }
            KernelForm::Generalized { nu, mu, c } => {
                if !nu.is_finite() || !mu.is_finite() {
                    return Err(Error::validation("kernel exponents nu, mu must be finite"));
                }
                if !c.is_finite() || c < 0.0 {
                    return Err(Error::validation(format!(
                        "kernel constant c must be finite and non-negative, got {c}"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Closed-form `C_ij` for 1-based masses `i`, `j`.
    pub fn entry(&self, i: usize, j: usize) -> Result<f64> {
        if i == 0 || j == 0 || i > self.size || j > self.size {
            return Err(Error::Index {
                i,
                j,
                size: self.size,
            });
        }
        Ok(self.entry_unchecked(i, j))
    }

    fn entry_unchecked(&self, i: usize, j: usize) -> f64 {
        match self.form {
            KernelForm::Brownian { a } => {
                mass_pow(i, a) * mass_pow(j, -a) + mass_pow(i, -a) * mass_pow(j, a)
            }
            KernelForm::Generalized { nu, mu, c } => {
                mass_pow(i, nu) * mass_pow(j, mu) + mass_pow(i, mu) * mass_pow(j, nu) + c
            }
        }
    }
}

/// `k^e` evaluated as `exp(e ln k)`, exact for `k = 1`.
#[inline]
pub fn mass_pow(k: usize, e: f64) -> f64 {
    if k == 1 {
        1.0
    } else {
        (e * (k as f64).ln()).exp()
    }
}

fn power_vector(size: usize, e: f64) -> Vec<f64> {
    (1..=size).map(|k| mass_pow(k, e)).collect()
}

/// One rank-one term `u vᵀ` of a separable kernel.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorPair {
    pub u: Vec<f64>,
    pub v: Vec<f64>,
}

/// Kernel stored as its factor pairs, precomputed once.
#[derive(Debug, Clone, PartialEq)]
pub struct LowRankKernel {
    spec: KernelSpec,
    factors: Vec<FactorPair>,
}

impl LowRankKernel {
    pub fn spec(&self) -> &KernelSpec {
        &self.spec
    }

    pub fn size(&self) -> usize {
        self.spec.size
    }

    pub fn rank(&self) -> usize {
        self.factors.len()
    }

    pub fn factors(&self) -> &[FactorPair] {
        &self.factors
    }

    /// `Σ_p u_i v_j` for 1-based masses, without bounds on the oracle cap.
    pub fn reconstruct(&self, i: usize, j: usize) -> f64 {
        self.factors
            .iter()
            .map(|f| f.u[i - 1] * f.v[j - 1])
            .sum()
    }
}

pub fn build_kernel(spec: KernelSpec) -> Result<LowRankKernel> {
    spec.validate()?;
    let n = spec.size;
    let factors = match spec.form {
        KernelForm::Brownian { a } => {
            let up = power_vector(n, a);
            let down = power_vector(n, -a);
            vec![
                FactorPair {
                    u: up.clone(),
                    v: down.clone(),
                },
                FactorPair { u: down, v: up },
            ]
        }
        KernelForm::Generalized { nu, mu, c } => {
            let p_nu = power_vector(n, nu);
            let p_mu = power_vector(n, mu);
            let root_c = vec![c.sqrt(); n];
            vec![
                FactorPair {
                    u: p_nu.clone(),
                    v: p_mu.clone(),
                },
                FactorPair { u: p_mu, v: p_nu },
                FactorPair {
                    u: root_c.clone(),
                    v: root_c,
                },
            ]
        }
    };
    Ok(LowRankKernel { spec, factors })
}

pub fn kernel_entry(spec: &KernelSpec, i: usize, j: usize) -> Result<f64> {
    spec.validate()?;
    spec.entry(i, j)
}

pub fn dense_kernel(spec: &KernelSpec) -> Result<DMatrix<f64>> {
    dense_kernel_capped(spec, DENSE_ORACLE_CAP)
}

pub fn dense_kernel_capped(spec: &KernelSpec, cap: usize) -> Result<DMatrix<f64>> {
    spec.validate()?;
    let n = spec.size;
    if n > cap {
        return Err(Error::Refused(format!(
            "dense kernel of size {n} exceeds the oracle cap {cap}"
        )));
    }
    Ok(DMatrix::from_fn(n, n, |r, c| {
        spec.entry_unchecked(r + 1, c + 1)
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn brownian_zero_exponent_is_constant() {
        let k = build_kernel(KernelSpec::brownian(0.0, 4)).unwrap();
        assert_eq!(k.rank(), 2);
        for i in 1..=4 {
            for j in 1..=4 {
                assert_eq!(k.reconstruct(i, j), 2.0);
            }
        }
    }

    #[test]
    fn diagonal_entries_are_two() {
        for a in [-1.3, 0.0, 0.5, 0.7, 2.0] {
            let spec = KernelSpec::brownian(a, 32);
            assert_eq!(spec.entry(1, 1).unwrap(), 2.0);
            for k in [2, 7, 32] {
                assert!((spec.entry(k, k).unwrap() - 2.0).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn hand_evaluated_entries() {
        let spec = KernelSpec::brownian(0.5, 8);
        assert!((spec.entry(1, 4).unwrap() - 2.5).abs() < 1e-14);
        let expected = 1.5 * 2f64.sqrt();
        assert!((spec.entry(2, 4).unwrap() - expected).abs() < 1e-14);
        assert!((spec.entry(2, 4).unwrap() - 2.1213).abs() < 1e-4);

        let g = KernelSpec::generalized(0.0, 0.0, 2.0, 5);
        assert_eq!(g.entry(3, 5).unwrap(), 4.0);
        let k = build_kernel(g).unwrap();
        assert_eq!(k.rank(), 3);
        assert!((k.reconstruct(3, 5) - 4.0).abs() < 1e-14);
    }

    #[test]
    fn dense_small_cases() {
        let d = dense_kernel(&KernelSpec::brownian(0.0, 2)).unwrap();
        assert_eq!(d, DMatrix::from_element(2, 2, 2.0));
        let d = dense_kernel(&KernelSpec::brownian(1.0, 2)).unwrap();
        assert_eq!(d[(0, 0)], 2.0);
        assert!((d[(0, 1)] - 2.5).abs() < 1e-15);
        assert!((d[(1, 0)] - 2.5).abs() < 1e-15);
        assert!((d[(1, 1)] - 2.0).abs() < 1e-15);
    }

    #[test]
    fn factorization_matches_dense() {
        let specs = [
            KernelSpec::brownian(0.6, 64),
            KernelSpec::brownian(-0.3, 64),
            KernelSpec::generalized(0.2, 0.9, 2.0, 64),
            KernelSpec::generalized(-0.5, 0.5, 0.0, 64),
        ];
        for spec in specs {
            let dense = dense_kernel(&spec).unwrap();
            let low = build_kernel(spec).unwrap();
            let scale = dense.amax();
            for i in 1..=64 {
                for j in 1..=64 {
                    let err = (low.reconstruct(i, j) - dense[(i - 1, j - 1)]).abs();
                    assert!(err <= 1e-12 * scale, "{spec:?} ({i},{j}) err {err}");
                }
            }
            assert_eq!(dense, dense.transpose());
        }
    }

    #[test]
    fn invalid_specs_rejected() {
        assert!(matches!(
            build_kernel(KernelSpec::brownian(0.5, 1)),
            Err(Error::Validation(_))
        ));
        assert!(build_kernel(KernelSpec::brownian(f64::NAN, 8)).is_err());
        assert!(build_kernel(KernelSpec::brownian(f64::INFINITY, 8)).is_err());
        assert!(build_kernel(KernelSpec::generalized(0.1, 0.2, -1.0, 8)).is_err());
        assert!(build_kernel(KernelSpec::generalized(f64::NAN, 0.2, 1.0, 8)).is_err());
    }

    #[test]
    fn out_of_range_index() {
        let spec = KernelSpec::brownian(0.5, 4);
        assert!(matches!(spec.entry(0, 1), Err(Error::Index { .. })));
        assert!(matches!(spec.entry(1, 5), Err(Error::Index { .. })));
    }

    #[test]
    fn dense_refuses_above_cap() {
        let spec = KernelSpec::brownian(0.5, 100);
        assert!(matches!(
            dense_kernel_capped(&spec, 64),
            Err(Error::Refused(_))
        ));
        assert!(matches!(
            dense_kernel(&KernelSpec::brownian(0.5, DENSE_ORACLE_CAP + 1)),
            Err(Error::Refused(_))
        ));
    }
}
