//! Right-hand side of the truncated aggregation system with a source:
//!
//! ```text
//! dn_k/dt = J_k + ½ Σ_{i+j=k} C_ij n_i n_j − n_k Σ_{j=1..N} C_jk n_j,   k = 1..N
//! ```
//!
//! Storage convention: mass `k` lives at offset `k - 1` of every vector. The
//! linear convolution of two such vectors puts mass `i + j` at offset
//! `i + j - 2`, so the gain for mass `k` is read from offset `k - 2` and the
//! tail offsets `N - 1 ..= 2N - 2` carry masses `N + 1 ..= 2N` that leave the
//! system.

use nalgebra::DMatrix;
use realfft::num_complex::Complex;

use crate::conv::{accumulate_product, ConvPlan, ConvWorkspace};
use crate::error::{check_len, Error, Result};
use crate::kernel::LowRankKernel;

/// Source term `J`, entries non-negative.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceVector(Vec<f64>);

impl SourceVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some((k, x)) = values
            .iter()
            .enumerate()
            .find(|(_, x)| !x.is_finite() || **x < 0.0)
        {
            return Err(Error::validation(format!(
                "source entry for mass {} is {x}; must be finite and non-negative",
                k + 1
            )));
        }
        Ok(Self(values))
    }

    /// `J_k = rate · δ_{k1}`.
    pub fn monomer(size: usize, rate: f64) -> Result<Self> {
        let mut values = vec![0.0; size];
        if size > 0 {
            values[0] = rate;
        }
        Self::new(values)
    }

    pub fn zeros(size: usize) -> Self {
        Self(vec![0.0; size])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Mass injected per unit time, `Σ k J_k`.
    pub fn mass_rate(&self) -> f64 {
        moment(&self.0, 1)
    }
}

/// Concentrations at time `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct StateVector {
    pub t: f64,
    pub n: Vec<f64>,
}

impl StateVector {
    pub fn new(t: f64, n: Vec<f64>) -> Result<Self> {
        if n.iter().any(|x| !x.is_finite()) {
            return Err(Error::validation("state vector has non-finite entries"));
        }
        Ok(Self { t, n })
    }

    pub fn zeros(size: usize) -> Self {
        Self {
            t: 0.0,
            n: vec![0.0; size],
        }
    }
}

/// `Σ_k k^order n_k`.
pub fn moment(n: &[f64], order: u32) -> f64 {
    n.iter()
        .enumerate()
        .map(|(i, x)| ((i + 1) as f64).powi(order as i32) * x)
        .sum()
}

/// Reference evaluation by explicit O(N²) loops over a dense kernel matrix.
pub fn rhs_direct(c: &DMatrix<f64>, source: &SourceVector, n: &[f64]) -> Result<Vec<f64>> {
    let size = n.len();
    if c.nrows() != size || c.ncols() != size {
        return Err(Error::validation(format!(
            "kernel matrix is {}x{}, state has length {size}",
            c.nrows(),
            c.ncols()
        )));
    }
    check_len("source", source.len(), size)?;
    let mut f = source.as_slice().to_vec();
    for k in 1..=size {
        let mut gain = 0.0;
        for i in 1..k {
            let j = k - i;
            gain += c[(i - 1, j - 1)] * n[i - 1] * n[j - 1];
        }
        let mut loss = 0.0;
        for j in 1..=size {
            loss += c[(j - 1, k - 1)] * n[j - 1];
        }
        f[k - 1] += 0.5 * gain - n[k - 1] * loss;
    }
    Ok(f)
}

/// Mass-balance terms at one state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MassBalance {
    /// `Σ k f_k`
    pub mass_rate: f64,
    /// `Σ k J_k`
    pub source_rate: f64,
    /// Rate at which mass leaves through collisions producing masses above `N`.
    pub flux_out: f64,
    /// `Σ k (|J_k| + |gain_k| + |loss_k|)`, the scale the identity is judged against.
    pub gross: f64,
}

impl MassBalance {
    /// `|Σ k f_k − (Σ k J_k − Φ)| / gross`, zero when everything vanishes.
    pub fn relative_defect(&self) -> f64 {
        let defect = (self.mass_rate - (self.source_rate - self.flux_out)).abs();
        if self.gross == 0.0 {
            defect
        } else {
            defect / self.gross
        }
    }
}

/// FFT-based evaluator with cached plans and work buffers.
///
/// Cost per call is `O(R_K N log N)` where `R_K` is the kernel rank.
pub struct FastRhs {
    kernel: LowRankKernel,
    source: SourceVector,
    ws: ConvWorkspace,
    spec_a: Vec<Complex<f64>>,
    spec_b: Vec<Complex<f64>>,
    acc: Vec<Complex<f64>>,
    conv: Vec<f64>,
    loss_rate: Vec<f64>,
}

impl std::fmt::Debug for FastRhs {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FastRhs")
            .field("size", &self.kernel.size())
            .field("rank", &self.kernel.rank())
            .finish()
    }
}

impl FastRhs {
    pub fn new(kernel: LowRankKernel, source: SourceVector) -> Result<Self> {
        check_len("source", source.len(), kernel.size())?;
        let plan = ConvPlan::new(kernel.size());
        let ws = plan.workspace();
        Ok(Self {
            spec_a: ws.new_spectrum(),
            spec_b: ws.new_spectrum(),
            acc: ws.new_spectrum(),
            conv: vec![0.0; plan.padded_len()],
            loss_rate: vec![0.0; kernel.size()],
            ws,
            kernel,
            source,
        })
    }

    pub fn dim(&self) -> usize {
        self.kernel.size()
    }

    pub fn kernel(&self) -> &LowRankKernel {
        &self.kernel
    }

    pub fn source(&self) -> &SourceVector {
        &self.source
    }

    /// Fills `conv` with `Σ_p conv(u∘n, v∘n)` and `loss_rate` with
    /// `Σ_j C_jk n_j`.
    fn collision_terms(&mut self, n: &[f64]) {
        self.acc.fill(Complex::new(0.0, 0.0));
        self.loss_rate.fill(0.0);
        for pair in self.kernel.factors() {
            self.ws.forward_product(&pair.u, n, &mut self.spec_a);
            self.ws.forward_product(&pair.v, n, &mut self.spec_b);
            accumulate_product(&mut self.acc, &self.spec_a, &self.spec_b);
            let un: f64 = pair.u.iter().zip(n).map(|(u, x)| u * x).sum();
            for (l, v) in self.loss_rate.iter_mut().zip(&pair.v) {
                *l += v * un;
            }
        }
        self.ws.inverse(&mut self.acc, &mut self.conv);
    }

    fn check_state(&self, n: &[f64], out: Option<&[f64]>) -> Result<()> {
        check_len("state", n.len(), self.dim())?;
        if let Some(out) = out {
            check_len("output", out.len(), self.dim())?;
        }
        Ok(())
    }

    pub fn eval(&mut self, n: &[f64], out: &mut [f64]) -> Result<()> {
        self.check_state(n, Some(out))?;
        self.eval_unchecked(n, out);
        Ok(())
    }

    pub(crate) fn eval_unchecked(&mut self, n: &[f64], out: &mut [f64]) {
        self.collision_terms(n);
        let size = self.dim();
        let j = self.source.as_slice();
        out[0] = j[0] - n[0] * self.loss_rate[0];
        for k in 2..=size {
            out[k - 1] = j[k - 1] + 0.5 * self.conv[k - 2] - n[k - 1] * self.loss_rate[k - 1];
        }
    }

    fn tail_flux(&self) -> f64 {
        let size = self.dim();
        // masses N+1 ..= 2N sit at offsets N-1 ..= 2N-2
        0.5 * (size + 1..=2 * size)
            .map(|mass| mass as f64 * self.conv[mass - 2])
            .sum::<f64>()
    }

    /// `Φ = ½ Σ_{i,j ≤ N, i+j > N} (i+j) C_ij n_i n_j`.
    pub fn mass_flux_out(&mut self, n: &[f64]) -> Result<f64> {
        self.check_state(n, None)?;
        self.collision_terms(n);
        Ok(self.tail_flux())
    }

    /// Evaluates the right-hand side into `out` and returns `Φ` from the same
    /// convolution.
    pub fn eval_with_flux(&mut self, n: &[f64], out: &mut [f64]) -> Result<f64> {
        self.eval(n, out)?;
        Ok(self.tail_flux())
    }

    pub fn mass_balance(&mut self, n: &[f64]) -> Result<MassBalance> {
        let mut f = vec![0.0; self.dim()];
        self.check_state(n, None)?;
        Ok(self.eval_balance_unchecked(n, &mut f))
    }

    /// Evaluates into `out` and returns the mass-balance terms of this call.
    pub fn eval_balance(&mut self, n: &[f64], out: &mut [f64]) -> Result<MassBalance> {
        self.check_state(n, Some(out))?;
        Ok(self.eval_balance_unchecked(n, out))
    }

    pub(crate) fn eval_balance_unchecked(&mut self, n: &[f64], out: &mut [f64]) -> MassBalance {
        self.eval_unchecked(n, out);
        let j = self.source.as_slice();
        let mut gross = 0.0;
        for k in 1..=self.dim() {
            let gain = if k >= 2 { 0.5 * self.conv[k - 2] } else { 0.0 };
            let loss = n[k - 1] * self.loss_rate[k - 1];
            gross += k as f64 * (j[k - 1].abs() + gain.abs() + loss.abs());
        }
        MassBalance {
            mass_rate: moment(out, 1),
            source_rate: self.source.mass_rate(),
            flux_out: self.tail_flux(),
            gross,
        }
    }
}

/// One-shot fast evaluation; prefer [`FastRhs`] for repeated calls.
pub fn rhs_fast(kernel: &LowRankKernel, source: &SourceVector, n: &[f64]) -> Result<Vec<f64>> {
    let mut rhs = FastRhs::new(kernel.clone(), source.clone())?;
    let mut out = vec![0.0; n.len()];
    rhs.eval(n, &mut out)?;
    Ok(out)
}

pub fn mass_flux_out(kernel: &LowRankKernel, n: &[f64]) -> Result<f64> {
    let mut rhs = FastRhs::new(kernel.clone(), SourceVector::zeros(kernel.size()))?;
    rhs.mass_flux_out(n)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::{build_kernel, dense_kernel, KernelSpec};

    #[test]
    fn two_species_by_hand() {
        let spec = KernelSpec::brownian(0.37, 2);
        let c = dense_kernel(&spec).unwrap();
        let j = SourceVector::monomer(2, 1.0).unwrap();
        let f = rhs_direct(&c, &j, &[1.0, 0.0]).unwrap();
        assert_eq!(f, vec![-1.0, 1.0]);
        let f = rhs_fast(&build_kernel(spec).unwrap(), &j, &[1.0, 0.0]).unwrap();
        assert!((f[0] + 1.0).abs() < 1e-12 && (f[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_state_gives_source() {
        let spec = KernelSpec::brownian(0.6, 16);
        let j = SourceVector::new((0..16).map(|k| k as f64 * 0.5).collect()).unwrap();
        let zero = vec![0.0; 16];
        assert_eq!(
            rhs_direct(&dense_kernel(&spec).unwrap(), &j, &zero).unwrap(),
            j.as_slice()
        );
        assert_eq!(
            rhs_fast(&build_kernel(spec).unwrap(), &j, &zero).unwrap(),
            j.as_slice()
        );
    }

    // Independent hand loop over the definition, written without the dense
    // matrix helper: C ≡ 2, n = (1, 1, 0).
    #[test]
    fn three_species_constant_kernel() {
        let n = [1.0, 1.0, 0.0];
        let mut expected = [0.0; 3];
        for k in 1..=3usize {
            let mut gain = 0.0;
            for i in 1..=3usize {
                for j in 1..=3usize {
                    if i + j == k {
                        gain += 2.0 * n[i - 1] * n[j - 1];
                    }
                }
            }
            let loss: f64 = (1..=3).map(|j| 2.0 * n[j - 1]).sum();
            expected[k - 1] = 0.5 * gain - n[k - 1] * loss;
        }
        assert_eq!(expected, [-4.0, -3.0, 2.0]);

        let spec = KernelSpec::brownian(0.0, 3);
        let j = SourceVector::zeros(3);
        let direct = rhs_direct(&dense_kernel(&spec).unwrap(), &j, &n).unwrap();
        assert_eq!(direct, expected);
        let fast = rhs_fast(&build_kernel(spec).unwrap(), &j, &n).unwrap();
        for (a, b) in fast.iter().zip(expected) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn flux_out_largest_mass_only() {
        for size in [2usize, 5, 64] {
            let k = build_kernel(KernelSpec::brownian(0.0, size)).unwrap();
            let mut n = vec![0.0; size];
            assert_eq!(mass_flux_out(&k, &n).unwrap(), 0.0);
            n[size - 1] = 1.0;
            let phi = mass_flux_out(&k, &n).unwrap();
            assert!((phi - 2.0 * size as f64).abs() < 1e-10, "N={size}: {phi}");
        }
    }

    #[test]
    fn moments() {
        assert_eq!(moment(&[1.0, 0.0, 0.0], 1), 1.0);
        assert_eq!(moment(&[1.0, 1.0, 0.0], 1), 3.0);
        assert_eq!(moment(&[1.0, 1.0, 1.0], 0), 3.0);
        assert_eq!(moment(&[0.0, 1.0, 1.0], 2), 13.0);
        assert_eq!(moment(&[0.0, 0.0, 1.0], 3), 27.0);
    }

    #[test]
    fn dimension_mismatch() {
        let spec = KernelSpec::brownian(0.5, 4);
        let c = dense_kernel(&spec).unwrap();
        let j = SourceVector::zeros(4);
        assert!(rhs_direct(&c, &j, &[0.0; 3]).is_err());
        assert!(rhs_direct(&c, &SourceVector::zeros(3), &[0.0; 4]).is_err());
        let k = build_kernel(spec).unwrap();
        assert!(rhs_fast(&k, &j, &[0.0; 5]).is_err());
        assert!(FastRhs::new(k.clone(), SourceVector::zeros(3)).is_err());
        let mut fast = FastRhs::new(k, j).unwrap();
        let mut out = vec![0.0; 3];
        assert!(fast.eval(&[0.0; 4], &mut out).is_err());
    }

    #[test]
    fn source_validation() {
        assert!(SourceVector::new(vec![1.0, -0.1]).is_err());
        assert!(SourceVector::new(vec![f64::NAN]).is_err());
        let j = SourceVector::monomer(4, 2.0).unwrap();
        assert_eq!(j.as_slice(), &[2.0, 0.0, 0.0, 0.0]);
        assert_eq!(j.mass_rate(), 2.0);
    }
}
