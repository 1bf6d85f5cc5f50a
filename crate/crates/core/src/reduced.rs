//! Galerkin-projected aggregation system.
//!
//! Writing the full right-hand side as `f_k = J_k + Σ_ij S_ijk n_i n_j` with
//!
//! ```text
//! S_ijk = ½ (δ_{i+j,k} − δ_{ik} − δ_{jk}) C_ij
//! ```
//!
//! and substituting `n = V x` gives the reduced system
//!
//! ```text
//! dx_α/dt = J̃_α + Σ_βγ S̃_αβγ x_β x_γ,   J̃ = VᵀJ,
//! S̃_αβγ = Σ_ijk S_ijk V_kα V_iβ V_jγ.
//! ```
//!
//! The first index of `S̃` is the output coordinate; the tensor is symmetric
//! in the last two. One evaluation costs `O(R³)` and never touches `N`.

use nalgebra::DMatrix;
use rayon::prelude::*;
use realfft::num_complex::Complex;
use sha2::{Digest, Sha256};

use crate::conv::{accumulate_product, ConvPlan};
use crate::error::{check_len, Error, Result};
use crate::integrator::{integrate, IntegratorConfig, Rhs, Trajectory};
use crate::kernel::{KernelSpec, LowRankKernel};
use crate::pod::ReductionBasis;
use crate::rhs::SourceVector;

/// Largest `N` accepted by [`dense_tensor`].
pub const DENSE_TENSOR_CAP: usize = 64;

/// Dense `N × N × N` structural tensor, for testing only.
#[derive(Debug, Clone, PartialEq)]
pub struct SmoluchowskiTensor {
    size: usize,
    data: Vec<f64>,
}

impl SmoluchowskiTensor {
    pub fn size(&self) -> usize {
        self.size
    }

    /// `S_ijk` for 1-based indices.
    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        let n = self.size;
        self.data[((i - 1) * n + (j - 1)) * n + (k - 1)]
    }

    /// `Σ_ij S_ijk n_i n_j` for every `k`.
    pub fn contract(&self, n: &[f64]) -> Result<Vec<f64>> {
        check_len("state", n.len(), self.size)?;
        let mut out = vec![0.0; self.size];
        for i in 1..=self.size {
            for j in 1..=self.size {
                let w = n[i - 1] * n[j - 1];
                for (k, o) in out.iter_mut().enumerate() {
                    *o += self.get(i, j, k + 1) * w;
                }
            }
        }
        Ok(out)
    }
}

pub fn dense_tensor(spec: &KernelSpec) -> Result<SmoluchowskiTensor> {
    spec.validate()?;
    let n = spec.size;
    if n > DENSE_TENSOR_CAP {
        return Err(Error::Refused(format!(
            "dense tensor of size {n} exceeds the cap {DENSE_TENSOR_CAP}"
        )));
    }
    let kron = |a: usize, b: usize| if a == b { 1.0 } else { 0.0 };
    let mut data = vec![0.0; n * n * n];
    for i in 1..=n {
        for j in 1..=n {
            let c = spec.entry(i, j)?;
            for k in 1..=n {
                data[((i - 1) * n + (j - 1)) * n + (k - 1)] =
                    0.5 * (kron(i + j, k) - kron(i, k) - kron(j, k)) * c;
            }
        }
    }
    Ok(SmoluchowskiTensor { size: n, data })
}

/// Dense `R × R × R` array, `[α][β][γ]` row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ReducedTensor {
    rank: usize,
    data: Vec<f64>,
}

impl ReducedTensor {
    pub fn from_vec(rank: usize, data: Vec<f64>) -> Result<Self> {
        check_len("reduced tensor", data.len(), rank * rank * rank)?;
        Ok(Self { rank, data })
    }

    pub fn zeros(rank: usize) -> Self {
        Self {
            rank,
            data: vec![0.0; rank * rank * rank],
        }
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    #[inline]
    pub fn get(&self, a: usize, b: usize, c: usize) -> f64 {
        self.data[(a * self.rank + b) * self.rank + c]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// `max |S̃_αβγ − S̃_αγβ|`.
    pub fn max_asymmetry(&self) -> f64 {
        let r = self.rank;
        let mut worst = 0.0f64;
        for a in 0..r {
            for b in 0..r {
                for c in b + 1..r {
                    worst = worst.max((self.get(a, b, c) - self.get(a, c, b)).abs());
                }
            }
        }
        worst
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0f64, |m, x| m.max(x.abs()))
    }
}

/// `J̃ = VᵀJ`.
pub fn project_source(basis: &ReductionBasis, source: &SourceVector) -> Result<Vec<f64>> {
    crate::pod::project(basis, source.as_slice())
}

/// Pairs of basis columns handled per batched matrix product in term 1.
const PAIR_BLOCK: usize = 32;

/// Projected tensor built from the kernel factors without forming `S`.
///
/// With `(u, v)` running over the kernel's factor pairs:
///
/// ```text
/// term1_αβγ =  ½ Σ_p Σ_{k≤N} conv(u∘V_β, v∘V_γ)_k V_kα
/// term2_αβγ = −½ Σ_p (Σ_i u_i V_iα V_iβ) ⟨v, V_γ⟩
/// term3_αβγ = −½ Σ_p ⟨u, V_β⟩ (Σ_j v_j V_jα V_jγ)
/// ```
///
/// Term 1 is evaluated for `β ≤ γ` only, batched into one `VᵀG` product per
/// block of pairs; the sum is symmetrized in `(β, γ)` at the end.
pub fn build_reduced_tensor(kernel: &LowRankKernel, basis: &ReductionBasis) -> Result<ReducedTensor> {
    let size = kernel.size();
    check_len("basis dimension", basis.dim(), size)?;
    let r = basis.rank();
    if r == 0 {
        return Ok(ReducedTensor::zeros(0));
    }
    let v = basis.matrix();
    let factors = kernel.factors();
    let plan = ConvPlan::new(size);

    // Spectra of u∘V_β and v∘V_β for every factor pair and column.
    let column = |b: usize| v.column(b);
    let jobs: Vec<(usize, usize)> = (0..factors.len())
        .flat_map(|p| (0..r).map(move |b| (p, b)))
        .collect();
    let spectra: Vec<(Vec<Complex<f64>>, Vec<Complex<f64>>)> = jobs
        .par_iter()
        .map_init(
            || plan.workspace(),
            |ws, &(p, b)| {
                let col = column(b);
                let col = col.as_slice();
                let mut su = ws.new_spectrum();
                let mut sv = ws.new_spectrum();
                ws.forward_product(&factors[p].u, col, &mut su);
                ws.forward_product(&factors[p].v, col, &mut sv);
                (su, sv)
            },
        )
        .collect();
    let spectrum = |p: usize, b: usize| &spectra[p * r + b];

    let pairs: Vec<(usize, usize)> = (0..r).flat_map(|b| (b..r).map(move |c| (b, c))).collect();
    let blocks: Vec<DMatrix<f64>> = pairs
        .par_chunks(PAIR_BLOCK)
        .map_init(
            || (plan.workspace(), vec![0.0; plan.padded_len()]),
            |(ws, buf), chunk| {
                let mut g = DMatrix::zeros(size, chunk.len());
                let mut acc = ws.new_spectrum();
                for (col, &(b, c)) in chunk.iter().enumerate() {
                    acc.fill(Complex::new(0.0, 0.0));
                    for p in 0..factors.len() {
                        accumulate_product(&mut acc, &spectrum(p, b).0, &spectrum(p, c).1);
                    }
                    ws.inverse(&mut acc, buf);
                    // mass k = 2..=N sits at offset k - 2
                    let mut gcol = g.column_mut(col);
                    for k in 2..=size {
                        gcol[k - 1] = buf[k - 2];
                    }
                }
                v.tr_mul(&g)
            },
        )
        .collect();

    let mut out = ReducedTensor::zeros(r);
    let idx = |a: usize, b: usize, c: usize| (a * r + b) * r + c;
    for (chunk, t) in pairs.chunks(PAIR_BLOCK).zip(&blocks) {
        for (col, &(b, c)) in chunk.iter().enumerate() {
            for a in 0..r {
                let val = 0.5 * t[(a, col)];
                out.data[idx(a, b, c)] = val;
                out.data[idx(a, c, b)] = val;
            }
        }
    }

    for pair in factors {
        let a_p = v.tr_mul(&nalgebra::DVector::from_column_slice(&pair.u));
        let b_p = v.tr_mul(&nalgebra::DVector::from_column_slice(&pair.v));
        // Vᵀ diag(w) V
        let weighted_gram = |w: &[f64]| {
            let mut scaled = v.clone();
            for (mut row, &x) in scaled.row_iter_mut().zip(w) {
                row *= x;
            }
            v.tr_mul(&scaled)
        };
        let m_p = weighted_gram(&pair.u);
        let n_p = weighted_gram(&pair.v);
        for a in 0..r {
            for b in 0..r {
                for c in 0..r {
                    out.data[idx(a, b, c)] -= 0.5 * (m_p[(a, b)] * b_p[c] + a_p[b] * n_p[(a, c)]);
                }
            }
        }
    }

    for a in 0..r {
        for b in 0..r {
            for c in b + 1..r {
                let s = 0.5 * (out.data[idx(a, b, c)] + out.data[idx(a, c, b)]);
                out.data[idx(a, b, c)] = s;
                out.data[idx(a, c, b)] = s;
            }
        }
    }
    Ok(out)
}

/// Short content hash identifying a basis.
pub fn basis_fingerprint(basis: &ReductionBasis) -> String {
    let mut h = Sha256::new();
    h.update((basis.dim() as u64).to_le_bytes());
    h.update((basis.rank() as u64).to_le_bytes());
    for x in basis.matrix().iter() {
        h.update(x.to_le_bytes());
    }
    h.finalize()[..8].iter().map(|b| format!("{b:02x}")).collect()
}

/// Projected source and tensor; immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct ReducedSystem {
    source: Vec<f64>,
    tensor: ReducedTensor,
    basis_id: String,
    /// Per output row, the upper triangle `β ≤ γ` with off-diagonal entries doubled.
    packed: Vec<f64>,
}

fn pack_symmetric(t: &ReducedTensor) -> Vec<f64> {
    let r = t.rank();
    let mut packed = Vec::with_capacity(r * r * (r + 1) / 2);
    for a in 0..r {
        for b in 0..r {
            packed.push(t.get(a, b, b));
            for c in b + 1..r {
                packed.push(t.get(a, b, c) + t.get(a, c, b));
            }
        }
    }
    packed
}

/// Dot product with independent partial sums so the loop vectorizes.
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 8];
    let (ac, bc) = (a.chunks_exact(8), b.chunks_exact(8));
    let tail: f64 = ac.remainder().iter().zip(bc.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ac.zip(bc) {
        for k in 0..8 {
            acc[k] += x[k] * y[k];
        }
    }
    acc.iter().sum::<f64>() + tail
}

impl ReducedSystem {
    pub fn new(source: Vec<f64>, tensor: ReducedTensor, basis_id: impl Into<String>) -> Result<Self> {
        check_len("reduced source", source.len(), tensor.rank())?;
        Ok(Self {
            packed: pack_symmetric(&tensor),
            source,
            tensor,
            basis_id: basis_id.into(),
        })
    }

    pub fn build(kernel: &LowRankKernel, basis: &ReductionBasis, source: &SourceVector) -> Result<Self> {
        if basis.is_empty() {
            return Err(Error::Refused("cannot reduce onto an empty basis (R = 0)".into()));
        }
        let j = project_source(basis, source)?;
        let s = build_reduced_tensor(kernel, basis)?;
        Self::new(j, s, basis_fingerprint(basis))
    }

    pub fn rank(&self) -> usize {
        self.tensor.rank()
    }

    pub fn source(&self) -> &[f64] {
        &self.source
    }

    pub fn tensor(&self) -> &ReducedTensor {
        &self.tensor
    }

    pub fn basis_id(&self) -> &str {
        &self.basis_id
    }

    /// Length of the scratch buffer [`eval_into`](Self::eval_into) needs: `R(R+1)/2`.
    pub fn scratch_len(&self) -> usize {
        let r = self.rank();
        r * (r + 1) / 2
    }

    /// Evaluates into `out`, using `outer` (at least [`scratch_len`](Self::scratch_len)) as scratch.
    pub fn eval_into(&self, x: &[f64], out: &mut [f64], outer: &mut [f64]) {
        let m = self.scratch_len();
        let outer = &mut outer[..m];
        let mut p = 0;
        for (b, &xb) in x.iter().enumerate() {
            for &xc in &x[b..] {
                outer[p] = xb * xc;
                p += 1;
            }
        }
        debug_assert_eq!(p, m);
        for (a, o) in out.iter_mut().enumerate() {
            *o = self.source[a] + dot(&self.packed[a * m..(a + 1) * m], outer);
        }
    }

    pub fn rhs(&self) -> ReducedRhs<'_> {
        ReducedRhs {
            sys: self,
            outer: vec![0.0; self.scratch_len()],
        }
    }
}

/// [`Rhs`] adapter holding the scratch buffer.
pub struct ReducedRhs<'a> {
    sys: &'a ReducedSystem,
    outer: Vec<f64>,
}

impl Rhs for ReducedRhs<'_> {
    fn eval(&mut self, y: &[f64], dy: &mut [f64]) {
        self.sys.eval_into(y, dy, &mut self.outer);
    }
}

pub fn rhs_reduced(sys: &ReducedSystem, x: &[f64]) -> Result<Vec<f64>> {
    check_len("reduced state", x.len(), sys.rank())?;
    let mut out = vec![0.0; x.len()];
    let mut outer = vec![0.0; sys.scratch_len()];
    sys.eval_into(x, &mut out, &mut outer);
    Ok(out)
}

/// Where the reduced trajectory starts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReducedMode {
    /// From `t = 0` with `x(0) = Vᵀ n(0)`.
    Resolve,
    /// From the end of the basis-building span with `x = Vᵀ n(T_basis)`.
    Continuation,
}

impl std::str::FromStr for ReducedMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "re-solve" | "resolve" => Ok(Self::Resolve),
            "continuation" => Ok(Self::Continuation),
            other => Err(Error::validation(format!(
                "unknown reduced mode '{other}' (expected re-solve or continuation)"
            ))),
        }
    }
}

impl std::fmt::Display for ReducedMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Resolve => "re-solve",
            Self::Continuation => "continuation",
        })
    }
}

/// Midpoint integration of the reduced system from `x0` over `cfg`.
pub fn solve_reduced(
    sys: &ReducedSystem,
    x0: &[f64],
    cfg: &IntegratorConfig,
    record_times: &[f64],
) -> Result<Trajectory> {
    check_len("reduced initial state", x0.len(), sys.rank())?;
    let mut rhs = sys.rhs();
    integrate(&mut rhs, x0, cfg, record_times)
}
