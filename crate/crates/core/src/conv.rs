//! Zero-padded linear convolution of real sequences through a real FFT.

use std::sync::Arc;

use realfft::num_complex::Complex;
use realfft::{ComplexToReal, RealFftPlanner, RealToComplex};

/// FFT plans for linear convolution of two length-`len` sequences.
///
/// The transform length is the next power of two `≥ 2 len`, so the full
/// linear convolution (length `2 len - 1`) fits without wrap-around.
#[derive(Clone)]
pub struct ConvPlan {
    len: usize,
    padded: usize,
    forward: Arc<dyn RealToComplex<f64>>,
    inverse: Arc<dyn ComplexToReal<f64>>,
}

impl std::fmt::Debug for ConvPlan {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ConvPlan")
            .field("len", &self.len)
            .field("padded", &self.padded)
            .finish()
    }
}

impl ConvPlan {
    pub fn new(len: usize) -> Self {
        let padded = (2 * len.max(1)).next_power_of_two();
        let mut planner = RealFftPlanner::<f64>::new();
        let forward = planner.plan_fft_forward(padded);
        let inverse = planner.plan_fft_inverse(padded);
        Self {
            len,
            padded,
            forward,
            inverse,
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn padded_len(&self) -> usize {
        self.padded
    }

    pub fn spectrum_len(&self) -> usize {
        self.padded / 2 + 1
    }

    pub fn workspace(&self) -> ConvWorkspace {
        ConvWorkspace {
            plan: self.clone(),
            time: vec![0.0; self.padded],
            scratch_fwd: self.forward.make_scratch_vec(),
            scratch_inv: self.inverse.make_scratch_vec(),
        }
    }
}

/// Per-thread buffers bound to a [`ConvPlan`].
pub struct ConvWorkspace {
    plan: ConvPlan,
    time: Vec<f64>,
    scratch_fwd: Vec<Complex<f64>>,
    scratch_inv: Vec<Complex<f64>>,
}

impl ConvWorkspace {
    pub fn plan(&self) -> &ConvPlan {
        &self.plan
    }

    pub fn new_spectrum(&self) -> Vec<Complex<f64>> {
        vec![Complex::new(0.0, 0.0); self.plan.spectrum_len()]
    }

    /// Spectrum of the zero-padded elementwise product `a ∘ b`.
    pub fn forward_product(&mut self, a: &[f64], b: &[f64], out: &mut [Complex<f64>]) {
        let len = self.plan.len;
        debug_assert_eq!(a.len(), len);
        debug_assert_eq!(b.len(), len);
        for ((t, &x), &y) in self.time[..len].iter_mut().zip(a).zip(b) {
            *t = x * y;
        }
        self.time[len..].fill(0.0);
        self.plan
            .forward
            .process_with_scratch(&mut self.time, out, &mut self.scratch_fwd)
            .expect("forward FFT buffer sizes are fixed by the plan");
    }

    /// Inverse transform of `spectrum` (clobbered) into `out`, scaled so that
    /// `out` is the linear convolution. `out` has the padded length.
    pub fn inverse(&mut self, spectrum: &mut [Complex<f64>], out: &mut [f64]) {
        let last = spectrum.len() - 1;
        spectrum[0].im = 0.0;
        spectrum[last].im = 0.0;
        self.plan
            .inverse
            .process_with_scratch(spectrum, out, &mut self.scratch_inv)
            .expect("inverse FFT buffer sizes are fixed by the plan");
        let scale = 1.0 / self.plan.padded as f64;
        for x in out.iter_mut() {
            *x *= scale;
        }
    }
}

/// `acc += a * b` elementwise on spectra.
#[inline]
pub fn accumulate_product(acc: &mut [Complex<f64>], a: &[Complex<f64>], b: &[Complex<f64>]) {
    for ((s, x), y) in acc.iter_mut().zip(a).zip(b) {
        *s += x * y;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(a: &[f64], b: &[f64]) -> Vec<f64> {
        let mut c = vec![0.0; a.len() + b.len() - 1];
        for (i, x) in a.iter().enumerate() {
            for (j, y) in b.iter().enumerate() {
                c[i + j] += x * y;
            }
        }
        c
    }

    #[test]
    fn matches_naive_convolution() {
        for len in [1usize, 2, 3, 5, 16, 17, 100] {
            let a: Vec<f64> = (0..len).map(|i| ((i * 7 + 3) % 11) as f64 - 4.0).collect();
            let b: Vec<f64> = (0..len).map(|i| ((i * 5 + 1) % 13) as f64 * 0.25).collect();
            let ones = vec![1.0; len];
            let plan = ConvPlan::new(len);
            assert!(plan.padded_len() >= 2 * len);
            assert!(plan.padded_len().is_power_of_two());
            let mut ws = plan.workspace();
            let mut sa = ws.new_spectrum();
            let mut sb = ws.new_spectrum();
            ws.forward_product(&a, &ones, &mut sa);
            ws.forward_product(&b, &ones, &mut sb);
            let mut acc = ws.new_spectrum();
            accumulate_product(&mut acc, &sa, &sb);
            let mut out = vec![0.0; plan.padded_len()];
            ws.inverse(&mut acc, &mut out);
            let expected = naive(&a, &b);
            for (k, e) in expected.iter().enumerate() {
                assert!((out[k] - e).abs() < 1e-10, "len {len} k {k}");
            }
            for x in &out[expected.len()..] {
                assert!(x.abs() < 1e-10);
            }
        }
    }
}
