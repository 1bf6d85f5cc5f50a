//! Library results against quantities computed here from first principles.

use nalgebra::DMatrix;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

use smolpod::greedy::{window_snapshots, GreedyConfig};
use smolpod::pod::random_orthonormal_basis;
use smolpod::*;

fn random_state(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.random_range(0.0..1.0)).collect()
}

fn rel(a: &[f64], b: &[f64]) -> f64 {
    let d: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let n: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    d / n
}

/// `C_ij` straight from the formula, 1-based.
fn c(a: f64, i: usize, j: usize) -> f64 {
    let (i, j) = (i as f64, j as f64);
    i.powf(a) * j.powf(-a) + i.powf(-a) * j.powf(a)
}

/// Gain and loss sums written out term by term.
fn naive_rhs(a: f64, source: &[f64], n: &[f64]) -> Vec<f64> {
    let size = n.len();
    let mut f = source.to_vec();
    for k in 1..=size {
        for i in 1..k {
            f[k - 1] += 0.5 * c(a, i, k - i) * n[i - 1] * n[k - i - 1];
        }
        for j in 1..=size {
            f[k - 1] -= n[k - 1] * c(a, k, j) * n[j - 1];
        }
    }
    f
}

#[test]
fn fast_rhs_against_term_by_term_sum() {
    let size = 256;
    for (s, a) in [0.2, 0.6, 0.8, -0.4].into_iter().enumerate() {
        let n = random_state(size, s as u64);
        let mut j = vec![0.0; size];
        j[0] = 1.5;
        let k = build_kernel(KernelSpec::brownian(a, size)).unwrap();
        let fast = rhs_fast(&k, &SourceVector::new(j.clone()).unwrap(), &n).unwrap();
        let oracle = naive_rhs(a, &j, &n);
        assert!(rel(&fast, &oracle) <= 1e-10, "a = {a}: {}", rel(&fast, &oracle));
    }
}

#[test]
fn flux_out_against_double_loop() {
    let size = 128;
    for a in [0.0, 0.5, 0.9] {
        let n = random_state(size, 11);
        let mut oracle = 0.0;
        for i in 1..=size {
            for j in 1..=size {
                if i + j > size {
                    oracle += 0.5 * (i + j) as f64 * c(a, i, j) * n[i - 1] * n[j - 1];
                }
            }
        }
        let got = mass_flux_out(&build_kernel(KernelSpec::brownian(a, size)).unwrap(), &n).unwrap();
        assert!((got - oracle).abs() <= 1e-12 * oracle, "a = {a}: {got} vs {oracle}");
    }
}

/// `Σ_ijk S_ijk V_kα V_iβ V_jγ` with `S_ijk = ½(δ_{i+j,k} − δ_ik − δ_jk) C_ij`.
fn reduced_tensor_oracle(a: f64, v: &DMatrix<f64>) -> Vec<f64> {
    let (size, r) = v.shape();
    let mut out = vec![0.0; r * r * r];
    for i in 1..=size {
        for j in 1..=size {
            let w = 0.5 * c(a, i, j);
            for al in 0..r {
                let mut g = -v[(i - 1, al)] - v[(j - 1, al)];
                if i + j <= size {
                    g += v[(i + j - 1, al)];
                }
                for b in 0..r {
                    for cc in 0..r {
                        out[(al * r + b) * r + cc] += w * g * v[(i - 1, b)] * v[(j - 1, cc)];
                    }
                }
            }
        }
    }
    out
}

#[test]
fn reduced_tensor_against_triple_sum() {
    let (size, a) = (64, 0.7);
    let k = build_kernel(KernelSpec::brownian(a, size)).unwrap();
    for r in [1, 4, 8] {
        let v = random_orthonormal_basis(size, r, r as u64).unwrap();
        let fast = build_reduced_tensor(&k, &v).unwrap();
        let oracle = reduced_tensor_oracle(a, v.matrix());
        let e = rel(fast.as_slice(), &oracle);
        assert!(e <= 1e-10, "R = {r}: {e}");
    }
}

#[test]
fn galerkin_consistency() {
    let (size, r, a) = (64, 8, 0.6);
    let spec = KernelSpec::brownian(a, size);
    let v = random_orthonormal_basis(size, r, 3).unwrap();
    let j = SourceVector::monomer(size, 1.0).unwrap();
    let sys = ReducedSystem::build(&build_kernel(spec).unwrap(), &v, &j).unwrap();
    let x: Vec<f64> = random_state(r, 4).iter().map(|z| z - 0.5).collect();
    let n = lift(&v, &x).unwrap();
    let full = rhs_direct(&dense_kernel(&spec).unwrap(), &j, &n).unwrap();
    let expected = project(&v, &full).unwrap();
    let got = rhs_reduced(&sys, &x).unwrap();
    assert!(rel(&got, &expected) <= 1e-10);
}

#[test]
fn identity_basis_reproduces_full_solution() {
    // With V = I the reduced system is the full system written as a tensor.
    let size = 16;
    let spec = KernelSpec::brownian(0.5, size);
    let v = ReductionBasis::from_matrix(DMatrix::identity(size, size), 1e-12).unwrap();
    let j = SourceVector::monomer(size, 1.0).unwrap();
    let k = build_kernel(spec).unwrap();
    let sys = ReducedSystem::build(&k, &v, &j).unwrap();
    let cfg = IntegratorConfig::new(1.0 / 128.0, 0.0, 2.0).unwrap();
    let n0 = vec![0.0; size];
    let reduced = solve_reduced(&sys, &n0, &cfg, &[]).unwrap();
    let mut rhs = FastRhs::new(k, j).unwrap();
    let full = integrate(&mut rhs, &n0, &cfg, &[]).unwrap();
    let e = rel(reduced.last().unwrap().1, full.last().unwrap().1);
    assert!(e <= 1e-12, "{e}");
}

#[test]
fn two_species_rhs_by_hand() {
    // a = 0 gives C = 2 everywhere.
    let size = 2;
    let spec = KernelSpec::brownian(0.0, size);
    let k = build_kernel(spec).unwrap();
    let j = SourceVector::monomer(size, 0.5).unwrap();
    let v = ReductionBasis::from_matrix(DMatrix::identity(2, 2), 1e-12).unwrap();
    let sys = ReducedSystem::build(&k, &v, &j).unwrap();
    // dn1/dt = J - 2 n1 (n1 + n2), dn2/dt = n1^2 - 2 n2 (n1 + n2)
    let x = [0.3, 0.2];
    let f = rhs_reduced(&sys, &x).unwrap();
    let expected = [0.5 - 2.0 * 0.3 * 0.5, 0.09 - 2.0 * 0.2 * 0.5];
    assert!((f[0] - expected[0]).abs() < 1e-15 && (f[1] - expected[1]).abs() < 1e-15);
}

#[test]
fn midpoint_error_ratio_on_decay() {
    let err = |dt: f64| {
        let cfg = IntegratorConfig::new(dt, 0.0, 1.0).unwrap();
        let mut f = |y: &[f64], dy: &mut [f64]| dy[0] = -y[0];
        let traj = integrate(&mut f, &[1.0], &cfg, &[]).unwrap();
        (traj.last().unwrap().1[0] - (-1.0f64).exp()).abs()
    };
    for dt in [1.0 / 16.0, 1.0 / 32.0, 1.0 / 64.0] {
        let ratio = err(dt) / err(dt / 2.0);
        assert!((3.5..=4.5).contains(&ratio), "dt = {dt}: ratio {ratio}");
    }
}

#[test]
fn aggregation_self_convergence() {
    let size = 64;
    let k = build_kernel(KernelSpec::brownian(0.6, size)).unwrap();
    let j = SourceVector::monomer(size, 1.0).unwrap();
    let solve = |dt: f64| {
        let mut rhs = FastRhs::new(k.clone(), j.clone()).unwrap();
        let cfg = IntegratorConfig::new(dt, 0.0, 4.0).unwrap();
        integrate(&mut rhs, &vec![0.0; size], &cfg, &[]).unwrap().last().unwrap().1.to_vec()
    };
    let (a, b, c) = (solve(1.0 / 16.0), solve(1.0 / 32.0), solve(1.0 / 64.0));
    let d1: f64 = a.iter().zip(&b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let d2: f64 = b.iter().zip(&c).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let order = (d1 / d2).log2();
    assert!(order >= 1.9, "observed order {order}");
}

#[test]
fn window_snapshots_of_decoupled_decay() {
    // y_i' = -(i+1) y_i. Every snapshot is a midpoint solution, and the
    // midpoint amplification factor per step is 1 - h λ + (h λ)² / 2.
    let dim = 4;
    let cfg = GreedyConfig {
        tau: 1.0,
        snapshots: 5,
        dt: 1.0 / 64.0,
        ..GreedyConfig::default()
    };
    let mut f = |y: &[f64], dy: &mut [f64]| {
        for (i, (d, v)) in dy.iter_mut().zip(y).enumerate() {
            *d = -((i + 1) as f64) * v;
        }
    };
    let start = StateVector::new(1.0, vec![1.0; dim]).unwrap();
    let (snaps, end) = window_snapshots(&mut f, &start, 2, &cfg).unwrap();
    assert_eq!(snaps.times(), &[1.0, 1.25, 1.5, 1.75, 2.0]);
    assert_eq!(end.t, 2.0);
    let h = 1.0 / 64.0;
    for (col, _) in snaps.times().iter().enumerate() {
        let steps = 16 * col as i32;
        for i in 0..dim {
            let z = h * (i + 1) as f64;
            let expected = (1.0 - z + z * z / 2.0).powi(steps);
            let got = snaps.data()[(i, col)];
            assert!((got - expected).abs() <= 1e-14, "({i}, {col}): {got} vs {expected}");
        }
    }
    assert_eq!(end.n.as_slice(), snaps.data().column(4).as_slice());
}
