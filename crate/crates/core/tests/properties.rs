use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

use smolpod::greedy::{build_basis, GreedyConfig};
use smolpod::pod::random_orthonormal_basis;
use smolpod::*;

fn kernel_spec() -> impl Strategy<Value = KernelSpec> {
    prop_oneof![
        (-1.5f64..1.5, 2usize..200).prop_map(|(a, n)| KernelSpec::brownian(a, n)),
        (-1.0f64..1.0, -1.0f64..1.0, 0.0f64..3.0, 2usize..200)
            .prop_map(|(nu, mu, c, n)| KernelSpec::generalized(nu, mu, c, n)),
    ]
}

fn state(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.0f64..1.0, n)
}

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = DMatrix<f64>> {
    prop::collection::vec(-1.0f64..1.0, rows * cols)
        .prop_map(move |v| DMatrix::from_vec(rows, cols, v))
}

fn rel(a: &[f64], b: &[f64]) -> f64 {
    let d: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let n: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    if n == 0.0 { d } else { d / n }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn kernel_symmetric_and_nonnegative(spec in kernel_spec(), i in 1usize..200, j in 1usize..200) {
        let (i, j) = (1 + i % spec.size, 1 + j % spec.size);
        let cij = kernel_entry(&spec, i, j).unwrap();
        prop_assert_eq!(cij, kernel_entry(&spec, j, i).unwrap());
        prop_assert!(cij >= 0.0);
    }

    #[test]
    fn kernel_factorization_exact(spec in kernel_spec()) {
        let k = build_kernel(spec).unwrap();
        let m = spec.size.min(64);
        let mut max_c: f64 = 0.0;
        let mut max_d: f64 = 0.0;
        for i in 1..=m {
            for j in 1..=m {
                let c = kernel_entry(&spec, i, j).unwrap();
                max_c = max_c.max(c.abs());
                max_d = max_d.max((k.reconstruct(i, j) - c).abs());
            }
        }
        prop_assert!(max_d <= 1e-12 * max_c, "defect {max_d} vs max {max_c}");
    }

    #[test]
    fn fast_rhs_matches_direct(spec in kernel_spec(), seed in any::<u64>(), rate in 0.0f64..2.0) {
        let n = spec.size;
        let y: Vec<f64> = (0..n).map(|k| ((seed >> (k % 60)) as f64 * 1e-3 + k as f64).sin().abs()).collect();
        let j = SourceVector::monomer(n, rate).unwrap();
        let fast = rhs_fast(&build_kernel(spec).unwrap(), &j, &y).unwrap();
        let direct = rhs_direct(&dense_kernel(&spec).unwrap(), &j, &y).unwrap();
        prop_assert!(rel(&fast, &direct) <= 1e-10);
    }

    #[test]
    fn mass_identity_per_call(spec in kernel_spec(), rate in 0.0f64..2.0, y in state(199)) {
        let n = spec.size;
        let y = &y[..n.min(y.len())];
        prop_assume!(y.len() == n);
        let k = build_kernel(spec).unwrap();
        let j = SourceVector::monomer(n, rate).unwrap();
        let f = rhs_direct(&dense_kernel(&spec).unwrap(), &j, y).unwrap();
        let flux = mass_flux_out(&k, y).unwrap();
        let lhs = moment(&f, 1);
        let rhs = j.mass_rate() - flux;
        // Relative to the gross throughput: the net rate can cancel to zero.
        let gross = j.mass_rate() + flux + moment(&f.iter().map(|x| x.abs()).collect::<Vec<_>>(), 1);
        prop_assert!((lhs - rhs).abs() <= 1e-10 * gross.max(f64::MIN_POSITIVE));
    }

    #[test]
    fn snapshot_basis_orthonormal(s in matrix(40, 6), delta in 1e-10f64..1.0) {
        let snaps = SnapshotMatrix::new(s, (0..6).map(f64::from).collect()).unwrap();
        let v = snapshot_basis(&snaps, delta).unwrap();
        prop_assert!(v.orthonormality_defect() <= 1e-12);
        prop_assert!(v.rank() <= 6);
    }

    #[test]
    fn merge_contains_inputs(a in matrix(30, 4), b in matrix(30, 5), delta in 1e-13f64..1e-3) {
        let qa = ReductionBasis::from_matrix(a.qr().q(), 1e-10).unwrap();
        let qb = ReductionBasis::from_matrix(b.qr().q(), 1e-10).unwrap();
        let m = merge_bases(&qa, &qb, delta).unwrap();
        prop_assert!(m.orthonormality_defect() <= 1e-12);
        let mut joined = DMatrix::zeros(30, qa.rank() + qb.rank());
        joined.columns_mut(0, qa.rank()).copy_from(qa.matrix());
        joined.columns_mut(qa.rank(), qb.rank()).copy_from(qb.matrix());
        prop_assert!(projection_error(&m, &joined).unwrap() <= delta + 1e-12);
    }

    #[test]
    fn merge_idempotent(a in matrix(25, 5), delta in 1e-13f64..1.0) {
        let v = ReductionBasis::from_matrix(a.qr().q(), 1e-10).unwrap();
        let m = merge_bases(&v, &v, delta).unwrap();
        prop_assert_eq!(m.rank(), v.rank());
        prop_assert!(projection_error(&m, v.matrix()).unwrap() <= 1e-12);
        prop_assert!(projection_error(&v, m.matrix()).unwrap() <= 1e-12);
    }

    #[test]
    fn projector_pythagoras(seed in any::<u64>(), w in prop::collection::vec(-1.0f64..1.0, 50), r in 0usize..20) {
        let v = random_orthonormal_basis(50, r, seed).unwrap();
        let x = project(&v, &w).unwrap();
        let p = lift(&v, &x).unwrap();
        let perp: f64 = w.iter().zip(&p).map(|(a, b)| (a - b).powi(2)).sum();
        let par: f64 = p.iter().map(|a| a * a).sum();
        let total: f64 = w.iter().map(|a| a * a).sum();
        prop_assert!((perp + par - total).abs() <= 1e-10 * total.max(1.0));
        // Projection never increases the 2-norm.
        let xn: f64 = x.iter().map(|a| a * a).sum();
        prop_assert!(xn.sqrt() <= total.sqrt() * (1.0 + 1e-12));
    }

    #[test]
    fn reduced_tensor_symmetric(spec in kernel_spec(), seed in any::<u64>(), r in 1usize..6) {
        prop_assume!(spec.size >= r);
        let v = random_orthonormal_basis(spec.size, r, seed).unwrap();
        let t = build_reduced_tensor(&build_kernel(spec).unwrap(), &v).unwrap();
        prop_assert!(t.max_asymmetry() <= 1e-12 * t.max_abs().max(f64::MIN_POSITIVE));
    }

    #[test]
    fn midpoint_linear_in_initial_state(
        a in matrix(5, 5),
        y0 in prop::collection::vec(-1.0f64..1.0, 5),
        scale in -3.0f64..3.0,
    ) {
        let cfg = IntegratorConfig::new(0.125, 0.0, 1.0).unwrap();
        let solve = |y: &[f64]| {
            let mut f = |y: &[f64], dy: &mut [f64]| {
                let r = &a * DVector::from_column_slice(y);
                dy.copy_from_slice(r.as_slice());
            };
            integrate(&mut f, y, &cfg, &[]).unwrap().last().unwrap().1.to_vec()
        };
        let scaled: Vec<f64> = y0.iter().map(|v| v * scale).collect();
        let lhs = solve(&scaled);
        let rhs: Vec<f64> = solve(&y0).iter().map(|v| v * scale).collect();
        for (p, q) in lhs.iter().zip(&rhs) {
            prop_assert!((p - q).abs() <= 1e-12 * (1.0 + q.abs()));
        }
    }
}

#[test]
fn integration_is_deterministic() {
    let spec = KernelSpec::brownian(0.7, 128);
    let cfg = IntegratorConfig::new(1.0 / 64.0, 0.0, 4.0).unwrap();
    let run = || {
        let mut rhs = FastRhs::new(build_kernel(spec).unwrap(), SourceVector::monomer(128, 1.0).unwrap()).unwrap();
        integrate(&mut rhs, &vec![0.0; 128], &cfg, &[1.0, 2.0, 3.0]).unwrap()
    };
    let (a, b) = (run(), run());
    assert_eq!(a.times, b.times);
    for (x, y) in a.states.iter().zip(&b.states) {
        assert!(x.iter().zip(y).all(|(p, q)| p.to_bits() == q.to_bits()));
    }
}

#[test]
fn greedy_trace_invariants() {
    let n = 96;
    let spec = KernelSpec::brownian(0.6, n);
    let mut rhs = FastRhs::new(build_kernel(spec).unwrap(), SourceVector::monomer(n, 1.0).unwrap()).unwrap();
    let cfg = GreedyConfig {
        tau: 1.0,
        snapshots: 9,
        max_windows: 12,
        dt: 1.0 / 64.0,
        ..GreedyConfig::default()
    };
    let res = build_basis(&mut rhs, &StateVector::zeros(n), &cfg).unwrap();
    let w = &res.trace.windows;
    assert!(!w.is_empty() && w.len() <= cfg.max_windows);
    let mut prev = 0;
    for (k, rec) in w.iter().enumerate() {
        assert_eq!(rec.index, k + 1);
        assert!(rec.basis_size >= prev, "basis shrank at window {}", rec.index);
        prev = rec.basis_size;
        let terminal = res.terminated && k + 1 == w.len();
        assert_eq!(rec.merged, !terminal && rec.projection_error > cfg.eps_prime);
        if rec.projection_error <= cfg.eps_prime {
            assert!(!rec.merged);
        }
        if let Some(resid) = rec.merge_residual {
            assert!(resid <= cfg.delta + 1e-12, "window {} merge residual {resid}", rec.index);
        }
        assert!(rec.snapshot_orthonormality <= 1e-12 && rec.basis_orthonormality <= 1e-12);
    }
    assert_eq!(res.t_basis, w.len() as f64 * cfg.tau);
    assert_eq!(res.basis.rank(), w.last().unwrap().basis_size);
}
