//! Snapshot SVD bases, the thresholded merge, projection error and the
//! projection / lift maps.
//!
//! All truncation uses an absolute singular-value threshold `delta`: a left
//! singular vector is kept iff its singular value is `≥ delta`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};

/// Column `j` is the state at `times[j]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SnapshotMatrix {
    data: DMatrix<f64>,
    times: Vec<f64>,
}

impl SnapshotMatrix {
    pub fn new(data: DMatrix<f64>, times: Vec<f64>) -> Result<Self> {
        if data.ncols() == 0 {
            return Err(Error::validation("snapshot matrix needs at least one column"));
        }
        check_len("snapshot times", times.len(), data.ncols())?;
        Ok(Self { data, times })
    }

    pub fn from_columns(columns: &[Vec<f64>], times: Vec<f64>) -> Result<Self> {
        let rows = columns.first().map_or(0, Vec::len);
        if columns.iter().any(|c| c.len() != rows) {
            return Err(Error::validation("snapshot columns differ in length"));
        }
        let data = DMatrix::from_fn(rows, columns.len(), |i, j| columns[j][i]);
        Self::new(data, times)
    }

    pub fn data(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }
}

/// Provenance of a basis.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct BasisMeta {
    /// Singular-value threshold used for the last truncation.
    pub delta: f64,
    /// Time windows whose snapshots contributed, in order.
    pub windows: Vec<(f64, f64)>,
}

/// Orthonormal columns spanning a reduced space. `rank() == 0` is the empty basis.
#[derive(Debug, Clone, PartialEq)]
pub struct ReductionBasis {
    v: DMatrix<f64>,
    pub meta: BasisMeta,
}

impl ReductionBasis {
    pub fn empty(dim: usize) -> Self {
        Self {
            v: DMatrix::zeros(dim, 0),
            meta: BasisMeta::default(),
        }
    }

    /// Wraps `v` after checking orthonormality to `tol` in Frobenius norm.
    pub fn from_matrix(v: DMatrix<f64>, tol: f64) -> Result<Self> {
        let basis = Self {
            v,
            meta: BasisMeta::default(),
        };
        let defect = basis.orthonormality_defect();
        if !(defect <= tol) {
            return Err(Error::validation(format!(
                "basis columns are not orthonormal: ||VᵀV - I||_F = {defect:e}"
            )));
        }
        Ok(basis)
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.v
    }

    /// Full-system dimension `N`.
    pub fn dim(&self) -> usize {
        self.v.nrows()
    }

    pub fn rank(&self) -> usize {
        self.v.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.rank() == 0
    }

    /// `‖VᵀV − I‖_F`.
    pub fn orthonormality_defect(&self) -> f64 {
        let mut g = self.v.tr_mul(&self.v);
        for i in 0..g.nrows() {
            g[(i, i)] -= 1.0;
        }
        g.norm()
    }
}

/// Left singular vectors and singular values of `a`, by decreasing singular
/// value, from LAPACK `dgesvd`.
fn left_svd(a: &DMatrix<f64>, want_vectors: bool) -> Result<(Option<DMatrix<f64>>, Vec<f64>)> {
    let (rows, cols) = a.shape();
    let k = rows.min(cols);
    if k == 0 {
        return Ok((Some(DMatrix::zeros(rows, 0)), Vec::new()));
    }
    let dim = |x: usize| {
        i32::try_from(x).map_err(|_| Error::Decomposition(format!("dimension {x} exceeds LAPACK limits")))
    };
    let (m, n) = (dim(rows)?, dim(cols)?);
    let (jobu, ldu, u_len) = if want_vectors { (b'S', m, rows * k) } else { (b'N', 1, 1) };
    let mut data = a.as_slice().to_vec();
    let mut sigma = vec![0.0; k];
    let mut u = vec![0.0; u_len];
    let mut vt = [0.0; 1];
    let mut info = 0;
    let mut query = [0.0];
    // SAFETY: buffers are sized for the column-major layout LAPACK expects.
    unsafe {
        lapack::dgesvd(
            jobu, b'N', m, n, &mut data, m, &mut sigma, &mut u, ldu, &mut vt, 1, &mut query, -1, &mut info,
        );
    }
    let mut work = vec![0.0; (query[0] as usize).max(1)];
    let lwork = dim(work.len())?;
    if info == 0 {
        unsafe {
            lapack::dgesvd(
                jobu, b'N', m, n, &mut data, m, &mut sigma, &mut u, ldu, &mut vt, 1, &mut work, lwork, &mut info,
            );
        }
    }
    match info {
        0 => {}
        i if i > 0 => return Err(Error::Decomposition(format!("SVD did not converge ({i} superdiagonals)"))),
        i => return Err(Error::Decomposition(format!("dgesvd rejected argument {}", -i))),
    }
    let u = want_vectors.then(|| DMatrix::from_vec(rows, k, u));
    Ok((u, sigma))
}

/// Flips each column so its largest-magnitude entry (first one on ties) is positive.
fn fix_signs(v: &mut DMatrix<f64>) {
    for mut col in v.column_iter_mut() {
        let mut best = 0;
        for (i, x) in col.iter().enumerate() {
            if x.abs() > col[best].abs() {
                best = i;
            }
        }
        if col.len() > 0 && col[best] < 0.0 {
            col.neg_mut();
        }
    }
}

fn check_delta(delta: f64) -> Result<()> {
    if !(delta.is_finite() && delta > 0.0) {
        return Err(Error::validation(format!(
            "singular-value threshold must be positive, got {delta}"
        )));
    }
    Ok(())
}

/// Leading left singular vectors of `a` whose singular values are `≥ delta`.
fn truncated_left_basis(a: &DMatrix<f64>, delta: f64) -> Result<DMatrix<f64>> {
    let (u, sigma) = left_svd(a, true)?;
    let keep = sigma.iter().take_while(|&&s| s >= delta).count();
    let mut v = u.expect("vectors requested").columns(0, keep).into_owned();
    fix_signs(&mut v);
    Ok(v)
}

/// POD basis of one set of snapshots. All singular values below `delta`
/// gives the empty basis.
pub fn snapshot_basis(snapshots: &SnapshotMatrix, delta: f64) -> Result<ReductionBasis> {
    check_delta(delta)?;
    let v = truncated_left_basis(snapshots.data(), delta)?;
    let times = snapshots.times();
    Ok(ReductionBasis {
        v,
        meta: BasisMeta {
            delta,
            windows: vec![(times[0], times[times.len() - 1])],
        },
    })
}

/// Leading left singular vectors of `(A | B)` with singular value `≥ delta`.
pub fn merge_bases(a: &ReductionBasis, b: &ReductionBasis, delta: f64) -> Result<ReductionBasis> {
    check_delta(delta)?;
    check_len("merged basis dimension", b.dim(), a.dim())?;
    let mut joined = DMatrix::zeros(a.dim(), a.rank() + b.rank());
    joined.columns_mut(0, a.rank()).copy_from(&a.v);
    joined.columns_mut(a.rank(), b.rank()).copy_from(&b.v);
    let v = truncated_left_basis(&joined, delta)?;
    let mut windows = a.meta.windows.clone();
    windows.extend(b.meta.windows.iter().copied());
    Ok(ReductionBasis {
        v,
        meta: BasisMeta { delta, windows },
    })
}

/// `(I − VVᵀ) w`, applied twice to suppress rounding left in span V.
fn project_out(v: &DMatrix<f64>, w: &DMatrix<f64>) -> DMatrix<f64> {
    let mut p = w.clone();
    if v.ncols() == 0 {
        return p;
    }
    for _ in 0..2 {
        let coeffs = v.tr_mul(&p);
        p.gemm(-1.0, v, &coeffs, 1.0);
    }
    p
}

/// Spectral norm `‖(I − VVᵀ) W‖₂`.
pub fn projection_error(basis: &ReductionBasis, w: &DMatrix<f64>) -> Result<f64> {
    check_len("projected matrix rows", w.nrows(), basis.dim())?;
    let p = project_out(&basis.v, w);
    let (_, sigma) = left_svd(&p, false)?;
    Ok(sigma.first().copied().unwrap_or(0.0))
}

/// Reduced coordinates `x = Vᵀ n`.
pub fn project(basis: &ReductionBasis, n: &[f64]) -> Result<Vec<f64>> {
    check_len("state", n.len(), basis.dim())?;
    let x = basis.v.tr_mul(&DVector::from_column_slice(n));
    Ok(x.as_slice().to_vec())
}

/// Full-space reconstruction `V x`.
pub fn lift(basis: &ReductionBasis, x: &[f64]) -> Result<Vec<f64>> {
    check_len("reduced state", x.len(), basis.rank())?;
    let n = &basis.v * DVector::from_column_slice(x);
    Ok(n.as_slice().to_vec())
}

/// Orthonormal basis spanning `rank` seeded pseudo-random directions.
pub fn random_orthonormal_basis(dim: usize, rank: usize, seed: u64) -> Result<ReductionBasis> {
    use rand::{RngExt, SeedableRng};
    if rank > dim {
        return Err(Error::validation(format!("cannot fit {rank} orthonormal vectors in dimension {dim}")));
    }
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let a = DMatrix::from_fn(dim, rank, |_, _| rng.random_range(-1.0..1.0));
    if rank == 0 {
        return Ok(ReductionBasis::empty(dim));
    }
    let q = a.qr().q();
    ReductionBasis::from_matrix(q, 1e-12)
}
