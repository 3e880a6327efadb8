//! Dense linear-algebra kernels: randomized and dense SVD, jittered
//! Cholesky, the pseudo-inverse action of an orthonormal-row matrix, and
//! exact k-nearest-neighbor search.
//!
//! Samples are stored as rows throughout the crate.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{invalid, Error, Result};

pub type Matrix = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Largest jitter the Cholesky escalation will try.
pub const MAX_JITTER: f64 = 1e-3;

/// Tolerance used to decide whether a matrix has orthonormal rows.
pub const ORTHONORMAL_TOL: f64 = 1e-6;

/// Thin singular value decomposition `a = u * diag(s) * v^T`.
#[derive(Debug, Clone)]
pub struct SvdResult {
    pub u: Matrix,
    /// Singular values, descending and non-negative.
    pub s: Vector,
    pub v: Matrix,
}

impl SvdResult {
    pub fn rank(&self) -> usize {
        self.s.len()
    }

    /// Keeps only the leading `k` triplets.
    pub fn truncate(self, k: usize) -> SvdResult {
        let k = k.min(self.s.len());
        SvdResult {
            u: self.u.columns(0, k).into_owned(),
            s: self.s.rows(0, k).into_owned(),
            v: self.v.columns(0, k).into_owned(),
        }
    }
}

fn check_finite(a: &Matrix, what: &str) -> Result<()> {
    if a.nrows() == 0 || a.ncols() == 0 {
        return invalid(format!("{what}: empty matrix"));
    }
    if a.iter().any(|v| !v.is_finite()) {
        return invalid(format!("{what}: non-finite entry"));
    }
    Ok(())
}

/// Exact thin SVD with singular values sorted in descending order.
pub fn dense_svd(a: &Matrix) -> Result<SvdResult> {
    check_finite(a, "dense_svd")?;
    let svd = a.clone().svd(true, true);
    let (u, v_t) = match (svd.u, svd.v_t) {
        (Some(u), Some(v_t)) => (u, v_t),
        _ => {
            return Err(Error::Numerical {
                message: "SVD did not produce singular vectors".into(),
                jitter: 0.0,
            })
        }
    };
    let s = svd.singular_values;
    let mut order: Vec<usize> = (0..s.len()).collect();
    order.sort_by(|&i, &j| s[j].total_cmp(&s[i]).then(i.cmp(&j)));
    let k = order.len();
    let mut uo = Matrix::zeros(a.nrows(), k);
    let mut vo = Matrix::zeros(a.ncols(), k);
    let mut so = Vector::zeros(k);
    for (dst, &src) in order.iter().enumerate() {
        uo.set_column(dst, &u.column(src));
        vo.set_column(dst, &v_t.row(src).transpose());
        so[dst] = s[src].max(0.0);
    }
    Ok(SvdResult {
        u: uo,
        s: so,
        v: vo,
    })
}

/// Orthonormal basis for the column space of `y` (thin Householder QR).
pub(crate) fn orthonormal_columns(y: &Matrix) -> Matrix {
    y.clone().qr().q()
}

/// Gaussian test matrix with entries drawn from a seeded ChaCha stream.
pub(crate) fn gaussian_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
    // Filled column-major, which fixes the draw order.
    Matrix::from_fn(rows, cols, |_, _| StandardNormal.sample(rng))
}

/// Randomized range-finder SVD with subspace (power) iterations.
///
/// A Gaussian sketch of width `target_rank + oversampling` (capped at
/// `min(rows, cols)`) captures the dominant column space of `a`; each power
/// iteration re-orthonormalizes both sides to keep the basis well
/// conditioned. The small projected matrix is decomposed densely and the
/// leading `target_rank` triplets are returned.
pub fn randomized_svd(
    a: &Matrix,
    target_rank: usize,
    oversampling: usize,
    power_iters: usize,
    seed: u64,
) -> Result<SvdResult> {
    check_finite(a, "randomized_svd")?;
    let (m, n) = a.shape();
    let max_rank = m.min(n);
    if target_rank == 0 || target_rank > max_rank {
        return invalid(format!(
            "randomized_svd: target rank {target_rank} must lie in 1..={max_rank}"
        ));
    }
    let width = (target_rank + oversampling).min(max_rank);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let omega = gaussian_matrix(n, width, &mut rng);

    let mut q = orthonormal_columns(&(a * omega));
    for _ in 0..power_iters {
        let w = orthonormal_columns(&a.tr_mul(&q));
        q = orthonormal_columns(&(a * w));
    }
    let small = q.tr_mul(a);
    let inner = dense_svd(&small)?;
    let u = &q * inner.u;
    Ok(SvdResult {
        u,
        s: inner.s,
        v: inner.v,
    }
    .truncate(target_rank))
}

/// Cholesky factor of `a + jitter * I`, returning the factor and the jitter
/// that succeeded.
///
/// When factorization fails the jitter is multiplied by 10 (a zero start
/// escalates to `1e-12`) until it exceeds [`MAX_JITTER`].
pub fn cholesky_jittered(a: &Matrix, jitter: f64) -> Result<(Matrix, f64)> {
    check_finite(a, "cholesky")?;
    if !a.is_square() {
        return invalid(format!("cholesky: matrix is {}x{}", a.nrows(), a.ncols()));
    }
    if !(jitter >= 0.0 && jitter.is_finite()) {
        return invalid(format!("cholesky: jitter {jitter} must be finite and >= 0"));
    }
    let scale = a.iter().fold(0.0f64, |acc, v| acc.max(v.abs())).max(1.0);
    let n = a.nrows();
    for i in 0..n {
        for j in 0..i {
            if (a[(i, j)] - a[(j, i)]).abs() > 1e-10 * scale {
                return invalid("cholesky: matrix is not symmetric");
            }
        }
    }
    let mut current = jitter;
    loop {
        let mut shifted = a.clone();
        for i in 0..n {
            shifted[(i, i)] += current;
        }
        if let Some(chol) = shifted.cholesky() {
            return Ok((chol.unpack(), current));
        }
        let next = if current == 0.0 {
            1e-12
        } else {
            current * 10.0
        };
        if next > MAX_JITTER * (1.0 + 1e-9) {
            return Err(Error::Numerical {
                message: "matrix is not positive definite".into(),
                jitter: current,
            });
        }
        current = next;
    }
}

/// Lower-triangular `m` with `m * m^T = a + jitter * I` (jitter escalated on
/// failure, see [`cholesky_jittered`]).
pub fn cholesky(a: &Matrix, jitter: f64) -> Result<Matrix> {
    cholesky_jittered(a, jitter).map(|(m, _)| m)
}

/// Largest absolute deviation of `b * b^T` from the identity.
pub fn row_orthonormality_error(b: &Matrix) -> f64 {
    let gram = b * b.transpose();
    let mut err = 0.0f64;
    for i in 0..gram.nrows() {
        for j in 0..gram.ncols() {
            let target = if i == j { 1.0 } else { 0.0 };
            err = err.max((gram[(i, j)] - target).abs());
        }
    }
    err
}

/// Moore-Penrose pseudo-inverse action `b^T z` for a matrix with
/// orthonormal rows.
pub fn pseudo_inverse_apply(b: &Matrix, z: &Vector) -> Result<Vector> {
    if z.len() != b.nrows() {
        return invalid(format!(
            "pseudo_inverse_apply: z has length {} but b has {} rows",
            z.len(),
            b.nrows()
        ));
    }
    let err = row_orthonormality_error(b);
    if err > ORTHONORMAL_TOL {
        return invalid(format!(
            "pseudo_inverse_apply: rows are not orthonormal (max deviation {err:e})"
        ));
    }
    Ok(b.tr_mul(z))
}

/// Orthonormalizes the rows of `b` (QR of `b^T`), preserving the span of
/// every leading block of rows.
pub fn orthonormalize_rows(b: &Matrix) -> Matrix {
    let q = orthonormal_columns(&b.transpose());
    let mut out = q.transpose();
    // Householder QR may flip signs; align each row with the input row.
    for i in 0..out.nrows() {
        if out.row(i).dot(&b.row(i)) < 0.0 {
            out.row_mut(i).neg_mut();
        }
    }
    out
}

/// Exact k-nearest neighbors (Euclidean) of every row of `points`.
///
/// The point itself is excluded; ties are broken by the lower index.
pub fn knn_indices(points: &Matrix, k: usize) -> Result<Vec<Vec<usize>>> {
    let n = points.nrows();
    if k >= n {
        return invalid(format!("knn_indices: k = {k} must be below n = {n}"));
    }
    let d = points.ncols();
    // Row-major copy so distance loops stream through memory.
    let rows: Vec<f64> = (0..n)
        .flat_map(|i| (0..d).map(move |j| (i, j)))
        .map(|(i, j)| points[(i, j)])
        .collect();
    let row = |i: usize| &rows[i * d..(i + 1) * d];

    let mut result = Vec::with_capacity(n);
    let mut cand: Vec<(f64, usize)> = Vec::with_capacity(n);
    for i in 0..n {
        cand.clear();
        let ri = row(i);
        for j in (0..n).filter(|&j| j != i) {
            let dist: f64 = ri.iter().zip(row(j)).map(|(a, b)| (a - b) * (a - b)).sum();
            cand.push((dist, j));
        }
        let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
        if k > 0 && k < cand.len() {
            cand.select_nth_unstable_by(k - 1, cmp);
        }
        cand.truncate(k);
        cand.sort_by(cmp);
        result.push(cand.iter().map(|&(_, j)| j).collect());
    }
    Ok(result)
}
