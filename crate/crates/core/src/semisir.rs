//! Semi-supervised sliced inverse regression.
//!
//! Labeled points are sorted by response and cut into contiguous slices.
//! Within every slice a localized weight matrix links each point to its
//! nearest slice-mates, giving the between-slice operator `X^T Omega`. The
//! within-slice side `X^T (I_l + alpha L) X` adds a kNN graph Laplacian over
//! labeled and unlabeled points, factored as `X^T M M^T X`.
//!
//! The generalized eigenproblem
//!
//! ```text
//! X^T Omega Omega^T X b = lambda X^T M M^T X b
//! ```
//!
//! is solved in two stages: a randomized SVD `X^T Omega = U1 S1 V1^T`
//! reduces it to the small matrix `A = S1^-1 U1^T X^T M`, whose smallest
//! singular values correspond to the largest `lambda`. The embedding is
//! `U1 S1^-1 U2`, transposed to `r x d` and row-orthonormalized.

use log::warn;
use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::linalg::{
    cholesky_jittered, dense_svd, gaussian_matrix, knn_indices, orthonormalize_rows,
    randomized_svd, row_orthonormality_error, Matrix, Vector,
};
use crate::mapping::{zonotope_box, SearchBox};

/// Singular values of `X^T Omega` below this fraction of the largest are
/// treated as numerically zero.
pub const RANK_TOL: f64 = 1e-10;

/// Labeled points partitioned into slices of (nearly) equal size along the
/// ascending order of their responses.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SliceAssignment {
    pub slice_count: usize,
    /// Slice id of every labeled point, in input order.
    pub membership: Vec<usize>,
    /// Member indices of every slice, in ascending response order.
    pub slices: Vec<Vec<usize>>,
}

/// Sorts `y` (stable) and cuts it into `h` contiguous slices whose sizes
/// differ by at most one; the leading slices take the remainder.
pub fn make_slices(y: &[f64], h: usize) -> Result<SliceAssignment> {
    let n = y.len();
    if h < 2 {
        return invalid(format!("make_slices: need at least 2 slices, got {h}"));
    }
    if n < h {
        return invalid(format!(
            "make_slices: {n} labeled points cannot fill {h} slices"
        ));
    }
    if y.iter().any(|v| v.is_nan()) {
        return invalid("make_slices: NaN response");
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| y[a].total_cmp(&y[b]));

    let base = n / h;
    let extra = n % h;
    let mut slices = Vec::with_capacity(h);
    let mut membership = vec![0; n];
    let mut start = 0;
    for s in 0..h {
        let size = base + usize::from(s < extra);
        let members = order[start..start + size].to_vec();
        for &i in &members {
            membership[i] = s;
        }
        slices.push(members);
        start += size;
    }
    Ok(SliceAssignment {
        slice_count: h,
        membership,
        slices,
    })
}

fn select_rows(x: &Matrix, rows: &[usize]) -> Matrix {
    Matrix::from_fn(rows.len(), x.ncols(), |i, j| x[(rows[i], j)])
}

/// Localized slice weights over `n_l + n_unlabeled` points.
///
/// For a point `j` of slice `h`, its neighbor set is `j` itself plus its
/// `min(k, n_h - 1)` nearest slice-mates; `Omega[i, j] = 1 / k_h` for every
/// `i` in that set, where `k_h` counts all (neighbor, point) pairs of the
/// slice. Rows and columns of unlabeled points are zero.
pub fn build_omega(
    x_l: &Matrix,
    slices: &SliceAssignment,
    k: usize,
    n_unlabeled: usize,
) -> Result<Matrix> {
    let n_l = x_l.nrows();
    if k == 0 {
        return invalid("build_omega: k must be at least 1");
    }
    if slices.membership.len() != n_l {
        return invalid(format!(
            "build_omega: {} slice memberships for {n_l} labeled points",
            slices.membership.len()
        ));
    }
    let n = n_l + n_unlabeled;
    let mut omega = Matrix::zeros(n, n);
    for members in &slices.slices {
        let n_h = members.len();
        if n_h == 0 {
            continue;
        }
        let neighbors: Vec<Vec<usize>> = if n_h == 1 {
            vec![Vec::new()]
        } else {
            knn_indices(&select_rows(x_l, members), k.min(n_h - 1))?
        };
        let pairs: usize = neighbors.iter().map(|nb| nb.len() + 1).sum();
        let w = 1.0 / pairs as f64;
        for (local_j, nb) in neighbors.iter().enumerate() {
            let j = members[local_j];
            omega[(j, j)] = w;
            for &local_i in nb {
                omega[(members[local_i], j)] = w;
            }
        }
    }
    Ok(omega)
}

/// Graph Laplacian `D - S` of the symmetrized kNN adjacency over all rows.
pub fn graph_laplacian(points: &Matrix, k: usize) -> Result<Matrix> {
    let n = points.nrows();
    let neighbors = knn_indices(points, k)?;
    let mut lap = Matrix::zeros(n, n);
    for (j, nb) in neighbors.iter().enumerate() {
        for &i in nb {
            lap[(i, j)] = -1.0;
            lap[(j, i)] = -1.0;
        }
    }
    for i in 0..n {
        let degree: f64 = -(0..n).filter(|&j| j != i).map(|j| lap[(i, j)]).sum::<f64>();
        lap[(i, i)] = degree;
    }
    Ok(lap)
}

/// Factor `M` with `M M^T = I_l + alpha L`, where `I_l` is the identity on
/// the first `n_l` points and zero on the rest.
///
/// `k` is reduced to `n - 1` when there are too few points.
pub fn within_factor(points: &Matrix, k: usize, alpha: f64, n_l: usize) -> Result<Matrix> {
    let n = points.nrows();
    if n_l > n {
        return invalid(format!("within_factor: n_l = {n_l} exceeds n = {n}"));
    }
    if !(alpha >= 0.0 && alpha.is_finite()) {
        return invalid(format!(
            "within_factor: alpha = {alpha} must be finite and >= 0"
        ));
    }
    let mut target = Matrix::zeros(n, n);
    if alpha > 0.0 && n > 1 {
        target = graph_laplacian(points, k.min(n - 1))? * alpha;
    }
    for i in 0..n_l {
        target[(i, i)] += 1.0;
    }
    let (m, jitter) = cholesky_jittered(&target, 0.0)?;
    if jitter > 0.0 {
        log::debug!("within_factor: Cholesky needed jitter {jitter:e}");
    }
    Ok(m)
}

/// `X^T M` for the (already centered) data `x`, labeled rows first.
pub fn build_laplacian_operator(x: &Matrix, k: usize, alpha: f64, n_l: usize) -> Result<Matrix> {
    Ok(x.tr_mul(&within_factor(x, k, alpha, n_l)?))
}

/// The two `d x n` operators of the generalized eigenproblem.
#[derive(Debug, Clone)]
pub struct ScatterOperators {
    /// `X^T Omega`; columns of unlabeled points are zero.
    pub xt_omega: Matrix,
    /// `X^T M`.
    pub xt_m: Matrix,
    /// Mean of all (labeled and unlabeled) points used for centering.
    pub centering_mean: Vector,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SemiSirParams {
    /// Embedding dimension.
    pub r: usize,
    /// Number of slices; `None` uses `min(5, n_l / 2)`.
    pub slices: Option<usize>,
    /// Neighbors for the slice weights and the graph Laplacian.
    pub neighbors: usize,
    /// Laplacian regularization weight.
    pub alpha: f64,
    /// Rank of the randomized SVD of `X^T Omega`; `None` uses `min(d, n_l)`.
    pub sketch_rank: Option<usize>,
    pub oversampling: usize,
    pub power_iters: usize,
}

impl Default for SemiSirParams {
    fn default() -> Self {
        SemiSirParams {
            r: 2,
            slices: None,
            neighbors: 7,
            alpha: 1.0,
            sketch_rank: None,
            oversampling: 10,
            power_iters: 2,
        }
    }
}

impl SemiSirParams {
    pub fn slice_count(&self, n_l: usize) -> usize {
        self.slices.unwrap_or_else(|| 5.min(n_l / 2))
    }
}

/// Learned projection `z = B x` with orthonormal rows.
#[derive(Debug, Clone)]
pub struct EmbeddingModel {
    /// `r x d`.
    pub b: Matrix,
    pub r: usize,
    pub d: usize,
    pub alpha: f64,
    pub search_box: SearchBox,
    /// Number of updates of `B` so far (0 for the initial embedding).
    pub generation: usize,
    pub centering_mean: Vector,
    /// Numerical rank of `X^T Omega` seen by the solver.
    pub numerical_rank: usize,
    /// Generalized eigenvalues of the learned directions (descending);
    /// `inf` where the within-slice scatter vanishes.
    pub eigenvalues: Vec<f64>,
}

impl EmbeddingModel {
    /// Wraps a fixed projection (random or hand-built) with orthonormal rows.
    pub fn from_matrix(b: Matrix, generation: usize) -> Result<Self> {
        let err = row_orthonormality_error(&b);
        if err > 1e-8 {
            return invalid(format!(
                "embedding rows are not orthonormal (deviation {err:e})"
            ));
        }
        let search_box = zonotope_box(&b);
        let (r, d) = b.shape();
        Ok(EmbeddingModel {
            b,
            r,
            d,
            alpha: 0.0,
            search_box,
            generation,
            centering_mean: Vector::zeros(d),
            numerical_rank: r,
            eigenvalues: Vec::new(),
        })
    }

    pub fn project(&self, x: &Vector) -> Vector {
        &self.b * x
    }
}

fn center(x: &Matrix) -> (Matrix, Vector) {
    let n = x.nrows() as f64;
    let mean = Vector::from_iterator(x.ncols(), x.column_iter().map(|c| c.sum() / n));
    let mut centered = x.clone();
    for mut row in centered.row_iter_mut() {
        row -= mean.transpose();
    }
    (centered, mean)
}

fn stack_rows(top: &Matrix, bottom: &Matrix) -> Matrix {
    let d = top.ncols();
    let mut out = Matrix::zeros(top.nrows() + bottom.nrows(), d);
    out.rows_mut(0, top.nrows()).copy_from(top);
    out.rows_mut(top.nrows(), bottom.nrows()).copy_from(bottom);
    out
}

fn check_inputs(x_l: &Matrix, y_l: &[f64], x_u: &Matrix) -> Result<()> {
    if x_l.nrows() != y_l.len() {
        return invalid(format!(
            "semisir: {} labeled points but {} responses",
            x_l.nrows(),
            y_l.len()
        ));
    }
    if x_u.nrows() > 0 && x_u.ncols() != x_l.ncols() {
        return invalid("semisir: labeled and unlabeled points differ in dimension");
    }
    if x_l.ncols() == 0 {
        return invalid("semisir: zero-dimensional input");
    }
    if x_l.iter().chain(x_u.iter()).any(|v| !v.is_finite()) || y_l.iter().any(|v| !v.is_finite()) {
        return invalid("semisir: non-finite input");
    }
    Ok(())
}

/// Builds `X^T Omega` and `X^T M` from labeled and unlabeled points.
pub fn build_scatter(
    x_l: &Matrix,
    y_l: &[f64],
    x_u: &Matrix,
    params: &SemiSirParams,
) -> Result<ScatterOperators> {
    check_inputs(x_l, y_l, x_u)?;
    let n_l = x_l.nrows();
    let n_u = x_u.nrows();
    let d = x_l.ncols();
    let h = params.slice_count(n_l);
    let slices = make_slices(y_l, h)?;

    let x_all = if n_u > 0 {
        stack_rows(x_l, x_u)
    } else {
        x_l.clone()
    };
    let (x, mean) = center(&x_all);
    let xc_l = x.rows(0, n_l).into_owned();

    // Only the labeled block of Omega is non-zero.
    let omega_l = build_omega(x_l, &slices, params.neighbors, 0)?;
    let mut xt_omega = Matrix::zeros(d, n_l + n_u);
    xt_omega
        .columns_mut(0, n_l)
        .copy_from(&xc_l.tr_mul(&omega_l));

    let xt_m = build_laplacian_operator(&x, params.neighbors, params.alpha, n_l)?;
    Ok(ScatterOperators {
        xt_omega,
        xt_m,
        centering_mean: mean,
    })
}

/// Learns an `r x d` embedding from labeled points `(x_l, y_l)` and
/// unlabeled points `x_u` (which may have zero rows).
pub fn solve_embedding(
    x_l: &Matrix,
    y_l: &[f64],
    x_u: &Matrix,
    params: &SemiSirParams,
    seed: u64,
) -> Result<EmbeddingModel> {
    check_inputs(x_l, y_l, x_u)?;
    let n_l = x_l.nrows();
    let d = x_l.ncols();
    let n = n_l + x_u.nrows();
    let r = params.r;
    if r == 0 || r > d.min(n) {
        return invalid(format!(
            "solve_embedding: r = {r} must lie in 1..={}",
            d.min(n)
        ));
    }
    let h = params.slice_count(n_l);
    if h < 2 || n_l < h {
        return invalid(format!(
            "solve_embedding: {n_l} labeled points are too few for {h} slices"
        ));
    }

    let ops = build_scatter(x_l, y_l, x_u, params)?;
    let sketch = params.sketch_rank.unwrap_or(d.min(n_l)).clamp(r, d.min(n));
    let svd1 = randomized_svd(
        &ops.xt_omega,
        sketch,
        params.oversampling,
        params.power_iters,
        seed,
    )?;
    let s_max = svd1.s.get(0).copied().unwrap_or(0.0);
    let rank = svd1
        .s
        .iter()
        .take_while(|&&s| s > RANK_TOL * s_max && s > 0.0)
        .count();
    if rank < sketch {
        warn!(
            "between-slice operator has numerical rank {rank} < sketch rank {sketch}; truncating"
        );
    }

    let mut columns: Vec<Vector> = Vec::with_capacity(r);
    let mut eigenvalues = Vec::with_capacity(r);
    if rank > 0 {
        let svd1 = svd1.truncate(rank);
        let inv_s = svd1.s.map(|s| 1.0 / s);
        // A = S1^-1 U1^T X^T M
        let mut a = svd1.u.tr_mul(&ops.xt_m);
        for (i, mut row) in a.row_iter_mut().enumerate() {
            row *= inv_s[i];
        }
        let svd2 = dense_svd(&a)?;
        let available = svd2.s.len();
        // Smallest singular values of A give the largest generalized eigenvalues.
        for idx in (0..available).rev().take(r) {
            let e = svd2.u.column(idx);
            let col = &svd1.u * e.component_mul(&inv_s);
            columns.push(col);
            let s2 = svd2.s[idx];
            eigenvalues.push(if s2 > 0.0 {
                1.0 / (s2 * s2)
            } else {
                f64::INFINITY
            });
        }
    }
    if columns.len() < r {
        warn!(
            "semi-SIR found only {} of {r} directions; completing with random directions",
            columns.len()
        );
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_c0de);
        let fill = gaussian_matrix(d, r - columns.len(), &mut rng);
        columns.extend(fill.column_iter().map(|c| c.into_owned()));
    }

    let b_cols = DMatrix::from_columns(&columns);
    let b = orthonormalize_rows(&b_cols.transpose());
    if b.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical {
            message: "semi-SIR produced a non-finite embedding".into(),
            jitter: 0.0,
        });
    }
    let search_box = zonotope_box(&b);
    Ok(EmbeddingModel {
        b,
        r,
        d,
        alpha: params.alpha,
        search_box,
        generation: 0,
        centering_mean: ops.centering_mean,
        numerical_rank: rank,
        eigenvalues,
    })
}
