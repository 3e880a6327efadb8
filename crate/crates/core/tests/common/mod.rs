//! Independent reference implementations used by the integration tests.
//!
//! Nothing here calls into the library's numerical routines except for the
//! plain nalgebra types; every oracle is written the slow, obvious way.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub type Matrix = DMatrix<f64>;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| StandardNormal.sample(rng))
}

pub fn uniform(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
}

/// Exhaustive kNN: full sort of all pairwise distances, ties by index.
pub fn brute_knn(points: &Matrix, k: usize) -> Vec<Vec<usize>> {
    let n = points.nrows();
    (0..n)
        .map(|i| {
            let mut all: Vec<(f64, usize)> = (0..n)
                .filter(|&j| j != i)
                .map(|j| ((points.row(i) - points.row(j)).norm_squared(), j))
                .collect();
            all.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
            all.into_iter().take(k).map(|(_, j)| j).collect()
        })
        .collect()
}

/// Slices as consecutive runs of the stable argsort of `y`.
pub fn brute_slices(y: &[f64], h: usize) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..y.len()).collect();
    order.sort_by(|&a, &b| y[a].partial_cmp(&y[b]).unwrap());
    let n = y.len();
    let mut out = Vec::new();
    let mut start = 0;
    for s in 0..h {
        let size = n / h + usize::from(s < n % h);
        out.push(order[start..start + size].to_vec());
        start += size;
    }
    out
}

/// Localized between-slice scatter written as a sum of outer products of
/// localized slice sums: `sum_j m_j m_j^T` with
/// `m_j = (1/k_h) sum_{i in N(j)} x_i`.
pub fn localized_between_scatter(xc_l: &Matrix, slices: &[Vec<usize>], k: usize) -> Matrix {
    let d = xc_l.ncols();
    let mut sb = Matrix::zeros(d, d);
    for members in slices {
        let n_h = members.len();
        let sub = Matrix::from_fn(n_h, d, |i, j| xc_l[(members[i], j)]);
        let kk = k.min(n_h.saturating_sub(1));
        let nb = if n_h > 1 {
            brute_knn(&sub, kk)
        } else {
            vec![vec![]]
        };
        let pairs: usize = nb.iter().map(|v| v.len() + 1).sum();
        for (j, list) in nb.iter().enumerate() {
            let mut m = sub.row(j).transpose();
            for &i in list {
                m += sub.row(i).transpose();
            }
            m /= pairs as f64;
            sb += &m * m.transpose();
        }
    }
    sb
}

pub fn brute_laplacian(points: &Matrix, k: usize) -> Matrix {
    let n = points.nrows();
    let nb = brute_knn(points, k);
    let mut s = Matrix::zeros(n, n);
    for (j, list) in nb.iter().enumerate() {
        for &i in list {
            s[(i, j)] = 1.0;
            s[(j, i)] = 1.0;
        }
    }
    let mut l = -s.clone();
    for i in 0..n {
        l[(i, i)] = s.row(i).sum();
    }
    l
}

pub fn center_all(x_l: &Matrix, x_u: &Matrix) -> (Matrix, Matrix) {
    let n = (x_l.nrows() + x_u.nrows()) as f64;
    let d = x_l.ncols();
    let mut mean = DVector::zeros(d);
    for row in x_l.row_iter().chain(x_u.row_iter()) {
        mean += row.transpose();
    }
    mean /= n;
    let shift = |x: &Matrix| Matrix::from_fn(x.nrows(), d, |i, j| x[(i, j)] - mean[j]);
    (shift(x_l), shift(x_u))
}

/// Top-`r` generalized eigenvectors of `sb v = lambda c v` (c positive
/// definite) through the Cholesky-whitened symmetric problem.
pub fn generalized_top(sb: &Matrix, c: &Matrix, r: usize) -> (Matrix, Vec<f64>) {
    let l = c.clone().cholesky().expect("oracle: C must be PD").l();
    let l_inv = l.clone().try_inverse().unwrap();
    let whitened = &l_inv * sb * l_inv.transpose();
    let whitened = (&whitened + whitened.transpose()) * 0.5;
    let eig = SymmetricEigen::new(whitened);
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].partial_cmp(&eig.eigenvalues[a]).unwrap());
    let cols: Vec<DVector<f64>> = order[..r]
        .iter()
        .map(|&i| l_inv.transpose() * eig.eigenvectors.column(i))
        .collect();
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    (Matrix::from_columns(&cols), values)
}

/// Dense oracle for the semi-supervised SIR eigenproblem. Returns the
/// top-`r` directions as columns and all generalized eigenvalues.
pub fn semisir_oracle(
    x_l: &Matrix,
    y: &[f64],
    x_u: &Matrix,
    h: usize,
    k: usize,
    alpha: f64,
    r: usize,
) -> (Matrix, Vec<f64>) {
    let (xc_l, xc_u) = center_all(x_l, x_u);
    let n_l = x_l.nrows();
    let n_u = x_u.nrows();
    let n = n_l + n_u;
    let d = x_l.ncols();
    let slices = brute_slices(y, h);
    let sb = localized_between_scatter(&xc_l, &slices, k);

    let mut x = Matrix::zeros(n, d);
    for i in 0..n_l {
        x.set_row(i, &xc_l.row(i));
    }
    for i in 0..n_u {
        x.set_row(n_l + i, &xc_u.row(i));
    }
    let mut reg = Matrix::zeros(n, n);
    if alpha > 0.0 {
        reg = brute_laplacian(&x, k.min(n - 1)) * alpha;
    }
    for i in 0..n_l {
        reg[(i, i)] += 1.0;
    }
    let c = x.transpose() * reg * &x;
    generalized_top(&sb, &c, r)
}

/// Sine of the largest principal angle between the column spans of `a`
/// and `b` (equal numbers of columns).
pub fn max_principal_sine(a: &Matrix, b: &Matrix) -> f64 {
    let qa = a.clone().qr().q();
    let qb = b.clone().qr().q();
    let resid = &qb - &qa * (qa.transpose() * &qb);
    resid.singular_values().max()
}

/// Accelerated projected gradient on `||b x - z||^2` over the cube, run far
/// past convergence. The Frobenius norm bounds the gradient's Lipschitz
/// constant. Returns the residual norm.
pub fn projected_gradient_residual(b: &Matrix, z: &DVector<f64>, iters: usize) -> f64 {
    let lipschitz = 2.0 * b.norm_squared().max(1e-300);
    let step = 1.0 / lipschitz;
    let project = |mut v: DVector<f64>| {
        v.apply(|e| *e = e.clamp(-1.0, 1.0));
        v
    };
    let mut x = project(b.tr_mul(z));
    let mut y = x.clone();
    let mut momentum = 1.0f64;
    let mut best = f64::INFINITY;
    for _ in 0..iters {
        let grad = b.tr_mul(&(b * &y - z)) * 2.0;
        let next = project(&y - grad * step);
        let value = (b * &next - z).norm();
        best = best.min(value);
        let m_next = (1.0 + (1.0 + 4.0 * momentum * momentum).sqrt()) / 2.0;
        // Restart the momentum whenever the objective goes up.
        if value > (b * &x - z).norm() {
            momentum = 1.0;
            y = next.clone();
        } else {
            y = &next + (&next - &x) * ((momentum - 1.0) / m_next);
            momentum = m_next;
        }
        x = next;
    }
    best
}
