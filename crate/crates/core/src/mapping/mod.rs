//! Maps between the embedded space and the original cube `[-1, 1]^d`.
//!
//! The search box in the embedded space is the smallest axis-aligned box
//! around the zonotope `{B x : x in [-1, 1]^d}`. Two strategies keep the GP
//! training set consistent when `B` changes:
//!
//! * bottom-up keeps each stored `z`, maps it up with `B^T z` (clipped to the
//!   cube) and re-evaluates the objective there;
//! * top-down keeps each evaluated `(x, y)` and re-projects `z = B x`. New
//!   candidates are mapped up by solving `min ||B x - z||^2` over the cube.

pub mod cmaes;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::linalg::{Matrix, Vector};
use crate::objective::Objective;

pub use cmaes::{cmaes_minimize, CmaesOptions, CmaesResult};

/// Relative residual above which a top-down mapping is flagged.
pub const RESIDUAL_WARNING: f64 = 1e-3;

const POLISH_SWEEPS: usize = 2000;

/// Axis-aligned box `[lo, hi]` in the embedded space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchBox {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl SearchBox {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        if lo.len() != hi.len() || lo.is_empty() {
            return invalid("search box: bounds must be non-empty and of equal length");
        }
        if lo.iter().zip(&hi).any(|(l, h)| !(l < h)) {
            return invalid("search box: every dimension needs lo < hi");
        }
        Ok(SearchBox { lo, hi })
    }

    /// The cube `[-1, 1]^d`.
    pub fn cube(d: usize) -> Self {
        SearchBox {
            lo: vec![-1.0; d],
            hi: vec![1.0; d],
        }
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn contains(&self, z: &[f64]) -> bool {
        self.contains_with_tol(z, 0.0)
    }

    pub fn contains_with_tol(&self, z: &[f64], tol: f64) -> bool {
        z.len() == self.dim()
            && z.iter()
                .zip(self.lo.iter().zip(&self.hi))
                .all(|(v, (l, h))| *v >= l - tol && *v <= h + tol)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vector {
        Vector::from_iterator(
            self.dim(),
            self.lo
                .iter()
                .zip(&self.hi)
                .map(|(l, h)| l + (h - l) * rng.random::<f64>()),
        )
    }

    /// Linearly maps `z` from `from` onto the same relative position in
    /// `self`, dimension by dimension.
    pub fn rescale_from(&self, from: &SearchBox, z: &Vector) -> Vector {
        Vector::from_iterator(
            self.dim(),
            (0..self.dim()).map(|i| {
                let t = (z[i] - from.lo[i]) / (from.hi[i] - from.lo[i]);
                self.lo[i] + t * (self.hi[i] - self.lo[i])
            }),
        )
    }
}

/// Smallest box containing the zonotope `{b x : x in [-1, 1]^d}`: each
/// half-width is the L1 norm of the corresponding row of `b`.
pub fn zonotope_box(b: &Matrix) -> SearchBox {
    let hi: Vec<f64> = b
        .row_iter()
        .map(|row| row.iter().map(|v| v.abs()).sum())
        .collect();
    let lo = hi.iter().map(|h| -h).collect();
    SearchBox { lo, hi }
}

fn clip_to_cube(mut x: Vector) -> Vector {
    x.apply(|v| *v = v.clamp(-1.0, 1.0));
    x
}

/// Bottom-up mapping: `x = clip(b^T z)` into `[-1, 1]^d`.
pub fn bottom_up_map(b: &Matrix, z: &Vector) -> Result<Vector> {
    if z.len() != b.nrows() {
        return invalid(format!(
            "bottom_up_map: z has length {} but b has {} rows",
            z.len(),
            b.nrows()
        ));
    }
    Ok(clip_to_cube(b.tr_mul(z)))
}

/// One evaluated point of the GP training set, with the high-dimensional
/// point that produced its response.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingEntry {
    /// Stable identifier of the originating acquisition.
    pub id: usize,
    pub z: Vector,
    pub x: Vector,
    pub y: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainingSet {
    pub entries: Vec<TrainingEntry>,
}

impl TrainingSet {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn push(&mut self, entry: TrainingEntry) {
        self.entries.push(entry);
    }

    /// Entries with a finite response, as `(Z, y)` with one row per point.
    pub fn finite_zy(&self) -> (Matrix, Vec<f64>) {
        let finite: Vec<&TrainingEntry> = self.entries.iter().filter(|e| e.y.is_finite()).collect();
        let r = self.entries.first().map_or(0, |e| e.z.len());
        let z = Matrix::from_fn(finite.len(), r, |i, j| finite[i].z[j]);
        (z, finite.iter().map(|e| e.y).collect())
    }

    /// Entries with a finite response, as `(X, y)` with one row per point.
    pub fn finite_xy(&self) -> (Matrix, Vec<f64>) {
        let finite: Vec<&TrainingEntry> = self.entries.iter().filter(|e| e.y.is_finite()).collect();
        let d = self.entries.first().map_or(0, |e| e.x.len());
        let x = Matrix::from_fn(finite.len(), d, |i, j| finite[i].x[j]);
        (x, finite.iter().map(|e| e.y).collect())
    }

    pub fn best(&self) -> Option<&TrainingEntry> {
        self.entries
            .iter()
            .filter(|e| e.y.is_finite())
            .max_by(|a, b| a.y.total_cmp(&b.y).then(b.id.cmp(&a.id)))
    }
}

/// Re-maps every stored `z` under a new embedding and re-evaluates the
/// objective there.
///
/// Each `z` is first rescaled from `old_box` into the zonotope box of
/// `b_new`. Exactly `ts.len()` evaluations are made; the first failing
/// evaluation aborts the whole reconcile.
pub fn bottom_up_reconcile<O: Objective + ?Sized>(
    ts: &TrainingSet,
    old_box: &SearchBox,
    b_new: &Matrix,
    objective: &mut O,
) -> Result<TrainingSet> {
    let new_box = zonotope_box(b_new);
    if new_box.dim() != old_box.dim() {
        return invalid("bottom_up_reconcile: embedding dimension changed");
    }
    let mut out = TrainingSet::default();
    for entry in &ts.entries {
        let z = new_box.rescale_from(old_box, &entry.z);
        let x = bottom_up_map(b_new, &z)?;
        let y = objective.evaluate(x.as_slice())?;
        let y = if y.is_finite() { y } else { f64::NEG_INFINITY };
        out.push(TrainingEntry {
            id: entry.id,
            z,
            x,
            y,
        });
    }
    Ok(out)
}

/// Replaces every `z` by `b_new x`; no objective evaluations.
pub fn top_down_reconcile(ts: &TrainingSet, b_new: &Matrix) -> Result<TrainingSet> {
    let mut out = ts.clone();
    for entry in &mut out.entries {
        if entry.x.len() != b_new.ncols() {
            return invalid("top_down_reconcile: stored x does not match b_new");
        }
        entry.z = b_new * &entry.x;
    }
    Ok(out)
}

/// Result of a top-down mapping.
#[derive(Debug, Clone)]
pub struct TopDownMapping {
    pub x: Vector,
    /// `||b x - z||`.
    pub residual: f64,
    /// Objective evaluations spent by CMA-ES (0 on the closed-form path).
    pub solver_evaluations: usize,
    /// Residual exceeded `RESIDUAL_WARNING * ||z||`.
    pub warning: bool,
}

fn residual(b: &Matrix, x: &Vector, z: &Vector) -> f64 {
    (b * x - z).norm()
}

/// Cyclic exact coordinate minimization of `||b x - z||^2` over the cube.
fn coordinate_polish(b: &Matrix, z: &Vector, x: &mut Vector) {
    let col_norm2: Vec<f64> = b.column_iter().map(|c| c.norm_squared()).collect();
    let mut rho = b * &*x - z;
    for _ in 0..POLISH_SWEEPS {
        let mut largest = 0.0f64;
        for j in 0..x.len() {
            if col_norm2[j] == 0.0 {
                continue;
            }
            let col = b.column(j);
            let g = col.dot(&rho);
            let updated = (x[j] - g / col_norm2[j]).clamp(-1.0, 1.0);
            let delta = updated - x[j];
            if delta != 0.0 {
                rho.axpy(delta, &col, 1.0);
                x[j] = updated;
                largest = largest.max(delta.abs());
            }
        }
        if largest < 1e-15 {
            break;
        }
    }
}

/// Top-down mapping: a point of the cube minimizing `||b x - z||^2`.
///
/// When `b^T z` already lies in the cube it is an exact solution for
/// orthonormal-row `b` and is returned directly. Otherwise CMA-ES starts
/// from the clipped point, and its best point is finished by exact
/// coordinate minimization. A `budget` of 0 skips CMA-ES and runs the
/// coordinate minimization from the clipped point alone.
pub fn top_down_map(b: &Matrix, z: &Vector, budget: usize, seed: u64) -> Result<TopDownMapping> {
    if z.len() != b.nrows() {
        return invalid(format!(
            "top_down_map: z has length {} but b has {} rows",
            z.len(),
            b.nrows()
        ));
    }
    let x0 = b.tr_mul(z);
    if x0.iter().all(|v| (-1.0..=1.0).contains(v)) {
        let res = residual(b, &x0, z);
        return Ok(TopDownMapping {
            x: x0,
            residual: res,
            solver_evaluations: 0,
            warning: res > RESIDUAL_WARNING * z.norm(),
        });
    }

    let d = b.ncols();
    let start = clip_to_cube(x0);
    if budget == 0 {
        let mut x = start;
        coordinate_polish(b, z, &mut x);
        let res = residual(b, &x, z);
        return Ok(TopDownMapping {
            x,
            residual: res,
            solver_evaluations: 0,
            warning: res > RESIDUAL_WARNING * z.norm(),
        });
    }
    let scale = z.norm().max(1.0);
    let options = CmaesOptions {
        x0: Some(start.as_slice().to_vec()),
        target: (1e-12 * scale).powi(2),
        ..CmaesOptions::default()
    };
    let lo = vec![-1.0; d];
    let hi = vec![1.0; d];
    let found = cmaes_minimize(
        |x| {
            let xv = Vector::from_column_slice(x);
            (b * xv - z).norm_squared()
        },
        &lo,
        &hi,
        budget,
        seed,
        &options,
    )?;
    let mut x = Vector::from_vec(found.x);
    coordinate_polish(b, z, &mut x);
    let res = residual(b, &x, z);
    Ok(TopDownMapping {
        x,
        residual: res,
        solver_evaluations: found.evaluations,
        warning: res > RESIDUAL_WARNING * z.norm(),
    })
}
