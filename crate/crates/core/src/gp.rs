//! Gaussian-process regression with an isotropic Matérn-5/2 kernel.
//!
//! Hyperparameters (lengthscale, signal variance, noise variance) are fitted
//! by maximizing the log marginal likelihood with multi-start Nelder–Mead in
//! log space. The prior mean is the empirical mean of the responses.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::linalg::{cholesky_jittered, Matrix, Vector};

pub const NOISE_FLOOR: f64 = 1e-10;
pub const SIGNAL_FLOOR: f64 = 1e-6;

// Nelder–Mead stops once the simplex values agree to this relative
// tolerance or its vertices to this absolute (log-parameter) tolerance.
const F_TOL: f64 = 1e-9;
const X_TOL: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelParams {
    pub lengthscale: f64,
    pub signal_variance: f64,
    pub noise_variance: f64,
}

impl KernelParams {
    /// Data-driven starting point: half the widest input span, the sample
    /// variance of `y`, and a tiny relative noise.
    pub fn heuristic(z: &Matrix, y: &[f64]) -> KernelParams {
        let var = variance(y);
        let signal = if var > 0.0 { var } else { SIGNAL_FLOOR };
        KernelParams {
            lengthscale: 0.5 * input_span(z),
            signal_variance: signal,
            noise_variance: (1e-6 * signal).max(NOISE_FLOOR),
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.lengthscale > 0.0 && self.lengthscale.is_finite()) {
            return invalid(format!(
                "gp: lengthscale {} must be positive",
                self.lengthscale
            ));
        }
        if !(self.signal_variance > 0.0 && self.signal_variance.is_finite()) {
            return invalid(format!(
                "gp: signal variance {} must be positive",
                self.signal_variance
            ));
        }
        if !(self.noise_variance >= NOISE_FLOOR && self.noise_variance.is_finite()) {
            return invalid(format!(
                "gp: noise variance {} below {NOISE_FLOOR:e}",
                self.noise_variance
            ));
        }
        Ok(())
    }
}

/// Matérn-5/2 covariance at Euclidean distance `r`.
pub fn matern52(r: f64, params: &KernelParams) -> f64 {
    let s = 5f64.sqrt() * r / params.lengthscale;
    params.signal_variance * (1.0 + s + s * s / 3.0) * (-s).exp()
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

fn variance(y: &[f64]) -> f64 {
    let n = y.len() as f64;
    if y.len() < 2 {
        return 0.0;
    }
    let mean = y.iter().sum::<f64>() / n;
    y.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)
}

fn input_span(z: &Matrix) -> f64 {
    let mut span = 0.0f64;
    for col in z.column_iter() {
        let lo = col.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = col.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        span = span.max(hi - lo);
    }
    if span > 0.0 && span.is_finite() {
        span
    } else {
        1.0
    }
}

fn rows(z: &Matrix) -> Vec<Vec<f64>> {
    z.row_iter().map(|r| r.iter().cloned().collect()).collect()
}

#[derive(Debug, Clone)]
pub struct FitOptions {
    pub restarts: usize,
    /// Holds the noise variance at this value instead of fitting it.
    pub fixed_noise: Option<f64>,
    /// Nelder–Mead iterations per restart.
    pub max_iters: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            restarts: 5,
            fixed_noise: None,
            max_iters: 300,
        }
    }
}

/// A fitted GP. Immutable; posterior queries take `&self`.
#[derive(Debug, Clone)]
pub struct GpModel {
    train: Vec<Vec<f64>>,
    train_y: Vec<f64>,
    pub params: KernelParams,
    pub prior_mean: f64,
    chol: Matrix,
    weights: Vector,
    log_likelihood: f64,
}

impl GpModel {
    /// Conditions on the data with fixed hyperparameters.
    pub fn with_params(z: &Matrix, y: &[f64], params: KernelParams) -> Result<GpModel> {
        check_data(z, y, 1)?;
        params.validate()?;
        let prior_mean = y.iter().sum::<f64>() / y.len() as f64;
        condition(rows(z), y.to_vec(), params, prior_mean)
    }

    /// Fits hyperparameters by maximizing the log marginal likelihood.
    pub fn fit(z: &Matrix, y: &[f64], options: &FitOptions, seed: u64) -> Result<GpModel> {
        check_data(z, y, 2)?;
        if let Some(noise) = options.fixed_noise {
            if !(noise >= NOISE_FLOOR && noise.is_finite()) {
                return invalid(format!("gp: fixed noise {noise} below {NOISE_FLOOR:e}"));
            }
        }
        let train = rows(z);
        let prior_mean = y.iter().sum::<f64>() / y.len() as f64;
        let start = KernelParams::heuristic(z, y);
        let var = variance(y);
        if var <= 0.0 {
            let params = KernelParams {
                noise_variance: options.fixed_noise.unwrap_or(NOISE_FLOOR),
                ..start
            };
            return condition(train, y.to_vec(), params, prior_mean);
        }

        let span = input_span(z);
        let fit_noise = options.fixed_noise.is_none();
        let lo = [(1e-3 * span).ln(), (1e-4 * var).ln(), NOISE_FLOOR.ln()];
        let hi = [
            (1e3 * span).ln(),
            (1e3 * var).ln(),
            var.ln().max(NOISE_FLOOR.ln()),
        ];
        let dims = if fit_noise { 3 } else { 2 };
        let unpack = |p: &[f64]| KernelParams {
            lengthscale: p[0].exp(),
            signal_variance: p[1].exp(),
            noise_variance: match options.fixed_noise {
                Some(v) => v,
                None => p[2].exp(),
            },
        };
        let dist = pairwise_distances(&train);
        let objective = |p: &[f64]| match factor(&dist, y, &unpack(p), prior_mean) {
            Ok(f) if f.log_likelihood.is_finite() => -f.log_likelihood,
            _ => f64::INFINITY,
        };

        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let initial = [
            start.lengthscale.ln(),
            start.signal_variance.ln(),
            start.noise_variance.ln(),
        ];
        let mut best: Option<(Vec<f64>, f64)> = None;
        for restart in 0..options.restarts.max(1) {
            let x0: Vec<f64> = if restart == 0 {
                (0..dims).map(|i| initial[i].clamp(lo[i], hi[i])).collect()
            } else {
                // Starting lengthscales are drawn from a narrower band than the bounds.
                let ls = (rng.random_range((0.02f64).ln()..(2.0f64).ln()) + span.ln())
                    .clamp(lo[0], hi[0]);
                let sv = rng.random_range((0.1 * var).ln()..(10.0 * var).ln());
                let nv = rng.random_range(lo[2]..hi[2].max(lo[2] + 1e-9));
                [ls, sv, nv][..dims].to_vec()
            };
            let (x, f) = nelder_mead(&objective, x0, &lo[..dims], &hi[..dims], options.max_iters);
            if best.as_ref().is_none_or(|(_, bf)| f < *bf) {
                best = Some((x, f));
            }
        }
        let (x, f) = best.expect("at least one restart");
        if !f.is_finite() {
            // Every candidate failed to factor; fall back to the heuristic.
            return condition(train, y.to_vec(), start, prior_mean);
        }
        condition(train, y.to_vec(), unpack(&x), prior_mean)
    }

    pub fn len(&self) -> usize {
        self.train.len()
    }

    pub fn is_empty(&self) -> bool {
        self.train.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.train.first().map_or(0, |r| r.len())
    }

    pub fn log_marginal_likelihood(&self) -> f64 {
        self.log_likelihood
    }

    /// Log marginal likelihood of this model's data under other parameters.
    pub fn log_likelihood_at(&self, params: KernelParams) -> Result<f64> {
        params.validate()?;
        condition(
            self.train.clone(),
            self.train_y.clone(),
            params,
            self.prior_mean,
        )
        .map(|m| m.log_likelihood)
    }

    /// Posterior mean and variance at `z`.
    pub fn posterior(&self, z: &[f64]) -> Result<(f64, f64)> {
        if z.len() != self.dim() {
            return invalid(format!(
                "gp posterior: query has dimension {}, model has {}",
                z.len(),
                self.dim()
            ));
        }
        let cross = Vector::from_iterator(
            self.train.len(),
            self.train
                .iter()
                .map(|t| matern52(distance(t, z), &self.params)),
        );
        let mean = self.prior_mean + cross.dot(&self.weights);
        let v = self
            .chol
            .solve_lower_triangular(&cross)
            .expect("cholesky factor has a positive diagonal");
        let var = (self.params.signal_variance - v.norm_squared())
            .clamp(0.0, self.params.signal_variance);
        Ok((mean, var))
    }
}

fn check_data(z: &Matrix, y: &[f64], min_points: usize) -> Result<()> {
    if z.nrows() != y.len() {
        return invalid(format!(
            "gp: {} inputs but {} responses",
            z.nrows(),
            y.len()
        ));
    }
    if y.len() < min_points {
        return invalid(format!(
            "gp: need at least {min_points} training points, got {}",
            y.len()
        ));
    }
    if z.ncols() == 0 {
        return invalid("gp: inputs have zero dimension");
    }
    if z.iter().chain(y).any(|v| !v.is_finite()) {
        return invalid("gp: training data must be finite");
    }
    Ok(())
}

fn pairwise_distances(train: &[Vec<f64>]) -> Matrix {
    let m = train.len();
    let mut dist = Matrix::zeros(m, m);
    for i in 0..m {
        for j in 0..i {
            let v = distance(&train[i], &train[j]);
            dist[(i, j)] = v;
            dist[(j, i)] = v;
        }
    }
    dist
}

struct Factor {
    chol: Matrix,
    weights: Vector,
    log_likelihood: f64,
}

fn factor(dist: &Matrix, y: &[f64], params: &KernelParams, prior_mean: f64) -> Result<Factor> {
    let m = y.len();
    let mut gram = Matrix::zeros(m, m);
    for j in 0..m {
        for i in j + 1..m {
            let k = matern52(dist[(i, j)], params);
            gram[(i, j)] = k;
            gram[(j, i)] = k;
        }
        gram[(j, j)] = params.signal_variance + params.noise_variance;
    }
    let chol = match gram.clone().cholesky() {
        Some(c) => c.unpack(),
        None => cholesky_jittered(&gram, 0.0)?.0,
    };
    let resid = Vector::from_iterator(m, y.iter().map(|v| v - prior_mean));
    let half = chol
        .solve_lower_triangular(&resid)
        .expect("cholesky factor has a positive diagonal");
    let weights = chol
        .transpose()
        .solve_upper_triangular(&half)
        .expect("cholesky factor has a positive diagonal");
    let log_det: f64 = chol.diagonal().iter().map(|v| v.ln()).sum();
    let log_likelihood = -0.5 * half.norm_squared() - log_det - 0.5 * m as f64 * (2.0 * PI).ln();
    Ok(Factor {
        chol,
        weights,
        log_likelihood,
    })
}

fn condition(
    train: Vec<Vec<f64>>,
    y: Vec<f64>,
    params: KernelParams,
    prior_mean: f64,
) -> Result<GpModel> {
    let f = factor(&pairwise_distances(&train), &y, &params, prior_mean)?;
    Ok(GpModel {
        train,
        train_y: y,
        params,
        prior_mean,
        chol: f.chol,
        weights: f.weights,
        log_likelihood: f.log_likelihood,
    })
}

/// Box-constrained Nelder–Mead minimization; vertices are clamped to the box.
/// Returns the best vertex and its value. The start vertex is never worsened.
pub(crate) fn nelder_mead<F>(
    f: &F,
    x0: Vec<f64>,
    lo: &[f64],
    hi: &[f64],
    max_iters: usize,
) -> (Vec<f64>, f64)
where
    F: Fn(&[f64]) -> f64,
{
    let n = x0.len();
    let clamp = |mut x: Vec<f64>| {
        for i in 0..n {
            x[i] = x[i].clamp(lo[i], hi[i]);
        }
        x
    };
    let eval = |x: &Vec<f64>| {
        let v = f(x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    };
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n + 1);
    let x0 = clamp(x0);
    simplex.push((x0.clone(), eval(&x0)));
    for i in 0..n {
        let mut x = x0.clone();
        let step = 0.5 * (hi[i] - lo[i]).clamp(1e-3, 2.0);
        x[i] = if x[i] + step <= hi[i] {
            x[i] + step
        } else {
            x[i] - step
        };
        let x = clamp(x);
        let v = eval(&x);
        simplex.push((x, v));
    }

    for _ in 0..max_iters {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let spread = simplex[n].1 - simplex[0].1;
        let size = simplex[1..]
            .iter()
            .map(|(x, _)| {
                x.iter()
                    .zip(&simplex[0].0)
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max)
            })
            .fold(0.0, f64::max);
        if (spread.is_finite() && spread.abs() < F_TOL * simplex[0].1.abs().max(1.0))
            || size < X_TOL
        {
            break;
        }
        let mut centroid = vec![0.0; n];
        for (x, _) in &simplex[..n] {
            for i in 0..n {
                centroid[i] += x[i] / n as f64;
            }
        }
        let along = |t: f64| -> Vec<f64> {
            clamp(
                (0..n)
                    .map(|i| centroid[i] + t * (simplex[n].0[i] - centroid[i]))
                    .collect(),
            )
        };
        let reflected = along(-1.0);
        let fr = eval(&reflected);
        if fr < simplex[0].1 {
            let expanded = along(-2.0);
            let fe = eval(&expanded);
            simplex[n] = if fe < fr {
                (expanded, fe)
            } else {
                (reflected, fr)
            };
        } else if fr < simplex[n - 1].1 {
            simplex[n] = (reflected, fr);
        } else {
            let contracted = if fr < simplex[n].1 {
                along(-0.5)
            } else {
                along(0.5)
            };
            let fc = eval(&contracted);
            if fc < simplex[n].1.min(fr) {
                simplex[n] = (contracted, fc);
            } else {
                let best = simplex[0].0.clone();
                for (x, v) in simplex.iter_mut().skip(1) {
                    *x = clamp((0..n).map(|i| best[i] + 0.5 * (x[i] - best[i])).collect());
                    *v = eval(x);
                }
            }
        }
    }
    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    simplex.swap_remove(0)
}
