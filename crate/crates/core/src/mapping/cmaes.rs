//! Box-constrained (mu/mu_w, lambda)-CMA-ES.
//!
//! Infeasible samples are redrawn a few times; a sample that is still outside
//! the box is projected onto it and ranked by the objective at the projection
//! plus the squared projection distance. The distribution update uses the
//! raw samples so the step-size path stays unbiased.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{invalid, Result};

const MAX_RESAMPLES: usize = 10;

#[derive(Debug, Clone)]
pub struct CmaesOptions {
    /// Initial step size, relative to a unit-width box.
    pub sigma0: f64,
    /// Population size; `None` uses `4 + floor(3 ln d)`.
    pub population: Option<usize>,
    /// Starting mean; `None` uses the box center.
    pub x0: Option<Vec<f64>>,
    /// Stop as soon as the best value drops to or below this.
    pub target: f64,
}

impl Default for CmaesOptions {
    fn default() -> Self {
        CmaesOptions {
            sigma0: 0.3,
            population: None,
            x0: None,
            target: f64::NEG_INFINITY,
        }
    }
}

#[derive(Debug, Clone)]
pub struct CmaesResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub evaluations: usize,
}

pub fn default_population(d: usize) -> usize {
    4 + (3.0 * (d as f64).ln()).floor() as usize
}

fn project(x: &mut [f64], lo: &[f64], hi: &[f64]) -> f64 {
    let mut dist2 = 0.0;
    for ((v, &l), &h) in x.iter_mut().zip(lo).zip(hi) {
        let c = v.clamp(l, h);
        dist2 += (*v - c) * (*v - c);
        *v = c;
    }
    dist2
}

/// Minimizes `objective` over the box `[lo, hi]` with at most `budget`
/// evaluations. Deterministic for a fixed `seed`.
pub fn cmaes_minimize<F>(
    mut objective: F,
    lo: &[f64],
    hi: &[f64],
    budget: usize,
    seed: u64,
    options: &CmaesOptions,
) -> Result<CmaesResult>
where
    F: FnMut(&[f64]) -> f64,
{
    let n = lo.len();
    if n == 0 || hi.len() != n {
        return invalid("cmaes: box bounds must be non-empty and of equal length");
    }
    if lo
        .iter()
        .zip(hi)
        .any(|(l, h)| !(l <= h) || !l.is_finite() || !h.is_finite())
    {
        return invalid("cmaes: box bounds must be finite with lo <= hi");
    }
    if budget < 10 * n {
        return invalid(format!(
            "cmaes: budget {budget} is below 10 * d = {}",
            10 * n
        ));
    }
    if !(options.sigma0 > 0.0) {
        return invalid("cmaes: sigma0 must be positive");
    }

    let nf = n as f64;
    let lambda = options
        .population
        .unwrap_or_else(|| default_population(n))
        .max(2);
    let mu = lambda / 2;
    let mut weights: Vec<f64> = (0..mu)
        .map(|i| (mu as f64 + 0.5).ln() - ((i + 1) as f64).ln())
        .collect();
    let wsum: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= wsum);
    let mueff = 1.0 / weights.iter().map(|w| w * w).sum::<f64>();

    let cc = (4.0 + mueff / nf) / (nf + 4.0 + 2.0 * mueff / nf);
    let cs = (mueff + 2.0) / (nf + mueff + 5.0);
    let c1 = 2.0 / ((nf + 1.3).powi(2) + mueff);
    let cmu = (1.0 - c1).min(2.0 * (mueff - 2.0 + 1.0 / mueff) / ((nf + 2.0).powi(2) + mueff));
    let damps = 1.0 + 2.0 * (((mueff - 1.0) / (nf + 1.0)).sqrt() - 1.0).max(0.0) + cs;
    let chi_n = nf.sqrt() * (1.0 - 1.0 / (4.0 * nf) + 1.0 / (21.0 * nf * nf));

    let width = lo
        .iter()
        .zip(hi)
        .map(|(l, h)| h - l)
        .fold(0.0f64, f64::max)
        .max(f64::MIN_POSITIVE);
    let mut sigma = options.sigma0 * width / 2.0;

    let mut mean = match &options.x0 {
        Some(x0) if x0.len() == n => {
            let mut m = x0.clone();
            project(&mut m, lo, hi);
            DVector::from_vec(m)
        }
        Some(_) => return invalid("cmaes: x0 has the wrong dimension"),
        None => DVector::from_iterator(n, lo.iter().zip(hi).map(|(l, h)| 0.5 * (l + h))),
    };

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut evaluations = 0usize;

    let mut best_x = mean.as_slice().to_vec();
    let mut best_value = objective(&best_x);
    evaluations += 1;
    if !best_value.is_finite() {
        best_value = f64::INFINITY;
    }

    let mut pc = DVector::<f64>::zeros(n);
    let mut ps = DVector::<f64>::zeros(n);
    let mut cov = DMatrix::<f64>::identity(n, n);
    let mut basis = DMatrix::<f64>::identity(n, n);
    let mut scales = DVector::<f64>::from_element(n, 1.0);
    let mut inv_sqrt_cov = DMatrix::<f64>::identity(n, n);
    let mut eigen_eval = 0usize;
    let mut generation = 0usize;
    let eigen_gap = (lambda as f64 / (c1 + cmu) / nf / 10.0).max(1.0) as usize;

    let mut raw: Vec<DVector<f64>> = Vec::with_capacity(lambda);
    let mut fitness: Vec<(f64, usize)> = Vec::with_capacity(lambda);

    while evaluations + lambda <= budget && best_value > options.target {
        generation += 1;
        raw.clear();
        fitness.clear();
        for k in 0..lambda {
            let mut x = DVector::<f64>::zeros(n);
            for attempt in 0..=MAX_RESAMPLES {
                let z = DVector::<f64>::from_fn(n, |_, _| StandardNormal.sample(&mut rng));
                x = &mean + (&basis * z.component_mul(&scales)) * sigma;
                let inside = x.iter().zip(lo).zip(hi).all(|((v, l), h)| v >= l && v <= h);
                if inside || attempt == MAX_RESAMPLES {
                    break;
                }
            }
            let mut feasible = x.as_slice().to_vec();
            let penalty = project(&mut feasible, lo, hi);
            let mut value = objective(&feasible);
            evaluations += 1;
            if !value.is_finite() {
                value = f64::INFINITY;
            }
            if value < best_value {
                best_value = value;
                best_x = feasible;
            }
            fitness.push((value + penalty, k));
            raw.push(x);
        }
        fitness.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));

        let old_mean = mean.clone();
        mean = DVector::zeros(n);
        for (w, &(_, k)) in weights.iter().zip(&fitness) {
            mean.axpy(*w, &raw[k], 1.0);
        }
        let step = (&mean - &old_mean) / sigma;

        ps = &ps * (1.0 - cs) + (&inv_sqrt_cov * &step) * (cs * (2.0 - cs) * mueff).sqrt();
        let ps_norm = ps.norm();
        let hsig = ps_norm / (1.0 - (1.0 - cs).powi(2 * generation as i32)).sqrt() / chi_n
            < 1.4 + 2.0 / (nf + 1.0);
        let hsig_f = if hsig { 1.0 } else { 0.0 };
        pc = &pc * (1.0 - cc) + &step * (hsig_f * (cc * (2.0 - cc) * mueff).sqrt());

        let decay = if hsig {
            1.0 - c1 - cmu
        } else {
            1.0 - c1 - cmu + c1 * cc * (2.0 - cc)
        };
        cov *= decay;
        cov.ger(c1, &pc, &pc, 1.0);
        for (w, &(_, k)) in weights.iter().zip(&fitness) {
            let y = (&raw[k] - &old_mean) / sigma;
            cov.ger(cmu * w, &y, &y, 1.0);
        }

        sigma *= ((cs / damps) * (ps_norm / chi_n - 1.0)).exp();

        if evaluations - eigen_eval > eigen_gap || generation == 1 {
            eigen_eval = evaluations;
            cov = (&cov + cov.transpose()) * 0.5;
            let eig = SymmetricEigen::new(cov.clone());
            basis = eig.eigenvectors;
            scales = eig.eigenvalues.map(|v| v.max(1e-300).sqrt());
            let inv = scales.map(|v| 1.0 / v);
            inv_sqrt_cov = &basis * DMatrix::from_diagonal(&inv) * basis.transpose();
        }

        let max_scale = scales.max();
        let min_scale = scales.min();
        if sigma * max_scale < 1e-14 * width || max_scale > 1e7 * min_scale {
            break;
        }
        if !sigma.is_finite() || mean.iter().any(|v| !v.is_finite()) {
            break;
        }
    }

    Ok(CmaesResult {
        x: best_x,
        value: best_value,
        evaluations,
    })
}
