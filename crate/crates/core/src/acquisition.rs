//! Acquisition functions and random-candidate selection.
//!
//! Responses are maximized. A batch of uniform candidates is drawn in the
//! search box and scored; the best one is evaluated and the next `n_u` are
//! returned as unlabeled points for the embedding update.

use std::f64::consts::{PI, SQRT_2};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::gp::GpModel;
use crate::linalg::Vector;
use crate::mapping::SearchBox;

pub const BETA_MIN: f64 = 0.5;
pub const BETA_MAX: f64 = 16.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AcquisitionKind {
    Ucb,
    Ei,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BetaSchedule {
    /// `2 ln(r t^2 pi^2 / 6)`, clipped to `[0.5, 16]`.
    Logarithmic,
    Constant(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AcquisitionSpec {
    pub kind: AcquisitionKind,
    pub beta: BetaSchedule,
    pub xi: f64,
    pub candidate_count: usize,
}

impl Default for AcquisitionSpec {
    fn default() -> Self {
        AcquisitionSpec {
            kind: AcquisitionKind::Ucb,
            beta: BetaSchedule::Logarithmic,
            xi: 0.01,
            candidate_count: 1000,
        }
    }
}

impl AcquisitionSpec {
    pub fn validate(&self, n_u: usize) -> Result<()> {
        if self.candidate_count < n_u + 1 {
            return invalid(format!(
                "acquisition: candidate_count {} must be at least n_u + 1 = {}",
                self.candidate_count,
                n_u + 1
            ));
        }
        if let BetaSchedule::Constant(b) = self.beta {
            if !(b >= 0.0 && b.is_finite()) {
                return invalid(format!("acquisition: beta {b} must be finite and >= 0"));
            }
        }
        if !(self.xi >= 0.0 && self.xi.is_finite()) {
            return invalid(format!(
                "acquisition: xi {} must be finite and >= 0",
                self.xi
            ));
        }
        Ok(())
    }

    /// Exploration weight at iteration `t` (1-based) in an `r`-dimensional space.
    pub fn beta_at(&self, r: usize, t: usize) -> f64 {
        match self.beta {
            BetaSchedule::Constant(b) => b,
            BetaSchedule::Logarithmic => {
                let t = t.max(1) as f64;
                let raw = 2.0 * (r.max(1) as f64 * t * t * PI * PI / 6.0).ln();
                raw.clamp(BETA_MIN, BETA_MAX)
            }
        }
    }
}

pub fn normal_cdf(u: f64) -> f64 {
    0.5 * libm::erfc(-u / SQRT_2)
}

pub fn normal_pdf(u: f64) -> f64 {
    (-0.5 * u * u).exp() / (2.0 * PI).sqrt()
}

pub fn ucb(mu: f64, var: f64, beta: f64) -> f64 {
    mu + beta.sqrt() * var.max(0.0).sqrt()
}

pub fn expected_improvement(mu: f64, var: f64, y_best: f64, xi: f64) -> f64 {
    let gain = mu - y_best - xi;
    let sigma = var.max(0.0).sqrt();
    if sigma == 0.0 {
        return gain.max(0.0);
    }
    let u = gain / sigma;
    (gain * normal_cdf(u) + sigma * normal_pdf(u)).max(0.0)
}

/// Acquisition value at `z` for iteration `t`.
pub fn score(
    spec: &AcquisitionSpec,
    model: &GpModel,
    z: &[f64],
    t: usize,
    y_best: f64,
) -> Result<f64> {
    let (mu, var) = model.posterior(z)?;
    Ok(match spec.kind {
        AcquisitionKind::Ucb => ucb(mu, var, spec.beta_at(z.len(), t)),
        AcquisitionKind::Ei => expected_improvement(mu, var, y_best, spec.xi),
    })
}

#[derive(Debug, Clone)]
pub struct Selection {
    pub eval: Vector,
    pub unlabeled: Vec<Vector>,
}

/// Indices of the `count` highest scores, ties broken by lower index.
pub fn top_indices(scores: &[f64], count: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order.truncate(count);
    order
}

/// Draws `candidate_count` uniform points in the box (exact duplicates
/// dropped), in draw order.
pub fn draw_candidates(spec: &AcquisitionSpec, search_box: &SearchBox, seed: u64) -> Vec<Vector> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out: Vec<Vector> = Vec::with_capacity(spec.candidate_count);
    for _ in 0..spec.candidate_count {
        let z = search_box.sample(&mut rng);
        if !out.contains(&z) {
            out.push(z);
        }
    }
    out
}

/// Scores a fresh candidate draw and returns the best point plus the next
/// `n_u` best as unlabeled points.
pub fn select_candidates(
    spec: &AcquisitionSpec,
    model: &GpModel,
    search_box: &SearchBox,
    t: usize,
    y_best: f64,
    n_u: usize,
    seed: u64,
) -> Result<Selection> {
    spec.validate(n_u)?;
    if search_box.dim() != model.dim() {
        return invalid(format!(
            "acquisition: box has dimension {}, model has {}",
            search_box.dim(),
            model.dim()
        ));
    }
    let candidates = draw_candidates(spec, search_box, seed);
    let scores = candidates
        .par_iter()
        .map(|z| score(spec, model, z.as_slice(), t, y_best))
        .collect::<Result<Vec<f64>>>()?;
    let mut picked = top_indices(&scores, n_u + 1)
        .into_iter()
        .map(|i| candidates[i].clone());
    let eval = picked.next().expect("candidate_count >= 1");
    Ok(Selection {
        eval,
        unlabeled: picked.collect(),
    })
}
