//! The outer optimization loop and its baselines.
//!
//! `run_silbo` learns the embedding from evaluated and unlabeled points and
//! relearns it periodically; `run_random_embedding_bo` keeps one random
//! embedding; `run_random_search` samples the cube uniformly. All three
//! maximize the objective and return the same trace format.

use log::{debug, warn};
use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::acquisition::{select_candidates, AcquisitionSpec};
use crate::error::{invalid, Result};
use crate::gp::{FitOptions, GpModel};
use crate::linalg::{gaussian_matrix, orthonormalize_rows, Matrix, Vector};
use crate::mapping::{
    bottom_up_map, bottom_up_reconcile, top_down_map, top_down_reconcile, zonotope_box, SearchBox,
    TrainingEntry, TrainingSet,
};
use crate::objective::Objective;
use crate::semisir::{solve_embedding, SemiSirParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    BottomUp,
    TopDown,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerConfig {
    /// Embedding dimension.
    pub r: usize,
    /// Initial design size; `None` uses `max(2r, 10)`.
    pub n_init: Option<usize>,
    /// Unlabeled points drawn per iteration.
    pub n_unlabeled: usize,
    pub iterations: usize,
    /// The embedding is relearned every this many iterations.
    pub update_period: usize,
    pub strategy: Strategy,
    pub acquisition: AcquisitionSpec,
    /// Slice count, neighbor count and graph weight; `r` here is ignored.
    pub semisir: SemiSirParams,
    pub gp_restarts: usize,
    /// CMA-ES evaluations for mapping the evaluated point top-down; `None`
    /// uses `min(200 d, 20000)`.
    pub map_budget: Option<usize>,
    /// CMA-ES evaluations for mapping unlabeled points top-down; 0 solves
    /// them by coordinate descent alone.
    pub unlabeled_map_budget: usize,
    pub seed: u64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            r: 2,
            n_init: None,
            n_unlabeled: 50,
            iterations: 100,
            update_period: 20,
            strategy: Strategy::BottomUp,
            acquisition: AcquisitionSpec::default(),
            semisir: SemiSirParams::default(),
            gp_restarts: 5,
            map_budget: None,
            unlabeled_map_budget: 0,
            seed: 0,
        }
    }
}

impl OptimizerConfig {
    pub fn initial_size(&self) -> usize {
        self.n_init.unwrap_or((2 * self.r).max(10))
    }

    pub fn mapping_budget(&self, d: usize) -> usize {
        self.map_budget.unwrap_or((200 * d).min(20_000))
    }

    pub fn validate(&self, d: usize) -> Result<()> {
        if self.r == 0 || self.r > d {
            return invalid(format!(
                "optimizer: need 1 <= r <= d, got r = {} and d = {d}",
                self.r
            ));
        }
        if self.iterations == 0 {
            return invalid("optimizer: iterations must be at least 1");
        }
        if self.update_period == 0 {
            return invalid("optimizer: update_period must be at least 1");
        }
        if self.initial_size() == 0 {
            return invalid("optimizer: initial design must not be empty");
        }
        let budget = self.mapping_budget(d);
        if self.strategy == Strategy::TopDown && budget != 0 && budget < 10 * d {
            return invalid(format!("optimizer: map_budget {budget} is below 10 * d"));
        }
        if self.unlabeled_map_budget != 0 && self.unlabeled_map_budget < 10 * d {
            return invalid("optimizer: unlabeled_map_budget must be 0 or at least 10 * d");
        }
        self.acquisition.validate(self.n_unlabeled)
    }

    fn semisir_params(&self) -> SemiSirParams {
        SemiSirParams {
            r: self.r,
            ..self.semisir.clone()
        }
    }
}

/// One row of a run trace, written after iteration `t` has finished
/// (including any embedding update made at the end of it).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IterationRecord {
    pub t: usize,
    pub z: Vec<f64>,
    pub x: Vec<f64>,
    /// Response at `x`; `-inf` when the objective returned a non-finite value.
    pub y: f64,
    /// Largest response over every evaluation so far.
    pub best: f64,
    pub b_generation: usize,
    /// Objective evaluations so far, initial design included.
    pub f_evals: usize,
    pub residual_warning: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunRecord {
    pub method: String,
    pub initial_evals: usize,
    pub rows: Vec<IterationRecord>,
    pub best_x: Vec<f64>,
    pub best_y: f64,
    /// Final embedding, `r x d`, for embedding methods.
    #[serde(skip)]
    pub embedding: Option<Matrix>,
}

impl RunRecord {
    pub fn total_evals(&self) -> usize {
        self.rows.last().map_or(self.initial_evals, |r| r.f_evals)
    }
}

/// Counts calls and tracks the best finite response.
struct Tracked<'a, O: Objective + ?Sized> {
    inner: &'a mut O,
    calls: usize,
    best_x: Vec<f64>,
    best_y: f64,
}

impl<'a, O: Objective + ?Sized> Tracked<'a, O> {
    fn new(inner: &'a mut O) -> Self {
        Tracked {
            inner,
            calls: 0,
            best_x: Vec::new(),
            best_y: f64::NEG_INFINITY,
        }
    }
}

impl<O: Objective + ?Sized> Objective for Tracked<'_, O> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn evaluate(&mut self, x: &[f64]) -> Result<f64> {
        self.calls += 1;
        let y = self.inner.evaluate(x)?;
        if !y.is_finite() {
            warn!("objective returned {y}; recorded as -inf");
            return Ok(f64::NEG_INFINITY);
        }
        if y > self.best_y || self.best_x.is_empty() {
            self.best_y = y;
            self.best_x = x.to_vec();
        }
        Ok(y)
    }
}

/// Stratified uniform design: one point per stratum in every coordinate.
pub fn latin_hypercube(n: usize, d: usize, rng: &mut ChaCha8Rng) -> Matrix {
    let mut x = Matrix::zeros(n, d);
    for j in 0..d {
        let mut strata: Vec<usize> = (0..n).collect();
        strata.shuffle(rng);
        for (i, s) in strata.into_iter().enumerate() {
            x[(i, j)] = -1.0 + 2.0 * (s as f64 + rng.random::<f64>()) / n as f64;
        }
    }
    x
}

fn uniform_cube(n: usize, d: usize, rng: &mut ChaCha8Rng) -> Matrix {
    Matrix::from_fn(n, d, |_, _| rng.random_range(-1.0..=1.0))
}

fn row(m: &Matrix, i: usize) -> Vector {
    m.row(i).transpose()
}

fn stack(rows: &[Vector], d: usize) -> Matrix {
    Matrix::from_fn(rows.len(), d, |i, j| rows[i][j])
}

#[derive(Clone)]
enum Embedding {
    Learned,
    Fixed(Matrix),
}

struct Loop<'a, 'o, O: Objective + ?Sized> {
    config: &'a OptimizerConfig,
    objective: Tracked<'o, O>,
    d: usize,
    rng: ChaCha8Rng,
    b: Matrix,
    search_box: SearchBox,
    generation: usize,
    training: TrainingSet,
    /// Every finite evaluation `(x, y)`, the labeled data for relearning.
    archive: Vec<(Vector, f64)>,
    next_id: usize,
}

impl<'o, O: Objective + ?Sized> Loop<'_, 'o, O> {
    fn evaluate(&mut self, x: &Vector) -> Result<f64> {
        let y = self.objective.evaluate(x.as_slice())?;
        if y.is_finite() {
            self.archive.push((x.clone(), y));
        }
        Ok(y)
    }

    fn push(&mut self, z: Vector, x: Vector, y: f64) {
        self.training.push(TrainingEntry {
            id: self.next_id,
            z,
            x,
            y,
        });
        self.next_id += 1;
    }

    fn learn(&mut self, x_u: &Matrix) -> Option<Matrix> {
        let params = self.config.semisir_params();
        let finite: Vec<&(Vector, f64)> = self.archive.iter().collect();
        let n_l = finite.len();
        let h = params.slice_count(n_l);
        if h < 2 || n_l < h {
            warn!("only {n_l} finite evaluations; keeping the current embedding");
            return None;
        }
        let x_l = Matrix::from_fn(n_l, self.d, |i, j| finite[i].0[j]);
        let y: Vec<f64> = finite.iter().map(|e| e.1).collect();
        match solve_embedding(&x_l, &y, x_u, &params, self.rng.next_u64()) {
            Ok(model) => Some(model.b),
            Err(e) => {
                warn!("embedding update failed ({e}); keeping the current embedding");
                None
            }
        }
    }

    fn fit(&mut self) -> Result<Option<GpModel>> {
        let (z, y) = self.training.finite_zy();
        let seed = self.rng.next_u64();
        if y.len() < 2 {
            return Ok(None);
        }
        let options = FitOptions {
            restarts: self.config.gp_restarts,
            ..FitOptions::default()
        };
        GpModel::fit(&z, &y, &options, seed).map(Some)
    }

    fn map_up(&self, z: &Vector, budget: usize, seed: u64) -> Result<(Vector, bool)> {
        match self.config.strategy {
            Strategy::BottomUp => Ok((bottom_up_map(&self.b, z)?, false)),
            Strategy::TopDown => {
                let m = top_down_map(&self.b, z, budget, seed)?;
                Ok((m.x, m.warning))
            }
        }
    }

    fn set_embedding(&mut self, b: Matrix) {
        self.search_box = zonotope_box(&b);
        self.b = b;
    }

    fn run(mut self, method: &str, mode: Embedding) -> Result<RunRecord> {
        let cfg = self.config;
        let n_init = cfg.initial_size();
        let n_u = cfg.n_unlabeled;
        let learned = matches!(mode, Embedding::Learned);

        match mode {
            Embedding::Learned => {
                let x_l = latin_hypercube(n_init, self.d, &mut self.rng);
                let x_u = uniform_cube(n_u, self.d, &mut self.rng);
                let mut ys = Vec::with_capacity(n_init);
                for i in 0..n_init {
                    ys.push(self.evaluate(&row(&x_l, i))?);
                }
                let b = match self.learn(&x_u) {
                    Some(b) => b,
                    None => orthonormalize_rows(&gaussian_matrix(cfg.r, self.d, &mut self.rng)),
                };
                self.set_embedding(b);
                for (i, y) in ys.into_iter().enumerate() {
                    let x = row(&x_l, i);
                    self.push(&self.b * &x, x, y);
                }
            }
            Embedding::Fixed(b) => {
                self.set_embedding(b);
                let unit = latin_hypercube(n_init, cfg.r, &mut self.rng);
                for i in 0..n_init {
                    let z = Vector::from_iterator(
                        cfg.r,
                        (0..cfg.r).map(|j| {
                            let (lo, hi) = (self.search_box.lo[j], self.search_box.hi[j]);
                            lo + (unit[(i, j)] + 1.0) * 0.5 * (hi - lo)
                        }),
                    );
                    let x = bottom_up_map(&self.b, &z)?;
                    let y = self.evaluate(&x)?;
                    self.push(z, x, y);
                }
            }
        }
        let initial_evals = self.objective.calls;
        let mut gp = self.fit()?;
        let mut rows = Vec::with_capacity(cfg.iterations);
        let budget = cfg.mapping_budget(self.d);

        for t in 1..=cfg.iterations {
            let y_best = self.training.best().map_or(f64::NEG_INFINITY, |e| e.y);
            let seed = self.rng.next_u64();
            let (z_eval, z_unlabeled) = match &gp {
                Some(model) => {
                    let sel = select_candidates(
                        &cfg.acquisition,
                        model,
                        &self.search_box,
                        t,
                        y_best,
                        n_u,
                        seed,
                    )?;
                    (sel.eval, sel.unlabeled)
                }
                None => {
                    let mut g = ChaCha8Rng::seed_from_u64(seed);
                    let eval = self.search_box.sample(&mut g);
                    (
                        eval,
                        (0..n_u).map(|_| self.search_box.sample(&mut g)).collect(),
                    )
                }
            };
            let map_seed = self.rng.next_u64();
            let (x_eval, residual_warning) = self.map_up(&z_eval, budget, map_seed)?;
            let y = self.evaluate(&x_eval)?;
            self.push(z_eval.clone(), x_eval.clone(), y);

            if learned && t % cfg.update_period == 0 && t < cfg.iterations {
                let mut x_u = Vec::with_capacity(n_u);
                for z in &z_unlabeled {
                    let map_seed = self.rng.next_u64();
                    let (x, _) = self.map_up(z, cfg.unlabeled_map_budget, map_seed)?;
                    x_u.push(x);
                }
                if let Some(b_new) = self.learn(&stack(&x_u, self.d)) {
                    let old_box = self.search_box.clone();
                    self.training = match cfg.strategy {
                        Strategy::BottomUp => {
                            let mut recording = Recording {
                                inner: &mut self.objective,
                                archive: &mut self.archive,
                            };
                            bottom_up_reconcile(&self.training, &old_box, &b_new, &mut recording)?
                        }
                        Strategy::TopDown => top_down_reconcile(&self.training, &b_new)?,
                    };
                    self.set_embedding(b_new);
                    self.generation += 1;
                    debug!(
                        "{method}: embedding generation {} at t = {t}",
                        self.generation
                    );
                }
            }
            gp = self.fit()?;

            rows.push(IterationRecord {
                t,
                z: z_eval.iter().cloned().collect(),
                x: x_eval.iter().cloned().collect(),
                y,
                best: self.objective.best_y,
                b_generation: self.generation,
                f_evals: self.objective.calls,
                residual_warning,
            });
        }

        Ok(RunRecord {
            method: method.to_string(),
            initial_evals,
            rows,
            best_x: self.objective.best_x.clone(),
            best_y: self.objective.best_y,
            embedding: Some(self.b),
        })
    }
}

/// Forwards evaluations and appends finite results to the archive.
struct Recording<'a, 'o, O: Objective + ?Sized> {
    inner: &'a mut Tracked<'o, O>,
    archive: &'a mut Vec<(Vector, f64)>,
}

impl<O: Objective + ?Sized> Objective for Recording<'_, '_, O> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn evaluate(&mut self, x: &[f64]) -> Result<f64> {
        let y = self.inner.evaluate(x)?;
        if y.is_finite() {
            self.archive.push((Vector::from_column_slice(x), y));
        }
        Ok(y)
    }
}

fn new_loop<'a, 'o, O: Objective + ?Sized>(
    objective: &'o mut O,
    config: &'a OptimizerConfig,
) -> Result<Loop<'a, 'o, O>> {
    let d = objective.dim();
    config.validate(d)?;
    Ok(Loop {
        config,
        objective: Tracked::new(objective),
        d,
        rng: ChaCha8Rng::seed_from_u64(config.seed),
        b: Matrix::zeros(0, 0),
        search_box: SearchBox::cube(config.r),
        generation: 0,
        training: TrainingSet::default(),
        archive: Vec::new(),
        next_id: 0,
    })
}

/// Semi-supervised embedding BO with the configured consistency strategy.
pub fn run_silbo<O: Objective + ?Sized>(
    objective: &mut O,
    config: &OptimizerConfig,
) -> Result<RunRecord> {
    let method = match config.strategy {
        Strategy::BottomUp => "silbo-bu",
        Strategy::TopDown => "silbo-td",
    };
    new_loop(objective, config)?.run(method, Embedding::Learned)
}

/// BO in the fixed embedding `b` (orthonormal rows), mapped bottom-up.
pub fn run_fixed_embedding_bo<O: Objective + ?Sized>(
    objective: &mut O,
    config: &OptimizerConfig,
    b: Matrix,
) -> Result<RunRecord> {
    let d = objective.dim();
    if b.nrows() != config.r || b.ncols() != d {
        return invalid(format!(
            "fixed embedding must be {} x {d}, got {} x {}",
            config.r,
            b.nrows(),
            b.ncols()
        ));
    }
    let config = OptimizerConfig {
        strategy: Strategy::BottomUp,
        ..config.clone()
    };
    new_loop(objective, &config)?.run("fixed", Embedding::Fixed(b))
}

/// BO in one random Gaussian embedding with orthonormalized rows.
pub fn run_random_embedding_bo<O: Objective + ?Sized>(
    objective: &mut O,
    config: &OptimizerConfig,
) -> Result<RunRecord> {
    let d = objective.dim();
    config.validate(d)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x7e3b_0000_0000_0001);
    let b = orthonormalize_rows(&gaussian_matrix(config.r, d, &mut rng));
    let mut record = run_fixed_embedding_bo(objective, config, b)?;
    record.method = "rembo".into();
    Ok(record)
}

/// Uniform sampling of the cube after the same initial design.
pub fn run_random_search<O: Objective + ?Sized>(
    objective: &mut O,
    config: &OptimizerConfig,
) -> Result<RunRecord> {
    let d = objective.dim();
    config.validate(d)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut tracked = Tracked::new(objective);
    let init = latin_hypercube(config.initial_size(), d, &mut rng);
    for i in 0..init.nrows() {
        tracked.evaluate(row(&init, i).as_slice())?;
    }
    let initial_evals = tracked.calls;
    let mut rows = Vec::with_capacity(config.iterations);
    for t in 1..=config.iterations {
        let x: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..=1.0)).collect();
        let y = tracked.evaluate(&x)?;
        rows.push(IterationRecord {
            t,
            z: Vec::new(),
            x,
            y,
            best: tracked.best_y,
            b_generation: 0,
            f_evals: tracked.calls,
            residual_warning: false,
        });
    }
    Ok(RunRecord {
        method: "random".into(),
        initial_evals,
        rows,
        best_x: tracked.best_x.clone(),
        best_y: tracked.best_y,
        embedding: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::objective::FnObjective;

    #[test]
    fn latin_hypercube_fills_every_stratum() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = latin_hypercube(8, 3, &mut rng);
        for j in 0..3 {
            let mut hit = [false; 8];
            for i in 0..8 {
                let s = ((x[(i, j)] + 1.0) / 2.0 * 8.0).floor() as usize;
                hit[s.min(7)] = true;
            }
            assert!(hit.iter().all(|h| *h));
        }
    }

    #[test]
    fn rejects_bad_config() {
        let mut f = FnObjective::new(3, |x: &[f64]| x[0]);
        let cfg = OptimizerConfig {
            r: 4,
            ..Default::default()
        };
        assert!(run_silbo(&mut f, &cfg).is_err());
        let cfg = OptimizerConfig {
            update_period: 0,
            r: 2,
            ..Default::default()
        };
        assert!(run_silbo(&mut f, &cfg).is_err());
    }

    #[test]
    fn nan_responses_become_negative_infinity() {
        let mut calls = 0;
        let mut f = FnObjective::new(4, |x: &[f64]| {
            calls += 1;
            if calls % 3 == 0 {
                f64::NAN
            } else {
                -x.iter().map(|v| v * v).sum::<f64>()
            }
        });
        let cfg = OptimizerConfig {
            iterations: 6,
            n_unlabeled: 5,
            update_period: 3,
            gp_restarts: 1,
            ..Default::default()
        };
        let rec = run_silbo(&mut f, &cfg).unwrap();
        assert!(rec.rows.iter().any(|r| r.y == f64::NEG_INFINITY));
        assert!(rec.best_y.is_finite());
    }
}
