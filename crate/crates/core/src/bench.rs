//! Synthetic test functions embedded in `[-1, 1]^d`.
//!
//! A benchmark reads a few active coordinates of `x`, optionally rotates
//! them, maps them affinely onto the function's usual domain and returns the
//! negated function value, so that larger is better. All other coordinates
//! are inert.

use std::f64::consts::PI;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Duration;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::linalg::{gaussian_matrix, orthonormal_columns, Matrix, Vector};
use crate::objective::Objective;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TestFunction {
    Branin,
    Colville,
    Hartmann6,
    /// Six-hump camel.
    Camel,
}

const HARTMANN_ALPHA: [f64; 4] = [1.0, 1.2, 3.0, 3.2];
const HARTMANN_A: [[f64; 6]; 4] = [
    [10.0, 3.0, 17.0, 3.5, 1.7, 8.0],
    [0.05, 10.0, 17.0, 0.1, 8.0, 14.0],
    [3.0, 3.5, 1.7, 10.0, 17.0, 8.0],
    [17.0, 8.0, 0.05, 10.0, 0.1, 14.0],
];
const HARTMANN_P: [[f64; 6]; 4] = [
    [0.1312, 0.1696, 0.5569, 0.0124, 0.8283, 0.5886],
    [0.2329, 0.4135, 0.8307, 0.3736, 0.1004, 0.9991],
    [0.2348, 0.1451, 0.3522, 0.2883, 0.3047, 0.6650],
    [0.4047, 0.8828, 0.8732, 0.5743, 0.1091, 0.0381],
];

impl TestFunction {
    pub fn parse(name: &str) -> Result<TestFunction> {
        match name.to_ascii_lowercase().as_str() {
            "branin" => Ok(TestFunction::Branin),
            "colville" => Ok(TestFunction::Colville),
            "hartmann6" => Ok(TestFunction::Hartmann6),
            "camel" => Ok(TestFunction::Camel),
            other => invalid(format!("unknown benchmark '{other}'")),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            TestFunction::Branin => "branin",
            TestFunction::Colville => "colville",
            TestFunction::Hartmann6 => "hartmann6",
            TestFunction::Camel => "camel",
        }
    }

    /// Number of coordinates the function depends on.
    pub fn dim(self) -> usize {
        match self {
            TestFunction::Branin | TestFunction::Camel => 2,
            TestFunction::Colville => 4,
            TestFunction::Hartmann6 => 6,
        }
    }

    /// Native domain as per-coordinate `(lo, hi)`.
    pub fn domain(self) -> Vec<(f64, f64)> {
        match self {
            TestFunction::Branin => vec![(-5.0, 10.0), (0.0, 15.0)],
            TestFunction::Colville => vec![(-10.0, 10.0); 4],
            TestFunction::Hartmann6 => vec![(0.0, 1.0); 6],
            TestFunction::Camel => vec![(-3.0, 3.0), (-2.0, 2.0)],
        }
    }

    /// Global minimum of the standard (minimization) form.
    pub fn minimum(self) -> f64 {
        match self {
            TestFunction::Branin => 0.397_887_357_729_738,
            TestFunction::Colville => 0.0,
            TestFunction::Hartmann6 => -3.322_368_011_391_339,
            TestFunction::Camel => -1.031_628_453_489_877,
        }
    }

    /// Standard function value at a native-domain point.
    pub fn value(self, u: &[f64]) -> f64 {
        match self {
            TestFunction::Branin => {
                let b = 5.1 / (4.0 * PI * PI);
                let c = 5.0 / PI;
                let t = 1.0 / (8.0 * PI);
                let q = u[1] - b * u[0] * u[0] + c * u[0] - 6.0;
                q * q + 10.0 * (1.0 - t) * u[0].cos() + 10.0
            }
            TestFunction::Colville => {
                let [a, b, c, d] = [u[0], u[1], u[2], u[3]];
                100.0 * (a * a - b).powi(2)
                    + (a - 1.0).powi(2)
                    + (c - 1.0).powi(2)
                    + 90.0 * (c * c - d).powi(2)
                    + 10.1 * ((b - 1.0).powi(2) + (d - 1.0).powi(2))
                    + 19.8 * (b - 1.0) * (d - 1.0)
            }
            TestFunction::Hartmann6 => -(0..4)
                .map(|i| {
                    let e: f64 = (0..6)
                        .map(|j| HARTMANN_A[i][j] * (u[j] - HARTMANN_P[i][j]).powi(2))
                        .sum();
                    HARTMANN_ALPHA[i] * (-e).exp()
                })
                .sum::<f64>(),
            TestFunction::Camel => {
                let (a, b) = (u[0], u[1]);
                (4.0 - 2.1 * a * a + a.powi(4) / 3.0) * a * a + a * b + (-4.0 + 4.0 * b * b) * b * b
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchmarkConfig {
    pub name: String,
    pub d: usize,
    /// Rotates the active coordinates by a seeded orthogonal matrix.
    pub rotate: bool,
    /// Standard deviation of additive Gaussian observation noise.
    pub noise_std: f64,
    /// Artificial delay per evaluation, in milliseconds.
    pub delay_ms: u64,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        BenchmarkConfig {
            name: "branin".into(),
            d: 100,
            rotate: false,
            noise_std: 0.0,
            delay_ms: 0,
        }
    }
}

impl BenchmarkConfig {
    pub fn build(&self, seed: u64) -> Result<Benchmark> {
        let mut bench = make_benchmark(&self.name, self.d, seed)?;
        if self.rotate {
            bench = bench.with_rotation(seed);
        }
        if self.noise_std != 0.0 {
            bench = bench.with_noise(self.noise_std, seed)?;
        }
        if self.delay_ms > 0 {
            bench = bench.with_delay(Duration::from_millis(self.delay_ms));
        }
        Ok(bench)
    }
}

#[derive(Debug, Clone)]
pub struct Benchmark {
    function: TestFunction,
    d: usize,
    active: Vec<usize>,
    rotation: Option<Matrix>,
    noise: Option<(Normal<f64>, ChaCha8Rng)>,
    delay: Option<Duration>,
    counter: Arc<AtomicU64>,
}

/// Builds `name` inside `[-1, 1]^d` with seeded active coordinates.
pub fn make_benchmark(name: &str, d: usize, seed: u64) -> Result<Benchmark> {
    let function = TestFunction::parse(name)?;
    let r = function.dim();
    if d < r {
        return invalid(format!("{name} needs d >= {r}, got {d}"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let active = sample(&mut rng, d, r).into_vec();
    Ok(Benchmark {
        function,
        d,
        active,
        rotation: None,
        noise: None,
        delay: None,
        counter: Arc::new(AtomicU64::new(0)),
    })
}

impl Benchmark {
    /// Rotates the active coordinates before scaling; rotated values outside
    /// `[-1, 1]` are clipped.
    pub fn with_rotation(mut self, seed: u64) -> Benchmark {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x005e_ed0f_0bad);
        let r = self.function.dim();
        self.rotation = Some(orthonormal_columns(&gaussian_matrix(r, r, &mut rng)));
        self
    }

    pub fn with_noise(mut self, std: f64, seed: u64) -> Result<Benchmark> {
        let normal = Normal::new(0.0, std)
            .map_err(|e| crate::Error::InvalidArgument(format!("noise std {std}: {e}")))?;
        self.noise = Some((normal, ChaCha8Rng::seed_from_u64(seed ^ 0x0000_0015_e0e0)));
        Ok(self)
    }

    pub fn with_delay(mut self, delay: Duration) -> Benchmark {
        self.delay = Some(delay);
        self
    }

    pub fn function(&self) -> TestFunction {
        self.function
    }

    pub fn name(&self) -> &'static str {
        self.function.name()
    }

    pub fn true_dim(&self) -> usize {
        self.function.dim()
    }

    pub fn active_coords(&self) -> &[usize] {
        &self.active
    }

    /// Largest attainable value of the negated function.
    pub fn optimum(&self) -> f64 {
        -self.function.minimum()
    }

    /// Shared handle to the evaluation counter.
    pub fn counter(&self) -> Arc<AtomicU64> {
        Arc::clone(&self.counter)
    }

    pub fn evaluations(&self) -> u64 {
        self.counter.load(Ordering::SeqCst)
    }

    /// Native-domain point read off `x`.
    pub fn to_native(&self, x: &[f64]) -> Vec<f64> {
        let mut u = Vector::from_iterator(self.active.len(), self.active.iter().map(|&i| x[i]));
        if let Some(rot) = &self.rotation {
            u = (rot * u).map(|v| v.clamp(-1.0, 1.0));
        }
        self.function
            .domain()
            .iter()
            .zip(u.iter())
            .map(|(&(lo, hi), v)| lo + (v + 1.0) * 0.5 * (hi - lo))
            .collect()
    }

    /// A cube point (inert coordinates zero) whose native image is `native`.
    pub fn from_native(&self, native: &[f64]) -> Result<Vec<f64>> {
        if native.len() != self.true_dim() {
            return invalid("from_native: wrong number of native coordinates");
        }
        let u = Vector::from_iterator(
            native.len(),
            self.function
                .domain()
                .iter()
                .zip(native)
                .map(|(&(lo, hi), v)| 2.0 * (v - lo) / (hi - lo) - 1.0),
        );
        let u = match &self.rotation {
            Some(rot) => rot.transpose() * u,
            None => u,
        };
        if u.iter().any(|v| v.abs() > 1.0 + 1e-12) {
            return invalid("from_native: point is not reachable inside the cube");
        }
        let mut x = vec![0.0; self.d];
        for (&i, v) in self.active.iter().zip(u.iter()) {
            x[i] = v.clamp(-1.0, 1.0);
        }
        Ok(x)
    }
}

impl Objective for Benchmark {
    fn dim(&self) -> usize {
        self.d
    }

    fn evaluate(&mut self, x: &[f64]) -> Result<f64> {
        if x.len() != self.d {
            return invalid(format!(
                "{}: expected {} coordinates, got {}",
                self.name(),
                self.d,
                x.len()
            ));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return invalid(format!("{}: non-finite input", self.name()));
        }
        self.counter.fetch_add(1, Ordering::SeqCst);
        if let Some(delay) = self.delay {
            std::thread::sleep(delay);
        }
        let mut value = -self.function.value(&self.to_native(x));
        if let Some((normal, rng)) = &mut self.noise {
            value += normal.sample(rng);
        }
        Ok(value)
    }
}
