//! Replicated experiments: spec files, parallel runs and CSV/JSON output.
//!
//! A spec is a JSON document; dotted-key overrides (`optimizer.iterations=5`)
//! are applied to it before it is deserialized. Every run writes its own
//! trace file atomically, and the summary is computed over the runs that
//! succeeded.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use log::{error, info};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::bench::BenchmarkConfig;
use crate::error::{invalid, Error, Result};
use crate::linalg::Matrix;
use crate::objective::Objective;
use crate::optimizer::{
    latin_hypercube, run_random_embedding_bo, run_random_search, run_silbo, OptimizerConfig,
    RunRecord, Strategy,
};
use crate::semisir::{solve_embedding, SemiSirParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "silbo-bu")]
    SilboBu,
    #[serde(rename = "silbo-td")]
    SilboTd,
    #[serde(rename = "rembo")]
    Rembo,
    #[serde(rename = "random")]
    Random,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::SilboBu => "silbo-bu",
            Method::SilboTd => "silbo-td",
            Method::Rembo => "rembo",
            Method::Random => "random",
        }
    }

    pub fn all() -> Vec<Method> {
        vec![
            Method::SilboBu,
            Method::SilboTd,
            Method::Rembo,
            Method::Random,
        ]
    }
}

/// Settings for `dump-embedding`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DumpSpec {
    /// Evaluated points.
    pub points: usize,
    /// Unlabeled points drawn alongside.
    pub unlabeled: usize,
    pub seed: u64,
}

impl Default for DumpSpec {
    fn default() -> Self {
        DumpSpec {
            points: 50,
            unlabeled: 0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub benchmark: BenchmarkConfig,
    #[serde(default = "Method::all")]
    pub methods: Vec<Method>,
    #[serde(default = "one")]
    pub replications: usize,
    #[serde(default)]
    pub base_seed: u64,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub dump: DumpSpec,
}

fn one() -> usize {
    1
}

fn default_output() -> PathBuf {
    PathBuf::from("results")
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<()> {
        if self.replications == 0 {
            return invalid("spec: replications must be at least 1");
        }
        if self.methods.is_empty() {
            return invalid("spec: no methods given");
        }
        // Building one instance checks the benchmark name and dimension.
        self.benchmark.build(self.base_seed)?;
        self.optimizer.validate(self.benchmark.d)
    }

    pub fn seeds(&self) -> impl Iterator<Item = u64> + '_ {
        (0..self.replications as u64).map(move |i| self.base_seed + i)
    }
}

/// Sets `root.<dotted key>` to `raw`, read as JSON when it parses and as a
/// string otherwise. Missing intermediate objects are created.
pub fn apply_override(root: &mut Value, assignment: &str) -> Result<()> {
    let (key, raw) = assignment.split_once('=').ok_or_else(|| {
        Error::InvalidArgument(format!("override '{assignment}' is not key=value"))
    })?;
    if key.is_empty() {
        return invalid(format!("override '{assignment}' has an empty key"));
    }
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut node = root;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        if !node.is_object() {
            if node.is_null() {
                *node = Value::Object(Default::default());
            } else {
                return invalid(format!("override '{key}': '{part}' is inside a non-object"));
            }
        }
        let map = node.as_object_mut().expect("checked above");
        if i + 1 == parts.len() {
            map.insert(part.to_string(), value);
            return Ok(());
        }
        node = map.entry(part.to_string()).or_insert(Value::Null);
    }
    unreachable!("split always yields at least one part")
}

/// Reads a spec file and applies overrides in order.
pub fn load_spec(path: &Path, overrides: &[String]) -> Result<ExperimentSpec> {
    let text = fs::read_to_string(path)?;
    parse_spec(&text, overrides)
}

pub fn parse_spec(text: &str, overrides: &[String]) -> Result<ExperimentSpec> {
    let mut root: Value = serde_json::from_str(text)?;
    for o in overrides {
        apply_override(&mut root, o)?;
    }
    let spec: ExperimentSpec = serde_json::from_value(root)?;
    spec.validate()?;
    Ok(spec)
}

/// Shortest text that reads back to the same `f64` is not fixed-width;
/// this is: 17 significant digits in scientific notation.
pub fn format_float(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else if v.is_nan() {
        "nan".into()
    } else if v > 0.0 {
        "inf".into()
    } else {
        "-inf".into()
    }
}

pub fn trace_csv(record: &RunRecord) -> String {
    let mut out = String::from("t,y,best,f_evals,b_gen\n");
    for row in &record.rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            row.t,
            format_float(row.y),
            format_float(row.best),
            row.f_evals,
            row.b_generation
        );
    }
    out
}

/// Writes through a temporary file in the same directory, then renames.
pub fn write_atomic(path: &Path, contents: &str) -> Result<()> {
    let file_name = path
        .file_name()
        .ok_or_else(|| Error::InvalidArgument(format!("bad output path {}", path.display())))?;
    let tmp = path.with_file_name(format!(".{}.tmp", file_name.to_string_lossy()));
    fs::write(&tmp, contents)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub method: Method,
    pub t: usize,
    pub mean_best: f64,
    /// Sample standard deviation (n - 1); 0 for a single run.
    pub std_best: f64,
    pub runs: usize,
}

/// Per-iteration mean and standard deviation of `best` for each method,
/// in the order the methods first appear.
pub fn summarize(runs: &[(Method, &RunRecord)]) -> Vec<SummaryRow> {
    let mut methods: Vec<Method> = Vec::new();
    for (m, _) in runs {
        if !methods.contains(m) {
            methods.push(*m);
        }
    }
    let mut out = Vec::new();
    for m in methods {
        let traces: Vec<&RunRecord> = runs
            .iter()
            .filter(|(k, _)| *k == m)
            .map(|(_, r)| *r)
            .collect();
        let len = traces.iter().map(|r| r.rows.len()).min().unwrap_or(0);
        for i in 0..len {
            let vals: Vec<f64> = traces.iter().map(|r| r.rows[i].best).collect();
            let n = vals.len() as f64;
            let mean = vals.iter().sum::<f64>() / n;
            let std = if vals.len() > 1 {
                (vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)).sqrt()
            } else {
                0.0
            };
            out.push(SummaryRow {
                method: m,
                t: traces[0].rows[i].t,
                mean_best: mean,
                std_best: std,
                runs: vals.len(),
            });
        }
    }
    out
}

pub fn summary_csv(rows: &[SummaryRow]) -> String {
    let mut out = String::from("method,t,mean_best,std_best,runs\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            r.method.name(),
            r.t,
            format_float(r.mean_best),
            format_float(r.std_best),
            r.runs
        );
    }
    out
}

/// Runs one method on the benchmark instance for `seed`.
pub fn run_method(spec: &ExperimentSpec, method: Method, seed: u64) -> Result<RunRecord> {
    let mut objective = spec.benchmark.build(seed)?;
    let mut config = OptimizerConfig {
        seed,
        ..spec.optimizer.clone()
    };
    match method {
        Method::SilboBu => {
            config.strategy = Strategy::BottomUp;
            run_silbo(&mut objective, &config)
        }
        Method::SilboTd => {
            config.strategy = Strategy::TopDown;
            run_silbo(&mut objective, &config)
        }
        Method::Rembo => run_random_embedding_bo(&mut objective, &config),
        Method::Random => run_random_search(&mut objective, &config),
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RunStatus {
    pub method: Method,
    pub seed: u64,
    pub file: Option<String>,
    pub final_best: Option<f64>,
    pub f_evals: Option<usize>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub version: String,
    pub spec: ExperimentSpec,
    pub runs: Vec<RunStatus>,
    pub summary_file: String,
}

#[derive(Debug)]
pub struct ExperimentOutcome {
    pub manifest: Manifest,
    pub summary: Vec<SummaryRow>,
    pub records: Vec<(Method, u64, RunRecord)>,
}

impl ExperimentOutcome {
    pub fn failures(&self) -> usize {
        self.manifest
            .runs
            .iter()
            .filter(|r| r.error.is_some())
            .count()
    }
}

/// Runs every (method, seed) pair on up to `jobs` threads and writes the
/// trace files, `summary.csv` and `manifest.json` into the output directory.
pub fn run_experiment(spec: &ExperimentSpec, jobs: usize) -> Result<ExperimentOutcome> {
    spec.validate()?;
    let dir = &spec.output_dir;
    fs::create_dir_all(dir)?;
    let tasks: Vec<(Method, u64)> = spec
        .methods
        .iter()
        .flat_map(|&m| spec.seeds().map(move |s| (m, s)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
    let results: Vec<(Method, u64, Result<RunRecord>)> = pool.install(|| {
        tasks
            .par_iter()
            .map(|&(m, s)| {
                let outcome = run_method(spec, m, s).and_then(|rec| {
                    let path = dir.join(format!("{}_{s}.csv", m.name()));
                    write_atomic(&path, &trace_csv(&rec))?;
                    Ok(rec)
                });
                match &outcome {
                    Ok(rec) => info!("{} seed {s}: best {}", m.name(), rec.best_y),
                    Err(e) => error!("{} seed {s} failed: {e}", m.name()),
                }
                (m, s, outcome)
            })
            .collect()
    });

    let mut statuses = Vec::with_capacity(results.len());
    let mut records = Vec::new();
    for (m, s, outcome) in results {
        match outcome {
            Ok(rec) => {
                statuses.push(RunStatus {
                    method: m,
                    seed: s,
                    file: Some(format!("{}_{s}.csv", m.name())),
                    final_best: Some(rec.best_y),
                    f_evals: Some(rec.total_evals()),
                    error: None,
                });
                records.push((m, s, rec));
            }
            Err(e) => statuses.push(RunStatus {
                method: m,
                seed: s,
                file: None,
                final_best: None,
                f_evals: None,
                error: Some(e.to_string()),
            }),
        }
    }
    let refs: Vec<(Method, &RunRecord)> = records.iter().map(|(m, _, r)| (*m, r)).collect();
    let summary = summarize(&refs);
    write_atomic(&dir.join("summary.csv"), &summary_csv(&summary))?;
    let manifest = Manifest {
        version: env!("CARGO_PKG_VERSION").to_string(),
        spec: spec.clone(),
        runs: statuses,
        summary_file: "summary.csv".into(),
    };
    write_atomic(
        &dir.join("manifest.json"),
        &serde_json::to_string_pretty(&manifest)?,
    )?;
    Ok(ExperimentOutcome {
        manifest,
        summary,
        records,
    })
}

/// Evaluates a Latin-hypercube design, learns an embedding from it and
/// writes `embedding.csv` with columns `z_1, ..., z_r, y`.
pub fn dump_embedding(spec: &ExperimentSpec) -> Result<PathBuf> {
    let dump = &spec.dump;
    let mut objective = spec.benchmark.build(dump.seed)?;
    let d = objective.dim();
    let r = spec.optimizer.r;
    if r == 0 || r > d {
        return invalid(format!("dump: need 1 <= r <= d, got r = {r}"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(dump.seed);
    let x = latin_hypercube(dump.points, d, &mut rng);
    let x_u = if dump.unlabeled > 0 {
        latin_hypercube(dump.unlabeled, d, &mut rng)
    } else {
        Matrix::zeros(0, d)
    };
    let mut y = Vec::with_capacity(dump.points);
    for i in 0..dump.points {
        let row: Vec<f64> = x.row(i).iter().cloned().collect();
        y.push(objective.evaluate(&row)?);
    }
    let params = SemiSirParams {
        r,
        ..spec.optimizer.semisir.clone()
    };
    let model = solve_embedding(&x, &y, &x_u, &params, dump.seed)?;
    let z = &x * model.b.transpose();

    let mut out = (1..=r)
        .map(|i| format!("z_{i}"))
        .collect::<Vec<_>>()
        .join(",");
    out.push_str(",y\n");
    for i in 0..dump.points {
        for j in 0..r {
            out.push_str(&format_float(z[(i, j)]));
            out.push(',');
        }
        out.push_str(&format_float(y[i]));
        out.push('\n');
    }
    fs::create_dir_all(&spec.output_dir)?;
    let path = spec.output_dir.join("embedding.csv");
    write_atomic(&path, &out)?;
    Ok(path)
}
