//! Benchmark harness: registration cases described in TOML, one CSV row
//! per (case, size, backend).
//!
//! ```toml
//! threads = 1                  # worker threads per case (default 1)
//!
//! [defaults]
//! sigma = 2.0
//! lambda = 1.0
//! timesteps = 10
//! threshold_multiplier = 3.0
//! max_iterations = 50
//!
//! [[case]]
//! name = "flat"
//! backends = ["exact", "bh"]
//! sizes = [300, 600, 1200]
//! source = { kind = "flat_rectangle" }
//! target = { kind = "bent_rectangle" }
//! ```
//!
//! Any `[defaults]` key may be repeated inside a case to override it.
//! Without `sizes`, the source `n_points` is used for both shapes.

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::with_threads;
use crate::optimizer::register;
use crate::shooting::Profile;
use crate::synthetic::{generate, pairwise_stats, ShapeSpec};
use crate::{validate_config, Backend, Error, PointSet, Result, ShootingConfig};

#[derive(Clone, Debug, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Settings {
    pub sigma: Option<f64>,
    pub lambda: Option<f64>,
    pub timesteps: Option<usize>,
    pub threshold_multiplier: Option<f64>,
    pub max_iterations: Option<usize>,
}

impl Settings {
    fn or(&self, base: &Settings) -> Settings {
        Settings {
            sigma: self.sigma.or(base.sigma),
            lambda: self.lambda.or(base.lambda),
            timesteps: self.timesteps.or(base.timesteps),
            threshold_multiplier: self.threshold_multiplier.or(base.threshold_multiplier),
            max_iterations: self.max_iterations.or(base.max_iterations),
        }
    }

    pub fn to_config(&self, backend: Backend) -> ShootingConfig<f64> {
        let mut c = ShootingConfig { backend, ..ShootingConfig::default() };
        c.sigma = self.sigma.unwrap_or(c.sigma);
        c.lambda = self.lambda.unwrap_or(c.lambda);
        c.timesteps = self.timesteps.unwrap_or(c.timesteps);
        c.threshold_multiplier = self.threshold_multiplier.unwrap_or(c.threshold_multiplier);
        c.optimizer.max_iterations = self.max_iterations.unwrap_or(c.optimizer.max_iterations);
        c
    }
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
pub struct CaseSpec {
    pub name: String,
    #[serde(default = "both_backends")]
    pub backends: Vec<Backend>,
    #[serde(default)]
    pub sizes: Vec<usize>,
    pub source: ShapeSpec,
    pub target: ShapeSpec,
    #[serde(flatten)]
    pub settings: Settings,
}

fn both_backends() -> Vec<Backend> {
    vec![Backend::Exact, Backend::BarnesHut]
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchmarkSuite {
    #[serde(default = "one")]
    pub threads: usize,
    #[serde(default)]
    pub defaults: Settings,
    #[serde(default, rename = "case")]
    pub cases: Vec<CaseSpec>,
}

fn one() -> usize {
    1
}

impl BenchmarkSuite {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let suite: BenchmarkSuite = toml::from_str(text).map_err(|e| Error::InvalidSpec(e.to_string()))?;
        if suite.threads == 0 {
            return Err(Error::InvalidSpec("threads must be >= 1".into()));
        }
        Ok(suite)
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }
}

/// One benchmark row. CSV columns follow field order.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BenchmarkRecord {
    pub case: String,
    pub backend: Backend,
    pub n: usize,
    pub timesteps: usize,
    pub sigma: f64,
    pub lambda: f64,
    /// Mean 3σ-neighbour count of the source shape.
    pub b_mean: f64,
    pub tree_build_ms: f64,
    pub forward_ms: f64,
    pub backward_ms: f64,
    pub total_ms: f64,
    pub residual_sse: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub mean_direct: f64,
    pub mean_approximated: f64,
    pub termination: String,
    /// `ok`, or `error: <message>` with the numeric fields zeroed.
    pub status: String,
}

/// Column order of the CSV output.
pub const CSV_COLUMNS: [&str; 18] = [
    "case",
    "backend",
    "n",
    "timesteps",
    "sigma",
    "lambda",
    "b_mean",
    "tree_build_ms",
    "forward_ms",
    "backward_ms",
    "total_ms",
    "residual_sse",
    "iterations",
    "evaluations",
    "mean_direct",
    "mean_approximated",
    "termination",
    "status",
];

impl BenchmarkRecord {
    fn failed(case: &str, backend: Backend, n: usize, config: &ShootingConfig<f64>, err: &Error) -> Self {
        BenchmarkRecord {
            case: case.to_string(),
            backend,
            n,
            timesteps: config.timesteps,
            sigma: config.sigma,
            lambda: config.lambda,
            b_mean: 0.0,
            tree_build_ms: 0.0,
            forward_ms: 0.0,
            backward_ms: 0.0,
            total_ms: 0.0,
            residual_sse: 0.0,
            iterations: 0,
            evaluations: 0,
            mean_direct: 0.0,
            mean_approximated: 0.0,
            termination: String::new(),
            status: format!("error: {err}"),
        }
    }

    pub fn is_ok(&self) -> bool {
        self.status == "ok"
    }
}

fn shapes(case: &CaseSpec, n: usize) -> Result<(PointSet<f64>, PointSet<f64>)> {
    let mut s = case.source.clone();
    let mut t = case.target.clone();
    s.n_points = n;
    t.n_points = n;
    Ok((generate(&s)?, generate(&t)?))
}

/// Registers `source` onto `target` and times it on the calling thread's pool.
pub fn run_case(
    name: &str,
    source: &PointSet<f64>,
    target: &PointSet<f64>,
    config: ShootingConfig<f64>,
) -> BenchmarkRecord {
    let backend = config.backend;
    let n = source.len();
    let run = || -> Result<BenchmarkRecord> {
        let cfg = validate_config(config.clone())?;
        let b_mean = pairwise_stats(source, cfg.sigma).b;
        let mut profile = Profile::default();
        let start = Instant::now();
        let reg = register(source, target, &cfg, &mut profile)?;
        let total = start.elapsed();
        let ms = |d: std::time::Duration| d.as_secs_f64() * 1e3;
        Ok(BenchmarkRecord {
            case: name.to_string(),
            backend,
            n,
            timesteps: cfg.timesteps,
            sigma: cfg.sigma,
            lambda: cfg.lambda,
            b_mean,
            tree_build_ms: ms(profile.tree_build),
            forward_ms: ms(profile.forward),
            backward_ms: ms(profile.backward),
            total_ms: ms(total),
            residual_sse: reg.report.residual_sse,
            iterations: reg.trace.iterations(),
            evaluations: reg.trace.evaluations,
            mean_direct: profile.mean_direct_per_query(),
            mean_approximated: profile.mean_approximated_per_query(),
            termination: format!("{:?}", reg.trace.termination),
            status: "ok".into(),
        })
    };
    run().unwrap_or_else(|e| BenchmarkRecord::failed(name, backend, n, &config, &e))
}

/// Runs every case sequentially. Failures become rows with an error
/// status and the suite continues.
pub fn run_benchmark_suite(suite: &BenchmarkSuite) -> Result<Vec<BenchmarkRecord>> {
    run_benchmark_suite_with(suite, |_| {})
}

/// As [`run_benchmark_suite`], calling `on_record` after each row.
pub fn run_benchmark_suite_with(
    suite: &BenchmarkSuite,
    mut on_record: impl FnMut(&BenchmarkRecord) + Send,
) -> Result<Vec<BenchmarkRecord>> {
    with_threads(Some(suite.threads), || {
        let mut out = Vec::new();
        for case in &suite.cases {
            let settings = case.settings.or(&suite.defaults);
            let sizes = if case.sizes.is_empty() { vec![case.source.n_points] } else { case.sizes.clone() };
            for &n in &sizes {
                let pair = shapes(case, n);
                for &backend in &case.backends {
                    let config = settings.to_config(backend);
                    let rec = match &pair {
                        Ok((s, t)) => run_case(&case.name, s, t, config),
                        Err(e) => BenchmarkRecord::failed(&case.name, backend, n, &config, e),
                    };
                    on_record(&rec);
                    out.push(rec);
                }
            }
        }
        out
    })
}

pub fn write_records_csv<W: Write>(records: &[BenchmarkRecord], out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    let io = |e: csv::Error| Error::Io(e.into());
    w.write_record(CSV_COLUMNS).map_err(io)?;
    for r in records {
        w.serialize(r).map_err(io)?;
    }
    w.flush()?;
    Ok(())
}
