//! `geoshoot` command-line tool.
//!
//! Exit codes: 0 success, 2 bad arguments, configuration or input files,
//! 3 when the flow produced non-finite values.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, CommandFactory, Parser, Subcommand};
use geoshoot::optimizer::register;
use geoshoot::pipeline::bench::{run_benchmark_suite_with, write_records_csv};
use geoshoot::pipeline::{
    procrustes_align, read_points, threads_from_env, with_threads, write_momenta, write_points, BenchmarkSuite,
    MomentaHeader, PointFormat,
};
use geoshoot::shooting::{shoot_forward, warp_points, Profile};
use geoshoot::synthetic::{experiment_specs, generate, Experiment, ShapeKind, ShapeSpec};
use geoshoot::{validate_config, Backend, Error, PointSet64, ShootingConfig64};

#[derive(Parser)]
#[command(name = "geoshoot", version, about = "Point-set registration by geodesic shooting")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Register a moving point set onto a fixed one with index correspondence.
    Register(RegisterArgs),
    /// Write one synthetic shape.
    Synthetic(SyntheticArgs),
    /// Write a moving/fixed pair for a built-in experiment.
    Experiment(ExperimentArgs),
    /// Run a benchmark suite described in TOML and emit CSV.
    Bench(BenchArgs),
}

#[derive(Args)]
struct RegisterArgs {
    #[arg(long)]
    moving: PathBuf,
    #[arg(long)]
    fixed: PathBuf,
    #[arg(long, default_value_t = 2.0)]
    sigma: f64,
    #[arg(long, default_value_t = 1.0)]
    lambda: f64,
    #[arg(long, default_value_t = 40)]
    timesteps: usize,
    #[arg(long, default_value = "exact", value_parser = parse_backend)]
    backend: Backend,
    #[arg(long = "threshold-mult", default_value_t = 3.0)]
    threshold_mult: f64,
    #[arg(long = "max-iter", default_value_t = 200)]
    max_iter: usize,
    #[arg(long = "out-prefix")]
    out_prefix: PathBuf,
    /// Rigidly pre-align the moving set before fitting.
    #[arg(long)]
    procrustes: bool,
    /// Extra points carried through the fitted deformation.
    #[arg(long)]
    warp: Option<PathBuf>,
    /// Also write the optimizer trace as CSV.
    #[arg(long)]
    trace: bool,
}

#[derive(Args)]
struct SyntheticArgs {
    #[arg(long, value_parser = parse_kind)]
    kind: ShapeKind,
    #[arg(long)]
    n: usize,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    radius: Option<f64>,
    #[arg(long)]
    rows: Option<usize>,
    #[arg(long)]
    spacing: Option<f64>,
    #[arg(long = "bend-angle")]
    bend_angle: Option<f64>,
    #[arg(long = "center-offset")]
    center_offset: Option<f64>,
    #[arg(long = "box-size")]
    box_size: Option<f64>,
    #[arg(long = "cluster-spread")]
    cluster_spread: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct ExperimentArgs {
    /// `flat` (strip that bends) or `circles` (circle that expands).
    #[arg(value_parser = parse_experiment)]
    name: Experiment,
    #[arg(long, default_value_t = 1200)]
    n: usize,
    /// Writes `<prefix>_moving.xyz` and `<prefix>_fixed.xyz`.
    #[arg(long = "out-prefix")]
    out_prefix: PathBuf,
}

#[derive(Args)]
struct BenchArgs {
    suite: PathBuf,
    /// CSV destination; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_backend(s: &str) -> Result<Backend, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_kind(s: &str) -> Result<ShapeKind, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_experiment(s: &str) -> Result<Experiment, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::NonFiniteState { .. } | Error::NonFiniteObjectiveAtStart => 3,
        _ => 2,
    }
}

fn with_suffix(prefix: &Path, suffix: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn read(path: &Path) -> Result<PointSet64, Error> {
    read_points(path, PointFormat::from_path(path))
}

fn run_register(a: &RegisterArgs) -> Result<(), Error> {
    let mut config = ShootingConfig64 {
        sigma: a.sigma,
        lambda: a.lambda,
        timesteps: a.timesteps,
        backend: a.backend,
        threshold_multiplier: a.threshold_mult,
        ..Default::default()
    };
    config.optimizer.max_iterations = a.max_iter;
    let config = validate_config(config)?;
    let fixed = read(&a.fixed)?;
    let mut moving = read(&a.moving)?;
    let mut extra = a.warp.as_deref().map(read).transpose()?;

    let start = Instant::now();
    if a.procrustes {
        let (xf, aligned) = procrustes_align(&moving, &fixed)?;
        moving = aligned;
        extra = extra.map(|e| xf.apply_set(&e));
    }
    let reg = register(&moving, &fixed, &config, &mut Profile::default())?;
    let trajectory = shoot_forward(&moving, &reg.momenta, &config)?;
    let warped_extra = extra.map(|e| warp_points(&trajectory, &e, &config)).transpose()?;
    let elapsed = start.elapsed();

    write_momenta(&reg.momenta, with_suffix(&a.out_prefix, "_p0.xyz"), &MomentaHeader::from_config(&config))?;
    write_points(trajectory.last().0, with_suffix(&a.out_prefix, "_warped.xyz"), PointFormat::XyzText)?;
    if a.trace {
        let f = std::fs::File::create(with_suffix(&a.out_prefix, "_trace.csv"))?;
        reg.trace.write_csv(std::io::BufWriter::new(f))?;
    }
    if let (Some(points), Some(src)) = (warped_extra, &a.warp) {
        let fmt = PointFormat::from_path(src);
        let ext = src.extension().and_then(|e| e.to_str()).unwrap_or("xyz");
        write_points(&points, with_suffix(&a.out_prefix, &format!("_warp.{ext}")), fmt)?;
    }
    println!(
        "residual={:.9e} time_ms={:.1} iters={}",
        reg.report.residual_sse,
        elapsed.as_secs_f64() * 1e3,
        reg.trace.iterations()
    );
    Ok(())
}

fn run_synthetic(a: &SyntheticArgs) -> Result<(), Error> {
    let mut spec = ShapeSpec::new(a.kind, a.n).with_seed(a.seed);
    spec.radius = a.radius.unwrap_or(spec.radius);
    spec.rows = a.rows.unwrap_or(spec.rows);
    spec.spacing = a.spacing.unwrap_or(spec.spacing);
    spec.bend_angle = a.bend_angle.unwrap_or(spec.bend_angle);
    spec.center_offset = a.center_offset.unwrap_or(spec.center_offset);
    spec.box_size = a.box_size.unwrap_or(spec.box_size);
    spec.cluster_spread = a.cluster_spread.unwrap_or(spec.cluster_spread);
    let q: PointSet64 = generate(&spec)?;
    write_points(&q, &a.out, PointFormat::from_path(&a.out))
}

fn run_experiment(a: &ExperimentArgs) -> Result<(), Error> {
    let (m, f) = experiment_specs(a.name, a.n);
    let (m, f): (PointSet64, PointSet64) = (generate(&m)?, generate(&f)?);
    write_points(&m, with_suffix(&a.out_prefix, "_moving.xyz"), PointFormat::XyzText)?;
    write_points(&f, with_suffix(&a.out_prefix, "_fixed.xyz"), PointFormat::XyzText)
}

fn run_bench(a: &BenchArgs) -> Result<(), Error> {
    let suite = BenchmarkSuite::from_path(&a.suite)?;
    let records = run_benchmark_suite_with(&suite, |r| {
        eprintln!("{} {} n={} total_ms={:.1} status={}", r.case, r.backend, r.n, r.total_ms, r.status);
    })?;
    match &a.out {
        Some(p) => write_records_csv(&records, std::io::BufWriter::new(std::fs::File::create(p)?)),
        None => write_records_csv(&records, std::io::stdout().lock()),
    }
}

/// Usage of the named subcommand, or of the whole tool.
fn usage_for(sub: Option<&str>) -> clap::builder::StyledStr {
    let mut cmd = Cli::command();
    cmd.build();
    match sub.and_then(|name| cmd.find_subcommand_mut(name)) {
        Some(s) => s.render_usage(),
        None => cmd.render_usage(),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            if !e.use_stderr() {
                return ExitCode::SUCCESS;
            }
            eprintln!("\n{}", usage_for(std::env::args().nth(1).as_deref()));
            return ExitCode::from(2);
        }
    };
    let result = threads_from_env().and_then(|threads| {
        with_threads(threads, || match &cli.command {
            Command::Register(a) => run_register(a),
            Command::Synthetic(a) => run_synthetic(a),
            Command::Experiment(a) => run_experiment(a),
            Command::Bench(a) => run_bench(a),
        })?
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
