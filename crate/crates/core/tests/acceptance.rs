//! Acceptance suite. Runs every criterion in sequence on one worker thread
//! (timings compare backends) and prints one PASS/FAIL line per criterion.
//! Exits non-zero if any criterion fails.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use geoshoot::bh_kernel::bh_velocity_field;
use geoshoot::kernel_exact::{exact_velocity, hamiltonian};
use geoshoot::octree::{Octree, MAX_BUCKET, MAX_DEPTH};
use geoshoot::optimizer::{register, Registration};
use geoshoot::pipeline::{procrustes_align, with_threads, RigidTransform};
use geoshoot::shooting::{backward_gradient, objective, objective_and_gradient, shoot_forward, warp_points, Profile};
use geoshoot::synthetic::{experiment_pair, Experiment};
use geoshoot::{validate_config, Backend, MomentumSet, PointSet, ShootingConfig, ValidatedConfig, Vec3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn config(sigma: f64, lambda: f64, timesteps: usize, backend: Backend) -> ValidatedConfig<f64> {
    validate_config(ShootingConfig { sigma, lambda, timesteps, backend, ..Default::default() }).unwrap()
}

fn random_vecs(rng: &mut ChaCha8Rng, n: usize, half: f64) -> Vec<Vec3<f64>> {
    (0..n).map(|_| Vec3::new(rng.gen_range(-half..half), rng.gen_range(-half..half), rng.gen_range(-half..half))).collect()
}

fn inf_norm(v: &[Vec3<f64>]) -> f64 {
    v.iter().map(Vec3::max_abs).fold(0.0, f64::max)
}

fn gradient_vs_finite_differences() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0.0f64;
    for i in 0..20 {
        let n = [3, 5, 10][i % 3];
        let t = [5, 20][(i / 3) % 2];
        let sigma = [0.5, 2.0][(i / 6) % 2];
        let q = PointSet::new(random_vecs(&mut rng, n, 1.5 * sigma)).unwrap();
        let p = MomentumSet::new(random_vecs(&mut rng, n, 0.3 * sigma)).unwrap();
        let target = PointSet::new(q.iter().map(|x| *x + Vec3::new(0.3, -0.2, 0.1) * sigma).collect()).unwrap();
        let cfg = config(sigma, 1.0, t, Backend::Exact);
        let traj = shoot_forward(&q, &p, &cfg).unwrap();
        let g = backward_gradient(&traj, &target, &cfg).unwrap();
        let f = |m: &[Vec3<f64>]| objective(&q, &MomentumSet::new(m.to_vec()).unwrap(), &target, &cfg).unwrap().total;
        let h = 1e-5 * sigma;
        for a in 0..n {
            for c in 0..3 {
                let shifted = |s: f64| {
                    let mut m = p.as_slice().to_vec();
                    m[a][c] += s;
                    f(&m)
                };
                let fd = (shifted(h) - shifted(-h)) / (2.0 * h);
                let rel = (fd - g[a][c]).abs() / fd.abs().max(g[a][c].abs());
                worst = worst.max(rel);
            }
        }
    }
    check(worst < 1e-5, format!("20 instances, max per-component relative error {worst:.2e} (< 1e-5)"))
}

fn bh_infinite_threshold_is_exact() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (mut worst_f, mut worst_g) = (0.0f64, 0.0f64);
    for i in 0..20 {
        let n = [2, 17, 60, 200, 500][i % 5];
        let sigma = rng.gen_range(0.5..3.0);
        let q = PointSet::new(random_vecs(&mut rng, n, 4.0 * sigma)).unwrap();
        let p = MomentumSet::new(random_vecs(&mut rng, n, 0.3 * sigma)).unwrap();
        let target = PointSet::new(random_vecs(&mut rng, n, 4.0 * sigma)).unwrap();
        let exact = config(sigma, 1.0, 5, Backend::Exact);
        let mut bh = exact.clone().into_inner();
        bh.backend = Backend::BarnesHut;
        bh.threshold_multiplier = f64::INFINITY;
        let bh = validate_config(bh).unwrap();
        let (re, ge) = objective_and_gradient(&q, &p, &target, &exact, &mut Profile::default()).unwrap();
        let (rb, gb) = objective_and_gradient(&q, &p, &target, &bh, &mut Profile::default()).unwrap();
        worst_f = worst_f.max((re.total - rb.total).abs() / re.total.abs());
        let diff: Vec<_> = ge.iter().zip(&gb).map(|(a, b)| *a - *b).collect();
        worst_g = worst_g.max(inf_norm(&diff) / inf_norm(&ge));
    }
    check(
        worst_f < 1e-10 && worst_g < 1e-10,
        format!("20 instances, objective rel {worst_f:.1e}, gradient rel {worst_g:.1e} (< 1e-10)"),
    )
}

/// Registration settings shared by the timing criteria.
const SIGMA: f64 = 2.0;
const LAMBDA: f64 = 1.0;
const TIMESTEPS: usize = 10;

fn timed_registration(source: &PointSet<f64>, target: &PointSet<f64>, backend: Backend) -> (Registration<f64>, Duration) {
    let cfg = config(SIGMA, LAMBDA, TIMESTEPS, backend);
    let start = Instant::now();
    let reg = register(source, target, &cfg, &mut Profile::default()).unwrap();
    (reg, start.elapsed())
}

struct FlatRuns {
    exact: (Registration<f64>, Duration),
    bh: (Registration<f64>, Duration),
    source: PointSet<f64>,
}

fn flat_runs() -> FlatRuns {
    let (source, target) = experiment_pair(Experiment::FlatToBent, 1200).unwrap();
    let exact = timed_registration(&source, &target, Backend::Exact);
    let bh = timed_registration(&source, &target, Backend::BarnesHut);
    FlatRuns { exact, bh, source }
}

/// `(max per-point relative error, field-norm relative error)` of BH
/// velocities at the carrier points of one snapshot.
fn velocity_errors(q: &PointSet<f64>, p: &MomentumSet<f64>) -> (f64, f64) {
    let exact = exact_velocity(q, q, p, SIGMA).unwrap();
    let tree = Octree::build(q, p).unwrap();
    let (approx, _) = bh_velocity_field(&tree, q.as_slice(), SIGMA, 3.0 * SIGMA).unwrap();
    let per_point = approx.iter().zip(&exact).map(|(a, e)| (*a - *e).norm() / e.norm()).fold(0.0, f64::max);
    let num: f64 = approx.iter().zip(&exact).map(|(a, e)| (*a - *e).norm_squared()).sum();
    let den: f64 = exact.iter().map(Vec3::norm_squared).sum();
    (per_point, (num / den).sqrt())
}

fn bh_accuracy(runs: &FlatRuns) -> Outcome {
    // Instance momenta: each point pushed toward its target.
    let (source, target) = experiment_pair(Experiment::FlatToBent, 1200).unwrap();
    let toward = MomentumSet::new(source.iter().zip(target.iter()).map(|(s, t)| (*t - *s) * 0.05).collect()).unwrap();
    let (instance_point, _) = velocity_errors(&source, &toward);
    // Along the exact geodesic through the fitted momenta. Per-point relative
    // error is reported but not gated there: the fitted field has
    // near-stagnation points where any absolute error is a large fraction.
    let cfg = config(SIGMA, LAMBDA, TIMESTEPS, Backend::Exact);
    let traj = shoot_forward(&runs.source, &runs.exact.0.momenta, &cfg).unwrap();
    let (mut fitted_point, mut fitted_field) = (0.0f64, 0.0f64);
    for (q, p) in traj.states() {
        let (a, b) = velocity_errors(q, p);
        fitted_point = fitted_point.max(a);
        fitted_field = fitted_field.max(b);
    }
    let (re, rb) = (runs.exact.0.report.residual_sse, runs.bh.0.report.residual_sse);
    let gap = (rb - re).abs() / re;
    check(
        instance_point < 2e-2 && fitted_field < 2e-2 && gap < 0.05,
        format!(
            "N=1200 per-point velocity rel error {instance_point:.2e} (< 2e-2); fitted geodesic field rel error {fitted_field:.2e} (< 2e-2), per-point max {fitted_point:.2e} (not gated); residual exact {re:.4} vs BH {rb:.4}, gap {:.2}% (< 5%) after {}/{} iterations ({:?}/{:?})",
            100.0 * gap,
            runs.exact.0.trace.iterations(),
            runs.bh.0.trace.iterations(),
            runs.exact.0.trace.termination,
            runs.bh.0.trace.termination,
        ),
    )
}

fn elongated_speed(runs: &FlatRuns) -> Outcome {
    let (te, tb) = (runs.exact.1.as_secs_f64(), runs.bh.1.as_secs_f64());
    check(tb < te, format!("flat N=1200 wall time exact {te:.1} s vs BH {tb:.1} s (BH faster, {:.2}x)", te / tb))
}

fn concentrated_speed() -> Outcome {
    let (source, target) = experiment_pair(Experiment::Circles, 1200).unwrap();
    let (re, te) = timed_registration(&source, &target, Backend::Exact);
    let (rb, tb) = timed_registration(&source, &target, Backend::BarnesHut);
    let (te, tb) = (te.as_secs_f64(), tb.as_secs_f64());
    check(
        tb > te,
        format!(
            "circles N=1200 wall time exact {te:.1} s vs BH {tb:.1} s (BH slower, {:.2}x); residuals {:.3e}/{:.3e}",
            tb / te,
            re.report.residual_sse,
            rb.report.residual_sse
        ),
    )
}

/// Fastest of `reps` objective+gradient evaluations at a fixed, non-trivial
/// momentum field.
fn evaluation_time(n: usize, backend: Backend, reps: usize) -> f64 {
    let (source, target) = experiment_pair(Experiment::FlatToBent, n).unwrap();
    let p = MomentumSet::new(source.iter().zip(target.iter()).map(|(s, t)| (*t - *s) * 0.05).collect()).unwrap();
    let cfg = config(SIGMA, LAMBDA, TIMESTEPS, backend);
    (0..reps)
        .map(|_| {
            let start = Instant::now();
            objective_and_gradient(&source, &p, &target, &cfg, &mut Profile::default()).unwrap();
            start.elapsed().as_secs_f64()
        })
        .fold(f64::INFINITY, f64::min)
}

fn scaling() -> Outcome {
    let e1 = evaluation_time(1200, Backend::Exact, 3);
    let e2 = evaluation_time(2400, Backend::Exact, 3);
    let b1 = evaluation_time(1200, Backend::BarnesHut, 5);
    let b2 = evaluation_time(2400, Backend::BarnesHut, 5);
    let (re, rb) = (e2 / e1, b2 / b1);
    check(
        (3.6..=4.4).contains(&re) && rb < re,
        format!(
            "per-evaluation time 1200->2400: exact {e1:.3}->{e2:.3} s ({re:.2}x, in [3.6, 4.4]); BH {b1:.3}->{b2:.3} s ({rb:.2}x, smaller)"
        ),
    )
}

fn drift(timesteps: usize) -> f64 {
    let q = PointSet::from_rows(&[[-1.0, 0.0, 0.0], [1.0, 0.0, 0.0]]).unwrap();
    let p = MomentumSet::from_rows(&[[0.5, 0.0, 0.0], [-0.5, 0.0, 0.0]]).unwrap();
    let sigma = 1.0;
    let traj = shoot_forward(&q, &p, &config(sigma, 1.0, timesteps, Backend::Exact)).unwrap();
    let h0 = hamiltonian(&q, &p, sigma).unwrap();
    traj.states().map(|(q, p)| (hamiltonian(q, p, sigma).unwrap() - h0).abs() / h0).fold(0.0, f64::max)
}

fn energy_order() -> Outcome {
    let ts = [25, 50, 100, 200];
    let d: Vec<f64> = ts.iter().map(|&t| drift(t)).collect();
    // Observed order of each step halving; explicit Euler approaches 1 from
    // below as the second-order term fades.
    let orders: Vec<f64> = d.windows(2).map(|w| (w[0] / w[1]).log2()).collect();
    let first_order = orders.iter().all(|o| *o >= 0.9) && orders.windows(2).all(|w| w[1] >= w[0]);
    check(
        first_order && d[3] < 1e-2,
        format!(
            "head-on drift T=25..200: {:.3e} {:.3e} {:.3e} {:.3e}; observed orders {:.3} {:.3} {:.3} (>= 0.9, rising to 1); T=200 drift < 1e-2",
            d[0], d[1], d[2], d[3], orders[0], orders[1], orders[2]
        ),
    )
}

fn inside<T: PartialOrd + Copy>(x: &Vec3<T>, lo: &Vec3<T>, hi: &Vec3<T>) -> bool {
    (0..3).all(|c| x[c] >= lo[c] && x[c] < hi[c])
}

fn octree_violations(q: &PointSet<f64>, p: &MomentumSet<f64>, alpha: &[Vec3<f64>], beta: &[Vec3<f64>], rng: &mut ChaCha8Rng) -> Vec<String> {
    let mut bad = Vec::new();
    let mut tree = Octree::build(q, p).unwrap();
    tree.accumulate_adjoints(alpha, beta).unwrap();
    let mut seen = vec![0usize; q.len()];
    let close = |a: &Vec3<f64>, b: &Vec3<f64>, scale: f64| (*a - *b).max_abs() <= 1e-12 * scale.max(1.0);
    for (id, node) in tree.nodes().iter().enumerate() {
        let members: Vec<usize> = (0..q.len()).filter(|&i| inside(&q[i], &node.cell_min, &node.cell_max)).collect();
        if node.count != members.len() {
            bad.push(format!("node {id}: count {} vs {} by membership", node.count, members.len()));
            continue;
        }
        if node.is_leaf() {
            let pts = node.points();
            if pts.len() > 1 && node.depth() < MAX_DEPTH || pts.len() > MAX_BUCKET {
                bad.push(format!("leaf {id} holds {} points at depth {}", pts.len(), node.depth()));
            }
            let mut held: Vec<usize> = pts.iter().map(|&i| i as usize).collect();
            held.sort_unstable();
            if held != members {
                bad.push(format!("leaf {id} holds {held:?}, geometry says {members:?}"));
            }
            for &i in &held {
                seen[i] += 1;
                if tree.leaf_of(i) != id {
                    bad.push(format!("leaf_of({i}) = {} but point sits in {id}", tree.leaf_of(i)));
                }
            }
        } else {
            let child_total: usize = node.children().map(|(_, c)| tree.node(c).count).sum();
            if child_total != node.count {
                bad.push(format!("node {id}: children hold {child_total} of {}", node.count));
            }
        }
        if members.is_empty() {
            continue;
        }
        let sum = |v: &dyn Fn(usize) -> Vec3<f64>| members.iter().fold(Vec3::zero(), |a, &i| a + v(i));
        let centroid = sum(&|i| q[i]) / members.len() as f64;
        let scale = members.iter().map(|&i| q[i].max_abs()).fold(0.0, f64::max);
        if !close(&node.centroid, &centroid, scale) {
            bad.push(format!("node {id}: centroid off"));
        }
        let (pm, am, bm) = (sum(&|i| p[i]), sum(&|i| alpha[i]), sum(&|i| beta[i]));
        let mscale = members.len() as f64;
        if !close(&node.total_momentum, &pm, mscale) || !close(&node.adjoint_pos_sum, &am, mscale) || !close(&node.adjoint_mom_sum, &bm, mscale) {
            bad.push(format!("node {id}: aggregate sums off"));
        }
        let lo = members.iter().fold(Vec3::splat(f64::INFINITY), |a, &i| a.min(&q[i]));
        let hi = members.iter().fold(Vec3::splat(f64::NEG_INFINITY), |a, &i| a.max(&q[i]));
        if node.actual_min != lo || node.actual_max != hi {
            bad.push(format!("node {id}: tight bounds off"));
        }
        for _ in 0..4 {
            let x = Vec3::new(rng.gen_range(-60.0..60.0), rng.gen_range(-60.0..60.0), rng.gen_range(-60.0..60.0));
            let md = node.min_distance(&x);
            if members.iter().any(|&i| (q[i] - x).norm() < md * (1.0 - 1e-12)) {
                bad.push(format!("node {id}: min_distance not a lower bound"));
            }
        }
    }
    if seen.iter().any(|&s| s != 1) {
        bad.push("some point is not in exactly one leaf".to_string());
    }
    bad
}

fn octree_invariants() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut nodes = 0;
    for k in 0..50 {
        let n = rng.gen_range(1..=1000);
        let mut pts = match k % 5 {
            // clustered
            0 => (0..n).map(|_| Vec3::new(rng.gen_range(0.0..0.01), rng.gen_range(0.0..0.01), rng.gen_range(0.0..0.01))).collect(),
            // planar
            1 => (0..n).map(|_| Vec3::new(rng.gen_range(-30.0..30.0), rng.gen_range(-30.0..30.0), 0.0)).collect(),
            // lattice with ties on cell boundaries
            2 => (0..n).map(|i| Vec3::new((i % 10) as f64, (i / 10 % 10) as f64, (i / 100) as f64)).collect(),
            _ => random_vecs(&mut rng, n, 50.0),
        };
        if k % 7 == 3 && n > 2 {
            pts[1] = pts[0];
        }
        let q = PointSet::new(pts).unwrap();
        let p = MomentumSet::new(random_vecs(&mut rng, n, 1.0)).unwrap();
        let alpha = random_vecs(&mut rng, n, 1.0);
        let beta = random_vecs(&mut rng, n, 1.0);
        let bad = octree_violations(&q, &p, &alpha, &beta, &mut rng);
        if let Some(first) = bad.first() {
            return Err(format!("set {k} (N={n}): {} violations, first: {first}", bad.len()));
        }
        nodes += Octree::build(&q, &p).unwrap().nodes().len();
    }
    Ok(format!("50 random sets, {nodes} nodes checked against brute-force membership"))
}

fn diffeomorphism() -> Outcome {
    let (source, target) = experiment_pair(Experiment::Circles, 200).unwrap();
    let cfg = config(SIGMA, LAMBDA, 20, Backend::Exact);
    let reg = register(&source, &target, &cfg, &mut Profile::default()).unwrap();
    let traj = shoot_forward(&source, &reg.momenta, &cfg).unwrap();
    // 20 x 20 grid over [-3, 3]^2 in the plane of the circles, plus the
    // layers just above and below for the out-of-plane derivative.
    let m = 20;
    let step = 6.0 / (m - 1) as f64;
    let layers = [-step, 0.0, step];
    let grid: Vec<Vec3<f64>> = layers
        .iter()
        .flat_map(|&z| (0..m * m).map(move |k| Vec3::new(-3.0 + (k % m) as f64 * step, -3.0 + (k / m) as f64 * step, z)))
        .collect();
    let warped = warp_points(&traj, &PointSet::new(grid).unwrap(), &cfg).unwrap();
    let at = |layer: usize, i: usize, j: usize| warped[layer * m * m + j * m + i];
    let mut min_det = f64::INFINITY;
    let mut cells = 0;
    for j in 1..m - 1 {
        for i in 1..m - 1 {
            let du = (at(1, i + 1, j) - at(1, i - 1, j)) / (2.0 * step);
            let dv = (at(1, i, j + 1) - at(1, i, j - 1)) / (2.0 * step);
            let dw = (at(2, i, j) - at(0, i, j)) / (2.0 * step);
            let det = du[0] * (dv[1] * dw[2] - dv[2] * dw[1]) - du[1] * (dv[0] * dw[2] - dv[2] * dw[0])
                + du[2] * (dv[0] * dw[1] - dv[1] * dw[0]);
            min_det = min_det.min(det);
            cells += 1;
        }
    }
    check(
        min_det > 0.0 && min_det.is_finite(),
        format!(
            "circle registration (N=200, residual {:.2e}), {cells} interior grid nodes, min Jacobian determinant {min_det:.3}",
            reg.report.residual_sse
        ),
    )
}

fn random_rotation(rng: &mut ChaCha8Rng) -> [[f64; 3]; 3] {
    let q: [f64; 4] = loop {
        let v = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
        let n2: f64 = v.iter().map(|x| x * x).sum();
        if n2 > 1e-3 && n2 <= 1.0 {
            let n = n2.sqrt();
            break [v[0] / n, v[1] / n, v[2] / n, v[3] / n];
        }
    };
    let [w, x, y, z] = q;
    [
        [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y)],
        [2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x)],
        [2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y)],
    ]
}

fn procrustes_exactness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let (mut worst_r, mut worst_t, mut worst_orth) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..20 {
        let source = PointSet::new(random_vecs(&mut rng, 50, 10.0)).unwrap();
        let truth = RigidTransform { rotation: random_rotation(&mut rng), translation: random_vecs(&mut rng, 1, 20.0)[0] };
        let (got, aligned) = procrustes_align(&source, &truth.apply_set(&source)).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                worst_r = worst_r.max((got.rotation[i][j] - truth.rotation[i][j]).abs());
            }
        }
        worst_t = worst_t.max((got.translation - truth.translation).max_abs());
        worst_orth = worst_orth.max(got.orthonormality_error());
        let _ = aligned;
    }
    check(
        worst_r < 1e-10 && worst_t < 1e-10 && worst_orth < 1e-10,
        format!("20 random 50-point sets: rotation err {worst_r:.1e}, translation err {worst_t:.1e}, orthonormality {worst_orth:.1e} (< 1e-10)"),
    )
}

fn main() -> ExitCode {
    let results = with_threads(Some(1), || {
        let mut out: Vec<(u32, &str, Outcome)> = Vec::new();
        let mut run = |id: u32, name: &'static str, f: &mut dyn FnMut() -> Outcome| {
            let start = Instant::now();
            let r = f();
            let tag = if r.is_ok() { "PASS" } else { "FAIL" };
            let detail = r.as_ref().unwrap_or_else(|e| e);
            println!("criterion {id:>2} {tag} [{name}] {detail} ({:.1} s)", start.elapsed().as_secs_f64());
            out.push((id, name, r));
        };
        run(1, "gradient vs finite differences", &mut gradient_vs_finite_differences);
        run(2, "BH at infinite threshold equals exact", &mut bh_infinite_threshold_is_exact);
        let flat = flat_runs();
        run(3, "BH accuracy at 3 sigma", &mut || bh_accuracy(&flat));
        run(4, "speed, elongated regime", &mut || elongated_speed(&flat));
        run(5, "speed, concentrated regime", &mut concentrated_speed);
        run(6, "scaling with N", &mut scaling);
        run(7, "energy conservation order", &mut energy_order);
        run(8, "octree invariants", &mut octree_invariants);
        run(9, "diffeomorphic warp", &mut diffeomorphism);
        run(10, "Procrustes exactness", &mut procrustes_exactness);
        out
    })
    .unwrap();
    let failed = results.iter().filter(|r| r.2.is_err()).count();
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
