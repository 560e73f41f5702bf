//! Limited-memory BFGS with a strong-Wolfe line search, and the
//! registration driver built on it.

use std::collections::VecDeque;
use std::io::Write;
use std::time::Instant;

use crate::shooting::{objective_and_gradient, ObjectiveReport, Profile};
use crate::types::check_len;
use crate::{ConfigViolation, Error, MomentumSet, PointSet, Real, Result, ValidatedConfig, Vec3};

#[derive(Clone, Debug, PartialEq)]
pub struct LineSearchConfig<T> {
    /// Armijo constant `c1`.
    pub sufficient_decrease: T,
    /// Curvature constant `c2`.
    pub curvature: T,
    /// Objective evaluations per line search.
    pub max_trials: usize,
}

impl<T: Real> Default for LineSearchConfig<T> {
    fn default() -> Self {
        LineSearchConfig { sufficient_decrease: T::lit(1e-4), curvature: T::lit(0.9), max_trials: 20 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerConfig<T> {
    pub max_iterations: usize,
    /// Stored `(s, y)` pairs.
    pub memory: usize,
    /// Stop once `||∇E||_∞` falls below this.
    pub gradient_tolerance: T,
    /// Stop once `(E_prev − E) / max(|E_prev|, |E|)` falls below this.
    pub relative_objective_tolerance: T,
    pub line_search: LineSearchConfig<T>,
    /// Optional coarse-to-fine kernel widths run before the configured
    /// sigma, each warm-starting the next. Empty by default.
    pub sigma_schedule: Vec<T>,
}

impl<T: Real> Default for OptimizerConfig<T> {
    fn default() -> Self {
        OptimizerConfig {
            max_iterations: 200,
            memory: 10,
            gradient_tolerance: T::lit(1e-6),
            relative_objective_tolerance: T::lit(1e-9),
            line_search: LineSearchConfig::default(),
            sigma_schedule: Vec::new(),
        }
    }
}

impl<T: Real> OptimizerConfig<T> {
    pub(crate) fn violations(&self) -> Vec<ConfigViolation> {
        let mut v = Vec::new();
        let pos = |x: T| x > T::zero();
        let ls = &self.line_search;
        if self.max_iterations == 0 {
            v.push(ConfigViolation::InvalidOptimizer("max_iterations must be >= 1"));
        }
        if self.memory == 0 {
            v.push(ConfigViolation::InvalidOptimizer("memory must be >= 1"));
        }
        if !pos(self.gradient_tolerance) || !pos(self.relative_objective_tolerance) {
            v.push(ConfigViolation::InvalidOptimizer("tolerances must be > 0"));
        }
        if !pos(ls.sufficient_decrease) || !(ls.curvature > ls.sufficient_decrease) || !(ls.curvature < T::one()) {
            v.push(ConfigViolation::InvalidOptimizer("need 0 < sufficient_decrease < curvature < 1"));
        }
        if ls.max_trials == 0 {
            v.push(ConfigViolation::InvalidOptimizer("max_trials must be >= 1"));
        }
        if self.sigma_schedule.iter().any(|s| !pos(*s) || s.is_infinite()) {
            v.push(ConfigViolation::InvalidOptimizer("sigma_schedule entries must be > 0"));
        }
        v
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Termination {
    GradientTolerance,
    ObjectiveTolerance,
    MaxIterations,
    LineSearchFailure,
    NonFinite,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TraceRecord<T> {
    pub iteration: usize,
    pub total: T,
    pub energy: T,
    pub attachment: T,
    pub grad_inf: T,
    pub wall_ms: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptimizationTrace<T> {
    pub records: Vec<TraceRecord<T>>,
    pub termination: Termination,
    /// Objective evaluations, line-search trials included.
    pub evaluations: usize,
}

impl<T: Real> OptimizationTrace<T> {
    /// Iterations taken (records after the initial one).
    pub fn iterations(&self) -> usize {
        self.records.len().saturating_sub(1)
    }

    pub fn last(&self) -> &TraceRecord<T> {
        self.records.last().expect("trace holds the initial record")
    }

    /// Columns: `iter,total,energy,attachment,grad_inf,wall_ms`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let io = |e: csv::Error| Error::Io(e.into());
        w.write_record(["iter", "total", "energy", "attachment", "grad_inf", "wall_ms"]).map_err(io)?;
        for r in &self.records {
            w.write_record([
                r.iteration.to_string(),
                format!("{:.17e}", r.total.as_f64()),
                format!("{:.17e}", r.energy.as_f64()),
                format!("{:.17e}", r.attachment.as_f64()),
                format!("{:.17e}", r.grad_inf.as_f64()),
                format!("{:.3}", r.wall_ms),
            ])
            .map_err(io)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// One objective evaluation: value, gradient and caller data kept with the
/// point (the registration driver keeps the full [`ObjectiveReport`]).
#[derive(Clone, Debug)]
pub struct Evaluation<T, A> {
    pub value: T,
    pub gradient: Vec<T>,
    pub aux: A,
}

#[derive(Clone, Debug)]
pub struct Minimum<T, A> {
    pub x: Vec<T>,
    pub best: Evaluation<T, A>,
    pub termination: Termination,
    pub evaluations: usize,
}

fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(x, y)| *x * *y).sum()
}

fn inf_norm<T: Real>(a: &[T]) -> T {
    a.iter().fold(T::zero(), |m, x| m.max(x.abs()))
}

/// Two-loop recursion: `−H g` with `H` the L-BFGS inverse Hessian estimate.
fn direction<T: Real>(g: &[T], memory: &VecDeque<(Vec<T>, Vec<T>, T)>) -> Vec<T> {
    let mut d: Vec<T> = g.iter().map(|x| -*x).collect();
    let mut coef = Vec::with_capacity(memory.len());
    for (s, y, rho) in memory.iter().rev() {
        let a = *rho * dot(s, &d);
        for (di, yi) in d.iter_mut().zip(y) {
            *di -= a * *yi;
        }
        coef.push(a);
    }
    if let Some((s, y, _)) = memory.back() {
        let gamma = dot(s, y) / dot(y, y);
        for di in d.iter_mut() {
            *di *= gamma;
        }
    }
    for ((s, y, rho), a) in memory.iter().zip(coef.into_iter().rev()) {
        let b = *rho * dot(y, &d);
        for (di, si) in d.iter_mut().zip(s) {
            *di += (a - b) * *si;
        }
    }
    d
}

struct Trial<T, A> {
    step: T,
    eval: Option<Evaluation<T, A>>,
}

impl<T: Real, A> Trial<T, A> {
    fn value(&self) -> T {
        self.eval.as_ref().map_or(T::infinity(), |e| e.value)
    }

    fn slope(&self, d: &[T]) -> Option<T> {
        self.eval.as_ref().map(|e| dot(&e.gradient, d))
    }
}

enum SearchOutcome<T, A> {
    /// Strong Wolfe satisfied.
    Wolfe(T, Evaluation<T, A>),
    /// Only sufficient decrease satisfied within the trial budget.
    Armijo(T, Evaluation<T, A>),
    Failed,
}

/// Bracketing and zoom search for a strong-Wolfe step along `d`.
/// Evaluations that fail or return non-finite values count as `+∞`.
#[allow(clippy::too_many_arguments)]
fn line_search<T: Real, A: Clone, F>(
    f: &mut F,
    x: &[T],
    f0: T,
    slope0: T,
    d: &[T],
    initial_step: T,
    ls: &LineSearchConfig<T>,
    evaluations: &mut usize,
) -> SearchOutcome<T, A>
where
    F: FnMut(&[T]) -> Option<Evaluation<T, A>>,
{
    let (c1, c2) = (ls.sufficient_decrease, ls.curvature);
    let mut trials = 0;
    let mut best_armijo: Option<(T, Evaluation<T, A>)> = None;
    let mut eval_at = |step: T, trials: &mut usize| -> Trial<T, A> {
        *trials += 1;
        *evaluations += 1;
        let xs: Vec<T> = x.iter().zip(d).map(|(xi, di)| *xi + step * *di).collect();
        let eval = f(&xs).filter(|e| e.value.is_finite() && e.gradient.iter().all(|g| g.is_finite()));
        Trial { step, eval }
    };
    let armijo = |t: &Trial<T, A>| t.value() <= f0 + c1 * t.step * slope0 && t.value() < f0;
    let strong_curvature = |s: T| s.abs() <= -c2 * slope0;

    let keep = |t: Trial<T, A>, best: &mut Option<(T, Evaluation<T, A>)>| {
        if let Some(e) = t.eval {
            if best.as_ref().is_none_or(|(_, b)| e.value < b.value) {
                *best = Some((t.step, e));
            }
        }
    };

    // Bracketing phase.
    let mut lo = Trial { step: T::zero(), eval: None };
    let mut lo_value = f0;
    let mut lo_slope = slope0;
    let mut hi: Trial<T, A>;
    let mut hi_slope: Option<T>;
    let mut hi_value: T;
    let mut step = initial_step;
    let mut first = true;
    loop {
        if trials >= ls.max_trials {
            return best_armijo.map_or(SearchOutcome::Failed, |(s, e)| SearchOutcome::Armijo(s, e));
        }
        let t = eval_at(step, &mut trials);
        let slope = t.slope(d);
        if !armijo(&t) || (!first && t.value() >= lo_value) {
            hi_slope = slope;
            hi_value = t.value();
            hi = t;
            break;
        }
        let s = slope.expect("armijo implies a finite evaluation");
        if strong_curvature(s) {
            let e = t.eval.expect("finite");
            return SearchOutcome::Wolfe(t.step, e);
        }
        if s >= T::zero() {
            // Minimum passed: the current point becomes the low end.
            hi_slope = Some(lo_slope);
            hi_value = lo_value;
            hi = std::mem::replace(&mut lo, t);
            lo_value = lo.value();
            lo_slope = s;
            keep(Trial { step: lo.step, eval: lo.eval.clone() }, &mut best_armijo);
            break;
        }
        lo_value = t.value();
        lo_slope = s;
        lo = t;
        keep(Trial { step: lo.step, eval: lo.eval.clone() }, &mut best_armijo);
        step *= T::lit(3.0);
        first = false;
    }

    // Zoom phase between `lo` (satisfies Armijo, lowest so far) and `hi`.
    loop {
        if trials >= ls.max_trials {
            return best_armijo.map_or(SearchOutcome::Failed, |(s, e)| SearchOutcome::Armijo(s, e));
        }
        let (a, b) = (lo.step, hi.step);
        let width = (b - a).abs();
        if width <= T::epsilon() * a.abs().max(b.abs()).max(T::epsilon()) {
            return best_armijo.map_or(SearchOutcome::Failed, |(s, e)| SearchOutcome::Armijo(s, e));
        }
        let mut next = match hi_slope {
            Some(hs) if hi_value.is_finite() => cubic_min(a, lo_value, lo_slope, b, hi_value, hs),
            _ => None,
        }
        .unwrap_or((a + b) / T::two());
        let (lo_b, hi_b) = if a < b { (a, b) } else { (b, a) };
        let margin = width * T::lit(0.1);
        if !(next > lo_b + margin && next < hi_b - margin) {
            next = (a + b) / T::two();
        }
        let t = eval_at(next, &mut trials);
        let slope = t.slope(d);
        if !armijo(&t) || t.value() >= lo_value {
            hi_slope = slope;
            hi_value = t.value();
            hi = t;
            continue;
        }
        let s = slope.expect("armijo implies a finite evaluation");
        if strong_curvature(s) {
            let e = t.eval.expect("finite");
            return SearchOutcome::Wolfe(t.step, e);
        }
        if s * (hi.step - lo.step) >= T::zero() {
            hi_slope = Some(lo_slope);
            hi_value = lo_value;
            hi = Trial { step: lo.step, eval: lo.eval.take() };
        }
        lo_value = t.value();
        lo_slope = s;
        lo = t;
        keep(Trial { step: lo.step, eval: lo.eval.clone() }, &mut best_armijo);
    }
}

/// Minimizer of the cubic through `(a, fa, ga)` and `(b, fb, gb)`.
fn cubic_min<T: Real>(a: T, fa: T, ga: T, b: T, fb: T, gb: T) -> Option<T> {
    let d1 = ga + gb - T::lit(3.0) * (fa - fb) / (a - b);
    let disc = d1 * d1 - ga * gb;
    if !(disc >= T::zero()) {
        return None;
    }
    let d2 = (b - a).signum() * disc.sqrt();
    let denom = gb - ga + T::two() * d2;
    if denom == T::zero() {
        return None;
    }
    let m = b - (b - a) * (gb + d2 - d1) / denom;
    m.is_finite().then_some(m)
}

/// Minimizes `f` from `x0`. `f` returns `None` when it cannot be evaluated
/// (e.g. the flow blew up); such points are treated as `+∞`.
pub fn minimize<T, A, F>(x0: Vec<T>, mut f: F, config: &OptimizerConfig<T>) -> Result<Minimum<T, A>>
where
    T: Real,
    A: Clone,
    F: FnMut(&[T]) -> Option<Evaluation<T, A>>,
{
    minimize_with_callback(x0, &mut f, config, |_, _| {})
}

/// As [`minimize`], calling `on_accept(iteration, evaluation)` for the
/// starting point and every accepted iterate.
pub fn minimize_with_callback<T, A, F, C>(
    x0: Vec<T>,
    f: &mut F,
    config: &OptimizerConfig<T>,
    mut on_accept: C,
) -> Result<Minimum<T, A>>
where
    T: Real,
    A: Clone,
    F: FnMut(&[T]) -> Option<Evaluation<T, A>>,
    C: FnMut(usize, &Evaluation<T, A>),
{
    let mut evaluations = 1;
    let mut cur = match f(&x0) {
        Some(e) if e.value.is_finite() => e,
        _ => return Err(Error::NonFiniteObjectiveAtStart),
    };
    let mut x = x0;
    on_accept(0, &cur);
    let mut memory: VecDeque<(Vec<T>, Vec<T>, T)> = VecDeque::with_capacity(config.memory);
    let mut termination = Termination::MaxIterations;

    for iteration in 1..=config.max_iterations {
        if !cur.gradient.iter().all(|g| g.is_finite()) {
            termination = Termination::NonFinite;
            break;
        }
        if inf_norm(&cur.gradient) < config.gradient_tolerance {
            termination = Termination::GradientTolerance;
            break;
        }
        let mut outcome = SearchOutcome::Failed;
        let mut d = Vec::new();
        // Quasi-Newton direction first; on failure retry once from steepest descent.
        for attempt in 0..2 {
            if attempt == 1 {
                if memory.is_empty() {
                    break;
                }
                memory.clear();
            }
            d = direction(&cur.gradient, &memory);
            let mut slope0 = dot(&cur.gradient, &d);
            if !(slope0 < T::zero()) {
                memory.clear();
                d = cur.gradient.iter().map(|g| -*g).collect();
                slope0 = dot(&cur.gradient, &d);
            }
            let initial = if memory.is_empty() {
                T::one().min(T::one() / inf_norm(&cur.gradient))
            } else {
                T::one()
            };
            outcome = line_search(f, &x, cur.value, slope0, &d, initial, &config.line_search, &mut evaluations);
            if !matches!(outcome, SearchOutcome::Failed) {
                break;
            }
        }
        let (step, next) = match outcome {
            SearchOutcome::Wolfe(s, e) | SearchOutcome::Armijo(s, e) => (s, e),
            SearchOutcome::Failed => {
                termination = Termination::LineSearchFailure;
                break;
            }
        };
        let s_vec: Vec<T> = d.iter().map(|di| *di * step).collect();
        let y_vec: Vec<T> = next.gradient.iter().zip(&cur.gradient).map(|(a, b)| *a - *b).collect();
        let sy = dot(&s_vec, &y_vec);
        if sy > T::epsilon() * dot(&y_vec, &y_vec) {
            if memory.len() == config.memory {
                memory.pop_front();
            }
            memory.push_back((s_vec.clone(), y_vec, T::one() / sy));
        }
        for (xi, si) in x.iter_mut().zip(&s_vec) {
            *xi += *si;
        }
        let previous = cur.value;
        cur = next;
        on_accept(iteration, &cur);
        let scale = previous.abs().max(cur.value.abs()).max(T::min_positive_value());
        if (previous - cur.value) / scale < config.relative_objective_tolerance {
            termination = Termination::ObjectiveTolerance;
            break;
        }
        if iteration == config.max_iterations {
            termination = Termination::MaxIterations;
        }
    }
    Ok(Minimum { x, best: cur, termination, evaluations })
}

/// Result of [`optimize`].
#[derive(Clone, Debug)]
pub struct Registration<T> {
    pub momenta: MomentumSet<T>,
    pub report: ObjectiveReport<T>,
    pub trace: OptimizationTrace<T>,
}

/// Fits initial momenta carrying `q0` onto `target`, starting from zero.
pub fn optimize<T: Real>(
    q0: &PointSet<T>,
    target: &PointSet<T>,
    config: &ValidatedConfig<T>,
) -> Result<(MomentumSet<T>, OptimizationTrace<T>)> {
    let r = register(q0, target, config, &mut Profile::default())?;
    Ok((r.momenta, r.trace))
}

/// [`optimize`] with the final objective report and stage timings.
pub fn register<T: Real>(
    q0: &PointSet<T>,
    target: &PointSet<T>,
    config: &ValidatedConfig<T>,
    profile: &mut Profile,
) -> Result<Registration<T>> {
    check_len(q0.len(), target.len())?;
    let start = Instant::now();
    let mut p0 = MomentumSet::zeros(q0.len());
    let mut records = Vec::new();
    let mut evaluations = 0;
    let mut stages: Vec<ValidatedConfig<T>> = Vec::new();
    for &sigma in &config.optimizer.sigma_schedule {
        stages.push(config.with_sigma(sigma)?);
    }
    stages.push(config.clone());

    let mut last = None;
    for stage in &stages {
        let mut f = |x: &[T]| -> Option<Evaluation<T, ObjectiveReport<T>>> {
            let p = MomentumSet::from_flat(x).ok()?;
            let (report, grad) = objective_and_gradient(q0, &p, target, stage, profile).ok()?;
            Some(Evaluation { value: report.total, gradient: flatten(&grad), aux: report })
        };
        let offset = records.len();
        let min = minimize_with_callback(p0.to_flat(), &mut f, &stage.optimizer, |it, e| {
            records.push(TraceRecord {
                iteration: offset + it,
                total: e.value,
                energy: e.aux.energy,
                attachment: e.aux.attachment,
                grad_inf: inf_norm(&e.gradient),
                wall_ms: start.elapsed().as_secs_f64() * 1e3,
            });
        })?;
        evaluations += min.evaluations;
        p0 = MomentumSet::from_flat(&min.x)?;
        last = Some(min);
    }
    let min = last.expect("at least one stage");
    Ok(Registration {
        momenta: p0,
        report: min.best.aux,
        trace: OptimizationTrace { records, termination: min.termination, evaluations },
    })
}

fn flatten<T: Real>(v: &[Vec3<T>]) -> Vec<T> {
    v.iter().flat_map(|x| x.0).collect()
}
