//! Geodesic shooting: forward Euler integration of Hamilton's equations,
//! the registration objective, its discrete adjoint, and dense warping.
//!
//! The backward pass is the exact transpose of the forward Euler recursion
//! (discretize-then-differentiate). With `F = ∂H/∂p`, `G = ∂H/∂q` and step
//! `h = 1/T`, one forward step is
//!
//! ```text
//! q' = q + h F(q, p)        p' = p − h G(q, p)
//! ```
//!
//! and, with `α = ∂E/∂q'`, `β = ∂E/∂p'`, the step back is
//!
//! ```text
//! α ← α + h (∂(α·F)/∂q − ∂(β·G)/∂q)
//! β ← β + h (∂(α·F)/∂p − ∂(β·G)/∂p)
//! ```
//!
//! starting from `α_T = 2λ (q_T − target)`, `β_T = 0`. The gradient with
//! respect to `p_0` is `β_0 + ∂H(q_0, p_0)/∂p_0`.

use std::time::{Duration, Instant};

use crate::bh_kernel::{self, BhParams, TraversalStats};
use crate::kernel_exact::{self, FLOW_VELOCITY_FACTOR};
use crate::octree::Octree;
use crate::types::check_len;
use crate::{
    Backend, Error, GeodesicTrajectory, MomentumSet, PointSet, Real, Result, ValidatedConfig, Vec3,
};

/// The four terms of the registration objective.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ObjectiveReport<T> {
    /// `H(q_0, p_0)`.
    pub energy: T,
    /// `λ ||q(1) − target||²`.
    pub attachment: T,
    pub total: T,
    /// `||q(1) − target||²`, unweighted.
    pub residual_sse: T,
}

/// Adjoint state `(α, β)` at one timestep.
#[derive(Clone, Debug, PartialEq)]
pub struct AdjointState<T> {
    pub alpha: Vec<Vec3<T>>,
    pub beta: Vec<Vec3<T>>,
}

/// Accumulated wall time and traversal counts across evaluations.
#[derive(Clone, Debug, Default)]
pub struct Profile {
    pub tree_build: Duration,
    pub forward: Duration,
    pub backward: Duration,
    pub forward_stats: TraversalStats,
    pub backward_stats: TraversalStats,
    /// Point queries made during forward passes.
    pub forward_queries: u64,
    pub evaluations: u64,
}

impl Profile {
    pub fn mean_direct_per_query(&self) -> f64 {
        self.forward_stats.direct_interactions as f64 / self.forward_queries.max(1) as f64
    }

    pub fn mean_approximated_per_query(&self) -> f64 {
        self.forward_stats.approximated_interactions as f64 / self.forward_queries.max(1) as f64
    }
}

fn bh_params<T: Real>(config: &ValidatedConfig<T>) -> BhParams<T> {
    BhParams::new(config.sigma, config.threshold()).with_momentum_dot(config.momentum_dot)
}

fn all_finite<T: Real>(v: &[Vec3<T>]) -> bool {
    v.iter().all(Vec3::is_finite)
}

pub fn shoot_forward<T: Real>(
    q0: &PointSet<T>,
    p0: &MomentumSet<T>,
    config: &ValidatedConfig<T>,
) -> Result<GeodesicTrajectory<T>> {
    shoot_forward_profiled(q0, p0, config, &mut Profile::default())
}

/// Explicit Euler with `Δt = 1/T`; the Barnes-Hut backend builds a fresh
/// tree at every step and keeps it in the trajectory.
pub fn shoot_forward_profiled<T: Real>(
    q0: &PointSet<T>,
    p0: &MomentumSet<T>,
    config: &ValidatedConfig<T>,
    profile: &mut Profile,
) -> Result<GeodesicTrajectory<T>> {
    check_len(q0.len(), p0.len())?;
    let steps = config.timesteps;
    let dt = config.dt();
    let params = bh_params(config);
    let mut positions = Vec::with_capacity(steps + 1);
    let mut momenta = Vec::with_capacity(steps + 1);
    let mut trees = Vec::new();
    positions.push(q0.clone());
    momenta.push(p0.clone());
    let mut initial_energy = T::zero();
    let mut initial_dh_dp = Vec::new();

    for k in 0..steps {
        let (q, p) = (positions[k].as_slice(), momenta[k].as_slice());
        let terms = match config.backend {
            Backend::Exact => {
                let start = Instant::now();
                let t = kernel_exact::forward_terms(q, p, config.sigma);
                profile.forward += start.elapsed();
                profile.forward_stats.direct_interactions += (q.len() * q.len()) as u64;
                t
            }
            Backend::BarnesHut => {
                let start = Instant::now();
                let tree = Octree::build_raw(q, p)?;
                profile.tree_build += start.elapsed();
                let start = Instant::now();
                let (t, stats) = bh_kernel::forward_terms(&tree, q, p, &params);
                profile.forward += start.elapsed();
                profile.forward_stats += stats;
                trees.push(tree);
                t
            }
        };
        profile.forward_queries += q.len() as u64;
        if k == 0 {
            initial_energy = terms.total_energy();
            initial_dh_dp = terms.dh_dp.clone();
        }
        let next_q: Vec<_> = q.iter().zip(&terms.dh_dp).map(|(x, f)| *x + *f * dt).collect();
        let next_p: Vec<_> = p.iter().zip(&terms.dh_dq).map(|(m, g)| *m - *g * dt).collect();
        if !all_finite(&next_q) || !all_finite(&next_p) || !initial_energy.is_finite() {
            return Err(Error::NonFiniteState { timestep: k + 1 });
        }
        positions.push(PointSet::from_vec_unchecked(next_q));
        momenta.push(MomentumSet::from_vec_unchecked(next_p));
    }
    Ok(GeodesicTrajectory { positions, momenta, trees, initial_energy, initial_dh_dp })
}

fn report_from<T: Real>(
    trajectory: &GeodesicTrajectory<T>,
    target: &PointSet<T>,
    config: &ValidatedConfig<T>,
) -> Result<ObjectiveReport<T>> {
    let residual_sse = trajectory.last().0.sse(target)?;
    let attachment = config.lambda * residual_sse;
    let energy = trajectory.initial_energy;
    Ok(ObjectiveReport { energy, attachment, total: energy + attachment, residual_sse })
}

/// `H(q_0, p_0) + λ ||q(1) − target||²`.
pub fn objective<T: Real>(
    q0: &PointSet<T>,
    p0: &MomentumSet<T>,
    target: &PointSet<T>,
    config: &ValidatedConfig<T>,
) -> Result<ObjectiveReport<T>> {
    check_len(q0.len(), target.len())?;
    let trajectory = shoot_forward(q0, p0, config)?;
    report_from(&trajectory, target, config)
}

/// Objective and its gradient with respect to `p_0`, from one forward and
/// one backward pass.
pub fn objective_and_gradient<T: Real>(
    q0: &PointSet<T>,
    p0: &MomentumSet<T>,
    target: &PointSet<T>,
    config: &ValidatedConfig<T>,
    profile: &mut Profile,
) -> Result<(ObjectiveReport<T>, Vec<Vec3<T>>)> {
    check_len(q0.len(), target.len())?;
    let trajectory = shoot_forward_profiled(q0, p0, config, profile)?;
    let report = report_from(&trajectory, target, config)?;
    let gradient = backward_gradient_profiled(&trajectory, target, config, profile)?;
    profile.evaluations += 1;
    Ok((report, gradient))
}

pub fn backward_gradient<T: Real>(
    trajectory: &GeodesicTrajectory<T>,
    target: &PointSet<T>,
    config: &ValidatedConfig<T>,
) -> Result<Vec<Vec3<T>>> {
    backward_gradient_profiled(trajectory, target, config, &mut Profile::default())
}

/// `∂E/∂p_0` of the discretized objective.
pub fn backward_gradient_profiled<T: Real>(
    trajectory: &GeodesicTrajectory<T>,
    target: &PointSet<T>,
    config: &ValidatedConfig<T>,
    profile: &mut Profile,
) -> Result<Vec<Vec3<T>>> {
    let adjoint = backward_adjoint(trajectory, target, config, profile)?;
    Ok(adjoint.beta.iter().zip(&trajectory.initial_dh_dp).map(|(b, f)| *b + *f).collect())
}

/// Runs the adjoint recursion down to `t = 0` and returns `(α_0, β_0)`.
pub fn backward_adjoint<T: Real>(
    trajectory: &GeodesicTrajectory<T>,
    target: &PointSet<T>,
    config: &ValidatedConfig<T>,
    profile: &mut Profile,
) -> Result<AdjointState<T>> {
    let steps = config.timesteps;
    if trajectory.num_snapshots() != steps + 1 {
        return Err(Error::ConfigMismatch { expected: steps + 1, found: trajectory.num_snapshots() });
    }
    if config.backend == Backend::BarnesHut && trajectory.trees.len() != steps {
        return Err(Error::ConfigMismatch { expected: steps, found: trajectory.trees.len() });
    }
    check_len(trajectory.num_points(), target.len())?;
    let dt = config.dt();
    let params = bh_params(config);
    let two_lambda = T::two() * config.lambda;
    let mut alpha: Vec<_> = trajectory
        .last()
        .0
        .iter()
        .zip(target.iter())
        .map(|(q, x)| (*q - *x) * two_lambda)
        .collect();
    let mut beta = vec![Vec3::zero(); alpha.len()];

    let start = Instant::now();
    for k in (0..steps).rev() {
        let (q, p) = (trajectory.positions[k].as_slice(), trajectory.momenta[k].as_slice());
        let products = match config.backend {
            Backend::Exact => kernel_exact::adjoint_products_raw(q, p, &alpha, &beta, config.sigma),
            Backend::BarnesHut => {
                let mut tree = trajectory.trees[k].clone();
                tree.accumulate_adjoints(&alpha, &beta)?;
                let (products, stats) = bh_kernel::bh_adjoint_products(&tree, q, p, &alpha, &beta, &params)?;
                profile.backward_stats += stats;
                products
            }
        };
        let (dq, dp) = products.step_increments();
        for (a, d) in alpha.iter_mut().zip(&dq) {
            *a += *d * dt;
        }
        for (b, d) in beta.iter_mut().zip(&dp) {
            *b += *d * dt;
        }
        if !all_finite(&alpha) || !all_finite(&beta) {
            return Err(Error::NonFiniteState { timestep: k });
        }
    }
    profile.backward += start.elapsed();
    Ok(AdjointState { alpha, beta })
}

/// Carries arbitrary points through the flow: `dx/dt = 2 v(x, t)` on the
/// trajectory's Euler grid, with `v` interpolated from `(q_k, p_k)`.
/// Carrier points reproduce the trajectory exactly.
pub fn warp_points<T: Real>(
    trajectory: &GeodesicTrajectory<T>,
    x: &PointSet<T>,
    config: &ValidatedConfig<T>,
) -> Result<PointSet<T>> {
    let steps = trajectory.timesteps();
    if steps != config.timesteps {
        return Err(Error::ConfigMismatch { expected: config.timesteps + 1, found: steps + 1 });
    }
    let dt = config.dt();
    let factor = T::lit(FLOW_VELOCITY_FACTOR);
    let mut cur = x.as_slice().to_vec();
    for k in 0..steps {
        let (q, p) = (trajectory.positions[k].as_slice(), trajectory.momenta[k].as_slice());
        let v = match config.backend {
            Backend::Exact => kernel_exact::velocity_raw(&cur, q, p, config.sigma),
            Backend::BarnesHut => {
                let owned;
                let tree = match trajectory.trees.get(k) {
                    Some(t) => t,
                    None => {
                        owned = Octree::build_raw(q, p)?;
                        &owned
                    }
                };
                bh_kernel::bh_velocity_field(tree, &cur, config.sigma, config.threshold())?.0
            }
        };
        for (c, vi) in cur.iter_mut().zip(&v) {
            *c += (*vi * factor) * dt;
        }
        if !all_finite(&cur) {
            return Err(Error::NonFiniteState { timestep: k + 1 });
        }
    }
    Ok(PointSet::from_vec_unchecked(cur))
}
