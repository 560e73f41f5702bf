//! Barnes-Hut evaluation of the kernel sums.
//!
//! For a query `x` the tree is walked from the root:
//!
//! 1. a leaf holding one point contributes its exact pairwise term;
//! 2. a node with several points whose tight bounds are all farther than
//!    `threshold` from `x` contributes one term built from its centroid and
//!    aggregate momentum/adjoints;
//! 3. any other node is opened.
//!
//! A query that lies inside the tree is never approximated away: every node
//! containing it has `min_distance == 0` and gets opened down to its leaf.

use std::ops::{Add, AddAssign};

use rayon::prelude::*;

use crate::kernel_exact::pair::{self, AdjointAcc, AdjointTarget, ForwardAcc, Kernel};
use crate::kernel_exact::{unzip_products, AdjointProducts, ForwardTerms, HamiltonianGradients};
use crate::octree::{Octree, OctreeNode, Payload, MAX_DEPTH};
use crate::types::check_len;
use crate::{Error, MomentumDotMode, MomentumSet, PointSet, Real, Result, Vec3};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct TraversalStats {
    pub direct_interactions: u64,
    pub approximated_interactions: u64,
    pub nodes_visited: u64,
}

impl Add for TraversalStats {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        TraversalStats {
            direct_interactions: self.direct_interactions + o.direct_interactions,
            approximated_interactions: self.approximated_interactions + o.approximated_interactions,
            nodes_visited: self.nodes_visited + o.nodes_visited,
        }
    }
}

impl AddAssign for TraversalStats {
    fn add_assign(&mut self, o: Self) {
        *self = *self + o;
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BhParams<T> {
    pub sigma: T,
    /// Opening distance; `+∞` disables approximation.
    pub threshold: T,
    pub momentum_dot: MomentumDotMode,
}

impl<T: Real> BhParams<T> {
    pub fn new(sigma: T, threshold: T) -> Self {
        BhParams { sigma, threshold, momentum_dot: MomentumDotMode::Total }
    }

    pub fn with_momentum_dot(self, momentum_dot: MomentumDotMode) -> Self {
        BhParams { momentum_dot, ..self }
    }
}

/// Walks the tree for query `x`, calling `point(i)` for every exact
/// interaction and `node(n)` for every approximated one.
#[inline]
pub(crate) fn traverse<T: Real>(
    tree: &Octree<T>,
    x: &Vec3<T>,
    threshold: T,
    stats: &mut TraversalStats,
    mut point: impl FnMut(usize),
    mut node: impl FnMut(&OctreeNode<T>),
) {
    let mut stack: Vec<u32> = Vec::with_capacity(8 * MAX_DEPTH as usize);
    stack.push(0);
    while let Some(id) = stack.pop() {
        let n = tree.node(id as usize);
        stats.nodes_visited += 1;
        if n.count == 1 {
            stats.direct_interactions += 1;
            point(n.points()[0] as usize);
        } else if n.min_distance(x) > threshold {
            stats.approximated_interactions += 1;
            node(n);
        } else if let Payload::Bucket(v) = &n.payload {
            for &i in v {
                stats.direct_interactions += 1;
                point(i as usize);
            }
        } else {
            // reversed so octant 0 is processed first
            for &c in n.children.iter().rev() {
                if c != crate::octree::NONE {
                    stack.push(c);
                }
            }
        }
    }
}

/// Approximate `v(x) = Σ_i G(|x − q_i|) p_i`.
pub fn bh_velocity<T: Real>(
    tree: &Octree<T>,
    x: &Vec3<T>,
    sigma: T,
    threshold: T,
) -> Result<(Vec3<T>, TraversalStats)> {
    if tree.num_points() == 0 {
        return Err(Error::EmptyTree);
    }
    Ok(velocity_at(tree, &Kernel::new(sigma), x, threshold))
}

#[inline]
fn velocity_at<T: Real>(tree: &Octree<T>, k: &Kernel<T>, x: &Vec3<T>, threshold: T) -> (Vec3<T>, TraversalStats) {
    let mut stats = TraversalStats::default();
    let q = tree.positions();
    let p = tree.momenta();
    let mut v = Vec3::zero();
    let mut far = Vec3::zero();
    traverse(
        tree,
        x,
        threshold,
        &mut stats,
        |i| v += p[i] * k.weight(&(*x - q[i])),
        |n| far += n.total_momentum * k.weight(&(*x - n.centroid)),
    );
    (v + far, stats)
}

/// Velocity at many points, with merged traversal statistics.
pub fn bh_velocity_field<T: Real>(
    tree: &Octree<T>,
    x: &[Vec3<T>],
    sigma: T,
    threshold: T,
) -> Result<(Vec<Vec3<T>>, TraversalStats)> {
    if tree.num_points() == 0 {
        return Err(Error::EmptyTree);
    }
    let k = Kernel::new(sigma);
    let rows: Vec<_> = x.par_iter().map(|xi| velocity_at(tree, &k, xi, threshold)).collect();
    let mut stats = TraversalStats::default();
    let mut out = Vec::with_capacity(rows.len());
    for (v, s) in rows {
        out.push(v);
        stats += s;
    }
    Ok((out, stats))
}

/// Forward terms for targets `(q, p)` against the tree's sources.
pub(crate) fn forward_terms<T: Real>(
    tree: &Octree<T>,
    q: &[Vec3<T>],
    p: &[Vec3<T>],
    params: &BhParams<T>,
) -> (ForwardTerms<T>, TraversalStats) {
    let k = Kernel::new(params.sigma);
    let sq = tree.positions();
    let sp = tree.momenta();
    let rows: Vec<_> = (0..q.len())
        .into_par_iter()
        .map(|a| {
            let (qa, pa) = (q[a], p[a]);
            let mut stats = TraversalStats::default();
            let mut acc = ForwardAcc::default();
            let mut far = ForwardAcc::default();
            traverse(
                tree,
                &qa,
                params.threshold,
                &mut stats,
                |j| {
                    let d = qa - sq[j];
                    acc.add(k.weight(&d), d, sp[j], pa.dot(&sp[j]));
                },
                |n| {
                    let d = qa - n.centroid;
                    let dot = pa.dot(&n.total_momentum) * pair::dot_scale::<T>(params.momentum_dot, n.count);
                    far.add(k.weight(&d), d, n.total_momentum, dot);
                },
            );
            acc.vel += far.vel;
            acc.grad += far.grad;
            acc.energy += far.energy;
            (acc.finish(&k), stats)
        })
        .collect();
    let mut out = ForwardTerms {
        dh_dp: Vec::with_capacity(q.len()),
        dh_dq: Vec::with_capacity(q.len()),
        energy: Vec::with_capacity(q.len()),
    };
    let mut stats = TraversalStats::default();
    for ((v, g, e), s) in rows {
        out.dh_dp.push(v);
        out.dh_dq.push(g);
        out.energy.push(e);
        stats += s;
    }
    (out, stats)
}

fn check_targets<T: Real>(tree: &Octree<T>, q: &PointSet<T>, p: &MomentumSet<T>) -> Result<()> {
    if tree.num_points() == 0 {
        return Err(Error::EmptyTree);
    }
    check_len(q.len(), p.len())
}

/// Approximate `H(q, p)`; `(q, p)` are the targets, the tree supplies sources.
pub fn bh_hamiltonian<T: Real>(
    tree: &Octree<T>,
    q: &PointSet<T>,
    p: &MomentumSet<T>,
    params: &BhParams<T>,
) -> Result<T> {
    check_targets(tree, q, p)?;
    Ok(forward_terms(tree, q.as_slice(), p.as_slice(), params).0.total_energy())
}

pub fn bh_hamiltonian_gradients<T: Real>(
    tree: &Octree<T>,
    q: &PointSet<T>,
    p: &MomentumSet<T>,
    params: &BhParams<T>,
) -> Result<(HamiltonianGradients<T>, TraversalStats)> {
    check_targets(tree, q, p)?;
    let (f, stats) = forward_terms(tree, q.as_slice(), p.as_slice(), params);
    Ok((HamiltonianGradients { dh_dp: f.dh_dp, dh_dq: f.dh_dq }, stats))
}

/// Approximate [`AdjointProducts`] against a tree annotated with
/// [`Octree::accumulate_adjoints`]. Approximated nodes use the adjoint
/// position total `Σα` and the mean momentum adjoint `Σβ / n`.
pub fn bh_adjoint_products<T: Real>(
    tree: &Octree<T>,
    q: &[Vec3<T>],
    p: &[Vec3<T>],
    alpha: &[Vec3<T>],
    beta: &[Vec3<T>],
    params: &BhParams<T>,
) -> Result<(AdjointProducts<T>, TraversalStats)> {
    if tree.num_points() == 0 {
        return Err(Error::EmptyTree);
    }
    check_len(q.len(), p.len())?;
    check_len(q.len(), alpha.len())?;
    check_len(q.len(), beta.len())?;
    let k = Kernel::new(params.sigma);
    let (sq, sp, sa, sb) = (tree.positions(), tree.momenta(), tree.alpha(), tree.beta());
    let rows: Vec<_> = (0..q.len())
        .into_par_iter()
        .map(|a| {
            let t = AdjointTarget { pos: q[a], mom: p[a], alpha: alpha[a], beta: beta[a] };
            let mut stats = TraversalStats::default();
            let mut acc = AdjointAcc::default();
            let mut far = AdjointAcc::default();
            traverse(
                tree,
                &t.pos,
                params.threshold,
                &mut stats,
                |j| {
                    let d = t.pos - sq[j];
                    acc.add(&k, &t, k.weight(&d), d, sp[j], sa[j], sb[j], t.mom.dot(&sp[j]));
                },
                |n| {
                    let d = t.pos - n.centroid;
                    let count = T::from_count(n.count);
                    let dot = t.mom.dot(&n.total_momentum) * pair::dot_scale::<T>(params.momentum_dot, n.count);
                    far.add(
                        &k,
                        &t,
                        k.weight(&d),
                        d,
                        n.total_momentum,
                        n.adjoint_pos_sum,
                        n.adjoint_mom_sum / count,
                        dot,
                    );
                },
            );
            let near = acc.finish(&k);
            let far = far.finish(&k);
            ([near[0] + far[0], near[1] + far[1], near[2] + far[2], near[3] + far[3]], stats)
        })
        .collect();
    let mut stats = TraversalStats::default();
    let mut products = Vec::with_capacity(rows.len());
    for (r, s) in rows {
        products.push(r);
        stats += s;
    }
    Ok((unzip_products(products), stats))
}
