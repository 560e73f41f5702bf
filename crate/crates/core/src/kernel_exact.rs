//! Exact all-pairs Gaussian kernel sums.
//!
//! The Hamiltonian is `H(q, p) = Σ_i Σ_j (p_i · p_j) G(|q_i − q_j|)` with the
//! unnormalized kernel `G(r) = exp(−r² / 2σ²)` and no ½ factor, so
//! `∂H/∂p_i = 2 Σ_j G_ij p_j` is [`FLOW_VELOCITY_FACTOR`] times the
//! interpolated velocity field `v(x) = Σ_j G(|x − q_j|) p_j`. Points follow
//! Hamilton's equations, so anything advected alongside them (see
//! [`crate::shooting::warp_points`]) moves with `FLOW_VELOCITY_FACTOR · v`.
//!
//! The per-pair formulas live in [`pair`] and are shared with the
//! Barnes-Hut backend, which feeds them node aggregates instead of points.

use rayon::prelude::*;

use crate::types::check_len;
use crate::{MomentumSet, PointSet, Real, Result, Vec3};

/// `∂H/∂p = FLOW_VELOCITY_FACTOR · v` for the Hamiltonian as implemented.
pub const FLOW_VELOCITY_FACTOR: f64 = 2.0;

#[derive(Clone, Debug, PartialEq)]
pub struct HamiltonianGradients<T> {
    pub dh_dp: Vec<Vec3<T>>,
    pub dh_dq: Vec<Vec3<T>>,
}

/// Vector-Jacobian products of the Hamiltonian vector field, needed to run
/// the discrete adjoint backwards through one Euler step.
///
/// With `S(q, p) = α · ∂H/∂p` and `R(q, p) = β · ∂H/∂q`:
/// `s_q = ∂S/∂q`, `s_p = ∂S/∂p`, `r_q = ∂R/∂q`, `r_p = ∂R/∂p`.
#[derive(Clone, Debug, PartialEq)]
pub struct AdjointProducts<T> {
    pub s_q: Vec<Vec3<T>>,
    pub s_p: Vec<Vec3<T>>,
    pub r_q: Vec<Vec3<T>>,
    pub r_p: Vec<Vec3<T>>,
}

impl<T: Real> AdjointProducts<T> {
    /// `(∂S/∂q − ∂R/∂q, ∂S/∂p − ∂R/∂p)`: the increments of `(α, β)` per unit step.
    pub fn step_increments(&self) -> (Vec<Vec3<T>>, Vec<Vec3<T>>) {
        let dq = self.s_q.iter().zip(&self.r_q).map(|(s, r)| *s - *r).collect();
        let dp = self.s_p.iter().zip(&self.r_p).map(|(s, r)| *s - *r).collect();
        (dq, dp)
    }
}

#[inline]
pub fn gaussian<T: Real>(r: T, sigma: T) -> T {
    (-(r * r) / (T::two() * sigma * sigma)).exp()
}

/// Kernel constants and the per-pair accumulation formulas.
pub(crate) mod pair {
    use crate::{Real, Vec3};

    #[derive(Clone, Copy, Debug)]
    pub struct Kernel<T> {
        /// −1 / 2σ²
        pub neg_half_inv_var: T,
        /// 1 / σ²
        pub inv_var: T,
        /// Exponents below this give subnormal weights, which are flushed
        /// to zero: libm's subnormal path is an order of magnitude slower.
        min_exponent: T,
    }

    impl<T: Real> Kernel<T> {
        pub fn new(sigma: T) -> Self {
            let var = sigma * sigma;
            Kernel {
                neg_half_inv_var: -T::one() / (T::two() * var),
                inv_var: T::one() / var,
                min_exponent: T::min_positive_value().ln(),
            }
        }

        #[inline]
        pub fn weight(&self, d: &Vec3<T>) -> T {
            let e = d.norm_squared() * self.neg_half_inv_var;
            if e < self.min_exponent {
                T::zero()
            } else {
                e.exp()
            }
        }
    }

    /// Raw forward sums for one target point.
    #[derive(Clone, Copy, Debug, Default)]
    pub struct ForwardAcc<T> {
        /// Σ G P
        pub vel: Vec3<T>,
        /// Σ (p_a·P) G d
        pub grad: Vec3<T>,
        /// Σ (p_a·P) G
        pub energy: T,
    }

    impl<T: Real> ForwardAcc<T> {
        /// `d = q_a − Q`, `dot = p_a · P` (already scaled for the dot mode).
        #[inline]
        pub fn add(&mut self, g: T, d: Vec3<T>, mom: Vec3<T>, dot: T) {
            self.vel += mom * g;
            let gd = g * dot;
            self.grad += d * gd;
            self.energy += gd;
        }

        /// `(∂H/∂p_a, ∂H/∂q_a, a's share of H)`.
        #[inline]
        pub fn finish(self, k: &Kernel<T>) -> (Vec3<T>, Vec3<T>, T) {
            let two = T::two();
            (self.vel * two, self.grad * (-two * k.inv_var), self.energy)
        }
    }

    /// Raw backward sums for one target point.
    #[derive(Clone, Copy, Debug, Default)]
    pub struct AdjointAcc<T> {
        sp: Vec3<T>,
        sq: Vec3<T>,
        rp: Vec3<T>,
        rq: Vec3<T>,
    }

    /// The target's own state in a backward sum.
    #[derive(Clone, Copy, Debug)]
    pub struct AdjointTarget<T> {
        pub pos: Vec3<T>,
        pub mom: Vec3<T>,
        pub alpha: Vec3<T>,
        pub beta: Vec3<T>,
    }

    impl<T: Real> AdjointAcc<T> {
        /// One source with position `pos`, total momentum `mom`, total
        /// position adjoint `alpha_sum` and mean momentum adjoint `beta_mean`.
        /// `dot = p_a · mom`, scaled for the dot mode.
        #[inline]
        #[allow(clippy::too_many_arguments)]
        pub fn add(
            &mut self,
            k: &Kernel<T>,
            t: &AdjointTarget<T>,
            g: T,
            d: Vec3<T>,
            mom: Vec3<T>,
            alpha_sum: Vec3<T>,
            beta_mean: Vec3<T>,
            dot: T,
        ) {
            self.sp += alpha_sum * g;
            self.sq += d * (g * (t.alpha.dot(&mom) + alpha_sum.dot(&t.mom)));
            let w = t.beta - beta_mean;
            let wd = w.dot(&d);
            self.rp += mom * (g * wd);
            self.rq += (w - d * (k.inv_var * wd)) * (dot * g);
        }

        /// `(s_q, s_p, r_q, r_p)` for the target.
        #[inline]
        pub fn finish(self, k: &Kernel<T>) -> [Vec3<T>; 4] {
            let two = T::two();
            let c = -two * k.inv_var;
            [self.sq * c, self.sp * two, self.rq * c, self.rp * c]
        }
    }

    /// Dot-product scaling for an aggregate of `count` points.
    #[inline]
    pub fn dot_scale<T: Real>(mode: crate::MomentumDotMode, count: usize) -> T {
        match mode {
            crate::MomentumDotMode::Total => T::one(),
            crate::MomentumDotMode::LiteralMean => T::one() / T::from_count(count),
        }
    }
}

/// Per-point forward quantities: `∂H/∂p`, `∂H/∂q` and each point's share of `H`.
#[derive(Clone, Debug)]
pub(crate) struct ForwardTerms<T> {
    pub dh_dp: Vec<Vec3<T>>,
    pub dh_dq: Vec<Vec3<T>>,
    pub energy: Vec<T>,
}

impl<T: Real> ForwardTerms<T> {
    pub fn total_energy(&self) -> T {
        self.energy.iter().copied().sum()
    }
}

pub(crate) fn forward_terms<T: Real>(q: &[Vec3<T>], p: &[Vec3<T>], sigma: T) -> ForwardTerms<T> {
    let k = pair::Kernel::new(sigma);
    let per_point: Vec<_> = (0..q.len())
        .into_par_iter()
        .map(|a| {
            let (qa, pa) = (q[a], p[a]);
            let mut acc = pair::ForwardAcc::default();
            for (qj, pj) in q.iter().zip(p) {
                let d = qa - *qj;
                acc.add(k.weight(&d), d, *pj, pa.dot(pj));
            }
            acc.finish(&k)
        })
        .collect();
    let mut out = ForwardTerms {
        dh_dp: Vec::with_capacity(q.len()),
        dh_dq: Vec::with_capacity(q.len()),
        energy: Vec::with_capacity(q.len()),
    };
    for (v, g, e) in per_point {
        out.dh_dp.push(v);
        out.dh_dq.push(g);
        out.energy.push(e);
    }
    out
}

pub(crate) fn adjoint_products_raw<T: Real>(
    q: &[Vec3<T>],
    p: &[Vec3<T>],
    alpha: &[Vec3<T>],
    beta: &[Vec3<T>],
    sigma: T,
) -> AdjointProducts<T> {
    let k = pair::Kernel::new(sigma);
    let rows: Vec<[Vec3<T>; 4]> = (0..q.len())
        .into_par_iter()
        .map(|a| {
            let t = pair::AdjointTarget { pos: q[a], mom: p[a], alpha: alpha[a], beta: beta[a] };
            let mut acc = pair::AdjointAcc::default();
            for j in 0..q.len() {
                let d = t.pos - q[j];
                let g = k.weight(&d);
                acc.add(&k, &t, g, d, p[j], alpha[j], beta[j], t.mom.dot(&p[j]));
            }
            acc.finish(&k)
        })
        .collect();
    unzip_products(rows)
}

pub(crate) fn unzip_products<T: Real>(rows: Vec<[Vec3<T>; 4]>) -> AdjointProducts<T> {
    let n = rows.len();
    let mut out = AdjointProducts {
        s_q: Vec::with_capacity(n),
        s_p: Vec::with_capacity(n),
        r_q: Vec::with_capacity(n),
        r_p: Vec::with_capacity(n),
    };
    for [sq, sp, rq, rp] in rows {
        out.s_q.push(sq);
        out.s_p.push(sp);
        out.r_q.push(rq);
        out.r_p.push(rp);
    }
    out
}

/// `Σ_i Σ_j (p_i · p_j) G(|q_i − q_j|)`.
pub fn hamiltonian<T: Real>(q: &PointSet<T>, p: &MomentumSet<T>, sigma: T) -> Result<T> {
    check_len(q.len(), p.len())?;
    Ok(forward_terms(q.as_slice(), p.as_slice(), sigma).total_energy())
}

pub fn hamiltonian_gradients<T: Real>(
    q: &PointSet<T>,
    p: &MomentumSet<T>,
    sigma: T,
) -> Result<HamiltonianGradients<T>> {
    check_len(q.len(), p.len())?;
    let f = forward_terms(q.as_slice(), p.as_slice(), sigma);
    Ok(HamiltonianGradients { dh_dp: f.dh_dp, dh_dq: f.dh_dq })
}

/// `v(x) = Σ_i G(|x − q_i|) p_i` for each `x` in `q_eval`, self-term included.
pub fn exact_velocity<T: Real>(
    q_eval: &PointSet<T>,
    q_src: &PointSet<T>,
    p_src: &MomentumSet<T>,
    sigma: T,
) -> Result<Vec<Vec3<T>>> {
    check_len(q_src.len(), p_src.len())?;
    Ok(velocity_raw(q_eval.as_slice(), q_src.as_slice(), p_src.as_slice(), sigma))
}

pub(crate) fn velocity_raw<T: Real>(
    x: &[Vec3<T>],
    q: &[Vec3<T>],
    p: &[Vec3<T>],
    sigma: T,
) -> Vec<Vec3<T>> {
    let k = pair::Kernel::new(sigma);
    x.par_iter()
        .map(|xi| {
            let mut v = Vec3::zero();
            for (qj, pj) in q.iter().zip(p) {
                v += *pj * k.weight(&(*xi - *qj));
            }
            v
        })
        .collect()
}

/// Second-order products of `H` used by the backward pass; see [`AdjointProducts`].
pub fn adjoint_products<T: Real>(
    q: &PointSet<T>,
    p: &MomentumSet<T>,
    alpha: &[Vec3<T>],
    beta: &[Vec3<T>],
    sigma: T,
) -> Result<AdjointProducts<T>> {
    check_len(q.len(), p.len())?;
    check_len(q.len(), alpha.len())?;
    check_len(q.len(), beta.len())?;
    Ok(adjoint_products_raw(q.as_slice(), p.as_slice(), alpha, beta, sigma))
}
