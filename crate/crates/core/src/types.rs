//! Domain types shared across the crate.

use std::ops::Deref;

use serde::{Deserialize, Serialize};

use crate::octree::Octree;
use crate::optimizer::OptimizerConfig;
use crate::{ConfigViolation, Error, Real, Result, Vec3};

/// Ordered 3-D positions. Point `i` keeps its identity across every
/// operation; matching is by index.
#[derive(Clone, Debug, PartialEq)]
pub struct PointSet<T> {
    points: Vec<Vec3<T>>,
}

impl<T: Real> PointSet<T> {
    /// Fails on an empty set or any non-finite coordinate.
    pub fn new(points: Vec<Vec3<T>>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::EmptyPointSet);
        }
        if let Some(index) = points.iter().position(|p| !p.is_finite()) {
            return Err(Error::NonFiniteInput { index });
        }
        Ok(PointSet { points })
    }

    pub fn from_rows(rows: &[[T; 3]]) -> Result<Self> {
        Self::new(rows.iter().copied().map(Vec3).collect())
    }

    /// Skips validation; callers guarantee the invariants.
    pub(crate) fn from_vec_unchecked(points: Vec<Vec3<T>>) -> Self {
        debug_assert!(!points.is_empty());
        PointSet { points }
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.points.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    #[inline]
    pub fn as_slice(&self) -> &[Vec3<T>] {
        &self.points
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Vec3<T>> {
        self.points.iter()
    }

    pub fn into_vec(self) -> Vec<Vec3<T>> {
        self.points
    }

    /// Componentwise bounding box.
    pub fn bounds(&self) -> (Vec3<T>, Vec3<T>) {
        let first = self.points[0];
        self.points[1..]
            .iter()
            .fold((first, first), |(lo, hi), p| (lo.min(p), hi.max(p)))
    }

    /// Largest pairwise distance, by brute force.
    pub fn diameter(&self) -> T {
        let mut best = T::zero();
        for (i, a) in self.points.iter().enumerate() {
            for b in &self.points[i + 1..] {
                best = best.max((*a - *b).norm_squared());
            }
        }
        best.sqrt()
    }

    /// Σ ||self_i − other_i||².
    pub fn sse(&self, other: &PointSet<T>) -> Result<T> {
        check_len(self.len(), other.len())?;
        Ok(self
            .points
            .iter()
            .zip(&other.points)
            .map(|(a, b)| (*a - *b).norm_squared())
            .sum())
    }

    pub fn translated(&self, offset: Vec3<T>) -> Self {
        PointSet::from_vec_unchecked(self.points.iter().map(|p| *p + offset).collect())
    }

    pub fn cast<U: Real>(&self) -> PointSet<U> {
        PointSet::from_vec_unchecked(self.points.iter().map(Vec3::cast).collect())
    }
}

impl<T> std::ops::Index<usize> for PointSet<T> {
    type Output = Vec3<T>;
    fn index(&self, i: usize) -> &Vec3<T> {
        &self.points[i]
    }
}

/// Per-point momenta, index-aligned with a [`PointSet`].
#[derive(Clone, Debug, PartialEq)]
pub struct MomentumSet<T> {
    momenta: Vec<Vec3<T>>,
}

impl<T: Real> MomentumSet<T> {
    pub fn new(momenta: Vec<Vec3<T>>) -> Result<Self> {
        if let Some(index) = momenta.iter().position(|p| !p.is_finite()) {
            return Err(Error::NonFiniteInput { index });
        }
        Ok(MomentumSet { momenta })
    }

    pub fn zeros(n: usize) -> Self {
        MomentumSet { momenta: vec![Vec3::zero(); n] }
    }

    pub fn from_rows(rows: &[[T; 3]]) -> Result<Self> {
        Self::new(rows.iter().copied().map(Vec3).collect())
    }

    pub(crate) fn from_vec_unchecked(momenta: Vec<Vec3<T>>) -> Self {
        MomentumSet { momenta }
    }

    /// Packs a flat `[x0, y0, z0, x1, ...]` buffer.
    pub fn from_flat(flat: &[T]) -> Result<Self> {
        if !flat.len().is_multiple_of(3) {
            return Err(Error::DimensionMismatch {
                expected: flat.len() / 3 * 3,
                found: flat.len(),
            });
        }
        Self::new(flat.chunks_exact(3).map(|c| Vec3([c[0], c[1], c[2]])).collect())
    }

    pub fn to_flat(&self) -> Vec<T> {
        self.momenta.iter().flat_map(|v| v.0).collect()
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.momenta.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.momenta.is_empty()
    }

    #[inline]
    pub fn as_slice(&self) -> &[Vec3<T>] {
        &self.momenta
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Vec3<T>> {
        self.momenta.iter()
    }

    pub fn into_vec(self) -> Vec<Vec3<T>> {
        self.momenta
    }

    pub fn is_zero(&self) -> bool {
        self.momenta.iter().all(|m| *m == Vec3::zero())
    }
}

impl<T> std::ops::Index<usize> for MomentumSet<T> {
    type Output = Vec3<T>;
    fn index(&self, i: usize) -> &Vec3<T> {
        &self.momenta[i]
    }
}

pub(crate) fn check_len(expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, found })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Backend {
    #[default]
    #[serde(rename = "exact")]
    Exact,
    #[serde(rename = "bh", alias = "barnes_hut")]
    BarnesHut,
}

impl Backend {
    pub fn as_str(self) -> &'static str {
        match self {
            Backend::Exact => "exact",
            Backend::BarnesHut => "bh",
        }
    }
}

impl std::fmt::Display for Backend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Backend {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exact" => Ok(Backend::Exact),
            "bh" | "barnes_hut" => Ok(Backend::BarnesHut),
            _ => Err(Error::InvalidSpec(format!("unknown backend {s:?} (expected exact or bh)"))),
        }
    }
}

/// How an approximated node enters the momentum dot product `p_j · p_i`.
///
/// `Total` uses `p_j · P_k` once per node, i.e. the node mean momentum
/// counted `n_k` times. `LiteralMean` uses `p_j · P_k / n_k` once per node.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum MomentumDotMode {
    #[default]
    Total,
    LiteralMean,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ShootingConfig<T> {
    /// Gaussian kernel width in mm.
    pub sigma: T,
    /// Weight of the data attachment term.
    pub lambda: T,
    /// Uniform Euler steps on [0, 1].
    pub timesteps: usize,
    pub backend: Backend,
    /// Barnes-Hut opening distance is `threshold_multiplier * sigma`.
    pub threshold_multiplier: T,
    pub momentum_dot: MomentumDotMode,
    pub optimizer: OptimizerConfig<T>,
}

impl<T: Real> Default for ShootingConfig<T> {
    fn default() -> Self {
        ShootingConfig {
            sigma: T::two(),
            lambda: T::one(),
            timesteps: 40,
            backend: Backend::Exact,
            threshold_multiplier: T::lit(3.0),
            momentum_dot: MomentumDotMode::Total,
            optimizer: OptimizerConfig::default(),
        }
    }
}

impl<T: Real> ShootingConfig<T> {
    pub fn threshold(&self) -> T {
        self.threshold_multiplier * self.sigma
    }

    pub fn dt(&self) -> T {
        T::one() / T::from_count(self.timesteps)
    }
}

/// A [`ShootingConfig`] whose bounds have been checked.
#[derive(Clone, Debug, PartialEq)]
pub struct ValidatedConfig<T>(ShootingConfig<T>);

impl<T> Deref for ValidatedConfig<T> {
    type Target = ShootingConfig<T>;
    fn deref(&self) -> &ShootingConfig<T> {
        &self.0
    }
}

impl<T: Real> ValidatedConfig<T> {
    pub fn into_inner(self) -> ShootingConfig<T> {
        self.0
    }

    /// Same configuration with a different kernel width.
    pub fn with_sigma(&self, sigma: T) -> Result<Self> {
        validate_config(ShootingConfig { sigma, ..self.0.clone() })
    }

    pub fn with_backend(&self, backend: Backend) -> Self {
        ValidatedConfig(ShootingConfig { backend, ..self.0.clone() })
    }
}

/// Checks every bound and reports all violations at once.
pub fn validate_config<T: Real>(config: ShootingConfig<T>) -> Result<ValidatedConfig<T>> {
    let mut bad = Vec::new();
    // `!(x > 0)` also rejects NaN.
    if !(config.sigma > T::zero()) || config.sigma.is_infinite() {
        bad.push(ConfigViolation::NonPositiveSigma);
    }
    if !(config.lambda > T::zero()) || config.lambda.is_infinite() {
        bad.push(ConfigViolation::NonPositiveLambda);
    }
    if config.timesteps == 0 {
        bad.push(ConfigViolation::ZeroTimesteps);
    }
    if !(config.threshold_multiplier > T::zero()) {
        bad.push(ConfigViolation::NonPositiveThreshold);
    }
    bad.extend(config.optimizer.violations());
    if bad.is_empty() {
        Ok(ValidatedConfig(config))
    } else {
        Err(Error::InvalidConfig(bad))
    }
}

/// Snapshots `(q_k, p_k)` at `t_k = k / T`, `k = 0..=T`.
///
/// Under the Barnes-Hut backend the per-step trees built during the forward
/// pass are kept so the backward pass only has to re-annotate adjoints.
#[derive(Clone, Debug)]
pub struct GeodesicTrajectory<T> {
    pub(crate) positions: Vec<PointSet<T>>,
    pub(crate) momenta: Vec<MomentumSet<T>>,
    pub(crate) trees: Vec<Octree<T>>,
    /// `H(q_0, p_0)` under the backend that produced the trajectory.
    pub(crate) initial_energy: T,
    /// `∂H/∂p` at `(q_0, p_0)`, reused by the gradient of the energy term.
    pub(crate) initial_dh_dp: Vec<Vec3<T>>,
}

impl<T: Real> GeodesicTrajectory<T> {
    pub fn num_snapshots(&self) -> usize {
        self.positions.len()
    }

    pub fn timesteps(&self) -> usize {
        self.positions.len() - 1
    }

    pub fn num_points(&self) -> usize {
        self.positions[0].len()
    }

    pub fn positions(&self, k: usize) -> &PointSet<T> {
        &self.positions[k]
    }

    pub fn momenta(&self, k: usize) -> &MomentumSet<T> {
        &self.momenta[k]
    }

    pub fn initial(&self) -> (&PointSet<T>, &MomentumSet<T>) {
        (&self.positions[0], &self.momenta[0])
    }

    pub fn last(&self) -> (&PointSet<T>, &MomentumSet<T>) {
        let k = self.positions.len() - 1;
        (&self.positions[k], &self.momenta[k])
    }

    pub fn states(&self) -> impl Iterator<Item = (&PointSet<T>, &MomentumSet<T>)> {
        self.positions.iter().zip(&self.momenta)
    }

    pub fn initial_energy(&self) -> T {
        self.initial_energy
    }

    /// Cached per-step trees (empty under the exact backend).
    pub fn trees(&self) -> &[Octree<T>] {
        &self.trees
    }
}
