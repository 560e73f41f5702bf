//! Diffeomorphic point-set registration by geodesic shooting.
//!
//! Points are transported by the Hamiltonian flow of a Gaussian-kernel
//! metric and the initial momenta are fitted with a limited-memory
//! quasi-Newton optimizer. Every kernel sum has two backends: an exact
//! all-pairs evaluation and a Barnes-Hut octree approximation that replaces
//! distant clusters by their centroid and aggregate momentum.
//!
//! The math is generic over the scalar type (see [`Real`]); the `*64`
//! aliases below are what the CLI and benchmarks use.

// `!(x > 0)` is the idiom for rejecting NaN along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bh_kernel;
pub mod error;
pub mod kernel_exact;
pub mod octree;
pub mod optimizer;
pub mod pipeline;
pub mod scalar;
pub mod shooting;
pub mod synthetic;
pub mod types;
pub mod vec3;

pub use error::{ConfigViolation, Error, Result};
pub use scalar::Real;
pub use types::{
    validate_config, Backend, GeodesicTrajectory, MomentumDotMode, MomentumSet, PointSet,
    ShootingConfig, ValidatedConfig,
};
pub use vec3::Vec3;

pub type Vec3f64 = Vec3<f64>;
pub type PointSet64 = PointSet<f64>;
pub type MomentumSet64 = MomentumSet<f64>;
pub type ShootingConfig64 = ShootingConfig<f64>;
pub type Trajectory64 = GeodesicTrajectory<f64>;
pub type Octree64 = octree::Octree<f64>;

pub type Vec3f32 = Vec3<f32>;
pub type PointSet32 = PointSet<f32>;
pub type MomentumSet32 = MomentumSet<f32>;
pub type ShootingConfig32 = ShootingConfig<f32>;
pub type Trajectory32 = GeodesicTrajectory<f32>;
