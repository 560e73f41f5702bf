//! Synthetic point sets for experiments and fixtures.
//!
//! Paired shapes generated from the same `n_points` share index
//! correspondence: point `i` of a flat rectangle maps to point `i` of the
//! bent rectangle, point `i` of a circle to point `i` of a rescaled circle.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, PointSet, Real, Result, Vec3};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapeKind {
    Circle,
    TwoCircles,
    FlatRectangle,
    BentRectangle,
    UniformBox,
    ClusteredPairs,
}

impl std::str::FromStr for ShapeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "circle" => ShapeKind::Circle,
            "two_circles" => ShapeKind::TwoCircles,
            "flat_rectangle" => ShapeKind::FlatRectangle,
            "bent_rectangle" => ShapeKind::BentRectangle,
            "uniform_box" => ShapeKind::UniformBox,
            "clustered_pairs" => ShapeKind::ClusteredPairs,
            _ => return Err(Error::InvalidSpec(format!("unknown shape {s:?}"))),
        })
    }
}

/// Shape parameters. Only the fields relevant to `kind` are read.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ShapeSpec {
    pub kind: ShapeKind,
    pub n_points: usize,
    /// Circle radius (each circle for `TwoCircles`).
    pub radius: f64,
    /// Distance between the two circle centers, along x.
    pub center_offset: f64,
    /// Rectangle grid rows across the short side.
    pub rows: usize,
    /// Rectangle grid spacing.
    pub spacing: f64,
    /// Total bend of `BentRectangle`, radians.
    pub bend_angle: f64,
    /// Edge length of the cube used by `UniformBox` and `ClusteredPairs`.
    pub box_size: f64,
    /// Distance between the two points of a cluster pair.
    pub cluster_spread: f64,
    pub rng_seed: u64,
}

impl Default for ShapeSpec {
    fn default() -> Self {
        ShapeSpec::new(ShapeKind::Circle, 100)
    }
}

impl ShapeSpec {
    /// Defaults put the 1200-point rectangle at a mean 3σ-neighbour count
    /// well under N/4 for σ = 2, and the default circles entirely inside
    /// one 3σ ball.
    pub fn new(kind: ShapeKind, n_points: usize) -> Self {
        ShapeSpec {
            kind,
            n_points,
            radius: 1.0,
            center_offset: 8.0,
            rows: 4,
            spacing: 0.5,
            bend_angle: std::f64::consts::FRAC_PI_4,
            box_size: 40.0,
            cluster_spread: 0.5,
            rng_seed: 0,
        }
    }

    pub fn with_radius(mut self, radius: f64) -> Self {
        self.radius = radius;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.rng_seed = seed;
        self
    }

    fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidSpec(what.to_string()));
        let pos = |v: f64| v.is_finite() && v > 0.0;
        if self.n_points == 0 {
            return bad("n_points must be >= 1");
        }
        match self.kind {
            ShapeKind::Circle if !pos(self.radius) => bad("radius must be > 0"),
            ShapeKind::TwoCircles if !pos(self.radius) || !self.center_offset.is_finite() => {
                bad("radius must be > 0 and center_offset finite")
            }
            ShapeKind::FlatRectangle | ShapeKind::BentRectangle if self.rows == 0 || !pos(self.spacing) => {
                bad("rectangle needs rows >= 1 and spacing > 0")
            }
            ShapeKind::BentRectangle if !self.bend_angle.is_finite() => bad("bend_angle must be finite"),
            ShapeKind::UniformBox if !pos(self.box_size) => bad("box_size must be > 0"),
            ShapeKind::ClusteredPairs if !pos(self.box_size) || !pos(self.cluster_spread) => {
                bad("box_size and cluster_spread must be > 0")
            }
            _ => Ok(()),
        }
    }
}

pub fn generate<T: Real>(spec: &ShapeSpec) -> Result<PointSet<T>> {
    spec.validate()?;
    let n = spec.n_points;
    let pts: Vec<[f64; 3]> = match spec.kind {
        ShapeKind::Circle => circle(n, spec.radius, 0.0),
        ShapeKind::TwoCircles => {
            let first = n.div_ceil(2);
            let mut v = circle(first, spec.radius, -spec.center_offset / 2.0);
            v.extend(circle(n - first, spec.radius, spec.center_offset / 2.0));
            v
        }
        ShapeKind::FlatRectangle => rectangle(spec, 0.0),
        ShapeKind::BentRectangle => rectangle(spec, spec.bend_angle),
        ShapeKind::UniformBox => {
            let mut rng = ChaCha8Rng::seed_from_u64(spec.rng_seed);
            let h = spec.box_size / 2.0;
            (0..n).map(|_| [rng.gen_range(-h..h), rng.gen_range(-h..h), rng.gen_range(-h..h)]).collect()
        }
        ShapeKind::ClusteredPairs => clustered_pairs(spec),
    };
    PointSet::new(pts.into_iter().map(|[x, y, z]| Vec3::new(T::lit(x), T::lit(y), T::lit(z))).collect())
}

fn circle(n: usize, r: f64, cx: f64) -> Vec<[f64; 3]> {
    (0..n)
        .map(|k| {
            let a = 2.0 * std::f64::consts::PI * k as f64 / n as f64;
            [cx + r * a.cos(), r * a.sin(), 0.0]
        })
        .collect()
}

/// Column-major grid centred on the origin, long axis along x. A non-zero
/// bend maps the centre line onto a circular arc of the same length.
fn rectangle(spec: &ShapeSpec, bend: f64) -> Vec<[f64; 3]> {
    let rows = spec.rows;
    let cols = spec.n_points.div_ceil(rows);
    let length = (cols - 1) as f64 * spec.spacing;
    let width = (rows - 1) as f64 * spec.spacing;
    (0..spec.n_points)
        .map(|k| {
            let x = (k / rows) as f64 * spec.spacing - length / 2.0;
            let y = (k % rows) as f64 * spec.spacing - width / 2.0;
            if bend == 0.0 || length == 0.0 {
                [x, y, 0.0]
            } else {
                let radius = length / bend;
                let phi = x / radius;
                let arm = radius - y;
                [arm * phi.sin(), radius - arm * phi.cos(), 0.0]
            }
        })
        .collect()
}

fn clustered_pairs(spec: &ShapeSpec) -> Vec<[f64; 3]> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.rng_seed);
    let h = spec.box_size / 2.0;
    let mut out = Vec::with_capacity(spec.n_points);
    while out.len() < spec.n_points {
        let c = [rng.gen_range(-h..h), rng.gen_range(-h..h), rng.gen_range(-h..h)];
        let dir = loop {
            let d = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0f64..1.0)];
            let n2 = d.iter().map(|x| x * x).sum::<f64>();
            if n2 > 1e-6 && n2 <= 1.0 {
                let n = n2.sqrt();
                break [d[0] / n, d[1] / n, d[2] / n];
            }
        };
        let s = spec.cluster_spread / 2.0;
        out.push([c[0] + s * dir[0], c[1] + s * dir[1], c[2] + s * dir[2]]);
        if out.len() < spec.n_points {
            out.push([c[0] - s * dir[0], c[1] - s * dir[1], c[2] - s * dir[2]]);
        }
    }
    out
}

/// The two registration experiments: an elongated strip that bends, and a
/// small circle that expands, with every point inside one kernel reach.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Experiment {
    /// Flat rectangle onto the same rectangle bent by `bend_angle`.
    FlatToBent,
    /// Unit circle onto the concentric circle of radius 2.
    Circles,
}

impl std::str::FromStr for Experiment {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "flat" | "flat_to_bent" => Ok(Experiment::FlatToBent),
            "circles" => Ok(Experiment::Circles),
            _ => Err(Error::InvalidSpec(format!("unknown experiment {s:?} (expected flat or circles)"))),
        }
    }
}

/// `(moving, fixed)` shape specs with index correspondence.
pub fn experiment_specs(experiment: Experiment, n_points: usize) -> (ShapeSpec, ShapeSpec) {
    match experiment {
        Experiment::FlatToBent => {
            (ShapeSpec::new(ShapeKind::FlatRectangle, n_points), ShapeSpec::new(ShapeKind::BentRectangle, n_points))
        }
        Experiment::Circles => {
            (ShapeSpec::new(ShapeKind::Circle, n_points), ShapeSpec::new(ShapeKind::Circle, n_points).with_radius(2.0))
        }
    }
}

pub fn experiment_pair<T: Real>(experiment: Experiment, n_points: usize) -> Result<(PointSet<T>, PointSet<T>)> {
    let (a, b) = experiment_specs(experiment, n_points);
    Ok((generate(&a)?, generate(&b)?))
}

/// Brute-force neighbourhood statistics.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PairwiseStats {
    /// Mean number of other points within 3σ (self excluded).
    pub b: f64,
    pub diameter: f64,
}

pub fn pairwise_stats<T: Real>(q: &PointSet<T>, sigma: T) -> PairwiseStats {
    let r = 3.0 * sigma.as_f64();
    let pts: Vec<Vec3<f64>> = q.iter().map(Vec3::cast).collect();
    let mut neighbours = 0u64;
    let mut diam2 = 0.0f64;
    for (i, a) in pts.iter().enumerate() {
        for b in &pts[i + 1..] {
            let d2 = (*a - *b).norm_squared();
            diam2 = diam2.max(d2);
            if d2 <= r * r {
                neighbours += 2;
            }
        }
    }
    PairwiseStats { b: neighbours as f64 / pts.len() as f64, diameter: diam2.sqrt() }
}
