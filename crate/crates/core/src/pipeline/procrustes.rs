//! Rigid least-squares alignment of corresponding point sets.

use nalgebra::{Matrix3, Vector3};

use crate::types::check_len;
use crate::{Error, PointSet, Real, Result, Vec3};

/// `x ↦ R x + t` with `R` a proper rotation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RigidTransform<T> {
    /// Row-major.
    pub rotation: [[T; 3]; 3],
    pub translation: Vec3<T>,
}

impl<T: Real> RigidTransform<T> {
    pub fn identity() -> Self {
        let (o, z) = (T::one(), T::zero());
        RigidTransform { rotation: [[o, z, z], [z, o, z], [z, z, o]], translation: Vec3::zero() }
    }

    pub fn apply(&self, x: &Vec3<T>) -> Vec3<T> {
        let r = &self.rotation;
        Vec3::new(
            r[0][0] * x[0] + r[0][1] * x[1] + r[0][2] * x[2],
            r[1][0] * x[0] + r[1][1] * x[1] + r[1][2] * x[2],
            r[2][0] * x[0] + r[2][1] * x[1] + r[2][2] * x[2],
        ) + self.translation
    }

    pub fn apply_set(&self, points: &PointSet<T>) -> PointSet<T> {
        PointSet::from_vec_unchecked(points.iter().map(|x| self.apply(x)).collect())
    }

    pub fn inverse(&self) -> Self {
        let r = &self.rotation;
        let rotation = [[r[0][0], r[1][0], r[2][0]], [r[0][1], r[1][1], r[2][1]], [r[0][2], r[1][2], r[2][2]]];
        let inv = RigidTransform { rotation, translation: Vec3::zero() };
        let t = inv.apply(&self.translation);
        RigidTransform { rotation, translation: -t }
    }

    /// Largest entry of `|RᵀR − I|` and `|det R − 1|`.
    pub fn orthonormality_error(&self) -> T {
        let m = to_matrix(&self.rotation);
        let e = (m.transpose() * m - Matrix3::identity()).abs().max();
        T::lit(e.max((m.determinant() - 1.0).abs()))
    }
}

fn to_matrix<T: Real>(r: &[[T; 3]; 3]) -> Matrix3<f64> {
    Matrix3::from_fn(|i, j| r[i][j].as_f64())
}

fn centroid(pts: &[Vector3<f64>]) -> Vector3<f64> {
    pts.iter().sum::<Vector3<f64>>() / pts.len() as f64
}

/// Rotation and translation minimizing `Σ ||R s_i + t − m_i||²`, computed
/// from the SVD of the cross-covariance with the last singular direction
/// flipped when needed to keep `det R = +1`. Computed in f64.
pub fn procrustes_align<T: Real>(source: &PointSet<T>, target: &PointSet<T>) -> Result<(RigidTransform<T>, PointSet<T>)> {
    check_len(source.len(), target.len())?;
    if source.len() < 3 {
        return Err(Error::DegenerateConfiguration("need at least 3 corresponding points"));
    }
    let lift = |p: &PointSet<T>| p.iter().map(|v| Vector3::new(v[0].as_f64(), v[1].as_f64(), v[2].as_f64())).collect::<Vec<_>>();
    let (s, m) = (lift(source), lift(target));
    let (cs, cm) = (centroid(&s), centroid(&m));
    let h: Matrix3<f64> = s.iter().zip(&m).map(|(a, b)| (a - cs) * (b - cm).transpose()).sum();

    let svd = h.svd(true, true);
    let (u, v_t) = (svd.u.expect("requested"), svd.v_t.expect("requested"));
    let mut sv: Vec<f64> = svd.singular_values.iter().copied().collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    if !(sv[1] > 1e-12 * sv[0]) {
        return Err(Error::DegenerateConfiguration("cross-covariance has rank below 2"));
    }
    let v = v_t.transpose();
    let d = (v * u.transpose()).determinant().signum();
    let r = v * Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, d)) * u.transpose();
    let t = cm - r * cs;

    let rotation = std::array::from_fn(|i| std::array::from_fn(|j| T::lit(r[(i, j)])));
    let xf = RigidTransform { rotation, translation: Vec3::new(T::lit(t[0]), T::lit(t[1]), T::lit(t[2])) };
    let aligned = xf.apply_set(source);
    Ok((xf, aligned))
}
