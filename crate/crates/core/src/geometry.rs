//! Rigid-body representations, conversions and pinhole projection.
//!
//! Everything here works in `f64`. Rotations are stored as 3×3 matrices
//! (`Rot3`) and every constructor that accepts arbitrary input either
//! validates the SO(3) invariants or produces the matrix through a routine
//! that guarantees them (SVD projection, Gram-Schmidt, quaternion/Euler
//! formulas).

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evalkit::ObjectModel;

pub type Mat3 = Matrix3<f64>;
pub type Vec3 = Vector3<f64>;

/// Tolerance for orthonormality and unit determinant.
pub const ROT_TOL: f64 = 1e-9;

/// Two singular values below this make a 3×3 matrix rank < 2.
pub const RANK_TOL: f64 = 1e-12;

/// Smallest camera-frame depth accepted by the projection.
pub const MIN_DEPTH: f64 = 1e-9;

/// A proper rotation matrix.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Rot3(Mat3);

impl Rot3 {
    pub fn identity() -> Self {
        Rot3(Mat3::identity())
    }

    /// Validates `mᵀm = I` and `det m = +1` within [`ROT_TOL`].
    pub fn from_matrix(m: Mat3) -> Result<Self> {
        let err = orthonormality_error(&m);
        if !m.iter().all(|x| x.is_finite()) {
            return Err(Error::Invalid("rotation contains non-finite entries".into()));
        }
        if err >= ROT_TOL || (m.determinant() - 1.0).abs() >= ROT_TOL {
            return Err(Error::Invalid(format!(
                "matrix is not a rotation (‖RᵀR−I‖_F = {err:e}, det = {})",
                m.determinant()
            )));
        }
        Ok(Rot3(m))
    }

    /// Accepts a rotation stored with limited precision (text formats) by
    /// snapping it to the nearest rotation, as long as it is already close.
    pub fn from_row_major_lenient(v: &[f64; 9], tol: f64) -> Result<Self> {
        let m = Mat3::from_row_slice(v);
        if !m.iter().all(|x| x.is_finite()) {
            return Err(Error::Invalid("rotation contains non-finite entries".into()));
        }
        let err = orthonormality_error(&m);
        if err > tol || m.determinant() <= 0.0 {
            return Err(Error::Invalid(format!(
                "matrix is not a rotation (‖RᵀR−I‖_F = {err:e}, det = {})",
                m.determinant()
            )));
        }
        svd_project_so3(&NineD(*v))
    }

    pub fn from_row_major(v: &[f64; 9]) -> Result<Self> {
        Self::from_matrix(Mat3::from_row_slice(v))
    }

    pub(crate) fn from_matrix_unchecked(m: Mat3) -> Self {
        Rot3(m)
    }

    pub fn matrix(&self) -> &Mat3 {
        &self.0
    }

    pub fn to_row_major(&self) -> [f64; 9] {
        let m = &self.0;
        [
            m[(0, 0)],
            m[(0, 1)],
            m[(0, 2)],
            m[(1, 0)],
            m[(1, 1)],
            m[(1, 2)],
            m[(2, 0)],
            m[(2, 1)],
            m[(2, 2)],
        ]
    }

    pub fn transpose(&self) -> Rot3 {
        Rot3(self.0.transpose())
    }

    /// `self · other`
    pub fn compose(&self, other: &Rot3) -> Rot3 {
        Rot3(self.0 * other.0)
    }

    pub fn apply(&self, v: &Vec3) -> Vec3 {
        self.0 * v
    }
}

/// `‖mᵀm − I‖_F`
pub fn orthonormality_error(m: &Mat3) -> f64 {
    (m.transpose() * m - Mat3::identity()).norm()
}

/// Unconstrained 3×3 matrix regressed by a network, row-major.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NineD(pub [f64; 9]);

impl NineD {
    pub fn matrix(&self) -> Mat3 {
        Mat3::from_row_slice(&self.0)
    }

    pub fn from_matrix(m: &Mat3) -> Self {
        NineD(Rot3::from_matrix_unchecked(*m).to_row_major())
    }
}

impl From<Rot3> for NineD {
    fn from(r: Rot3) -> Self {
        NineD(r.to_row_major())
    }
}

/// Two regressed 3-vectors orthonormalized by Gram-Schmidt.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SixD {
    pub a: Vec3,
    pub b: Vec3,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Quat {
    pub w: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Quat {
    pub fn new(w: f64, x: f64, y: f64, z: f64) -> Self {
        Quat { w, x, y, z }
    }

    pub fn norm(&self) -> f64 {
        (self.w * self.w + self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }
}

impl std::ops::Neg for Quat {
    type Output = Quat;
    fn neg(self) -> Quat {
        Quat::new(-self.w, -self.x, -self.y, -self.z)
    }
}

/// Rigid transform mapping model coordinates into the camera frame.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pose {
    pub r: Rot3,
    pub t: Vec3,
}

impl Pose {
    pub fn new(r: Rot3, t: Vec3) -> Self {
        Pose { r, t }
    }

    pub fn identity() -> Self {
        Pose::new(Rot3::identity(), Vec3::zeros())
    }

    pub fn transform_point(&self, x: &Vec3) -> Vec3 {
        self.r.apply(x) + self.t
    }

    /// `self ∘ other`: apply `other` first.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose::new(self.r.compose(&other.r), self.r.apply(&other.t) + self.t)
    }
}

/// JSON form of a pose: `{"R": [9 row-major], "t": [3]}`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PoseJson {
    #[serde(rename = "R")]
    pub r: [f64; 9],
    pub t: [f64; 3],
}

impl From<&Pose> for PoseJson {
    fn from(p: &Pose) -> Self {
        PoseJson {
            r: p.r.to_row_major(),
            t: [p.t.x, p.t.y, p.t.z],
        }
    }
}

impl TryFrom<PoseJson> for Pose {
    type Error = Error;

    fn try_from(p: PoseJson) -> Result<Pose> {
        if !p.t.iter().all(|x| x.is_finite()) {
            return Err(Error::Invalid("translation contains non-finite entries".into()));
        }
        Ok(Pose::new(Rot3::from_row_major_lenient(&p.r, 1e-4)?, Vec3::from(p.t)))
    }
}

/// Pinhole intrinsics plus the range of object distances the depth head covers.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "CameraJson", into = "CameraJson")]
pub struct CameraModel {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub dist_min: f64,
    pub dist_max: f64,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
struct CameraJson {
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
    dist_min: f64,
    dist_max: f64,
}

impl TryFrom<CameraJson> for CameraModel {
    type Error = Error;
    fn try_from(c: CameraJson) -> Result<Self> {
        CameraModel::new(c.fx, c.fy, c.cx, c.cy, c.dist_min, c.dist_max)
    }
}

impl From<CameraModel> for CameraJson {
    fn from(c: CameraModel) -> Self {
        CameraJson {
            fx: c.fx,
            fy: c.fy,
            cx: c.cx,
            cy: c.cy,
            dist_min: c.dist_min,
            dist_max: c.dist_max,
        }
    }
}

impl CameraModel {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, dist_min: f64, dist_max: f64) -> Result<Self> {
        let all = [fx, fy, cx, cy, dist_min, dist_max];
        if !all.iter().all(|v| v.is_finite()) {
            return Err(Error::Invalid("camera parameters must be finite".into()));
        }
        if fx <= 0.0 || fy <= 0.0 {
            return Err(Error::Invalid(format!(
                "focal lengths must be positive (fx={fx}, fy={fy})"
            )));
        }
        if !(0.0 < dist_min && dist_min < dist_max) {
            return Err(Error::Invalid(format!(
                "depth range must satisfy 0 < dist_min < dist_max (got [{dist_min}, {dist_max}])"
            )));
        }
        Ok(CameraModel {
            fx,
            fy,
            cx,
            cy,
            dist_min,
            dist_max,
        })
    }

    pub fn k(&self) -> Mat3 {
        Mat3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }

    pub fn k_inv(&self) -> Mat3 {
        Mat3::new(
            1.0 / self.fx,
            0.0,
            -self.cx / self.fx,
            0.0,
            1.0 / self.fy,
            -self.cy / self.fy,
            0.0,
            0.0,
            1.0,
        )
    }

    /// Image size implied by a centered principal point.
    pub fn image_size(&self) -> (usize, usize) {
        (
            (2.0 * self.cx).round().max(1.0) as usize,
            (2.0 * self.cy).round().max(1.0) as usize,
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Keypoint2D {
    pub u: f64,
    pub v: f64,
    pub visible: bool,
}

impl Keypoint2D {
    pub fn new(u: f64, v: f64, visible: bool) -> Self {
        Keypoint2D { u, v, visible }
    }
}

/// Result of projecting a 3D point: pixel coordinates and camera-frame depth.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Projection {
    pub u: f64,
    pub v: f64,
    pub depth: f64,
}

/// SVD with singular values sorted in descending order.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Svd3 {
    pub u: Mat3,
    pub s: Vec3,
    pub v: Mat3,
}

pub(crate) fn svd3(m: &Mat3) -> Svd3 {
    let svd = m.svd(true, true);
    let u = svd.u.expect("u requested");
    let v = svd.v_t.expect("v_t requested").transpose();
    let s = svd.singular_values;
    let mut order = [0usize, 1, 2];
    order.sort_by(|&i, &j| s[j].total_cmp(&s[i]));
    let mut out = Svd3 {
        u: Mat3::zeros(),
        s: Vec3::zeros(),
        v: Mat3::zeros(),
    };
    for (dst, &src) in order.iter().enumerate() {
        out.u.set_column(dst, &u.column(src));
        out.v.set_column(dst, &v.column(src));
        out.s[dst] = s[src];
    }
    out
}

/// The factors of the special-orthogonal Procrustes solution:
/// `M = U' diag(s) Vᵀ` with `U' = U diag(1,1,d)`, `s = (σ₁, σ₂, d·σ₃)` and
/// `d = sign det(UVᵀ)`, so that the projection is `U' Vᵀ`.
#[derive(Clone, Copy, Debug)]
pub(crate) struct ProcrustesFactors {
    pub u: Mat3,
    pub s: Vec3,
    pub v: Mat3,
}

pub(crate) fn procrustes_factors(m: &Mat3) -> Result<ProcrustesFactors> {
    if !m.iter().all(|x| x.is_finite()) {
        return Err(Error::DegenerateMatrix("non-finite entries".into()));
    }
    let Svd3 { mut u, mut s, v } = svd3(m);
    let tiny = s.iter().filter(|&&x| x < RANK_TOL).count();
    if tiny >= 2 {
        return Err(Error::DegenerateMatrix(format!(
            "rank < 2 (singular values {:e}, {:e}, {:e})",
            s[0], s[1], s[2]
        )));
    }
    if (u * v.transpose()).determinant() < 0.0 {
        u.column_mut(2).neg_mut();
        s[2] = -s[2];
    }
    Ok(ProcrustesFactors { u, s, v })
}

/// Nearest rotation to `m` in Frobenius norm, with the reflection fixed by
/// flipping the direction of the smallest singular value.
///
/// When the two smallest singular values coincide and the flip applies the
/// minimizer is not unique; the result is whichever the SVD routine yields.
pub fn svd_project_so3(m: &NineD) -> Result<Rot3> {
    let f = procrustes_factors(&m.matrix())?;
    Ok(Rot3(f.u * f.v.transpose()))
}

/// Gram-Schmidt on two vectors; the third column is their cross product.
pub fn gso_to_rot(s: &SixD) -> Result<Rot3> {
    let na = s.a.norm();
    if !(na > RANK_TOL) || !s.b.iter().all(|x| x.is_finite()) {
        return Err(Error::DegenerateInput("first vector is zero".into()));
    }
    let c1 = s.a / na;
    let b_perp = s.b - c1 * s.b.dot(&c1);
    let nb = b_perp.norm();
    if !(nb > RANK_TOL * s.b.norm().max(1.0)) {
        return Err(Error::DegenerateInput(
            "vectors are parallel or the second vector is zero".into(),
        ));
    }
    let c2 = b_perp / nb;
    let c3 = c1.cross(&c2);
    Ok(Rot3(Mat3::from_columns(&[c1, c2, c3])))
}

/// Rotation of a (not necessarily unit) quaternion; `q` and `-q` agree.
pub fn quat_to_rot(q: &Quat) -> Result<Rot3> {
    let n = q.norm();
    if !(n > RANK_TOL) {
        return Err(Error::DegenerateInput("zero quaternion".into()));
    }
    let (w, x, y, z) = (q.w / n, q.x / n, q.y / n, q.z / n);
    Ok(Rot3(Mat3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    )))
}

/// Z-Y-X Euler angles: `R = R_z(yaw) · R_y(pitch) · R_x(roll)`.
pub fn euler_to_rot(yaw: f64, pitch: f64, roll: f64) -> Rot3 {
    Rot3(rot_z(yaw).0 * rot_y(pitch) * rot_x(roll))
}

fn rot_x(a: f64) -> Mat3 {
    let (s, c) = a.sin_cos();
    Mat3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c)
}

fn rot_y(a: f64) -> Mat3 {
    let (s, c) = a.sin_cos();
    Mat3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c)
}

/// Rotation about the optical axis.
pub fn rot_z(theta: f64) -> Rot3 {
    let (s, c) = theta.sin_cos();
    Rot3(Mat3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0))
}

/// Angle of the relative rotation `aᵀb`, in `[0, π]`.
///
/// Equal to `arccos((tr(aᵀb) − 1)/2)` for exact rotations, but evaluated as
/// `atan2(sin θ, cos θ)` with the sine taken from the skew part of `aᵀb`,
/// which keeps full precision near 0.
pub fn geodesic_distance(a: &Rot3, b: &Rot3) -> f64 {
    let m = a.0.transpose() * b.0;
    let sin = (m - m.transpose()).norm() / (2.0 * std::f64::consts::SQRT_2);
    let cos = (m.trace() - 1.0) / 2.0;
    sin.atan2(cos)
}

/// Pinhole projection of a model point under `pose`.
pub fn project_point(cam: &CameraModel, pose: &Pose, x: &Vec3) -> Result<Projection> {
    project_camera_point(cam, &pose.transform_point(x))
}

/// Projection of a point already expressed in the camera frame.
pub fn project_camera_point(cam: &CameraModel, p: &Vec3) -> Result<Projection> {
    if !(p.z > MIN_DEPTH) {
        return Err(Error::BehindCamera { depth: p.z });
    }
    Ok(Projection {
        u: cam.fx * p.x / p.z + cam.cx,
        v: cam.fy * p.y / p.z + cam.cy,
        depth: p.z,
    })
}

/// `t = t_z · K⁻¹ · [o_x, o_y, 1]ᵀ`
pub fn backproject_center(cam: &CameraModel, ox: f64, oy: f64, tz: f64) -> Result<Vec3> {
    if !(tz > 0.0) {
        return Err(Error::InvalidDepth(tz));
    }
    Ok(Vec3::new(tz * (ox - cam.cx) / cam.fx, tz * (oy - cam.cy) / cam.fy, tz))
}

/// Normalized scale `σ ∈ [0, 1]` to metric depth.
pub fn depth_decode(sigma: f64, cam: &CameraModel) -> Result<f64> {
    if !(0.0..=1.0).contains(&sigma) {
        return Err(Error::Range {
            value: sigma,
            lo: 0.0,
            hi: 1.0,
        });
    }
    Ok(cam.dist_min + sigma * (cam.dist_max - cam.dist_min))
}

/// Metric depth to the normalized scale; inverse of [`depth_decode`].
pub fn depth_encode(tz: f64, cam: &CameraModel) -> Result<f64> {
    if !(cam.dist_min..=cam.dist_max).contains(&tz) {
        return Err(Error::Range {
            value: tz,
            lo: cam.dist_min,
            hi: cam.dist_max,
        });
    }
    Ok(((tz - cam.dist_min) / (cam.dist_max - cam.dist_min)).clamp(0.0, 1.0))
}

/// Image homography `K · R_z(θ) · K⁻¹` induced by rotating the scene about
/// the optical axis. Depth is unchanged by such a rotation, so the mapping
/// is exact for every 3D point.
pub fn homography_principal_rotation(cam: &CameraModel, theta: f64) -> Mat3 {
    cam.k() * rot_z(theta).0 * cam.k_inv()
}

/// Applies a homography to a pixel, dehomogenizing the result.
pub fn apply_homography(h: &Mat3, u: f64, v: f64) -> (f64, f64) {
    let p = h * Vec3::new(u, v, 1.0);
    (p.x / p.z, p.y / p.z)
}

/// Corner index `i` has x/y/z sign bits `(i>>2, i>>1, i) & 1`, so the order is
/// `---, --+, -+-, -++, +--, +-+, ++-, +++`.
pub fn bbox_corner(min: &Vec3, max: &Vec3, i: usize) -> Vec3 {
    let pick = |bit: usize, axis: usize| if (i >> bit) & 1 == 1 { max[axis] } else { min[axis] };
    Vec3::new(pick(2, 0), pick(1, 1), pick(0, 2))
}

/// The 8 projected bounding-box corners followed by the projected centroid.
pub fn bbox9_keypoints(model: &ObjectModel, pose: &Pose, cam: &CameraModel) -> Result<[Keypoint2D; 9]> {
    let pts = model.keypoints_3d();
    let mut out = [Keypoint2D::new(0.0, 0.0, true); 9];
    for (kp, x) in out.iter_mut().zip(pts.iter()) {
        let p = project_point(cam, pose, x)?;
        *kp = Keypoint2D::new(p.u, p.v, true);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::{FRAC_PI_2, PI};

    fn cam() -> CameraModel {
        CameraModel::new(500.0, 500.0, 320.0, 320.0, 0.4, 1.2).unwrap()
    }

    fn random_rot(rng: &mut ChaCha8Rng) -> Rot3 {
        loop {
            let q = Quat::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            );
            if q.norm() > 0.1 {
                return quat_to_rot(&q).unwrap();
            }
        }
    }

    fn assert_mat_eq(a: &Mat3, b: &Mat3, eps: f64) {
        for (x, y) in a.iter().zip(b.iter()) {
            assert_relative_eq!(*x, *y, epsilon = eps);
        }
    }

    #[test]
    fn svd_projection_examples() {
        let i = Mat3::identity();
        assert_mat_eq(svd_project_so3(&NineD::from_matrix(&i)).unwrap().matrix(), &i, 1e-12);
        assert_mat_eq(
            svd_project_so3(&NineD::from_matrix(&(i * 2.0))).unwrap().matrix(),
            &i,
            1e-12,
        );
        let m = Mat3::from_diagonal(&Vec3::new(3.0, 2.0, -1.0));
        assert_mat_eq(svd_project_so3(&NineD::from_matrix(&m)).unwrap().matrix(), &i, 1e-12);
    }

    #[test]
    fn svd_projection_diag_matches_brute_force() {
        // Brute-force oracle: no sampled rotation gets closer to diag(3,2,-1) than I.
        let m = Mat3::from_diagonal(&Vec3::new(3.0, 2.0, -1.0));
        let best = (svd_project_so3(&NineD::from_matrix(&m)).unwrap().matrix() - m).norm();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100_000 {
            let r = random_rot(&mut rng);
            assert!((r.matrix() - m).norm() >= best - 1e-12);
        }
    }

    #[test]
    fn svd_projection_rejects_rank_deficient() {
        let mut m = Mat3::zeros();
        m[(0, 0)] = 1.0;
        assert!(matches!(
            svd_project_so3(&NineD::from_matrix(&m)),
            Err(Error::DegenerateMatrix(_))
        ));
        assert!(matches!(
            svd_project_so3(&NineD([f64::NAN; 9])),
            Err(Error::DegenerateMatrix(_))
        ));
        // rank 2 is fine
        let mut m2 = Mat3::identity();
        m2[(2, 2)] = 0.0;
        assert!(svd_project_so3(&NineD::from_matrix(&m2)).is_ok());
    }

    #[test]
    fn gso_examples() {
        let r = gso_to_rot(&SixD {
            a: Vec3::x(),
            b: Vec3::y(),
        })
        .unwrap();
        assert_mat_eq(r.matrix(), &Mat3::identity(), 1e-15);
        let r = gso_to_rot(&SixD {
            a: Vec3::x() * 2.0,
            b: Vec3::y() * 5.0,
        })
        .unwrap();
        assert_mat_eq(r.matrix(), &Mat3::identity(), 1e-15);
        let r = gso_to_rot(&SixD {
            a: Vec3::new(1.0, 1.0, 0.0),
            b: Vec3::y(),
        })
        .unwrap();
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let expected = Mat3::from_columns(&[Vec3::new(h, h, 0.0), Vec3::new(-h, h, 0.0), Vec3::new(0.0, 0.0, 1.0)]);
        assert_mat_eq(r.matrix(), &expected, 1e-15);
        assert!(gso_to_rot(&SixD {
            a: Vec3::x(),
            b: Vec3::x() * 3.0
        })
        .is_err());
        assert!(gso_to_rot(&SixD {
            a: Vec3::zeros(),
            b: Vec3::y()
        })
        .is_err());
    }

    #[test]
    fn quaternion_and_euler_examples() {
        assert_mat_eq(
            quat_to_rot(&Quat::new(1.0, 0.0, 0.0, 0.0)).unwrap().matrix(),
            &Mat3::identity(),
            1e-15,
        );
        assert_mat_eq(
            quat_to_rot(&Quat::new(0.0, 1.0, 0.0, 0.0)).unwrap().matrix(),
            &Mat3::from_diagonal(&Vec3::new(1.0, -1.0, -1.0)),
            1e-15,
        );
        assert!(matches!(
            quat_to_rot(&Quat::new(0.0, 0.0, 0.0, 0.0)),
            Err(Error::DegenerateInput(_))
        ));
        assert_mat_eq(
            euler_to_rot(FRAC_PI_2, 0.0, 0.0).matrix(),
            rot_z(FRAC_PI_2).matrix(),
            1e-15,
        );
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let q = Quat::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            );
            let a = quat_to_rot(&q).unwrap();
            let b = quat_to_rot(&-q).unwrap();
            assert_mat_eq(a.matrix(), b.matrix(), 1e-15);
            assert!(Rot3::from_matrix(*a.matrix()).is_ok());
            let e = euler_to_rot(
                rng.random_range(-PI..PI),
                rng.random_range(-PI..PI),
                rng.random_range(-PI..PI),
            );
            assert!(Rot3::from_matrix(*e.matrix()).is_ok());
        }
    }

    #[test]
    fn geodesic_examples() {
        let i = Rot3::identity();
        assert_eq!(geodesic_distance(&i, &i), 0.0);
        assert_relative_eq!(geodesic_distance(&i, &rot_z(FRAC_PI_2)), FRAC_PI_2, epsilon = 1e-12);
        assert_relative_eq!(geodesic_distance(&rot_z(0.1), &rot_z(0.3)), 0.2, epsilon = 1e-12);
        assert_relative_eq!(geodesic_distance(&i, &rot_z(PI)), PI, epsilon = 1e-12);
    }

    #[test]
    fn rot_z_examples() {
        assert_mat_eq(rot_z(0.0).matrix(), &Mat3::identity(), 0.0);
        assert_mat_eq(
            rot_z(PI).matrix(),
            &Mat3::from_diagonal(&Vec3::new(-1.0, -1.0, 1.0)),
            1e-15,
        );
        assert_mat_eq(
            rot_z(FRAC_PI_2).matrix(),
            &Mat3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0),
            1e-15,
        );
    }

    #[test]
    fn projection_examples() {
        let c = cam();
        let p = project_point(&c, &Pose::identity(), &Vec3::new(0.0, 0.0, 1.0)).unwrap();
        assert_eq!((p.u, p.v, p.depth), (320.0, 320.0, 1.0));
        let p = project_point(&c, &Pose::identity(), &Vec3::new(0.1, 0.0, 1.0)).unwrap();
        assert_relative_eq!(p.u, 370.0, epsilon = 1e-12);
        assert_eq!((p.v, p.depth), (320.0, 1.0));
        let pose = Pose::new(Rot3::identity(), Vec3::new(0.0, 0.0, 2.0));
        let p = project_point(&c, &pose, &Vec3::zeros()).unwrap();
        assert_eq!((p.u, p.v, p.depth), (c.cx, c.cy, 2.0));
        assert!(matches!(
            project_point(&c, &Pose::identity(), &Vec3::new(0.0, 0.0, -1.0)),
            Err(Error::BehindCamera { .. })
        ));
    }

    #[test]
    fn backprojection_examples() {
        let c = cam();
        let t = backproject_center(&c, c.cx, c.cy, 1.0).unwrap();
        assert_eq!(t, Vec3::new(0.0, 0.0, 1.0));
        let t = backproject_center(&c, c.cx + c.fx, c.cy, 2.0).unwrap();
        assert_relative_eq!(t.x, 2.0, epsilon = 1e-12);
        assert_eq!((t.y, t.z), (0.0, 2.0));
        assert!(matches!(
            backproject_center(&c, 0.0, 0.0, 0.0),
            Err(Error::InvalidDepth(_))
        ));
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..200 {
            let t = Vec3::new(
                rng.random_range(-0.3..0.3),
                rng.random_range(-0.3..0.3),
                rng.random_range(0.3..2.0),
            );
            let p = project_point(&c, &Pose::new(Rot3::identity(), t), &Vec3::zeros()).unwrap();
            let back = backproject_center(&c, p.u, p.v, p.depth).unwrap();
            assert!((back - t).norm() < 1e-12);
        }
    }

    #[test]
    fn depth_examples() {
        let c = cam();
        assert_eq!(depth_decode(0.0, &c).unwrap(), 0.4);
        assert_eq!(depth_decode(1.0, &c).unwrap(), 1.2);
        assert_relative_eq!(depth_decode(0.5, &c).unwrap(), 0.8, epsilon = 1e-15);
        assert!(matches!(depth_decode(1.5, &c), Err(Error::Range { .. })));
        assert!(matches!(depth_encode(0.1, &c), Err(Error::Range { .. })));
        for i in 0..=100 {
            let s = i as f64 / 100.0;
            let back = depth_encode(depth_decode(s, &c).unwrap(), &c).unwrap();
            assert!((back - s).abs() < 1e-12);
        }
    }

    #[test]
    fn homography_examples() {
        let c = cam();
        assert_mat_eq(&homography_principal_rotation(&c, 0.0), &Mat3::identity(), 1e-15);
        // Square pixels with the principal point at (cx, cy): a 2D rotation about it.
        let theta = 0.7;
        let h = homography_principal_rotation(&c, theta);
        let (u, v) = apply_homography(&h, 400.0, 300.0);
        let (s, co) = theta.sin_cos();
        let (du, dv) = (400.0 - c.cx, 300.0 - c.cy);
        assert_relative_eq!(u, c.cx + co * du - s * dv, epsilon = 1e-9);
        assert_relative_eq!(v, c.cy + s * du + co * dv, epsilon = 1e-9);
    }

    #[test]
    fn homography_matches_rotated_projection() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..200 {
            let c = CameraModel::new(
                rng.random_range(200.0..900.0),
                rng.random_range(200.0..900.0),
                rng.random_range(100.0..500.0),
                rng.random_range(100.0..500.0),
                0.1,
                5.0,
            )
            .unwrap();
            let theta = rng.random_range(-PI..PI);
            let x = Vec3::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(0.5..3.0),
            );
            let p = project_camera_point(&c, &x).unwrap();
            let xr = rot_z(theta).apply(&x);
            assert_eq!(xr.z, x.z);
            let q = project_camera_point(&c, &xr).unwrap();
            let h = homography_principal_rotation(&c, theta);
            let (u, v) = apply_homography(&h, p.u, p.v);
            assert!((u - q.u).abs() < 1e-6 && (v - q.v).abs() < 1e-6);
        }
    }

    #[test]
    fn bbox_keypoints_for_centered_cube() {
        let c = cam();
        let model = ObjectModel::unit_cube("cube");
        let pose = Pose::new(Rot3::identity(), Vec3::new(0.0, 0.0, 2.0));
        let kps = bbox9_keypoints(&model, &pose, &c).unwrap();
        let (lo, hi) = (Vec3::repeat(-0.5), Vec3::repeat(0.5));
        for (i, kp) in kps.iter().take(8).enumerate() {
            let corner = bbox_corner(&lo, &hi, i);
            let z = 2.0 + corner.z;
            assert_relative_eq!(kp.u, c.fx * corner.x / z + c.cx, epsilon = 1e-9);
            assert_relative_eq!(kp.v, c.fy * corner.y / z + c.cy, epsilon = 1e-9);
            // Flipping the x and y signs reflects the projection through (cx, cy).
            let mirror = kps[i ^ 0b110];
            assert_relative_eq!(kp.u - c.cx, c.cx - mirror.u, epsilon = 1e-9);
            assert_relative_eq!(kp.v - c.cy, c.cy - mirror.v, epsilon = 1e-9);
        }
        assert_relative_eq!(kps[8].u, c.cx, epsilon = 1e-12);
        assert_relative_eq!(kps[8].v, c.cy, epsilon = 1e-12);
        // The first corner is (-,-,-).
        assert!(kps[0].u < c.cx && kps[0].v < c.cy);
    }

    #[test]
    fn bbox_keypoints_follow_principal_rotation() {
        let c = cam();
        let model = ObjectModel::unit_cube("cube");
        let pose = Pose::new(euler_to_rot(0.3, 0.2, -0.1), Vec3::new(0.05, -0.02, 2.5));
        let rotated = Pose::new(rot_z(FRAC_PI_2).compose(&pose.r), rot_z(FRAC_PI_2).apply(&pose.t));
        let before = bbox9_keypoints(&model, &pose, &c).unwrap();
        let after = bbox9_keypoints(&model, &rotated, &c).unwrap();
        let h = homography_principal_rotation(&c, FRAC_PI_2);
        for (b, a) in before.iter().zip(after.iter()) {
            let (u, v) = apply_homography(&h, b.u, b.v);
            assert!((u - a.u).abs() < 1e-9 && (v - a.v).abs() < 1e-9);
        }
    }

    #[test]
    fn pose_json_round_trip() {
        let pose = Pose::new(euler_to_rot(0.1, 0.2, 0.3), Vec3::new(1.0, 2.0, 3.0));
        let s = serde_json::to_string(&PoseJson::from(&pose)).unwrap();
        let back = Pose::try_from(serde_json::from_str::<PoseJson>(&s).unwrap()).unwrap();
        assert!(geodesic_distance(&pose.r, &back.r) < 1e-12);
        assert_eq!(pose.t, back.t);
        let cam_json = serde_json::to_string(&cam()).unwrap();
        assert_eq!(serde_json::from_str::<CameraModel>(&cam_json).unwrap(), cam());
        assert!(
            serde_json::from_str::<CameraModel>(r#"{"fx":-1,"fy":1,"cx":0,"cy":0,"dist_min":1,"dist_max":2}"#).is_err()
        );
    }
}
