//! Rigid-body pose algebra, pinhole projection and dense 2D fields.
//!
//! Camera convention is KITTI: x right, y down, z forward. Pixel (0, 0) is
//! the center of the top-left pixel, so pixel `(c, r)` covers
//! `[c - 0.5, c + 0.5) x [r - 0.5, r + 0.5)`.

use nalgebra::{Matrix3, Vector3, Vector6};

use crate::error::{Error, Result};

pub type Point3 = Vector3<f64>;

/// Twist coordinates `(omega_x, omega_y, omega_z, v_x, v_y, v_z)`: rotation
/// part in radians first, translation part in meters second.
pub type Twist = Vector6<f64>;

/// Rotation angles at or beyond `pi - LOG_ANGLE_MARGIN` are rejected by [`se3_log`].
pub const LOG_ANGLE_MARGIN: f64 = 1e-6;

const ORTHO_DRIFT: f64 = 1e-12;
const SMALL_ANGLE: f64 = 1e-8;
const MIN_DEPTH: f64 = 1e-6;

/// Rigid transform `x -> R x + t`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Se3Pose {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

impl Default for Se3Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl Se3Pose {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    /// Builds a pose from a near-rotation matrix. The rotation is projected
    /// onto SO(3) when it drifts from orthonormality by more than 1e-12.
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        if rotation.iter().chain(translation.iter()).any(|v| !v.is_finite()) {
            return Err(Error::domain("pose has non-finite entries"));
        }
        if rotation.determinant() <= 0.0 {
            return Err(Error::domain("rotation matrix has non-positive determinant"));
        }
        Ok(Self {
            rotation: renormalize(rotation),
            translation,
        })
    }

    pub fn from_translation(x: f64, y: f64, z: f64) -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::new(x, y, z),
        }
    }

    pub fn rot_x(angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        Self::from_rotation_unchecked(Matrix3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c))
    }

    pub fn rot_y(angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        Self::from_rotation_unchecked(Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c))
    }

    pub fn rot_z(angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        Self::from_rotation_unchecked(Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0))
    }

    fn from_rotation_unchecked(rotation: Matrix3<f64>) -> Self {
        Self {
            rotation,
            translation: Vector3::zeros(),
        }
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    /// Row-major `[R | t]`, the KITTI pose line layout.
    pub fn to_row_major_3x4(&self) -> [f64; 12] {
        let r = &self.rotation;
        let t = &self.translation;
        [
            r[(0, 0)],
            r[(0, 1)],
            r[(0, 2)],
            t.x,
            r[(1, 0)],
            r[(1, 1)],
            r[(1, 2)],
            t.y,
            r[(2, 0)],
            r[(2, 1)],
            r[(2, 2)],
            t.z,
        ]
    }

    pub fn from_row_major_3x4(m: &[f64; 12]) -> Result<Self> {
        let rotation = Matrix3::new(m[0], m[1], m[2], m[4], m[5], m[6], m[8], m[9], m[10]);
        Self::new(rotation, Vector3::new(m[3], m[7], m[11]))
    }

    pub fn transform_point(&self, p: &Point3) -> Point3 {
        self.rotation * p + self.translation
    }

    /// `self ∘ other`: applies `other` first, then `self`.
    pub fn compose(&self, other: &Se3Pose) -> Se3Pose {
        Se3Pose {
            rotation: renormalize(self.rotation * other.rotation),
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> Se3Pose {
        let rt = self.rotation.transpose();
        Se3Pose {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    /// Rotation angle in radians, in `[0, pi]`.
    pub fn rotation_angle(&self) -> f64 {
        let (axis, cos) = rotation_sin_cos(&self.rotation);
        axis.norm().atan2(cos)
    }

    /// Largest absolute entry difference over the 3x4 `[R | t]` matrices.
    pub fn max_entry_diff(&self, other: &Se3Pose) -> f64 {
        self.to_row_major_3x4()
            .iter()
            .zip(other.to_row_major_3x4().iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Transform taking points in `from`'s camera frame into `to`'s camera
/// frame, for world-from-camera poses: `to⁻¹ ∘ from`.
pub fn relative_pose(from: &Se3Pose, to: &Se3Pose) -> Se3Pose {
    to.inverse().compose(from)
}

fn ortho_drift(r: &Matrix3<f64>) -> f64 {
    (r.transpose() * r - Matrix3::identity()).amax()
}

fn renormalize(r: Matrix3<f64>) -> Matrix3<f64> {
    if ortho_drift(&r) <= ORTHO_DRIFT {
        return r;
    }
    let svd = r.svd(true, true);
    let (mut u, v_t) = (svd.u.unwrap(), svd.v_t.unwrap());
    if (u * v_t).determinant() < 0.0 {
        let flipped = -u.column(2);
        u.set_column(2, &flipped);
    }
    u * v_t
}

fn hat(w: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -w.z, w.y, w.z, 0.0, -w.x, -w.y, w.x, 0.0)
}

/// Returns `(sin(theta) * axis, cos(theta))` of a rotation matrix.
fn rotation_sin_cos(r: &Matrix3<f64>) -> (Vector3<f64>, f64) {
    let axis_sin = Vector3::new(r[(2, 1)] - r[(1, 2)], r[(0, 2)] - r[(2, 0)], r[(1, 0)] - r[(0, 1)]) * 0.5;
    let cos = ((r.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
    (axis_sin, cos)
}

/// Logarithm map of SE(3).
pub fn se3_log(p: &Se3Pose) -> Result<Twist> {
    let (axis_sin, cos) = rotation_sin_cos(&p.rotation);
    let sin = axis_sin.norm();
    let theta = sin.atan2(cos);
    if theta >= std::f64::consts::PI - LOG_ANGLE_MARGIN {
        return Err(Error::domain(format!(
            "rotation angle {theta} is too close to pi for a unique logarithm"
        )));
    }
    let omega = if theta < SMALL_ANGLE {
        // theta / sin(theta) = 1 + theta^2 / 6 + O(theta^4)
        axis_sin * (1.0 + theta * theta / 6.0)
    } else {
        axis_sin * (theta / sin)
    };
    let k = hat(&omega);
    let k2 = k * k;
    let v_inv = if theta < SMALL_ANGLE {
        Matrix3::identity() - k * 0.5 + k2 / 12.0
    } else {
        let half = 0.5 * theta;
        let coef = (1.0 - half * half.cos() / half.sin()) / (theta * theta);
        Matrix3::identity() - k * 0.5 + k2 * coef
    };
    let v = v_inv * p.translation;
    Ok(Twist::new(omega.x, omega.y, omega.z, v.x, v.y, v.z))
}

/// Exponential map of SE(3).
pub fn se3_exp(xi: &Twist) -> Se3Pose {
    let omega = Vector3::new(xi[0], xi[1], xi[2]);
    let v = Vector3::new(xi[3], xi[4], xi[5]);
    let theta = omega.norm();
    let k = hat(&omega);
    let k2 = k * k;
    let (rotation, vmat) = if theta < SMALL_ANGLE {
        (
            Matrix3::identity() + k + k2 * 0.5,
            Matrix3::identity() + k * 0.5 + k2 / 6.0,
        )
    } else {
        let (s, c) = theta.sin_cos();
        let t2 = theta * theta;
        (
            Matrix3::identity() + k * (s / theta) + k2 * ((1.0 - c) / t2),
            Matrix3::identity() + k * ((1.0 - c) / t2) + k2 * ((theta - s) / (t2 * theta)),
        )
    };
    Se3Pose {
        rotation: renormalize(rotation),
        translation: vmat * v,
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: usize, height: usize) -> Result<Self> {
        let ok = fx > 0.0
            && fy > 0.0
            && width > 0
            && height > 0
            && (0.0..width as f64).contains(&cx)
            && (0.0..height as f64).contains(&cy);
        if !ok {
            return Err(Error::domain(format!(
                "invalid intrinsics fx={fx} fy={fy} cx={cx} cy={cy} size={width}x{height}"
            )));
        }
        Ok(Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        })
    }

    /// Principal point at the image center with the given horizontal field of view.
    pub fn from_fov(width: usize, height: usize, hfov_radians: f64) -> Result<Self> {
        let f = 0.5 * width as f64 / (0.5 * hfov_radians).tan();
        Self::new(
            f,
            f,
            0.5 * (width as f64 - 1.0),
            0.5 * (height as f64 - 1.0),
            width,
            height,
        )
    }

    /// Nearest integer pixel `(col, row)` for continuous coordinates, if inside the image.
    #[inline]
    pub fn nearest_pixel(&self, u: f64, v: f64) -> Option<(usize, usize)> {
        let c = (u + 0.5).floor();
        let r = (v + 0.5).floor();
        if c >= 0.0 && r >= 0.0 && c < self.width as f64 && r < self.height as f64 {
            Some((c as usize, r as usize))
        } else {
            None
        }
    }
}

/// Continuous pixel coordinates plus camera-z depth.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PixelDepth {
    pub u: f64,
    pub v: f64,
    pub d: f64,
}

/// Pinhole projection; `None` for points with `z <= 1e-6` (behind the camera).
#[inline]
pub fn project(p: &Point3, k: &CameraIntrinsics) -> Option<PixelDepth> {
    if !(p.z > MIN_DEPTH) {
        return None;
    }
    Some(PixelDepth {
        u: k.fx * p.x / p.z + k.cx,
        v: k.fy * p.y / p.z + k.cy,
        d: p.z,
    })
}

pub fn backproject(u: f64, v: f64, d: f64, k: &CameraIntrinsics) -> Result<Point3> {
    if !(d > 0.0) {
        return Err(Error::domain(format!("backproject needs positive depth, got {d}")));
    }
    Ok(backproject_unchecked(u, v, d, k))
}

#[inline]
pub(crate) fn backproject_unchecked(u: f64, v: f64, d: f64, k: &CameraIntrinsics) -> Point3 {
    Point3::new((u - k.cx) * d / k.fx, (v - k.cy) * d / k.fy, d)
}

/// Dense row-major `H x W x C` field of reals (images, depth maps, feature maps).
#[derive(Clone, Debug, PartialEq)]
pub struct Field2 {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

impl Field2 {
    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Self {
            height,
            width,
            channels,
            data: vec![0.0; height * width * channels],
        }
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f64) -> Self {
        Self {
            height,
            width,
            channels,
            data: vec![value; height * width * channels],
        }
    }

    pub fn from_vec(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        let expected = height * width * channels;
        if data.len() != expected {
            return Err(Error::shape("field data length", expected, data.len()));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Self {
        let mut data = Vec::with_capacity(height * width * channels);
        for r in 0..height {
            for c in 0..width {
                for ch in 0..channels {
                    data.push(f(r, c, ch));
                }
            }
        }
        Self {
            height,
            width,
            channels,
            data,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize, ch: usize) -> f64 {
        self.data[(row * self.width + col) * self.channels + ch]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, ch: usize, value: f64) {
        self.data[(row * self.width + col) * self.channels + ch] = value;
    }

    #[inline]
    pub fn pixel(&self, row: usize, col: usize) -> &[f64] {
        let start = (row * self.width + col) * self.channels;
        &self.data[start..start + self.channels]
    }

    #[inline]
    pub fn pixel_mut(&mut self, row: usize, col: usize) -> &mut [f64] {
        let start = (row * self.width + col) * self.channels;
        &mut self.data[start..start + self.channels]
    }

    pub(crate) fn ensure_same_shape(&self, other: &Field2, what: &'static str) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::shape(
                what,
                format!("{:?}", self.shape()),
                format!("{:?}", other.shape()),
            ));
        }
        Ok(())
    }
}

/// Bilinear interpolation at continuous pixel coordinates.
///
/// Writes the interpolated channel vector into `out` and returns `true`, or
/// returns `false` (leaving `out` untouched) when any contributing neighbor
/// lies outside the field. Integer coordinates on the last row/column only
/// need that pixel itself.
#[inline]
pub fn bilinear_sample_into(map: &Field2, u: f64, v: f64, out: &mut [f64]) -> bool {
    debug_assert_eq!(out.len(), map.channels);
    if !(u >= 0.0 && v >= 0.0) {
        return false;
    }
    let (w, h) = (map.width as f64, map.height as f64);
    if u > w - 1.0 || v > h - 1.0 {
        return false;
    }
    let c0 = u.floor();
    let r0 = v.floor();
    let (fu, fv) = (u - c0, v - r0);
    let (c0, r0) = (c0 as usize, r0 as usize);
    let c1 = (c0 + 1).min(map.width - 1);
    let r1 = (r0 + 1).min(map.height - 1);
    let weights = [
        ((1.0 - fu) * (1.0 - fv), r0, c0),
        (fu * (1.0 - fv), r0, c1),
        ((1.0 - fu) * fv, r1, c0),
        (fu * fv, r1, c1),
    ];
    for (ch, o) in out.iter_mut().enumerate() {
        *o = weights
            .iter()
            .filter(|(wt, _, _)| *wt != 0.0)
            .map(|&(wt, r, c)| wt * map.get(r, c, ch))
            .sum();
    }
    true
}

/// Allocating variant of [`bilinear_sample_into`]; `None` is the out-of-bounds marker.
pub fn bilinear_sample(map: &Field2, u: f64, v: f64) -> Option<Vec<f64>> {
    let mut out = vec![0.0; map.channels];
    bilinear_sample_into(map, u, v, &mut out).then_some(out)
}
