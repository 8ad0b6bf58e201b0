//! Oriented 2D grasp boxes to 6-DoF grasp prompts.
//!
//! A box center is lifted to the camera frame through the pinhole model, the
//! in-plane angle becomes a top-down rotation about the optical axis, and the
//! rotation is reported as a unit quaternion.

use std::collections::BTreeMap;
use std::f64::consts::{FRAC_PI_2, PI};
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::json::fmt_g17;
use crate::raster::DepthMap;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl Intrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64) -> Result<Self> {
        let intr = Self { fx, fy, cx, cy };
        intr.validate()?;
        Ok(intr)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx.is_finite() && self.fx > 0.0 && self.fy.is_finite() && self.fy > 0.0) {
            return Err(Error::Geometry(format!(
                "focal lengths must be positive, got fx={} fy={}",
                self.fx, self.fy
            )));
        }
        if !(self.cx.is_finite() && self.cy.is_finite()) {
            return Err(Error::Geometry("principal point must be finite".into()));
        }
        Ok(())
    }

    /// Pixel coordinates of a camera-frame point with `z > 0`.
    pub fn project_point(&self, p: [f64; 3]) -> [f64; 2] {
        [self.fx * p[0] / p[2] + self.cx, self.fy * p[1] / p[2] + self.cy]
    }
}

/// Folds an angle into `(-pi/2, pi/2]`. Grasp rectangles are symmetric under
/// a half turn, so this is the canonical representative.
pub fn fold_half_turn(theta: f64) -> f64 {
    let mut t = theta - PI * (theta / PI).round();
    if t <= -FRAC_PI_2 {
        t += PI;
    } else if t > FRAC_PI_2 {
        t -= PI;
    }
    t
}

/// Wraps an angle into `(-pi, pi]`.
pub fn wrap_angle(theta: f64) -> f64 {
    let mut t = theta - std::f64::consts::TAU * (theta / std::f64::consts::TAU).round();
    if t <= -PI {
        t += std::f64::consts::TAU;
    }
    t
}

/// Oriented grasp rectangle in pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GraspBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
    pub theta: f64,
    pub confidence: f64,
}

impl GraspBox {
    /// Validates the box and folds `theta` into `(-pi/2, pi/2]`.
    pub fn new(x: f64, y: f64, w: f64, h: f64, theta: f64, confidence: f64) -> Result<Self> {
        if !(x.is_finite() && y.is_finite() && theta.is_finite()) {
            return Err(Error::Geometry("box center and angle must be finite".into()));
        }
        if !(w.is_finite() && w > 0.0 && h.is_finite() && h > 0.0) {
            return Err(Error::Geometry(format!("box size must be positive, got {w}x{h}")));
        }
        if !(0.0..=1.0).contains(&confidence) {
            return Err(Error::Geometry(format!("confidence {confidence} outside [0, 1]")));
        }
        Ok(Self {
            x,
            y,
            w,
            h,
            theta: fold_half_turn(theta),
            confidence,
        })
    }
}

impl<'de> Deserialize<'de> for GraspBox {
    fn deserialize<D: serde::Deserializer<'de>>(de: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(deny_unknown_fields)]
        struct Raw {
            x: f64,
            y: f64,
            w: f64,
            h: f64,
            theta: f64,
            #[serde(default = "one")]
            confidence: f64,
        }
        fn one() -> f64 {
            1.0
        }
        let r = Raw::deserialize(de)?;
        GraspBox::new(r.x, r.y, r.w, r.h, r.theta, r.confidence).map_err(serde::de::Error::custom)
    }
}

/// 3x3 rotation stored as columns.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RotationMatrix {
    cols: [[f64; 3]; 3],
}

/// Tolerance used when checking that an input matrix is a rotation.
pub const ORTHONORMAL_TOL: f64 = 1e-9;

impl RotationMatrix {
    pub const IDENTITY: Self = Self {
        cols: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
    };

    /// Checked constructor: rejects matrices that are not proper rotations.
    pub fn from_columns(cols: [[f64; 3]; 3]) -> Result<Self> {
        let r = Self { cols };
        let err = r.orthonormality_error();
        if err.is_nan() || err > ORTHONORMAL_TOL {
            return Err(Error::Geometry(format!("matrix is not orthonormal (max |RtR - I| = {err:e})")));
        }
        let det = r.determinant();
        if det.is_nan() || (det - 1.0).abs() > ORTHONORMAL_TOL {
            return Err(Error::Geometry(format!("determinant {det} is not +1")));
        }
        Ok(r)
    }

    pub(crate) fn from_columns_unchecked(cols: [[f64; 3]; 3]) -> Self {
        Self { cols }
    }

    pub fn columns(&self) -> [[f64; 3]; 3] {
        self.cols
    }

    /// Entry at `(row, col)`.
    pub fn at(&self, row: usize, col: usize) -> f64 {
        self.cols[col][row]
    }

    pub fn mul(&self, other: &Self) -> Self {
        let mut cols = [[0.0; 3]; 3];
        for (c, col) in cols.iter_mut().enumerate() {
            for (r, v) in col.iter_mut().enumerate() {
                *v = (0..3).map(|k| self.at(r, k) * other.at(k, c)).sum();
            }
        }
        Self { cols }
    }

    /// Largest entry of `|R^T R - I|`.
    pub fn orthonormality_error(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                let dot: f64 = (0..3).map(|k| self.cols[i][k] * self.cols[j][k]).sum();
                let target = if i == j { 1.0 } else { 0.0 };
                let e = (dot - target).abs();
                worst = if e.is_nan() { f64::NAN } else { worst.max(e) };
            }
        }
        worst
    }

    pub fn determinant(&self) -> f64 {
        let [a, b, c] = self.cols;
        a[0] * (b[1] * c[2] - b[2] * c[1]) - b[0] * (a[1] * c[2] - a[2] * c[1])
            + c[0] * (a[1] * b[2] - a[2] * b[1])
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.cols
            .iter()
            .flatten()
            .zip(other.cols.iter().flatten())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Unit quaternion, Hamilton convention, stored `(x, y, z, w)` with `w >= 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quaternion {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub w: f64,
}

impl Quaternion {
    pub const IDENTITY: Self = Self {
        x: 0.0,
        y: 0.0,
        z: 0.0,
        w: 1.0,
    };

    /// Normalizes and canonicalizes an arbitrary non-zero 4-vector.
    pub fn from_xyzw(v: [f64; 4]) -> Result<Self> {
        let n = v.iter().map(|c| c * c).sum::<f64>().sqrt();
        if !(n.is_finite() && n > 0.0) {
            return Err(Error::Geometry("quaternion must be finite and non-zero".into()));
        }
        Ok(Self::canonical([v[0] / n, v[1] / n, v[2] / n, v[3] / n]))
    }

    /// Validating constructor: the input must already be unit length
    /// within `tol`. The result is canonicalized.
    pub fn from_unit(v: [f64; 4], tol: f64) -> Result<Self> {
        let n = v.iter().map(|c| c * c).sum::<f64>().sqrt();
        if n.is_nan() || (n - 1.0).abs() > tol {
            return Err(Error::Geometry(format!("quaternion norm {n} is not 1")));
        }
        Self::from_xyzw(v)
    }

    /// Picks the sign with `w > 0`; for `w == 0` the first non-zero vector
    /// component is made positive.
    fn canonical(v: [f64; 4]) -> Self {
        let flip = if v[3] != 0.0 {
            v[3] < 0.0
        } else {
            v[..3].iter().find(|c| **c != 0.0).is_some_and(|c| *c < 0.0)
        };
        let s = if flip { -1.0 } else { 1.0 };
        // `+ 0.0` turns negative zeros into positive ones.
        Self {
            x: s * v[0] + 0.0,
            y: s * v[1] + 0.0,
            z: s * v[2] + 0.0,
            w: s * v[3] + 0.0,
        }
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.x, self.y, self.z, self.w]
    }

    pub fn norm(&self) -> f64 {
        self.to_array().iter().map(|c| c * c).sum::<f64>().sqrt()
    }

    pub fn dot(&self, other: &Self) -> f64 {
        self.x * other.x + self.y * other.y + self.z * other.z + self.w * other.w
    }

    /// Rotation angle between two orientations, in `[0, pi]`.
    pub fn geodesic_angle(&self, other: &Self) -> f64 {
        2.0 * self.dot(other).abs().min(1.0).acos()
    }

    /// Rotation matrix of a (not necessarily canonical) unit quaternion.
    pub fn to_matrix(&self) -> RotationMatrix {
        let Self { x, y, z, w } = *self;
        RotationMatrix::from_columns_unchecked([
            [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y + z * w), 2.0 * (x * z - y * w)],
            [2.0 * (x * y - z * w), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z + x * w)],
            [2.0 * (x * z + y * w), 2.0 * (y * z - x * w), 1.0 - 2.0 * (x * x + y * y)],
        ])
    }
}

/// Camera-frame pose plus gripper opening, the policy's grasp condition.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GraspPrompt {
    pub position: [f64; 3],
    pub orientation: Quaternion,
    pub gripper_width: f64,
    pub confidence: f64,
}

impl GraspPrompt {
    pub fn new(position: [f64; 3], orientation: Quaternion, gripper_width: f64, confidence: f64) -> Result<Self> {
        if !position.iter().all(|c| c.is_finite()) || position[2] <= 0.0 {
            return Err(Error::Geometry(format!("prompt position {position:?} must be finite with z > 0")));
        }
        if !(gripper_width.is_finite() && gripper_width > 0.0) {
            return Err(Error::Geometry(format!("gripper width {gripper_width} must be positive")));
        }
        if !(0.0..=1.0).contains(&confidence) {
            return Err(Error::Geometry(format!("confidence {confidence} outside [0, 1]")));
        }
        Ok(Self {
            position,
            orientation,
            gripper_width,
            confidence,
        })
    }

    /// Single-line JSON with every float printed to 17 significant digits:
    /// `{"position":[x,y,z],"quaternion":[qx,qy,qz,qw],"width":w,"confidence":c}`.
    pub fn to_json(&self) -> String {
        let [x, y, z] = self.position.map(fmt_g17);
        let [qx, qy, qz, qw] = self.orientation.to_array().map(fmt_g17);
        format!(
            "{{\"position\":[{x},{y},{z}],\"quaternion\":[{qx},{qy},{qz},{qw}],\"width\":{},\"confidence\":{}}}",
            fmt_g17(self.gripper_width),
            fmt_g17(self.confidence)
        )
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let wire: PromptWire = serde_json::from_str(text)?;
        wire.try_into()
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PromptWire {
    position: [f64; 3],
    quaternion: [f64; 4],
    width: f64,
    confidence: f64,
}

impl TryFrom<PromptWire> for GraspPrompt {
    type Error = Error;

    fn try_from(w: PromptWire) -> Result<Self> {
        GraspPrompt::new(w.position, Quaternion::from_unit(w.quaternion, 1e-9)?, w.width, w.confidence)
    }
}

impl fmt::Display for GraspPrompt {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_json())
    }
}

/// Lifts pixel `(u, v)` at depth `z` into the camera frame.
pub fn project_pixel(intr: &Intrinsics, pixel: [f64; 2], z: f64) -> Result<[f64; 3]> {
    if !(z.is_finite() && z > 0.0) {
        return Err(Error::InvalidDepth(z));
    }
    Ok([(pixel[0] - intr.cx) * z / intr.fx, (pixel[1] - intr.cy) * z / intr.fy, z])
}

/// Top-down grasp frame: x along the jaw axis in the image plane, z along
/// the optical axis, y = z × x.
pub fn rotation_from_theta(theta: f64) -> RotationMatrix {
    let (s, c) = theta.sin_cos();
    let x_axis = [c, s, 0.0];
    let z_axis = [0.0, 0.0, 1.0];
    let y_axis = cross(z_axis, x_axis);
    RotationMatrix::from_columns_unchecked([x_axis, y_axis, z_axis])
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

/// Shepperd's method: branch on the largest of the trace and the diagonal
/// so the square root is always taken of a quantity >= 1.
pub fn matrix_to_quaternion(r: &RotationMatrix) -> Result<Quaternion> {
    let checked = RotationMatrix::from_columns(r.columns())?;
    let m = |i, j| checked.at(i, j);
    let trace = m(0, 0) + m(1, 1) + m(2, 2);
    let q = if trace >= m(0, 0) && trace >= m(1, 1) && trace >= m(2, 2) {
        let s = 2.0 * (1.0 + trace).sqrt();
        [(m(2, 1) - m(1, 2)) / s, (m(0, 2) - m(2, 0)) / s, (m(1, 0) - m(0, 1)) / s, 0.25 * s]
    } else if m(0, 0) >= m(1, 1) && m(0, 0) >= m(2, 2) {
        let s = 2.0 * (1.0 + m(0, 0) - m(1, 1) - m(2, 2)).sqrt();
        [0.25 * s, (m(0, 1) + m(1, 0)) / s, (m(0, 2) + m(2, 0)) / s, (m(2, 1) - m(1, 2)) / s]
    } else if m(1, 1) >= m(2, 2) {
        let s = 2.0 * (1.0 + m(1, 1) - m(0, 0) - m(2, 2)).sqrt();
        [(m(0, 1) + m(1, 0)) / s, 0.25 * s, (m(1, 2) + m(2, 1)) / s, (m(0, 2) - m(2, 0)) / s]
    } else {
        let s = 2.0 * (1.0 + m(2, 2) - m(0, 0) - m(1, 1)).sqrt();
        [(m(0, 2) + m(2, 0)) / s, (m(1, 2) + m(2, 1)) / s, 0.25 * s, (m(1, 0) - m(0, 1)) / s]
    };
    Quaternion::from_xyzw(q)
}

/// Which box side spans the gripper opening.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WidthAxis {
    #[default]
    W,
    H,
}

/// Metric gripper width: the chosen box side back-projected with `fx`.
pub fn gripper_width_from_box(b: &GraspBox, z: f64, intr: &Intrinsics, axis: WidthAxis) -> Result<f64> {
    if !(z.is_finite() && z > 0.0) {
        return Err(Error::InvalidDepth(z));
    }
    let side = match axis {
        WidthAxis::W => b.w,
        WidthAxis::H => b.h,
    };
    Ok(side * z / intr.fx)
}

/// Strategy for reading a depth value at a sub-pixel location. Pixel
/// `(i, j)` of the map sits at coordinates `(i, j)`.
pub trait DepthSampler: Send + Sync {
    fn name(&self) -> &'static str;

    /// Depth at `(x, y)`. The caller has already checked bounds.
    fn sample(&self, depth: &DepthMap, x: f64, y: f64) -> Result<f64>;
}

/// Bilinear interpolation over the four surrounding cells, skipping NaN
/// cells and renormalizing the remaining weights. If every valid neighbor
/// has zero weight, their plain mean is used.
#[derive(Debug, Default)]
pub struct Bilinear;

impl DepthSampler for Bilinear {
    fn name(&self) -> &'static str {
        "bilinear"
    }

    fn sample(&self, depth: &DepthMap, x: f64, y: f64) -> Result<f64> {
        let (x0, y0) = (x.floor() as usize, y.floor() as usize);
        let (x1, y1) = ((x0 + 1).min(depth.width() - 1), (y0 + 1).min(depth.height() - 1));
        let (fx, fy) = (x - x0 as f64, y - y0 as f64);
        let taps = [
            (x0, y0, (1.0 - fx) * (1.0 - fy)),
            (x1, y0, fx * (1.0 - fy)),
            (x0, y1, (1.0 - fx) * fy),
            (x1, y1, fx * fy),
        ];
        let (mut acc, mut total, mut plain, mut count) = (0.0, 0.0, 0.0, 0usize);
        for (i, j, wgt) in taps {
            let d = depth.at(i, j);
            if d.is_nan() {
                continue;
            }
            let d = f64::from(d);
            acc += wgt * d;
            total += wgt;
            plain += d;
            count += 1;
        }
        if count == 0 {
            Err(Error::NoDepth { x, y })
        } else if total > 0.0 {
            Ok(acc / total)
        } else {
            Ok(plain / count as f64)
        }
    }
}

/// Value of the nearest cell.
#[derive(Debug, Default)]
pub struct Nearest;

impl DepthSampler for Nearest {
    fn name(&self) -> &'static str {
        "nearest"
    }

    fn sample(&self, depth: &DepthMap, x: f64, y: f64) -> Result<f64> {
        let (i, j) = (x.round() as usize, y.round() as usize);
        let d = depth.at(i.min(depth.width() - 1), j.min(depth.height() - 1));
        if d.is_nan() {
            Err(Error::NoDepth { x, y })
        } else {
            Ok(f64::from(d))
        }
    }
}

/// Name-indexed set of depth samplers.
#[derive(Clone)]
pub struct SamplerRegistry {
    entries: BTreeMap<&'static str, Arc<dyn DepthSampler>>,
}

impl SamplerRegistry {
    pub fn empty() -> Self {
        Self { entries: BTreeMap::new() }
    }

    pub fn builtin() -> Self {
        let mut r = Self::empty();
        r.register(Arc::new(Bilinear));
        r.register(Arc::new(Nearest));
        r
    }

    pub fn register(&mut self, sampler: Arc<dyn DepthSampler>) {
        self.entries.insert(sampler.name(), sampler);
    }

    pub fn get(&self, name: &str) -> Result<Arc<dyn DepthSampler>> {
        self.entries
            .get(name)
            .cloned()
            .ok_or_else(|| Error::usage(format!("unknown depth sampler `{name}` (known: {})", self.names().join(", "))))
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.entries.keys().copied().collect()
    }
}

/// Knobs for [`box_to_prompt_with`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PromptOptions {
    pub sampler: String,
    pub width_axis: WidthAxis,
}

impl Default for PromptOptions {
    fn default() -> Self {
        Self {
            sampler: "bilinear".into(),
            width_axis: WidthAxis::W,
        }
    }
}

/// Box to prompt with bilinear depth and width taken from `box.w`.
pub fn box_to_prompt(b: &GraspBox, depth: &DepthMap, intr: &Intrinsics) -> Result<GraspPrompt> {
    box_to_prompt_using(b, depth, intr, &Bilinear, WidthAxis::W)
}

pub fn box_to_prompt_with(b: &GraspBox, depth: &DepthMap, intr: &Intrinsics, opts: &PromptOptions) -> Result<GraspPrompt> {
    let sampler = SamplerRegistry::builtin().get(&opts.sampler)?;
    box_to_prompt_using(b, depth, intr, sampler.as_ref(), opts.width_axis)
}

pub fn box_to_prompt_using(
    b: &GraspBox,
    depth: &DepthMap,
    intr: &Intrinsics,
    sampler: &dyn DepthSampler,
    axis: WidthAxis,
) -> Result<GraspPrompt> {
    let (w, h) = (depth.width(), depth.height());
    let inside = b.x >= 0.0 && b.y >= 0.0 && b.x <= (w - 1) as f64 && b.y <= (h - 1) as f64;
    if !inside {
        return Err(Error::OutOfBounds {
            x: b.x,
            y: b.y,
            width: w,
            height: h,
        });
    }
    let z = sampler.sample(depth, b.x, b.y)?;
    let position = project_pixel(intr, [b.x, b.y], z)?;
    let orientation = matrix_to_quaternion(&rotation_from_theta(b.theta))?;
    let width = gripper_width_from_box(b, z, intr, axis)?;
    GraspPrompt::new(position, orientation, width, b.confidence)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn intr() -> Intrinsics {
        Intrinsics::new(600.0, 600.0, 320.0, 240.0).unwrap()
    }

    #[test]
    fn principal_point_maps_to_axis() {
        assert_eq!(project_pixel(&intr(), [320.0, 240.0], 0.5).unwrap(), [0.0, 0.0, 0.5]);
    }

    #[test]
    fn off_axis_projection() {
        assert_eq!(project_pixel(&intr(), [920.0, 240.0], 1.0).unwrap(), [1.0, 0.0, 1.0]);
    }

    #[test]
    fn bad_depth_rejected() {
        for z in [f64::NAN, 0.0, -1.0, f64::INFINITY] {
            assert!(matches!(project_pixel(&intr(), [0.0, 0.0], z), Err(Error::InvalidDepth(_))));
        }
    }

    #[test]
    fn zero_theta_is_identity() {
        assert_eq!(rotation_from_theta(0.0), RotationMatrix::IDENTITY);
    }

    #[test]
    fn quarter_turn_columns() {
        let r = rotation_from_theta(FRAC_PI_2);
        let expect = [[0.0, 1.0, 0.0], [-1.0, 0.0, 0.0], [0.0, 0.0, 1.0]];
        let e = RotationMatrix::from_columns_unchecked(expect);
        assert!(r.max_abs_diff(&e) < 1e-15);
    }

    #[test]
    fn identity_quaternion() {
        assert_eq!(matrix_to_quaternion(&RotationMatrix::IDENTITY).unwrap(), Quaternion::IDENTITY);
    }

    #[test]
    fn quarter_turn_quaternion() {
        // Axis z, angle pi/2: (0, 0, sin(pi/4), cos(pi/4)).
        let q = matrix_to_quaternion(&rotation_from_theta(FRAC_PI_2)).unwrap();
        let h = std::f64::consts::FRAC_1_SQRT_2;
        for (a, b) in q.to_array().iter().zip([0.0, 0.0, h, h]) {
            assert!((a - b).abs() < 1e-12, "{q:?}");
        }
    }

    #[test]
    fn half_turn_quaternions_hit_every_branch() {
        // 180 degree turns about x, y, z force the three non-trace branches.
        for axis in 0..3 {
            let mut v = [0.0; 4];
            v[axis] = 1.0;
            let q = Quaternion::from_xyzw(v).unwrap();
            let back = matrix_to_quaternion(&q.to_matrix()).unwrap();
            assert!(back.dot(&q).abs() > 1.0 - 1e-12, "axis {axis}: {back:?}");
            assert!(back.w >= 0.0);
        }
    }

    #[test]
    fn non_orthonormal_rejected() {
        let skew = RotationMatrix::from_columns_unchecked([[1.0, 0.1, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]);
        assert!(matches!(matrix_to_quaternion(&skew), Err(Error::Geometry(_))));
        let reflect = RotationMatrix::from_columns_unchecked([[-1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]);
        assert!(matrix_to_quaternion(&reflect).is_err());
    }

    #[test]
    fn width_from_box() {
        let b = GraspBox::new(320.0, 240.0, 60.0, 20.0, 0.0, 1.0).unwrap();
        let w = gripper_width_from_box(&b, 0.5, &intr(), WidthAxis::W).unwrap();
        assert!((w - 0.05).abs() < 1e-15);
        let w2 = gripper_width_from_box(&b, 1.0, &intr(), WidthAxis::W).unwrap();
        assert_eq!(w2, 2.0 * w);
        let wh = gripper_width_from_box(&b, 0.5, &intr(), WidthAxis::H).unwrap();
        assert!((wh - 20.0 * 0.5 / 600.0).abs() < 1e-15);
        assert!(gripper_width_from_box(&b, 0.0, &intr(), WidthAxis::W).is_err());
    }

    #[test]
    fn zero_width_box_rejected() {
        assert!(GraspBox::new(1.0, 1.0, 0.0, 5.0, 0.0, 1.0).is_err());
        assert!(GraspBox::new(1.0, 1.0, 5.0, 5.0, 0.0, 1.5).is_err());
    }

    #[test]
    fn theta_is_folded() {
        let b = GraspBox::new(0.0, 0.0, 1.0, 1.0, PI, 1.0).unwrap();
        assert!(b.theta.abs() < 1e-15);
        let b = GraspBox::new(0.0, 0.0, 1.0, 1.0, -FRAC_PI_2, 1.0).unwrap();
        assert_eq!(b.theta, FRAC_PI_2);
    }

    #[test]
    fn worked_prompt() {
        let b = GraspBox::new(320.0, 240.0, 60.0, 20.0, 0.0, 0.9).unwrap();
        let depth = DepthMap::uniform(640, 480, 0.5).unwrap();
        let p = box_to_prompt(&b, &depth, &intr()).unwrap();
        assert_eq!(p.position, [0.0, 0.0, 0.5]);
        assert_eq!(p.orientation, Quaternion::IDENTITY);
        assert!((p.gripper_width - 0.05).abs() < 1e-15);
        assert_eq!(p.confidence, 0.9);
    }

    #[test]
    fn all_nan_neighbors() {
        let mut v = vec![0.5f32; 16];
        for (x, y) in [(1, 1), (2, 1), (1, 2), (2, 2)] {
            v[y * 4 + x] = f32::NAN;
        }
        let depth = DepthMap::new(4, 4, v).unwrap();
        let b = GraspBox::new(1.5, 1.5, 2.0, 2.0, 0.0, 1.0).unwrap();
        assert!(matches!(box_to_prompt(&b, &depth, &intr()), Err(Error::NoDepth { .. })));
    }

    #[test]
    fn nan_neighbor_is_renormalized_away() {
        let depth = DepthMap::new(2, 1, vec![1.0, f32::NAN]).unwrap();
        assert_eq!(Bilinear.sample(&depth, 0.25, 0.0).unwrap(), 1.0);
        let depth = DepthMap::new(2, 1, vec![1.0, 3.0]).unwrap();
        assert_eq!(Bilinear.sample(&depth, 0.5, 0.0).unwrap(), 2.0);
        assert_eq!(Nearest.sample(&depth, 0.6, 0.0).unwrap(), 3.0);
    }

    #[test]
    fn zero_weight_fallback_uses_valid_neighbors() {
        let depth = DepthMap::new(2, 1, vec![f32::NAN, 3.0]).unwrap();
        assert_eq!(Bilinear.sample(&depth, 0.0, 0.0).unwrap(), 3.0);
    }

    #[test]
    fn out_of_bounds_center() {
        let depth = DepthMap::uniform(640, 480, 0.5).unwrap();
        let b = GraspBox::new(-5.0, 10.0, 60.0, 20.0, 0.0, 1.0).unwrap();
        assert!(matches!(box_to_prompt(&b, &depth, &intr()), Err(Error::OutOfBounds { .. })));
    }

    #[test]
    fn sampler_registry_lookup() {
        let reg = SamplerRegistry::builtin();
        assert_eq!(reg.names(), vec!["bilinear", "nearest"]);
        assert!(matches!(reg.get("bicubic"), Err(e) if e.is_usage()));
        let opts = PromptOptions {
            sampler: "nearest".into(),
            width_axis: WidthAxis::H,
        };
        let depth = DepthMap::uniform(640, 480, 0.5).unwrap();
        let b = GraspBox::new(320.2, 240.0, 60.0, 20.0, 0.0, 1.0).unwrap();
        let p = box_to_prompt_with(&b, &depth, &intr(), &opts).unwrap();
        assert!((p.gripper_width - 20.0 * 0.5 / 600.0).abs() < 1e-15);
    }

    #[test]
    fn prompt_json_shape() {
        let p = GraspPrompt::new([0.0, 0.0, 0.5], Quaternion::IDENTITY, 0.05, 0.9).unwrap();
        assert_eq!(
            p.to_json(),
            r#"{"position":[0,0,0.5],"quaternion":[0,0,0,1],"width":0.050000000000000003,"confidence":0.90000000000000002}"#
        );
        assert_eq!(GraspPrompt::from_json(&p.to_json()).unwrap(), p);
    }

    #[test]
    fn negated_quaternion_same_matrix() {
        let q = Quaternion::from_xyzw([0.1, -0.2, 0.3, 0.9]).unwrap();
        let neg = Quaternion {
            x: -q.x,
            y: -q.y,
            z: -q.z,
            w: -q.w,
        };
        assert!(q.to_matrix().max_abs_diff(&neg.to_matrix()) < 1e-15);
        assert_eq!(Quaternion::from_xyzw(neg.to_array()).unwrap(), q);
    }

    #[test]
    fn geodesic_angle_quarter_turn() {
        let a = Quaternion::IDENTITY;
        let b = matrix_to_quaternion(&rotation_from_theta(FRAC_PI_2)).unwrap();
        assert!((a.geodesic_angle(&b) - FRAC_PI_2).abs() < 1e-12);
    }
}
