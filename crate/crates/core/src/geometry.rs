//! Point clouds, panoramas, rigid poses and the equirectangular projection.
//!
//! Pixel convention: a camera-frame direction with elevation `phi` (angle
//! above the xy-plane) and azimuth `theta = atan2(y, x)` lands at
//!
//! ```text
//! row = H * (pi/2 - phi) / pi        north pole -> row 0
//! col = W * (theta + pi) / (2 pi)    azimuth -pi -> col 0
//! ```
//!
//! Integer coordinates are pixel centers, so pixel `(r, c)` of a panorama is
//! the color seen along `unproject(r, c)`. Columns are periodic, rows are not.

use std::f64::consts::{FRAC_PI_2, PI, TAU};

use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Points closer than this to the camera center have no defined direction.
pub const MIN_RADIUS: f64 = 1e-8;

/// Tolerance used when validating rotation matrices.
pub const ROTATION_TOLERANCE: f64 = 1e-6;

/// Colored point cloud with coordinates in meters and colors in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    positions: Vec<Vector3<f64>>,
    colors: Vec<Vector3<f64>>,
}

impl PointCloud {
    pub fn new(positions: Vec<Vector3<f64>>, colors: Vec<Vector3<f64>>) -> Result<Self> {
        if positions.is_empty() {
            return Err(Error::InvalidCloud("cloud has no points".into()));
        }
        if positions.len() != colors.len() {
            return Err(Error::InvalidCloud(format!(
                "{} positions but {} colors",
                positions.len(),
                colors.len()
            )));
        }
        if let Some(i) = positions.iter().position(|p| !p.iter().all(|v| v.is_finite())) {
            return Err(Error::InvalidCloud(format!("point {i} has a non-finite coordinate")));
        }
        if let Some(i) = colors
            .iter()
            .position(|c| !c.iter().all(|v| (0.0..=1.0).contains(v)))
        {
            return Err(Error::InvalidCloud(format!("color {i} is outside [0, 1]")));
        }
        Ok(Self { positions, colors })
    }

    pub fn positions(&self) -> &[Vector3<f64>] {
        &self.positions
    }

    pub fn colors(&self) -> &[Vector3<f64>] {
        &self.colors
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    /// Always false for a constructed cloud; present for API symmetry.
    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// Axis-aligned bounding box as `(min, max)`.
    pub fn bounding_box(&self) -> (Vector3<f64>, Vector3<f64>) {
        let mut lo = Vector3::repeat(f64::INFINITY);
        let mut hi = Vector3::repeat(f64::NEG_INFINITY);
        for p in &self.positions {
            lo = lo.inf(p);
            hi = hi.sup(p);
        }
        (lo, hi)
    }

    /// Applies `x -> rotation * x + translation` to every point; colors are kept.
    pub fn rigidly_moved(&self, rotation: &Matrix3<f64>, translation: &Vector3<f64>) -> Self {
        let positions = self
            .positions
            .iter()
            .map(|p| rotation * p + translation)
            .collect();
        Self {
            positions,
            colors: self.colors.clone(),
        }
    }
}

/// Equirectangular RGB image with channels in `[0, 1]`, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Panorama {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl Panorama {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if height < 2 || width < 2 {
            return Err(Error::InvalidPanorama(format!(
                "dimensions {height}x{width} are below 2x2"
            )));
        }
        if data.len() != height * width * 3 {
            return Err(Error::InvalidPanorama(format!(
                "expected {} channel values, got {}",
                height * width * 3,
                data.len()
            )));
        }
        if data.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::InvalidPanorama("channel value outside [0, 1]".into()));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    /// Builds a panorama by evaluating `f(row, col)` at every pixel.
    pub fn from_fn(
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize) -> [f64; 3],
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(height * width * 3);
        for r in 0..height {
            for c in 0..width {
                data.extend_from_slice(&f(r, c));
            }
        }
        Self::new(height, width, data)
    }

    pub fn constant(height: usize, width: usize, color: [f64; 3]) -> Result<Self> {
        Self::from_fn(height, width, |_, _| color)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn pixel(&self, row: usize, col: usize) -> [f64; 3] {
        let i = (row * self.width + col) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    /// The panorama a camera turned upside down would capture: a half turn
    /// about the camera x-axis, i.e. `row -> H - row` and `col -> W - col`.
    ///
    /// If `pose` is the true pose for `self`, then
    /// `Pose::new(upside_down_rotation() * pose.rotation, pose.translation)`
    /// is the true pose for the result. Row 0 (the pole) is duplicated.
    pub fn upside_down(&self) -> Self {
        let (h, w) = (self.height, self.width);
        Self::from_fn(h, w, |r, c| {
            let src_r = (h - r).min(h - 1);
            let src_c = (w - c) % w;
            self.pixel(src_r, src_c)
        })
        .expect("same shape and value range as the source")
    }
}

/// Camera-frame rotation that matches [`Panorama::upside_down`].
pub fn upside_down_rotation() -> Matrix3<f64> {
    Matrix3::from_diagonal(&Vector3::new(1.0, -1.0, -1.0))
}

/// Camera pose: a world point `X` maps to the camera frame as `R (X - t)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Pose {
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        check_rotation(&rotation)?;
        if !translation.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidPose("translation is not finite".into()));
        }
        Ok(Self {
            rotation,
            translation,
        })
    }

    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    #[inline]
    pub fn to_camera(&self, world: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * (world - self.translation)
    }
}

/// Rejects matrices that are not proper rotations within [`ROTATION_TOLERANCE`].
pub fn check_rotation(m: &Matrix3<f64>) -> Result<()> {
    if !m.iter().all(|v| v.is_finite()) {
        return Err(Error::InvalidPose("rotation has non-finite entries".into()));
    }
    let ortho = (m.transpose() * m - Matrix3::identity()).abs().max();
    if ortho >= ROTATION_TOLERANCE {
        return Err(Error::InvalidPose(format!(
            "rotation is not orthonormal (max deviation {ortho:e})"
        )));
    }
    let det = m.determinant();
    if (det - 1.0).abs() > ROTATION_TOLERANCE {
        return Err(Error::InvalidPose(format!("rotation determinant is {det}")));
    }
    Ok(())
}

/// Optimization-time parametrization: rotation `exp([omega]x) * base_rotation`,
/// translation `tau`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalPoseParam {
    pub omega: Vector3<f64>,
    pub tau: Vector3<f64>,
    pub base_rotation: Matrix3<f64>,
}

impl LocalPoseParam {
    /// Starts a refinement at `pose` with a zero rotation increment.
    pub fn at(pose: &Pose) -> Self {
        Self {
            omega: Vector3::zeros(),
            tau: pose.translation,
            base_rotation: pose.rotation,
        }
    }

    pub fn rotation(&self) -> Matrix3<f64> {
        exp_so3(&self.omega) * self.base_rotation
    }

    pub fn pose(&self) -> Pose {
        Pose {
            rotation: self.rotation(),
            translation: self.tau,
        }
    }

    /// `(omega, tau)` packed as a 6-vector.
    pub fn to_vector(&self) -> [f64; 6] {
        [
            self.omega.x,
            self.omega.y,
            self.omega.z,
            self.tau.x,
            self.tau.y,
            self.tau.z,
        ]
    }

    pub fn with_vector(&self, v: &[f64; 6]) -> Self {
        Self {
            omega: Vector3::new(v[0], v[1], v[2]),
            tau: Vector3::new(v[3], v[4], v[5]),
            base_rotation: self.base_rotation,
        }
    }
}

/// `R (X_i - t)` for every point of the cloud.
pub fn transform_points(cloud: &PointCloud, pose: &Pose) -> Vec<Vector3<f64>> {
    cloud.positions.iter().map(|p| pose.to_camera(p)).collect()
}

/// Projects a camera-frame point to continuous `(row, col)` coordinates.
///
/// Returns `None` for points within [`MIN_RADIUS`] of the camera center or
/// with non-finite coordinates.
#[inline]
pub fn project_point(x: &Vector3<f64>, height: usize, width: usize) -> Option<[f64; 2]> {
    let rho_sq = x.x * x.x + x.y * x.y;
    let radius_sq = rho_sq + x.z * x.z;
    // Written so that NaN falls through to None.
    if !(radius_sq >= MIN_RADIUS * MIN_RADIUS) || !radius_sq.is_finite() {
        return None;
    }
    let elevation = x.z.atan2(rho_sq.sqrt());
    let azimuth = x.y.atan2(x.x);
    let row = height as f64 * (FRAC_PI_2 - elevation) / PI;
    let mut col = width as f64 * (azimuth + PI) / TAU;
    if col >= width as f64 {
        col -= width as f64;
    }
    Some([row, col])
}

/// Vectorized [`project_point`]: coordinates plus a validity mask.
/// Invalid rows carry `[NaN, NaN]`.
pub fn project_equirect(points: &[Vector3<f64>], height: usize, width: usize) -> (Vec<[f64; 2]>, Vec<bool>) {
    points
        .iter()
        .map(|p| match project_point(p, height, width) {
            Some(rc) => (rc, true),
            None => ([f64::NAN; 2], false),
        })
        .unzip()
}

/// Unit camera-frame direction seen at continuous pixel coordinates `(row, col)`.
pub fn unproject(row: f64, col: f64, height: usize, width: usize) -> Vector3<f64> {
    let elevation = FRAC_PI_2 - row * PI / height as f64;
    let azimuth = col * TAU / width as f64 - PI;
    Vector3::new(
        elevation.cos() * azimuth.cos(),
        elevation.cos() * azimuth.sin(),
        elevation.sin(),
    )
}

pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Rotation by `angle` radians about +z.
pub fn rot_z(angle: f64) -> Matrix3<f64> {
    let (s, c) = angle.sin_cos();
    Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

const SMALL_ANGLE: f64 = 1e-8;

/// Rodrigues exponential map from an axis-angle vector to a rotation matrix.
pub fn exp_so3(omega: &Vector3<f64>) -> Matrix3<f64> {
    let theta_sq = omega.norm_squared();
    let theta = theta_sq.sqrt();
    let (a, b) = if theta < SMALL_ANGLE {
        (1.0 - theta_sq / 6.0, 0.5 - theta_sq / 24.0)
    } else {
        (theta.sin() / theta, (1.0 - theta.cos()) / theta_sq)
    };
    let k = skew(omega);
    Matrix3::identity() + k * a + k * k * b
}

/// Right Jacobian of the exponential map: `exp(w + d) ~ exp(w) exp(J_r(w) d)`.
pub fn right_jacobian_so3(omega: &Vector3<f64>) -> Matrix3<f64> {
    let theta_sq = omega.norm_squared();
    let theta = theta_sq.sqrt();
    let (c1, c2) = if theta < SMALL_ANGLE {
        (0.5 - theta_sq / 24.0, 1.0 / 6.0 - theta_sq / 120.0)
    } else {
        (
            (1.0 - theta.cos()) / theta_sq,
            (theta - theta.sin()) / (theta_sq * theta),
        )
    };
    let k = skew(omega);
    Matrix3::identity() - k * c1 + k * k * c2
}

/// Rotation angle of `m` in radians, in `[0, pi]`.
pub fn rotation_angle(m: &Matrix3<f64>) -> f64 {
    ((m.trace() - 1.0) / 2.0).clamp(-1.0, 1.0).acos()
}

/// Candidate rotations for the initialization grid.
///
/// With a known gravity direction these are `n` equally spaced yaws about +z;
/// otherwise `n` uniformly distributed random rotations drawn from a ChaCha8
/// generator seeded with `seed` (Shoemake's random unit quaternion).
pub fn sample_rotations(n: usize, gravity_known: bool, seed: u64) -> Vec<Matrix3<f64>> {
    if gravity_known {
        return (0..n).map(|k| rot_z(TAU * k as f64 / n as f64)).collect();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let u1: f64 = rng.gen();
            let u2: f64 = rng.gen();
            let u3: f64 = rng.gen();
            let (a, b) = ((1.0 - u1).sqrt(), u1.sqrt());
            let (x, y) = (a * (TAU * u2).sin(), a * (TAU * u2).cos());
            let (z, w) = (b * (TAU * u3).sin(), b * (TAU * u3).cos());
            quaternion_to_matrix(w, x, y, z)
        })
        .collect()
}

/// Rotation matrix of the unit quaternion `w + xi + yj + zk`.
pub fn quaternion_to_matrix(w: f64, x: f64, y: f64, z: f64) -> Matrix3<f64> {
    Matrix3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    )
}

/// Extents below this are treated as flat and get a single grid layer.
pub const DEGENERATE_EXTENT: f64 = 1e-6;

/// Per-axis counts of the translation grid for a box with the given extents.
///
/// Maximizes `nx * ny * nz <= n`; among maximal splits picks the one whose
/// cells are closest to cubic (smallest max/min cell edge over non-flat
/// axes), then the one giving more layers to longer axes.
pub fn grid_counts(extent: &Vector3<f64>, n: usize) -> [usize; 3] {
    let flat = extent.map(|e| e < DEGENERATE_EXTENT);
    let free: Vec<usize> = (0..3).filter(|&i| !flat[i]).collect();
    let n = n.max(1);

    // Longest axis first, stable on index for equal extents.
    let mut by_length = free.clone();
    by_length.sort_by(|&a, &b| extent[b].total_cmp(&extent[a]));

    let mut best: Option<([usize; 3], f64)> = None;
    let mut consider = |counts: [usize; 3]| {
        let aspect = if free.is_empty() {
            1.0
        } else {
            let cells = free.iter().map(|&i| extent[i] / counts[i] as f64);
            let (lo, hi) = cells.fold((f64::INFINITY, 0.0f64), |(lo, hi), c| (lo.min(c), hi.max(c)));
            hi / lo
        };
        let product = |c: &[usize; 3]| c.iter().product::<usize>();
        let better = match &best {
            None => true,
            Some((cur, cur_aspect)) => {
                let (p, q) = (product(&counts), product(cur));
                if p != q {
                    p > q
                } else if aspect != *cur_aspect {
                    aspect < *cur_aspect
                } else {
                    by_length.iter().map(|&i| counts[i]).gt(by_length.iter().map(|&i| cur[i]))
                }
            }
        };
        if better {
            best = Some((counts, aspect));
        }
    };

    match free.len() {
        0 => consider([1, 1, 1]),
        1 => {
            let mut c = [1; 3];
            c[free[0]] = n;
            consider(c);
        }
        2 => {
            for a in 1..=n {
                let mut c = [1; 3];
                c[free[0]] = a;
                c[free[1]] = n / a;
                consider(c);
            }
        }
        _ => {
            for a in 1..=n {
                for b in 1..=n / a {
                    consider([a, b, n / (a * b)]);
                }
            }
        }
    }
    best.expect("at least one split considered").0
}

/// Cell-centered translation grid over a bounding box, x-major order.
pub fn sample_translations(
    bbox_min: &Vector3<f64>,
    bbox_max: &Vector3<f64>,
    n: usize,
) -> Result<Vec<Vector3<f64>>> {
    if n == 0 {
        return Err(Error::InvalidArgument("translation count must be positive".into()));
    }
    let extent = bbox_max - bbox_min;
    if extent.iter().any(|e| !e.is_finite() || *e < 0.0) {
        return Err(Error::InvalidArgument("bounding box min exceeds max".into()));
    }
    let counts = grid_counts(&extent, n);
    let coord = |axis: usize, i: usize| {
        bbox_min[axis] + (i as f64 + 0.5) * extent[axis] / counts[axis] as f64
    };
    let mut out = Vec::with_capacity(counts.iter().product());
    for i in 0..counts[0] {
        for j in 0..counts[1] {
            for k in 0..counts[2] {
                out.push(Vector3::new(coord(0, i), coord(1, j), coord(2, k)));
            }
        }
    }
    Ok(out)
}
