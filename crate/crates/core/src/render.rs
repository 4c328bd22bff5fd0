//! Z-buffered equirectangular point splatting, the image-space photometric
//! loss built on it, and procedurally generated rooms with known camera poses.

use std::f64::consts::{PI, TAU};

use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{project_point, quaternion_to_matrix, rot_z, LocalPoseParam, Panorama, PointCloud, Pose};
use crate::optimizer::{refine_with, RefineOptions, RefinementTrace};
use crate::sampler::LossGradient;

/// Splat radius in pixels used when none is given.
pub const DEFAULT_SPLAT_RADIUS: usize = 1;

/// Generated scenes may not exceed this many points.
pub const MAX_SCENE_POINTS: usize = 5_000_000;

/// Central-difference step (radians and meters) of the photometric baseline.
pub const PHOTOMETRIC_FD_STEP: f64 = 1e-2;

#[derive(Debug, Clone, PartialEq)]
pub struct RenderOutput {
    pub image: Panorama,
    pub valid_mask: Vec<bool>,
    /// Distance of the winning point, `+inf` where nothing was splatted.
    pub depth: Vec<f64>,
}

impl RenderOutput {
    pub fn valid_fraction(&self) -> f64 {
        self.valid_mask.iter().filter(|&&v| v).count() as f64 / self.valid_mask.len() as f64
    }
}

/// Renders the cloud as seen from `pose`.
///
/// Every point covers the pixels within `splat_radius` (Chebyshev) of its
/// rounded projection; per pixel the nearest point wins and exact depth ties
/// go to the lower point index. Columns wrap, rows are cut at the image edge.
/// Uncovered pixels are black and invalid.
pub fn render(cloud: &PointCloud, pose: &Pose, height: usize, width: usize, splat_radius: usize) -> Result<RenderOutput> {
    if height < 2 || width < 2 {
        return Err(Error::InvalidArgument(format!("render size {height}x{width} is below 2x2")));
    }
    let mut depth = vec![f64::INFINITY; height * width];
    let mut winner = vec![usize::MAX; height * width];
    let rad = splat_radius as isize;
    for (i, p) in cloud.positions().iter().enumerate() {
        let x = pose.to_camera(p);
        let Some([row, col]) = project_point(&x, height, width) else {
            continue;
        };
        let d = x.norm();
        let r0 = (row.round() as isize).min(height as isize - 1);
        let c0 = col.round() as isize;
        for dr in -rad..=rad {
            let r = r0 + dr;
            if r < 0 || r >= height as isize {
                continue;
            }
            for dc in -rad..=rad {
                let c = (c0 + dc).rem_euclid(width as isize);
                let k = r as usize * width + c as usize;
                if d < depth[k] {
                    depth[k] = d;
                    winner[k] = i;
                }
            }
        }
    }
    let colors = cloud.colors();
    let mut data = Vec::with_capacity(height * width * 3);
    for &w in &winner {
        if w == usize::MAX {
            data.extend_from_slice(&[0.0; 3]);
        } else {
            data.extend_from_slice(colors[w].as_slice());
        }
    }
    Ok(RenderOutput {
        image: Panorama::new(height, width, data)?,
        valid_mask: winner.iter().map(|&w| w != usize::MAX).collect(),
        depth,
    })
}

/// Mean RGB distance between the rendered view and `image` over rendered
/// pixels; `+inf` if nothing is rendered.
pub fn photometric_loss(cloud: &PointCloud, image: &Panorama, pose: &Pose, splat_radius: usize) -> f64 {
    let Ok(out) = render(cloud, pose, image.height(), image.width(), splat_radius) else {
        return f64::INFINITY;
    };
    let (mut sum, mut n) = (0.0, 0usize);
    for (k, &valid) in out.valid_mask.iter().enumerate() {
        if !valid {
            continue;
        }
        let a = &out.image.data()[3 * k..3 * k + 3];
        let b = &image.data()[3 * k..3 * k + 3];
        sum += a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
        n += 1;
    }
    if n == 0 {
        f64::INFINITY
    } else {
        sum / n as f64
    }
}

/// Photometric-loss refinement with central finite-difference gradients
/// (twelve extra renders per iteration), same optimizer as the sampling loss.
pub fn refine_photometric(
    cloud: &PointCloud,
    image: &Panorama,
    start: &Pose,
    options: &RefineOptions,
    splat_radius: usize,
) -> Result<RefinementTrace> {
    let loss_at = |p: &LocalPoseParam| photometric_loss(cloud, image, &p.pose(), splat_radius);
    refine_with(start, options, |param| {
        let loss = loss_at(param);
        let base = param.to_vector();
        let mut grad = [0.0; 6];
        for (i, g) in grad.iter_mut().enumerate() {
            let mut plus = base;
            let mut minus = base;
            plus[i] += PHOTOMETRIC_FD_STEP;
            minus[i] -= PHOTOMETRIC_FD_STEP;
            let diff = loss_at(&param.with_vector(&plus)) - loss_at(&param.with_vector(&minus));
            *g = if diff.is_finite() { diff / (2.0 * PHOTOMETRIC_FD_STEP) } else { 0.0 };
        }
        LossGradient {
            loss,
            d_omega: Vector3::new(grad[0], grad[1], grad[2]),
            d_tau: Vector3::new(grad[3], grad[4], grad[5]),
            n_valid: usize::from(loss.is_finite()),
        }
    })
}

/// Surface coloring of generated rooms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Texture {
    /// Two-color checkerboard per face, each face with its own palette.
    Checker,
    /// Smooth 3D value noise per channel.
    Noise,
    /// One flat color per surface.
    SemanticFlat,
}

impl std::str::FromStr for Texture {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "checker" => Ok(Self::Checker),
            "noise" => Ok(Self::Noise),
            "semantic_flat" => Ok(Self::SemanticFlat),
            other => Err(Error::InvalidArgument(format!("unknown texture '{other}'"))),
        }
    }
}

/// Everything needed to regenerate a scene bit for bit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneParams {
    pub seed: u64,
    /// Room size along x, y, z in meters.
    pub extent: [f64; 3],
    /// Surface samples per square meter.
    pub density: f64,
    pub texture: Texture,
    /// Restrict the camera to yaw-only rotations.
    pub gravity_aligned: bool,
    pub height: usize,
    pub width: usize,
    pub splat_radius: usize,
}

impl Default for SceneParams {
    fn default() -> Self {
        Self {
            seed: 0,
            extent: [4.0, 3.0, 2.5],
            density: 400.0,
            texture: Texture::Noise,
            gravity_aligned: true,
            height: 128,
            width: 256,
            splat_radius: DEFAULT_SPLAT_RADIUS,
        }
    }
}

/// Furniture block standing on the floor with one face against a wall.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Furniture {
    pub min: [f64; 3],
    pub max: [f64; 3],
    /// Wall the block touches: `(axis, at_max_side)`.
    pub wall_axis: usize,
    pub wall_at_max: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneDescriptor {
    pub params: SceneParams,
    pub furniture: Vec<Furniture>,
    pub point_count: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticScene {
    pub cloud: PointCloud,
    pub oracle_pose: Pose,
    pub panorama: Panorama,
    pub descriptor: SceneDescriptor,
}

/// Planar rectangle `origin + s * u + t * v`, `s, t` in `[0, 1]`.
#[derive(Clone, Copy)]
struct Patch {
    origin: Vector3<f64>,
    u: Vector3<f64>,
    v: Vector3<f64>,
    surface: usize,
}

impl Patch {
    fn grid(&self, density: f64) -> (usize, usize) {
        let step = 1.0 / density.sqrt();
        let nu = ((self.u.norm() / step).round() as usize).max(1);
        let nv = ((self.v.norm() / step).round() as usize).max(1);
        (nu, nv)
    }
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn lattice_value(seed: u64, salt: u64, ix: i64, iy: i64, iz: i64) -> f64 {
    let mut h = splitmix(seed ^ salt.wrapping_mul(0xA24B_AED4_963E_E407));
    for k in [ix, iy, iz] {
        h = splitmix(h ^ k as u64);
    }
    (h >> 11) as f64 / (1u64 << 53) as f64
}

fn value_noise(seed: u64, salt: u64, p: &Vector3<f64>, spacing: f64) -> f64 {
    let q = p / spacing;
    let base = q.map(f64::floor);
    let f = (q - base).map(|t| t * t * (3.0 - 2.0 * t));
    let (ix, iy, iz) = (base.x as i64, base.y as i64, base.z as i64);
    let mut acc = 0.0;
    for corner in 0..8 {
        let (dx, dy, dz) = (corner & 1, (corner >> 1) & 1, (corner >> 2) & 1);
        let w = (if dx == 1 { f.x } else { 1.0 - f.x })
            * (if dy == 1 { f.y } else { 1.0 - f.y })
            * (if dz == 1 { f.z } else { 1.0 - f.z });
        acc += w * lattice_value(seed, salt, ix + dx as i64, iy + dy as i64, iz + dz as i64);
    }
    acc
}

fn noise_color(seed: u64, p: &Vector3<f64>) -> Vector3<f64> {
    Vector3::from_fn(|ch, _| {
        let salt = ch as u64 * 2;
        let v = 0.65 * value_noise(seed, salt, p, 2.5) + 0.35 * value_noise(seed, salt + 1, p, 1.0);
        (0.5 + 1.5 * (v - 0.5)).clamp(0.0, 1.0)
    })
}

const SEMANTIC_PALETTE: [[f64; 3]; 12] = [
    [0.90, 0.10, 0.10],
    [0.10, 0.70, 0.20],
    [0.15, 0.25, 0.90],
    [0.95, 0.85, 0.10],
    [0.60, 0.20, 0.75],
    [0.10, 0.80, 0.80],
    [0.95, 0.55, 0.10],
    [0.55, 0.35, 0.15],
    [0.85, 0.85, 0.85],
    [0.25, 0.25, 0.25],
    [0.95, 0.50, 0.70],
    [0.50, 0.75, 0.30],
];

const CHECKER_CELL: f64 = 0.5;

/// Minimum horizontal distance between the camera and any furniture block.
const CAMERA_CLEARANCE: f64 = 0.5;

fn place_furniture(rng: &mut ChaCha8Rng, extent: &Vector3<f64>) -> Vec<Furniture> {
    let wanted = rng.gen_range(2..=5);
    let mut placed: Vec<Furniture> = Vec::new();
    for _ in 0..wanted * 20 {
        if placed.len() == wanted {
            break;
        }
        let wall_axis = rng.gen_range(0..2usize);
        let wall_at_max = rng.gen_bool(0.5);
        let along = 1 - wall_axis;
        let depth = rng.gen_range(0.35..0.7f64).min(extent[wall_axis] / 4.0);
        let length = rng.gen_range(0.4..1.0f64).min(extent[along] / 3.0);
        let tall = rng.gen_range(0.3..0.8f64).min(extent.z / 2.0);
        let start = rng.gen_range(0.0..(extent[along] - length));
        let mut min = [0.0; 3];
        let mut max = [0.0; 3];
        min[along] = start;
        max[along] = start + length;
        if wall_at_max {
            min[wall_axis] = extent[wall_axis] - depth;
            max[wall_axis] = extent[wall_axis];
        } else {
            max[wall_axis] = depth;
        }
        max[2] = tall;
        let gap = 0.1;
        let overlaps = placed.iter().any(|o| {
            (0..2).all(|a| min[a] < o.max[a] + gap && o.min[a] < max[a] + gap)
        });
        if !overlaps {
            placed.push(Furniture {
                min,
                max,
                wall_axis,
                wall_at_max,
            });
        }
    }
    placed
}

fn room_patches(extent: &Vector3<f64>) -> Vec<Patch> {
    let (ex, ey, ez) = (extent.x, extent.y, extent.z);
    let x = Vector3::x() * ex;
    let y = Vector3::y() * ey;
    let z = Vector3::z() * ez;
    vec![
        Patch { origin: Vector3::zeros(), u: x, v: y, surface: 0 },
        Patch { origin: z, u: x, v: y, surface: 1 },
        Patch { origin: Vector3::zeros(), u: y, v: z, surface: 2 },
        Patch { origin: x, u: y, v: z, surface: 3 },
        Patch { origin: Vector3::zeros(), u: x, v: z, surface: 4 },
        Patch { origin: y, u: x, v: z, surface: 5 },
    ]
}

/// Exposed faces of a block: the top and the three sides not against the wall.
fn furniture_patches(f: &Furniture, surface: usize) -> Vec<Patch> {
    let lo = Vector3::from(f.min);
    let hi = Vector3::from(f.max);
    let d = hi - lo;
    let (dx, dy, dz) = (Vector3::x() * d.x, Vector3::y() * d.y, Vector3::z() * d.z);
    let mut out = vec![Patch { origin: Vector3::new(lo.x, lo.y, hi.z), u: dx, v: dy, surface }];
    let sides = [
        (0, false, Patch { origin: lo, u: dy, v: dz, surface }),
        (0, true, Patch { origin: Vector3::new(hi.x, lo.y, lo.z), u: dy, v: dz, surface }),
        (1, false, Patch { origin: lo, u: dx, v: dz, surface }),
        (1, true, Patch { origin: Vector3::new(lo.x, hi.y, lo.z), u: dx, v: dz, surface }),
    ];
    for (axis, at_max, patch) in sides {
        if !(axis == f.wall_axis && at_max == f.wall_at_max) {
            out.push(patch);
        }
    }
    out
}

/// Whether a room-surface sample is hidden inside furniture (floor beneath a
/// block, wall behind it).
fn hidden_by_furniture(p: &Vector3<f64>, furniture: &[Furniture]) -> bool {
    furniture.iter().any(|f| (0..3).all(|a| p[a] >= f.min[a] && p[a] <= f.max[a]))
}

fn camera_position(rng: &mut ChaCha8Rng, extent: &Vector3<f64>, furniture: &[Furniture]) -> Vector3<f64> {
    let margin = Vector3::new(
        (extent.x / 4.0).min(0.7),
        (extent.y / 4.0).min(0.7),
        0.0,
    );
    let z_lo = (extent.z * 0.4).min(1.0);
    let z_hi = extent.z - (extent.z * 0.25).min(0.6);
    let mut last = Vector3::zeros();
    for _ in 0..200 {
        let p = Vector3::new(
            rng.gen_range(margin.x..(extent.x - margin.x)),
            rng.gen_range(margin.y..(extent.y - margin.y)),
            rng.gen_range(z_lo..z_hi),
        );
        last = p;
        let clear = furniture.iter().all(|f| {
            (0..2).any(|a| p[a] < f.min[a] - CAMERA_CLEARANCE || p[a] > f.max[a] + CAMERA_CLEARANCE)
        });
        if clear {
            return p;
        }
    }
    last
}

fn random_rotation(rng: &mut ChaCha8Rng) -> Matrix3<f64> {
    let (u1, u2, u3): (f64, f64, f64) = (rng.gen(), rng.gen(), rng.gen());
    let (a, b) = ((1.0 - u1).sqrt(), u1.sqrt());
    quaternion_to_matrix(b * (TAU * u3).cos(), a * (TAU * u2).sin(), a * (TAU * u2).cos(), b * (TAU * u3).sin())
}

/// Builds a furnished room, picks a camera pose inside it and renders the
/// panorama seen from there.
pub fn generate_scene(params: &SceneParams) -> Result<SyntheticScene> {
    let extent = Vector3::from(params.extent);
    if extent.iter().any(|e| !(*e >= 1.0) || !e.is_finite()) {
        return Err(Error::InvalidArgument("room extents must be at least 1 m".into()));
    }
    if !(params.density > 0.0) || !params.density.is_finite() {
        return Err(Error::InvalidArgument("density must be positive".into()));
    }
    if params.height < 2 || params.width < 2 {
        return Err(Error::InvalidArgument("panorama must be at least 2x2".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let furniture = place_furniture(&mut rng, &extent);
    let mut patches = room_patches(&extent);
    for (i, f) in furniture.iter().enumerate() {
        patches.extend(furniture_patches(f, 6 + i));
    }
    let budget: usize = patches
        .iter()
        .map(|p| {
            let (a, b) = p.grid(params.density);
            a * b
        })
        .sum();
    if budget > MAX_SCENE_POINTS {
        return Err(Error::SceneTooLarge {
            points: budget,
            limit: MAX_SCENE_POINTS,
        });
    }

    let mut palette: Vec<usize> = (0..SEMANTIC_PALETTE.len()).collect();
    for i in (1..palette.len()).rev() {
        palette.swap(i, rng.gen_range(0..=i));
    }
    let checker: Vec<[Vector3<f64>; 2]> = (0..patches.iter().map(|p| p.surface).max().unwrap_or(0) + 1)
        .map(|_| {
            let a = Vector3::from_fn(|_, _| rng.gen_range(0.05..0.95));
            let b = Vector3::from_fn(|_, _| rng.gen_range(0.05..0.95));
            [a, b]
        })
        .collect();
    let noise_seed: u64 = rng.gen();

    let mut positions = Vec::with_capacity(budget);
    let mut colors = Vec::with_capacity(budget);
    for (pi, patch) in patches.iter().enumerate() {
        let (nu, nv) = patch.grid(params.density);
        let room = pi < 6;
        for i in 0..nu {
            for j in 0..nv {
                let s = (i as f64 + rng.gen::<f64>()) / nu as f64;
                let t = (j as f64 + rng.gen::<f64>()) / nv as f64;
                let p = patch.origin + patch.u * s + patch.v * t;
                if room && hidden_by_furniture(&p, &furniture) {
                    continue;
                }
                let color = match params.texture {
                    Texture::Noise => noise_color(noise_seed, &p),
                    Texture::SemanticFlat => Vector3::from(SEMANTIC_PALETTE[palette[patch.surface % 12]]),
                    Texture::Checker => {
                        let cu = (s * patch.u.norm() / CHECKER_CELL).floor() as i64;
                        let cv = (t * patch.v.norm() / CHECKER_CELL).floor() as i64;
                        checker[patch.surface][((cu + cv).rem_euclid(2)) as usize]
                    }
                };
                positions.push(p);
                colors.push(color);
            }
        }
    }
    let cloud = PointCloud::new(positions, colors)?;

    let translation = camera_position(&mut rng, &extent, &furniture);
    let rotation = if params.gravity_aligned {
        rot_z(rng.gen_range(0.0..TAU))
    } else {
        random_rotation(&mut rng)
    };
    let oracle_pose = Pose::new(rotation, translation)?;
    let panorama = render(&cloud, &oracle_pose, params.height, params.width, params.splat_radius)?.image;
    let point_count = cloud.len();
    Ok(SyntheticScene {
        cloud,
        oracle_pose,
        panorama,
        descriptor: SceneDescriptor {
            params: params.clone(),
            furniture,
            point_count,
        },
    })
}

/// Rigid change of world frame `X' = G X + g`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RigidAdjustment {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl RigidAdjustment {
    /// The same physical camera expressed in the adjusted frame.
    pub fn apply_to_pose(&self, pose: &Pose) -> Pose {
        Pose {
            rotation: pose.rotation * self.rotation.transpose(),
            translation: self.rotation * pose.translation + self.translation,
        }
    }
}

/// Random yaw in `[0, pi)` plus a translation with components in `[0, 3)` m,
/// drawn deterministically from `seed`.
pub fn augment_pose(cloud: &PointCloud, seed: u64) -> (PointCloud, RigidAdjustment) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let angle = rng.gen_range(0.0..PI);
    let translation = Vector3::from_fn(|_, _| rng.gen_range(0.0..3.0));
    let adjustment = RigidAdjustment {
        rotation: rot_z(angle),
        translation,
    };
    (cloud.rigidly_moved(&adjustment.rotation, &adjustment.translation), adjustment)
}
