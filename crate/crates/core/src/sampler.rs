//! Wrap-aware bilinear sampling and the point-to-image sampling loss.
//!
//! The loss at a pose is the mean, over points that project to a defined
//! direction, of the Euclidean RGB distance between each point's color and the
//! panorama color bilinearly sampled at its projection. Occlusion is ignored.
//!
//! Reductions run over fixed-size chunks whose partial sums are combined in
//! chunk order, so results are bit-identical for any rayon pool size.

use std::f64::consts::{PI, TAU};

use nalgebra::{Matrix3, Vector3};
use rayon::prelude::*;

use crate::geometry::{exp_so3, project_point, right_jacobian_so3, LocalPoseParam, Panorama, PointCloud, Pose, MIN_RADIUS};

/// Points per reduction chunk. Part of the numeric contract: changing it
/// changes the floating-point summation order.
pub const CHUNK: usize = 4096;

/// Smoothing of the per-point norm, `sqrt(|e|^2 + delta^2)`, in the gradient.
pub const NORM_SMOOTHING: f64 = 1e-8;

/// Output of [`bilinear_sample`].
#[derive(Debug, Clone, PartialEq)]
pub struct SampleResult {
    pub values: Vec<[f64; 3]>,
    /// Per point `[d/drow, d/dcol]` for each of the three channels.
    pub jacobians: Option<Vec<[[f64; 2]; 3]>>,
    pub valid_mask: Vec<bool>,
}

/// Loss value and gradient with respect to `(omega, tau)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossGradient {
    pub loss: f64,
    pub d_omega: Vector3<f64>,
    pub d_tau: Vector3<f64>,
    pub n_valid: usize,
}

impl LossGradient {
    pub fn as_array(&self) -> [f64; 6] {
        [
            self.d_omega.x,
            self.d_omega.y,
            self.d_omega.z,
            self.d_tau.x,
            self.d_tau.y,
            self.d_tau.z,
        ]
    }

    pub fn norm(&self) -> f64 {
        (self.d_omega.norm_squared() + self.d_tau.norm_squared()).sqrt()
    }
}

/// How the rotation increment enters the gradient.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RotationJacobian {
    /// Exact right Jacobian of the exponential map.
    #[default]
    Exact,
    /// First-order approximation `J_r = I`, accurate while `omega` is small.
    SmallAngle,
}

#[derive(Clone, Copy)]
struct Bilinear {
    value: [f64; 3],
    d_row: [f64; 3],
    d_col: [f64; 3],
}

#[inline]
fn sample(image: &Panorama, row: f64, col: f64) -> Bilinear {
    let (h, w) = (image.height(), image.width());
    let last = (h - 1) as f64;
    let (r0, r1, fr, row_slope) = if row <= 0.0 {
        (0, 0, 0.0, false)
    } else if row >= last {
        (h - 1, h - 1, 0.0, false)
    } else {
        let base = row.floor();
        (base as usize, base as usize + 1, row - base, true)
    };
    let col = if (0.0..w as f64).contains(&col) { col } else { col.rem_euclid(w as f64) };
    let base = col.floor();
    let fc = col - base;
    let c0 = (base as usize).min(w - 1);
    let c1 = if c0 + 1 == w { 0 } else { c0 + 1 };

    let p00 = image.pixel(r0, c0);
    let p01 = image.pixel(r0, c1);
    let p10 = image.pixel(r1, c0);
    let p11 = image.pixel(r1, c1);

    let mut out = Bilinear {
        value: [0.0; 3],
        d_row: [0.0; 3],
        d_col: [0.0; 3],
    };
    for k in 0..3 {
        let top = p00[k] + fc * (p01[k] - p00[k]);
        let bottom = p10[k] + fc * (p11[k] - p10[k]);
        out.value[k] = top + fr * (bottom - top);
        out.d_col[k] = (1.0 - fr) * (p01[k] - p00[k]) + fr * (p11[k] - p10[k]);
        if row_slope {
            out.d_row[k] = bottom - top;
        }
    }
    out
}

/// Bilinear interpolation at continuous `(row, col)` coordinates.
///
/// Columns wrap modulo the width; rows clamp to `[0, H - 1]`. Rows with a
/// NaN coordinate are marked invalid and carry zeros.
pub fn bilinear_sample(image: &Panorama, coords: &[[f64; 2]], with_jacobian: bool) -> SampleResult {
    let mut values = Vec::with_capacity(coords.len());
    let mut jacobians = with_jacobian.then(|| Vec::with_capacity(coords.len()));
    let mut valid_mask = Vec::with_capacity(coords.len());
    for &[row, col] in coords {
        let valid = row.is_finite() && col.is_finite();
        let s = if valid {
            sample(image, row, col)
        } else {
            Bilinear {
                value: [0.0; 3],
                d_row: [0.0; 3],
                d_col: [0.0; 3],
            }
        };
        values.push(s.value);
        if let Some(j) = jacobians.as_mut() {
            j.push(std::array::from_fn(|k| [s.d_row[k], s.d_col[k]]));
        }
        valid_mask.push(valid);
    }
    SampleResult {
        values,
        jacobians,
        valid_mask,
    }
}

#[derive(Default, Clone, Copy)]
struct Partial {
    distance: f64,
    n_valid: usize,
    /// Sum of dL_i/dx over points (camera frame).
    grad: Vector3<f64>,
    /// Sum of x cross dL_i/dx.
    moment: Vector3<f64>,
}

fn accumulate<const GRAD: bool>(
    positions: &[Vector3<f64>],
    colors: &[Vector3<f64>],
    image: &Panorama,
    rotation: &Matrix3<f64>,
    translation: &Vector3<f64>,
) -> Partial {
    let (h, w) = (image.height(), image.width());
    let row_scale = h as f64 / PI;
    let col_scale = w as f64 / TAU;
    let mut acc = Partial::default();
    for (p, c) in positions.iter().zip(colors) {
        let x = rotation * (p - translation);
        let Some([row, col]) = project_point(&x, h, w) else {
            continue;
        };
        let s = sample(image, row, col);
        let e = Vector3::new(s.value[0] - c.x, s.value[1] - c.y, s.value[2] - c.z);
        let sq = e.norm_squared();
        acc.distance += sq.sqrt();
        acc.n_valid += 1;
        if !GRAD {
            continue;
        }
        let rho_sq = x.x * x.x + x.y * x.y;
        let rho = rho_sq.sqrt();
        if rho < MIN_RADIUS {
            continue;
        }
        let smoothed = (sq + NORM_SMOOTHING * NORM_SMOOTHING).sqrt();
        let g_row = (e.x * s.d_row[0] + e.y * s.d_row[1] + e.z * s.d_row[2]) / smoothed;
        let g_col = (e.x * s.d_col[0] + e.y * s.d_col[1] + e.z * s.d_col[2]) / smoothed;
        // row = H/pi * (pi/2 - elevation), col = W/(2 pi) * (azimuth + pi)
        let r_sq = rho_sq + x.z * x.z;
        let d_elev = Vector3::new(-x.x * x.z / (rho * r_sq), -x.y * x.z / (rho * r_sq), rho / r_sq);
        let d_azim = Vector3::new(-x.y / rho_sq, x.x / rho_sq, 0.0);
        let g = d_elev * (-row_scale * g_row) + d_azim * (col_scale * g_col);
        acc.grad += g;
        acc.moment += x.cross(&g);
    }
    acc
}

fn reduce<const GRAD: bool>(cloud: &PointCloud, image: &Panorama, rotation: &Matrix3<f64>, translation: &Vector3<f64>) -> Partial {
    let partials: Vec<Partial> = cloud
        .positions()
        .par_chunks(CHUNK)
        .zip(cloud.colors().par_chunks(CHUNK))
        .map(|(p, c)| accumulate::<GRAD>(p, c, image, rotation, translation))
        .collect();
    partials.iter().fold(Partial::default(), |mut acc, p| {
        acc.distance += p.distance;
        acc.n_valid += p.n_valid;
        acc.grad += p.grad;
        acc.moment += p.moment;
        acc
    })
}

/// Mean per-point RGB distance at `pose`; `+inf` when no point projects.
pub fn sampling_loss(cloud: &PointCloud, image: &Panorama, pose: &Pose) -> f64 {
    let total = reduce::<false>(cloud, image, &pose.rotation, &pose.translation);
    mean_distance(&total)
}

fn mean_distance(total: &Partial) -> f64 {
    if total.n_valid == 0 {
        f64::INFINITY
    } else {
        total.distance / total.n_valid as f64
    }
}

/// [`sampling_loss`] and its analytic gradient with respect to `(omega, tau)`.
pub fn sampling_loss_grad(cloud: &PointCloud, image: &Panorama, param: &LocalPoseParam) -> LossGradient {
    sampling_loss_grad_with(cloud, image, param, RotationJacobian::Exact)
}

pub fn sampling_loss_grad_with(
    cloud: &PointCloud,
    image: &Panorama,
    param: &LocalPoseParam,
    jacobian: RotationJacobian,
) -> LossGradient {
    let increment = exp_so3(&param.omega);
    let rotation = increment * param.base_rotation;
    let total = reduce::<true>(cloud, image, &rotation, &param.tau);
    if total.n_valid == 0 {
        return LossGradient {
            loss: f64::INFINITY,
            d_omega: Vector3::zeros(),
            d_tau: Vector3::zeros(),
            n_valid: 0,
        };
    }
    let n = total.n_valid as f64;
    // x = exp(w) R0 (X - tau): dx/dtau = -R, and a right perturbation of w
    // moves x by -exp(w) [R0 (X - tau)]x J_r(w) dw.
    let j_r = match jacobian {
        RotationJacobian::Exact => right_jacobian_so3(&param.omega),
        RotationJacobian::SmallAngle => Matrix3::identity(),
    };
    LossGradient {
        loss: total.distance / n,
        d_omega: j_r.transpose() * (increment.transpose() * total.moment) / n,
        d_tau: -(rotation.transpose() * total.grad) / n,
        n_valid: total.n_valid,
    }
}

/// Image colors sampled at the projections of all valid points, in point order.
pub fn sampled_colors(cloud: &PointCloud, image: &Panorama, pose: &Pose) -> Vec<[f64; 3]> {
    let (h, w) = (image.height(), image.width());
    cloud
        .positions()
        .par_chunks(CHUNK)
        .flat_map_iter(|chunk| {
            chunk.iter().filter_map(move |p| {
                let [row, col] = project_point(&pose.to_camera(p), h, w)?;
                Some(sample(image, row, col).value)
            })
        })
        .collect()
}
