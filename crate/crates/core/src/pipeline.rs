//! End-to-end localization: initialization, parallel refinements, final
//! selection, plus pose-error metrics and loss-surface slices.

use std::time::Instant;

use nalgebra::{Matrix3, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{rotation_angle, sample_rotations, sample_translations, Panorama, PointCloud, Pose};
use crate::initializer::{initialize, CandidateSet, InitStats, Selection};
use crate::optimizer::{refine, RefineOptions, RefinementTrace, DEFAULT_DECAY_FACTOR, DEFAULT_PATIENCE, DEFAULT_STEP_SIZE};
use crate::sampler::sampling_loss;

/// Localization hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalizerConfig {
    pub n_t: usize,
    pub n_r: usize,
    pub n_iter: usize,
    pub k1: usize,
    pub k2: usize,
    pub alpha0: f64,
    pub gravity_known: bool,
    pub seed: u64,
    pub decay_factor: f64,
    pub patience: usize,
    pub selection: Selection,
}

impl Default for LocalizerConfig {
    fn default() -> Self {
        Self {
            n_t: 50,
            n_r: 32,
            n_iter: 100,
            k1: 50,
            k2: 6,
            alpha0: DEFAULT_STEP_SIZE,
            gravity_known: false,
            seed: 0,
            decay_factor: DEFAULT_DECAY_FACTOR,
            patience: DEFAULT_PATIENCE,
            selection: Selection::TwoStage,
        }
    }
}

impl LocalizerConfig {
    /// Defaults for a query whose vertical axis matches the cloud's.
    pub fn gravity_known() -> Self {
        Self {
            n_r: 8,
            gravity_known: true,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("n_t", self.n_t),
            ("n_r", self.n_r),
            ("n_iter", self.n_iter),
            ("k1", self.k1),
            ("k2", self.k2),
            ("patience", self.patience),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::InvalidConfig(format!("{name} must be positive")));
        }
        if self.k2 > self.k1 {
            return Err(Error::InvalidConfig(format!("k2 ({}) exceeds k1 ({})", self.k2, self.k1)));
        }
        if self.k1 > self.n_t * self.n_r {
            return Err(Error::InvalidConfig(format!(
                "k1 ({}) exceeds the candidate grid ({} x {})",
                self.k1, self.n_t, self.n_r
            )));
        }
        if !(self.alpha0 > 0.0 && self.alpha0.is_finite()) {
            return Err(Error::InvalidConfig("alpha0 must be positive".into()));
        }
        if !(self.decay_factor > 0.0 && self.decay_factor <= 1.0) {
            return Err(Error::InvalidConfig("decay_factor must lie in (0, 1]".into()));
        }
        Ok(())
    }

    fn refine_options(&self) -> RefineOptions {
        RefineOptions {
            n_iter: self.n_iter,
            alpha0: self.alpha0,
            gravity_known: self.gravity_known,
            decay_factor: self.decay_factor,
            patience: self.patience,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Timings {
    pub initialization_s: f64,
    pub refinement_s: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocalizationResult {
    pub best_pose: Pose,
    pub best_loss: f64,
    /// Index into `traces` of the selected run.
    pub best_index: usize,
    pub traces: Vec<RefinementTrace>,
    pub starts: CandidateSet,
    pub stats: InitStats,
    pub timings: Timings,
    /// Set when every refinement ended without a single projecting point.
    pub failed: bool,
}

impl LocalizationResult {
    pub fn candidate_count(&self) -> usize {
        self.stats.candidate_count
    }
}

/// Recovers the camera pose of `image` within `cloud`.
pub fn localize(cloud: &PointCloud, image: &Panorama, config: &LocalizerConfig) -> Result<LocalizationResult> {
    config.validate()?;
    let (lo, hi) = cloud.bounding_box();
    if (hi - lo).max() < 1e-6 {
        return Err(Error::InvalidCloud("cloud occupies a single point".into()));
    }

    let clock = Instant::now();
    let (starts, stats) = initialize(
        cloud,
        image,
        config.n_t,
        config.n_r,
        config.k1,
        config.k2,
        config.gravity_known,
        config.seed,
        config.selection,
    )?;
    let initialization_s = clock.elapsed().as_secs_f64();

    let clock = Instant::now();
    let options = config.refine_options();
    let traces = starts
        .poses
        .par_iter()
        .map(|start| refine(cloud, image, start, &options))
        .collect::<Result<Vec<_>>>()?;
    let refinement_s = clock.elapsed().as_secs_f64();

    let mut best_index = 0;
    for (i, t) in traces.iter().enumerate() {
        if t.final_loss < traces[best_index].final_loss {
            best_index = i;
        }
    }
    let failed = !traces[best_index].final_loss.is_finite();
    let best_pose = if failed {
        starts.poses[0]
    } else {
        traces[best_index].final_pose()
    };
    Ok(LocalizationResult {
        best_pose,
        best_loss: traces[best_index].final_loss,
        best_index,
        traces,
        starts,
        stats,
        timings: Timings {
            initialization_s,
            refinement_s,
        },
        failed,
    })
}

/// Translation error in meters and rotation error in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseError {
    pub t_error: f64,
    pub r_error: f64,
}

/// Success thresholds: strictly below 0.1 m and 5 degrees.
pub const T_THRESHOLD_M: f64 = 0.1;
pub const R_THRESHOLD_DEG: f64 = 5.0;

impl PoseError {
    pub fn is_success(&self) -> bool {
        self.t_error < T_THRESHOLD_M && self.r_error < R_THRESHOLD_DEG
    }
}

pub fn pose_error(estimate: &Pose, truth: &Pose) -> PoseError {
    PoseError {
        t_error: (estimate.translation - truth.translation).norm(),
        r_error: rotation_angle(&(estimate.rotation.transpose() * truth.rotation)).to_degrees(),
    }
}

/// First, second and third quartiles.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quartiles {
    pub q1: f64,
    pub q2: f64,
    pub q3: f64,
}

/// Quantile with linear interpolation between order statistics
/// (position `q * (n - 1)` in the sorted sample).
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn quartiles(values: &[f64]) -> Result<Quartiles> {
    if values.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(Quartiles {
        q1: quantile(&sorted, 0.25),
        q2: quantile(&sorted, 0.5),
        q3: quantile(&sorted, 0.75),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BatchSummary {
    pub count: usize,
    pub t_error: Quartiles,
    pub r_error: Quartiles,
    pub accuracy: f64,
}

pub fn evaluate_errors(errors: &[PoseError]) -> Result<BatchSummary> {
    if errors.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let t: Vec<f64> = errors.iter().map(|e| e.t_error).collect();
    let r: Vec<f64> = errors.iter().map(|e| e.r_error).collect();
    let hits = errors.iter().filter(|e| e.is_success()).count();
    Ok(BatchSummary {
        count: errors.len(),
        t_error: quartiles(&t)?,
        r_error: quartiles(&r)?,
        accuracy: hits as f64 / errors.len() as f64,
    })
}

/// Summarizes `(estimate, truth)` pairs.
pub fn evaluate_batch(results: &[(Pose, Pose)]) -> Result<BatchSummary> {
    let errors: Vec<PoseError> = results.iter().map(|(e, t)| pose_error(e, t)).collect();
    evaluate_errors(&errors)
}

/// Minimum sampling loss over a rotation set at each node of a horizontal
/// grid at height `z`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossSurface {
    pub z: f64,
    /// Node x coordinates (cell centers), one per column.
    pub xs: Vec<f64>,
    /// Node y coordinates, one per row.
    pub ys: Vec<f64>,
    /// `values[j][i]` is the minimum loss at `(xs[i], ys[j])`.
    pub values: Vec<Vec<f64>>,
}

impl LossSurface {
    /// `(row, col)` of the smallest value, first in row-major order on ties.
    pub fn argmin(&self) -> (usize, usize) {
        let mut best = (0, 0);
        for (j, row) in self.values.iter().enumerate() {
            for (i, v) in row.iter().enumerate() {
                if *v < self.values[best.0][best.1] {
                    best = (j, i);
                }
            }
        }
        best
    }

    /// Grid cell containing `(x, y)`.
    pub fn cell_of(&self, x: f64, y: f64) -> (usize, usize) {
        let nearest = |nodes: &[f64], v: f64| {
            (0..nodes.len())
                .min_by(|&a, &b| (nodes[a] - v).abs().total_cmp(&(nodes[b] - v).abs()))
                .unwrap_or(0)
        };
        (nearest(&self.ys, y), nearest(&self.xs, x))
    }
}

/// Yaw count of the gravity-known loss surface (10° steps).
pub const SURFACE_YAWS: usize = 36;

/// Loss surface over a default rotation set: `SURFACE_YAWS` yaws when gravity
/// is known, otherwise the default localizer's random rotations.
pub fn dump_loss_surface(cloud: &PointCloud, image: &Panorama, z: f64, grid_res: usize, gravity_known: bool) -> Result<LossSurface> {
    let rotations = if gravity_known {
        sample_rotations(SURFACE_YAWS, true, 0)
    } else {
        let config = LocalizerConfig::default();
        sample_rotations(config.n_r, false, config.seed)
    };
    dump_loss_surface_with(cloud, image, z, grid_res, &rotations)
}

pub fn dump_loss_surface_with(
    cloud: &PointCloud,
    image: &Panorama,
    z: f64,
    grid_res: usize,
    rotations: &[Matrix3<f64>],
) -> Result<LossSurface> {
    if grid_res < 2 {
        return Err(Error::InvalidArgument("grid resolution must be at least 2".into()));
    }
    if rotations.is_empty() {
        return Err(Error::InvalidArgument("rotation set is empty".into()));
    }
    let (lo, hi) = cloud.bounding_box();
    let nodes = |axis: usize| -> Vec<f64> {
        let lo3 = Vector3::new(lo[axis], 0.0, 0.0);
        let hi3 = Vector3::new(hi[axis], 0.0, 0.0);
        // One free axis, so the grid has exactly grid_res nodes.
        sample_translations(&lo3, &hi3, grid_res)
            .map(|v| v.iter().map(|p| p.x).collect())
            .unwrap_or_default()
    };
    let (xs, ys) = (nodes(0), nodes(1));
    let cells: Vec<(usize, usize)> = (0..ys.len()).flat_map(|j| (0..xs.len()).map(move |i| (j, i))).collect();
    let flat: Vec<f64> = cells
        .par_iter()
        .map(|&(j, i)| {
            let t = Vector3::new(xs[i], ys[j], z);
            rotations
                .iter()
                .map(|r| {
                    sampling_loss(
                        cloud,
                        image,
                        &Pose {
                            rotation: *r,
                            translation: t,
                        },
                    )
                })
                .fold(f64::INFINITY, f64::min)
        })
        .collect();
    let values = flat.chunks(xs.len()).map(<[f64]>::to_vec).collect();
    Ok(LossSurface { z, xs, ys, values })
}
