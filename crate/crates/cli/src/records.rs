//! JSON records written and read by the CLI.

use std::path::Path;

use nalgebra::{Matrix3, Rotation3, UnitQuaternion, Vector3};
use omniloc::pipeline::Timings;
use omniloc::render::{RigidAdjustment, SceneDescriptor};
use omniloc::{LocalizationResult, LocalizerConfig, Pose};
use serde::{de::DeserializeOwned, Deserialize, Serialize};

use crate::CliError;

/// A pose written both ways: unit quaternion `[w, x, y, z]` (with `w >= 0`)
/// and the row-major rotation matrix. `to_pose` reads the matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseRecord {
    pub quaternion_wxyz: [f64; 4],
    pub rotation_matrix: [[f64; 3]; 3],
    pub translation: [f64; 3],
}

/// Largest allowed quaternion norm defect and matrix/quaternion mismatch.
pub const RECORD_TOLERANCE: f64 = 1e-9;

impl PoseRecord {
    pub fn from_pose(pose: &Pose) -> Self {
        let q = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix(&pose.rotation));
        let q = if q.w < 0.0 { -q.into_inner() } else { q.into_inner() };
        let m = &pose.rotation;
        Self {
            quaternion_wxyz: [q.w, q.i, q.j, q.k],
            rotation_matrix: std::array::from_fn(|r| std::array::from_fn(|c| m[(r, c)])),
            translation: [pose.translation.x, pose.translation.y, pose.translation.z],
        }
    }

    pub fn rotation(&self) -> Matrix3<f64> {
        Matrix3::from_fn(|r, c| self.rotation_matrix[r][c])
    }

    /// The quaternion as a rotation matrix, without renormalizing.
    pub fn quaternion_rotation(&self) -> Matrix3<f64> {
        let [w, x, y, z] = self.quaternion_wxyz;
        omniloc::geometry::quaternion_to_matrix(w, x, y, z)
    }

    /// Checks the record's internal consistency and converts it.
    pub fn to_pose(&self) -> Result<Pose, CliError> {
        let norm = self.quaternion_wxyz.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !((norm - 1.0).abs() <= RECORD_TOLERANCE) {
            return Err(CliError::Input(format!("quaternion norm {norm} is not 1")));
        }
        let gap = (self.quaternion_rotation() - self.rotation()).amax();
        if !(gap <= RECORD_TOLERANCE) {
            return Err(CliError::Input(format!("quaternion and matrix disagree by {gap:e}")));
        }
        Pose::new(self.rotation(), Vector3::from(self.translation)).map_err(|e| CliError::Input(e.to_string()))
    }
}

/// One refinement run of a localization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateRecord {
    pub start: PoseRecord,
    /// Initialization loss of the start (after filtering).
    pub initial_loss: f64,
    /// Histogram score when two-stage selection produced the start.
    pub histogram_score: Option<f64>,
    /// Loss before the first step and after every step; non-finite values
    /// are written as `null`.
    pub loss_history: Vec<f64>,
    pub final_loss: f64,
}

/// Output of `omniloc localize`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultFile {
    pub pose: PoseRecord,
    pub final_loss: f64,
    pub failed: bool,
    pub best_index: usize,
    pub candidate_count: usize,
    pub candidates: Vec<CandidateRecord>,
    pub config: LocalizerConfig,
    pub seed: u64,
    /// Only present when requested, so that repeated runs stay byte-identical.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timings: Option<Timings>,
}

impl ResultFile {
    pub fn new(result: &LocalizationResult, config: &LocalizerConfig, with_timings: bool) -> Self {
        let candidates = result
            .traces
            .iter()
            .enumerate()
            .map(|(i, trace)| CandidateRecord {
                start: PoseRecord::from_pose(&result.starts.poses[i]),
                initial_loss: result.starts.losses[i],
                histogram_score: result.starts.scores.as_ref().map(|s| s[i]),
                loss_history: trace.loss_history.clone(),
                final_loss: trace.final_loss,
            })
            .collect();
        Self {
            pose: PoseRecord::from_pose(&result.best_pose),
            final_loss: result.best_loss,
            failed: result.failed,
            best_index: result.best_index,
            candidate_count: result.candidate_count(),
            candidates,
            config: config.clone(),
            seed: config.seed,
            timings: with_timings.then_some(result.timings),
        }
    }
}

/// Subset of a [`ResultFile`] needed for evaluation; tolerant of `null` losses.
#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct ResultPose {
    pub pose: PoseRecord,
}

/// Ground truth written by `omniloc synth`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleFile {
    pub pose: PoseRecord,
    /// Bounding box of the accompanying cloud.
    pub bbox_min: [f64; 3],
    pub bbox_max: [f64; 3],
}

impl OracleFile {
    /// Whether the camera center lies inside the cloud's bounding box.
    pub fn inside_bbox(&self) -> bool {
        (0..3).all(|k| self.pose.translation[k] >= self.bbox_min[k] && self.pose.translation[k] <= self.bbox_max[k])
    }
}

/// Generation record written next to a synthetic scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DescriptorFile {
    pub scene: SceneDescriptor,
    /// Rigid change applied to the cloud and oracle after generation.
    pub augmentation: Option<RigidAdjustment>,
}

pub fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("records serialize");
    s.push('\n');
    s
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    std::fs::write(path, to_json(value)).map_err(|e| CliError::Output(format!("{}: {e}", path.display())))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}
