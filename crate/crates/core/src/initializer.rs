//! Candidate pose grid and the two filtering stages that pick refinement
//! starting points: lowest sampling loss first, then best color-histogram
//! overlap between the sampled image colors and the cloud colors.

use nalgebra::Vector3;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{sample_rotations, sample_translations, Panorama, PointCloud, Pose};
use crate::sampler::{sampled_colors, sampling_loss};

/// Bins per color channel.
pub const HISTOGRAM_BINS: usize = 8;
const BIN_COUNT: usize = HISTOGRAM_BINS * HISTOGRAM_BINS * HISTOGRAM_BINS;

/// Ranked candidate poses with their sampling losses and, after the second
/// stage, histogram intersection scores.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateSet {
    pub poses: Vec<Pose>,
    pub losses: Vec<f64>,
    pub scores: Option<Vec<f64>>,
}

impl CandidateSet {
    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }
}

/// Joint 8x8x8 RGB histogram, L1-normalized (all zeros for no input).
#[derive(Debug, Clone, PartialEq)]
pub struct ColorHistogram {
    bins: Vec<f64>,
}

impl ColorHistogram {
    pub fn from_bins(bins: Vec<f64>) -> Result<Self> {
        if bins.len() != BIN_COUNT {
            return Err(Error::InvalidArgument(format!("expected {BIN_COUNT} bins, got {}", bins.len())));
        }
        Ok(Self { bins })
    }

    pub fn bins(&self) -> &[f64] {
        &self.bins
    }

    pub fn bin_index(color: &[f64; 3]) -> usize {
        let b = |v: f64| ((v * HISTOGRAM_BINS as f64) as usize).min(HISTOGRAM_BINS - 1);
        (b(color[0]) * HISTOGRAM_BINS + b(color[1])) * HISTOGRAM_BINS + b(color[2])
    }

    pub fn mass(&self) -> f64 {
        self.bins.iter().sum()
    }
}

pub fn histogram<'a>(colors: impl IntoIterator<Item = &'a [f64; 3]>) -> ColorHistogram {
    let mut counts = vec![0u64; BIN_COUNT];
    let mut total = 0u64;
    for c in colors {
        counts[ColorHistogram::bin_index(c)] += 1;
        total += 1;
    }
    let bins = if total == 0 {
        vec![0.0; BIN_COUNT]
    } else {
        counts.iter().map(|&k| k as f64 / total as f64).collect()
    };
    ColorHistogram { bins }
}

pub fn cloud_histogram(cloud: &PointCloud) -> ColorHistogram {
    let colors: Vec<[f64; 3]> = cloud.colors().iter().map(|c| [c.x, c.y, c.z]).collect();
    histogram(&colors)
}

/// Sum over bins of the smaller mass.
pub fn histogram_intersection(a: &ColorHistogram, b: &ColorHistogram) -> f64 {
    a.bins.iter().zip(&b.bins).map(|(x, y)| x.min(*y)).sum()
}

/// Translation grid over the cloud's bounding box crossed with the rotation
/// samples, translation-major.
pub fn generate_candidates(cloud: &PointCloud, n_t: usize, n_r: usize, gravity_known: bool, seed: u64) -> Result<Vec<Pose>> {
    if n_r == 0 {
        return Err(Error::InvalidArgument("rotation count must be positive".into()));
    }
    let (lo, hi) = cloud.bounding_box();
    let translations = sample_translations(&lo, &hi, n_t)?;
    let rotations = sample_rotations(n_r, gravity_known, seed);
    Ok(translations
        .iter()
        .flat_map(|t| {
            rotations.iter().map(move |r| Pose {
                rotation: *r,
                translation: *t,
            })
        })
        .collect())
}

/// Indices `0..n` ordered by ascending key, stable (infinite keys last).
fn rank_ascending(keys: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..keys.len()).collect();
    order.sort_by(|&a, &b| keys[a].total_cmp(&keys[b]));
    order
}

/// Evaluates the sampling loss at every candidate and keeps the `k1` lowest.
pub fn filter_by_loss(cloud: &PointCloud, image: &Panorama, candidates: &[Pose], k1: usize) -> Result<CandidateSet> {
    if k1 == 0 {
        return Err(Error::InvalidArgument("k1 must be positive".into()));
    }
    let losses: Vec<f64> = candidates
        .par_iter()
        .map(|pose| sampling_loss(cloud, image, pose))
        .collect();
    let keep = rank_ascending(&losses).into_iter().take(k1);
    let (poses, losses) = keep.map(|i| (candidates[i], losses[i])).unzip();
    Ok(CandidateSet {
        poses,
        losses,
        scores: None,
    })
}

/// Re-ranks a loss-ranked set by histogram intersection between the image
/// colors sampled at each pose and the cloud colors, keeping the `k2` best.
/// Ties keep the loss order.
pub fn filter_by_histogram(cloud: &PointCloud, image: &Panorama, set: &CandidateSet, k2: usize) -> Result<CandidateSet> {
    if k2 == 0 {
        return Err(Error::InvalidArgument("k2 must be positive".into()));
    }
    let reference = cloud_histogram(cloud);
    let scores: Vec<f64> = set
        .poses
        .par_iter()
        .map(|pose| histogram_intersection(&histogram(&sampled_colors(cloud, image, pose)), &reference))
        .collect();
    let mut order: Vec<usize> = (0..set.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    order.truncate(k2);
    Ok(CandidateSet {
        poses: order.iter().map(|&i| set.poses[i]).collect(),
        losses: order.iter().map(|&i| set.losses[i]).collect(),
        scores: Some(order.iter().map(|&i| scores[i]).collect()),
    })
}

/// How refinement starting points are chosen from the candidate grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Selection {
    /// `k1` lowest losses, then `k2` highest histogram overlaps.
    #[default]
    TwoStage,
    /// `k2` lowest losses.
    LossOnly,
}

/// Work counters of one initialization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct InitStats {
    pub candidate_count: usize,
    pub loss_evaluations: usize,
    pub histogram_evaluations: usize,
}

/// Full initialization: grid, loss filter, optional histogram filter.
#[allow(clippy::too_many_arguments)]
pub fn initialize(
    cloud: &PointCloud,
    image: &Panorama,
    n_t: usize,
    n_r: usize,
    k1: usize,
    k2: usize,
    gravity_known: bool,
    seed: u64,
    selection: Selection,
) -> Result<(CandidateSet, InitStats)> {
    let candidates = generate_candidates(cloud, n_t, n_r, gravity_known, seed)?;
    let mut stats = InitStats {
        candidate_count: candidates.len(),
        loss_evaluations: candidates.len(),
        histogram_evaluations: 0,
    };
    let set = match selection {
        Selection::TwoStage => {
            let by_loss = filter_by_loss(cloud, image, &candidates, k1)?;
            stats.histogram_evaluations = by_loss.len();
            filter_by_histogram(cloud, image, &by_loss, k2)?
        }
        Selection::LossOnly => filter_by_loss(cloud, image, &candidates, k2)?,
    };
    Ok((set, stats))
}

/// Center of the cloud's bounding box.
pub fn bbox_center(cloud: &PointCloud) -> Vector3<f64> {
    let (lo, hi) = cloud.bounding_box();
    (lo + hi) / 2.0
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn hist_from(pairs: &[(usize, f64)]) -> ColorHistogram {
        let mut bins = vec![0.0; BIN_COUNT];
        for &(i, m) in pairs {
            bins[i] = m;
        }
        ColorHistogram::from_bins(bins).unwrap()
    }

    #[test]
    fn histogram_examples() {
        let black = histogram(&vec![[0.0; 3]; 10]);
        assert_eq!(black.bins()[0], 1.0);
        assert_eq!(black.mass(), 1.0);

        let white = histogram(&[[1.0, 1.0, 1.0]]);
        assert_eq!(white.bins()[BIN_COUNT - 1], 1.0);

        let empty = histogram(&[]);
        assert_eq!(empty.mass(), 0.0);
    }

    #[test]
    fn intersection_examples() {
        let a = hist_from(&[(0, 0.5), (1, 0.5)]);
        let b = hist_from(&[(0, 0.25), (1, 0.75)]);
        assert_abs_diff_eq!(histogram_intersection(&a, &b), 0.75, epsilon = 1e-15);
        assert_eq!(histogram_intersection(&a, &a), 1.0);
        let c = hist_from(&[(7, 1.0)]);
        assert_eq!(histogram_intersection(&a, &c), 0.0);
    }

    #[test]
    fn single_candidate_at_center() {
        let pos = vec![Vector3::new(0.0, 0.0, 0.0), Vector3::new(2.0, 4.0, 6.0)];
        let cloud = PointCloud::new(pos, vec![Vector3::zeros(); 2]).unwrap();
        let c = generate_candidates(&cloud, 1, 1, true, 0).unwrap();
        assert_eq!(c.len(), 1);
        assert_eq!(c[0].translation, Vector3::new(1.0, 2.0, 3.0));
        assert_eq!(c[0].rotation, nalgebra::Matrix3::identity());
        assert_eq!(bbox_center(&cloud), Vector3::new(1.0, 2.0, 3.0));
    }

    #[test]
    fn ties_keep_input_order() {
        let cloud = PointCloud::new(vec![Vector3::new(1.0, 0.0, 0.0)], vec![Vector3::repeat(0.5)]).unwrap();
        let img = Panorama::constant(4, 8, [0.5; 3]).unwrap();
        let poses: Vec<Pose> = (0..5)
            .map(|k| Pose {
                rotation: crate::geometry::rot_z(k as f64),
                translation: Vector3::zeros(),
            })
            .collect();
        let set = filter_by_loss(&cloud, &img, &poses, 10).unwrap();
        assert_eq!(set.poses, poses);
        assert!(set.losses.iter().all(|&l| l == 0.0));

        let hist = filter_by_histogram(&cloud, &img, &set, 5).unwrap();
        assert_eq!(hist.poses, poses);
        assert_eq!(hist.scores.unwrap(), vec![1.0; 5]);
    }
}
