//! Candidate generation, both filters, and the assembled pipeline.

mod common;

use nalgebra::{Matrix3, Vector3};
use omniloc::geometry::sample_rotations;
use omniloc::initializer::{
    filter_by_histogram, filter_by_loss, generate_candidates, histogram, initialize, CandidateSet, Selection,
    HISTOGRAM_BINS,
};
use omniloc::pipeline::dump_loss_surface;
use omniloc::{localize, LocalizerConfig, Panorama, PointCloud, Pose};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::scene;

fn with_oracle(s: &omniloc::render::SyntheticScene) -> Vec<Pose> {
    let mut candidates = generate_candidates(&s.cloud, 20, 8, true, 0).unwrap();
    candidates.push(s.oracle_pose);
    candidates
}

#[test]
fn injected_oracle_ranks_first() {
    for seed in 0..5 {
        let s = scene(seed);
        let set = filter_by_loss(&s.cloud, &s.panorama, &with_oracle(&s), 50).unwrap();
        assert_eq!(set.len(), 50);
        assert_eq!(set.poses[0], s.oracle_pose, "seed {seed}");
        assert!(set.losses.windows(2).all(|w| w[0] <= w[1]));
    }
}

#[test]
fn loss_filter_keeps_everything_when_asked() {
    let s = scene(1);
    let candidates = generate_candidates(&s.cloud, 4, 4, false, 3).unwrap();
    let set = filter_by_loss(&s.cloud, &s.panorama, &candidates, 1000).unwrap();
    assert_eq!(set.len(), candidates.len());
    assert!(set.losses.windows(2).all(|w| w[0] <= w[1]));
    assert!(set.poses.iter().all(|p| candidates.contains(p)));
}

#[test]
fn sentinel_candidates_rank_last() {
    let p = Vector3::new(1.0, 1.0, 1.0);
    let cloud = PointCloud::new(vec![p, p], vec![Vector3::new(0.5, 0.5, 0.5); 2]).unwrap();
    let image = Panorama::constant(8, 16, [0.2, 0.2, 0.2]).unwrap();
    let blind = Pose::new(Matrix3::identity(), p).unwrap();
    let seeing = Pose::new(Matrix3::identity(), Vector3::zeros()).unwrap();
    let set = filter_by_loss(&cloud, &image, &[blind, seeing, blind], 3).unwrap();
    assert_eq!(set.poses, vec![seeing, blind, blind]);
    assert!(set.losses[0].is_finite() && set.losses[1].is_infinite());
}

#[test]
fn histogram_filter_on_gray_keeps_loss_order() {
    let s = scene(2);
    let gray = [0.5, 0.5, 0.5];
    let cloud = PointCloud::new(s.cloud.positions().to_vec(), vec![Vector3::from(gray); s.cloud.len()]).unwrap();
    let image = Panorama::constant(64, 128, gray).unwrap();
    let candidates = generate_candidates(&cloud, 4, 4, true, 0).unwrap();
    let by_loss = filter_by_loss(&cloud, &image, &candidates, 10).unwrap();
    let by_hist = filter_by_histogram(&cloud, &image, &by_loss, 10).unwrap();
    assert_eq!(by_hist.poses, by_loss.poses);
    assert_eq!(by_hist.losses, by_loss.losses);
    assert!(by_hist.scores.unwrap().iter().all(|&v| (v - 1.0).abs() < 1e-12));
    let fewer = filter_by_histogram(&cloud, &image, &by_loss, 4).unwrap();
    assert_eq!(fewer.poses, by_loss.poses[..4]);
}

#[test]
fn oracle_survives_the_histogram_filter() {
    let mut survived = 0;
    for seed in 0..20 {
        let s = scene(seed);
        let by_loss = filter_by_loss(&s.cloud, &s.panorama, &with_oracle(&s), 50).unwrap();
        assert!(by_loss.poses.contains(&s.oracle_pose));
        let by_hist = filter_by_histogram(&s.cloud, &s.panorama, &by_loss, 6).unwrap();
        survived += usize::from(by_hist.poses.contains(&s.oracle_pose));
    }
    assert!(survived >= 19, "oracle kept in {survived}/20 rooms");
}

#[test]
fn uniform_colors_fill_every_bin() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let colors: Vec<[f64; 3]> = (0..1_000_000).map(|_| [rng.gen(), rng.gen(), rng.gen()]).collect();
    let h = histogram(colors.iter());
    let expected = 1.0 / HISTOGRAM_BINS.pow(3) as f64;
    for (i, &b) in h.bins().iter().enumerate() {
        assert!(b > expected / 3.0 && b < 3.0 * expected, "bin {i}: {b}");
    }
}

#[test]
fn random_rotations_are_uniform() {
    let rotations = sample_rotations(10_000, false, 17);
    for u in [Vector3::x(), Vector3::y(), Vector3::z(), Vector3::new(1.0, 1.0, 1.0).normalize()] {
        let mean = rotations.iter().map(|r| r * u).sum::<Vector3<f64>>() / rotations.len() as f64;
        assert!(mean.norm() < 0.05, "{u:?}: {mean:?}");
    }
}

#[test]
fn candidate_grid_examples() {
    let s = scene(0);
    let all = generate_candidates(&s.cloud, 50, 32, false, 0).unwrap();
    assert!(all.len() <= 1600 && all.len() >= 1600 * 3 / 4, "{}", all.len());

    let one = generate_candidates(&s.cloud, 1, 1, true, 0).unwrap();
    let (lo, hi) = s.cloud.bounding_box();
    assert_eq!(one.len(), 1);
    assert_eq!(one[0].rotation, Matrix3::identity());
    assert!((one[0].translation - (lo + hi) / 2.0).amax() < 1e-12);

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let cube = PointCloud::new(
        (0..200).map(|_| Vector3::from_fn(|_, _| rng.gen_range(-1.0..1.0))).collect(),
        vec![Vector3::zeros(); 200],
    )
    .unwrap();
    let (lo, hi) = cube.bounding_box();
    for c in generate_candidates(&cube, 27, 2, false, 1).unwrap() {
        assert!((0..3).all(|k| c.translation[k] > lo[k] && c.translation[k] < hi[k]));
    }
}

#[test]
fn initialization_counts() {
    let s = scene(3);
    for (n_t, n_r, k1, k2) in [(10, 8, 20, 5), (4, 2, 20, 10), (12, 4, 48, 60), (2, 2, 1, 1)] {
        let (set, stats) = initialize(&s.cloud, &s.panorama, n_t, n_r, k1, k2, true, 0, Selection::TwoStage).unwrap();
        let candidates = generate_candidates(&s.cloud, n_t, n_r, true, 0).unwrap().len();
        assert_eq!(stats.candidate_count, candidates);
        assert_eq!(stats.loss_evaluations, candidates);
        assert_eq!(stats.histogram_evaluations, k1.min(candidates));
        assert_eq!(set.len(), k2.min(k1.min(candidates)));
        assert!(set.scores.is_some());

        let (set, stats) = initialize(&s.cloud, &s.panorama, n_t, n_r, k1, k2, true, 0, Selection::LossOnly).unwrap();
        assert_eq!(stats.histogram_evaluations, 0);
        assert_eq!(set.len(), k2.min(candidates));
        assert!(set.scores.is_none());
    }
}

fn small_config() -> LocalizerConfig {
    LocalizerConfig {
        n_t: 12,
        n_r: 8,
        k1: 12,
        k2: 3,
        n_iter: 20,
        ..LocalizerConfig::default()
    }
}

fn in_pool<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> T {
    rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap().install(f)
}

#[test]
fn results_do_not_depend_on_thread_count() {
    let s = scene(4);
    let init = |threads| {
        in_pool(threads, || {
            initialize(&s.cloud, &s.panorama, 20, 8, 30, 6, false, 9, Selection::TwoStage).unwrap()
        })
    };
    let (a, b): ((CandidateSet, _), (CandidateSet, _)) = (init(1), init(4));
    assert_eq!(a, b);

    let run = |threads| in_pool(threads, || localize(&s.cloud, &s.panorama, &small_config()).unwrap());
    let (mut x, mut y) = (run(1), run(3));
    x.timings = Default::default();
    y.timings = Default::default();
    assert_eq!(x, y);
}

#[test]
fn best_loss_bounds_every_trace() {
    for seed in 0..3 {
        let s = scene(seed);
        let result = localize(&s.cloud, &s.panorama, &small_config()).unwrap();
        assert_eq!(result.traces.len(), 3);
        assert!(!result.failed);
        assert!(result.traces.iter().all(|t| result.best_loss <= t.final_loss));
        assert_eq!(result.best_loss, result.traces[result.best_index].final_loss);
        assert_eq!(result.best_pose, result.traces[result.best_index].final_pose());
    }
}

#[test]
fn invalid_configs_are_rejected() {
    let s = scene(0);
    for config in [
        LocalizerConfig { k2: 60, ..LocalizerConfig::default() },
        LocalizerConfig { n_iter: 0, ..LocalizerConfig::default() },
        LocalizerConfig { n_t: 1, n_r: 1, ..LocalizerConfig::default() },
    ] {
        assert!(localize(&s.cloud, &s.panorama, &config).is_err());
    }
}

#[test]
fn loss_surface_bottoms_out_at_the_oracle() {
    let mut hits = 0;
    for seed in 0..10 {
        let s = scene(seed);
        let t = s.oracle_pose.translation;
        let surface = dump_loss_surface(&s.cloud, &s.panorama, t.z, 8, true).unwrap();
        assert_eq!((surface.values.len(), surface.values[0].len()), (8, 8));
        hits += usize::from(surface.argmin() == surface.cell_of(t.x, t.y));
    }
    assert!(hits >= 8, "minimum at the oracle cell in {hits}/10 rooms");
}
