//! Wall-clock measurements of the sampler, a refinement step and the
//! initialization stage at growing cloud sizes.

use std::time::Instant;

use nalgebra::Vector3;
use omniloc::geometry::LocalPoseParam;
use omniloc::initializer::{initialize, Selection};
use omniloc::optimizer::{AdamState, DEFAULT_STEP_SIZE};
use omniloc::sampler::{sampling_loss, sampling_loss_grad};
use omniloc::{Panorama, PointCloud, Pose};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

/// Reference GPU throughput in points per second, shown in the table footer.
pub const REFERENCE_POINTS_PER_S: f64 = 3e8;

/// Uniform random points in a 4 x 3 x 2.5 m box with random colors, a smooth
/// random panorama, and a pose at the box center.
pub fn bench_problem(points: usize, seed: u64) -> (PointCloud, Panorama, Pose) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let extent = Vector3::new(4.0, 3.0, 2.5);
    let positions = (0..points)
        .map(|_| Vector3::from_fn(|k, _| rng.gen_range(0.0..extent[k])))
        .collect();
    let colors = (0..points).map(|_| Vector3::from_fn(|_, _| rng.gen())).collect();
    let cloud = PointCloud::new(positions, colors).expect("finite points, colors in range");
    let phase: [f64; 3] = std::array::from_fn(|_| rng.gen_range(0.0..std::f64::consts::TAU));
    let pano = Panorama::from_fn(256, 512, |r, c| {
        let (u, v) = (r as f64 / 40.0, c as f64 / 55.0);
        std::array::from_fn(|k| 0.5 + 0.4 * (u + phase[k]).sin() * (v * (k + 1) as f64 + phase[k]).cos())
    })
    .expect("values in range");
    let pose = Pose::new(nalgebra::Matrix3::identity(), extent / 2.0).expect("identity is a rotation");
    (cloud, pano, pose)
}

/// Median wall-clock seconds of `repeat` calls (at least one).
pub fn median_seconds(repeat: usize, mut f: impl FnMut()) -> f64 {
    let mut times: Vec<f64> = (0..repeat.max(1))
        .map(|_| {
            let clock = Instant::now();
            f();
            clock.elapsed().as_secs_f64()
        })
        .collect();
    times.sort_by(f64::total_cmp);
    let n = times.len();
    if n % 2 == 1 {
        times[n / 2]
    } else {
        (times[n / 2 - 1] + times[n / 2]) / 2.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchRow {
    pub points: usize,
    pub loss_s: f64,
    pub grad_s: f64,
    /// One gradient evaluation plus one Adam step.
    pub refine_iter_s: f64,
    pub init_s: Option<f64>,
    /// Sampling-loss throughput.
    pub points_per_s: f64,
}

/// Candidate grid used for the initialization timing.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InitGrid {
    pub n_t: usize,
    pub n_r: usize,
}

pub fn measure(points: usize, repeat: usize, init: Option<InitGrid>) -> BenchRow {
    let (cloud, pano, pose) = bench_problem(points, 0);
    let loss_s = median_seconds(repeat, || {
        std::hint::black_box(sampling_loss(&cloud, &pano, &pose));
    });
    let param = LocalPoseParam::at(&pose);
    let grad_s = median_seconds(repeat, || {
        std::hint::black_box(sampling_loss_grad(&cloud, &pano, &param));
    });
    let refine_iter_s = median_seconds(repeat, || {
        let mut adam = AdamState::new(DEFAULT_STEP_SIZE);
        let mut p = param.to_vector();
        let g = sampling_loss_grad(&cloud, &pano, &param);
        adam.step(&g.as_array(), &mut p);
        std::hint::black_box(p);
    });
    let init_s = init.map(|grid| {
        let k1 = 50.min(grid.n_t * grid.n_r);
        median_seconds(repeat, || {
            let out = initialize(&cloud, &pano, grid.n_t, grid.n_r, k1, 6.min(k1), false, 0, Selection::TwoStage);
            std::hint::black_box(out.expect("valid grid"));
        })
    });
    BenchRow {
        points,
        loss_s,
        grad_s,
        refine_iter_s,
        init_s,
        points_per_s: points as f64 / loss_s,
    }
}

/// Plain-text table with a ratio column against the previous row.
pub fn format_table(rows: &[BenchRow]) -> String {
    let mut out = String::from("points      loss_ms    grad_ms    iter_ms    init_s     points/s     loss_ratio\n");
    for (i, r) in rows.iter().enumerate() {
        let init = r.init_s.map_or("-".to_string(), |s| format!("{s:.3}"));
        let ratio = if i == 0 {
            "-".to_string()
        } else {
            format!("{:.2}", r.loss_s / rows[i - 1].loss_s)
        };
        out.push_str(&format!(
            "{:<11} {:<10.3} {:<10.3} {:<10.3} {:<10} {:<12.3e} {}\n",
            r.points,
            r.loss_s * 1e3,
            r.grad_s * 1e3,
            r.refine_iter_s * 1e3,
            init,
            r.points_per_s,
            ratio
        ));
    }
    if let Some(best) = rows.iter().map(|r| r.points_per_s).max_by(f64::total_cmp) {
        out.push_str(&format!(
            "peak {best:.3e} points/s ({:.2}% of the {REFERENCE_POINTS_PER_S:.0e} points/s GPU reference)\n",
            100.0 * best / REFERENCE_POINTS_PER_S
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn median_of_even_and_odd_counts() {
        let mut calls = 0;
        let t = median_seconds(3, || calls += 1);
        assert_eq!(calls, 3);
        assert!(t >= 0.0);
    }

    #[test]
    fn table_has_throughput_column() {
        let rows = vec![measure(2_000, 1, None), measure(4_000, 1, Some(InitGrid { n_t: 2, n_r: 2 }))];
        let table = format_table(&rows);
        assert!(table.lines().next().unwrap().contains("points/s"));
        assert_eq!(table.lines().count(), 4);
        assert!(rows[1].init_s.is_some());
    }
}
