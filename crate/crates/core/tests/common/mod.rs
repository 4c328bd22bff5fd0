#![allow(dead_code)]

use nalgebra::Vector3;
use omniloc::geometry::exp_so3;
use omniloc::render::{generate_scene, SceneParams, SyntheticScene};
use omniloc::Pose;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Default room: 4 x 3 x 2.5 m, 400 points/m², 128 x 256 panorama.
pub fn scene(seed: u64) -> SyntheticScene {
    scene_with(seed, 400.0, 128)
}

/// Room at `density` points/m² with an `height x 2 height` panorama.
pub fn scene_with(seed: u64, density: f64, height: usize) -> SyntheticScene {
    generate_scene(&SceneParams {
        seed,
        density,
        height,
        width: 2 * height,
        ..SceneParams::default()
    })
    .unwrap()
}

pub fn random_unit(rng: &mut impl Rng) -> Vector3<f64> {
    loop {
        let v = Vector3::from_fn(|_, _| rng.gen_range(-1.0..1.0));
        let n = v.norm();
        if n > 0.1 && n <= 1.0 {
            return v / n;
        }
    }
}

/// `pose` moved by exactly `meters` and turned by exactly `degrees`, in
/// directions drawn from `seed`.
pub fn perturbed(pose: &Pose, seed: u64, meters: f64, degrees: f64) -> Pose {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dir = random_unit(&mut rng);
    let axis = random_unit(&mut rng);
    Pose::new(
        exp_so3(&(axis * degrees.to_radians())) * pose.rotation,
        pose.translation + dir * meters,
    )
    .unwrap()
}
