//! Camera relocalization of a single equirectangular 360° panorama against a
//! colored point cloud.
//!
//! The pose is found by minimizing a point-centric *sampling loss*: every
//! cloud point is projected into the panorama, the image is bilinearly
//! sampled there, and the sampled color is compared with the point's own
//! color. A coarse grid of candidate poses is filtered by loss and by color
//! histogram overlap, and the survivors are refined with Adam.
//!
//! ```
//! use nalgebra::Vector3;
//! use omniloc::render::{generate_scene, SceneParams};
//! use omniloc::sampler::sampling_loss;
//! use omniloc::Pose;
//!
//! let scene = generate_scene(&SceneParams { density: 200.0, ..SceneParams::default() }).unwrap();
//! let truth = scene.oracle_pose;
//! let moved = Pose::new(truth.rotation, truth.translation + Vector3::new(0.3, 0.0, 0.0)).unwrap();
//! let at_truth = sampling_loss(&scene.cloud, &scene.panorama, &truth);
//! assert!(at_truth < sampling_loss(&scene.cloud, &scene.panorama, &moved));
//! ```
//!
//! Module map:
//!
//! * [`geometry`]: clouds, panoramas, poses, projection, SO(3) utilities,
//!   candidate rotation/translation sampling.
//! * [`sampler`]: bilinear sampling, sampling loss and its gradient.
//! * [`optimizer`]: Adam, plateau decay, refinement loop.
//! * [`initializer`]: candidate grid, loss and histogram filters.
//! * [`pipeline`]: full localization, error metrics, loss surfaces.
//! * [`render`]: z-buffered splatting, photometric loss, synthetic rooms.

pub mod error;
pub mod geometry;
pub mod initializer;
pub mod optimizer;
pub mod pipeline;
pub mod render;
pub mod sampler;

pub use error::{Error, Result};
pub use geometry::{LocalPoseParam, Panorama, PointCloud, Pose};
pub use pipeline::{localize, LocalizationResult, LocalizerConfig};

// Compile and run the guide's code listings as doctests.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/projection.md")]
    mod projection {}
    #[doc = include_str!("../../../book/src/sampling-loss.md")]
    mod sampling_loss {}
    #[doc = include_str!("../../../book/src/optimization.md")]
    mod optimization {}
    #[doc = include_str!("../../../book/src/initialization.md")]
    mod initialization {}
    #[doc = include_str!("../../../book/src/localization.md")]
    mod localization {}
    #[doc = include_str!("../../../book/src/synthetic-scenes.md")]
    mod synthetic_scenes {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
