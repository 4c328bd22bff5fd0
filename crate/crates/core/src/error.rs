use thiserror::Error;

/// Errors raised by the library's validating constructors and entry points.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid point cloud: {0}")]
    InvalidCloud(String),
    #[error("invalid panorama: {0}")]
    InvalidPanorama(String),
    #[error("invalid pose: {0}")]
    InvalidPose(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("scene would contain {points} points (limit {limit})")]
    SceneTooLarge { points: usize, limit: usize },
    #[error("empty batch")]
    EmptyBatch,
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
