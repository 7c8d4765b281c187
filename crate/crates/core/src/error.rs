use alloc::string::String;

use crate::tensor::Shape;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: Shape, got: Shape },
    #[error("shapes {lhs} and {rhs} cannot be broadcast together")]
    Broadcast { lhs: Shape, rhs: Shape },
    #[error("plane size mismatch: {0}×{1} vs {2}×{3}")]
    PlaneMismatch(usize, usize, usize, usize),
    #[error("data length {got} does not match shape volume {expected}")]
    DataLength { expected: usize, got: usize },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("non-finite loss component `{0}`")]
    NonFiniteLoss(&'static str),
    #[error("empty input to {0}")]
    Empty(&'static str),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("crop {crop}×{crop} does not fit a {h}×{w} image")]
    CropTooLarge { crop: usize, h: usize, w: usize },
    #[error("NaN metric value for method {method}, metric {metric}")]
    NanMetric { method: usize, metric: usize },
    #[error("ranking needs at least {0}")]
    RankInput(&'static str),
    #[error("unknown parameter `{0}`")]
    UnknownParam(String),
}

pub type Result<T, E = Error> = core::result::Result<T, E>;
