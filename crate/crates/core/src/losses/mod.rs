//! Scalar losses and their image-space gradients.

mod color;
pub mod sds;
pub mod sketch;

pub use color::{color_loss, linear_weight};
pub use sds::{
    mock_noise_provider, sds_grad, CommandNoiseProvider, Conditioning, MockNoiseProvider, NoiseProvider,
    NoiseSchedule,
};
pub use sketch::{builtin_encoder, edge_sketch, sketch_loss, EdgePyramidEncoder, FeatureEncoder};

use crate::image::Image;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossTerm {
    Color,
    Sketch,
    Sds,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossReport {
    pub value: f64,
    /// Gradient of `value` with respect to the content image.
    pub d_image: Image,
    pub term: LossTerm,
}
