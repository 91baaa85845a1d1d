//! Film-music dataset construction, a video-conditioned toy decoder, and
//! generative-audio evaluation metrics.

pub mod api;
pub mod audio;
pub mod error;
pub mod manifest;
pub mod matcher;
pub mod metrics;
pub mod model;
pub mod pipeline;
pub mod prompts;
pub mod review;
pub mod segmenter;
pub mod synth;
pub mod tensor_io;

pub use error::{Error, Result};
