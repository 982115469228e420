//! Training engine for classification under open-set label noise.
//!
//! Each mini-batch is split into clean, in-distribution-noisy and
//! out-of-distribution-noisy samples using Jensen-Shannon divergences
//! (prediction vs. label, and prediction vs. prediction across two augmented
//! views) with nearest-neighbor evidence and per-class adaptive thresholds.
//! Clean samples train on smoothed labels, ID-noisy samples on
//! mean-teacher partial-label targets, OOD-noisy samples through negative
//! learning, and three consistency regularizers tie the pieces together.
//!
//! All numeric code is generic over [`Scalar`]; the aliases below fix the
//! scalar to `f64`, which is what training uses.

pub mod datagen;
pub mod diffmath;
pub mod embedqueue;
mod error;
pub mod labeler;
pub mod network;
pub mod objective;
pub mod scalar;
pub mod selector;
pub mod trainer;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Tensor = diffmath::Tensor<f64>;
pub type ProbVec = diffmath::ProbVec<f64>;
pub type Tape = diffmath::Tape<f64>;
pub type Network = network::Network<f64>;
pub type Teacher = network::Teacher<f64>;
pub type EmbedQueue = embedqueue::EmbedQueue<f64>;
pub type QueueEntry = embedqueue::QueueEntry<f64>;
pub type ThresholdState = selector::ThresholdState<f64>;
pub type SampleScores = selector::SampleScores<f64>;
pub type TrainingTarget = labeler::TrainingTarget<f64>;
pub type LossBreakdown = objective::LossBreakdown<f64>;
pub type Trainer = trainer::Trainer<f64>;


pub type Tensor32 = diffmath::Tensor<f32>;
pub type ProbVec32 = diffmath::ProbVec<f32>;
pub type Network32 = network::Network<f32>;
