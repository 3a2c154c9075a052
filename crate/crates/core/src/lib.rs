//! Multi-modal soft decoding of compressed talking-head video: video, audio
//! and emotion branches fused by attention, an adversarially trained
//! reconstruction head, data preparation and face-region evaluation.

pub mod adversary;
pub mod audio_branch;
pub mod checkpoint;
pub mod config;
pub mod dataset;
pub mod emotion_branch;
pub mod error;
pub mod eval;
pub mod fusion;
pub mod layers;
pub mod metrics;
pub mod network;
pub mod reconstruction;
pub mod trainer;
pub mod video_branch;

pub use error::{Error, Result};
