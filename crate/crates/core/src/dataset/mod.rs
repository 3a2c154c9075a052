//! Clip ingestion, degradation, feature extraction and windowing.

pub mod au;
pub mod clip;
pub mod degrade;
pub mod emotion;
pub mod fixture;
pub mod media;
pub mod mfcc;
pub mod store;

pub use au::{load_au_file, AuVector, AU_DIM};
pub use clip::{DatasetManifest, FaceBox, ManifestRecord, SourceClip, Split};
pub use degrade::{degrade_clip, windows, Codec, DegradedClip, SampleWindow};
pub use emotion::{encode_emotion, EmotionState, EMOTION_STATES};
pub use fixture::{make_fixture, FixtureSize};
pub use mfcc::{extract_mfcc, MfccRow, MFCC_DIM};
