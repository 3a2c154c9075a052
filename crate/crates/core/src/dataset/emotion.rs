//! The 15 emotion states: eight emotion classes at two intensities, with
//! "neutral" carrying no intensity.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const EMOTION_STATES: usize = 15;

pub const EMOTION_TYPES: [&str; 8] = ["neutral", "calm", "happy", "sad", "angry", "fearful", "disgust", "surprised"];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Intensity {
    Normal,
    Strong,
}

impl Intensity {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "normal" => Ok(Intensity::Normal),
            "strong" => Ok(Intensity::Strong),
            other => Err(Error::validation(format!("unknown intensity `{other}`, expected normal or strong"))),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Intensity::Normal => "normal",
            Intensity::Strong => "strong",
        }
    }
}

/// One-hot coded emotion state. Index 0 is neutral; class `k ≥ 1` maps to
/// `2k − 1` (normal) and `2k` (strong).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "usize", into = "usize")]
pub struct EmotionState {
    index: usize,
}

impl EmotionState {
    pub fn from_index(index: usize) -> Result<Self> {
        if index < EMOTION_STATES {
            Ok(Self { index })
        } else {
            Err(Error::validation(format!("emotion index {index} outside 0..{EMOTION_STATES}")))
        }
    }

    pub fn index(self) -> usize {
        self.index
    }

    pub fn onehot(self) -> [f64; EMOTION_STATES] {
        let mut v = [0.0; EMOTION_STATES];
        v[self.index] = 1.0;
        v
    }

    pub fn decode(self) -> (&'static str, Option<Intensity>) {
        if self.index == 0 {
            return (EMOTION_TYPES[0], None);
        }
        let class = (self.index + 1) / 2;
        let intensity = if self.index % 2 == 1 { Intensity::Normal } else { Intensity::Strong };
        (EMOTION_TYPES[class], Some(intensity))
    }

    /// `neutral` or `<type>-<intensity>`, e.g. `happy-strong`.
    pub fn name(self) -> String {
        match self.decode() {
            (t, None) => t.to_string(),
            (t, Some(i)) => format!("{t}-{}", i.as_str()),
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        if name == "neutral" {
            return encode_emotion("neutral", "normal");
        }
        match name.split_once('-') {
            Some((t, i)) => encode_emotion(t, i),
            None => Err(Error::validation(format!(
                "unknown emotion state `{name}`, expected one of: {}",
                all_state_names().join(", ")
            ))),
        }
    }

    pub fn all() -> impl Iterator<Item = EmotionState> {
        (0..EMOTION_STATES).map(|index| EmotionState { index })
    }
}

impl TryFrom<usize> for EmotionState {
    type Error = Error;
    fn try_from(index: usize) -> Result<Self> {
        Self::from_index(index)
    }
}

impl From<EmotionState> for usize {
    fn from(s: EmotionState) -> usize {
        s.index
    }
}

impl fmt::Display for EmotionState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

pub fn all_state_names() -> Vec<String> {
    EmotionState::all().map(EmotionState::name).collect()
}

pub fn encode_emotion(emotion_type: &str, intensity: &str) -> Result<EmotionState> {
    let class = EMOTION_TYPES.iter().position(|t| *t == emotion_type).ok_or_else(|| {
        Error::validation(format!("unknown emotion type `{emotion_type}`, expected one of {EMOTION_TYPES:?}"))
    })?;
    let intensity = Intensity::parse(intensity)?;
    match (class, intensity) {
        (0, Intensity::Normal) => Ok(EmotionState { index: 0 }),
        (0, Intensity::Strong) => Err(Error::validation("the neutral emotion has no strong intensity")),
        (k, Intensity::Normal) => Ok(EmotionState { index: 2 * k - 1 }),
        (k, Intensity::Strong) => Ok(EmotionState { index: 2 * k }),
    }
}
