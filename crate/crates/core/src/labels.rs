//! Self-assessment ratings to class targets.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const RATING_THRESHOLD: f32 = 4.5;

#[derive(Debug, Error, PartialEq)]
pub enum LabelError {
    #[error("rating {0} outside [1, 9]")]
    OutOfRange(f32),
    #[error("unknown label mode '{0}' (expected valence, arousal, quad or oct)")]
    UnknownMode(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Level {
    Low,
    High,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelMode {
    Valence,
    Arousal,
    /// Valence x arousal quadrants.
    Quad,
    /// Valence x arousal x dominance octants.
    Oct,
}

impl LabelMode {
    pub fn n_classes(self) -> u32 {
        match self {
            LabelMode::Valence | LabelMode::Arousal => 2,
            LabelMode::Quad => 4,
            LabelMode::Oct => 8,
        }
    }

    /// 1-based class id for one trial's `[valence, arousal, dominance, liking]`.
    pub fn class_of(self, ratings: &[f32; 4]) -> Result<u32, LabelError> {
        let [v, a, d, _] = *ratings;
        Ok(match self {
            LabelMode::Valence => binary_class(v)?,
            LabelMode::Arousal => binary_class(a)?,
            LabelMode::Quad => quad_class(v, a)?,
            LabelMode::Oct => oct_class(v, a, d)?,
        })
    }

    /// Index into `[valence, arousal, dominance, liking]` used to compare
    /// subjects; the multi-axis modes are compared on valence.
    pub fn similarity_axis(self) -> usize {
        match self {
            LabelMode::Arousal => 1,
            _ => 0,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            LabelMode::Valence => "valence",
            LabelMode::Arousal => "arousal",
            LabelMode::Quad => "quad",
            LabelMode::Oct => "oct",
        }
    }
}

impl fmt::Display for LabelMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LabelMode {
    type Err = LabelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "valence" => Ok(LabelMode::Valence),
            "arousal" => Ok(LabelMode::Arousal),
            "quad" => Ok(LabelMode::Quad),
            "oct" => Ok(LabelMode::Oct),
            other => Err(LabelError::UnknownMode(other.to_string())),
        }
    }
}

/// Low below 4.5, High from 4.5 up.
pub fn binarize(rating: f32) -> Result<Level, LabelError> {
    if !(1.0..=9.0).contains(&rating) {
        return Err(LabelError::OutOfRange(rating));
    }
    Ok(if rating < RATING_THRESHOLD {
        Level::Low
    } else {
        Level::High
    })
}

fn bit(rating: f32) -> Result<u32, LabelError> {
    Ok(match binarize(rating)? {
        Level::Low => 0,
        Level::High => 1,
    })
}

/// Low -> 1, High -> 2.
pub fn binary_class(rating: f32) -> Result<u32, LabelError> {
    Ok(bit(rating)? + 1)
}

/// (L,L)=1, (L,H)=2, (H,L)=3, (H,H)=4 for (valence, arousal).
pub fn quad_class(valence: f32, arousal: f32) -> Result<u32, LabelError> {
    Ok(2 * bit(valence)? + bit(arousal)? + 1)
}

/// Lexicographic over (valence, arousal, dominance), Low before High.
pub fn oct_class(valence: f32, arousal: f32, dominance: f32) -> Result<u32, LabelError> {
    Ok(4 * bit(valence)? + 2 * bit(arousal)? + bit(dominance)? + 1)
}
