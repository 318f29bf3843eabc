//! Fingerprint minutiae: extraction from ridge skeletons, rigid-alignment
//! matching, accept/reject decisions and error-rate evaluation.
//!
//! Coordinates follow the usual mathematical convention: x grows to the
//! right, y grows upward, and angles are counterclockwise from +x. Skeleton
//! images are stored top row first, so extraction flips the row index.

use alloc::string::String;
use alloc::vec::Vec;
use core::f64::consts::{PI, TAU};

use thiserror::Error;

mod crossing;
mod eval;
mod matcher;
mod skeleton;
mod synth;
mod text;

pub use crossing::{crossing_number, RING_OFFSETS};
pub use eval::{evaluate, EvalReport};
pub use matcher::{decide, match_templates, Decision, MatchParams, MatchResult, RigidTransform};
pub use skeleton::{estimate_direction, extract_minutiae, BinaryImage, DEFAULT_TRACE_LENGTH};
pub use synth::{generate_synthetic, GenuineNoise, SyntheticDataset, SyntheticParams, SyntheticSubject};
pub use text::{format_min, parse_min, MinParseError};

/// Templates smaller than this are refused at enrollment.
pub const DEFAULT_MIN_MINUTIAE: usize = 8;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MinutiaeError {
    #[error("image pixel at index {0} is not 0 or 1")]
    NotBinary(usize),
    #[error("image dimensions {width}x{height} do not match {len} pixels")]
    BadDimensions { width: usize, height: usize, len: usize },
    #[error("border margin {margin} leaves no interior in a {width}x{height} image")]
    BadMargin { margin: usize, width: usize, height: usize },
    #[error("ridge at ({row}, {col}) is shorter than 2 pixels")]
    TraceTooShort { row: usize, col: usize },
    #[error("trace length must be at least 2, got {0}")]
    BadTraceLength(usize),
    #[error("threshold must lie strictly between 0 and 1, got {0}")]
    BadThreshold(f64),
    #[error("score lists must both be non-empty")]
    EmptyScores,
    #[error("score {0} is outside [0, 1]")]
    ScoreOutOfRange(f64),
    #[error("invalid parameters: {0}")]
    BadParams(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MinutiaKind {
    /// Ridge ends.
    Termination,
    /// Ridge splits in two.
    Bifurcation,
}

impl MinutiaKind {
    pub fn code(self) -> char {
        match self {
            MinutiaKind::Termination => 'T',
            MinutiaKind::Bifurcation => 'B',
        }
    }

    pub fn from_code(c: &str) -> Option<Self> {
        match c {
            "T" => Some(MinutiaKind::Termination),
            "B" => Some(MinutiaKind::Bifurcation),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Minutia {
    pub x: f64,
    pub y: f64,
    /// Radians in `[0, 2π)`.
    pub theta: f64,
    pub kind: MinutiaKind,
}

impl Minutia {
    pub fn new(x: f64, y: f64, theta: f64, kind: MinutiaKind) -> Self {
        Self { x, y, theta: normalize_angle(theta), kind }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.theta.is_finite()
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Template {
    pub minutiae: Vec<Minutia>,
    pub source_id: String,
}

impl Template {
    pub fn new(source_id: impl Into<String>, minutiae: Vec<Minutia>) -> Self {
        Self { minutiae, source_id: source_id.into() }
    }

    pub fn len(&self) -> usize {
        self.minutiae.len()
    }

    pub fn is_empty(&self) -> bool {
        self.minutiae.is_empty()
    }

    /// Applies `p' = R(rotation) p + (dx, dy)` to every minutia.
    pub fn transformed(&self, t: &RigidTransform) -> Template {
        Template {
            minutiae: self.minutiae.iter().map(|m| t.apply(m)).collect(),
            source_id: self.source_id.clone(),
        }
    }
}

/// Wraps any finite angle into `[0, 2π)`.
pub fn normalize_angle(theta: f64) -> f64 {
    let r = libm::fmod(theta, TAU);
    let r = if r < 0.0 { r + TAU } else { r };
    // fmod of a tiny negative value can round up to exactly 2π
    if r >= TAU {
        0.0
    } else {
        r
    }
}

/// Smallest absolute difference between two angles, in `[0, π]`.
pub fn angle_difference(a: f64, b: f64) -> f64 {
    let d = normalize_angle(a - b);
    if d > PI {
        TAU - d
    } else {
        d
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalize_wraps_both_directions() {
        assert!((normalize_angle(-PI / 2.0) - 3.0 * PI / 2.0).abs() < 1e-12);
        assert!((normalize_angle(5.0 * PI) - PI).abs() < 1e-12);
        assert_eq!(normalize_angle(TAU), 0.0);
        assert_eq!(normalize_angle(-1e-18), 0.0);
    }

    #[test]
    fn angle_difference_is_circular() {
        assert!((angle_difference(0.1, TAU - 0.1) - 0.2).abs() < 1e-12);
        assert!((angle_difference(0.0, PI) - PI).abs() < 1e-12);
    }
}
