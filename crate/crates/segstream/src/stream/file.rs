//! On-disk stream specification: a JSON document listing units in arrival
//! order ("segment" with a token grid, "question" with a token length), plus
//! optional per-unit generated lengths.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{UnitDescriptor, UnitPayload, UnitStream, VisualGrid};
use crate::util::mix64;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum UnitSpec {
    Segment {
        /// `[t, h, w]` token grid extents.
        grid: [usize; 3],
        /// Optional wall-clock span `[start_s, end_s]`.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        time: Option<[f64; 2]>,
    },
    Question {
        /// Token length; concrete token ids are derived deterministically.
        len: usize,
    },
}

/// Parsed stream specification file.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StreamSpec {
    pub units: Vec<UnitSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generated_lens: Option<Vec<usize>>,
}

#[derive(Debug, Error)]
pub enum FileError {
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed stream spec: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Stream(#[from] super::StreamError),
}

/// Deterministic token id for question unit `u`, local position `n`.
pub fn question_token(unit_index: usize, local: usize) -> u32 {
    (mix64(0x5154 ^ ((unit_index as u64) << 24) ^ local as u64) % 997) as u32
}

impl StreamSpec {
    pub fn from_json(text: &str) -> Result<Self, FileError> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, FileError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("stream spec serializes")
    }

    /// Builds the validated unit stream this file describes.
    pub fn to_stream(&self) -> Result<UnitStream, FileError> {
        let descriptors = self
            .units
            .iter()
            .enumerate()
            .map(|(i, u)| match u {
                UnitSpec::Segment { grid, time } => UnitDescriptor::Segment {
                    grid: VisualGrid::new(grid[0], grid[1], grid[2]),
                    time: time.map(|[a, b]| (a, b)),
                },
                UnitSpec::Question { len } => UnitDescriptor::Question {
                    tokens: (0..*len).map(|n| question_token(i + 1, n)).collect(),
                },
            })
            .collect();
        Ok(UnitStream::build(descriptors)?)
    }

    /// Generated lengths from the file, or `fallback` for every unit.
    pub fn generated_lens_or(&self, fallback: usize) -> Vec<usize> {
        match &self.generated_lens {
            Some(lens) => lens.clone(),
            None => vec![fallback; self.units.len()],
        }
    }

    /// Describes an existing stream as a spec file. Question token ids are
    /// not stored; reloading re-derives them, so only streams built through
    /// this format round-trip exactly.
    pub fn from_stream(stream: &UnitStream, generated_lens: Option<Vec<usize>>) -> Self {
        let units = stream
            .received()
            .iter()
            .map(|r| match &r.payload {
                UnitPayload::Segment { grid, time } => UnitSpec::Segment {
                    grid: [grid.t, grid.h, grid.w],
                    time: time.map(|(a, b)| [a, b]),
                },
                UnitPayload::Question { tokens } => UnitSpec::Question { len: tokens.len() },
            })
            .collect();
        Self { units, generated_lens }
    }
}
