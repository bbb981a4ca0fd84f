//! Concrete token ids for a stream and the row layout of the concatenated
//! sequence. Segment and teacher-target ids are derived deterministically
//! from structural indices so every run of the same stream sees the same
//! inputs; question units keep the ids they arrived with.

use std::ops::Range;

use crate::stream::{UnitPayload, UnitStream};
use crate::util::mix64;

const SEGMENT_SALT: u64 = 0x5345_47;
const GENERATED_SALT: u64 = 0x4745_4E;

fn derived_id(salt: u64, unit: usize, local: usize) -> u32 {
    (mix64(salt ^ ((unit as u64) << 24) ^ local as u64) % 997) as u32
}

/// Token ids for every unit of a stream: received units in arrival order and
/// a (possibly shorter) prefix of generated units.
#[derive(Debug, Clone, PartialEq)]
pub struct StreamTokens {
    pub received: Vec<Vec<u32>>,
    pub generated: Vec<Vec<u32>>,
}

impl StreamTokens {
    /// Derives ids for a stream: synthetic ids for segment tokens, the
    /// stream's own ids for question tokens, and synthetic teacher targets of
    /// the given lengths for generated units.
    pub fn derive(stream: &UnitStream, gen_lens: &[usize]) -> Self {
        let received = stream
            .received()
            .iter()
            .map(|r| match &r.payload {
                UnitPayload::Segment { grid, .. } => (0..grid.token_count())
                    .map(|n| derived_id(SEGMENT_SALT, r.arrival_index, n))
                    .collect(),
                UnitPayload::Question { tokens } => tokens.clone(),
            })
            .collect();
        let generated = gen_lens
            .iter()
            .enumerate()
            .map(|(i, &len)| (0..len).map(|n| derived_id(GENERATED_SALT, i + 1, n)).collect())
            .collect();
        Self { received, generated }
    }

    pub fn generated_lens(&self) -> Vec<usize> {
        self.generated.iter().map(Vec::len).collect()
    }
}

/// Row ranges of each unit inside the concatenated sequence
/// `[R_1..R_U, C_1..C_P]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceLayout {
    pub received: Vec<Range<usize>>,
    pub generated: Vec<Range<usize>>,
}

pub fn sequence_layout(stream: &UnitStream, gen_lens: &[usize]) -> SequenceLayout {
    let mut at = 0usize;
    let received = stream
        .received()
        .iter()
        .map(|r| {
            let range = at..at + r.token_count();
            at = range.end;
            range
        })
        .collect();
    let generated = gen_lens
        .iter()
        .map(|&len| {
            let range = at..at + len;
            at = range.end;
            range
        })
        .collect();
    SequenceLayout { received, generated }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stream::{UnitDescriptor, UnitStream, VisualGrid};

    #[test]
    fn derivation_is_stable_and_respects_question_ids() {
        let stream = UnitStream::build(vec![
            UnitDescriptor::Segment { grid: VisualGrid::new(2, 1, 1), time: None },
            UnitDescriptor::Question { tokens: vec![41, 42] },
        ])
        .unwrap();
        let a = StreamTokens::derive(&stream, &[3, 2]);
        let b = StreamTokens::derive(&stream, &[3, 2]);
        assert_eq!(a, b);
        assert_eq!(a.received[1], vec![41, 42]);
        assert_eq!(a.generated.len(), 2);
        assert_eq!(a.generated[0].len(), 3);
    }

    #[test]
    fn layout_tiles_the_concatenated_sequence() {
        let stream = UnitStream::build(vec![
            UnitDescriptor::Segment { grid: VisualGrid::new(2, 2, 1), time: None },
            UnitDescriptor::Question { tokens: vec![7] },
        ])
        .unwrap();
        let layout = sequence_layout(&stream, &[2, 3]);
        assert_eq!(layout.received, vec![0..4, 4..5]);
        assert_eq!(layout.generated, vec![5..7, 7..10]);
    }
}
