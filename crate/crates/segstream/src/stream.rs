//! Interleaved unit streams: timestamped visual segments and question turns in
//! arrival order, plus the boundary and frame-sampling policies that produce
//! them from a raw timeline.

pub mod file;

use thiserror::Error;

/// Token grid of one visual segment: temporal, height and width extents.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VisualGrid {
    pub t: usize,
    pub h: usize,
    pub w: usize,
}

impl VisualGrid {
    pub fn new(t: usize, h: usize, w: usize) -> Self {
        Self { t, h, w }
    }

    /// Number of tokens the segment contributes to the input stream.
    pub fn token_count(&self) -> usize {
        self.t * self.h * self.w
    }

    /// Positional span of the segment: its largest grid extent.
    pub fn span(&self) -> usize {
        self.t.max(self.h).max(self.w)
    }
}

/// Builder-side description of one arriving unit.
#[derive(Debug, Clone)]
pub enum UnitDescriptor {
    Segment {
        grid: VisualGrid,
        /// Wall-clock span `(start_s, end_s)` of the segment, when known.
        time: Option<(f64, f64)>,
    },
    Question {
        tokens: Vec<u32>,
    },
}

/// Payload of a received unit.
#[derive(Debug, Clone, PartialEq)]
pub enum UnitPayload {
    Segment {
        grid: VisualGrid,
        time: Option<(f64, f64)>,
    },
    Question {
        tokens: Vec<u32>,
    },
}

/// One unit of the input stream, in arrival order (`arrival_index` is 1-based).
#[derive(Debug, Clone, PartialEq)]
pub struct ReceivedUnit {
    pub arrival_index: usize,
    pub payload: UnitPayload,
}

impl ReceivedUnit {
    pub fn is_segment(&self) -> bool {
        matches!(self.payload, UnitPayload::Segment { .. })
    }

    pub fn is_question(&self) -> bool {
        !self.is_segment()
    }

    pub fn token_count(&self) -> usize {
        match &self.payload {
            UnitPayload::Segment { grid, .. } => grid.token_count(),
            UnitPayload::Question { tokens } => tokens.len(),
        }
    }

    /// Positional span of the unit: the largest grid extent for a segment,
    /// the token length for a question. Every token of the unit fits inside
    /// a positional window of this size on each axis.
    pub fn span(&self) -> usize {
        match &self.payload {
            UnitPayload::Segment { grid, .. } => grid.span(),
            UnitPayload::Question { tokens } => tokens.len(),
        }
    }
}

/// Tokens generated in response to one received unit: a memory note for a
/// segment, or a rationale + answer chunk for a question.
#[derive(Debug, Clone, PartialEq)]
pub enum GeneratedBody {
    MemoryNote { tokens: Vec<u32> },
    /// `tokens[..rationale_len]` is the rationale, the rest is the answer.
    QaOutput { tokens: Vec<u32>, rationale_len: usize },
}

/// Output-stream unit aligned with received unit `aligned_index` (1-based).
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedUnit {
    pub aligned_index: usize,
    pub body: GeneratedBody,
}

impl GeneratedUnit {
    pub fn tokens(&self) -> &[u32] {
        match &self.body {
            GeneratedBody::MemoryNote { tokens } => tokens,
            GeneratedBody::QaOutput { tokens, .. } => tokens,
        }
    }

    pub fn token_count(&self) -> usize {
        self.tokens().len()
    }
}

/// One question turn: its 1-based turn number, the unit slot it occupies, and
/// the number of segments that arrived before it (the memory horizon the turn
/// is answered from).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct QuestionTurn {
    pub turn: usize,
    pub unit_index: usize,
    pub segments_before: usize,
}

#[derive(Debug, Error, PartialEq)]
pub enum StreamError {
    #[error("stream has no units")]
    EmptyStream,
    #[error("unit {unit} is a question arriving before any segment")]
    QuestionBeforeAnySegment { unit: usize },
    #[error("unit {unit} has a grid axis of zero extent")]
    EmptyGridAxis { unit: usize },
    #[error("unit {unit} is a question with no tokens")]
    EmptyQuestion { unit: usize },
    #[error("unit {unit} has a wall-time span that overlaps or regresses")]
    NonChronologicalTimestamps { unit: usize },
    #[error("invalid durations: {0}")]
    InvalidDurations(String),
    #[error("question times must be strictly increasing (index {index})")]
    UnorderedQuestionTimes { index: usize },
    #[error("generated unit for slot {got} pushed out of order (expected slot {expected})")]
    GeneratedOutOfOrder { expected: usize, got: usize },
    #[error("generated unit {unit} does not match the kind of its received unit")]
    GeneratedKindMismatch { unit: usize },
    #[error("generated unit {unit} has an empty answer span")]
    EmptyAnswer { unit: usize },
}

/// An interleaved stream of received units plus the (possibly partial) prefix
/// of generated units aligned with them.
#[derive(Debug, Clone, PartialEq)]
pub struct UnitStream {
    received: Vec<ReceivedUnit>,
    generated: Vec<GeneratedUnit>,
    turns: Vec<QuestionTurn>,
}

impl UnitStream {
    /// Validates descriptors and assigns arrival indices and question turns.
    ///
    /// Questions may only appear after at least one segment; consecutive
    /// questions are admitted in input order and share the same horizon.
    /// Timed segments must carry forward-running, non-overlapping spans.
    pub fn build(descriptors: Vec<UnitDescriptor>) -> Result<Self, StreamError> {
        if descriptors.is_empty() {
            return Err(StreamError::EmptyStream);
        }
        let mut received = Vec::with_capacity(descriptors.len());
        let mut turns = Vec::new();
        let mut segments_seen = 0usize;
        let mut last_time_end: Option<f64> = None;
        for (i, d) in descriptors.into_iter().enumerate() {
            let u = i + 1;
            let payload = match d {
                UnitDescriptor::Segment { grid, time } => {
                    if grid.t == 0 || grid.h == 0 || grid.w == 0 {
                        return Err(StreamError::EmptyGridAxis { unit: u });
                    }
                    if let Some((start, end)) = time {
                        if !(end > start) || start < 0.0 {
                            return Err(StreamError::NonChronologicalTimestamps { unit: u });
                        }
                        if let Some(prev_end) = last_time_end {
                            if start < prev_end {
                                return Err(StreamError::NonChronologicalTimestamps { unit: u });
                            }
                        }
                        last_time_end = Some(end);
                    }
                    segments_seen += 1;
                    UnitPayload::Segment { grid, time }
                }
                UnitDescriptor::Question { tokens } => {
                    if segments_seen == 0 {
                        return Err(StreamError::QuestionBeforeAnySegment { unit: u });
                    }
                    if tokens.is_empty() {
                        return Err(StreamError::EmptyQuestion { unit: u });
                    }
                    turns.push(QuestionTurn {
                        turn: turns.len() + 1,
                        unit_index: u,
                        segments_before: segments_seen,
                    });
                    UnitPayload::Question { tokens }
                }
            };
            received.push(ReceivedUnit { arrival_index: u, payload });
        }
        Ok(Self { received, generated: Vec::new(), turns })
    }

    pub fn received(&self) -> &[ReceivedUnit] {
        &self.received
    }

    /// The received unit at 1-based arrival index `u`.
    pub fn unit(&self, u: usize) -> &ReceivedUnit {
        &self.received[u - 1]
    }

    pub fn generated(&self) -> &[GeneratedUnit] {
        &self.generated
    }

    pub fn turns(&self) -> &[QuestionTurn] {
        &self.turns
    }

    pub fn turn_for_unit(&self, unit_index: usize) -> Option<&QuestionTurn> {
        self.turns.iter().find(|t| t.unit_index == unit_index)
    }

    pub fn num_units(&self) -> usize {
        self.received.len()
    }

    pub fn num_questions(&self) -> usize {
        self.turns.len()
    }

    pub fn num_segments(&self) -> usize {
        self.received.len() - self.turns.len()
    }

    /// Sum of all received-unit spans; the positional budget the input stream
    /// occupies.
    pub fn total_span(&self) -> usize {
        self.received.iter().map(|r| r.span()).sum()
    }

    pub fn received_token_count(&self) -> usize {
        self.received.iter().map(|r| r.token_count()).sum()
    }

    /// Total tokens of received units 1..=u.
    pub fn received_tokens_through(&self, u: usize) -> usize {
        self.received[..u].iter().map(|r| r.token_count()).sum()
    }

    /// Appends the next generated unit. Generated units always form a prefix
    /// aligned one-to-one with received units, so `aligned_index` must be the
    /// next slot and its kind must match the received unit in that slot.
    pub fn push_generated(&mut self, g: GeneratedUnit) -> Result<(), StreamError> {
        let expected = self.generated.len() + 1;
        if g.aligned_index != expected {
            return Err(StreamError::GeneratedOutOfOrder { expected, got: g.aligned_index });
        }
        if expected > self.received.len() {
            return Err(StreamError::GeneratedOutOfOrder { expected, got: g.aligned_index });
        }
        let unit = self.unit(expected);
        match (&g.body, unit.is_segment()) {
            (GeneratedBody::MemoryNote { .. }, true) => {}
            (GeneratedBody::QaOutput { tokens, rationale_len }, false) => {
                if *rationale_len >= tokens.len() {
                    return Err(StreamError::EmptyAnswer { unit: expected });
                }
            }
            _ => return Err(StreamError::GeneratedKindMismatch { unit: expected }),
        }
        self.generated.push(g);
        Ok(())
    }
}

/// Tiles `[0, duration_s]` into segment boundaries: one boundary at every
/// question time, and any interval longer than `max_segment_s` split into
/// consecutive `chunk_s` pieces (the last piece may be shorter).
///
/// Question times must be strictly increasing and lie in `(0, duration_s]`.
pub fn segment_by_questions(
    duration_s: f64,
    question_times_s: &[f64],
    max_segment_s: f64,
    chunk_s: f64,
) -> Result<Vec<(f64, f64)>, StreamError> {
    if !(duration_s > 0.0) {
        return Err(StreamError::InvalidDurations(format!(
            "duration {duration_s} must be positive"
        )));
    }
    if !(chunk_s > 0.0) || !(max_segment_s >= chunk_s) {
        return Err(StreamError::InvalidDurations(format!(
            "need 0 < chunk ({chunk_s}) <= max segment ({max_segment_s})"
        )));
    }
    let mut prev = 0.0f64;
    for (i, &t) in question_times_s.iter().enumerate() {
        if t <= 0.0 || t > duration_s {
            return Err(StreamError::InvalidDurations(format!(
                "question time {t} outside (0, {duration_s}]"
            )));
        }
        if i > 0 && t <= prev {
            return Err(StreamError::UnorderedQuestionTimes { index: i });
        }
        prev = t;
    }
    let mut cuts = vec![0.0f64];
    cuts.extend_from_slice(question_times_s);
    if *cuts.last().unwrap() < duration_s {
        cuts.push(duration_s);
    }
    let mut out = Vec::new();
    for pair in cuts.windows(2) {
        let (a, b) = (pair[0], pair[1]);
        if b - a > max_segment_s {
            // Chunk starts are computed as a + i*chunk so shared boundaries
            // are exact, not accumulated.
            let mut i = 0usize;
            loop {
                let start = a + i as f64 * chunk_s;
                let end = (a + (i + 1) as f64 * chunk_s).min(b);
                out.push((start, end));
                if end >= b {
                    break;
                }
                i += 1;
            }
        } else {
            out.push((a, b));
        }
    }
    Ok(out)
}

/// Frame-sampling plan chosen from total stream duration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamplingPlan {
    pub fps: f64,
    pub max_frames: Option<usize>,
}

impl SamplingPlan {
    /// Frames actually sampled over `duration_s` under this plan.
    pub fn frame_count(&self, duration_s: f64) -> usize {
        let n = (duration_s * self.fps).round() as usize;
        match self.max_frames {
            Some(cap) => n.min(cap),
            None => n,
        }
    }
}

/// Duration-tiered sampling rate: 1 fps under 300 s, 0.5 fps under 600 s,
/// 0.2 fps beyond, with an optional per-stream frame cap.
pub fn plan_sampling(duration_s: f64, frame_cap: Option<usize>) -> Result<SamplingPlan, StreamError> {
    if !(duration_s > 0.0) {
        return Err(StreamError::InvalidDurations(format!(
            "duration {duration_s} must be positive"
        )));
    }
    let fps = if duration_s < 300.0 {
        1.0
    } else if duration_s < 600.0 {
        0.5
    } else {
        0.2
    };
    Ok(SamplingPlan { fps, max_frames: frame_cap })
}

/// Convenience constructor for the seven-unit interleaved stream used across
/// the test suites: S1 Q1 S2 Q2 S3 S4 Q3, with 1-token units.
#[cfg(test)]
pub fn demo_stream() -> UnitStream {
    let seg = |n| UnitDescriptor::Segment { grid: VisualGrid::new(n, 1, 1), time: None };
    let q = |id: u32| UnitDescriptor::Question { tokens: vec![id] };
    UnitStream::build(vec![seg(1), q(11), seg(1), q(12), seg(1), seg(1), q(13)]).unwrap()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seg(t: usize, h: usize, w: usize) -> UnitDescriptor {
        UnitDescriptor::Segment { grid: VisualGrid::new(t, h, w), time: None }
    }

    fn q(len: usize) -> UnitDescriptor {
        UnitDescriptor::Question { tokens: (0..len as u32).collect() }
    }

    #[test]
    fn span_is_max_grid_extent_for_segments() {
        let s = UnitStream::build(vec![seg(4, 6, 5)]).unwrap();
        assert_eq!(s.unit(1).span(), 6);
        assert_eq!(s.unit(1).token_count(), 120);
    }

    #[test]
    fn span_is_token_length_for_questions() {
        let s = UnitStream::build(vec![seg(1, 1, 1), q(7)]).unwrap();
        assert_eq!(s.unit(2).span(), 7);
        assert_eq!(s.unit(1).span(), 1, "1x1x1 grid spans a single position");
    }

    #[test]
    fn interleaved_stream_assigns_turns_and_horizons() {
        let s = UnitStream::build(vec![
            seg(2, 1, 1),
            q(3),
            seg(2, 1, 1),
            q(3),
            seg(2, 1, 1),
            seg(2, 1, 1),
            q(3),
        ])
        .unwrap();
        assert_eq!(s.num_units(), 7);
        assert_eq!(s.num_questions(), 3);
        let horizons: Vec<usize> = s.turns().iter().map(|t| t.segments_before).collect();
        assert_eq!(horizons, vec![1, 2, 4]);
        let indices: Vec<usize> = s.turns().iter().map(|t| t.unit_index).collect();
        assert_eq!(indices, vec![2, 4, 7]);
    }

    #[test]
    fn segment_only_stream_has_no_turns() {
        let s = UnitStream::build(vec![seg(3, 2, 2)]).unwrap();
        assert_eq!(s.num_units(), 1);
        assert_eq!(s.num_questions(), 0);
    }

    #[test]
    fn question_first_is_rejected() {
        let err = UnitStream::build(vec![q(2), seg(1, 1, 1)]).unwrap_err();
        assert_eq!(err, StreamError::QuestionBeforeAnySegment { unit: 1 });
    }

    #[test]
    fn empty_stream_is_rejected() {
        assert_eq!(UnitStream::build(vec![]).unwrap_err(), StreamError::EmptyStream);
    }

    #[test]
    fn consecutive_questions_share_a_horizon() {
        let s = UnitStream::build(vec![seg(1, 1, 1), q(2), q(2)]).unwrap();
        assert_eq!(s.turns()[0].segments_before, s.turns()[1].segments_before);
    }

    #[test]
    fn overlapping_wall_times_are_rejected() {
        let timed = |a: f64, b: f64| UnitDescriptor::Segment {
            grid: VisualGrid::new(1, 1, 1),
            time: Some((a, b)),
        };
        let err = UnitStream::build(vec![timed(0.0, 30.0), timed(29.0, 60.0)]).unwrap_err();
        assert_eq!(err, StreamError::NonChronologicalTimestamps { unit: 2 });
        assert!(UnitStream::build(vec![timed(0.0, 30.0), timed(30.0, 60.0)]).is_ok());
    }

    #[test]
    fn generated_units_must_stay_aligned() {
        let mut s = UnitStream::build(vec![seg(1, 1, 1), q(2)]).unwrap();
        let err = s
            .push_generated(GeneratedUnit {
                aligned_index: 2,
                body: GeneratedBody::QaOutput { tokens: vec![1], rationale_len: 0 },
            })
            .unwrap_err();
        assert_eq!(err, StreamError::GeneratedOutOfOrder { expected: 1, got: 2 });

        let err = s
            .push_generated(GeneratedUnit {
                aligned_index: 1,
                body: GeneratedBody::QaOutput { tokens: vec![1], rationale_len: 0 },
            })
            .unwrap_err();
        assert_eq!(err, StreamError::GeneratedKindMismatch { unit: 1 });

        s.push_generated(GeneratedUnit {
            aligned_index: 1,
            body: GeneratedBody::MemoryNote { tokens: vec![5, 6] },
        })
        .unwrap();
        s.push_generated(GeneratedUnit {
            aligned_index: 2,
            body: GeneratedBody::QaOutput { tokens: vec![7, 8], rationale_len: 1 },
        })
        .unwrap();
        assert_eq!(s.generated().len(), 2);
    }

    #[test]
    fn qa_output_needs_a_nonempty_answer_span() {
        let mut s = UnitStream::build(vec![seg(1, 1, 1), q(2)]).unwrap();
        s.push_generated(GeneratedUnit {
            aligned_index: 1,
            body: GeneratedBody::MemoryNote { tokens: vec![] },
        })
        .unwrap();
        let err = s
            .push_generated(GeneratedUnit {
                aligned_index: 2,
                body: GeneratedBody::QaOutput { tokens: vec![3], rationale_len: 1 },
            })
            .unwrap_err();
        assert_eq!(err, StreamError::EmptyAnswer { unit: 2 });
    }

    #[test]
    fn short_video_single_question_at_end() {
        let tiles = segment_by_questions(90.0, &[90.0], 60.0, 30.0).unwrap();
        assert_eq!(tiles, vec![(0.0, 30.0), (30.0, 60.0), (60.0, 90.0)]);
    }

    #[test]
    fn long_tail_interval_is_chunked() {
        let tiles = segment_by_questions(130.0, &[40.0, 130.0], 60.0, 30.0).unwrap();
        assert_eq!(tiles, vec![(0.0, 40.0), (40.0, 70.0), (70.0, 100.0), (100.0, 130.0)]);
    }

    #[test]
    fn no_questions_still_tiles_the_video() {
        let tiles = segment_by_questions(45.0, &[], 60.0, 30.0).unwrap();
        assert_eq!(tiles, vec![(0.0, 45.0)]);
    }

    #[test]
    fn question_beyond_duration_is_rejected() {
        assert!(matches!(
            segment_by_questions(100.0, &[40.0, 101.0], 60.0, 30.0),
            Err(StreamError::InvalidDurations(_))
        ));
    }

    #[test]
    fn unordered_question_times_are_rejected() {
        assert_eq!(
            segment_by_questions(100.0, &[40.0, 40.0], 60.0, 30.0).unwrap_err(),
            StreamError::UnorderedQuestionTimes { index: 1 }
        );
    }

    #[test]
    fn tiles_cover_duration_without_gaps() {
        let cases = [
            (90.0, vec![90.0]),
            (130.0, vec![40.0, 130.0]),
            (601.0, vec![0.5, 599.0]),
            (247.0, vec![1.0, 2.0, 3.0, 246.0]),
            (60.0, vec![]),
            (61.0, vec![]),
        ];
        for (duration, questions) in cases {
            let tiles = segment_by_questions(duration, &questions, 60.0, 30.0).unwrap();
            assert_eq!(tiles[0].0, 0.0);
            assert_eq!(tiles.last().unwrap().1, duration);
            for pair in tiles.windows(2) {
                assert_eq!(pair[0].1, pair[1].0, "tiles must share boundaries exactly");
            }
            for &(a, b) in &tiles {
                assert!(b > a);
                assert!(b - a <= 60.0 + 1e-9);
            }
            for &t in &questions {
                assert!(
                    tiles.iter().any(|&(_, b)| b == t),
                    "question time {t} must land on a tile boundary"
                );
            }
        }
    }

    #[test]
    fn sampling_rate_tiers() {
        assert_eq!(plan_sampling(200.0, None).unwrap().fps, 1.0);
        assert_eq!(plan_sampling(450.0, None).unwrap().fps, 0.5);
        assert_eq!(plan_sampling(299.999, None).unwrap().fps, 1.0);
        assert_eq!(plan_sampling(300.0, None).unwrap().fps, 0.5);
        assert_eq!(plan_sampling(600.0, None).unwrap().fps, 0.2);
        let plan = plan_sampling(1200.0, Some(64)).unwrap();
        assert_eq!(plan.fps, 0.2);
        assert_eq!(plan.frame_count(1200.0), 64);
        assert_eq!(plan_sampling(450.0, None).unwrap().frame_count(450.0), 225);
    }
}
