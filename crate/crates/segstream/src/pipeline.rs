//! Turn-level orchestration: run a whole stream through the engine under one
//! of three scheduling modes and report when things happened on a token-tick
//! clock.
//!
//! The clock is analytic — every ingested or decoded token costs one tick on
//! its track — so schedules are exact and reproducible. What the modes change
//! is *when* work is scheduled, never *what* each decode step may attend to:
//! decoding generated unit u always reads the source snapshot bounded at unit
//! u plus the earlier generated units, so per-token logits are identical
//! across modes.
//!
//! - `Interleaved`: one worker alternates ingest and decode, unit by unit.
//! - `Batch`: one worker ingests every received unit, then decodes everything.
//! - `Decoupled`: an ingest track and a decode track run concurrently; decode
//!   of unit u starts once unit u is ingested and the previous decode is done.

use std::fmt;
use std::str::FromStr;
use std::sync::{Condvar, Mutex};

use thiserror::Error;

use crate::engine::tokens::StreamTokens;
use crate::engine::{DecodeMode, DecodeOutput, Engine, EngineError};
use crate::rope::{compute_offsets, OffsetTable, RopeError};
use crate::stream::UnitStream;

#[derive(Debug, Error, PartialEq)]
pub enum PipelineError {
    #[error("plan covers {got} question turns, stream has {expected}")]
    PlanMismatch { expected: usize, got: usize },
    #[error("turn {turn}: answer span must be at least 1 token")]
    EmptyAnswer { turn: usize },
    #[error("memory bank already holds a note for segment {segment}")]
    DuplicateNote { segment: usize },
    #[error("memory bank expected segment {expected} next, got {got}")]
    IndexGap { expected: usize, got: usize },
    #[error("no question turn {turn} in this stream")]
    TurnNotFound { turn: usize },
    #[error("ingest worker failed: {0}")]
    IngestWorker(String),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Rope(#[from] RopeError),
}

/// How the single token-tick clock is scheduled across ingest and decode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PipelineMode {
    Interleaved,
    Decoupled,
    Batch,
}

impl fmt::Display for PipelineMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PipelineMode::Interleaved => "interleaved",
            PipelineMode::Decoupled => "decoupled",
            PipelineMode::Batch => "batch",
        })
    }
}

impl FromStr for PipelineMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "interleaved" => Ok(PipelineMode::Interleaved),
            "decoupled" => Ok(PipelineMode::Decoupled),
            "batch" => Ok(PipelineMode::Batch),
            other => Err(format!("unknown pipeline mode `{other}`")),
        }
    }
}

/// Whether decoded tokens are forced from the derived targets or chosen
/// greedily from the engine's own logits.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecodePolicy {
    Teacher,
    Greedy,
}

/// Generation lengths for every unit: a fixed note length per segment and a
/// (rationale, answer) token split per question turn.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GenerationPlan {
    pub note_len: usize,
    pub turns: Vec<(usize, usize)>,
}

impl GenerationPlan {
    /// Same rationale/answer split for every question in the stream.
    pub fn uniform(stream: &UnitStream, note_len: usize, rationale: usize, answer: usize) -> Self {
        Self { note_len, turns: vec![(rationale, answer); stream.num_questions()] }
    }

    pub fn validate(&self, stream: &UnitStream) -> Result<(), PipelineError> {
        if self.turns.len() != stream.num_questions() {
            return Err(PipelineError::PlanMismatch {
                expected: stream.num_questions(),
                got: self.turns.len(),
            });
        }
        for (i, &(_, answer)) in self.turns.iter().enumerate() {
            if answer == 0 {
                return Err(PipelineError::EmptyAnswer { turn: i + 1 });
            }
        }
        Ok(())
    }

    /// Generated token count for every unit slot, in arrival order.
    pub fn generated_lens(&self, stream: &UnitStream) -> Vec<usize> {
        let mut turn = 0;
        stream
            .received()
            .iter()
            .map(|unit| {
                if unit.is_segment() {
                    self.note_len
                } else {
                    let (r, a) = self.turns[turn];
                    turn += 1;
                    r + a
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EventKind {
    IngestStart,
    IngestEnd,
    DecodeStart,
    DecodeToken,
    DecodeEnd,
    /// Stamped with the clock *before* the first answer token's tick, i.e.
    /// the number of ticks spent before that token on its track.
    FirstAnswerToken,
}

impl EventKind {
    pub fn label(self) -> &'static str {
        match self {
            EventKind::IngestStart => "ingest_start",
            EventKind::IngestEnd => "ingest_end",
            EventKind::DecodeStart => "decode_start",
            EventKind::DecodeToken => "decode_token",
            EventKind::DecodeEnd => "decode_end",
            EventKind::FirstAnswerToken => "first_answer_token",
        }
    }
}

impl fmt::Display for EventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ScheduleEvent {
    pub kind: EventKind,
    pub unit: usize,
    pub clock: u64,
}

/// One note per segment, written in segment order with no gaps.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MemoryBank {
    notes: Vec<NoteEntry>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NoteEntry {
    /// 1-based segment ordinal.
    pub segment: usize,
    /// Arrival index of the segment unit this note summarizes.
    pub unit: usize,
    pub tokens: Vec<u32>,
}

impl MemoryBank {
    pub fn write(&mut self, segment: usize, unit: usize, tokens: Vec<u32>) -> Result<(), PipelineError> {
        if segment <= self.notes.len() {
            return Err(PipelineError::DuplicateNote { segment });
        }
        if segment != self.notes.len() + 1 {
            return Err(PipelineError::IndexGap { expected: self.notes.len() + 1, got: segment });
        }
        self.notes.push(NoteEntry { segment, unit, tokens });
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.notes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.notes.is_empty()
    }

    pub fn get(&self, segment: usize) -> Option<&NoteEntry> {
        segment.checked_sub(1).and_then(|i| self.notes.get(i))
    }

    pub fn notes(&self) -> &[NoteEntry] {
        &self.notes
    }
}

/// Decoded output for one question turn.
#[derive(Debug, Clone, PartialEq)]
pub struct TurnAnswer {
    /// 1-based question ordinal.
    pub turn: usize,
    /// Arrival index of the question unit.
    pub unit: usize,
    /// Full decoded token sequence: rationale followed by the answer span.
    pub tokens: Vec<u32>,
    pub rationale_len: usize,
    /// Per-token logits for the whole generated unit.
    pub logits: crate::engine::math::Matrix,
}

impl TurnAnswer {
    pub fn answer_tokens(&self) -> &[u32] {
        &self.tokens[self.rationale_len..]
    }
}

#[derive(Debug)]
pub struct PipelineRun {
    pub mode: PipelineMode,
    pub bank: MemoryBank,
    pub answers: Vec<TurnAnswer>,
    pub events: Vec<ScheduleEvent>,
    /// Decode outputs per unit slot, in arrival order.
    pub outputs: Vec<DecodeOutput>,
}

/// The analytic event schedule for a stream under a plan, without running any
/// numerics. Clocks count token ticks; all units are available at clock 0.
pub fn schedule(
    stream: &UnitStream,
    plan: &GenerationPlan,
    mode: PipelineMode,
) -> Result<Vec<ScheduleEvent>, PipelineError> {
    plan.validate(stream)?;
    let received: Vec<u64> = stream.received().iter().map(|u| u.token_count() as u64).collect();
    let generated: Vec<u64> =
        plan.generated_lens(stream).into_iter().map(|n| n as u64).collect();
    let rationale_of = |unit: usize| -> Option<u64> {
        stream.turn_for_unit(unit).map(|t| plan.turns[t.turn - 1].0 as u64)
    };
    let n = stream.num_units();
    let mut events = Vec::new();

    let decode_track = |events: &mut Vec<ScheduleEvent>, unit: usize, start: u64| -> u64 {
        events.push(ScheduleEvent { kind: EventKind::DecodeStart, unit, clock: start });
        let rationale = rationale_of(unit);
        let mut clock = start;
        for j in 0..generated[unit - 1] {
            if rationale == Some(j) {
                events.push(ScheduleEvent { kind: EventKind::FirstAnswerToken, unit, clock });
            }
            events.push(ScheduleEvent { kind: EventKind::DecodeToken, unit, clock });
            clock += 1;
        }
        events.push(ScheduleEvent { kind: EventKind::DecodeEnd, unit, clock });
        clock
    };

    match mode {
        PipelineMode::Interleaved => {
            let mut clock = 0;
            for u in 1..=n {
                events.push(ScheduleEvent { kind: EventKind::IngestStart, unit: u, clock });
                clock += received[u - 1];
                events.push(ScheduleEvent { kind: EventKind::IngestEnd, unit: u, clock });
                clock = decode_track(&mut events, u, clock);
            }
        }
        PipelineMode::Batch => {
            let mut clock = 0;
            for u in 1..=n {
                events.push(ScheduleEvent { kind: EventKind::IngestStart, unit: u, clock });
                clock += received[u - 1];
                events.push(ScheduleEvent { kind: EventKind::IngestEnd, unit: u, clock });
            }
            for u in 1..=n {
                clock = decode_track(&mut events, u, clock);
            }
        }
        PipelineMode::Decoupled => {
            let mut ingest_events = Vec::new();
            let mut ingest_clock = 0;
            let mut ingest_done = vec![0u64; n + 1];
            for u in 1..=n {
                ingest_events.push(ScheduleEvent {
                    kind: EventKind::IngestStart,
                    unit: u,
                    clock: ingest_clock,
                });
                ingest_clock += received[u - 1];
                ingest_events.push(ScheduleEvent {
                    kind: EventKind::IngestEnd,
                    unit: u,
                    clock: ingest_clock,
                });
                ingest_done[u] = ingest_clock;
            }
            let mut decode_events = Vec::new();
            let mut decode_done = 0;
            for u in 1..=n {
                let start = decode_done.max(ingest_done[u]);
                decode_done = decode_track(&mut decode_events, u, start);
            }
            // Merge the two clock-sorted tracks; ingest wins ties so "decode
            // starts when ingest ends" reads in causal order.
            let (mut i, mut d) = (0, 0);
            while i < ingest_events.len() || d < decode_events.len() {
                let take_ingest = match (ingest_events.get(i), decode_events.get(d)) {
                    (Some(a), Some(b)) => a.clock <= b.clock,
                    (Some(_), None) => true,
                    (None, _) => false,
                };
                if take_ingest {
                    events.push(ingest_events[i]);
                    i += 1;
                } else {
                    events.push(decode_events[d]);
                    d += 1;
                }
            }
        }
    }
    Ok(events)
}

/// Clock at a question turn's first answer token: the number of token ticks
/// spent on its track before that token was produced.
pub fn ttft(
    events: &[ScheduleEvent],
    stream: &UnitStream,
    turn: usize,
) -> Result<u64, PipelineError> {
    let unit = stream
        .turns()
        .iter()
        .find(|t| t.turn == turn)
        .map(|t| t.unit_index)
        .ok_or(PipelineError::TurnNotFound { turn })?;
    events
        .iter()
        .find(|e| e.kind == EventKind::FirstAnswerToken && e.unit == unit)
        .map(|e| e.clock)
        .ok_or(PipelineError::TurnNotFound { turn })
}

/// (turn, ttft) for every question turn in the stream, in turn order.
pub fn ttft_all(events: &[ScheduleEvent], stream: &UnitStream) -> Vec<(usize, u64)> {
    stream
        .turns()
        .iter()
        .filter_map(|t| ttft(events, stream, t.turn).ok().map(|clock| (t.turn, clock)))
        .collect()
}

fn decode_unit(
    engine: &Engine,
    source: &crate::engine::cache::KvCache,
    decode: &mut crate::engine::cache::KvCache,
    toks: &StreamTokens,
    policy: DecodePolicy,
    unit: usize,
    offsets: &OffsetTable,
) -> Result<DecodeOutput, PipelineError> {
    let mode = match policy {
        DecodePolicy::Teacher => DecodeMode::Teacher(&toks.generated[unit - 1]),
        DecodePolicy::Greedy => DecodeMode::Greedy,
    };
    Ok(engine.decode_generated_unit(source, decode, mode, unit, offsets)?)
}

fn collect_run(
    stream: &UnitStream,
    plan: &GenerationPlan,
    mode: PipelineMode,
    events: Vec<ScheduleEvent>,
    outputs: Vec<DecodeOutput>,
) -> Result<PipelineRun, PipelineError> {
    let mut bank = MemoryBank::default();
    let mut answers = Vec::new();
    let mut segment = 0;
    let mut turn = 0;
    for unit in stream.received() {
        let out = &outputs[unit.arrival_index - 1];
        if unit.is_segment() {
            segment += 1;
            bank.write(segment, unit.arrival_index, out.tokens.clone())?;
        } else {
            turn += 1;
            answers.push(TurnAnswer {
                turn,
                unit: unit.arrival_index,
                tokens: out.tokens.clone(),
                rationale_len: plan.turns[turn - 1].0,
                logits: out.logits.clone(),
            });
        }
    }
    Ok(PipelineRun { mode, bank, answers, events, outputs })
}

/// Runs the full stream through the engine under the given mode. Decode
/// always proceeds unit by unit in arrival order (FIFO, no preemption); the
/// mode only changes how ingest work is interleaved around it.
pub fn run_pipeline(
    engine: &Engine,
    stream: &UnitStream,
    plan: &GenerationPlan,
    mode: PipelineMode,
    policy: DecodePolicy,
) -> Result<PipelineRun, PipelineError> {
    plan.validate(stream)?;
    let gen_lens = plan.generated_lens(stream);
    let toks = StreamTokens::derive(stream, &gen_lens);
    let offsets = compute_offsets(stream, &gen_lens)?;
    let events = schedule(stream, plan, mode)?;
    let mut caches = engine.new_caches();
    let mut outputs = Vec::with_capacity(stream.num_units());
    match mode {
        PipelineMode::Batch => {
            for u in 1..=stream.num_units() {
                engine.ingest_received(&mut caches.source, stream, &toks, u, &offsets)?;
            }
            for u in 1..=stream.num_units() {
                outputs.push(decode_unit(
                    engine,
                    &caches.source,
                    &mut caches.decode,
                    &toks,
                    policy,
                    u,
                    &offsets,
                )?);
            }
        }
        PipelineMode::Interleaved | PipelineMode::Decoupled => {
            for u in 1..=stream.num_units() {
                engine.ingest_received(&mut caches.source, stream, &toks, u, &offsets)?;
                outputs.push(decode_unit(
                    engine,
                    &caches.source,
                    &mut caches.decode,
                    &toks,
                    policy,
                    u,
                    &offsets,
                )?);
            }
        }
    }
    collect_run(stream, plan, mode, events, outputs)
}

/// Decoupled execution with a real second thread: the ingest worker owns the
/// source cache behind a mutex and the decode side clones bounded prefixes of
/// it as units land. Produces the same per-token logits as [`run_pipeline`];
/// the reported events are the analytic decoupled schedule, since wall-clock
/// interleaving is nondeterministic.
pub fn run_pipeline_concurrent(
    engine: &Engine,
    stream: &UnitStream,
    plan: &GenerationPlan,
    policy: DecodePolicy,
) -> Result<PipelineRun, PipelineError> {
    plan.validate(stream)?;
    let gen_lens = plan.generated_lens(stream);
    let toks = StreamTokens::derive(stream, &gen_lens);
    let offsets = compute_offsets(stream, &gen_lens)?;
    let events = schedule(stream, plan, PipelineMode::Decoupled)?;
    let n = stream.num_units();

    struct Shared {
        source: crate::engine::cache::KvCache,
        failure: Option<String>,
    }
    let caches = engine.new_caches();
    let shared = Mutex::new(Shared { source: caches.source, failure: None });
    let progress = Condvar::new();
    let mut decode = caches.decode;
    let mut outputs = Vec::with_capacity(n);

    let decode_result: Result<(), PipelineError> = std::thread::scope(|scope| {
        let ingest_worker = scope.spawn(|| -> Result<(), EngineError> {
            for u in 1..=n {
                let mut state = shared.lock().unwrap();
                let step = engine.ingest_received(&mut state.source, stream, &toks, u, &offsets);
                if let Err(e) = step {
                    state.failure = Some(e.to_string());
                    drop(state);
                    progress.notify_all();
                    return Err(e);
                }
                drop(state);
                progress.notify_all();
            }
            Ok(())
        });
        for u in 1..=n {
            let mut state = shared.lock().unwrap();
            while state.source.units() < u && state.failure.is_none() {
                state = progress.wait(state).unwrap();
            }
            if let Some(msg) = &state.failure {
                return Err(PipelineError::IngestWorker(msg.clone()));
            }
            let prefix = state.source.clone_prefix(u)?;
            drop(state);
            outputs.push(decode_unit(engine, &prefix, &mut decode, &toks, policy, u, &offsets)?);
        }
        match ingest_worker.join() {
            Ok(Ok(())) => Ok(()),
            Ok(Err(e)) => Err(PipelineError::Engine(e)),
            Err(_) => Err(PipelineError::IngestWorker("ingest worker panicked".into())),
        }
    });
    decode_result?;
    collect_run(stream, plan, PipelineMode::Decoupled, events, outputs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::EngineConfig;
    use crate::stream::{UnitDescriptor, VisualGrid};

    fn seg(tokens: usize) -> UnitDescriptor {
        UnitDescriptor::Segment { grid: VisualGrid::new(tokens, 1, 1), time: None }
    }

    fn question(len: usize) -> UnitDescriptor {
        UnitDescriptor::Question { tokens: (0..len as u32).map(|i| 60 + i).collect() }
    }

    fn single_turn_stream() -> UnitStream {
        UnitStream::build(vec![seg(4), question(3)]).unwrap()
    }

    #[test]
    fn interleaved_ttft_is_everything_before_the_answer() {
        // One segment (4 tokens), one question (3 tokens), no note, no
        // rationale: the first answer token lands after 4 + 3 = 7 ticks.
        let stream = single_turn_stream();
        let plan = GenerationPlan::uniform(&stream, 0, 0, 2);
        let events = schedule(&stream, &plan, PipelineMode::Interleaved).unwrap();
        assert_eq!(ttft(&events, &stream, 1).unwrap(), 7);
        // With a 2-token note and 3 rationale tokens it shifts by both.
        let plan = GenerationPlan::uniform(&stream, 2, 3, 2);
        let events = schedule(&stream, &plan, PipelineMode::Interleaved).unwrap();
        assert_eq!(ttft(&events, &stream, 1).unwrap(), 4 + 2 + 3 + 3);
    }

    #[test]
    fn batch_ingests_the_whole_stream_first() {
        let stream =
            UnitStream::build(vec![seg(4), question(3), seg(5), question(2)]).unwrap();
        let plan = GenerationPlan::uniform(&stream, 2, 1, 2);
        let events = schedule(&stream, &plan, PipelineMode::Batch).unwrap();
        // All 14 received tokens, then notes/answers for units 1..3 (2+3+2
        // tokens), then 1 rationale token of turn 2.
        assert_eq!(ttft(&events, &stream, 2).unwrap(), 14 + 7 + 1);
        // Turn 1 still pays for the entire input side.
        assert_eq!(ttft(&events, &stream, 1).unwrap(), 14 + 2 + 1);
        let last_ingest = events
            .iter()
            .filter(|e| e.kind == EventKind::IngestEnd)
            .map(|e| e.clock)
            .max()
            .unwrap();
        let first_decode = events
            .iter()
            .find(|e| e.kind == EventKind::DecodeStart)
            .map(|e| e.clock)
            .unwrap();
        assert!(first_decode >= last_ingest, "no decode may precede the end of ingest");
    }

    #[test]
    fn decoupled_overlaps_ingest_with_decode() {
        // Segments of 10 tokens with 5-token notes: while the note for
        // segment 1 decodes, segment 2 is already being ingested.
        let stream = UnitStream::build(vec![seg(10), seg(10), question(3)]).unwrap();
        let plan = GenerationPlan::uniform(&stream, 5, 0, 2);
        let events = schedule(&stream, &plan, PipelineMode::Decoupled).unwrap();
        // Ingest track ends at 10, 20, 23. Decode: S1=10 D1=15, S2=max(15,20)=20
        // D2=25, S3=max(25,23)=25.
        assert_eq!(ttft(&events, &stream, 1).unwrap(), 25);
        let interleaved = schedule(&stream, &plan, PipelineMode::Interleaved).unwrap();
        assert_eq!(ttft(&interleaved, &stream, 1).unwrap(), 33);
    }

    #[test]
    fn mode_latency_ordering_holds_per_turn() {
        let stream = UnitStream::build(vec![
            seg(6),
            question(2),
            seg(9),
            seg(3),
            question(4),
            seg(5),
            question(1),
        ])
        .unwrap();
        let plan = GenerationPlan::uniform(&stream, 3, 2, 2);
        let dec = schedule(&stream, &plan, PipelineMode::Decoupled).unwrap();
        let int = schedule(&stream, &plan, PipelineMode::Interleaved).unwrap();
        let bat = schedule(&stream, &plan, PipelineMode::Batch).unwrap();
        for turn in 1..=stream.num_questions() {
            let d = ttft(&dec, &stream, turn).unwrap();
            let i = ttft(&int, &stream, turn).unwrap();
            let b = ttft(&bat, &stream, turn).unwrap();
            assert!(d <= i, "turn {turn}: decoupled {d} must not exceed interleaved {i}");
            assert!(i <= b, "turn {turn}: interleaved {i} must not exceed batch {b}");
        }
    }

    #[test]
    fn first_answer_token_precedes_its_decode_tick() {
        let stream = single_turn_stream();
        let plan = GenerationPlan::uniform(&stream, 1, 2, 2);
        let events = schedule(&stream, &plan, PipelineMode::Interleaved).unwrap();
        let fat = events.iter().position(|e| e.kind == EventKind::FirstAnswerToken).unwrap();
        assert_eq!(events[fat + 1].kind, EventKind::DecodeToken);
        assert_eq!(events[fat + 1].clock, events[fat].clock);
        assert_eq!(events[fat + 1].unit, events[fat].unit);
    }

    #[test]
    fn memory_bank_rejects_duplicates_and_gaps() {
        let mut bank = MemoryBank::default();
        bank.write(1, 1, vec![5]).unwrap();
        assert_eq!(bank.write(1, 1, vec![5]).unwrap_err(), PipelineError::DuplicateNote { segment: 1 });
        assert_eq!(
            bank.write(3, 4, vec![6]).unwrap_err(),
            PipelineError::IndexGap { expected: 2, got: 3 }
        );
        bank.write(2, 3, vec![7]).unwrap();
        assert_eq!(bank.len(), 2);
        assert_eq!(bank.get(2).unwrap().tokens, vec![7]);
        assert!(bank.get(3).is_none());
    }

    #[test]
    fn logits_are_identical_across_all_modes() {
        let engine = Engine::new(EngineConfig::small(31)).unwrap();
        let stream =
            UnitStream::build(vec![seg(3), question(2), seg(4), question(2)]).unwrap();
        let plan = GenerationPlan::uniform(&stream, 2, 1, 2);
        let runs: Vec<PipelineRun> =
            [PipelineMode::Interleaved, PipelineMode::Decoupled, PipelineMode::Batch]
                .into_iter()
                .map(|m| run_pipeline(&engine, &stream, &plan, m, DecodePolicy::Teacher).unwrap())
                .collect();
        for other in &runs[1..] {
            assert_eq!(
                runs[0].outputs, other.outputs,
                "decode outputs must be bit-identical across modes"
            );
        }
    }

    #[test]
    fn notes_and_answers_land_in_their_slots() {
        let engine = Engine::new(EngineConfig::small(17)).unwrap();
        let stream =
            UnitStream::build(vec![seg(3), question(2), seg(2), seg(2), question(2)]).unwrap();
        let plan = GenerationPlan::uniform(&stream, 2, 1, 3);
        let run =
            run_pipeline(&engine, &stream, &plan, PipelineMode::Interleaved, DecodePolicy::Greedy)
                .unwrap();
        assert_eq!(run.bank.len(), 3);
        assert_eq!(run.bank.get(1).unwrap().unit, 1);
        assert_eq!(run.bank.get(2).unwrap().unit, 3);
        assert_eq!(run.bank.get(3).unwrap().unit, 4);
        assert_eq!(run.answers.len(), 2);
        assert_eq!(run.answers[0].unit, 2);
        assert_eq!(run.answers[1].unit, 5);
        for answer in &run.answers {
            assert_eq!(answer.tokens.len(), 4);
            assert_eq!(answer.answer_tokens().len(), 3);
        }
    }

    #[test]
    fn plan_validation_catches_shape_errors() {
        let stream = single_turn_stream();
        let plan = GenerationPlan { note_len: 1, turns: vec![] };
        assert_eq!(
            plan.validate(&stream).unwrap_err(),
            PipelineError::PlanMismatch { expected: 1, got: 0 }
        );
        let plan = GenerationPlan { note_len: 1, turns: vec![(2, 0)] };
        assert_eq!(plan.validate(&stream).unwrap_err(), PipelineError::EmptyAnswer { turn: 1 });
    }

    #[test]
    fn unknown_turn_is_reported() {
        let stream = single_turn_stream();
        let plan = GenerationPlan::uniform(&stream, 0, 0, 1);
        let events = schedule(&stream, &plan, PipelineMode::Interleaved).unwrap();
        assert_eq!(
            ttft(&events, &stream, 2).unwrap_err(),
            PipelineError::TurnNotFound { turn: 2 }
        );
    }

    #[test]
    fn concurrent_run_matches_the_serial_decoupled_run() {
        let engine = Engine::new(EngineConfig::small(41)).unwrap();
        let stream =
            UnitStream::build(vec![seg(4), seg(3), question(2), seg(2), question(3)]).unwrap();
        let plan = GenerationPlan::uniform(&stream, 2, 1, 2);
        let serial =
            run_pipeline(&engine, &stream, &plan, PipelineMode::Decoupled, DecodePolicy::Teacher)
                .unwrap();
        for _ in 0..3 {
            let threaded =
                run_pipeline_concurrent(&engine, &stream, &plan, DecodePolicy::Teacher).unwrap();
            assert_eq!(threaded.outputs, serial.outputs);
            assert_eq!(threaded.events, serial.events);
        }
    }

    #[test]
    fn decoupled_events_are_clock_sorted() {
        let stream = UnitStream::build(vec![seg(7), question(2), seg(4)]).unwrap();
        let plan = GenerationPlan::uniform(&stream, 3, 1, 1);
        let events = schedule(&stream, &plan, PipelineMode::Decoupled).unwrap();
        for pair in events.windows(2) {
            assert!(pair[0].clock <= pair[1].clock, "events must be in clock order");
        }
    }
}
