//! Segment-level streaming attention runtime.
//!
//! The crate models a stream of interleaved visual segments and question
//! turns, the streaming causal mask and decoupled positional offsets that
//! keep ingestion and generation independent, a deterministic toy
//! transformer with a dual KV cache to exercise those rules end to end,
//! schedule and queueing models for the latency side, and a line-oriented
//! reasoning-trace format with a structural validator.

pub mod cli;
pub mod cot;
pub mod engine;
pub mod latency;
pub mod mask;
pub mod pipeline;
pub mod rope;
pub mod stream;
pub(crate) mod util;
