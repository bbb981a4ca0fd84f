//! Deterministic toy transformer that exercises the streaming rules end to
//! end: seeded weights, banded rotary positions, segment-level masking, and a
//! dual-cache streaming path whose per-token outputs must match a monolithic
//! forward pass over the concatenated sequence.
//!
//! Both paths funnel every attention row through the same kernel with keys in
//! ascending sequence order, so "equivalent" means bit-for-bit in practice,
//! not merely within tolerance.

pub mod cache;
pub mod math;
pub mod tokens;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::mask::{build_seg_mask, classify_attention, expand_token_mask, MaskError, WithinReceived};
use crate::rope::{
    assign_positions, compute_offsets, segment_token_positions, text_token_positions,
    apply_rope_inplace, OffsetTable, RopeConfig, RopeError, TokenPosition,
};
use crate::stream::{UnitPayload, UnitStream};
use cache::{DualKvCache, KvCache, Snapshot};
use math::{argmax_lowest, attend, matvec, rms_norm, silu, Matrix};
use tokens::{sequence_layout, SequenceLayout, StreamTokens};

pub use cache::{DualKvCache as Caches, KvCache as Cache};
pub use math::{argmax_lowest as greedy_pick, max_rel_diff};

#[derive(Debug, Error, PartialEq)]
pub enum EngineError {
    #[error("invalid engine config: {0}")]
    InvalidConfig(String),
    #[error("unit {got} ingested out of order (expected unit {expected})")]
    OutOfOrderIngest { expected: usize, got: usize },
    #[error("unit {got} decoded out of order (expected unit {expected})")]
    OutOfOrderDecode { expected: usize, got: usize },
    #[error("decoding unit {unit} requires {unit} ingested units, have {ingested}")]
    SnapshotTooShort { unit: usize, ingested: usize },
    #[error("unit {unit}: expected {expected} tokens, got {got}")]
    TokenCountMismatch { unit: usize, expected: usize, got: usize },
    #[error("offset table has no generated length for unit {unit}")]
    MissingGeneratedLength { unit: usize },
    #[error(transparent)]
    Rope(#[from] RopeError),
    #[error(transparent)]
    Mask(#[from] MaskError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct EngineConfig {
    pub n_layers: usize,
    pub n_heads: usize,
    pub head_dim: usize,
    pub vocab_size: usize,
    pub seed: u64,
    pub rope: RopeConfig,
    pub within_received: WithinReceived,
}

impl EngineConfig {
    pub fn model_dim(&self) -> usize {
        self.n_heads * self.head_dim
    }

    /// A small default model: 2 layers, 2 heads of 8 dims, vocab 97.
    pub fn small(seed: u64) -> Self {
        Self {
            n_layers: 2,
            n_heads: 2,
            head_dim: 8,
            vocab_size: 97,
            seed,
            rope: RopeConfig::even_split(8).expect("even head_dim"),
            within_received: WithinReceived::Causal,
        }
    }

    fn validate(&self) -> Result<(), EngineError> {
        if self.n_layers == 0 || self.n_heads == 0 {
            return Err(EngineError::InvalidConfig("layers and heads must be >= 1".into()));
        }
        if self.head_dim < 2 || self.head_dim % 2 != 0 {
            return Err(EngineError::InvalidConfig(format!(
                "head_dim {} must be even and >= 2",
                self.head_dim
            )));
        }
        if self.vocab_size < 2 {
            return Err(EngineError::InvalidConfig("vocab must have at least 2 tokens".into()));
        }
        if self.rope.head_dim != self.head_dim {
            return Err(EngineError::InvalidConfig(format!(
                "rotary config covers {} dims but heads have {}",
                self.rope.head_dim, self.head_dim
            )));
        }
        Ok(())
    }
}

#[derive(Debug)]
struct LayerWeights {
    wq: Matrix,
    wk: Matrix,
    wv: Matrix,
    wo: Matrix,
    w1: Matrix,
    w2: Matrix,
}

/// Pre-norm transformer with seeded uniform weights. Immutable once built;
/// all state lives in the caches the caller owns.
#[derive(Debug)]
pub struct Engine {
    cfg: EngineConfig,
    embedding: Matrix,
    layers: Vec<LayerWeights>,
    output: Matrix,
}

/// How a generated unit's tokens are chosen during decoding.
#[derive(Debug, Clone, Copy)]
pub enum DecodeMode<'a> {
    /// Force the given tokens (their length must match the offset table).
    Teacher(&'a [u32]),
    /// Greedy continuation; ties pick the lowest token id. The first token
    /// comes from the prefill logits of the newest source token visible in
    /// the snapshot.
    Greedy,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MonolithicOutput {
    /// Post-final-norm hidden rows, one per token of `[R_1..R_U, C_1..C_P]`.
    pub hidden: Matrix,
    pub logits: Matrix,
    pub layout: SequenceLayout,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IngestOutput {
    pub hidden: Matrix,
    pub logits: Matrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecodeOutput {
    pub tokens: Vec<u32>,
    pub hidden: Matrix,
    pub logits: Matrix,
}

struct Scratch {
    xn: Vec<f64>,
    ctx: Vec<f64>,
    proj: Vec<f64>,
    ffn: Vec<f64>,
    scores: Vec<f64>,
}

impl Scratch {
    fn new(model_dim: usize) -> Self {
        Self {
            xn: vec![0.0; model_dim],
            ctx: vec![0.0; model_dim],
            proj: vec![0.0; model_dim],
            ffn: vec![0.0; 2 * model_dim],
            scores: Vec::new(),
        }
    }
}

impl Engine {
    pub fn new(cfg: EngineConfig) -> Result<Self, EngineError> {
        cfg.validate()?;
        let md = cfg.model_dim();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let scale = 1.0 / (md as f64).sqrt();
        let embedding = Matrix::uniform(cfg.vocab_size, md, 1.0, &mut rng);
        let layers = (0..cfg.n_layers)
            .map(|_| LayerWeights {
                wq: Matrix::uniform(md, md, scale, &mut rng),
                wk: Matrix::uniform(md, md, scale, &mut rng),
                wv: Matrix::uniform(md, md, scale, &mut rng),
                wo: Matrix::uniform(md, md, scale, &mut rng),
                w1: Matrix::uniform(2 * md, md, scale, &mut rng),
                w2: Matrix::uniform(md, 2 * md, 1.0 / (2.0 * md as f64).sqrt(), &mut rng),
            })
            .collect();
        let output = Matrix::uniform(cfg.vocab_size, md, scale, &mut rng);
        Ok(Self { cfg, embedding, layers, output })
    }

    pub fn config(&self) -> &EngineConfig {
        &self.cfg
    }

    pub fn new_caches(&self) -> DualKvCache {
        DualKvCache::new(self.cfg.n_layers, self.cfg.model_dim())
    }

    fn embed_row(&self, id: u32) -> &[f64] {
        self.embedding.row(id as usize % self.cfg.vocab_size)
    }

    /// q/k/v for one normalized token row, with rotary rotation applied per
    /// head to q and k.
    fn qkv(
        &self,
        layer: usize,
        xn: &[f64],
        pos: TokenPosition,
        q: &mut [f64],
        k: &mut [f64],
        v: &mut [f64],
    ) {
        let lw = &self.layers[layer];
        matvec(&lw.wq, xn, q);
        matvec(&lw.wk, xn, k);
        matvec(&lw.wv, xn, v);
        let hd = self.cfg.head_dim;
        for h in 0..self.cfg.n_heads {
            apply_rope_inplace(&mut q[h * hd..(h + 1) * hd], pos, &self.cfg.rope);
            apply_rope_inplace(&mut k[h * hd..(h + 1) * hd], pos, &self.cfg.rope);
        }
    }

    /// Attention output projection, residual add, then the feed-forward block.
    fn finish_token(&self, layer: usize, x: &mut [f64], s: &mut Scratch) {
        let lw = &self.layers[layer];
        matvec(&lw.wo, &s.ctx, &mut s.proj);
        for (xd, p) in x.iter_mut().zip(&s.proj) {
            *xd += p;
        }
        rms_norm(x, &mut s.xn);
        matvec(&lw.w1, &s.xn, &mut s.ffn);
        for v in s.ffn.iter_mut() {
            *v = silu(*v);
        }
        matvec(&lw.w2, &s.ffn, &mut s.proj);
        for (xd, p) in x.iter_mut().zip(&s.proj) {
            *xd += p;
        }
    }

    fn head_rows(&self, x: &[f64], hidden: &mut Matrix, logits: &mut Matrix, s: &mut Scratch) {
        rms_norm(x, &mut s.xn);
        hidden.push_row(&s.xn);
        let mut row = vec![0.0; self.cfg.vocab_size];
        matvec(&self.output, &s.xn, &mut row);
        logits.push_row(&row);
    }

    fn validate_received_tokens(
        &self,
        stream: &UnitStream,
        toks: &StreamTokens,
    ) -> Result<(), EngineError> {
        if toks.received.len() != stream.num_units() {
            return Err(EngineError::TokenCountMismatch {
                unit: 0,
                expected: stream.num_units(),
                got: toks.received.len(),
            });
        }
        for unit in stream.received() {
            let got = toks.received[unit.arrival_index - 1].len();
            if got != unit.token_count() {
                return Err(EngineError::TokenCountMismatch {
                    unit: unit.arrival_index,
                    expected: unit.token_count(),
                    got,
                });
            }
        }
        Ok(())
    }

    /// Ground-truth forward pass over the whole concatenated sequence
    /// `[R_1..R_U, C_1..C_P]` under the expanded token mask. Generated units
    /// may cover any prefix of the stream's slots.
    pub fn forward_monolithic(
        &self,
        stream: &UnitStream,
        toks: &StreamTokens,
    ) -> Result<MonolithicOutput, EngineError> {
        self.validate_received_tokens(stream, toks)?;
        let gen_lens = toks.generated_lens();
        let offsets = compute_offsets(stream, &gen_lens)?;
        let positions = assign_positions(stream, &offsets);
        let seg = build_seg_mask(stream);
        let tmask = expand_token_mask(&seg, stream, &gen_lens, self.cfg.within_received)?;

        let mut ids: Vec<u32> = Vec::new();
        let mut pos: Vec<TokenPosition> = Vec::new();
        for (unit_ids, unit_pos) in toks.received.iter().zip(&positions.received) {
            ids.extend_from_slice(unit_ids);
            pos.extend_from_slice(unit_pos);
        }
        for (unit_ids, unit_pos) in toks.generated.iter().zip(&positions.generated) {
            ids.extend_from_slice(unit_ids);
            pos.extend_from_slice(unit_pos);
        }
        let n = ids.len();
        let md = self.cfg.model_dim();
        classify_attention(n, n, tmask.is_dense_causal())?;

        let mut x = vec![0.0; n * md];
        for (i, &id) in ids.iter().enumerate() {
            x[i * md..(i + 1) * md].copy_from_slice(self.embed_row(id));
        }
        let mut s = Scratch::new(md);
        for layer in 0..self.cfg.n_layers {
            let mut ks = vec![0.0; n * md];
            let mut vs = vec![0.0; n * md];
            let mut qs = vec![0.0; n * md];
            for i in 0..n {
                rms_norm(&x[i * md..(i + 1) * md], &mut s.xn);
                self.qkv(
                    layer,
                    &s.xn,
                    pos[i],
                    &mut qs[i * md..(i + 1) * md],
                    &mut ks[i * md..(i + 1) * md],
                    &mut vs[i * md..(i + 1) * md],
                );
            }
            let mut keybuf: Vec<(&[f64], &[f64])> = Vec::with_capacity(n);
            for i in 0..n {
                keybuf.clear();
                for j in 0..n {
                    if tmask.allowed(i, j) {
                        keybuf.push((&ks[j * md..(j + 1) * md], &vs[j * md..(j + 1) * md]));
                    }
                }
                attend(
                    &qs[i * md..(i + 1) * md],
                    &keybuf,
                    self.cfg.n_heads,
                    self.cfg.head_dim,
                    &mut s.ctx,
                    &mut s.scores,
                );
                self.finish_token(layer, &mut x[i * md..(i + 1) * md], &mut s);
            }
        }
        let mut hidden = Matrix::with_cols(md);
        let mut logits = Matrix::with_cols(self.cfg.vocab_size);
        for i in 0..n {
            self.head_rows(&x[i * md..(i + 1) * md], &mut hidden, &mut logits, &mut s);
        }
        Ok(MonolithicOutput { hidden, logits, layout: sequence_layout(stream, &gen_lens) })
    }

    /// Ingests the next received unit into the source cache as one chunk.
    /// Earlier source units are fully visible; within the chunk the
    /// configured mode applies. The decode cache is never consulted.
    pub fn ingest_received(
        &self,
        source: &mut KvCache,
        stream: &UnitStream,
        toks: &StreamTokens,
        unit_index: usize,
        offsets: &OffsetTable,
    ) -> Result<IngestOutput, EngineError> {
        if source.units() + 1 != unit_index {
            return Err(EngineError::OutOfOrderIngest {
                expected: source.units() + 1,
                got: unit_index,
            });
        }
        let unit = stream.unit(unit_index);
        let ids = &toks.received[unit_index - 1];
        if ids.len() != unit.token_count() {
            return Err(EngineError::TokenCountMismatch {
                unit: unit_index,
                expected: unit.token_count(),
                got: ids.len(),
            });
        }
        let base = offsets.unit_offset(unit_index);
        let upos = match &unit.payload {
            UnitPayload::Segment { grid, .. } => segment_token_positions(grid, base),
            UnitPayload::Question { tokens } => text_token_positions(tokens.len(), base),
        };
        let prev = source.token_len();
        let chunk = ids.len();
        let dense_causal = prev == 0 && self.cfg.within_received == WithinReceived::Causal;
        classify_attention(chunk, prev + chunk, dense_causal)?;

        let md = self.cfg.model_dim();
        for (&id, &p) in ids.iter().zip(&upos) {
            source.push_token(id, p);
        }
        let mut x = vec![0.0; chunk * md];
        for (i, &id) in ids.iter().enumerate() {
            x[i * md..(i + 1) * md].copy_from_slice(self.embed_row(id));
        }
        let mut s = Scratch::new(md);
        let mut k = vec![0.0; md];
        let mut v = vec![0.0; md];
        let mut qs = vec![0.0; chunk * md];
        for layer in 0..self.cfg.n_layers {
            for i in 0..chunk {
                rms_norm(&x[i * md..(i + 1) * md], &mut s.xn);
                self.qkv(layer, &s.xn, upos[i], &mut qs[i * md..(i + 1) * md], &mut k, &mut v);
                source.push_kv(layer, &k, &v);
            }
            let mut keybuf: Vec<(&[f64], &[f64])> = Vec::with_capacity(prev + chunk);
            for i in 0..chunk {
                keybuf.clear();
                let visible = match self.cfg.within_received {
                    WithinReceived::Causal => prev + i + 1,
                    WithinReceived::Full => prev + chunk,
                };
                for j in 0..visible {
                    keybuf.push((source.key(layer, j), source.value(layer, j)));
                }
                attend(
                    &qs[i * md..(i + 1) * md],
                    &keybuf,
                    self.cfg.n_heads,
                    self.cfg.head_dim,
                    &mut s.ctx,
                    &mut s.scores,
                );
                self.finish_token(layer, &mut x[i * md..(i + 1) * md], &mut s);
            }
        }
        source.end_unit(chunk);
        let mut hidden = Matrix::with_cols(md);
        let mut logits = Matrix::with_cols(self.cfg.vocab_size);
        for i in 0..chunk {
            self.head_rows(&x[i * md..(i + 1) * md], &mut hidden, &mut logits, &mut s);
        }
        Ok(IngestOutput { hidden, logits })
    }

    /// Decodes generated unit `unit_index` token by token. The source side is
    /// read through a snapshot bounded at unit `unit_index`, so ingestion may
    /// already have run ahead; the decode cache must hold exactly the earlier
    /// generated units.
    pub fn decode_generated_unit(
        &self,
        source: &KvCache,
        decode: &mut KvCache,
        mode: DecodeMode<'_>,
        unit_index: usize,
        offsets: &OffsetTable,
    ) -> Result<DecodeOutput, EngineError> {
        if decode.units() + 1 != unit_index {
            return Err(EngineError::OutOfOrderDecode {
                expected: decode.units() + 1,
                got: unit_index,
            });
        }
        let snap = source.snapshot(unit_index).map_err(|_| EngineError::SnapshotTooShort {
            unit: unit_index,
            ingested: source.units(),
        })?;
        let len = *offsets
            .generated_lens()
            .get(unit_index - 1)
            .ok_or(EngineError::MissingGeneratedLength { unit: unit_index })?;
        if let DecodeMode::Teacher(ts) = mode {
            if ts.len() != len {
                return Err(EngineError::TokenCountMismatch {
                    unit: unit_index,
                    expected: len,
                    got: ts.len(),
                });
            }
        }
        let base = offsets.generated_offset(unit_index);
        let md = self.cfg.model_dim();
        let mut s = Scratch::new(md);
        let mut q = vec![0.0; md];
        let mut k = vec![0.0; md];
        let mut v = vec![0.0; md];
        let mut hidden = Matrix::with_cols(md);
        let mut logits = Matrix::with_cols(self.cfg.vocab_size);
        let mut out_tokens = Vec::with_capacity(len);
        let mut next_greedy: Option<u32> = None;
        if len > 0 {
            if let DecodeMode::Greedy = mode {
                let probe = self.probe_source_row(&snap, &mut s);
                next_greedy = Some(argmax_lowest(&probe) as u32);
            }
        }
        for j in 0..len {
            let id = match mode {
                DecodeMode::Teacher(ts) => ts[j],
                DecodeMode::Greedy => next_greedy.expect("seeded above"),
            };
            let pos = TokenPosition::replicated(base + j);
            classify_attention(1, snap.token_len() + decode.token_len() + 1, false)?;
            decode.push_token(id, pos);
            let mut x = self.embed_row(id).to_vec();
            for layer in 0..self.cfg.n_layers {
                rms_norm(&x, &mut s.xn);
                self.qkv(layer, &s.xn, pos, &mut q, &mut k, &mut v);
                decode.push_kv(layer, &k, &v);
                let mut keybuf: Vec<(&[f64], &[f64])> =
                    Vec::with_capacity(snap.token_len() + decode.token_len());
                for t in 0..snap.token_len() {
                    keybuf.push((snap.key(layer, t), snap.value(layer, t)));
                }
                for t in 0..decode.token_len() {
                    keybuf.push((decode.key(layer, t), decode.value(layer, t)));
                }
                attend(&q, &keybuf, self.cfg.n_heads, self.cfg.head_dim, &mut s.ctx, &mut s.scores);
                self.finish_token(layer, &mut x, &mut s);
            }
            self.head_rows(&x, &mut hidden, &mut logits, &mut s);
            if let DecodeMode::Greedy = mode {
                next_greedy = Some(argmax_lowest(logits.row(j)) as u32);
            }
            out_tokens.push(id);
        }
        decode.end_unit(len);
        Ok(DecodeOutput { tokens: out_tokens, hidden, logits })
    }

    /// Recomputes the head logits of the newest source token in the snapshot
    /// (its row depends only on source keys, so this exactly reproduces the
    /// prefill logits that seed greedy decoding).
    fn probe_source_row(&self, snap: &Snapshot<'_>, s: &mut Scratch) -> Vec<f64> {
        let md = self.cfg.model_dim();
        let mut x = self.embed_row(snap.last_id()).to_vec();
        let pos = snap.last_position();
        let mut q = vec![0.0; md];
        let mut k = vec![0.0; md];
        let mut v = vec![0.0; md];
        for layer in 0..self.cfg.n_layers {
            rms_norm(&x, &mut s.xn);
            self.qkv(layer, &s.xn, pos, &mut q, &mut k, &mut v);
            let mut keybuf: Vec<(&[f64], &[f64])> = Vec::with_capacity(snap.token_len());
            for t in 0..snap.token_len() {
                keybuf.push((snap.key(layer, t), snap.value(layer, t)));
            }
            attend(&q, &keybuf, self.cfg.n_heads, self.cfg.head_dim, &mut s.ctx, &mut s.scores);
            self.finish_token(layer, &mut x, &mut *s);
        }
        rms_norm(&x, &mut s.xn);
        let mut row = vec![0.0; self.cfg.vocab_size];
        matvec(&self.output, &s.xn, &mut row);
        row
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stream::{demo_stream, UnitDescriptor, UnitStream, VisualGrid};

    fn mixed_stream() -> UnitStream {
        UnitStream::build(vec![
            UnitDescriptor::Segment { grid: VisualGrid::new(2, 2, 1), time: None },
            UnitDescriptor::Question { tokens: vec![40, 41, 42] },
            UnitDescriptor::Segment { grid: VisualGrid::new(3, 1, 2), time: None },
        ])
        .unwrap()
    }

    fn stream_pair() -> (UnitStream, StreamTokens) {
        let stream = mixed_stream();
        let toks = StreamTokens::derive(&stream, &[2, 3, 2]);
        (stream, toks)
    }

    /// Ingest and teacher-decode every unit in order, returning per-unit outputs.
    fn run_streaming(
        engine: &Engine,
        stream: &UnitStream,
        toks: &StreamTokens,
    ) -> (Vec<IngestOutput>, Vec<DecodeOutput>) {
        let offsets = compute_offsets(stream, &toks.generated_lens()).unwrap();
        let mut caches = engine.new_caches();
        let mut ingests = Vec::new();
        let mut decodes = Vec::new();
        for u in 1..=stream.num_units() {
            ingests.push(
                engine.ingest_received(&mut caches.source, stream, toks, u, &offsets).unwrap(),
            );
            decodes.push(
                engine
                    .decode_generated_unit(
                        &caches.source,
                        &mut caches.decode,
                        DecodeMode::Teacher(&toks.generated[u - 1]),
                        u,
                        &offsets,
                    )
                    .unwrap(),
            );
        }
        (ingests, decodes)
    }

    #[test]
    fn streaming_matches_monolithic_in_both_modes() {
        for mode in [WithinReceived::Causal, WithinReceived::Full] {
            let mut cfg = EngineConfig::small(11);
            cfg.within_received = mode;
            let engine = Engine::new(cfg).unwrap();
            let (stream, toks) = stream_pair();
            let mono = engine.forward_monolithic(&stream, &toks).unwrap();
            let (ingests, decodes) = run_streaming(&engine, &stream, &toks);
            for (u, out) in ingests.iter().enumerate() {
                let range = mono.layout.received[u].clone();
                for (local, row) in range.enumerate() {
                    let diff: f64 = out
                        .logits
                        .row(local)
                        .iter()
                        .zip(mono.logits.row(row))
                        .map(|(a, b)| (a - b).abs())
                        .fold(0.0, f64::max);
                    assert!(diff < 1e-10, "mode {mode:?} ingest unit {} row {local}: {diff}", u + 1);
                }
            }
            for (u, out) in decodes.iter().enumerate() {
                let range = mono.layout.generated[u].clone();
                for (local, row) in range.enumerate() {
                    assert_eq!(
                        out.logits.row(local),
                        mono.logits.row(row),
                        "mode {mode:?} decode unit {} row {local} must match exactly",
                        u + 1
                    );
                }
            }
        }
    }

    #[test]
    fn within_received_mode_changes_the_numbers() {
        let engine_c = Engine::new(EngineConfig::small(3)).unwrap();
        let mut cfg = EngineConfig::small(3);
        cfg.within_received = WithinReceived::Full;
        let engine_f = Engine::new(cfg).unwrap();
        let (stream, toks) = stream_pair();
        let a = engine_c.forward_monolithic(&stream, &toks).unwrap();
        let b = engine_f.forward_monolithic(&stream, &toks).unwrap();
        assert!(max_rel_diff(&a.logits, &b.logits) > 1e-9);
    }

    #[test]
    fn same_seed_reproduces_different_seed_diverges() {
        let (stream, toks) = stream_pair();
        let a = Engine::new(EngineConfig::small(5)).unwrap();
        let b = Engine::new(EngineConfig::small(5)).unwrap();
        let c = Engine::new(EngineConfig::small(6)).unwrap();
        let la = a.forward_monolithic(&stream, &toks).unwrap().logits;
        let lb = b.forward_monolithic(&stream, &toks).unwrap().logits;
        let lc = c.forward_monolithic(&stream, &toks).unwrap().logits;
        assert_eq!(la, lb, "same seed must reproduce bit-identical logits");
        assert!(max_rel_diff(&la, &lc) > 1e-9, "different seeds must diverge");
    }

    #[test]
    fn config_validation() {
        let mut cfg = EngineConfig::small(0);
        cfg.head_dim = 7;
        assert!(matches!(Engine::new(cfg).unwrap_err(), EngineError::InvalidConfig(_)));
        let mut cfg = EngineConfig::small(0);
        cfg.vocab_size = 1;
        assert!(matches!(Engine::new(cfg).unwrap_err(), EngineError::InvalidConfig(_)));
        let mut cfg = EngineConfig::small(0);
        cfg.n_layers = 0;
        assert!(matches!(Engine::new(cfg).unwrap_err(), EngineError::InvalidConfig(_)));
        let mut cfg = EngineConfig::small(0);
        cfg.head_dim = 16;
        assert!(
            matches!(Engine::new(cfg).unwrap_err(), EngineError::InvalidConfig(msg) if msg.contains("rotary")),
            "rope band width must match head_dim"
        );
    }

    #[test]
    fn seven_unit_stream_yields_fourteen_rows() {
        let stream = demo_stream();
        let toks = StreamTokens::derive(&stream, &[1; 7]);
        let engine = Engine::new(EngineConfig::small(1)).unwrap();
        let out = engine.forward_monolithic(&stream, &toks).unwrap();
        assert_eq!(out.logits.rows(), 14);
        assert_eq!(out.hidden.rows(), 14);
    }

    #[test]
    fn perturbing_a_future_unit_leaves_earlier_rows_untouched() {
        let engine = Engine::new(EngineConfig::small(9)).unwrap();
        let (stream, toks) = stream_pair();
        let base = engine.forward_monolithic(&stream, &toks).unwrap();
        let mut poked = toks.clone();
        poked.received[2][0] = poked.received[2][0].wrapping_add(1);
        let out = engine.forward_monolithic(&stream, &poked).unwrap();
        for u in 0..2 {
            for row in base.layout.generated[u].clone() {
                assert_eq!(
                    base.logits.row(row),
                    out.logits.row(row),
                    "generated unit {} must be bit-identical",
                    u + 1
                );
            }
            for row in base.layout.received[u].clone() {
                assert_eq!(base.logits.row(row), out.logits.row(row));
            }
        }
        let last = base.layout.received[2].clone();
        assert_ne!(
            base.logits.row(last.start),
            out.logits.row(last.start),
            "the perturbed unit itself must change"
        );
    }

    #[test]
    fn decode_positions_restart_at_zero() {
        let engine = Engine::new(EngineConfig::small(2)).unwrap();
        let (stream, toks) = stream_pair();
        let offsets = compute_offsets(&stream, &toks.generated_lens()).unwrap();
        let mut caches = engine.new_caches();
        engine.ingest_received(&mut caches.source, &stream, &toks, 1, &offsets).unwrap();
        engine
            .decode_generated_unit(
                &caches.source,
                &mut caches.decode,
                DecodeMode::Teacher(&toks.generated[0]),
                1,
                &offsets,
            )
            .unwrap();
        assert_eq!(caches.decode.positions()[0], TokenPosition::replicated(0));
        assert!(
            caches.source.positions()[0].t == 0,
            "input positions are independent of the output stream"
        );
    }

    #[test]
    fn ordering_violations_are_rejected() {
        let engine = Engine::new(EngineConfig::small(4)).unwrap();
        let (stream, toks) = stream_pair();
        let offsets = compute_offsets(&stream, &toks.generated_lens()).unwrap();
        let mut caches = engine.new_caches();
        assert_eq!(
            engine
                .ingest_received(&mut caches.source, &stream, &toks, 2, &offsets)
                .unwrap_err(),
            EngineError::OutOfOrderIngest { expected: 1, got: 2 }
        );
        assert_eq!(
            engine
                .decode_generated_unit(
                    &caches.source,
                    &mut caches.decode,
                    DecodeMode::Teacher(&toks.generated[0]),
                    1,
                    &offsets,
                )
                .unwrap_err(),
            EngineError::SnapshotTooShort { unit: 1, ingested: 0 }
        );
        engine.ingest_received(&mut caches.source, &stream, &toks, 1, &offsets).unwrap();
        assert_eq!(
            engine
                .decode_generated_unit(
                    &caches.source,
                    &mut caches.decode,
                    DecodeMode::Teacher(&toks.generated[1]),
                    2,
                    &offsets,
                )
                .unwrap_err(),
            EngineError::OutOfOrderDecode { expected: 1, got: 2 }
        );
    }

    #[test]
    fn caches_are_append_only_under_streaming() {
        let engine = Engine::new(EngineConfig::small(8)).unwrap();
        let (stream, toks) = stream_pair();
        let offsets = compute_offsets(&stream, &toks.generated_lens()).unwrap();
        let mut caches = engine.new_caches();
        engine.ingest_received(&mut caches.source, &stream, &toks, 1, &offsets).unwrap();
        engine
            .decode_generated_unit(
                &caches.source,
                &mut caches.decode,
                DecodeMode::Teacher(&toks.generated[0]),
                1,
                &offsets,
            )
            .unwrap();
        let src_bytes = caches.source.prefix_bytes(caches.source.token_len());
        let dec_bytes = caches.decode.prefix_bytes(caches.decode.token_len());
        let src_tokens = caches.source.token_len();
        let dec_tokens = caches.decode.token_len();
        for u in 2..=stream.num_units() {
            engine.ingest_received(&mut caches.source, &stream, &toks, u, &offsets).unwrap();
            engine
                .decode_generated_unit(
                    &caches.source,
                    &mut caches.decode,
                    DecodeMode::Teacher(&toks.generated[u - 1]),
                    u,
                    &offsets,
                )
                .unwrap();
        }
        assert_eq!(caches.source.prefix_bytes(src_tokens), src_bytes);
        assert_eq!(caches.decode.prefix_bytes(dec_tokens), dec_bytes);
    }

    #[test]
    fn greedy_decode_replays_as_teacher() {
        let engine = Engine::new(EngineConfig::small(21)).unwrap();
        let (stream, toks) = stream_pair();
        let offsets = compute_offsets(&stream, &toks.generated_lens()).unwrap();
        let mut caches = engine.new_caches();
        engine.ingest_received(&mut caches.source, &stream, &toks, 1, &offsets).unwrap();
        let greedy = engine
            .decode_generated_unit(&caches.source, &mut caches.decode, DecodeMode::Greedy, 1, &offsets)
            .unwrap();
        for j in 0..greedy.tokens.len() - 1 {
            assert_eq!(
                greedy.tokens[j + 1],
                argmax_lowest(greedy.logits.row(j)) as u32,
                "greedy must follow its own logits"
            );
        }
        let mut replay = engine.new_caches();
        engine.ingest_received(&mut replay.source, &stream, &toks, 1, &offsets).unwrap();
        let forced = engine
            .decode_generated_unit(
                &replay.source,
                &mut replay.decode,
                DecodeMode::Teacher(&greedy.tokens),
                1,
                &offsets,
            )
            .unwrap();
        assert_eq!(forced.logits, greedy.logits);
    }

    #[test]
    fn zero_length_generated_unit_is_a_counted_noop() {
        let stream = mixed_stream();
        let toks = StreamTokens::derive(&stream, &[0, 2, 1]);
        let engine = Engine::new(EngineConfig::small(13)).unwrap();
        let offsets = compute_offsets(&stream, &toks.generated_lens()).unwrap();
        let mut caches = engine.new_caches();
        engine.ingest_received(&mut caches.source, &stream, &toks, 1, &offsets).unwrap();
        let out = engine
            .decode_generated_unit(&caches.source, &mut caches.decode, DecodeMode::Greedy, 1, &offsets)
            .unwrap();
        assert!(out.tokens.is_empty());
        assert_eq!(caches.decode.token_len(), 0);
        assert_eq!(caches.decode.units(), 1, "the empty unit still occupies its slot");
    }
}
