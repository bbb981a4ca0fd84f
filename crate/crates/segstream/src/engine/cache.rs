//! Dual KV cache: independent append-only stores for the input (source) and
//! output (decode) streams. Decoding reads the source side only through a
//! unit-bounded snapshot, so appends racing ahead of the decoder can never
//! leak into an earlier unit's attention.

use crate::rope::TokenPosition;

use super::EngineError;

#[derive(Debug, Clone, PartialEq)]
struct KvLayer {
    keys: Vec<f64>,
    values: Vec<f64>,
}

/// Append-only per-layer key/value store for one stream side.
#[derive(Debug, Clone, PartialEq)]
pub struct KvCache {
    stride: usize,
    layers: Vec<KvLayer>,
    positions: Vec<TokenPosition>,
    ids: Vec<u32>,
    unit_tokens: Vec<usize>,
}

impl KvCache {
    pub fn new(n_layers: usize, model_dim: usize) -> Self {
        Self {
            stride: model_dim,
            layers: vec![KvLayer { keys: Vec::new(), values: Vec::new() }; n_layers],
            positions: Vec::new(),
            ids: Vec::new(),
            unit_tokens: Vec::new(),
        }
    }

    /// Tokens stored (every layer holds one k/v row per token).
    pub fn token_len(&self) -> usize {
        self.positions.len()
    }

    /// Completed units stored.
    pub fn units(&self) -> usize {
        self.unit_tokens.len()
    }

    /// Tokens covered by the first `units` units.
    pub fn tokens_through(&self, units: usize) -> usize {
        self.unit_tokens[..units].iter().sum()
    }

    pub fn positions(&self) -> &[TokenPosition] {
        &self.positions
    }

    pub fn ids(&self) -> &[u32] {
        &self.ids
    }

    /// Stable byte serialization of the first `n_tokens` entries (ids,
    /// positions, and every layer's k/v rows). Appends must never change it.
    pub fn prefix_bytes(&self, n_tokens: usize) -> Vec<u8> {
        let mut out = Vec::new();
        for id in &self.ids[..n_tokens] {
            out.extend_from_slice(&id.to_le_bytes());
        }
        for p in &self.positions[..n_tokens] {
            for axis in [p.t, p.h, p.w] {
                out.extend_from_slice(&(axis as u64).to_le_bytes());
            }
        }
        for layer in &self.layers {
            for v in &layer.keys[..n_tokens * self.stride] {
                out.extend_from_slice(&v.to_le_bytes());
            }
            for v in &layer.values[..n_tokens * self.stride] {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    /// A standalone copy of the first `units` units, used when a decoder runs
    /// against a writer that keeps appending (each side stays single-writer).
    pub fn clone_prefix(&self, units: usize) -> Result<KvCache, EngineError> {
        if units > self.units() {
            return Err(EngineError::SnapshotTooShort { unit: units, ingested: self.units() });
        }
        let n = self.tokens_through(units);
        Ok(KvCache {
            stride: self.stride,
            layers: self
                .layers
                .iter()
                .map(|l| KvLayer {
                    keys: l.keys[..n * self.stride].to_vec(),
                    values: l.values[..n * self.stride].to_vec(),
                })
                .collect(),
            positions: self.positions[..n].to_vec(),
            ids: self.ids[..n].to_vec(),
            unit_tokens: self.unit_tokens[..units].to_vec(),
        })
    }

    /// Read-only view bounded at the end of unit `units`; the only way the
    /// engine addresses source entries during decoding.
    pub fn snapshot(&self, units: usize) -> Result<Snapshot<'_>, EngineError> {
        if units > self.units() {
            return Err(EngineError::SnapshotTooShort { unit: units, ingested: self.units() });
        }
        Ok(Snapshot { cache: self, tokens: self.tokens_through(units) })
    }

    pub(crate) fn push_token(&mut self, id: u32, pos: TokenPosition) {
        self.ids.push(id);
        self.positions.push(pos);
    }

    pub(crate) fn push_kv(&mut self, layer: usize, k: &[f64], v: &[f64]) {
        debug_assert_eq!(k.len(), self.stride);
        debug_assert_eq!(v.len(), self.stride);
        self.layers[layer].keys.extend_from_slice(k);
        self.layers[layer].values.extend_from_slice(v);
    }

    pub(crate) fn end_unit(&mut self, n_tokens: usize) {
        self.unit_tokens.push(n_tokens);
        debug_assert_eq!(self.token_len(), self.unit_tokens.iter().sum::<usize>());
    }

    pub(crate) fn key(&self, layer: usize, token: usize) -> &[f64] {
        &self.layers[layer].keys[token * self.stride..(token + 1) * self.stride]
    }

    pub(crate) fn value(&self, layer: usize, token: usize) -> &[f64] {
        &self.layers[layer].values[token * self.stride..(token + 1) * self.stride]
    }
}

/// Unit-bounded read view of a [`KvCache`].
pub struct Snapshot<'a> {
    cache: &'a KvCache,
    tokens: usize,
}

impl Snapshot<'_> {
    pub fn token_len(&self) -> usize {
        self.tokens
    }

    pub(crate) fn key(&self, layer: usize, token: usize) -> &[f64] {
        assert!(token < self.tokens, "snapshot read past its bound");
        self.cache.key(layer, token)
    }

    pub(crate) fn value(&self, layer: usize, token: usize) -> &[f64] {
        assert!(token < self.tokens, "snapshot read past its bound");
        self.cache.value(layer, token)
    }

    pub(crate) fn last_id(&self) -> u32 {
        assert!(self.tokens > 0);
        self.cache.ids[self.tokens - 1]
    }

    pub(crate) fn last_position(&self) -> TokenPosition {
        assert!(self.tokens > 0);
        self.cache.positions[self.tokens - 1]
    }
}

/// The two cache sides of one engine run. Each side has a single writer:
/// ingestion appends to `source`, decoding appends to `decode`.
#[derive(Debug, Clone, PartialEq)]
pub struct DualKvCache {
    pub source: KvCache,
    pub decode: KvCache,
}

impl DualKvCache {
    pub fn new(n_layers: usize, model_dim: usize) -> Self {
        Self {
            source: KvCache::new(n_layers, model_dim),
            decode: KvCache::new(n_layers, model_dim),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn prefix_bytes_survive_later_appends() {
        let mut c = KvCache::new(2, 4);
        c.push_token(1, TokenPosition::replicated(0));
        for l in 0..2 {
            c.push_kv(l, &[1.0, 2.0, 3.0, 4.0], &[5.0, 6.0, 7.0, 8.0]);
        }
        c.end_unit(1);
        let before = c.prefix_bytes(1);
        c.push_token(2, TokenPosition::replicated(1));
        for l in 0..2 {
            c.push_kv(l, &[9.0; 4], &[10.0; 4]);
        }
        c.end_unit(1);
        assert_eq!(c.prefix_bytes(1), before);
        assert_eq!(c.units(), 2);
        assert_eq!(c.tokens_through(1), 1);
    }

    #[test]
    fn snapshots_are_bounded_by_ingested_units() {
        let c = KvCache::new(1, 2);
        assert!(matches!(
            c.snapshot(1),
            Err(EngineError::SnapshotTooShort { unit: 1, ingested: 0 })
        ));
        let mut c = c;
        c.push_token(3, TokenPosition::replicated(0));
        c.push_kv(0, &[0.0, 0.0], &[0.0, 0.0]);
        c.end_unit(1);
        let snap = c.snapshot(1).unwrap();
        assert_eq!(snap.token_len(), 1);
        assert_eq!(snap.last_id(), 3);
    }

    #[test]
    fn clone_prefix_copies_exactly_the_requested_units() {
        let mut c = KvCache::new(1, 2);
        for (i, id) in [10u32, 11, 12].iter().enumerate() {
            c.push_token(*id, TokenPosition::replicated(i));
            c.push_kv(0, &[i as f64, 0.0], &[0.0, i as f64]);
            c.end_unit(1);
        }
        let p = c.clone_prefix(2).unwrap();
        assert_eq!(p.units(), 2);
        assert_eq!(p.ids(), &[10, 11]);
        assert_eq!(p.prefix_bytes(2), c.prefix_bytes(2));
    }
}
