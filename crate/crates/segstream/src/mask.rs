//! Segment-level streaming causal mask: unit-level admissibility between the
//! received and generated streams, its token-level expansion, and the
//! attention backend classification used to dispatch each call shape.
//!
//! The unit rule is: received units attend earlier-or-same received units;
//! generated units attend received units up to their own slot and generated
//! units up to themselves; received units never attend generated units.
//! Token masks refine the diagonal blocks causally (always for generated
//! units, configurably for received units).

use thiserror::Error;

use crate::stream::UnitStream;

/// A unit slot on one of the two streams (1-based index).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum UnitRef {
    Received(usize),
    Generated(usize),
}

impl UnitRef {
    pub fn index(self) -> usize {
        match self {
            UnitRef::Received(u) | UnitRef::Generated(u) => u,
        }
    }

    pub fn is_received(self) -> bool {
        matches!(self, UnitRef::Received(_))
    }
}

/// How tokens inside a single received unit see each other.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum WithinReceived {
    /// Local causal order within the unit (matches a plain causal kernel).
    #[default]
    Causal,
    /// Every token of the unit sees the whole unit.
    Full,
}

#[derive(Debug, Error, PartialEq)]
pub enum MaskError {
    #[error("mask covers {mask_units} units but the stream has {stream_units}")]
    UnitCountMismatch { mask_units: usize, stream_units: usize },
    #[error("{given} generated lengths given but the stream has only {units} units")]
    TooManyGeneratedLengths { given: usize, units: usize },
    #[error("generated lengths known for {have} of {needed} units being expanded")]
    MissingGeneratedLengths { needed: usize, have: usize },
    #[error("attention shape q_len={q_len}, k_len={k_len} is unsupported")]
    UnsupportedShape { q_len: usize, k_len: usize },
}

/// Dense unit-level admissibility table over `[R_1..R_U, C_1..C_U]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SegMask {
    n_units: usize,
    bits: Vec<bool>,
}

/// Builds the unit-level mask for a stream of `U` received units and their
/// aligned generated slots.
pub fn build_seg_mask(stream: &UnitStream) -> SegMask {
    let n = stream.num_units();
    let side = 2 * n;
    let mut bits = vec![false; side * side];
    for qi in 0..side {
        for ki in 0..side {
            let q = SegMask::unit_of(n, qi);
            let k = SegMask::unit_of(n, ki);
            bits[qi * side + ki] = match (q, k) {
                (UnitRef::Received(u), UnitRef::Received(v)) => v <= u,
                (UnitRef::Received(_), UnitRef::Generated(_)) => false,
                (UnitRef::Generated(u), UnitRef::Received(v)) => v <= u,
                (UnitRef::Generated(u), UnitRef::Generated(k)) => k <= u,
            };
        }
    }
    SegMask { n_units: n, bits }
}

impl SegMask {
    fn unit_of(n_units: usize, slot: usize) -> UnitRef {
        if slot < n_units {
            UnitRef::Received(slot + 1)
        } else {
            UnitRef::Generated(slot - n_units + 1)
        }
    }

    fn slot(&self, u: UnitRef) -> usize {
        match u {
            UnitRef::Received(i) => i - 1,
            UnitRef::Generated(i) => self.n_units + i - 1,
        }
    }

    pub fn n_units(&self) -> usize {
        self.n_units
    }

    /// Whether any token of query unit `q` may attend any token of key unit
    /// `k` (before within-unit causal refinement).
    pub fn admits(&self, q: UnitRef, k: UnitRef) -> bool {
        debug_assert!(q.index() >= 1 && q.index() <= self.n_units);
        debug_assert!(k.index() >= 1 && k.index() <= self.n_units);
        self.bits[self.slot(q) * 2 * self.n_units + self.slot(k)]
    }

    /// Received-unit indices a generated unit may attend.
    pub fn received_keys_of(&self, generated: usize) -> Vec<usize> {
        (1..=self.n_units)
            .filter(|&v| self.admits(UnitRef::Generated(generated), UnitRef::Received(v)))
            .collect()
    }
}

/// Identity of one token in the concatenated sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TokenProvenance {
    pub unit: UnitRef,
    pub local: usize,
}

/// Whether token `q` may attend token `k`, computed directly from unit
/// indices and local offsets (no table). The dense [`TokenMask`] must agree
/// with this predicate bit for bit.
pub fn token_admissible(mode: WithinReceived, q: TokenProvenance, k: TokenProvenance) -> bool {
    match (q.unit, k.unit) {
        (UnitRef::Received(u), UnitRef::Received(v)) => {
            if v < u {
                true
            } else if v == u {
                match mode {
                    WithinReceived::Full => true,
                    WithinReceived::Causal => k.local <= q.local,
                }
            } else {
                false
            }
        }
        (UnitRef::Received(_), UnitRef::Generated(_)) => false,
        (UnitRef::Generated(u), UnitRef::Received(v)) => v <= u,
        (UnitRef::Generated(u), UnitRef::Generated(g)) => {
            if g < u {
                true
            } else if g == u {
                k.local <= q.local
            } else {
                false
            }
        }
    }
}

/// Dense token-level mask over the concatenated order
/// `[R_1..R_U, C_1..C_P]`, with per-token provenance on both axes.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenMask {
    q: Vec<TokenProvenance>,
    k: Vec<TokenProvenance>,
    bits: Vec<bool>,
}

impl TokenMask {
    pub fn q_len(&self) -> usize {
        self.q.len()
    }

    pub fn k_len(&self) -> usize {
        self.k.len()
    }

    pub fn allowed(&self, qi: usize, ki: usize) -> bool {
        self.bits[qi * self.k.len() + ki]
    }

    pub fn q_tokens(&self) -> &[TokenProvenance] {
        &self.q
    }

    pub fn k_tokens(&self) -> &[TokenProvenance] {
        &self.k
    }

    /// True when the mask is square and exactly lower-triangular.
    pub fn is_dense_causal(&self) -> bool {
        if self.q.len() != self.k.len() {
            return false;
        }
        for qi in 0..self.q.len() {
            for ki in 0..self.k.len() {
                if self.allowed(qi, ki) != (ki <= qi) {
                    return false;
                }
            }
        }
        true
    }
}

/// Token order of the concatenated sequence: every received unit's tokens in
/// arrival order, then the first `gen_lens.len()` generated units' tokens.
pub fn token_order(stream: &UnitStream, gen_lens: &[usize]) -> Vec<TokenProvenance> {
    let mut order = Vec::new();
    for r in stream.received() {
        for local in 0..r.token_count() {
            order.push(TokenProvenance { unit: UnitRef::Received(r.arrival_index), local });
        }
    }
    for (i, &len) in gen_lens.iter().enumerate() {
        for local in 0..len {
            order.push(TokenProvenance { unit: UnitRef::Generated(i + 1), local });
        }
    }
    order
}

/// Expands a unit-level mask to token level for the concatenated sequence
/// covering all received units plus the generated prefix described by
/// `gen_lens` (one length per generated unit present; may be shorter than the
/// stream). The table is filled block-by-block from the unit mask, with
/// within-unit causal refinement on the diagonal.
pub fn expand_token_mask(
    seg: &SegMask,
    stream: &UnitStream,
    gen_lens: &[usize],
    mode: WithinReceived,
) -> Result<TokenMask, MaskError> {
    if seg.n_units() != stream.num_units() {
        return Err(MaskError::UnitCountMismatch {
            mask_units: seg.n_units(),
            stream_units: stream.num_units(),
        });
    }
    if gen_lens.len() > stream.num_units() {
        return Err(MaskError::TooManyGeneratedLengths {
            given: gen_lens.len(),
            units: stream.num_units(),
        });
    }
    let order = token_order(stream, gen_lens);
    let n = order.len();
    let mut bits = vec![false; n * n];
    for qi in 0..n {
        let q = order[qi];
        for ki in 0..n {
            let k = order[ki];
            let admit = if q.unit == k.unit {
                match q.unit {
                    UnitRef::Received(_) => match mode {
                        WithinReceived::Full => true,
                        WithinReceived::Causal => k.local <= q.local,
                    },
                    UnitRef::Generated(_) => k.local <= q.local,
                }
            } else {
                seg.admits(q.unit, k.unit)
            };
            bits[qi * n + ki] = admit;
        }
    }
    Ok(TokenMask { q: order.clone(), k: order, bits })
}

/// Expands the mask over the full stream, taking generated lengths from the
/// stream's own generated units; every slot must be present.
pub fn expand_full(
    seg: &SegMask,
    stream: &UnitStream,
    mode: WithinReceived,
) -> Result<TokenMask, MaskError> {
    if stream.generated().len() != stream.num_units() {
        return Err(MaskError::MissingGeneratedLengths {
            needed: stream.num_units(),
            have: stream.generated().len(),
        });
    }
    let lens: Vec<usize> = stream.generated().iter().map(|g| g.token_count()).collect();
    expand_token_mask(seg, stream, &lens, mode)
}

/// Attention call shapes, named for the kernel strategy each one admits.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BackendClass {
    /// Square, exactly causal: a plain fused causal kernel applies.
    DenseCausalPrefill,
    /// One query row against a longer key prefix.
    SingleTokenDecode,
    /// A query chunk against a longer (or structurally masked) key set; needs
    /// the explicit mask.
    MaskedChunk,
}

/// Picks the backend for an attention call. Exactly one class applies to any
/// legal shape; queries longer than keys are rejected.
pub fn classify_attention(
    q_len: usize,
    k_len: usize,
    dense_causal: bool,
) -> Result<BackendClass, MaskError> {
    if q_len == 0 || k_len == 0 || q_len > k_len {
        return Err(MaskError::UnsupportedShape { q_len, k_len });
    }
    if q_len == 1 {
        return Ok(BackendClass::SingleTokenDecode);
    }
    if q_len == k_len && dense_causal {
        return Ok(BackendClass::DenseCausalPrefill);
    }
    Ok(BackendClass::MaskedChunk)
}
