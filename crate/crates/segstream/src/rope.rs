//! Decoupled positional encoding. Input-stream offsets accumulate only
//! received-unit spans; output-stream offsets accumulate only generated
//! lengths. The two never mix, so growing answers cannot shift what the
//! input stream sees, and a banded rotary rotation consumes the resulting
//! three-axis positions.

use thiserror::Error;

use crate::stream::{UnitPayload, UnitStream, VisualGrid};

/// Three-axis token position (temporal, height, width).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TokenPosition {
    pub t: usize,
    pub h: usize,
    pub w: usize,
}

impl TokenPosition {
    /// Text tokens carry one scalar position replicated on all axes.
    pub fn replicated(p: usize) -> Self {
        Self { t: p, h: p, w: p }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum RopeError {
    #[error("invalid rotary config: {0}")]
    InvalidConfig(String),
    #[error("vector has {got} dims, rotary config expects {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("{given} generated lengths for a stream of {units} units")]
    LengthMismatch { given: usize, units: usize },
}

/// Banded rotary configuration: how many dims of a head each axis owns.
#[derive(Debug, Clone, PartialEq)]
pub struct RopeConfig {
    pub head_dim: usize,
    /// Dims assigned to (t, h, w). Each band must be even (rotations act on
    /// consecutive pairs) and the three must sum to `head_dim`.
    pub bands: [usize; 3],
    pub base_theta: f64,
}

impl RopeConfig {
    pub fn new(head_dim: usize, bands: [usize; 3], base_theta: f64) -> Result<Self, RopeError> {
        if bands.iter().any(|b| b % 2 != 0) {
            return Err(RopeError::InvalidConfig(format!("bands {bands:?} must all be even")));
        }
        if bands.iter().sum::<usize>() != head_dim {
            return Err(RopeError::InvalidConfig(format!(
                "bands {bands:?} must sum to head_dim {head_dim}"
            )));
        }
        if !(base_theta > 0.0) {
            return Err(RopeError::InvalidConfig(format!("base theta {base_theta} must be > 0")));
        }
        Ok(Self { head_dim, bands, base_theta })
    }

    /// Splits `head_dim` as equally as possible across the three axes while
    /// keeping every band even; leftovers go to the t then h bands.
    pub fn even_split(head_dim: usize) -> Result<Self, RopeError> {
        if head_dim == 0 || head_dim % 2 != 0 {
            return Err(RopeError::InvalidConfig(format!("head_dim {head_dim} must be even")));
        }
        let base = head_dim / 3 / 2 * 2;
        let mut bands = [base, base, base];
        let mut rem = head_dim - 3 * base;
        for b in bands.iter_mut() {
            if rem == 0 {
                break;
            }
            *b += 2;
            rem -= 2;
        }
        Self::new(head_dim, bands, 10_000.0)
    }

    /// All dims on the temporal axis; h/w coordinates are ignored.
    pub fn single_axis(head_dim: usize) -> Result<Self, RopeError> {
        if head_dim % 2 != 0 {
            return Err(RopeError::InvalidConfig(format!("head_dim {head_dim} must be even")));
        }
        Self::new(head_dim, [head_dim, 0, 0], 10_000.0)
    }
}

/// Base offsets for every unit of a stream, input and output sides computed
/// independently of each other.
#[derive(Debug, Clone, PartialEq)]
pub struct OffsetTable {
    /// Base offset of the k-th segment (0-based list, segments in order).
    pub segment_offsets: Vec<usize>,
    /// Base offset of the r-th question turn.
    pub question_offsets: Vec<usize>,
    /// Base offset of each generated slot present.
    pub generated_offsets: Vec<usize>,
    /// Total positional span of the received stream.
    pub input_budget: usize,
    unit_offsets: Vec<usize>,
    generated_lens: Vec<usize>,
}

impl OffsetTable {
    /// Input-side base offset of received unit `u` (1-based arrival index).
    pub fn unit_offset(&self, u: usize) -> usize {
        self.unit_offsets[u - 1]
    }

    /// Output-side base offset of generated slot `u` (1-based).
    pub fn generated_offset(&self, u: usize) -> usize {
        self.generated_offsets[u - 1]
    }

    pub fn generated_lens(&self) -> &[usize] {
        &self.generated_lens
    }
}

/// Computes both offset streams: received-unit offsets are running sums of
/// unit spans, generated-unit offsets are running sums of generated lengths
/// (`generated_lens` may cover just a prefix of the stream's slots).
pub fn compute_offsets(
    stream: &UnitStream,
    generated_lens: &[usize],
) -> Result<OffsetTable, RopeError> {
    if generated_lens.len() > stream.num_units() {
        return Err(RopeError::LengthMismatch {
            given: generated_lens.len(),
            units: stream.num_units(),
        });
    }
    let mut segment_offsets = Vec::new();
    let mut question_offsets = Vec::new();
    let mut unit_offsets = Vec::with_capacity(stream.num_units());
    let mut cum = 0usize;
    for unit in stream.received() {
        unit_offsets.push(cum);
        match unit.payload {
            UnitPayload::Segment { .. } => segment_offsets.push(cum),
            UnitPayload::Question { .. } => question_offsets.push(cum),
        }
        cum += unit.span();
    }
    let mut generated_offsets = Vec::with_capacity(generated_lens.len());
    let mut cum_out = 0usize;
    for &len in generated_lens {
        generated_offsets.push(cum_out);
        cum_out += len;
    }
    Ok(OffsetTable {
        segment_offsets,
        question_offsets,
        generated_offsets,
        input_budget: cum,
        unit_offsets,
        generated_lens: generated_lens.to_vec(),
    })
}

/// Positions of a segment's tokens: the grid walked t-major (t outermost,
/// w innermost), every axis shifted by the unit's base offset.
pub fn segment_token_positions(grid: &VisualGrid, base: usize) -> Vec<TokenPosition> {
    let mut out = Vec::with_capacity(grid.token_count());
    for t in 0..grid.t {
        for h in 0..grid.h {
            for w in 0..grid.w {
                out.push(TokenPosition { t: t + base, h: h + base, w: w + base });
            }
        }
    }
    out
}

/// Positions of a text unit's tokens: scalar offsets replicated per axis.
pub fn text_token_positions(len: usize, base: usize) -> Vec<TokenPosition> {
    (0..len).map(|n| TokenPosition::replicated(n + base)).collect()
}

/// Per-unit token positions for a whole stream.
#[derive(Debug, Clone, PartialEq)]
pub struct StreamPositions {
    pub received: Vec<Vec<TokenPosition>>,
    pub generated: Vec<Vec<TokenPosition>>,
}

/// Assigns every token of the stream its three-axis position from the offset
/// table (generated units cover the table's prefix).
pub fn assign_positions(stream: &UnitStream, offsets: &OffsetTable) -> StreamPositions {
    let received = stream
        .received()
        .iter()
        .map(|unit| {
            let base = offsets.unit_offset(unit.arrival_index);
            match &unit.payload {
                UnitPayload::Segment { grid, .. } => segment_token_positions(grid, base),
                UnitPayload::Question { tokens } => text_token_positions(tokens.len(), base),
            }
        })
        .collect();
    let generated = offsets
        .generated_lens
        .iter()
        .enumerate()
        .map(|(i, &len)| text_token_positions(len, offsets.generated_offset(i + 1)))
        .collect();
    StreamPositions { received, generated }
}

fn rotate(x: &mut [f64], pos: TokenPosition, cfg: &RopeConfig, sign: f64) {
    let coords = [pos.t as f64, pos.h as f64, pos.w as f64];
    let mut dim = 0usize;
    for (axis, &band) in cfg.bands.iter().enumerate() {
        let pairs = band / 2;
        for i in 0..pairs {
            let freq = cfg.base_theta.powf(-((2 * i) as f64) / band as f64);
            let theta = sign * coords[axis] * freq;
            let (sin, cos) = theta.sin_cos();
            let a = x[dim + 2 * i];
            let b = x[dim + 2 * i + 1];
            x[dim + 2 * i] = a * cos - b * sin;
            x[dim + 2 * i + 1] = a * sin + b * cos;
        }
        dim += band;
    }
}

/// Rotates a head vector by its position: within each axis band, consecutive
/// pairs turn by `coord * base_theta^(-2i/band)`.
pub fn apply_rope(x: &[f64], pos: TokenPosition, cfg: &RopeConfig) -> Result<Vec<f64>, RopeError> {
    if x.len() != cfg.head_dim {
        return Err(RopeError::DimensionMismatch { expected: cfg.head_dim, got: x.len() });
    }
    let mut out = x.to_vec();
    rotate(&mut out, pos, cfg, 1.0);
    Ok(out)
}

/// Inverse rotation; `apply_rope_inverse(apply_rope(x, p), p)` recovers `x`.
pub fn apply_rope_inverse(
    x: &[f64],
    pos: TokenPosition,
    cfg: &RopeConfig,
) -> Result<Vec<f64>, RopeError> {
    if x.len() != cfg.head_dim {
        return Err(RopeError::DimensionMismatch { expected: cfg.head_dim, got: x.len() });
    }
    let mut out = x.to_vec();
    rotate(&mut out, pos, cfg, -1.0);
    Ok(out)
}

/// In-place rotation used on hot paths; the caller guarantees the length.
pub(crate) fn apply_rope_inplace(x: &mut [f64], pos: TokenPosition, cfg: &RopeConfig) {
    debug_assert_eq!(x.len(), cfg.head_dim);
    rotate(x, pos, cfg, 1.0);
}
