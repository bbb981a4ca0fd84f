//! The streaming attention mask, from unit-level relation to token-level
//! bitmap, plus the backend class each attention call shape lands on.

use segstream::mask::{
    build_seg_mask, classify_attention, expand_token_mask, UnitRef, WithinReceived,
};
use segstream::stream::{UnitDescriptor, UnitStream, VisualGrid};

fn label(r: UnitRef) -> String {
    if r.is_received() {
        format!("R{}", r.index())
    } else {
        format!("C{}", r.index())
    }
}

fn main() {
    let stream = UnitStream::build(vec![
        UnitDescriptor::Segment { grid: VisualGrid::new(2, 1, 1), time: None },
        UnitDescriptor::Question { tokens: vec![11, 12] },
        UnitDescriptor::Segment { grid: VisualGrid::new(3, 1, 1), time: None },
    ])
    .expect("stream builds");
    let seg = build_seg_mask(&stream);
    let n = seg.n_units();

    println!("unit-level relation (rows = queries, keys R1..R{n} then C1..C{n}):");
    let refs: Vec<UnitRef> =
        (1..=n).map(UnitRef::Received).chain((1..=n).map(UnitRef::Generated)).collect();
    for &q in &refs {
        let bits: String =
            refs.iter().map(|&k| if seg.admits(q, k) { '1' } else { '0' }).collect();
        println!("  {} {}", label(q), bits);
    }
    for c in 1..=n {
        println!("  C{c} may read received units {:?}", seg.received_keys_of(c));
    }

    // Token level: one generated token per unit, causal inside received units.
    let lens = vec![1usize; n];
    let mask = expand_token_mask(&seg, &stream, &lens, WithinReceived::Causal)
        .expect("lengths cover the stream");
    println!("\ntoken-level bitmap ({} x {}):", mask.q_len(), mask.k_len());
    for qi in 0..mask.q_len() {
        let q = mask.q_tokens()[qi];
        let bits: String =
            (0..mask.k_len()).map(|ki| if mask.allowed(qi, ki) { '1' } else { '0' }).collect();
        println!("  {}[{}] {}", label(q.unit), q.local, bits);
    }

    // The pure received prefix of a causal stream is a dense causal block, so
    // a fused kernel applies; chunked or single-row shapes classify likewise.
    println!("\nattention call shapes:");
    for (q_len, k_len, dense) in [(6usize, 6usize, true), (3, 9, false), (1, 12, false)] {
        let class = classify_attention(q_len, k_len, dense).expect("legal shape");
        println!("  q={q_len} k={k_len} dense_causal={dense} -> {class:?}");
    }
    let err = classify_attention(4, 2, false).unwrap_err();
    println!("  q=4 k=2 -> rejected: {err}");
}
