//! Decoupled position offsets: input-side bases depend only on received
//! spans, output-side bases only on generated lengths — so changing one side
//! never moves the other.

use segstream::rope::{
    apply_rope, apply_rope_inverse, assign_positions, compute_offsets, segment_token_positions,
    RopeConfig, TokenPosition,
};
use segstream::stream::{UnitDescriptor, UnitStream, VisualGrid};

fn main() {
    let stream = UnitStream::build(vec![
        UnitDescriptor::Segment { grid: VisualGrid::new(4, 2, 2), time: None },
        UnitDescriptor::Question { tokens: vec![7, 8, 9] },
        UnitDescriptor::Segment { grid: VisualGrid::new(3, 2, 2), time: None },
    ])
    .expect("stream builds");

    let short = compute_offsets(&stream, &[1, 2, 1]).expect("lengths fit");
    let long = compute_offsets(&stream, &[5, 9, 7]).expect("lengths fit");

    println!("input-side bases (segment, question):");
    println!("  with short generations: {:?} {:?}", short.segment_offsets, short.question_offsets);
    println!("  with long generations:  {:?} {:?}", long.segment_offsets, long.question_offsets);
    assert_eq!(short.segment_offsets, long.segment_offsets);
    assert_eq!(short.question_offsets, long.question_offsets);
    println!("  -> identical: generation lengths never move input positions");

    println!("output-side bases:");
    println!("  short: {:?}", short.generated_offsets);
    println!("  long:  {:?}", long.generated_offsets);
    println!("  -> each is the running sum of its own lengths, starting at 0");

    // Segment tokens walk the grid with every axis shifted by the unit base;
    // text tokens replicate their single counter across all three axes.
    println!("\nfirst segment token positions (base {}):", short.unit_offset(1));
    for (i, p) in segment_token_positions(
        &VisualGrid::new(4, 2, 2),
        short.unit_offset(1),
    )
    .iter()
    .take(6)
    .enumerate()
    {
        println!("  token {i}: t={} h={} w={}", p.t, p.h, p.w);
    }

    let positions = assign_positions(&stream, &short);
    println!(
        "full stream: {} received and {} generated token positions assigned",
        positions.received.iter().map(Vec::len).sum::<usize>(),
        positions.generated.iter().map(Vec::len).sum::<usize>()
    );

    // Head dimensions are split into one frequency band per axis; rotating a
    // vector by its position is exactly invertible.
    let rope = RopeConfig::even_split(8).expect("8 splits into bands");
    println!("\nrope bands for head_dim 8: {:?}", rope.bands);
    let x: Vec<f64> = (0..8).map(|i| 0.1 * (i as f64 + 1.0)).collect();
    let pos = TokenPosition { t: 5, h: 1, w: 2 };
    let rotated = apply_rope(&x, pos, &rope).expect("dimension matches");
    let restored = apply_rope_inverse(&rotated, pos, &rope).expect("dimension matches");
    let err = x
        .iter()
        .zip(&restored)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0f64, f64::max);
    println!("rotate + inverse rotate error: {err:e}");
}
