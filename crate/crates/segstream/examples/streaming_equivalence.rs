//! The dual-cache streaming path reproduces the monolithic forward pass bit
//! for bit, and greedy decoding replays exactly as its own teacher.

use segstream::engine::math::max_rel_diff;
use segstream::engine::tokens::StreamTokens;
use segstream::engine::{DecodeMode, Engine, EngineConfig};
use segstream::rope::compute_offsets;
use segstream::stream::{UnitDescriptor, UnitStream, VisualGrid};

fn main() {
    let stream = UnitStream::build(vec![
        UnitDescriptor::Segment { grid: VisualGrid::new(3, 2, 1), time: None },
        UnitDescriptor::Question { tokens: vec![40, 41] },
        UnitDescriptor::Segment { grid: VisualGrid::new(2, 2, 2), time: None },
        UnitDescriptor::Question { tokens: vec![42] },
    ])
    .expect("stream builds");
    let lens = vec![2usize, 3, 2, 3];

    let engine = Engine::new(EngineConfig::small(42)).expect("config is valid");
    let toks = StreamTokens::derive(&stream, &lens);
    let offsets = compute_offsets(&stream, &lens).expect("lengths fit");

    // Monolithic: the whole interleaved sequence in one masked forward pass.
    let mono = engine.forward_monolithic(&stream, &toks).expect("forward runs");

    // Streaming: ingest each received unit into the source cache, then decode
    // its generated unit into the separate decode cache.
    let mut caches = engine.new_caches();
    println!("unit  decode_rows  max_rel_diff_vs_monolithic");
    for u in 1..=stream.num_units() {
        engine
            .ingest_received(&mut caches.source, &stream, &toks, u, &offsets)
            .expect("ingest runs");
        let dec = engine
            .decode_generated_unit(
                &caches.source,
                &mut caches.decode,
                DecodeMode::Teacher(&toks.generated[u - 1]),
                u,
                &offsets,
            )
            .expect("decode runs");
        let range = mono.layout.generated[u - 1].clone();
        let mut mono_rows = segstream::engine::math::Matrix::with_cols(mono.logits.cols());
        for r in range {
            mono_rows.push_row(mono.logits.row(r));
        }
        println!("{u:>4}  {:>11}  {:e}", dec.logits.rows(), max_rel_diff(&dec.logits, &mono_rows));
    }
    println!(
        "source cache: {} units / {} tokens; decode cache: {} units / {} tokens",
        caches.source.units(),
        caches.source.token_len(),
        caches.decode.units(),
        caches.decode.token_len()
    );

    // Greedy decoding picks each next token from the previous step's logits;
    // replaying those picks as teacher forcing returns the same logits, so
    // the two decode modes are one mechanism.
    let mut greedy_caches = engine.new_caches();
    let mut replay_caches = engine.new_caches();
    for u in 1..=stream.num_units() {
        engine
            .ingest_received(&mut greedy_caches.source, &stream, &toks, u, &offsets)
            .expect("ingest runs");
        engine
            .ingest_received(&mut replay_caches.source, &stream, &toks, u, &offsets)
            .expect("ingest runs");
        let greedy = engine
            .decode_generated_unit(
                &greedy_caches.source,
                &mut greedy_caches.decode,
                DecodeMode::Greedy,
                u,
                &offsets,
            )
            .expect("greedy decode runs");
        let replay = engine
            .decode_generated_unit(
                &replay_caches.source,
                &mut replay_caches.decode,
                DecodeMode::Teacher(&greedy.tokens),
                u,
                &offsets,
            )
            .expect("teacher replay runs");
        assert_eq!(greedy.logits, replay.logits, "replay must be bit-identical");
        println!("unit {u}: greedy tokens {:?} replayed identically", greedy.tokens);
    }
}
