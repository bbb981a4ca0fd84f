//! Stream preparation policies: tiling a timed video into segments around
//! question times, and picking a frame-sampling rate from total duration.

use segstream::stream::{plan_sampling, segment_by_questions};

fn main() {
    // Questions force boundaries; any remaining interval longer than 60 s is
    // split into 30 s chunks (the last chunk keeps the remainder).
    let segments = segment_by_questions(185.0, &[40.0, 90.0], 60.0, 30.0).expect("valid layout");
    println!("segments for a 185 s stream with questions at 40 s and 90 s:");
    for (i, (a, b)) in segments.iter().enumerate() {
        println!("  {:>2}: {a:>6.1} - {b:>6.1}  ({:.1} s)", i + 1, b - a);
    }

    // Without questions the whole stream is chunked uniformly.
    let plain = segment_by_questions(95.0, &[], 60.0, 30.0).expect("valid layout");
    println!("\n95 s stream, no questions: {plain:?}");

    // Sampling tiers by duration, with a per-stream frame cap.
    println!("\nduration  fps   frames(capped at 64)");
    for duration in [120.0, 299.0, 300.0, 599.0, 600.0, 1800.0] {
        let plan = plan_sampling(duration, Some(64)).expect("duration is positive");
        println!("{duration:>8.0}  {:>4.1}  {:>6}", plan.fps, plan.frame_count(duration));
    }
    let uncapped = plan_sampling(1800.0, None).expect("duration is positive");
    println!("uncapped 1800 s: {} frames at {} fps", uncapped.frame_count(1800.0), uncapped.fps);
}
