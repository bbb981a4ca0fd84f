//! Reasoning-trace documents: synthesize a skeleton for a stream, round-trip
//! it through the parser, validate it, and watch the validator catch a
//! future-information edit and an answer leak.

use segstream::cot::{
    parse, parse_with, serialize, serialize_with, skeleton_document, validate, Constraint,
    OutputChunk, ParseOptions,
};
use segstream::stream::{UnitDescriptor, UnitStream, VisualGrid};

fn main() {
    let stream = UnitStream::build(vec![
        UnitDescriptor::Segment { grid: VisualGrid::new(4, 1, 1), time: Some((0.0, 30.0)) },
        UnitDescriptor::Segment { grid: VisualGrid::new(4, 1, 1), time: Some((30.0, 55.0)) },
        UnitDescriptor::Question { tokens: vec![3, 4] },
        UnitDescriptor::Segment { grid: VisualGrid::new(2, 1, 1), time: Some((55.0, 80.0)) },
        UnitDescriptor::Question { tokens: vec![5] },
    ])
    .expect("stream builds");
    let doc = skeleton_document(&stream, &["a silver key", "inside the drawer"]);
    let text = serialize(&doc);
    println!("--- skeleton ---\n{text}--- end ---\n");

    // Lossless round trip: parse inverts serialize, and the canonical text is
    // a fixed point of serialize(parse(..)).
    let reparsed = parse(&text).expect("canonical text parses");
    assert_eq!(reparsed, doc);
    assert_eq!(serialize(&reparsed), text);
    println!("round trip: parse(serialize(doc)) == doc");

    let report = validate(&doc);
    println!(
        "validation: passed = {}, not machine-checkable: {:?}",
        report.passed(),
        report.not_checkable
    );

    // Forward reference: the first segment chunk mentions a segment that has
    // not arrived yet.
    let mut peeking = doc.clone();
    if let OutputChunk::SegmentThink(s) = &mut peeking.output_chunks[0] {
        s.evidence.push_str(" This will matter once SEG 3 arrives.");
    }
    for v in &validate(&peeking).violations {
        println!("future peek  -> constraint {} at unit {}: {}", v.constraint, v.unit, v.message);
    }

    // Answer leak: the reasoning of a turn spells out its reference answer.
    let mut leaking = doc.clone();
    if let OutputChunk::QaThink(q) = &mut leaking.output_chunks[2] {
        q.reasoning.push_str(" It must be a silver key.");
    }
    let leak_report = validate(&leaking);
    assert!(leak_report.violations.iter().any(|v| v.constraint == Constraint::D));
    for v in &leak_report.violations {
        println!("answer leak  -> constraint {} at unit {}: {}", v.constraint, v.unit, v.message);
    }

    // The reduced profile drops input-unit delimiters; output terminators
    // stay, and the document survives unchanged.
    let reduced = serialize_with(&doc, &ParseOptions::reduced());
    let back = parse_with(&reduced, &ParseOptions::reduced()).expect("reduced text parses");
    assert_eq!(back, doc);
    println!(
        "reduced profile: {} bytes vs {} canonical, same document",
        reduced.len(),
        text.len()
    );
}
