//! Command-line front end. Every subcommand reads explicit flags (plus an
//! optional JSON config file supplying defaults; flags always win), never
//! environment variables, and renders its whole report as one deterministic
//! text blob — so identical invocations are byte-identical, and `--out` is
//! the only path a command ever writes.
//!
//! Exit codes: 0 success, 1 failed validation verdicts, 2 usage problems,
//! and 3..=10 for errors surfaced by i/o or one of the library modules.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::cot::{self, CotError, DelimiterProfile, ParseOptions as CotOptions};
use crate::engine::math::{max_rel_diff, Matrix};
use crate::engine::tokens::StreamTokens;
use crate::engine::{DecodeMode, Engine, EngineConfig, EngineError};
use crate::latency::{
    catch_up_closed_form, simulate, ArrivalModel, CatchUp, LatencyError, LatencyMode, RateConfig,
    SimOptions,
};
use crate::mask::{build_seg_mask, expand_token_mask, MaskError, UnitRef, WithinReceived};
use crate::pipeline::{
    run_pipeline, run_pipeline_concurrent, ttft_all, DecodePolicy, GenerationPlan, PipelineError,
    PipelineMode,
};
use crate::rope::{compute_offsets, RopeConfig, RopeError};
use crate::stream::file::{FileError, StreamSpec};
use crate::stream::{plan_sampling, segment_by_questions, StreamError, UnitPayload, UnitStream};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Spec(#[from] FileError),
    #[error(transparent)]
    Stream(#[from] StreamError),
    #[error(transparent)]
    Mask(#[from] MaskError),
    #[error(transparent)]
    Rope(#[from] RopeError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Latency(#[from] LatencyError),
    #[error(transparent)]
    Cot(#[from] CotError),
}

impl CliError {
    /// Process exit code; each failure source keeps its own value.
    pub fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Io(_) => 3,
            CliError::Spec(_) | CliError::Stream(_) => 4,
            CliError::Mask(_) => 5,
            CliError::Rope(_) => 6,
            CliError::Engine(_) => 7,
            CliError::Pipeline(_) => 8,
            CliError::Latency(_) => 9,
            CliError::Cot(_) => 10,
        }
    }
}

/// Defaults a config file may supply; any explicit flag overrides its field.
#[derive(Debug, Default, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConfigFile {
    pub seed: Option<u64>,
    pub layers: Option<usize>,
    pub heads: Option<usize>,
    pub head_dim: Option<usize>,
    pub vocab: Option<usize>,
    pub within: Option<String>,
    pub note_len: Option<usize>,
    pub rationale_len: Option<usize>,
    pub answer_len: Option<usize>,
    pub lambda: Option<f64>,
    pub mu: Option<f64>,
    pub t_dec: Option<f64>,
    pub c_tok: Option<f64>,
    pub l_tokens: Option<f64>,
    pub horizon: Option<f64>,
    pub sample_dt: Option<f64>,
    pub period: Option<f64>,
    pub overhead: Option<f64>,
}

fn pick<T>(flag: Option<T>, file: Option<T>, default: T) -> T {
    flag.or(file).unwrap_or(default)
}

#[derive(Debug, Parser)]
#[command(
    name = "segstream",
    version,
    about = "Streaming-attention masks, offsets, engine runs, schedules, backlog models, and reasoning-trace tools"
)]
pub struct Cli {
    /// JSON file supplying default values for flags (explicit flags win).
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Write the report here instead of standard output.
    #[arg(short, long, global = true, value_name = "FILE")]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Print the unit- or token-level attention bitmap for a stream.
    Mask(MaskArgs),
    /// Print decoupled input/output position offsets for a stream.
    Offsets(OffsetsArgs),
    /// Run the reference engine over a stream and digest every unit's logits.
    Run(RunArgs),
    /// Schedule and execute a multi-turn run under one serving mode.
    Pipeline(PipelineArgs),
    /// Integrate the ingestion-backlog model and compare to the closed form.
    Simulate(SimulateArgs),
    /// Check reasoning-trace files against the structural constraints.
    ValidateCot(ValidateCotArgs),
    /// Emit a skeleton reasoning trace for a stream.
    SynthCot(SynthCotArgs),
    /// Tile a timed stream into segments and pick a frame-sampling plan.
    Segment(SegmentArgs),
}

#[derive(Debug, Args)]
pub struct MaskArgs {
    /// Stream spec file (JSON).
    pub stream: PathBuf,
    /// `unit` for the unit-level relation, `token` for the expanded table.
    #[arg(long, default_value = "unit")]
    pub level: String,
    /// Within-unit refinement for received tokens: `causal` or `full`.
    #[arg(long)]
    pub within: Option<String>,
    /// Comma-separated generated-unit token lengths; defaults to the spec
    /// file's `generated_lens`, then one token per unit.
    #[arg(long, value_name = "N,N,..")]
    pub gen_lens: Option<String>,
}

#[derive(Debug, Args)]
pub struct OffsetsArgs {
    /// Stream spec file (JSON).
    pub stream: PathBuf,
    /// Comma-separated generated-unit token lengths (same default as `mask`).
    #[arg(long, value_name = "N,N,..")]
    pub gen_lens: Option<String>,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Stream spec file (JSON).
    pub stream: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub layers: Option<usize>,
    #[arg(long)]
    pub heads: Option<usize>,
    #[arg(long)]
    pub head_dim: Option<usize>,
    #[arg(long)]
    pub vocab: Option<usize>,
    /// Within-unit refinement for received tokens: `causal` or `full`.
    #[arg(long)]
    pub within: Option<String>,
    /// Decode policy: `teacher` or `greedy`.
    #[arg(long)]
    pub policy: Option<String>,
    /// Comma-separated generated-unit token lengths.
    #[arg(long, value_name = "N,N,..")]
    pub gen_lens: Option<String>,
}

#[derive(Debug, Args)]
pub struct PipelineArgs {
    /// Stream spec file (JSON).
    pub stream: PathBuf,
    /// Serving mode: `interleaved`, `decoupled`, or `batch`.
    #[arg(long)]
    pub mode: Option<String>,
    /// Decode policy: `teacher` or `greedy`.
    #[arg(long)]
    pub policy: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Memory-note tokens per segment.
    #[arg(long)]
    pub note_len: Option<usize>,
    /// Rationale tokens per question turn.
    #[arg(long)]
    pub rationale_len: Option<usize>,
    /// Answer tokens per question turn.
    #[arg(long)]
    pub answer_len: Option<usize>,
    /// Ingest and decode on separate threads (decoupled mode only).
    #[arg(long)]
    pub concurrent: bool,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Segment arrival rate, segments per second.
    #[arg(long, allow_negative_numbers = true)]
    pub lambda: Option<f64>,
    /// Segment service rate, segments per second.
    #[arg(long, allow_negative_numbers = true)]
    pub mu: Option<f64>,
    /// Decode window length in seconds.
    #[arg(long, allow_negative_numbers = true)]
    pub t_dec: Option<f64>,
    /// Seconds of answer delay per backlogged segment.
    #[arg(long)]
    pub c_tok: Option<f64>,
    /// Answer length in tokens, for the quality-coupling bound.
    #[arg(long)]
    pub l_tokens: Option<f64>,
    /// `interleaved` or `decoupled`.
    #[arg(long)]
    pub mode: Option<String>,
    /// Simulated horizon in seconds.
    #[arg(long)]
    pub horizon: Option<f64>,
    /// Backlog sampling interval in seconds.
    #[arg(long)]
    pub sample_dt: Option<f64>,
    /// Seconds between decode windows.
    #[arg(long)]
    pub period: Option<f64>,
    /// Extra per-window ingestion stall in seconds (hits both modes).
    #[arg(long)]
    pub overhead: Option<f64>,
    /// Arrival model: `uniform` (fluid) or `poisson`.
    #[arg(long)]
    pub arrivals: Option<String>,
    /// Seed for the poisson arrival model.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct ValidateCotArgs {
    /// Trace files to check.
    #[arg(required = true)]
    pub files: Vec<PathBuf>,
    /// Delimiter profile the files use: `full` or `reduced`.
    #[arg(long)]
    pub profile: Option<String>,
}

#[derive(Debug, Args)]
pub struct SynthCotArgs {
    /// Stream spec file (JSON).
    pub stream: PathBuf,
    /// Reference answers, one per question turn, separated by `;`.
    #[arg(long)]
    pub answers: Option<String>,
    /// Emit the reduced-delimiter profile instead of the full one.
    #[arg(long)]
    pub reduced: bool,
}

#[derive(Debug, Args)]
pub struct SegmentArgs {
    /// Total stream duration in seconds.
    #[arg(long, allow_negative_numbers = true)]
    pub duration: f64,
    /// Comma-separated question timestamps in seconds.
    #[arg(long, value_name = "S,S,..")]
    pub questions: Option<String>,
    /// Intervals longer than this get split.
    #[arg(long, default_value_t = 60.0)]
    pub max_segment: f64,
    /// Chunk length used when splitting.
    #[arg(long, default_value_t = 30.0)]
    pub chunk: f64,
    /// Per-stream sampled-frame cap; 0 disables the cap.
    #[arg(long, default_value_t = 64)]
    pub frame_cap: usize,
}

/// Entry point used by the binary: parse, execute, emit, map exit codes.
pub fn run_main<I, T>(argv: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code: u8 = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let out = cli.out.clone();
    match execute(cli) {
        Ok((text, code)) => {
            if let Some(path) = out {
                if let Err(e) = std::fs::write(&path, &text) {
                    eprintln!("error: i/o: {e}");
                    return ExitCode::from(3);
                }
            } else {
                print!("{text}");
            }
            ExitCode::from(code)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}

/// Runs a parsed invocation and returns its full report plus the exit code
/// (0, or 1 when a validation verdict failed).
pub fn execute(cli: Cli) -> Result<(String, u8), CliError> {
    let cfg = match &cli.config {
        Some(path) => load_config(path)?,
        None => ConfigFile::default(),
    };
    match cli.command {
        Command::Mask(a) => Ok((render_mask(&a, &cfg)?, 0)),
        Command::Offsets(a) => Ok((render_offsets(&a)?, 0)),
        Command::Run(a) => Ok((render_run(&a, &cfg)?, 0)),
        Command::Pipeline(a) => Ok((render_pipeline(&a, &cfg)?, 0)),
        Command::Simulate(a) => Ok((render_simulate(&a, &cfg)?, 0)),
        Command::ValidateCot(a) => render_validate_cot(&a),
        Command::SynthCot(a) => Ok((render_synth_cot(&a)?, 0)),
        Command::Segment(a) => Ok((render_segment(&a)?, 0)),
    }
}

fn load_config(path: &Path) -> Result<ConfigFile, CliError> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text)
        .map_err(|e| CliError::Usage(format!("config file {}: {e}", path.display())))
}

/// Fixed 6-significant-digit rendering so numeric output is stable.
pub fn fmt6(v: f64) -> String {
    if v == 0.0 {
        return "0.00000".to_string();
    }
    if v.is_nan() {
        return "nan".to_string();
    }
    if v.is_infinite() {
        return if v > 0.0 { "inf" } else { "-inf" }.to_string();
    }
    let a = v.abs();
    if !(1e-4..1e6).contains(&a) {
        return format!("{v:.5e}");
    }
    let exp: i32 = format!("{a:e}")
        .split('e')
        .nth(1)
        .expect("float scientific form has an exponent")
        .parse()
        .expect("float exponent parses");
    let decimals = (5 - exp).max(0) as usize;
    format!("{v:.decimals$}")
}

/// First 16 hex chars of the SHA-256 of `text`.
fn digest16(text: &str) -> String {
    let hash = Sha256::digest(text.as_bytes());
    hash.iter().take(8).map(|b| format!("{b:02x}")).collect()
}

fn matrix_text(m: &Matrix) -> String {
    let mut s = String::new();
    for r in 0..m.rows() {
        let row: Vec<String> = m.row(r).iter().map(|&v| fmt6(v)).collect();
        s.push_str(&row.join(" "));
        s.push('\n');
    }
    s
}

fn first8(m: &Matrix) -> String {
    if m.rows() == 0 {
        return String::new();
    }
    let row = m.row(m.rows() - 1);
    let vals: Vec<String> = row.iter().take(8).map(|&v| fmt6(v)).collect();
    vals.join(" ")
}

/// Quotes a CSV field if it contains a comma, quote, or newline.
fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn parse_list<T: FromStr>(s: &str, what: &str) -> Result<Vec<T>, CliError> {
    s.split(',')
        .map(str::trim)
        .filter(|p| !p.is_empty())
        .map(|p| {
            p.parse::<T>()
                .map_err(|_| CliError::Usage(format!("{what}: `{p}` is not a valid entry")))
        })
        .collect()
}

fn parse_keyword<T: FromStr<Err = String>>(s: &str) -> Result<T, CliError> {
    T::from_str(s).map_err(CliError::Usage)
}

fn parse_within(s: &str) -> Result<WithinReceived, CliError> {
    match s {
        "causal" => Ok(WithinReceived::Causal),
        "full" => Ok(WithinReceived::Full),
        other => Err(CliError::Usage(format!("unknown within-received mode `{other}`"))),
    }
}

fn parse_policy(s: &str) -> Result<DecodePolicy, CliError> {
    match s {
        "teacher" => Ok(DecodePolicy::Teacher),
        "greedy" => Ok(DecodePolicy::Greedy),
        other => Err(CliError::Usage(format!("unknown decode policy `{other}`"))),
    }
}

fn load_stream(path: &Path) -> Result<(StreamSpec, UnitStream), CliError> {
    let spec = StreamSpec::load(path)?;
    let stream = spec.to_stream()?;
    Ok((spec, stream))
}

/// Generated lengths: explicit flag, then the spec file, then one per unit.
fn gen_lens_for(spec: &StreamSpec, flag: &Option<String>) -> Result<Vec<usize>, CliError> {
    match flag {
        Some(s) => parse_list(s, "--gen-lens"),
        None => Ok(spec.generated_lens_or(1)),
    }
}

fn unit_label(r: UnitRef) -> String {
    if r.is_received() {
        format!("R{}", r.index())
    } else {
        format!("C{}", r.index())
    }
}

fn render_mask(args: &MaskArgs, cfg: &ConfigFile) -> Result<String, CliError> {
    let (spec, stream) = load_stream(&args.stream)?;
    let seg = build_seg_mask(&stream);
    let n = seg.n_units();
    let mut out = String::new();
    match args.level.as_str() {
        "unit" => {
            writeln!(out, "# unit-level attention: {n} received + {n} generated units").unwrap();
            writeln!(out, "# rows are queries, columns are keys; 1 = may attend").unwrap();
            writeln!(out, "# key order: R1..R{n} then C1..C{n}").unwrap();
            let refs: Vec<UnitRef> = (1..=n)
                .map(UnitRef::Received)
                .chain((1..=n).map(UnitRef::Generated))
                .collect();
            for &q in &refs {
                let mut received = String::new();
                let mut generated = String::new();
                for &k in &refs {
                    let bit = if seg.admits(q, k) { '1' } else { '0' };
                    if k.is_received() {
                        received.push(bit);
                    } else {
                        generated.push(bit);
                    }
                }
                writeln!(out, "{} {received} {generated}", unit_label(q)).unwrap();
            }
        }
        "token" => {
            let lens = gen_lens_for(&spec, &args.gen_lens)?;
            let within_name =
                args.within.clone().or_else(|| cfg.within.clone()).unwrap_or_else(|| "causal".into());
            let within = parse_within(&within_name)?;
            let mask = expand_token_mask(&seg, &stream, &lens, within)?;
            writeln!(
                out,
                "# token-level attention: {} queries x {} keys, within-received = {within_name}",
                mask.q_len(),
                mask.k_len()
            )
            .unwrap();
            let extents: Vec<String> = {
                let mut counts: Vec<(UnitRef, usize)> = Vec::new();
                for t in mask.k_tokens() {
                    match counts.last_mut() {
                        Some((u, c)) if *u == t.unit => *c += 1,
                        _ => counts.push((t.unit, 1)),
                    }
                }
                counts.iter().map(|(u, c)| format!("{}x{c}", unit_label(*u))).collect()
            };
            writeln!(out, "# token order: {}", extents.join(" ")).unwrap();
            for qi in 0..mask.q_len() {
                let t = mask.q_tokens()[qi];
                let bits: String = (0..mask.k_len())
                    .map(|ki| if mask.allowed(qi, ki) { '1' } else { '0' })
                    .collect();
                writeln!(out, "{}[{}] {bits}", unit_label(t.unit), t.local).unwrap();
            }
        }
        other => return Err(CliError::Usage(format!("unknown mask level `{other}`"))),
    }
    Ok(out)
}

fn render_offsets(args: &OffsetsArgs) -> Result<String, CliError> {
    let (spec, stream) = load_stream(&args.stream)?;
    let lens = gen_lens_for(&spec, &args.gen_lens)?;
    let table = compute_offsets(&stream, &lens)?;
    let mut out = String::new();
    writeln!(out, "kind,index,offset,span").unwrap();
    let mut seg = 0usize;
    let mut turn = 0usize;
    for unit in stream.received() {
        match &unit.payload {
            UnitPayload::Segment { .. } => {
                seg += 1;
                writeln!(out, "segment,{seg},{},{}", table.segment_offsets[seg - 1], unit.span())
                    .unwrap();
            }
            UnitPayload::Question { .. } => {
                turn += 1;
                writeln!(out, "question,{turn},{},{}", table.question_offsets[turn - 1], unit.span())
                    .unwrap();
            }
        }
    }
    for (i, &off) in table.generated_offsets.iter().enumerate() {
        writeln!(out, "generated,{},{off},{}", i + 1, lens[i]).unwrap();
    }
    writeln!(out, "# total input span: {}", table.input_budget).unwrap();
    Ok(out)
}

fn engine_from(args: &RunArgs, cfg: &ConfigFile) -> Result<(Engine, WithinReceived, String), CliError> {
    let seed = pick(args.seed, cfg.seed, 7);
    let layers = pick(args.layers, cfg.layers, 2);
    let heads = pick(args.heads, cfg.heads, 2);
    let head_dim = pick(args.head_dim, cfg.head_dim, 8);
    let vocab = pick(args.vocab, cfg.vocab, 97);
    let within_name =
        args.within.clone().or_else(|| cfg.within.clone()).unwrap_or_else(|| "causal".into());
    let within = parse_within(&within_name)?;
    let engine = Engine::new(EngineConfig {
        n_layers: layers,
        n_heads: heads,
        head_dim,
        vocab_size: vocab,
        seed,
        rope: RopeConfig::even_split(head_dim)?,
        within_received: within,
    })?;
    let header = format!(
        "# engine: {layers} layers, {heads} heads, head_dim {head_dim}, vocab {vocab}, \
         seed {seed}, within {within_name}"
    );
    Ok((engine, within, header))
}

fn render_run(args: &RunArgs, cfg: &ConfigFile) -> Result<String, CliError> {
    let (spec, stream) = load_stream(&args.stream)?;
    let (engine, _within, header) = engine_from(args, cfg)?;
    let policy = parse_policy(args.policy.as_deref().unwrap_or("teacher"))?;
    let lens = gen_lens_for(&spec, &args.gen_lens)?;
    if lens.len() != stream.num_units() {
        return Err(CliError::Usage(format!(
            "need one generated length per unit: got {}, stream has {}",
            lens.len(),
            stream.num_units()
        )));
    }
    let toks = StreamTokens::derive(&stream, &lens);
    let offsets = compute_offsets(&stream, &lens)?;
    let mut caches = engine.new_caches();
    let mut out = String::new();
    writeln!(out, "{header}").unwrap();
    writeln!(out, "unit,phase,rows,tokens,digest,first8").unwrap();
    let mut decoded = Matrix::with_cols(engine.config().vocab_size);
    for u in 1..=stream.num_units() {
        let ing = engine.ingest_received(&mut caches.source, &stream, &toks, u, &offsets)?;
        writeln!(
            out,
            "{u},ingest,{},,{},{}",
            ing.logits.rows(),
            digest16(&matrix_text(&ing.logits)),
            csv_field(&first8(&ing.logits))
        )
        .unwrap();
        let mode = match policy {
            DecodePolicy::Teacher => DecodeMode::Teacher(&toks.generated[u - 1]),
            DecodePolicy::Greedy => DecodeMode::Greedy,
        };
        let dec = engine.decode_generated_unit(&caches.source, &mut caches.decode, mode, u, &offsets)?;
        let ids: Vec<String> = dec.tokens.iter().map(u32::to_string).collect();
        writeln!(
            out,
            "{u},decode,{},{},{},{}",
            dec.logits.rows(),
            ids.join(" "),
            digest16(&matrix_text(&dec.logits)),
            csv_field(&first8(&dec.logits))
        )
        .unwrap();
        for r in 0..dec.logits.rows() {
            decoded.push_row(dec.logits.row(r));
        }
    }
    if policy == DecodePolicy::Teacher {
        let mono = engine.forward_monolithic(&stream, &toks)?;
        let mut mono_rows = Matrix::with_cols(engine.config().vocab_size);
        for range in &mono.layout.generated {
            for r in range.clone() {
                mono_rows.push_row(mono.logits.row(r));
            }
        }
        writeln!(
            out,
            "# streaming vs monolithic max_rel_diff: {}",
            fmt6(max_rel_diff(&decoded, &mono_rows))
        )
        .unwrap();
    }
    Ok(out)
}

fn render_pipeline(args: &PipelineArgs, cfg: &ConfigFile) -> Result<String, CliError> {
    let (_, stream) = load_stream(&args.stream)?;
    let seed = pick(args.seed, cfg.seed, 7);
    let note_len = pick(args.note_len, cfg.note_len, 1);
    let rationale_len = pick(args.rationale_len, cfg.rationale_len, 2);
    let answer_len = pick(args.answer_len, cfg.answer_len, 2);
    let mode: PipelineMode = parse_keyword(args.mode.as_deref().unwrap_or("decoupled"))?;
    let policy = parse_policy(args.policy.as_deref().unwrap_or("teacher"))?;
    if args.concurrent && mode != PipelineMode::Decoupled {
        return Err(CliError::Usage("--concurrent requires --mode decoupled".to_string()));
    }
    let engine = Engine::new(EngineConfig::small(seed))?;
    let plan = GenerationPlan::uniform(&stream, note_len, rationale_len, answer_len);
    let run = if args.concurrent {
        run_pipeline_concurrent(&engine, &stream, &plan, policy)?
    } else {
        run_pipeline(&engine, &stream, &plan, mode, policy)?
    };
    let mut out = String::new();
    writeln!(
        out,
        "# pipeline: mode={mode} policy={} seed={seed} note={note_len} rationale={rationale_len} \
         answer={answer_len} concurrent={}",
        match policy {
            DecodePolicy::Teacher => "teacher",
            DecodePolicy::Greedy => "greedy",
        },
        args.concurrent
    )
    .unwrap();
    writeln!(out, "event,unit,clock").unwrap();
    for e in &run.events {
        writeln!(out, "{},{},{}", e.kind.label(), e.unit, e.clock).unwrap();
    }
    writeln!(out).unwrap();
    writeln!(out, "turn,unit,ttft").unwrap();
    for (t, (turn, clock)) in stream.turns().iter().zip(ttft_all(&run.events, &stream)) {
        writeln!(out, "{turn},{},{clock}", t.unit_index).unwrap();
    }
    writeln!(out).unwrap();
    writeln!(out, "turn,unit,answer_tokens").unwrap();
    for ans in &run.answers {
        let ids: Vec<String> = ans.answer_tokens().iter().map(u32::to_string).collect();
        writeln!(out, "{},{},{}", ans.turn, ans.unit, ids.join(" ")).unwrap();
    }
    writeln!(out, "# memory notes written: {}", run.bank.len()).unwrap();
    Ok(out)
}

fn render_simulate(args: &SimulateArgs, cfg: &ConfigFile) -> Result<String, CliError> {
    let lambda = args
        .lambda
        .or(cfg.lambda)
        .ok_or_else(|| CliError::Usage("--lambda is required".to_string()))?;
    let mu = args
        .mu
        .or(cfg.mu)
        .ok_or_else(|| CliError::Usage("--mu is required".to_string()))?;
    let rc = RateConfig {
        lambda,
        mu,
        t_dec: pick(args.t_dec, cfg.t_dec, 0.0),
        c_tok: pick(args.c_tok, cfg.c_tok, 0.0),
        l_tokens: pick(args.l_tokens, cfg.l_tokens, 0.0),
    };
    let mode: LatencyMode = parse_keyword(args.mode.as_deref().unwrap_or("interleaved"))?;
    let arrivals = match args.arrivals.as_deref().unwrap_or("uniform") {
        "uniform" => ArrivalModel::Uniform,
        "poisson" => ArrivalModel::Poisson { seed: pick(args.seed, cfg.seed, 7) },
        other => return Err(CliError::Usage(format!("unknown arrival model `{other}`"))),
    };
    let opts = SimOptions {
        horizon_s: pick(args.horizon, cfg.horizon, 300.0),
        sample_dt: pick(args.sample_dt, cfg.sample_dt, 5.0),
        decode_period_s: pick(args.period, cfg.period, 60.0),
        decode_overhead_s: pick(args.overhead, cfg.overhead, 0.0),
        arrivals,
    };
    let trace = simulate(&rc, mode, &opts)?;
    // The closed form describes the stall the mode actually takes per window.
    let closed = match mode {
        LatencyMode::Interleaved => catch_up_closed_form(&RateConfig {
            t_dec: rc.t_dec + opts.decode_overhead_s,
            ..rc
        }),
        LatencyMode::Decoupled => {
            catch_up_closed_form(&RateConfig { t_dec: opts.decode_overhead_s, ..rc })
        }
    };
    let mut out = String::new();
    writeln!(out, "time_s,backlog,mode").unwrap();
    for &(t, b) in &trace.samples {
        writeln!(out, "{},{},{mode}", fmt6(t), fmt6(b)).unwrap();
    }
    writeln!(out).unwrap();
    writeln!(out, "rho,t_dec,measured_catch_up,closed_form,rel_err").unwrap();
    let measured = trace.catch_up_s;
    let closed_text = match closed {
        CatchUp::Finite(v) => fmt6(v),
        CatchUp::Divergent => "divergent".to_string(),
    };
    let measured_text = measured.map(fmt6).unwrap_or_else(|| "none".to_string());
    let rel_err = match (measured, closed) {
        (Some(m), CatchUp::Finite(c)) if c > 0.0 => fmt6((m - c).abs() / c),
        (Some(m), CatchUp::Finite(_)) => fmt6(m), // closed form 0: absolute residual
        _ => "na".to_string(),
    };
    writeln!(out, "{},{},{measured_text},{closed_text},{rel_err}", fmt6(rc.rho()), fmt6(rc.t_dec))
        .unwrap();
    Ok(out)
}

fn render_validate_cot(args: &ValidateCotArgs) -> Result<(String, u8), CliError> {
    let profile = match args.profile.as_deref().unwrap_or("full") {
        "full" => DelimiterProfile::Full,
        "reduced" => DelimiterProfile::Reduced,
        other => return Err(CliError::Usage(format!("unknown delimiter profile `{other}`"))),
    };
    let opts = CotOptions { profile, ..CotOptions::default() };
    let mut out = String::new();
    writeln!(out, "file,constraint,unit,message").unwrap();
    let mut failing = 0usize;
    for path in &args.files {
        let name = path.display().to_string();
        let text = std::fs::read_to_string(path)?;
        match cot::parse_with(&text, &opts) {
            Err(e) => {
                failing += 1;
                let line = match &e {
                    CotError::SyntaxError { line, .. }
                    | CotError::UnterminatedUnit { line, .. }
                    | CotError::UnknownHeader { line, .. } => *line,
                };
                writeln!(out, "{},parse,{line},{}", csv_field(&name), csv_field(&e.to_string()))
                    .unwrap();
            }
            Ok(doc) => {
                let report = cot::validate(&doc);
                if !report.passed() {
                    failing += 1;
                }
                for v in &report.violations {
                    writeln!(
                        out,
                        "{},{},{},{}",
                        csv_field(&name),
                        v.constraint,
                        v.unit,
                        csv_field(&v.message)
                    )
                    .unwrap();
                }
            }
        }
    }
    writeln!(out, "# {} of {} file(s) failing", failing, args.files.len()).unwrap();
    Ok((out, u8::from(failing > 0)))
}

fn render_synth_cot(args: &SynthCotArgs) -> Result<String, CliError> {
    let (_, stream) = load_stream(&args.stream)?;
    let turns = stream.num_questions();
    let answers: Vec<String> = match &args.answers {
        Some(s) => s.split(';').map(|a| a.trim().to_string()).collect(),
        None => (1..=turns).map(|j| format!("reference answer {j}")).collect(),
    };
    if answers.len() != turns {
        return Err(CliError::Usage(format!(
            "need one answer per question turn: got {}, stream has {turns}",
            answers.len()
        )));
    }
    let doc = cot::skeleton_document(&stream, &answers);
    let opts = if args.reduced { CotOptions::reduced() } else { CotOptions::default() };
    Ok(cot::serialize_with(&doc, &opts))
}

fn render_segment(args: &SegmentArgs) -> Result<String, CliError> {
    let questions: Vec<f64> = match &args.questions {
        Some(s) => parse_list(s, "--questions")?,
        None => Vec::new(),
    };
    let segments = segment_by_questions(args.duration, &questions, args.max_segment, args.chunk)?;
    let cap = (args.frame_cap > 0).then_some(args.frame_cap);
    let plan = plan_sampling(args.duration, cap)?;
    let mut out = String::new();
    writeln!(out, "index,start_s,end_s,duration_s").unwrap();
    for (i, &(a, b)) in segments.iter().enumerate() {
        writeln!(out, "{},{},{},{}", i + 1, fmt6(a), fmt6(b), fmt6(b - a)).unwrap();
    }
    writeln!(out).unwrap();
    writeln!(out, "fps,frames,frame_cap").unwrap();
    let cap_text = cap.map(|c| c.to_string()).unwrap_or_else(|| "none".to_string());
    writeln!(out, "{},{},{cap_text}", fmt6(plan.fps), plan.frame_count(args.duration)).unwrap();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn invoke(args: &[&str]) -> Result<(String, u8), CliError> {
        let mut argv = vec!["segstream"];
        argv.extend_from_slice(args);
        execute(Cli::try_parse_from(argv).expect("flags parse"))
    }

    fn write_demo_spec(dir: &tempfile::TempDir) -> PathBuf {
        let path = dir.path().join("stream.json");
        std::fs::write(
            &path,
            r#"{"units": [
                {"kind": "segment", "grid": [2, 1, 1]},
                {"kind": "question", "len": 2},
                {"kind": "segment", "grid": [3, 1, 1]}
            ]}"#,
        )
        .unwrap();
        path
    }

    #[test]
    fn six_significant_digits_everywhere() {
        assert_eq!(fmt6(0.0), "0.00000");
        assert_eq!(fmt6(10.0), "10.0000");
        assert_eq!(fmt6(0.5), "0.500000");
        assert_eq!(fmt6(123456.7), "123457");
        assert_eq!(fmt6(-0.25), "-0.250000");
        assert_eq!(fmt6(12345678.0), "1.23457e7");
        assert_eq!(fmt6(0.00001), "1.00000e-5");
    }

    #[test]
    fn simulate_example_reports_the_closed_form() {
        let (text, code) =
            invoke(&["simulate", "--lambda", "1", "--mu", "2", "--t-dec", "10", "--mode", "interleaved"])
                .unwrap();
        assert_eq!(code, 0);
        let summary = text.lines().last().unwrap();
        let cols: Vec<&str> = summary.split(',').collect();
        assert_eq!(cols[0], "0.500000", "rho column");
        assert_eq!(cols[3], "10.0000", "closed-form catch-up column");
    }

    #[test]
    fn reports_are_byte_identical_across_runs() {
        let dir = tempfile::tempdir().unwrap();
        let spec = write_demo_spec(&dir);
        let spec = spec.to_str().unwrap();
        for args in [
            vec!["mask", spec, "--level", "token"],
            vec!["offsets", spec],
            vec!["run", spec, "--seed", "11"],
            vec!["pipeline", spec, "--mode", "interleaved"],
        ] {
            let a = invoke(&args).unwrap();
            let b = invoke(&args).unwrap();
            assert_eq!(a, b, "two identical invocations must agree: {args:?}");
        }
    }

    #[test]
    fn run_compares_streaming_against_monolithic() {
        let dir = tempfile::tempdir().unwrap();
        let spec = write_demo_spec(&dir);
        let (text, _) = invoke(&["run", spec.to_str().unwrap()]).unwrap();
        let diff_line = text.lines().last().unwrap();
        assert!(
            diff_line.ends_with("max_rel_diff: 0.00000"),
            "streaming and monolithic paths must agree, got `{diff_line}`"
        );
    }

    #[test]
    fn flags_beat_config_file_values() {
        let dir = tempfile::tempdir().unwrap();
        let spec = write_demo_spec(&dir);
        let cfg = dir.path().join("defaults.json");
        std::fs::write(&cfg, r#"{"seed": 9, "note_len": 3}"#).unwrap();
        let (from_cfg, _) = invoke(&[
            "pipeline",
            spec.to_str().unwrap(),
            "--config",
            cfg.to_str().unwrap(),
        ])
        .unwrap();
        assert!(from_cfg.contains("seed=9 note=3"), "config supplies defaults: {from_cfg}");
        let (from_flag, _) = invoke(&[
            "pipeline",
            spec.to_str().unwrap(),
            "--config",
            cfg.to_str().unwrap(),
            "--seed",
            "4",
        ])
        .unwrap();
        assert!(from_flag.contains("seed=4 note=3"), "flags win over the file: {from_flag}");
    }

    #[test]
    fn unknown_config_keys_are_usage_errors() {
        let dir = tempfile::tempdir().unwrap();
        let spec = write_demo_spec(&dir);
        let cfg = dir.path().join("defaults.json");
        std::fs::write(&cfg, r#"{"sedd": 9}"#).unwrap();
        let err = invoke(&[
            "offsets",
            spec.to_str().unwrap(),
            "--config",
            cfg.to_str().unwrap(),
        ])
        .unwrap_err();
        assert_eq!(err.code(), 2);
    }

    #[test]
    fn validate_cot_flags_failing_files_with_exit_one() {
        let dir = tempfile::tempdir().unwrap();
        let spec = write_demo_spec(&dir);
        let (good_text, code) =
            invoke(&["synth-cot", spec.to_str().unwrap(), "--answers", "a cat"]).unwrap();
        assert_eq!(code, 0);
        let good = dir.path().join("good.txt");
        std::fs::write(&good, &good_text).unwrap();
        let bad = dir.path().join("bad.txt");
        std::fs::write(&bad, good_text.replace("\nAnswer: a cat", "\nAnswer: a dog")).unwrap();
        let (report, code) =
            invoke(&["validate-cot", good.to_str().unwrap(), bad.to_str().unwrap()]).unwrap();
        assert_eq!(code, 1, "any failing file must fail the invocation");
        assert!(report.contains("bad.txt,D,"), "violation row names file and constraint: {report}");
        assert!(!report.contains("good.txt,"), "clean files produce no rows: {report}");
        let (_, code) = invoke(&["validate-cot", good.to_str().unwrap()]).unwrap();
        assert_eq!(code, 0);
    }

    #[test]
    fn segment_command_tiles_and_plans() {
        let (text, _) = invoke(&["segment", "--duration", "185", "--questions", "40,90"]).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[1], "1,0.00000,40.0000,40.0000");
        assert_eq!(lines[2], "2,40.0000,90.0000,50.0000");
        assert_eq!(lines[3], "3,90.0000,120.000,30.0000");
        assert_eq!(lines[4], "4,120.000,150.000,30.0000");
        assert_eq!(lines[5], "5,150.000,180.000,30.0000");
        assert_eq!(lines[6], "6,180.000,185.000,5.00000");
        assert_eq!(lines.last().unwrap(), &"1.00000,64,64", "1 fps tier, capped at 64 frames");
    }

    #[test]
    fn module_errors_keep_distinct_exit_codes() {
        let dir = tempfile::tempdir().unwrap();
        let spec = write_demo_spec(&dir);
        let missing = dir.path().join("missing.json");
        let err = invoke(&["mask", missing.to_str().unwrap()]).unwrap_err();
        assert_eq!(err.code(), 4, "spec loading failures");
        let err = invoke(&["run", spec.to_str().unwrap(), "--gen-lens", "1,1"]).unwrap_err();
        assert_eq!(err.code(), 2, "wrong gen-lens arity is a usage error");
        let err =
            invoke(&["simulate", "--lambda", "2", "--mu", "0", "--t-dec", "1"]).unwrap_err();
        assert_eq!(err.code(), 9, "latency model rejects mu = 0");
        let err = invoke(&["segment", "--duration", "-3"]).unwrap_err();
        assert_eq!(err.code(), 4, "stream policy rejects negative durations");
    }

    #[test]
    fn mask_bitmap_rows_follow_arrival_structure() {
        let dir = tempfile::tempdir().unwrap();
        let spec = write_demo_spec(&dir);
        let (text, _) = invoke(&["mask", spec.to_str().unwrap()]).unwrap();
        let rows: Vec<&str> = text.lines().filter(|l| !l.starts_with('#')).collect();
        assert_eq!(rows[0], "R1 100 000", "received units never see generated ones");
        assert_eq!(rows[3], "C1 100 100", "the first chunk sees R1 and itself");
        assert_eq!(rows[5], "C3 111 111", "C3 sees every received unit and chunk prefix");
    }
}
