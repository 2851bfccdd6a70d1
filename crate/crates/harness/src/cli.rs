//! `blocksync` command line.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use blocksync::trace::TraceEvent;
use blocksync::{
    theoretical_delay, BbdScoreSource, BlockLayout, ContextualBlockEncoder, DecodeConfig, FeatureSequence, ToyModel,
    Vocabulary,
};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::error::in_file;
use crate::manifest::{load_manifest, load_references, ManifestEntry};
use crate::metrics::edit_distance;
use crate::report::{DecodeMode, Summary, UtteranceResult};
use crate::scenario::{describe, load_script, run_scenario};
use crate::synth::{write_corpus, MAX_ALIGNED_LABELS};
use crate::timing::{measure_run, Clocks, RunInput, ThreadCpuClock, WallClock};

#[derive(Debug, Parser)]
#[command(name = "blocksync", version, about = "Streaming blockwise beam-search decoder")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Decode a manifest in batch or streaming mode.
    Decode(DecodeArgs),
    /// Decode in both modes and report token differences and timing.
    Compare(CompareArgs),
    /// Run a table-scorer script.
    Scenario(ScenarioArgs),
    /// Print the theoretical delay of a block layout in seconds.
    Delay(DelayArgs),
    /// Write a random toy model and a synthetic corpus.
    Synth(SynthArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OnOff {
    On,
    Off,
}

impl OnOff {
    fn get(self) -> bool {
        self == OnOff::On
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BbdSource {
    Attention,
    Joint,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockSpec {
    pub left: usize,
    pub center: usize,
    pub right: usize,
}

fn parse_block(s: &str) -> Result<BlockSpec, String> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != 3 {
        return Err(format!("expected L,C,R, got `{s}`"));
    }
    let n: Vec<usize> = parts
        .iter()
        .map(|p| p.trim().parse::<usize>().map_err(|_| format!("`{p}` is not a frame count")))
        .collect::<Result<_, _>>()?;
    if n[1] == 0 {
        return Err("block center must be at least one frame".into());
    }
    Ok(BlockSpec {
        left: n[0],
        center: n[1],
        right: n[2],
    })
}

#[derive(Debug, Clone, Args)]
pub struct SearchFlags {
    #[arg(long, default_value_t = 10)]
    pub beam: usize,
    #[arg(long, default_value_t = 0.3)]
    pub ctc_weight: f64,
    #[arg(long, default_value_t = 0.0)]
    pub lm_weight: f64,
    #[arg(long, value_enum, default_value_t = OnOff::On)]
    pub conservative: OnOff,
    /// `off` detects boundaries from the end token only.
    #[arg(long, value_enum, default_value_t = OnOff::On)]
    pub repetition: OnOff,
    #[arg(long, value_enum, default_value_t = OnOff::Off)]
    pub strict_boundary: OnOff,
    #[arg(long, value_enum, default_value_t = BbdSource::Attention)]
    pub bbd_source: BbdSource,
    /// Maximum output length; defaults to the encoded frame count plus two.
    #[arg(long)]
    pub max_len: Option<usize>,
    #[arg(long, default_value_t = 0.0)]
    pub end_margin: f64,
    /// Write search traces as JSON lines.
    #[arg(long)]
    pub trace: Option<PathBuf>,
}

impl SearchFlags {
    pub fn config(&self) -> anyhow::Result<DecodeConfig> {
        let c = DecodeConfig {
            beam_width: self.beam,
            i_max: self.max_len,
            ctc_weight: self.ctc_weight,
            lm_weight: self.lm_weight,
            conservative: self.conservative.get(),
            repetition_criterion: self.repetition.get(),
            bbd_score_source: match self.bbd_source {
                BbdSource::Attention => BbdScoreSource::Attention,
                BbdSource::Joint => BbdScoreSource::Joint,
            },
            strict_boundary: self.strict_boundary.get(),
            end_margin: self.end_margin,
        };
        c.validate()?;
        Ok(c)
    }
}

#[derive(Debug, Clone, Args)]
pub struct CorpusFlags {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub vocab: PathBuf,
    /// Manifest, or a single feature file.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, value_parser = parse_block, default_value = "16,16,8")]
    pub block: BlockSpec,
    #[arg(long, default_value_t = 4)]
    pub downsample: usize,
    /// Reference transcripts, `id token token ...` per line.
    #[arg(long = "ref")]
    pub reference: Option<PathBuf>,
    /// Write result records here instead of standard output.
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// Utterances decoded in parallel.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
}

#[derive(Debug, Clone, Args)]
pub struct DecodeArgs {
    #[command(flatten)]
    pub corpus: CorpusFlags,
    #[command(flatten)]
    pub search: SearchFlags,
    #[arg(long, value_enum, default_value_t = DecodeMode::Streaming)]
    pub mode: DecodeMode,
}

#[derive(Debug, Clone, Args)]
pub struct CompareArgs {
    #[command(flatten)]
    pub corpus: CorpusFlags,
    #[command(flatten)]
    pub search: SearchFlags,
}

#[derive(Debug, Clone, Args)]
pub struct ScenarioArgs {
    /// Table script; `fig2.tbl`, `repetition_ablation.tbl` and `omega_r.tbl` are
    /// built in.
    pub script: PathBuf,
    #[command(flatten)]
    pub search: SearchFlags,
    #[arg(long, value_enum, default_value_t = DecodeMode::Streaming)]
    pub mode: DecodeMode,
}

#[derive(Debug, Clone, Args)]
pub struct DelayArgs {
    #[arg(long, value_parser = parse_block, default_value = "16,16,8")]
    pub block: BlockSpec,
    #[arg(long, default_value_t = 4)]
    pub downsample: usize,
    #[arg(long, default_value_t = 10.0)]
    pub frame_shift_ms: f64,
}

#[derive(Debug, Clone, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 10)]
    pub count: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Label tokens besides blank and sos/eos.
    #[arg(long, default_value_t = 100)]
    pub labels: usize,
}

/// Runs the command line and returns the process exit status.
pub fn main_with<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = write!(err, "{}", e.render());
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(cli, out) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e:#}");
            1
        }
    }
}

pub fn run(cli: Cli, out: &mut dyn Write) -> anyhow::Result<()> {
    match cli.command {
        Command::Decode(a) => decode(&a, out),
        Command::Compare(a) => compare(&a, out),
        Command::Scenario(a) => scenario(&a, out),
        Command::Delay(a) => {
            let layout = BlockLayout::new(a.block.left, a.block.center, a.block.right, a.downsample, a.frame_shift_ms)?;
            writeln!(out, "{}", theoretical_delay(&layout))?;
            Ok(())
        }
        Command::Synth(a) => {
            if a.labels == 0 || a.labels > MAX_ALIGNED_LABELS {
                bail!("--labels must be between 1 and {MAX_ALIGNED_LABELS}");
            }
            write_corpus(&a.out, a.seed, a.count, a.labels)?;
            writeln!(out, "wrote {} utterances to {}", a.count, a.out.display())?;
            Ok(())
        }
    }
}

struct Corpus {
    vocab: Vocabulary,
    model: ToyModel,
    entries: Vec<ManifestEntry>,
}

fn is_manifest(path: &Path) -> anyhow::Result<bool> {
    let text = std::fs::read_to_string(path).with_context(|| format!("{}", path.display()))?;
    let first = text.lines().find(|l| !l.trim().is_empty() && !l.starts_with('#'));
    Ok(first.is_some_and(|l| l.contains('\t')))
}

fn load_corpus(c: &CorpusFlags) -> anyhow::Result<Corpus> {
    let vocab = Vocabulary::load(&c.vocab).map_err(|e| in_file(&c.vocab, e))?;
    let model = ToyModel::load(&c.model, &vocab).map_err(|e| in_file(&c.model, e))?;
    let mut entries = if is_manifest(&c.input)? {
        load_manifest(&c.input)?
    } else {
        let id = c
            .input
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "utt".into());
        vec![ManifestEntry {
            id,
            features: c.input.clone(),
            reference: None,
        }]
    };
    if let Some(path) = &c.reference {
        let refs = load_references(path)?;
        for e in &mut entries {
            if let Some(r) = refs.get(&e.id) {
                e.reference = Some(r.clone());
            }
        }
    }
    if c.jobs == 0 {
        bail!("--jobs must be at least 1");
    }
    Ok(Corpus { vocab, model, entries })
}

struct Decoded {
    record: UtteranceResult,
    trace: Vec<TraceEvent>,
}

fn decode_one(
    corpus: &Corpus,
    entry: &ManifestEntry,
    flags: &CorpusFlags,
    config: &DecodeConfig,
    mode: DecodeMode,
) -> anyhow::Result<Decoded> {
    let features = FeatureSequence::load(&entry.features).map_err(|e| in_file(&entry.features, e))?;
    let layout = BlockLayout::new(
        flags.block.left,
        flags.block.center,
        flags.block.right,
        flags.downsample,
        features.frame_shift_ms,
    )?;
    let encoder = ContextualBlockEncoder::new(corpus.model.encoder.clone(), layout)?;
    let scorers = corpus.model.scorers(&corpus.vocab)?;
    let input = RunInput {
        id: &entry.id,
        features: &features,
        encoder: &encoder,
        scorers: &scorers,
        config,
        vocab: &corpus.vocab,
        reference: entry.reference.as_deref(),
    };
    let wall = WallClock::new();
    let cpu = ThreadCpuClock;
    let m = measure_run(&input, mode, &Clocks { wall: &wall, cpu: &cpu })
        .with_context(|| format!("utterance `{}`", entry.id))?;
    Ok(Decoded {
        record: m.record,
        trace: m.search.trace.events,
    })
}

/// Decodes every entry in `modes`, `jobs` utterances at a time, keeping
/// manifest order in the output.
fn decode_all(
    corpus: &Corpus,
    flags: &CorpusFlags,
    config: &DecodeConfig,
    modes: &[DecodeMode],
) -> anyhow::Result<Vec<Vec<Decoded>>> {
    let n = corpus.entries.len();
    let jobs = flags.jobs.min(n.max(1));
    let mut slots: Vec<Option<anyhow::Result<Vec<Decoded>>>> = (0..n).map(|_| None).collect();
    std::thread::scope(|s| {
        let handles: Vec<_> = (0..jobs)
            .map(|w| {
                s.spawn(move || {
                    (w..n)
                        .step_by(jobs)
                        .map(|i| {
                            let e = &corpus.entries[i];
                            let r = modes.iter().map(|&m| decode_one(corpus, e, flags, config, m)).collect();
                            (i, r)
                        })
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        for h in handles {
            for (i, r) in h.join().expect("decode worker panicked") {
                slots[i] = Some(r);
            }
        }
    });
    slots.into_iter().map(|s| s.expect("every index assigned")).collect()
}

#[derive(Serialize)]
struct TraceLine<'a> {
    utterance: &'a str,
    mode: DecodeMode,
    #[serde(flatten)]
    event: &'a TraceEvent,
}

fn write_traces(path: &Path, decoded: &[&Decoded]) -> anyhow::Result<()> {
    let mut text = String::new();
    for d in decoded {
        for event in &d.trace {
            let line = TraceLine {
                utterance: &d.record.id,
                mode: d.record.mode,
                event,
            };
            text.push_str(&serde_json::to_string(&line)?);
            text.push('\n');
        }
    }
    std::fs::write(path, text).with_context(|| format!("writing trace {}", path.display()))
}

fn emit_records(flags: &CorpusFlags, records: &[&UtteranceResult], out: &mut dyn Write) -> anyhow::Result<()> {
    let mut text = String::new();
    for r in records {
        text.push_str(&r.to_line());
        text.push('\n');
    }
    match &flags.output {
        Some(p) => std::fs::write(p, text).with_context(|| format!("writing {}", p.display()))?,
        None => out.write_all(text.as_bytes())?,
    }
    Ok(())
}

fn decode(a: &DecodeArgs, out: &mut dyn Write) -> anyhow::Result<()> {
    let config = a.search.config()?;
    let corpus = load_corpus(&a.corpus)?;
    let decoded: Vec<Decoded> = decode_all(&corpus, &a.corpus, &config, &[a.mode])?
        .into_iter()
        .flatten()
        .collect();
    if let Some(p) = &a.search.trace {
        write_traces(p, &decoded.iter().collect::<Vec<_>>())?;
    }
    let records: Vec<UtteranceResult> = decoded.into_iter().map(|d| d.record).collect();
    emit_records(&a.corpus, &records.iter().collect::<Vec<_>>(), out)?;
    write!(out, "{}", Summary::table(&records))?;
    Ok(())
}

fn compare(a: &CompareArgs, out: &mut dyn Write) -> anyhow::Result<()> {
    let config = a.search.config()?;
    let corpus = load_corpus(&a.corpus)?;
    let decoded = decode_all(&corpus, &a.corpus, &config, &[DecodeMode::Batch, DecodeMode::Streaming])?;
    if let Some(p) = &a.search.trace {
        write_traces(p, &decoded.iter().flatten().collect::<Vec<_>>())?;
    }
    let records: Vec<&UtteranceResult> = decoded.iter().flatten().map(|d| &d.record).collect();
    emit_records(&a.corpus, &records, out)?;

    writeln!(
        out,
        "{:<16} {:>6} {:>7} {:>12} {:>12} {:>10} {:>10}",
        "id", "blocks", "diffs", "batch score", "strm score", "batch resp", "strm resp"
    )?;
    let mut total = 0;
    let mut per_mode: BTreeMap<&str, Vec<UtteranceResult>> = BTreeMap::new();
    for pair in &decoded {
        let (b, s) = (&pair[0].record, &pair[1].record);
        let diffs = edit_distance(&b.hypothesis, &s.hypothesis).distance;
        total += diffs;
        writeln!(
            out,
            "{:<16} {:>6} {:>7} {:>12.4} {:>12.4} {:>10.4} {:>10.4}",
            b.id, s.boundaries.blocks, diffs, b.score, s.score, b.response_time, s.response_time
        )?;
        per_mode.entry("batch").or_default().push(b.clone());
        per_mode.entry("streaming").or_default().push(s.clone());
    }
    writeln!(out, "token diffs: {total}")?;
    for (mode, recs) in &per_mode {
        let s = Summary::of(recs);
        writeln!(
            out,
            "{mode}: rtf {:.3}, mean response {:.4} s, max response {:.4} s",
            s.rtf, s.mean_response_time, s.max_response_time
        )?;
    }
    Ok(())
}

fn scenario(a: &ScenarioArgs, out: &mut dyn Write) -> anyhow::Result<()> {
    let config = a.search.config()?;
    let script = load_script(&a.script)?;
    let result = run_scenario(&script, &config, a.mode)?;
    if let Some(p) = &a.search.trace {
        std::fs::write(p, result.trace.to_jsonl()).with_context(|| format!("writing trace {}", p.display()))?;
    }
    write!(out, "{}", describe(&script, &result))?;
    Ok(())
}
