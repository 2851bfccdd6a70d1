//! Response time and real-time factor under simulated streaming arrival.
//!
//! Nothing sleeps. The run keeps a virtual timeline: block `b` becomes
//! available once its last input frame has been captured, work on it starts
//! at the later of that moment and the end of the previous work, and lasts
//! as long as the wall clock says it took.

use std::cell::Cell;
use std::time::Instant;

use blocksync::encoder::BlockSpan;
use blocksync::{
    batch_beam_search, BlockLayout, BlockwiseSession, ContextualBlockEncoder, DecodeConfig, FeatureSequence,
    ScorerSet, SearchResult, Vocabulary,
};

use crate::error::{HarnessError, Result};
use crate::report::{DecodeMode, UtteranceResult};

/// A time source in seconds. Readings from one clock must never decrease.
pub trait Clock {
    fn now(&self) -> f64;
}

/// Monotonic wall-clock time since construction.
#[derive(Debug)]
pub struct WallClock(Instant);

impl WallClock {
    pub fn new() -> Self {
        Self(Instant::now())
    }
}

impl Default for WallClock {
    fn default() -> Self {
        Self::new()
    }
}

impl Clock for WallClock {
    fn now(&self) -> f64 {
        self.0.elapsed().as_secs_f64()
    }
}

/// CPU time consumed by the calling thread. Each utterance runs on a
/// single thread, so this is the utterance's processing time even when
/// several workers share the process.
#[derive(Debug, Default, Clone, Copy)]
pub struct ThreadCpuClock;

impl Clock for ThreadCpuClock {
    fn now(&self) -> f64 {
        let mut ts = libc::timespec { tv_sec: 0, tv_nsec: 0 };
        // SAFETY: `ts` is a valid, writable timespec.
        let rc = unsafe { libc::clock_gettime(libc::CLOCK_THREAD_CPUTIME_ID, &mut ts) };
        assert_eq!(rc, 0, "CLOCK_THREAD_CPUTIME_ID unavailable");
        ts.tv_sec as f64 + ts.tv_nsec as f64 * 1e-9
    }
}

/// Scripted clock for tests: every reading returns the current value and
/// then advances it by `step`.
#[derive(Debug)]
pub struct ManualClock {
    t: Cell<f64>,
    step: Cell<f64>,
}

impl ManualClock {
    pub fn new(start: f64, step: f64) -> Self {
        Self {
            t: Cell::new(start),
            step: Cell::new(step),
        }
    }

    pub fn set_step(&self, step: f64) {
        self.step.set(step);
    }
}

impl Clock for ManualClock {
    fn now(&self) -> f64 {
        let t = self.t.get();
        self.t.set(t + self.step.get());
        t
    }
}

/// Wraps a clock and rejects readings that go backwards.
struct Checked<'a> {
    clock: &'a dyn Clock,
    last: Cell<f64>,
}

impl<'a> Checked<'a> {
    fn new(clock: &'a dyn Clock) -> Self {
        Self {
            clock,
            last: Cell::new(f64::NEG_INFINITY),
        }
    }

    fn read(&self) -> Result<f64> {
        let t = self.clock.now();
        let before = self.last.get();
        if !(t >= before) {
            return Err(HarnessError::NonMonotonicClock { before, after: t });
        }
        self.last.set(t);
        Ok(t)
    }
}

pub struct Clocks<'a> {
    pub wall: &'a dyn Clock,
    pub cpu: &'a dyn Clock,
}

/// `cpu_seconds / audio_seconds`.
pub fn rtf(cpu_seconds: f64, audio_seconds: f64) -> f64 {
    if audio_seconds > 0.0 {
        cpu_seconds / audio_seconds
    } else {
        0.0
    }
}

/// Seconds after the start of the utterance at which block `span` can be
/// encoded: its last input frame, right context included, has been captured.
pub fn arrival_time(span: &BlockSpan, layout: &BlockLayout, input_frames: usize) -> f64 {
    let last = (span.end * layout.downsample).min(input_frames);
    last as f64 * layout.frame_shift_ms / 1000.0
}

pub struct RunInput<'a> {
    pub id: &'a str,
    pub features: &'a FeatureSequence,
    pub encoder: &'a ContextualBlockEncoder,
    pub scorers: &'a ScorerSet,
    pub config: &'a DecodeConfig,
    pub vocab: &'a Vocabulary,
    pub reference: Option<&'a [String]>,
}

pub struct Measured {
    pub record: UtteranceResult,
    pub search: SearchResult,
}

/// Decodes one utterance in `mode` and times it.
///
/// Streaming encodes and decodes each block when it arrives. Batch waits
/// for the whole input, then encodes everything and runs ordinary beam
/// search. In both cases `response_time` is measured from the arrival of the
/// last block to completion.
pub fn measure_run(input: &RunInput<'_>, mode: DecodeMode, clocks: &Clocks<'_>) -> Result<Measured> {
    let wall = Checked::new(clocks.wall);
    let cpu = Checked::new(clocks.cpu);
    let enc = input.encoder;
    let blocks_in = enc.block_inputs(input.features)?;
    let frames = input.features.num_frames();
    let arrivals: Vec<f64> = blocks_in
        .iter()
        .map(|b| arrival_time(&b.span, &enc.layout, frames))
        .collect();
    let last_arrival = *arrivals.last().expect("segmentation yields at least one block");

    let cpu0 = cpu.read()?;
    let mut block_times = Vec::with_capacity(blocks_in.len());
    let finalize_time;
    let completion;
    let search = match mode {
        DecodeMode::Streaming => {
            let mut session = BlockwiseSession::new(input.scorers, input.config, input.vocab)?;
            let mut ctx = enc.initial_context();
            let mut t = 0.0f64;
            for (b, &avail) in blocks_in.iter().zip(&arrivals) {
                t = t.max(avail);
                let w0 = wall.read()?;
                let (encoded, next) = enc.encode_block(b, &ctx)?;
                ctx = next;
                session.push_block(encoded)?;
                let dt = wall.read()? - w0;
                block_times.push(dt);
                t += dt;
            }
            let w0 = wall.read()?;
            let result = session.finalize()?;
            finalize_time = wall.read()? - w0;
            completion = t + finalize_time;
            result
        }
        DecodeMode::Batch => {
            let w0 = wall.read()?;
            let mut ctx = enc.initial_context();
            let mut encoded = Vec::with_capacity(blocks_in.len());
            for b in &blocks_in {
                let (e, next) = enc.encode_block(b, &ctx)?;
                ctx = next;
                encoded.push(e);
            }
            let result = batch_beam_search(&encoded, input.scorers, input.config, input.vocab)?;
            finalize_time = wall.read()? - w0;
            completion = last_arrival + finalize_time;
            result
        }
    };
    let cpu_seconds = cpu.read()? - cpu0;

    let mut record = UtteranceResult::from_search(input.id, mode, &search, input.vocab, input.reference);
    record.block_times = block_times;
    record.finalize_time = finalize_time;
    record.response_time = (completion - last_arrival).max(0.0);
    record.cpu_seconds = cpu_seconds;
    record.audio_seconds = input.features.duration_seconds();
    record.rtf = rtf(cpu_seconds, record.audio_seconds);
    record.boundaries.blocks = blocks_in.len();
    Ok(Measured { record, search })
}
