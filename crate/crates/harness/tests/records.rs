//! Result records, error metrics and timed runs.

use std::collections::BTreeMap;

use blocksync::trace::Score;
use blocksync::{BlockLayout, ContextualBlockEncoder, DecodeConfig};
use blocksync_harness::report::{BoundarySummary, Summary};
use blocksync_harness::synth::AlignedToy;
use blocksync_harness::{
    edit_distance, measure_run, Clocks, DecodeMode, EditCounts, ErrorSummary, HarnessError, ManualClock, RunInput,
    UtteranceResult,
};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Plain recursive edit distance with memoization.
fn levenshtein(a: &[u8], b: &[u8]) -> usize {
    fn go(a: &[u8], b: &[u8], memo: &mut BTreeMap<(usize, usize), usize>) -> usize {
        if a.is_empty() {
            return b.len();
        }
        if b.is_empty() {
            return a.len();
        }
        if let Some(&d) = memo.get(&(a.len(), b.len())) {
            return d;
        }
        let sub = go(&a[1..], &b[1..], memo) + usize::from(a[0] != b[0]);
        let del = go(&a[1..], b, memo) + 1;
        let ins = go(a, &b[1..], memo) + 1;
        let d = sub.min(del).min(ins);
        memo.insert((a.len(), b.len()), d);
        d
    }
    go(a, b, &mut BTreeMap::new())
}

fn score() -> impl Strategy<Value = f64> {
    prop_oneof![
        8 => -1e6f64..0.0,
        1 => Just(f64::NEG_INFINITY),
        1 => Just(0.0),
    ]
}

fn words() -> impl Strategy<Value = Vec<String>> {
    proptest::collection::vec("[a-z\"\\\\é]{1,4}", 0..6)
}

fn record() -> impl Strategy<Value = UtteranceResult> {
    (
        "[a-z0-9-]{1,10}",
        prop_oneof![Just(DecodeMode::Batch), Just(DecodeMode::Streaming)],
        proptest::option::of(words()),
        words(),
        score(),
        proptest::collection::btree_map("(attention|ctc|lm)", score(), 0..3),
        any::<bool>(),
        proptest::collection::vec(0.0f64..10.0, 0..5),
        (0.0f64..10.0, 0.0f64..10.0, 0.0f64..10.0, 0.0f64..100.0),
        proptest::collection::vec(0usize..50, 1..5),
    )
        .prop_map(|(id, mode, reference, hypothesis, score, scores, forced, block_times, t, bounds)| {
            let errors = reference.as_ref().map(|r| edit_distance(r, &hypothesis));
            UtteranceResult {
                schema_version: 1,
                id,
                mode,
                reference,
                hypothesis,
                score,
                scores: scores.into_iter().map(|(k, v)| (k, Score(v))).collect(),
                forced,
                block_times: block_times.clone(),
                finalize_time: t.0,
                response_time: t.1,
                cpu_seconds: t.2,
                audio_seconds: t.3,
                rtf: if t.3 > 0.0 { t.2 / t.3 } else { 0.0 },
                boundaries: BoundarySummary {
                    blocks: block_times.len(),
                    index_boundaries: bounds,
                    redecoded_steps: 3,
                },
                errors,
            }
        })
}

proptest! {
    #[test]
    fn records_round_trip_byte_identical(r in record()) {
        let line = r.to_line();
        prop_assert!(!line.contains('\n'));
        let back = UtteranceResult::from_line(&line).unwrap();
        prop_assert_eq!(back.to_line(), line);
        prop_assert_eq!(back.score.to_bits(), r.score.to_bits());
    }

    #[test]
    fn edit_distance_matches_recursion(a in proptest::collection::vec(0u8..4, 0..9), b in proptest::collection::vec(0u8..4, 0..9)) {
        let c = edit_distance(&a, &b);
        prop_assert_eq!(c.distance, levenshtein(&a, &b));
        prop_assert_eq!(c.distance, c.substitutions + c.insertions + c.deletions);
        prop_assert_eq!(c.ref_len + c.insertions, c.hyp_len + c.deletions);
    }

    #[test]
    fn summary_rate_is_micro_averaged(pairs in proptest::collection::vec(
        (proptest::collection::vec(0u8..3, 0..6), proptest::collection::vec(0u8..3, 0..6)), 1..8)
    ) {
        let counts: Vec<EditCounts> = pairs.iter().map(|(r, h)| edit_distance(r, h)).collect();
        let s: ErrorSummary = counts.iter().collect();
        let dist: usize = counts.iter().map(|c| c.distance).sum();
        let refs: usize = counts.iter().map(|c| c.ref_len).sum();
        prop_assert_eq!(s.utterances, counts.len());
        prop_assert_eq!(s.totals.distance, dist);
        if refs > 0 {
            prop_assert!((s.rate() - dist as f64 / refs as f64).abs() < 1e-12);
        }
    }
}

#[test]
fn wrong_schema_version_is_rejected() {
    let line = r#"{"schema_version":2,"id":"x","mode":"batch","hypothesis":[],"score":0.0,"scores":{},"forced":false,"block_times":[],"finalize_time":0.0,"response_time":0.0,"cpu_seconds":0.0,"audio_seconds":0.0,"rtf":0.0,"boundaries":{"blocks":0,"index_boundaries":[0],"redecoded_steps":0}}"#;
    assert!(matches!(
        UtteranceResult::from_line(line),
        Err(HarnessError::SchemaVersion { found: 2, expected: 1 })
    ));
    let unknown = line.replace("\"schema_version\":2", "\"schema_version\":1,\"extra\":1");
    assert!(matches!(UtteranceResult::from_line(&unknown), Err(HarnessError::Record(_))));
}

fn aligned_run(mode: DecodeMode, wall: &ManualClock) -> blocksync_harness::Result<UtteranceResult> {
    let toy = AlignedToy::new(5, 30);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (features, reference) = toy.utterance(&mut rng, 3.0, 10.0);
    let layout = BlockLayout::new(16, 16, 8, toy.downsample, 10.0).unwrap();
    let encoder = ContextualBlockEncoder::new(toy.model.encoder.clone(), layout).unwrap();
    let scorers = toy.model.scorers(&toy.vocab).unwrap();
    let config = DecodeConfig {
        beam_width: 3,
        ctc_weight: 0.5,
        ..DecodeConfig::default()
    };
    let input = RunInput {
        id: "u",
        features: &features,
        encoder: &encoder,
        scorers: &scorers,
        config: &config,
        vocab: &toy.vocab,
        reference: Some(&reference),
    };
    let cpu = ManualClock::new(0.0, 0.0);
    measure_run(&input, mode, &Clocks { wall, cpu: &cpu }).map(|m| m.record)
}

#[test]
fn frozen_clock_gives_zero_response() {
    for mode in [DecodeMode::Batch, DecodeMode::Streaming] {
        let r = aligned_run(mode, &ManualClock::new(0.0, 0.0)).unwrap();
        assert_eq!(r.response_time, 0.0);
        assert_eq!(r.cpu_seconds, 0.0);
        assert!(r.block_times.iter().all(|&t| t == 0.0));
        assert_eq!(r.audio_seconds, 3.0);
        assert_eq!(r.errors.unwrap().distance, 0, "{:?}", r.hypothesis);
    }
}

#[test]
fn slow_streaming_falls_behind_arrivals() {
    // Every clock reading advances one second, far slower than the audio.
    let r = aligned_run(DecodeMode::Streaming, &ManualClock::new(0.0, 1.0)).unwrap();
    let blocks = r.boundaries.blocks as f64;
    assert!(r.block_times.iter().all(|&t| t == 1.0));
    // Decoding started at the first arrival, so completion lags the
    // last arrival by nearly all of the work.
    assert!(r.response_time >= blocks + 1.0 - 3.0, "{}", r.response_time);
    let b = aligned_run(DecodeMode::Batch, &ManualClock::new(0.0, 1.0)).unwrap();
    assert_eq!(b.response_time, 1.0);
    assert_eq!(b.finalize_time, 1.0);
}

#[test]
fn backwards_clock_is_an_error() {
    let r = aligned_run(DecodeMode::Streaming, &ManualClock::new(100.0, -1.0));
    assert!(matches!(r, Err(HarnessError::NonMonotonicClock { .. })));
}

#[test]
fn summary_of_records() {
    let r = aligned_run(DecodeMode::Batch, &ManualClock::new(0.0, 0.0)).unwrap();
    let s = Summary::of(&[r.clone(), r]);
    assert_eq!(s.utterances, 2);
    assert_eq!(s.errors.utterances, 2);
    assert_eq!(s.errors.rate(), 0.0);
}
