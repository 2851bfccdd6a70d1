//! Scripted decoding scenarios replayed through the table scorer.

use std::sync::Arc;

use blocksync::scorers::{ScorerSet, TableScorer, TableScript};
use blocksync::trace::TraceEvent;
use blocksync::{blockwise_synchronous_beam_search, BlockwiseSession, DecodeConfig, EncodedBlock, Vocabulary};

const FIG2: &str = include_str!("../../../scenarios/fig2.tbl");
const ABLATION: &str = include_str!("../../../scenarios/repetition_ablation.tbl");

fn setup(text: &str) -> (ScorerSet, Vocabulary, Vec<EncodedBlock>) {
    let script = TableScript::parse(text).unwrap();
    let vocab = script.vocab().clone();
    let n = script.blocks().unwrap();
    let f = script.frames_per_block();
    let blocks = (0..n).map(|b| EncodedBlock::placeholder(b + 1, b * f, f, b + 1 == n)).collect();
    let set = ScorerSet::new(Arc::new(TableScorer::new(script))).unwrap();
    (set, vocab, blocks)
}

fn config(conservative: bool) -> DecodeConfig {
    DecodeConfig {
        beam_width: 5,
        conservative,
        ..DecodeConfig::default()
    }
}

fn words(vocab: &Vocabulary, toks: &[usize]) -> String {
    vocab.render(toks)
}

#[test]
fn fig2_boundary_after_step_five() {
    let (set, vocab, blocks) = setup(FIG2);
    let r = blockwise_synchronous_beam_search(blocks, &set, &config(false), &vocab).unwrap();
    assert_eq!(r.trace.boundaries, vec![0, 5, 8]);
    let (step, boundary, entries) = r.trace.checks(1).last().unwrap();
    assert_eq!(step, 6);
    assert!(boundary);
    assert_eq!(entries.len(), 5);
    assert!(entries.iter().all(|e| !e.report.reliable));
    // Block 2 resumes from Ω_5.
    assert!(r.trace.events.iter().any(|e| matches!(e, TraceEvent::Block { block: 2, resume_from: 5, .. })));
    assert!(!r.forced);
    assert_eq!(
        words(&vocab, r.best.label_tokens(vocab.sos_eos_id())),
        "he clasp ed his hands on the desk and said"
    );
}

#[test]
fn fig2_conservative_resumes_from_four() {
    let (set, vocab, blocks) = setup(FIG2);
    let r = blockwise_synchronous_beam_search(blocks, &set, &config(true), &vocab).unwrap();
    assert_eq!(r.trace.boundaries[1], 4);
    assert!(r.trace.events.iter().any(|e| matches!(e, TraceEvent::Block { block: 2, resume_from: 4, .. })));
    assert_eq!(r.trace.decode_counts[5], 2);
}

#[test]
fn fig2_partial_best_after_first_block() {
    let (set, vocab, blocks) = setup(FIG2);
    let mut s = BlockwiseSession::new(&set, &config(false), &vocab).unwrap();
    assert!(s.partial_best().is_none() || s.partial_best().unwrap().length() == 0);
    s.push_block(blocks[0].clone()).unwrap();
    let best = s.partial_best().unwrap();
    assert_eq!(words(&vocab, &best.tokens[1..]), "he clasp ed his hands");
}

#[test]
fn judged_repetition_is_excluded_at_next_block() {
    let (set, vocab, blocks) = setup(FIG2);
    let r = blockwise_synchronous_beam_search(blocks, &set, &config(false), &vocab).unwrap();
    let eos = vocab.sos_eos_id();
    let p5 = vocab.encode("he clasp ed his hands").unwrap();
    let is_child = |t: &[usize]| t.len() == 7 && t[1..6] == p5[..];
    // Block 1: <eos> (position 0) sets r.
    let (_, _, e1) = r.trace.checks(1).find(|(s, _, _)| *s == 6).unwrap();
    assert!(e1.iter().filter(|e| is_child(&e.tokens)).all(|e| e.report.j_star == Some(0)));
    // Block 2: every pair judged at block 1 is excluded, so the same
    // <eos> extension no longer counts against its siblings.
    let (_, boundary, e2) = r.trace.checks(2).find(|(s, _, _)| *s == 6).unwrap();
    assert!(!boundary);
    let ended = e2.iter().find(|e| is_child(&e.tokens) && e.tokens[6] == eos).unwrap();
    assert_eq!(ended.report.j_star, None);
    assert!(ended.report.reliable);
}

#[test]
fn repetition_ablation() {
    let (set, vocab, blocks) = setup(ABLATION);
    let on = blockwise_synchronous_beam_search(blocks.clone(), &set, &config(false), &vocab).unwrap();
    let (step, boundary, _) = on.trace.checks(1).next_back_step(3);
    assert_eq!((step, boundary), (3, true));

    let off_cfg = DecodeConfig {
        repetition_criterion: false,
        ..config(false)
    };
    let off = blockwise_synchronous_beam_search(blocks, &set, &off_cfg, &vocab).unwrap();
    let (step, boundary, _) = off.trace.checks(1).next_back_step(3);
    assert_eq!((step, boundary), (3, false));
}

trait StepLookup<'a> {
    fn next_back_step(self, step: usize) -> (usize, bool, &'a [blocksync::trace::CheckEntry]);
}

impl<'a, I: Iterator<Item = (usize, bool, &'a [blocksync::trace::CheckEntry])>> StepLookup<'a> for I {
    fn next_back_step(mut self, step: usize) -> (usize, bool, &'a [blocksync::trace::CheckEntry]) {
        self.find(|(s, _, _)| *s == step).expect("step was checked")
    }
}

#[test]
fn push_after_finalize_is_rejected() {
    let (set, vocab, blocks) = setup(FIG2);
    let mut s = BlockwiseSession::new(&set, &config(false), &vocab).unwrap();
    for b in &blocks {
        s.push_block(b.clone()).unwrap();
    }
    assert!(matches!(s.push_block(blocks[0].clone()), Err(blocksync::Error::Finalized)));
}

#[test]
fn session_without_last_flag_matches_one_shot() {
    let (set, vocab, blocks) = setup(FIG2);
    let one = blockwise_synchronous_beam_search(blocks.clone(), &set, &config(true), &vocab).unwrap();
    let mut s = BlockwiseSession::new(&set, &config(true), &vocab).unwrap();
    for mut b in blocks {
        b.is_last = false;
        s.push_block(b).unwrap();
    }
    let r = s.finalize().unwrap();
    assert_eq!(r.best.tokens, one.best.tokens);
    assert_eq!(r.best.score_total.to_bits(), one.best.score_total.to_bits());
    assert_eq!(r.trace, one.trace);
}

#[test]
fn empty_block_is_rejected_at_push() {
    let (set, vocab, _) = setup(FIG2);
    let mut s = BlockwiseSession::new(&set, &config(false), &vocab).unwrap();
    let empty = EncodedBlock::placeholder(1, 0, 0, false);
    assert!(matches!(s.push_block(empty), Err(blocksync::Error::EmptyInput)));
}
