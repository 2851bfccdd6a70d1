//! CTC prefix scores against brute-force alignment sums.

use blocksync::scorers::{CtcPrefixComputer, CtcState};
use blocksync::Vocabulary;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const BLANK: usize = 0;

fn collapse(path: &[usize]) -> Vec<usize> {
    let mut out = Vec::new();
    let mut prev = None;
    for &p in path {
        if Some(p) != prev && p != BLANK {
            out.push(p);
        }
        prev = Some(p);
    }
    out
}

/// (prefix probability, complete probability) of `labels` by enumerating
/// every alignment.
fn brute_force(probs: &[Vec<f64>], labels: &[usize]) -> (f64, f64) {
    let v = probs[0].len();
    let t = probs.len();
    let (mut prefix, mut complete) = (0.0, 0.0);
    let mut path = vec![0usize; t];
    for code in 0..v.pow(t as u32) {
        let mut c = code;
        let mut p = 1.0;
        for (i, slot) in path.iter_mut().enumerate() {
            *slot = c % v;
            c /= v;
            p *= probs[i][*slot];
        }
        let col = collapse(&path);
        if col.starts_with(labels) {
            prefix += p;
        }
        if col == labels {
            complete += p;
        }
    }
    (prefix, complete)
}

fn random_probs(rng: &mut ChaCha8Rng, t: usize, v: usize) -> Vec<Vec<f64>> {
    (0..t)
        .map(|_| {
            let raw: Vec<f64> = (0..v).map(|_| rng.gen_range(0.05..1.0)).collect();
            let s: f64 = raw.iter().sum();
            raw.into_iter().map(|x| x / s).collect()
        })
        .collect()
}

fn logs(p: &[Vec<f64>]) -> Vec<Vec<f64>> {
    p.iter().map(|r| r.iter().map(|x| x.ln()).collect()).collect()
}

fn vocab() -> Vocabulary {
    Vocabulary::with_labels(&["a", "b"]).unwrap()
}

fn state_for(c: &CtcPrefixComputer, labels: &[usize], rows: &[Vec<f64>]) -> CtcState {
    let mut st = c.resume(&c.init(), rows).unwrap();
    for &l in labels {
        st = c.prefix_score(&st, l, rows).unwrap().1;
    }
    st
}

#[test]
fn two_uniform_frames_match_enumeration() {
    let v = vocab();
    let c = CtcPrefixComputer::new(&v);
    // blank, sos/eos, a, b with <eos> never emitted.
    let third = 1.0 / 3.0;
    let probs = vec![vec![third, 0.0, third, third]; 2];
    let rows = logs(&probs);
    for ext in [2, 3] {
        let (score, _) = c.prefix_score(&c.init(), ext, &rows).unwrap();
        let (oracle, _) = brute_force(&probs, &[ext]);
        assert!((score.exp() - oracle).abs() < 1e-9, "{ext}: {} vs {oracle}", score.exp());
    }
    let st = state_for(&c, &[2], &rows);
    let (score, _) = c.prefix_score(&st, 3, &rows).unwrap();
    assert!((score.exp() - brute_force(&probs, &[2, 3]).0).abs() < 1e-9);
}

#[test]
fn random_posteriors_match_enumeration() {
    let v = vocab();
    let c = CtcPrefixComputer::new(&v);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..20 {
        let t = rng.gen_range(1..=5);
        let probs = random_probs(&mut rng, t, 4);
        let rows = logs(&probs);
        let len = rng.gen_range(0..=3);
        let labels: Vec<usize> = (0..len).map(|_| rng.gen_range(2..4)).collect();
        let st = state_for(&c, &labels, &rows);
        let (p, comp) = brute_force(&probs, &labels);
        if !labels.is_empty() {
            assert!((st.prefix_score().exp() - p).abs() < 1e-9);
        }
        assert!((st.complete_score().exp() - comp).abs() < 1e-9);
        let (eos, _) = c.prefix_score(&st, 1, &rows).unwrap();
        assert!((eos.exp() - comp).abs() < 1e-9);
        assert_eq!(st.labels(), labels);
    }
}

#[test]
fn resumed_chunks_match_one_shot_without_recomputation() {
    let v = vocab();
    let c = CtcPrefixComputer::new(&v);
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let rows = logs(&random_probs(&mut rng, 9, 4));
    let one_shot = state_for(&c, &[2, 3, 3], &rows);

    c.stats().reset();
    let early = state_for(&c, &[2, 3, 3], &rows[..4]);
    assert_eq!(early.frames(), 4);
    let before = c.stats().resumed_columns();
    let resumed = c.resume(&early, &rows).unwrap();
    // Three labels, five new frames each; the root needs five as well.
    assert_eq!(c.stats().resumed_columns() - before, 4 * 5);
    assert!((resumed.prefix_score() - one_shot.prefix_score()).abs() < 1e-9);
    assert!((resumed.complete_score() - one_shot.complete_score()).abs() < 1e-9);
    let close = |a: f64, b: f64| a == b || (a - b).abs() < 1e-12;
    for t in 0..=9 {
        assert!(close(resumed.gamma_nonblank()[t], one_shot.gamma_nonblank()[t]));
        assert!(close(resumed.gamma_blank()[t], one_shot.gamma_blank()[t]));
    }
}

#[test]
fn shrinking_frames_are_rejected() {
    let v = vocab();
    let c = CtcPrefixComputer::new(&v);
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let rows = logs(&random_probs(&mut rng, 4, 4));
    let st = state_for(&c, &[2], &rows);
    assert!(c.resume(&st, &rows[..2]).is_err());
}

proptest! {
    #[test]
    fn prefix_probabilities_nest(seed in 0u64..1000, t in 1usize..6, len in 0usize..3) {
        let v = vocab();
        let c = CtcPrefixComputer::new(&v);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows = logs(&random_probs(&mut rng, t, 4));
        let labels: Vec<usize> = (0..len).map(|_| rng.gen_range(2..4)).collect();
        let st = state_for(&c, &labels, &rows);
        let mut total = st.complete_score().exp();
        for ext in [2, 3] {
            total += c.prefix_score(&st, ext, &rows).unwrap().0.exp();
        }
        prop_assert!(total <= st.prefix_score().exp() + 1e-9);
    }
}
