//! Scripted scorer reading its distributions from a table.
//!
//! File format, one entry per line:
//!
//! ```text
//! ; comment
//! #tokens he she clasped his hands
//! #blocks 3
//! <sos> | 1 | he:-0.1 she:-2.4
//! <sos> he | * | clasped:-0.05
//! * | * | <eos>:0
//! ```
//!
//! The prefix is a space separated token list starting at `<sos>` (or `*`
//! for any prefix), followed by a block count or `*`. Listed tokens get the
//! given log probabilities. Whatever mass is left is spread evenly over the
//! unlisted non-blank tokens. Lookup prefers an exact prefix and block
//! count, then the exact prefix with any block count, then any prefix with
//! the exact block count, then the catch-all.

use std::collections::HashMap;
use std::path::Path;
use std::sync::Arc;

use super::{Scorer, ScorerState, ScoringContext, StepScores};
use crate::config::ScorerKind;
use crate::error::{Error, Result};
use crate::score::LogScore;
use crate::vocab::{TokenId, Vocabulary};

const WHAT: &str = "table script";
const MASS_TOLERANCE: f64 = 1e-6;
const LEFTOVER_FLOOR: f64 = 1e-12;

type Key = (Option<Vec<TokenId>>, Option<usize>);

/// Parsed table: vocabulary, optional block count and the scripted rows.
#[derive(Debug, Clone)]
pub struct TableScript {
    vocab: Vocabulary,
    blocks: Option<usize>,
    frames_per_block: usize,
    entries: HashMap<Key, Vec<LogScore>>,
}

impl TableScript {
    /// Parses a script that declares its labels with `#tokens`.
    pub fn parse(text: &str) -> Result<Self> {
        Self::parse_inner(text, None)
    }

    /// Parses a script against an existing vocabulary; `#tokens` is ignored.
    pub fn parse_with_vocab(text: &str, vocab: &Vocabulary) -> Result<Self> {
        Self::parse_inner(text, Some(vocab.clone()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    fn parse_inner(text: &str, given: Option<Vocabulary>) -> Result<Self> {
        let mut vocab = given;
        let mut blocks = None;
        let mut frames_per_block = 1;
        let mut raw_entries = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let lineno = i + 1;
            let line = raw.split(';').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('#') {
                let mut parts = rest.split_whitespace();
                match parts.next() {
                    Some("tokens") => {
                        if vocab.is_none() {
                            let labels: Vec<&str> = parts.collect();
                            vocab = Some(Vocabulary::with_labels(&labels).map_err(|e| Error::parse(WHAT, lineno, e.to_string()))?);
                        }
                    }
                    Some(key @ ("blocks" | "frames")) => {
                        let n: usize = parts
                            .next()
                            .and_then(|v| v.parse().ok())
                            .filter(|&n| n > 0)
                            .ok_or_else(|| Error::parse(WHAT, lineno, format!("#{key} needs a positive count")))?;
                        if key == "blocks" {
                            blocks = Some(n);
                        } else {
                            frames_per_block = n;
                        }
                    }
                    other => {
                        return Err(Error::parse(WHAT, lineno, format!("unknown directive #{}", other.unwrap_or(""))));
                    }
                }
                continue;
            }
            raw_entries.push((lineno, line));
        }
        let vocab = vocab.ok_or_else(|| Error::parse(WHAT, 0, "no #tokens directive and no vocabulary given"))?;
        let mut entries = HashMap::new();
        for (lineno, line) in raw_entries {
            let (key, dist) = parse_entry(line, lineno, &vocab)?;
            if entries.insert(key, dist).is_some() {
                return Err(Error::parse(WHAT, lineno, "duplicate entry"));
            }
        }
        Ok(Self {
            vocab,
            blocks,
            frames_per_block,
            entries,
        })
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    /// Number of blocks the scenario runs over, if declared.
    pub fn blocks(&self) -> Option<usize> {
        self.blocks
    }

    pub fn frames_per_block(&self) -> usize {
        self.frames_per_block
    }

    /// Distribution after `prefix` (starting with the start token) with
    /// `blocks` blocks available.
    pub fn lookup(&self, prefix: &[TokenId], blocks: usize) -> Result<&[LogScore]> {
        let p = Some(prefix.to_vec());
        let keys = [(p.clone(), Some(blocks)), (p, None), (None, Some(blocks)), (None, None)];
        keys.iter()
            .find_map(|k| self.entries.get(k))
            .map(Vec::as_slice)
            .ok_or_else(|| {
                Error::Table(format!(
                    "no entry for prefix `{}` with {blocks} blocks",
                    self.vocab.render(prefix)
                ))
            })
    }
}

fn resolve(vocab: &Vocabulary, tok: &str) -> Option<TokenId> {
    match tok {
        "<sos>" | "<eos>" => Some(vocab.sos_eos_id()),
        t => vocab.id(t),
    }
}

fn parse_entry(line: &str, lineno: usize, vocab: &Vocabulary) -> Result<(Key, Vec<LogScore>)> {
    let fields: Vec<&str> = line.split('|').map(str::trim).collect();
    if fields.len() != 3 {
        return Err(Error::parse(WHAT, lineno, "expected `PREFIX | b | token:logp ...`"));
    }
    let prefix = if fields[0] == "*" {
        None
    } else {
        let ids = fields[0]
            .split_whitespace()
            .map(|t| resolve(vocab, t).ok_or_else(|| Error::parse(WHAT, lineno, format!("unknown token `{t}`"))))
            .collect::<Result<Vec<_>>>()?;
        if ids.first() != Some(&vocab.sos_eos_id()) {
            return Err(Error::parse(WHAT, lineno, "prefix must start with <sos>"));
        }
        Some(ids)
    };
    let blocks = if fields[1] == "*" {
        None
    } else {
        Some(
            fields[1]
                .parse::<usize>()
                .ok()
                .filter(|&b| b > 0)
                .ok_or_else(|| Error::parse(WHAT, lineno, "block count must be a positive integer or `*`"))?,
        )
    };
    let mut dist = vec![None; vocab.len()];
    for item in fields[2].split_whitespace() {
        let (tok, lp) = item
            .rsplit_once(':')
            .ok_or_else(|| Error::parse(WHAT, lineno, format!("expected token:logp, got `{item}`")))?;
        let id = resolve(vocab, tok).ok_or_else(|| Error::parse(WHAT, lineno, format!("unknown token `{tok}`")))?;
        if id == vocab.blank_id() {
            return Err(Error::parse(WHAT, lineno, "the blank symbol cannot be scripted"));
        }
        let lp: f64 = match lp {
            "-inf" => f64::NEG_INFINITY,
            s => s.parse().map_err(|_| Error::parse(WHAT, lineno, format!("bad log probability `{s}`")))?,
        };
        if lp.is_nan() || lp > 0.0 {
            return Err(Error::parse(WHAT, lineno, format!("log probability {lp} is not <= 0")));
        }
        if dist[id].replace(lp).is_some() {
            return Err(Error::parse(WHAT, lineno, format!("token `{tok}` listed twice")));
        }
    }
    let listed: f64 = dist.iter().flatten().map(|lp| lp.exp()).sum();
    if listed > 1.0 + MASS_TOLERANCE {
        return Err(Error::parse(WHAT, lineno, format!("listed probabilities sum to {listed}")));
    }
    let leftover = 1.0 - listed;
    let free = (0..vocab.len())
        .filter(|&t| t != vocab.blank_id() && dist[t].is_none())
        .count();
    if free == 0 && leftover > MASS_TOLERANCE {
        return Err(Error::parse(WHAT, lineno, format!("listed probabilities sum to {listed}")));
    }
    let fill = if leftover < LEFTOVER_FLOOR || free == 0 {
        f64::NEG_INFINITY
    } else {
        (leftover / free as f64).ln()
    };
    let out = dist
        .iter()
        .enumerate()
        .map(|(t, lp)| match lp {
            Some(lp) => *lp,
            None if t == vocab.blank_id() => f64::NEG_INFINITY,
            None => fill,
        })
        .collect();
    Ok(((prefix, blocks), out))
}

/// Scorer replaying a [`TableScript`]. Its state is the prefix itself.
#[derive(Debug, Clone)]
pub struct TableScorer {
    script: Arc<TableScript>,
    kind: ScorerKind,
}

impl TableScorer {
    /// A table scorer in the attention role.
    pub fn new(script: TableScript) -> Self {
        Self::with_kind(script, ScorerKind::Attention)
    }

    /// A table scorer standing in for another scorer role.
    pub fn with_kind(script: TableScript, kind: ScorerKind) -> Self {
        Self {
            script: Arc::new(script),
            kind,
        }
    }

    pub fn script(&self) -> &TableScript {
        &self.script
    }
}

impl Scorer for TableScorer {
    fn kind(&self) -> ScorerKind {
        self.kind
    }

    fn name(&self) -> &str {
        "table"
    }

    fn init(&self) -> ScorerState {
        ScorerState::new(vec![self.script.vocab.sos_eos_id()])
    }

    fn score_step(&self, state: &ScorerState, prefix: &[TokenId], ctx: &ScoringContext<'_>) -> Result<StepScores> {
        let recorded = state.expect::<Vec<TokenId>>("table")?;
        if recorded.as_slice() != prefix {
            return Err(Error::Table("state does not belong to the scored prefix".into()));
        }
        if ctx.blocks.is_empty() {
            return Err(Error::NoBlocks);
        }
        let dist = self.script.lookup(prefix, ctx.blocks.len())?;
        Ok(StepScores::new(dist.to_vec(), ()))
    }

    fn extend(&self, _step: &StepScores, prefix: &[TokenId], token: TokenId) -> ScorerState {
        let mut p = prefix.to_vec();
        p.push(token);
        ScorerState::new(p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layout::EncodedBlock;
    use crate::scorers::BlockCache;

    const SCRIPT: &str = "\
#tokens he clasped his
<sos> | 1 | he:-0.2 his:-2
<sos> he | * | clasped:-0.1 ; comment
* | * | <eos>:0
";

    #[test]
    fn exact_entry_is_returned() {
        let s = TableScript::parse(SCRIPT).unwrap();
        let v = s.vocab().clone();
        let he = v.id("he").unwrap();
        let scorer = TableScorer::new(s);
        let blocks = [EncodedBlock::placeholder(1, 0, 1, false)];
        let cache = BlockCache::empty();
        let ctx = ScoringContext { blocks: &blocks, cache: &cache };
        let st = scorer.init();
        let step = scorer.score_step(&st, &[1], &ctx).unwrap();
        assert_eq!(step.log_probs[he], -0.2);
        assert_eq!(step.log_probs[v.id("his").unwrap()], -2.0);
        assert_eq!(step.log_probs[v.blank_id()], f64::NEG_INFINITY);
        let total: f64 = step.log_probs.iter().map(|l| l.exp()).sum();
        assert!((total - 1.0).abs() < 1e-6);

        let st = scorer.extend(&step, &[1], he);
        let step = scorer.score_step(&st, &[1, he], &ctx).unwrap();
        assert_eq!(step.log_probs[v.id("clasped").unwrap()], -0.1);
    }

    #[test]
    fn wildcards_and_missing_rows() {
        let s = TableScript::parse(SCRIPT).unwrap();
        assert_eq!(s.lookup(&[1, 3, 4], 2).unwrap()[1], 0.0);
        let s = TableScript::parse("#tokens a\n<sos> | 1 | a:0\n").unwrap();
        assert!(matches!(s.lookup(&[1], 2), Err(Error::Table(_))));
    }

    #[test]
    fn malformed_lines_name_the_line() {
        let err = TableScript::parse("#tokens a b\n<sos> | 1 | a:-0.1 a:-3\n").unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
        assert!(TableScript::parse("#tokens a b\n<sos> | 1 | a:0 b:0\n").is_err());
        assert!(TableScript::parse("#tokens a\nhe | 1 | a:0\n").is_err());
    }
}
