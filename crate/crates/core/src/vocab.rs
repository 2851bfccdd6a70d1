//! Closed token inventory with a CTC blank and a shared start/end token.

use std::collections::HashMap;
use std::path::Path;

use crate::error::{Error, Result};

/// Index of a token in the [`Vocabulary`].
pub type TokenId = usize;

/// Dense token inventory.
///
/// The start-of-sequence and end-of-sequence markers share one index, so an
/// emitted end marker reads as a repeat of the first token of every
/// hypothesis.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, TokenId>,
    blank_id: TokenId,
    sos_eos_id: TokenId,
}

impl Vocabulary {
    pub fn new(tokens: Vec<String>, blank_id: TokenId, sos_eos_id: TokenId) -> Result<Self> {
        if blank_id >= tokens.len() || sos_eos_id >= tokens.len() {
            return Err(Error::Config(format!(
                "blank ({blank_id}) and sos/eos ({sos_eos_id}) must index into {} tokens",
                tokens.len()
            )));
        }
        if blank_id == sos_eos_id {
            return Err(Error::Config("blank and sos/eos must be distinct".into()));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(Error::Config(format!("duplicate token `{t}`")));
            }
        }
        Ok(Self {
            tokens,
            index,
            blank_id,
            sos_eos_id,
        })
    }

    /// `<blank>`, `<sos/eos>` then `labels`, in that order.
    pub fn with_labels<S: AsRef<str>>(labels: &[S]) -> Result<Self> {
        let mut tokens = vec!["<blank>".to_string(), "<sos/eos>".to_string()];
        tokens.extend(labels.iter().map(|s| s.as_ref().to_string()));
        Self::new(tokens, 0, 1)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn blank_id(&self) -> TokenId {
        self.blank_id
    }

    pub fn sos_eos_id(&self) -> TokenId {
        self.sos_eos_id
    }

    pub fn token(&self, id: TokenId) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn id(&self, token: &str) -> Option<TokenId> {
        self.index.get(token).copied()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Renders ids as a space-separated string, `?` for unknown ids.
    pub fn render(&self, ids: &[TokenId]) -> String {
        ids.iter()
            .map(|&i| self.token(i).unwrap_or("?"))
            .collect::<Vec<_>>()
            .join(" ")
    }

    /// Looks up every whitespace-separated token of `text`.
    pub fn encode(&self, text: &str) -> Result<Vec<TokenId>> {
        text.split_whitespace()
            .map(|t| {
                self.id(t)
                    .ok_or_else(|| Error::Config(format!("unknown token `{t}`")))
            })
            .collect()
    }

    /// Parses the vocabulary file format: optional `#blank <idx>` and
    /// `#soseos <idx>` header directives, then one token per line. The n-th
    /// token line (0-based, directives and blank lines excluded) is index n.
    pub fn parse(text: &str) -> Result<Self> {
        const WHAT: &str = "vocabulary";
        let mut blank = None;
        let mut soseos = None;
        let mut tokens = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            let lineno = lineno + 1;
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('#') {
                if !tokens.is_empty() {
                    return Err(Error::parse(WHAT, lineno, "directive after first token"));
                }
                let mut parts = rest.split_whitespace();
                let key = parts.next().unwrap_or("");
                let val: usize = parts
                    .next()
                    .and_then(|v| v.parse().ok())
                    .ok_or_else(|| Error::parse(WHAT, lineno, "directive needs an index"))?;
                match key {
                    "blank" => blank = Some(val),
                    "soseos" => soseos = Some(val),
                    other => {
                        return Err(Error::parse(WHAT, lineno, format!("unknown directive #{other}")))
                    }
                }
                continue;
            }
            if line.split_whitespace().count() != 1 {
                return Err(Error::parse(WHAT, lineno, "tokens may not contain whitespace"));
            }
            tokens.push(line.to_string());
        }
        let blank = blank.ok_or_else(|| Error::parse(WHAT, 0, "missing #blank directive"))?;
        let soseos = soseos.ok_or_else(|| Error::parse(WHAT, 0, "missing #soseos directive"))?;
        Self::new(tokens, blank, soseos)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn to_file_string(&self) -> String {
        let mut s = format!("#blank {}\n#soseos {}\n", self.blank_id, self.sos_eos_id);
        for t in &self.tokens {
            s.push_str(t);
            s.push('\n');
        }
        s
    }
}
