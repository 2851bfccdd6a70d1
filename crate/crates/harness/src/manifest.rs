//! Corpus manifests and reference files.

use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};

use crate::error::{read_file, HarnessError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub id: String,
    /// Resolved against the manifest's directory when relative.
    pub features: PathBuf,
    pub reference: Option<Vec<String>>,
}

/// Parses `id <tab> feature-file [<tab> reference tokens]` lines. Blank lines
/// and lines starting with `#` are skipped.
pub fn parse_manifest(text: &str, path: &Path) -> Result<Vec<ManifestEntry>> {
    let base = path.parent().unwrap_or(Path::new(""));
    let err = |line, msg: String| HarnessError::Input {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        if raw.trim().is_empty() || raw.trim_start().starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = raw.split('\t').collect();
        if fields.len() < 2 || fields.len() > 3 {
            return Err(err(line, "expected `id<TAB>feature-file[<TAB>reference]`".into()));
        }
        let id = fields[0].trim();
        let file = fields[1].trim();
        if id.is_empty() || file.is_empty() {
            return Err(err(line, "empty id or feature path".into()));
        }
        if !seen.insert(id.to_string()) {
            return Err(err(line, format!("duplicate utterance id `{id}`")));
        }
        let features = base.join(file);
        let reference = fields
            .get(2)
            .map(|r| r.split_whitespace().map(str::to_string).collect());
        out.push(ManifestEntry {
            id: id.to_string(),
            features,
            reference,
        });
    }
    Ok(out)
}

pub fn load_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    parse_manifest(&read_file(path)?, path)
}

/// Parses `id token token ...` lines.
pub fn parse_references(text: &str, path: &Path) -> Result<BTreeMap<String, Vec<String>>> {
    let mut out = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let mut words = raw.split_whitespace();
        let Some(id) = words.next() else { continue };
        if out.insert(id.to_string(), words.map(str::to_string).collect()).is_some() {
            return Err(HarnessError::Input {
                path: path.to_path_buf(),
                line: i + 1,
                msg: format!("duplicate reference for `{id}`"),
            });
        }
    }
    Ok(out)
}

pub fn load_references(path: &Path) -> Result<BTreeMap<String, Vec<String>>> {
    parse_references(&read_file(path)?, path)
}
