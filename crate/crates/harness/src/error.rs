use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error(transparent)]
    Decode(#[from] blocksync::Error),

    #[error("clock went backwards: read {before} s, then {after} s")]
    NonMonotonicClock { before: f64, after: f64 },

    #[error("{}: line {line}: {msg}", path.display())]
    Input { path: PathBuf, line: usize, msg: String },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed record: {0}")]
    Record(#[from] serde_json::Error),

    #[error("record schema version {found}, this build reads {expected}")]
    SchemaVersion { found: u32, expected: u32 },
}

pub type Result<T> = std::result::Result<T, HarnessError>;

pub(crate) fn read_file(path: &std::path::Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Re-attributes a core parse error to the file it came from.
pub(crate) fn in_file(path: &std::path::Path, e: blocksync::Error) -> HarnessError {
    match e {
        blocksync::Error::Parse { what, line, msg } => HarnessError::Input {
            path: path.to_path_buf(),
            line,
            msg: format!("{what}: {msg}"),
        },
        blocksync::Error::Io(source) => HarnessError::Io {
            path: path.to_path_buf(),
            source,
        },
        other => other.into(),
    }
}
