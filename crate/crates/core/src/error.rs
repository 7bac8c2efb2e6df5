use std::path::PathBuf;

/// Error type shared across the crate.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("file not found: {0}")]
    FileNotFound(PathBuf),

    #[error("unparsable font {path}: {reason}")]
    UnparsableFont { path: PathBuf, reason: String },

    #[error("missing glyph(s): {}", fmt_codepoints(.0))]
    MissingGlyph(Vec<u32>),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("insufficient corpus: {0}")]
    InsufficientCorpus(String),

    #[error("empty manifest")]
    EmptyManifest,

    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: String, got: String },

    #[error("tensor spatial dims too small: {0}")]
    ShapeTooSmall(String),

    #[error("unknown style index {index} (table has {n_styles})")]
    UnknownStyleIndex { index: usize, n_styles: usize },

    #[error("non-finite input in {0}")]
    NonFiniteInput(String),

    #[error("non-finite loss at step {step}: {detail}")]
    NonFiniteLoss { step: u64, detail: String },

    #[error("config mismatch: {0}")]
    ConfigMismatch(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("missing ground truth: {0}")]
    MissingGroundTruth(String),

    #[error("unknown layer: {0}")]
    UnknownLayer(String),

    #[error("bad manifest {path}: {reason}")]
    BadManifest { path: PathBuf, reason: String },

    #[error("bad checkpoint {path}: {reason}")]
    BadCheckpoint { path: PathBuf, reason: String },

    #[error("refusing to overwrite {0} (pass --force to allow)")]
    WouldOverwrite(PathBuf),
}

fn fmt_codepoints(cps: &[u32]) -> String {
    let shown: Vec<String> = cps.iter().take(8).map(|c| format!("U+{c:04X}")).collect();
    if cps.len() > 8 {
        format!("{} (+{} more)", shown.join(", "), cps.len() - 8)
    } else {
        shown.join(", ")
    }
}

impl Error {
    /// Process exit code the CLI maps this error to.
    /// 2 = validation, 3 = input/IO, 4 = numerical failure.
    pub fn exit_code(&self) -> i32 {
        use Error::*;
        match self {
            NonFiniteLoss { .. } | NonFiniteInput(_) => 4,
            FileNotFound(_) | UnparsableFont { .. } | MissingGlyph(_) | Io(_)
            | BadManifest { .. } | BadCheckpoint { .. } => 3,
            _ => 2,
        }
    }
}
