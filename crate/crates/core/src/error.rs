//! Crate-wide error type.

use std::path::PathBuf;

/// Broad classification used by callers that need to map errors onto
/// process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    /// Malformed input text: versions, atoms, recipes, config files,
    /// dependency expressions, toy artifacts.
    Parse,
    /// Dependency resolution failures: unknown atoms, keyword masks,
    /// cycles, slot conflicts, unsatisfiable any-of groups.
    Resolution,
    /// Build execution failures: phase errors, sandbox violations,
    /// patch application, missing sources, I/O.
    Build,
    /// Merge-time file collisions.
    Collision,
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid version `{text}` at index {index}: {reason}")]
    VersionParse {
        text: String,
        index: usize,
        reason: String,
    },

    #[error("invalid atom `{text}`: {reason}")]
    AtomParse { text: String, reason: String },

    #[error("invalid dependency expression `{text}`: {reason}")]
    DepExprParse { text: String, reason: String },

    #[error("recipe {path}: {reason}")]
    RecipeParse { path: PathBuf, reason: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("configuration error in {file} line {line}: {reason}")]
    ConfigFile {
        file: PathBuf,
        line: usize,
        reason: String,
    },

    #[error("ambiguous package name `{name}` (candidates: {})", candidates.join(", "))]
    AmbiguousName {
        name: String,
        candidates: Vec<String>,
    },

    #[error("no recipe matches `{atom}`")]
    NotFound { atom: String },

    #[error("all candidates for `{atom}` are keyword-masked (keywords: {})", keywords.join(", "))]
    Masked { atom: String, keywords: Vec<String> },

    #[error("dependency cycle with no PDEPEND edge: {}", cycle.join(" -> "))]
    DependencyCycle { cycle: Vec<String> },

    #[error("slot conflict on {category}/{name}:{slot}: versions {} required together", versions.join(", "))]
    SlotConflict {
        category: String,
        name: String,
        slot: String,
        versions: Vec<String>,
    },

    #[error("no satisfiable alternative in any-of group `{group}` required by {requester}")]
    AnyOfUnsatisfiable { group: String, requester: String },

    #[error("package {id} is not installed")]
    NotInstalled { id: String },

    #[error("phase `{phase}` failed at line {line}: {message}")]
    Phase {
        phase: String,
        line: usize,
        message: String,
    },

    #[error("sandbox violation: {0}")]
    Sandbox(String),

    #[error("missing source file: {0}")]
    MissingSource(PathBuf),

    #[error("patch parse error at line {line}: {reason}")]
    PatchParse { line: usize, reason: String },

    #[error("patch does not apply: file `{file}`, hunk {hunk}: {reason}")]
    PatchApply {
        file: String,
        hunk: usize,
        reason: String,
    },

    #[error("patch already applied to `{file}` (reverse applies cleanly)")]
    PatchAlreadyApplied { file: String },

    #[error("file collision: `{path}` is already owned by {owner}")]
    Collision { path: String, owner: String },

    #[error("not a toy artifact: {0}")]
    ToyFormat(String),

    #[error("bootstrap error: {0}")]
    Bootstrap(String),

    #[error("select error: {0}")]
    Select(String),

    #[error("could not acquire lock {path}: {reason}")]
    Lock { path: PathBuf, reason: String },

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }

    pub fn kind(&self) -> ErrorKind {
        use Error::*;
        match self {
            VersionParse { .. } | AtomParse { .. } | DepExprParse { .. } | RecipeParse { .. }
            | Config(_) | ConfigFile { .. } | PatchParse { .. } | ToyFormat(_) => ErrorKind::Parse,
            AmbiguousName { .. } | NotFound { .. } | Masked { .. } | DependencyCycle { .. }
            | SlotConflict { .. } | AnyOfUnsatisfiable { .. } | NotInstalled { .. } => {
                ErrorKind::Resolution
            }
            Collision { .. } => ErrorKind::Collision,
            Phase { .. } | Sandbox(_) | MissingSource(_) | PatchApply { .. }
            | PatchAlreadyApplied { .. } | Bootstrap(_) | Select(_) | Lock { .. } | Io { .. } => {
                ErrorKind::Build
            }
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
