//! Filesystem snapshots for byte-level tree comparison in tests.

use std::collections::BTreeMap;
use std::os::unix::fs::PermissionsExt;
use std::path::Path;

use sha2::{Digest, Sha256};

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub enum Entry {
    File { digest: String, executable: bool },
    Dir,
    Symlink { target: String },
}

/// Captures every entry under `root` (relative path -> kind+content
/// digest). A missing root snapshots as empty.
pub fn snapshot(root: &Path) -> BTreeMap<String, Entry> {
    let mut out = BTreeMap::new();
    if !root.exists() {
        return out;
    }
    for entry in walkdir::WalkDir::new(root).sort_by_file_name() {
        let entry = entry.expect("walkable test tree");
        if entry.path() == root {
            continue;
        }
        let rel = entry
            .path()
            .strip_prefix(root)
            .expect("under root")
            .to_string_lossy()
            .to_string();
        let ft = entry.file_type();
        let value = if ft.is_dir() {
            Entry::Dir
        } else if ft.is_symlink() {
            Entry::Symlink {
                target: std::fs::read_link(entry.path())
                    .expect("readable symlink")
                    .to_string_lossy()
                    .to_string(),
            }
        } else {
            let bytes = std::fs::read(entry.path()).expect("readable file");
            let mut hasher = Sha256::new();
            hasher.update(&bytes);
            let mut digest = String::with_capacity(64);
            for b in hasher.finalize() {
                digest.push_str(&format!("{b:02x}"));
            }
            let mode = entry.metadata().expect("stat").permissions().mode();
            Entry::File {
                digest,
                executable: mode & 0o111 != 0,
            }
        };
        out.insert(rel, value);
    }
    out
}

/// Human-readable difference between two snapshots; empty when equal.
pub fn diff(before: &BTreeMap<String, Entry>, after: &BTreeMap<String, Entry>) -> Vec<String> {
    let mut out = Vec::new();
    for (path, entry) in before {
        match after.get(path) {
            None => out.push(format!("- {path}")),
            Some(e) if e != entry => out.push(format!("~ {path}")),
            _ => {}
        }
    }
    for path in after.keys() {
        if !before.contains_key(path) {
            out.push(format!("+ {path}"));
        }
    }
    out
}
