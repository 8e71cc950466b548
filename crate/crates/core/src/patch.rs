//! Unified diff parsing and application.
//!
//! Supports multi-file patches with `---`/`+++` headers and `@@` hunks,
//! `\ No newline at end of file` markers, component stripping, reverse
//! application, and already-applied detection. Application is
//! all-or-nothing: every file's result is computed in memory before
//! anything is written.

use std::path::{Component, Path, PathBuf};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Reverse,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum LineKind {
    Context,
    Remove,
    Add,
}

#[derive(Debug, Clone)]
struct HunkLine {
    kind: LineKind,
    text: String,
}

#[derive(Debug, Clone)]
pub struct Hunk {
    old_start: usize,
    old_count: usize,
    new_start: usize,
    new_count: usize,
    lines: Vec<HunkLine>,
}

#[derive(Debug, Clone)]
pub struct FilePatch {
    pub old_path: String,
    pub new_path: String,
    hunks: Vec<Hunk>,
    old_no_trailing_newline: bool,
    new_no_trailing_newline: bool,
}

#[derive(Debug, Clone)]
pub struct Patch {
    pub files: Vec<FilePatch>,
}

const DEV_NULL: &str = "/dev/null";

impl Patch {
    /// Parses unified diff text. Lines before the first `---` header
    /// (e.g. `diff --git` or index lines) are ignored.
    pub fn parse(text: &str) -> Result<Patch> {
        let lines: Vec<&str> = text.lines().collect();
        let mut files = Vec::new();
        let mut i = 0usize;

        while i < lines.len() {
            if !lines[i].starts_with("--- ") {
                i += 1;
                continue;
            }
            let old_path = header_path(lines[i], "---", i)?;
            i += 1;
            if i >= lines.len() || !lines[i].starts_with("+++ ") {
                return Err(parse_err(i, "expected `+++` header after `---`"));
            }
            let new_path = header_path(lines[i], "+++", i)?;
            i += 1;

            let mut file = FilePatch {
                old_path,
                new_path,
                hunks: Vec::new(),
                old_no_trailing_newline: false,
                new_no_trailing_newline: false,
            };

            while i < lines.len() && lines[i].starts_with("@@") {
                let (old_start, old_count, new_start, new_count) = parse_hunk_header(lines[i], i)?;
                i += 1;
                let mut body = Vec::new();
                let (mut seen_old, mut seen_new) = (0usize, 0usize);
                while seen_old < old_count || seen_new < new_count {
                    let raw = *lines
                        .get(i)
                        .ok_or_else(|| parse_err(i, "hunk shorter than its header declares"))?;
                    let (kind, text) = match raw.chars().next() {
                        Some(' ') => (LineKind::Context, &raw[1..]),
                        // Some generators emit empty context lines bare.
                        None => (LineKind::Context, ""),
                        Some('-') => (LineKind::Remove, &raw[1..]),
                        Some('+') => (LineKind::Add, &raw[1..]),
                        Some('\\') => {
                            mark_no_newline(&mut file, body.last())?;
                            i += 1;
                            continue;
                        }
                        _ => return Err(parse_err(i, "unexpected line inside hunk")),
                    };
                    match kind {
                        LineKind::Context => {
                            seen_old += 1;
                            seen_new += 1;
                        }
                        LineKind::Remove => seen_old += 1,
                        LineKind::Add => seen_new += 1,
                    }
                    if seen_old > old_count || seen_new > new_count {
                        return Err(parse_err(i, "hunk longer than its header declares"));
                    }
                    body.push(HunkLine {
                        kind,
                        text: text.to_string(),
                    });
                    i += 1;
                }
                if i < lines.len() && lines[i].starts_with('\\') {
                    mark_no_newline(&mut file, body.last())?;
                    i += 1;
                }
                file.hunks.push(Hunk {
                    old_start,
                    old_count,
                    new_start,
                    new_count,
                    lines: body,
                });
            }
            if file.hunks.is_empty() {
                return Err(parse_err(i, "file entry without hunks"));
            }
            files.push(file);
        }

        if files.is_empty() {
            return Err(parse_err(0, "no file headers found"));
        }
        Ok(Patch { files })
    }

    fn reversed(&self) -> Patch {
        Patch {
            files: self.files.iter().map(FilePatch::reversed).collect(),
        }
    }
}

fn parse_err(line: usize, reason: &str) -> Error {
    Error::PatchParse {
        line: line + 1,
        reason: reason.to_string(),
    }
}

fn mark_no_newline(file: &mut FilePatch, last: Option<&HunkLine>) -> Result<()> {
    match last.map(|l| l.kind) {
        Some(LineKind::Context) => {
            file.old_no_trailing_newline = true;
            file.new_no_trailing_newline = true;
        }
        Some(LineKind::Remove) => file.old_no_trailing_newline = true,
        Some(LineKind::Add) => file.new_no_trailing_newline = true,
        None => return Err(parse_err(0, "no-newline marker with no preceding line")),
    }
    Ok(())
}

fn header_path(line: &str, prefix: &str, lineno: usize) -> Result<String> {
    let rest = line[prefix.len()..].trim_start();
    let path = rest.split('\t').next().unwrap_or("").trim_end();
    if path.is_empty() {
        return Err(parse_err(lineno, "empty path in header"));
    }
    Ok(path.to_string())
}

fn parse_hunk_header(line: &str, lineno: usize) -> Result<(usize, usize, usize, usize)> {
    // @@ -old_start[,old_count] +new_start[,new_count] @@ [section]
    let err = || parse_err(lineno, "malformed hunk header");
    let inner = line.strip_prefix("@@ ").ok_or_else(err)?;
    let end = inner.find(" @@").ok_or_else(err)?;
    let mut parts = inner[..end].split(' ');
    let old = parts.next().ok_or_else(err)?.strip_prefix('-').ok_or_else(err)?;
    let new = parts.next().ok_or_else(err)?.strip_prefix('+').ok_or_else(err)?;
    if parts.next().is_some() {
        return Err(err());
    }
    let parse_range = |s: &str| -> Result<(usize, usize)> {
        match s.split_once(',') {
            Some((a, b)) => Ok((
                a.parse().map_err(|_| err())?,
                b.parse().map_err(|_| err())?,
            )),
            None => Ok((s.parse().map_err(|_| err())?, 1)),
        }
    };
    let (old_start, old_count) = parse_range(old)?;
    let (new_start, new_count) = parse_range(new)?;
    Ok((old_start, old_count, new_start, new_count))
}

impl FilePatch {
    fn reversed(&self) -> FilePatch {
        FilePatch {
            old_path: self.new_path.clone(),
            new_path: self.old_path.clone(),
            old_no_trailing_newline: self.new_no_trailing_newline,
            new_no_trailing_newline: self.old_no_trailing_newline,
            hunks: self
                .hunks
                .iter()
                .map(|h| Hunk {
                    old_start: h.new_start,
                    old_count: h.new_count,
                    new_start: h.old_start,
                    new_count: h.old_count,
                    lines: h
                        .lines
                        .iter()
                        .map(|l| HunkLine {
                            kind: match l.kind {
                                LineKind::Context => LineKind::Context,
                                LineKind::Remove => LineKind::Add,
                                LineKind::Add => LineKind::Remove,
                            },
                            text: l.text.clone(),
                        })
                        .collect(),
                })
                .collect(),
        }
    }
}

fn strip_components(path: &str, strip: usize) -> Result<PathBuf> {
    if path == DEV_NULL {
        return Ok(PathBuf::from(DEV_NULL));
    }
    let parts: Vec<&str> = path.split('/').filter(|p| !p.is_empty()).collect();
    if parts.len() <= strip {
        return Err(Error::PatchApply {
            file: path.to_string(),
            hunk: 0,
            reason: format!("cannot strip {strip} components from `{path}`"),
        });
    }
    let rel = PathBuf::from(parts[strip..].join("/"));
    if rel
        .components()
        .any(|c| matches!(c, Component::ParentDir | Component::RootDir))
    {
        return Err(Error::PatchApply {
            file: path.to_string(),
            hunk: 0,
            reason: "patch path escapes the work directory".to_string(),
        });
    }
    Ok(rel)
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct FileText {
    lines: Vec<String>,
    trailing_newline: bool,
}

impl FileText {
    fn from_bytes(bytes: &[u8], path: &str) -> Result<FileText> {
        let text = std::str::from_utf8(bytes).map_err(|_| Error::PatchApply {
            file: path.to_string(),
            hunk: 0,
            reason: "target is not valid UTF-8 text".to_string(),
        })?;
        if text.is_empty() {
            return Ok(FileText {
                lines: Vec::new(),
                trailing_newline: true,
            });
        }
        let trailing_newline = text.ends_with('\n');
        let body = if trailing_newline {
            &text[..text.len() - 1]
        } else {
            text
        };
        Ok(FileText {
            lines: body.split('\n').map(str::to_string).collect(),
            trailing_newline,
        })
    }

    fn to_bytes(&self) -> Vec<u8> {
        if self.lines.is_empty() {
            return Vec::new();
        }
        let mut out = self.lines.join("\n");
        if self.trailing_newline {
            out.push('\n');
        }
        out.into_bytes()
    }
}

/// Applies all hunks of one file patch to `content`, strictly: context
/// and removed lines must match exactly at the positions the headers
/// (adjusted by earlier hunks) declare.
fn apply_file(fp: &FilePatch, content: &FileText, display: &str) -> Result<FileText> {
    let mut out: Vec<String> = Vec::new();
    let mut cursor = 0usize; // next unconsumed old line

    for (idx, hunk) in fp.hunks.iter().enumerate() {
        let hunk_no = idx + 1;
        let mismatch = |reason: String| Error::PatchApply {
            file: display.to_string(),
            hunk: hunk_no,
            reason,
        };
        // old_start is 1-based; a zero old_count means "insert after this
        // line", so the insertion point is old_start itself.
        let start = if hunk.old_count == 0 {
            hunk.old_start
        } else {
            hunk.old_start.saturating_sub(1)
        };
        if start < cursor {
            return Err(mismatch("hunks overlap".to_string()));
        }
        if start > content.lines.len() {
            return Err(mismatch(format!(
                "hunk starts at line {} but file has {} lines",
                hunk.old_start,
                content.lines.len()
            )));
        }
        out.extend_from_slice(&content.lines[cursor..start]);
        cursor = start;

        for l in &hunk.lines {
            match l.kind {
                LineKind::Context | LineKind::Remove => {
                    let actual = content.lines.get(cursor).ok_or_else(|| {
                        mismatch("file ends before hunk does".to_string())
                    })?;
                    if actual != &l.text {
                        return Err(mismatch(format!(
                            "expected `{}`, found `{actual}` at line {}",
                            l.text,
                            cursor + 1
                        )));
                    }
                    cursor += 1;
                    if l.kind == LineKind::Context {
                        out.push(l.text.clone());
                    }
                }
                LineKind::Add => out.push(l.text.clone()),
            }
        }
    }
    if fp.old_no_trailing_newline && cursor == content.lines.len() && content.trailing_newline {
        return Err(Error::PatchApply {
            file: display.to_string(),
            hunk: fp.hunks.len(),
            reason: "patch expects no trailing newline in the original".to_string(),
        });
    }
    out.extend_from_slice(&content.lines[cursor..]);

    let trailing_newline = if fp.new_no_trailing_newline {
        false
    } else if fp.old_no_trailing_newline {
        true
    } else {
        content.trailing_newline || out.is_empty()
    };
    Ok(FileText {
        lines: out,
        trailing_newline,
    })
}

enum Outcome {
    Write(PathBuf, FileText),
    Create(PathBuf, FileText),
    Delete(PathBuf),
}

/// Applies a parsed patch under `workdir` with the given strip level.
/// Fails without modifying anything if any file or hunk does not apply;
/// a file whose reverse patch applies cleanly reports "already applied".
pub fn apply(patch: &Patch, workdir: &Path, strip: usize, direction: Direction) -> Result<()> {
    let effective = match direction {
        Direction::Forward => patch.clone(),
        Direction::Reverse => patch.reversed(),
    };

    let mut outcomes = Vec::new();
    for fp in &effective.files {
        let old_rel = strip_components(&fp.old_path, strip)?;
        let new_rel = strip_components(&fp.new_path, strip)?;
        let creating = fp.old_path == DEV_NULL;
        let deleting = fp.new_path == DEV_NULL;
        let target_rel = if creating { &new_rel } else { &old_rel };
        let display = target_rel.display().to_string();
        let target = workdir.join(target_rel);

        if creating {
            if target.exists() {
                return Err(already_applied_or(
                    fp,
                    &FileText::from_bytes(
                        &std::fs::read(&target)
                            .map_err(|e| Error::io(format!("reading {}", target.display()), e))?,
                        &display,
                    )?,
                    &display,
                    Error::PatchApply {
                        file: display.clone(),
                        hunk: 1,
                        reason: "file to create already exists".to_string(),
                    },
                ));
            }
            let created = apply_file(
                fp,
                &FileText {
                    lines: Vec::new(),
                    trailing_newline: true,
                },
                &display,
            )?;
            outcomes.push(Outcome::Create(target, created));
            continue;
        }

        let bytes = std::fs::read(&target).map_err(|_| Error::PatchApply {
            file: display.clone(),
            hunk: 0,
            reason: "file to patch does not exist".to_string(),
        })?;
        let content = FileText::from_bytes(&bytes, &display)?;
        match apply_file(fp, &content, &display) {
            Ok(new_content) => {
                if deleting {
                    if !new_content.lines.is_empty() {
                        return Err(Error::PatchApply {
                            file: display.clone(),
                            hunk: fp.hunks.len(),
                            reason: "deletion leaves content behind".to_string(),
                        });
                    }
                    outcomes.push(Outcome::Delete(target));
                } else {
                    outcomes.push(Outcome::Write(target, new_content));
                }
            }
            Err(e) => return Err(already_applied_or(fp, &content, &display, e)),
        }
    }

    // Everything applies; now touch the filesystem.
    for outcome in outcomes {
        match outcome {
            Outcome::Write(path, content) => {
                std::fs::write(&path, content.to_bytes())
                    .map_err(|e| Error::io(format!("writing {}", path.display()), e))?;
            }
            Outcome::Create(path, content) => {
                if let Some(parent) = path.parent() {
                    std::fs::create_dir_all(parent)
                        .map_err(|e| Error::io(format!("creating {}", parent.display()), e))?;
                }
                std::fs::write(&path, content.to_bytes())
                    .map_err(|e| Error::io(format!("writing {}", path.display()), e))?;
            }
            Outcome::Delete(path) => {
                std::fs::remove_file(&path)
                    .map_err(|e| Error::io(format!("removing {}", path.display()), e))?;
            }
        }
    }
    Ok(())
}

/// Distinguishes "does not apply" from "already applied": if the reverse
/// of the file patch applies cleanly to the current content, the patch
/// has been applied before.
fn already_applied_or(fp: &FilePatch, content: &FileText, display: &str, err: Error) -> Error {
    if apply_file(&fp.reversed(), content, display).is_ok() {
        Error::PatchAlreadyApplied {
            file: display.to_string(),
        }
    } else {
        err
    }
}

/// Convenience wrapper: parse then apply.
pub fn apply_bytes(patch: &[u8], workdir: &Path, strip: usize, direction: Direction) -> Result<()> {
    let text = std::str::from_utf8(patch)
        .map_err(|_| parse_err(0, "patch is not valid UTF-8"))?;
    apply(&Patch::parse(text)?, workdir, strip, direction)
}
