//! Build execution: sandboxed phase runner, built-in command interpreter,
//! staging-image merge with collision protection, and unmerge.
//!
//! Recipes never run a shell. Phase command lines are interpreted by a
//! small built-in language (`toycc`, `install-file`, `make-dir`,
//! `make-sym`, `echo-to`, `fail`); unknown commands fall back to external
//! process execution with the build environment. All writes must land
//! under the work dir S, the image dir D, or the distfiles cache.
//!
//! Phase runs for independent plan actions may execute concurrently
//! (disjoint S/D); callers serialize `merge`/`unmerge` per target root
//! with an advisory lock (`<root><eprefix>/.pm-lock`), as the CLI does.

use std::collections::BTreeSet;
use std::os::unix::fs::PermissionsExt;
use std::path::{Component, Path, PathBuf};

use indexmap::IndexMap;

use crate::atoms::{Atom, PackageId};
use crate::config::{self, Config, EffectiveUse};
use crate::error::{Error, Result};
use crate::patch::{self, Direction};
use crate::repository::{Phase, Recipe};
use crate::select;
use crate::vdb::{sha256_hex, ContentsEntry, InstalledSet, Vdb, VdbEntry, BUILD_ENV_KEYS};

const TOY_MAGIC: &str = "!TOYOBJ 1";

/// The toy object format standing in for compiled binaries: a textual
/// header naming the machine it was built for, then the payload.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ToyArtifact {
    pub machine: String,
    pub cflags: String,
    pub payload: Vec<u8>,
}

impl ToyArtifact {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = format!(
            "{TOY_MAGIC}\nMACHINE: {}\nCFLAGS: {}\n\n",
            self.machine, self.cflags
        )
        .into_bytes();
        out.extend_from_slice(&self.payload);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<ToyArtifact> {
        let mut rest = bytes;
        let mut next_line = || -> Result<String> {
            let nl = rest
                .iter()
                .position(|&b| b == b'\n')
                .ok_or_else(|| Error::ToyFormat("truncated header".to_string()))?;
            let line = String::from_utf8(rest[..nl].to_vec())
                .map_err(|_| Error::ToyFormat("non-UTF-8 header".to_string()))?;
            rest = &rest[nl + 1..];
            Ok(line)
        };
        if next_line()? != TOY_MAGIC {
            return Err(Error::ToyFormat("bad magic".to_string()));
        }
        let machine = next_line()?
            .strip_prefix("MACHINE: ")
            .ok_or_else(|| Error::ToyFormat("missing MACHINE header".to_string()))?
            .to_string();
        let cflags = next_line()?
            .strip_prefix("CFLAGS: ")
            .ok_or_else(|| Error::ToyFormat("missing CFLAGS header".to_string()))?
            .to_string();
        if !next_line()?.is_empty() {
            return Err(Error::ToyFormat("missing blank line".to_string()));
        }
        Ok(ToyArtifact {
            machine,
            cflags,
            payload: rest.to_vec(),
        })
    }
}

/// Reads the MACHINE header of a toy artifact on disk.
pub fn inspect_machine(file: &Path) -> Result<String> {
    let bytes =
        std::fs::read(file).map_err(|e| Error::io(format!("reading {}", file.display()), e))?;
    Ok(ToyArtifact::from_bytes(&bytes)?.machine)
}

/// Per-build state; S and D are created empty and torn down by the caller.
#[derive(Debug, Clone)]
pub struct BuildContext {
    pub s_dir: PathBuf,
    pub d_dir: PathBuf,
    pub env: IndexMap<String, String>,
    pub use_flags: EffectiveUse,
    pub target_root: PathBuf,
    pub eprefix: PathBuf,
    pub chost: String,
    pub cbuild: String,
    pub distdir: PathBuf,
    pub recipe_dir: PathBuf,
    pub user_patches: Vec<PathBuf>,
}

impl BuildContext {
    /// Lays out S/D under `<config_root>/var/tmp/pm/`, computes the layered
    /// environment, and injects S, D, EPREFIX, ROOT, and USE.
    pub fn prepare(config: &Config, recipe: &Recipe, use_flags: &EffectiveUse) -> Result<BuildContext> {
        let build_base = config
            .config_root
            .join("var/tmp/pm")
            .join(&recipe.id.category)
            .join(format!("{}-{}", recipe.id.name, recipe.id.version));
        let s_dir = build_base.join("work");
        let d_dir = build_base.join("image");
        for dir in [&s_dir, &d_dir] {
            if dir.exists() {
                std::fs::remove_dir_all(dir)
                    .map_err(|e| Error::io(format!("clearing {}", dir.display()), e))?;
            }
            std::fs::create_dir_all(dir)
                .map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
        }

        let mut env = config::build_environment(config, recipe)?;
        let chost = env
            .get("CHOST")
            .cloned()
            .unwrap_or_else(|| config.chost());
        let cbuild = env
            .get("CBUILD")
            .cloned()
            .unwrap_or_else(|| config.cbuild());
        env.insert("S".to_string(), s_dir.display().to_string());
        env.insert("D".to_string(), d_dir.display().to_string());
        env.insert("EPREFIX".to_string(), prefix_offset(&config.eprefix));
        env.insert("ROOT".to_string(), config.root.display().to_string());
        env.insert("USE".to_string(), use_flags.render());

        Ok(BuildContext {
            s_dir,
            d_dir,
            env,
            use_flags: use_flags.clone(),
            target_root: config.root.clone(),
            eprefix: config.eprefix.clone(),
            chost,
            cbuild,
            distdir: config.config_root.join("var/cache/pm/distfiles"),
            recipe_dir: recipe.dir.clone(),
            user_patches: config::find_user_patches(config, &recipe.id),
        })
    }

    pub fn cleanup(&self) {
        for dir in [&self.s_dir, &self.d_dir] {
            let _ = std::fs::remove_dir_all(dir);
        }
        // Prune empty ancestors up to var/tmp.
        let mut cursor = self.s_dir.parent().map(Path::to_path_buf);
        for _ in 0..4 {
            let Some(dir) = cursor else { break };
            if std::fs::remove_dir(&dir).is_err() {
                break;
            }
            cursor = dir.parent().map(Path::to_path_buf);
        }
    }

    fn features(&self) -> BTreeSet<String> {
        self.env
            .get("FEATURES")
            .map(|f| f.split_whitespace().map(str::to_string).collect())
            .unwrap_or_default()
    }
}

/// `EPREFIX` as recipes see it: "" for the root prefix so that
/// `${D}${EPREFIX}/usr/bin` composes cleanly.
fn prefix_offset(eprefix: &Path) -> String {
    let s = eprefix.to_str().unwrap_or("");
    if s == "/" {
        String::new()
    } else {
        s.to_string()
    }
}

/// Lexically normalizes `.` and `..` without touching the filesystem.
fn normalize(path: &Path) -> PathBuf {
    let mut out = PathBuf::new();
    for c in path.components() {
        match c {
            Component::CurDir => {}
            Component::ParentDir => {
                out.pop();
            }
            other => out.push(other),
        }
    }
    out
}

fn resolve_arg(ctx: &BuildContext, token: &str) -> PathBuf {
    let p = PathBuf::from(token);
    if p.is_absolute() {
        normalize(&p)
    } else {
        normalize(&ctx.s_dir.join(p))
    }
}

fn check_write_sandbox(ctx: &BuildContext, path: &Path) -> Result<()> {
    if path.starts_with(&ctx.s_dir) || path.starts_with(&ctx.d_dir) {
        Ok(())
    } else {
        Err(Error::Sandbox(format!(
            "write to {} outside S ({}) and D ({})",
            path.display(),
            ctx.s_dir.display(),
            ctx.d_dir.display()
        )))
    }
}

/// A command-level failure; run_phases stamps it with the phase name and
/// line number.
fn cmd_err(message: String) -> Error {
    Error::Phase {
        phase: String::new(),
        line: 0,
        message,
    }
}

/// Splits a command line on whitespace, honoring double quotes, then
/// expands `${VAR}` inside each token from the build environment.
fn tokenize(line: &str, env: &IndexMap<String, String>) -> Result<Vec<String>> {
    let mut tokens = Vec::new();
    let mut current = String::new();
    let mut in_quotes = false;
    let mut any = false;
    for c in line.chars() {
        match c {
            '"' => {
                in_quotes = !in_quotes;
                any = true;
            }
            c if c.is_whitespace() && !in_quotes => {
                if any {
                    tokens.push(current.clone());
                    current.clear();
                    any = false;
                }
            }
            c => {
                current.push(c);
                any = true;
            }
        }
    }
    if in_quotes {
        return Err(cmd_err(format!("unterminated quote in `{line}`")));
    }
    if any {
        tokens.push(current);
    }
    Ok(tokens
        .into_iter()
        .map(|t| crate::conf::expand(&t, |name| env.get(name).cloned()))
        .collect())
}

/// Executes one phase command line. Built-ins are dispatched by the first
/// token; anything else runs as an external process with the build
/// environment, working directory S.
pub fn interpret_command(line: &str, ctx: &BuildContext) -> Result<()> {
    let tokens = tokenize(line, &ctx.env)?;
    let Some(cmd) = tokens.first() else {
        return Ok(());
    };
    let args = &tokens[1..];
    let arity = |n: usize| -> Result<()> {
        if args.len() == n {
            Ok(())
        } else {
            Err(cmd_err(format!(
                "`{cmd}` expects {n} arguments, got {}",
                args.len()
            )))
        }
    };

    match cmd.as_str() {
        "toycc" => {
            arity(3)?;
            if args[1] != "-o" {
                return Err(cmd_err("usage: toycc <in> -o <out>".to_string()));
            }
            let input = resolve_arg(ctx, &args[0]);
            let output = resolve_arg(ctx, &args[2]);
            check_write_sandbox(ctx, &output)?;
            let source = std::fs::read(&input)
                .map_err(|e| Error::io(format!("toycc: reading {}", input.display()), e))?;
            // Compiler-analog diagnostics: a source line starting with
            // `#error` aborts the build with that line.
            if let Ok(text) = std::str::from_utf8(&source) {
                for l in text.lines() {
                    if l.trim_start().starts_with("#error") {
                        return Err(cmd_err(format!(
                            "toycc: {}: {}",
                            input.display(),
                            l.trim()
                        )));
                    }
                }
            }
            let artifact = ToyArtifact {
                machine: ctx.chost.clone(),
                cflags: ctx.env.get("CFLAGS").cloned().unwrap_or_default(),
                payload: source,
            };
            write_file(&output, &artifact.to_bytes())?;
            set_executable(&output)?;
            Ok(())
        }
        "install-file" => {
            arity(2)?;
            let src = resolve_arg(ctx, &args[0]);
            let dst = resolve_arg(ctx, &args[1]);
            check_write_sandbox(ctx, &dst)?;
            if let Some(parent) = dst.parent() {
                std::fs::create_dir_all(parent)
                    .map_err(|e| Error::io(format!("creating {}", parent.display()), e))?;
            }
            std::fs::copy(&src, &dst).map_err(|e| {
                Error::io(
                    format!("copying {} to {}", src.display(), dst.display()),
                    e,
                )
            })?;
            Ok(())
        }
        "make-dir" => {
            arity(1)?;
            let dst = resolve_arg(ctx, &args[0]);
            check_write_sandbox(ctx, &dst)?;
            std::fs::create_dir_all(&dst)
                .map_err(|e| Error::io(format!("creating {}", dst.display()), e))
        }
        "make-sym" => {
            arity(2)?;
            let link = resolve_arg(ctx, &args[1]);
            check_write_sandbox(ctx, &link)?;
            if let Some(parent) = link.parent() {
                std::fs::create_dir_all(parent)
                    .map_err(|e| Error::io(format!("creating {}", parent.display()), e))?;
            }
            if link.symlink_metadata().is_ok() {
                std::fs::remove_file(&link)
                    .map_err(|e| Error::io(format!("replacing {}", link.display()), e))?;
            }
            std::os::unix::fs::symlink(&args[0], &link)
                .map_err(|e| Error::io(format!("linking {}", link.display()), e))
        }
        "echo-to" => {
            if args.is_empty() {
                return Err(cmd_err("usage: echo-to <file> <text...>".to_string()));
            }
            let dst = resolve_arg(ctx, &args[0]);
            check_write_sandbox(ctx, &dst)?;
            if let Some(parent) = dst.parent() {
                std::fs::create_dir_all(parent)
                    .map_err(|e| Error::io(format!("creating {}", parent.display()), e))?;
            }
            let mut text = args[1..].join(" ");
            text.push('\n');
            write_file(&dst, text.as_bytes())
        }
        "fail" => Err(cmd_err(args.join(" "))),
        _ => {
            let output = std::process::Command::new(cmd)
                .args(args)
                .env_clear()
                .envs(ctx.env.iter().map(|(k, v)| (k.clone(), v.clone())))
                .current_dir(&ctx.s_dir)
                .output()
                .map_err(|e| Error::io(format!("running external command `{cmd}`"), e))?;
            if output.status.success() {
                Ok(())
            } else {
                Err(cmd_err(format!(
                    "`{cmd}` exited with {}: {}{}",
                    output.status,
                    String::from_utf8_lossy(&output.stdout),
                    String::from_utf8_lossy(&output.stderr)
                )))
            }
        }
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

fn set_executable(path: &Path) -> Result<()> {
    let mut perms = std::fs::metadata(path)
        .map_err(|e| Error::io(format!("stat {}", path.display()), e))?
        .permissions();
    perms.set_mode(perms.mode() | 0o755);
    std::fs::set_permissions(path, perms)
        .map_err(|e| Error::io(format!("chmod {}", path.display()), e))
}

fn copy_recursive(src: &Path, dst: &Path) -> Result<()> {
    let meta = std::fs::symlink_metadata(src)
        .map_err(|e| Error::io(format!("stat {}", src.display()), e))?;
    if meta.is_dir() {
        std::fs::create_dir_all(dst)
            .map_err(|e| Error::io(format!("creating {}", dst.display()), e))?;
        let mut entries: Vec<PathBuf> = std::fs::read_dir(src)
            .map_err(|e| Error::io(format!("reading {}", src.display()), e))?
            .filter_map(|e| e.ok())
            .map(|e| e.path())
            .collect();
        entries.sort();
        for entry in entries {
            let name = entry.file_name().expect("dir entries have names");
            copy_recursive(&entry, &dst.join(name))?;
        }
    } else if meta.file_type().is_symlink() {
        let target = std::fs::read_link(src)
            .map_err(|e| Error::io(format!("readlink {}", src.display()), e))?;
        std::os::unix::fs::symlink(target, dst)
            .map_err(|e| Error::io(format!("linking {}", dst.display()), e))?;
    } else {
        std::fs::copy(src, dst).map_err(|e| {
            Error::io(
                format!("copying {} to {}", src.display(), dst.display()),
                e,
            )
        })?;
    }
    Ok(())
}

/// Runs all phases in order. `fetch` copies SRC entries into the
/// distfiles cache, `unpack` populates S from the cache (directories
/// unpack their contents, like archives), `prepare` applies bundled then
/// user patches. Recipe command lines for a phase run after its built-in
/// behavior.
pub fn run_phases(recipe: &Recipe, ctx: &BuildContext) -> Result<()> {
    for phase in Phase::ALL {
        match phase {
            Phase::Fetch => fetch(recipe, ctx)?,
            Phase::Unpack => unpack(recipe, ctx)?,
            Phase::Prepare => prepare(recipe, ctx)?,
            _ => {}
        }
        if let Some(commands) = recipe.phases.get(&phase) {
            for (i, line) in commands.iter().enumerate() {
                interpret_command(line, ctx).map_err(|e| match e {
                    Error::Sandbox(_) => e,
                    Error::Phase { message, .. } => Error::Phase {
                        phase: phase.name().to_string(),
                        line: i + 1,
                        message,
                    },
                    other => Error::Phase {
                        phase: phase.name().to_string(),
                        line: i + 1,
                        message: other.to_string(),
                    },
                })?;
            }
        }
    }
    Ok(())
}

fn cache_dir(ctx: &BuildContext, recipe: &Recipe) -> PathBuf {
    ctx.distdir
        .join(&recipe.id.category)
        .join(format!("{}-{}", recipe.id.name, recipe.id.version))
}

fn fetch(recipe: &Recipe, ctx: &BuildContext) -> Result<()> {
    if recipe.src.is_empty() {
        return Ok(());
    }
    let cache = cache_dir(ctx, recipe);
    std::fs::create_dir_all(&cache)
        .map_err(|e| Error::io(format!("creating {}", cache.display()), e))?;
    for src in &recipe.src {
        let from = ctx.recipe_dir.join(src);
        if !from.exists() {
            return Err(Error::MissingSource(from));
        }
        let name = from.file_name().expect("source paths have names");
        let to = cache.join(name);
        if to.exists() {
            std::fs::remove_dir_all(&to).or_else(|_| std::fs::remove_file(&to)).ok();
        }
        copy_recursive(&from, &to)?;
    }
    Ok(())
}

fn unpack(recipe: &Recipe, ctx: &BuildContext) -> Result<()> {
    let cache = cache_dir(ctx, recipe);
    for src in &recipe.src {
        let name = src.file_name().expect("source paths have names");
        let from = cache.join(name);
        if !from.exists() {
            return Err(Error::MissingSource(from));
        }
        if from.is_dir() {
            let mut entries: Vec<PathBuf> = std::fs::read_dir(&from)
                .map_err(|e| Error::io(format!("reading {}", from.display()), e))?
                .filter_map(|e| e.ok())
                .map(|e| e.path())
                .collect();
            entries.sort();
            for entry in entries {
                let entry_name = entry.file_name().expect("dir entries have names");
                copy_recursive(&entry, &ctx.s_dir.join(entry_name))?;
            }
        } else {
            copy_recursive(&from, &ctx.s_dir.join(name))?;
        }
    }
    Ok(())
}

fn prepare(recipe: &Recipe, ctx: &BuildContext) -> Result<()> {
    let mut patches: Vec<PathBuf> = recipe
        .bundled_patches
        .iter()
        .map(|p| ctx.recipe_dir.join(p))
        .collect();
    patches.extend(ctx.user_patches.iter().cloned());
    for (i, patch_path) in patches.iter().enumerate() {
        let bytes = std::fs::read(patch_path)
            .map_err(|e| Error::io(format!("reading {}", patch_path.display()), e))?;
        patch::apply_bytes(&bytes, &ctx.s_dir, 1, Direction::Forward).map_err(|e| {
            Error::Phase {
                phase: "prepare".to_string(),
                line: i + 1,
                message: format!("{}: {e}", patch_path.display()),
            }
        })?;
    }
    Ok(())
}

enum UndoOp {
    RemoveFile(PathBuf),
    RemoveDir(PathBuf),
    Restore { path: PathBuf, bytes: Vec<u8>, mode: u32 },
    RestoreSym { path: PathBuf, target: PathBuf },
}

fn rollback(log: Vec<UndoOp>) {
    for op in log.into_iter().rev() {
        match op {
            UndoOp::RemoveFile(p) => {
                let _ = std::fs::remove_file(&p);
            }
            UndoOp::RemoveDir(p) => {
                let _ = std::fs::remove_dir(&p);
            }
            UndoOp::Restore { path, bytes, mode } => {
                let _ = std::fs::write(&path, bytes);
                let _ = std::fs::set_permissions(&path, std::fs::Permissions::from_mode(mode));
            }
            UndoOp::RestoreSym { path, target } => {
                let _ = std::fs::remove_file(&path);
                let _ = std::os::unix::fs::symlink(target, &path);
            }
        }
    }
}

/// What merge found in D, root-relative.
struct ImageEntry {
    rel: String,
    kind: ImageKind,
}

enum ImageKind {
    Dir,
    File { source: PathBuf },
    Sym { target: PathBuf },
}

/// Walks the image, applying the splitdebug reroute and skipping
/// directories at or above the prefix boundary (packages own nothing
/// above their prefix).
fn collect_image(ctx: &BuildContext) -> Result<Vec<ImageEntry>> {
    let offset = prefix_offset(&ctx.eprefix);
    let offset_rel = offset.trim_start_matches('/');
    let splitdebug = ctx.features().contains("splitdebug");
    let mut out = Vec::new();

    for entry in walkdir::WalkDir::new(&ctx.d_dir).sort_by_file_name() {
        let entry = entry.map_err(|e| {
            Error::io(
                format!("walking {}", ctx.d_dir.display()),
                e.into_io_error()
                    .unwrap_or_else(|| std::io::Error::other("walk error")),
            )
        })?;
        if entry.path() == ctx.d_dir {
            continue;
        }
        let rel = entry
            .path()
            .strip_prefix(&ctx.d_dir)
            .expect("walk stays under D")
            .to_str()
            .ok_or_else(|| Error::Sandbox("non-UTF-8 path in image".to_string()))?
            .to_string();
        let ft = entry.file_type();
        if ft.is_dir() {
            // `px` and its ancestors for EPREFIX=/px are infrastructure,
            // not package property.
            if !offset_rel.is_empty()
                && (offset_rel == rel || Path::new(offset_rel).starts_with(&rel))
            {
                continue;
            }
            out.push(ImageEntry {
                rel,
                kind: ImageKind::Dir,
            });
        } else if ft.is_symlink() {
            let target = std::fs::read_link(entry.path())
                .map_err(|e| Error::io(format!("readlink {}", entry.path().display()), e))?;
            out.push(ImageEntry {
                rel,
                kind: ImageKind::Sym { target },
            });
        } else {
            let rel = if splitdebug && rel.ends_with(".debug") {
                reroute_debug(&rel, offset_rel)
            } else {
                rel
            };
            out.push(ImageEntry {
                rel,
                kind: ImageKind::File {
                    source: entry.path().to_path_buf(),
                },
            });
        }
    }
    Ok(out)
}

/// `<offset>/usr/bin/foo.debug` -> `<offset>/usr/lib/debug/usr/bin/foo.debug`
fn reroute_debug(rel: &str, offset_rel: &str) -> String {
    let inner = rel
        .strip_prefix(offset_rel)
        .map(|r| r.trim_start_matches('/'))
        .unwrap_or(rel);
    if offset_rel.is_empty() {
        format!("usr/lib/debug/{inner}")
    } else {
        format!("{offset_rel}/usr/lib/debug/{inner}")
    }
}

/// Merges the staged image into the target root, records the VDB entry,
/// replaces any same-slot older version, and (for explicit targets)
/// updates the world file. Atomic by undo log: any failure rolls back
/// every file this merge created or overwrote.
pub fn merge(
    recipe: &Recipe,
    ctx: &BuildContext,
    vdb: &Vdb,
    reason: &str,
    world_atom: Option<&Atom>,
) -> Result<VdbEntry> {
    let installed = vdb.load()?;
    let image = collect_image(ctx)?;

    // Collision protection before any copy: a path owned by a different
    // (category, name) aborts the whole merge.
    for entry in &image {
        if matches!(entry.kind, ImageKind::Dir) {
            continue;
        }
        for other in installed.entries() {
            if other.id.category == recipe.id.category && other.id.name == recipe.id.name {
                continue;
            }
            if other.owns(&entry.rel) {
                return Err(Error::Collision {
                    path: entry.rel.clone(),
                    owner: other.id.cnv(),
                });
            }
        }
    }

    let root = &ctx.target_root;
    let mut log: Vec<UndoOp> = Vec::new();
    let mut contents: Vec<ContentsEntry> = Vec::new();

    let mut copy_all = || -> Result<()> {
        for entry in &image {
            let dest = root.join(&entry.rel);
            match &entry.kind {
                ImageKind::Dir => {
                    if !dest.exists() {
                        std::fs::create_dir_all(&dest)
                            .map_err(|e| Error::io(format!("creating {}", dest.display()), e))?;
                        log.push(UndoOp::RemoveDir(dest.clone()));
                    }
                    contents.push(ContentsEntry::Dir {
                        path: entry.rel.clone(),
                    });
                }
                ImageKind::File { source } => {
                    if let Some(parent) = dest.parent() {
                        if !parent.exists() {
                            std::fs::create_dir_all(parent).map_err(|e| {
                                Error::io(format!("creating {}", parent.display()), e)
                            })?;
                        }
                    }
                    let bytes = std::fs::read(source)
                        .map_err(|e| Error::io(format!("reading {}", source.display()), e))?;
                    match std::fs::metadata(&dest) {
                        Ok(meta) if meta.is_file() => log.push(UndoOp::Restore {
                            path: dest.clone(),
                            bytes: std::fs::read(&dest)
                                .map_err(|e| Error::io(format!("reading {}", dest.display()), e))?,
                            mode: meta.permissions().mode(),
                        }),
                        _ => log.push(UndoOp::RemoveFile(dest.clone())),
                    }
                    std::fs::write(&dest, &bytes)
                        .map_err(|e| Error::io(format!("writing {}", dest.display()), e))?;
                    let mode = std::fs::metadata(source)
                        .map_err(|e| Error::io(format!("stat {}", source.display()), e))?
                        .permissions();
                    std::fs::set_permissions(&dest, mode)
                        .map_err(|e| Error::io(format!("chmod {}", dest.display()), e))?;
                    contents.push(ContentsEntry::Obj {
                        path: entry.rel.clone(),
                        digest: sha256_hex(&bytes),
                    });
                }
                ImageKind::Sym { target } => {
                    if let Ok(meta) = dest.symlink_metadata() {
                        if meta.file_type().is_symlink() {
                            log.push(UndoOp::RestoreSym {
                                path: dest.clone(),
                                target: std::fs::read_link(&dest).map_err(|e| {
                                    Error::io(format!("readlink {}", dest.display()), e)
                                })?,
                            });
                        } else {
                            log.push(UndoOp::Restore {
                                path: dest.clone(),
                                bytes: std::fs::read(&dest).map_err(|e| {
                                    Error::io(format!("reading {}", dest.display()), e)
                                })?,
                                mode: meta.permissions().mode(),
                            });
                        }
                        std::fs::remove_file(&dest)
                            .map_err(|e| Error::io(format!("replacing {}", dest.display()), e))?;
                    } else {
                        log.push(UndoOp::RemoveFile(dest.clone()));
                    }
                    std::os::unix::fs::symlink(target, &dest)
                        .map_err(|e| Error::io(format!("linking {}", dest.display()), e))?;
                    contents.push(ContentsEntry::Sym {
                        path: entry.rel.clone(),
                        target: target.display().to_string(),
                    });
                }
            }
        }
        Ok(())
    };

    if let Err(e) = copy_all() {
        rollback(log);
        return Err(e);
    }

    let mut build_env = std::collections::BTreeMap::new();
    for key in BUILD_ENV_KEYS {
        build_env.insert(
            key.to_string(),
            ctx.env.get(key).cloned().unwrap_or_default(),
        );
    }
    let entry = VdbEntry {
        id: recipe.id.clone(),
        slot: recipe.slot.clone(),
        use_flags: ctx.use_flags.enabled.clone(),
        chost: ctx.chost.clone(),
        build_env,
        contents,
        depend: recipe.depend.clone(),
        rdepend: recipe.rdepend.clone(),
        pdepend: recipe.pdepend.clone(),
        reason: reason.to_string(),
    };

    if let Err(e) = vdb.write_entry(&entry) {
        rollback(log);
        return Err(e);
    }

    // Same-slot older versions: their now-orphaned files go away, then
    // their VDB entries.
    for old in installed.same_slot_others(&recipe.id, &recipe.slot) {
        remove_contents(root, old, &installed, Some(&entry))?;
        vdb.remove_entry(&old.id)?;
    }

    if let Some(atom) = world_atom {
        vdb.add_world_atom(atom)?;
    }
    Ok(entry)
}

/// Removes an entry's files from the root: objects whose digests still
/// match and which no other entry (nor `keep`) claims; then empty owned
/// directories, deepest first. Modified files are preserved with a
/// warning. Returns what was actually removed.
fn remove_contents(
    root: &Path,
    entry: &VdbEntry,
    installed: &InstalledSet,
    keep: Option<&VdbEntry>,
) -> Result<Vec<String>> {
    let claimed_elsewhere = |rel: &str| -> bool {
        if keep.map(|k| k.owns(rel)).unwrap_or(false) {
            return true;
        }
        installed
            .entries()
            .iter()
            .any(|e| e.id != entry.id && e.owns(rel))
    };

    let mut removed = Vec::new();
    let mut dirs: Vec<&str> = Vec::new();

    for c in &entry.contents {
        match c {
            ContentsEntry::Dir { path } => dirs.push(path),
            ContentsEntry::Obj { path, digest } => {
                if claimed_elsewhere(path) {
                    continue;
                }
                let full = root.join(path);
                match std::fs::read(&full) {
                    Ok(bytes) if sha256_hex(&bytes) == *digest => {
                        std::fs::remove_file(&full)
                            .map_err(|e| Error::io(format!("removing {}", full.display()), e))?;
                        removed.push(path.clone());
                    }
                    Ok(_) => {
                        log::warn!("{}: modified since install, preserving", full.display());
                    }
                    Err(_) => {}
                }
            }
            ContentsEntry::Sym { path, target } => {
                if claimed_elsewhere(path) {
                    continue;
                }
                let full = root.join(path);
                match std::fs::read_link(&full) {
                    Ok(t) if t.display().to_string() == *target => {
                        std::fs::remove_file(&full)
                            .map_err(|e| Error::io(format!("removing {}", full.display()), e))?;
                        removed.push(path.clone());
                    }
                    Ok(_) => {
                        log::warn!("{}: symlink retargeted since install, preserving", full.display());
                    }
                    Err(_) => {
                        if full.exists() {
                            log::warn!("{}: no longer a symlink, preserving", full.display());
                        }
                    }
                }
            }
        }
    }

    dirs.sort_by_key(|d| std::cmp::Reverse(d.len()));
    for dir in dirs {
        if claimed_elsewhere(dir) {
            continue;
        }
        let full = root.join(dir);
        if std::fs::remove_dir(&full).is_ok() {
            removed.push(dir.to_string());
        }
    }
    Ok(removed)
}

/// Uninstalls a package: removes exactly the CONTENTS paths that still
/// match their recorded digests and that no other entry claims, then the
/// VDB entry, any world reference no other installed package satisfies,
/// and any provider selection pointing at it.
pub fn unmerge(id: &PackageId, vdb: &Vdb, root: &Path) -> Result<Vec<String>> {
    let installed = vdb.load()?;
    let entry = installed
        .get(id)
        .ok_or_else(|| Error::NotInstalled { id: id.cnv() })?
        .clone();

    let removed = remove_contents(root, &entry, &installed, None)?;
    vdb.remove_entry(&entry.id)?;

    // World references survive only if another installed package still
    // satisfies them.
    let remaining = vdb.load()?;
    let world = vdb.read_world()?;
    let kept: Vec<Atom> = world
        .into_iter()
        .filter(|a| !a.matches(&entry.id, &entry.use_flags) || !remaining.matching(a).is_empty())
        .collect();
    if vdb.world_path().exists() {
        vdb.write_world(&kept)?;
    }

    select::clear_selection_for(vdb, &entry.id)?;
    Ok(removed)
}
