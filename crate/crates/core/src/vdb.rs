//! Installed-package database (VDB) and world file.
//!
//! Layout under `<root><eprefix>`:
//! `var/db/pm/<cat>/<name>-<ver>/{SLOT,USE,CHOST,BUILD_ENV,CONTENTS,DEPEND,RDEPEND,PDEPEND,REASON}`
//! with one value per file, and `var/lib/pm/world` holding one atom per
//! line, sorted.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::atoms::{Atom, PackageId, Version};
use crate::conf;
use crate::error::{Error, Result};

/// Keys recorded in the BUILD_ENV snapshot, in file order.
pub const BUILD_ENV_KEYS: [&str; 5] = ["CC", "CFLAGS", "CXXFLAGS", "LDFLAGS", "FEATURES"];

pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    let mut out = String::with_capacity(64);
    for b in hasher.finalize() {
        out.push_str(&format!("{b:02x}"));
    }
    out
}

/// One owned filesystem entry; paths are relative to the target root and
/// include the prefix offset.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ContentsEntry {
    Obj { path: String, digest: String },
    Dir { path: String },
    Sym { path: String, target: String },
}

impl ContentsEntry {
    pub fn path(&self) -> &str {
        match self {
            ContentsEntry::Obj { path, .. }
            | ContentsEntry::Dir { path }
            | ContentsEntry::Sym { path, .. } => path,
        }
    }
}

impl fmt::Display for ContentsEntry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ContentsEntry::Obj { path, digest } => write!(f, "obj {path} sha256:{digest}"),
            ContentsEntry::Dir { path } => write!(f, "dir {path}"),
            ContentsEntry::Sym { path, target } => write!(f, "sym {path} -> {target}"),
        }
    }
}

fn parse_contents_line(line: &str, file: &Path, lineno: usize) -> Result<ContentsEntry> {
    let err = |reason: &str| Error::ConfigFile {
        file: file.to_path_buf(),
        line: lineno + 1,
        reason: reason.to_string(),
    };
    let (kind, rest) = line
        .split_once(' ')
        .ok_or_else(|| err("expected `<kind> <path> ...`"))?;
    match kind {
        "obj" => {
            let (path, digest) = rest
                .rsplit_once(' ')
                .ok_or_else(|| err("obj entry without digest"))?;
            let digest = digest
                .strip_prefix("sha256:")
                .ok_or_else(|| err("unknown digest algorithm"))?;
            Ok(ContentsEntry::Obj {
                path: path.to_string(),
                digest: digest.to_string(),
            })
        }
        "dir" => Ok(ContentsEntry::Dir {
            path: rest.to_string(),
        }),
        "sym" => {
            let (path, target) = rest
                .split_once(" -> ")
                .ok_or_else(|| err("sym entry without target"))?;
            Ok(ContentsEntry::Sym {
                path: path.to_string(),
                target: target.to_string(),
            })
        }
        other => Err(err(&format!("unknown contents kind `{other}`"))),
    }
}

/// One installed package.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VdbEntry {
    pub id: PackageId,
    pub slot: String,
    pub use_flags: BTreeSet<String>,
    pub chost: String,
    pub build_env: BTreeMap<String, String>,
    pub contents: Vec<ContentsEntry>,
    pub depend: String,
    pub rdepend: String,
    pub pdepend: String,
    pub reason: String,
}

impl VdbEntry {
    pub fn owns(&self, rel_path: &str) -> bool {
        self.contents.iter().any(|c| c.path() == rel_path)
    }
}

/// In-memory view of the installed set; what the resolver consumes.
#[derive(Debug, Clone, Default)]
pub struct InstalledSet {
    entries: Vec<VdbEntry>,
}

impl InstalledSet {
    pub fn new(mut entries: Vec<VdbEntry>) -> InstalledSet {
        entries.sort_by_key(|e| e.id.sort_key());
        InstalledSet { entries }
    }

    pub fn empty() -> InstalledSet {
        InstalledSet::default()
    }

    pub fn entries(&self) -> &[VdbEntry] {
        &self.entries
    }

    pub fn matching(&self, atom: &Atom) -> Vec<&VdbEntry> {
        self.entries
            .iter()
            .filter(|e| atom.matches(&e.id, &e.use_flags))
            .collect()
    }

    pub fn satisfies(&self, atom: &Atom) -> bool {
        !self.matching(atom).is_empty()
    }

    pub fn get(&self, id: &PackageId) -> Option<&VdbEntry> {
        self.entries.iter().find(|e| {
            e.id.category == id.category && e.id.name == id.name && e.id.version == id.version
        })
    }

    /// Entries sharing (category, name, slot) with `id` but not its version
    ///, the ones a same-slot merge replaces.
    pub fn same_slot_others(&self, id: &PackageId, slot: &str) -> Vec<&VdbEntry> {
        self.entries
            .iter()
            .filter(|e| {
                e.id.category == id.category
                    && e.id.name == id.name
                    && e.slot == slot
                    && e.id.version != id.version
            })
            .collect()
    }
}

/// Filesystem accessor for one target root's database.
#[derive(Debug, Clone)]
pub struct Vdb {
    /// `<root><eprefix>`
    base: PathBuf,
}

impl Vdb {
    pub fn at(base: &Path) -> Vdb {
        Vdb {
            base: base.to_path_buf(),
        }
    }

    pub fn base(&self) -> &Path {
        &self.base
    }

    pub fn db_dir(&self) -> PathBuf {
        self.base.join("var/db/pm")
    }

    pub fn entry_dir(&self, id: &PackageId) -> PathBuf {
        self.db_dir()
            .join(&id.category)
            .join(format!("{}-{}", id.name, id.version))
    }

    pub fn world_path(&self) -> PathBuf {
        self.base.join("var/lib/pm/world")
    }

    pub fn load(&self) -> Result<InstalledSet> {
        let db = self.db_dir();
        let mut entries = Vec::new();
        if !db.is_dir() {
            return Ok(InstalledSet::empty());
        }
        let mut cat_dirs: Vec<PathBuf> = std::fs::read_dir(&db)
            .map_err(|e| Error::io(format!("reading {}", db.display()), e))?
            .filter_map(|e| e.ok())
            .map(|e| e.path())
            .filter(|p| p.is_dir())
            .collect();
        cat_dirs.sort();
        for cat_dir in cat_dirs {
            let category = cat_dir
                .file_name()
                .and_then(|n| n.to_str())
                .unwrap_or_default()
                .to_string();
            let mut pkg_dirs: Vec<PathBuf> = std::fs::read_dir(&cat_dir)
                .map_err(|e| Error::io(format!("reading {}", cat_dir.display()), e))?
                .filter_map(|e| e.ok())
                .map(|e| e.path())
                .filter(|p| p.is_dir())
                .collect();
            pkg_dirs.sort();
            for pkg_dir in pkg_dirs {
                entries.push(self.read_entry(&category, &pkg_dir)?);
            }
        }
        Ok(InstalledSet::new(entries))
    }

    fn read_entry(&self, category: &str, dir: &Path) -> Result<VdbEntry> {
        let dir_name = dir
            .file_name()
            .and_then(|n| n.to_str())
            .unwrap_or_default()
            .to_string();
        let (name, version) = split_name_version(&dir_name).ok_or_else(|| {
            Error::Config(format!(
                "VDB entry {} has no parsable version",
                dir.display()
            ))
        })?;

        let read = |file: &str| -> Result<String> {
            let path = dir.join(file);
            let text = std::fs::read_to_string(&path)
                .map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
            Ok(text.strip_suffix('\n').unwrap_or(&text).to_string())
        };

        let slot = read("SLOT")?;
        let use_flags: BTreeSet<String> =
            read("USE")?.split_whitespace().map(str::to_string).collect();
        let chost = read("CHOST")?;

        let build_env_path = dir.join("BUILD_ENV");
        let mut build_env = BTreeMap::new();
        let text = std::fs::read_to_string(&build_env_path)
            .map_err(|e| Error::io(format!("reading {}", build_env_path.display()), e))?;
        for (lineno, raw) in text.lines().enumerate() {
            if let Some((k, v)) = conf::parse_kv(raw).map_err(|reason| Error::ConfigFile {
                file: build_env_path.clone(),
                line: lineno + 1,
                reason,
            })? {
                build_env.insert(k, v);
            }
        }

        let contents_path = dir.join("CONTENTS");
        let mut contents = Vec::new();
        let text = std::fs::read_to_string(&contents_path)
            .map_err(|e| Error::io(format!("reading {}", contents_path.display()), e))?;
        for (lineno, line) in text.lines().enumerate() {
            if line.is_empty() {
                continue;
            }
            contents.push(parse_contents_line(line, &contents_path, lineno)?);
        }

        Ok(VdbEntry {
            id: PackageId {
                category: category.to_string(),
                name,
                version,
                slot: slot.clone(),
                repository: String::new(),
            },
            slot,
            use_flags,
            chost,
            build_env,
            contents,
            depend: read("DEPEND")?,
            rdepend: read("RDEPEND")?,
            pdepend: read("PDEPEND")?,
            reason: read("REASON")?,
        })
    }

    pub fn write_entry(&self, entry: &VdbEntry) -> Result<()> {
        let dir = self.entry_dir(&entry.id);
        std::fs::create_dir_all(&dir)
            .map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
        let write = |file: &str, value: &str| -> Result<()> {
            let path = dir.join(file);
            std::fs::write(&path, format!("{value}\n"))
                .map_err(|e| Error::io(format!("writing {}", path.display()), e))
        };

        write("SLOT", &entry.slot)?;
        write(
            "USE",
            &entry
                .use_flags
                .iter()
                .cloned()
                .collect::<Vec<_>>()
                .join(" "),
        )?;
        write("CHOST", &entry.chost)?;

        let mut env_lines = String::new();
        for key in BUILD_ENV_KEYS {
            let value = entry.build_env.get(key).cloned().unwrap_or_default();
            env_lines.push_str(&format!("{key}=\"{value}\"\n"));
        }
        std::fs::write(dir.join("BUILD_ENV"), env_lines)
            .map_err(|e| Error::io(format!("writing {}", dir.join("BUILD_ENV").display()), e))?;

        let mut contents_text = String::new();
        for c in &entry.contents {
            contents_text.push_str(&c.to_string());
            contents_text.push('\n');
        }
        std::fs::write(dir.join("CONTENTS"), contents_text)
            .map_err(|e| Error::io(format!("writing {}", dir.join("CONTENTS").display()), e))?;

        write("DEPEND", &entry.depend)?;
        write("RDEPEND", &entry.rdepend)?;
        write("PDEPEND", &entry.pdepend)?;
        write("REASON", &entry.reason)?;
        Ok(())
    }

    /// Removes the entry directory and prunes now-empty ancestors up to
    /// (and including) var/.
    pub fn remove_entry(&self, id: &PackageId) -> Result<()> {
        let dir = self.entry_dir(id);
        std::fs::remove_dir_all(&dir)
            .map_err(|e| Error::io(format!("removing {}", dir.display()), e))?;
        let mut cursor = dir.parent().map(Path::to_path_buf);
        while let Some(d) = cursor {
            if !d.starts_with(&self.base) || d == self.base {
                break;
            }
            if std::fs::remove_dir(&d).is_err() {
                break; // not empty, or gone
            }
            cursor = d.parent().map(Path::to_path_buf);
        }
        Ok(())
    }

    pub fn read_world(&self) -> Result<Vec<Atom>> {
        let path = self.world_path();
        if !path.exists() {
            return Ok(Vec::new());
        }
        let text = std::fs::read_to_string(&path)
            .map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        let mut atoms = Vec::new();
        for line in text.lines() {
            let line = line.trim();
            if !line.is_empty() {
                atoms.push(Atom::parse(line)?);
            }
        }
        Ok(atoms)
    }

    pub fn write_world(&self, atoms: &[Atom]) -> Result<()> {
        let path = self.world_path();
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)
                .map_err(|e| Error::io(format!("creating {}", parent.display()), e))?;
        }
        let mut lines: Vec<String> = atoms.iter().map(|a| a.to_string()).collect();
        lines.sort();
        lines.dedup();
        let mut text = lines.join("\n");
        if !text.is_empty() {
            text.push('\n');
        }
        std::fs::write(&path, text).map_err(|e| Error::io(format!("writing {}", path.display()), e))
    }

    pub fn add_world_atom(&self, atom: &Atom) -> Result<()> {
        let mut world = self.read_world()?;
        if !world.contains(atom) {
            world.push(atom.clone());
        }
        self.write_world(&world)
    }
}

/// Splits `name-version` at the rightmost hyphen whose tail parses as a
/// complete version.
pub fn split_name_version(text: &str) -> Option<(String, Version)> {
    let mut search = text.len();
    while let Some(i) = text[..search].rfind('-') {
        if let Ok(v) = Version::parse(&text[i + 1..]) {
            return Some((text[..i].to_string(), v));
        }
        search = i;
    }
    None
}
