//! Recipe trees: the main tree plus overlays.
//!
//! Layout per repository: `<repo>/<category>/<name>/<name>-<version>.recipe`
//! with sources and bundled patches under `<repo>/<category>/<name>/files/`.
//! The set of registered repositories lives in `<config_root>/etc/pm/repos.conf`,
//! one `name = path priority` line each; higher priority shadows lower.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};

use crate::atoms::{Atom, PackageId, Version};
use crate::conf;
use crate::deps::DepExpr;
use crate::error::{Error, Result};
use crate::lock::LockFile;

pub const DEFAULT_OVERLAY_PRIORITY: i64 = 10;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Repository {
    pub name: String,
    pub path: PathBuf,
    pub priority: i64,
}

/// Build phases, in execution order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Phase {
    Fetch,
    Unpack,
    Prepare,
    Configure,
    Compile,
    Install,
}

impl Phase {
    pub const ALL: [Phase; 6] = [
        Phase::Fetch,
        Phase::Unpack,
        Phase::Prepare,
        Phase::Configure,
        Phase::Compile,
        Phase::Install,
    ];

    pub fn from_name(name: &str) -> Option<Phase> {
        Some(match name {
            "fetch" => Phase::Fetch,
            "unpack" => Phase::Unpack,
            "prepare" => Phase::Prepare,
            "configure" => Phase::Configure,
            "compile" => Phase::Compile,
            "install" => Phase::Install,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Phase::Fetch => "fetch",
            Phase::Unpack => "unpack",
            Phase::Prepare => "prepare",
            Phase::Configure => "configure",
            Phase::Compile => "compile",
            Phase::Install => "install",
        }
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// One package definition parsed from a `.recipe` file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Recipe {
    pub id: PackageId,
    pub description: String,
    pub slot: String,
    pub iuse: BTreeSet<String>,
    pub depend: String,
    pub rdepend: String,
    pub pdepend: String,
    pub keywords: BTreeSet<String>,
    pub src: Vec<PathBuf>,
    pub phases: BTreeMap<Phase, Vec<String>>,
    pub bundled_patches: Vec<PathBuf>,
    /// Directory containing the recipe file; SRC and PATCHES are relative
    /// to it. Empty for purely in-memory recipes.
    pub dir: PathBuf,
}

impl Recipe {
    pub fn dep_string(&self, kind: DepKind) -> &str {
        match kind {
            DepKind::Depend => &self.depend,
            DepKind::Rdepend => &self.rdepend,
            DepKind::Pdepend => &self.pdepend,
        }
    }

    /// Renders the recipe back to the file format. Parsing the result at
    /// the same tree position yields a semantically equal recipe.
    pub fn render(&self) -> String {
        let mut out = String::new();
        let join = |set: &BTreeSet<String>| set.iter().cloned().collect::<Vec<_>>().join(" ");
        if !self.description.is_empty() {
            out.push_str(&format!("DESCRIPTION=\"{}\"\n", self.description));
        }
        if self.slot != "0" {
            out.push_str(&format!("SLOT={}\n", self.slot));
        }
        if !self.iuse.is_empty() {
            out.push_str(&format!("IUSE=\"{}\"\n", join(&self.iuse)));
        }
        if !self.keywords.is_empty() {
            out.push_str(&format!("KEYWORDS=\"{}\"\n", join(&self.keywords)));
        }
        for kind in DepKind::ALL {
            let value = self.dep_string(kind);
            if !value.is_empty() {
                out.push_str(&format!("{}=\"{}\"\n", kind.key(), value));
            }
        }
        let paths = |list: &[PathBuf]| {
            list.iter()
                .map(|p| p.display().to_string())
                .collect::<Vec<_>>()
                .join(" ")
        };
        if !self.src.is_empty() {
            out.push_str(&format!("SRC=\"{}\"\n", paths(&self.src)));
        }
        if !self.bundled_patches.is_empty() {
            out.push_str(&format!("PATCHES=\"{}\"\n", paths(&self.bundled_patches)));
        }
        for phase in Phase::ALL {
            if let Some(commands) = self.phases.get(&phase) {
                out.push_str(&format!("\n[phase:{phase}]\n"));
                for line in commands {
                    out.push_str(line);
                    out.push('\n');
                }
            }
        }
        out
    }
}

/// The three dependency kinds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum DepKind {
    Depend,
    Rdepend,
    Pdepend,
}

impl DepKind {
    pub const ALL: [DepKind; 3] = [DepKind::Depend, DepKind::Rdepend, DepKind::Pdepend];

    pub fn key(self) -> &'static str {
        match self {
            DepKind::Depend => "DEPEND",
            DepKind::Rdepend => "RDEPEND",
            DepKind::Pdepend => "PDEPEND",
        }
    }
}

const RECIPE_KEYS: [&str; 9] = [
    "DESCRIPTION",
    "SLOT",
    "IUSE",
    "KEYWORDS",
    "DEPEND",
    "RDEPEND",
    "PDEPEND",
    "SRC",
    "PATCHES",
];

/// Parses one recipe file. The filename carries the version and must agree
/// with the `<category>/<name>/` directory it sits in.
pub fn parse_recipe(file: &Path, repository: &str) -> Result<Recipe> {
    let err = |reason: String| Error::RecipeParse {
        path: file.to_path_buf(),
        reason,
    };

    let file_name = file
        .file_name()
        .and_then(|n| n.to_str())
        .ok_or_else(|| err("unreadable file name".into()))?;
    let stem = file_name
        .strip_suffix(".recipe")
        .ok_or_else(|| err("recipe files must end in .recipe".into()))?;
    let dir = file
        .parent()
        .ok_or_else(|| err("recipe has no parent directory".into()))?;
    let pkg_dir = dir
        .file_name()
        .and_then(|n| n.to_str())
        .ok_or_else(|| err("unreadable package directory".into()))?;
    let category = dir
        .parent()
        .and_then(|p| p.file_name())
        .and_then(|n| n.to_str())
        .ok_or_else(|| err("recipe must live under <category>/<name>/".into()))?
        .to_string();

    let version_text = stem
        .strip_prefix(pkg_dir)
        .and_then(|rest| rest.strip_prefix('-'))
        .ok_or_else(|| {
            err(format!(
                "file name `{file_name}` does not match package directory `{pkg_dir}`"
            ))
        })?;
    let version = Version::parse(version_text)
        .map_err(|e| err(format!("bad version in file name: {e}")))?;

    let text = std::fs::read_to_string(file)
        .map_err(|e| Error::io(format!("reading {}", file.display()), e))?;

    let mut recipe = Recipe {
        id: PackageId {
            category,
            name: pkg_dir.to_string(),
            version,
            slot: "0".to_string(),
            repository: repository.to_string(),
        },
        description: String::new(),
        slot: "0".to_string(),
        iuse: BTreeSet::new(),
        depend: String::new(),
        rdepend: String::new(),
        pdepend: String::new(),
        keywords: BTreeSet::new(),
        src: Vec::new(),
        phases: BTreeMap::new(),
        bundled_patches: Vec::new(),
        dir: dir.to_path_buf(),
    };

    let mut current_phase: Option<Phase> = None;
    for (lineno, raw) in text.lines().enumerate() {
        let line = conf::strip_comment(raw);
        if line.is_empty() {
            continue;
        }
        if let Some(header) = line.strip_prefix("[phase:") {
            let name = header
                .strip_suffix(']')
                .ok_or_else(|| err(format!("line {}: unterminated phase header", lineno + 1)))?;
            let phase = Phase::from_name(name)
                .ok_or_else(|| err(format!("line {}: unknown phase `{name}`", lineno + 1)))?;
            current_phase = Some(phase);
            recipe.phases.entry(phase).or_default();
            continue;
        }
        if let Some(phase) = current_phase {
            recipe
                .phases
                .get_mut(&phase)
                .expect("phase entry created with header")
                .push(line.to_string());
            continue;
        }
        let (key, value) = conf::parse_kv(line)
            .map_err(|reason| err(format!("line {}: {reason}", lineno + 1)))?
            .expect("non-empty line");
        if !RECIPE_KEYS.contains(&key.as_str()) {
            return Err(err(format!("line {}: unknown key `{key}`", lineno + 1)));
        }
        match key.as_str() {
            "DESCRIPTION" => recipe.description = value,
            "SLOT" => {
                if value.is_empty() || value.contains(':') || value.contains(char::is_whitespace) {
                    return Err(err(format!("line {}: illegal SLOT `{value}`", lineno + 1)));
                }
                recipe.slot = value.clone();
                recipe.id.slot = value;
            }
            "IUSE" => {
                recipe.iuse = value.split_whitespace().map(str::to_string).collect();
            }
            "KEYWORDS" => {
                recipe.keywords = value.split_whitespace().map(str::to_string).collect();
            }
            "DEPEND" => recipe.depend = value,
            "RDEPEND" => recipe.rdepend = value,
            "PDEPEND" => recipe.pdepend = value,
            "SRC" => {
                recipe.src = value.split_whitespace().map(PathBuf::from).collect();
            }
            "PATCHES" => {
                recipe.bundled_patches = value.split_whitespace().map(PathBuf::from).collect();
            }
            _ => unreachable!(),
        }
    }

    for p in recipe.src.iter().chain(recipe.bundled_patches.iter()) {
        if p.is_absolute() || p.components().any(|c| c.as_os_str() == "..") {
            return Err(err(format!(
                "SRC/PATCHES entries must be relative paths without `..`: {}",
                p.display()
            )));
        }
    }

    validate_dep_flags(&recipe).map_err(err)?;
    Ok(recipe)
}

/// Every flag used in a `flag? ( ... )` conditional must be declared in IUSE.
fn validate_dep_flags(recipe: &Recipe) -> std::result::Result<(), String> {
    for kind in DepKind::ALL {
        let text = recipe.dep_string(kind);
        let exprs = DepExpr::parse(text).map_err(|e| format!("{}: {e}", kind.key()))?;
        let mut flags = BTreeSet::new();
        DepExpr::conditional_flags(&exprs, &mut flags);
        for flag in flags {
            if !recipe.iuse.contains(&flag) {
                return Err(format!(
                    "{} uses flag `{flag}` which is not declared in IUSE",
                    kind.key()
                ));
            }
        }
    }
    Ok(())
}

/// The loaded recipe universe: repositories in precedence order plus every
/// recipe they contain. Read-only after construction.
#[derive(Debug, Clone)]
pub struct RepositorySet {
    repos: Vec<Repository>,
    recipes: Vec<Recipe>,
}

impl RepositorySet {
    /// Reads `<config_root>/etc/pm/repos.conf` and loads every recipe in
    /// every registered repository.
    pub fn load(config_root: &Path) -> Result<RepositorySet> {
        let repos = load_repositories(config_root)?;
        let mut recipes = Vec::new();
        for repo in &repos {
            load_tree(repo, &mut recipes)?;
        }
        Ok(RepositorySet { repos, recipes })
    }

    /// Builds an in-memory set, mainly for tests and synthetic fixtures.
    /// Repositories are given as (name, priority) and must cover every
    /// recipe's repository field.
    pub fn in_memory(repos: Vec<(String, i64)>, recipes: Vec<Recipe>) -> RepositorySet {
        let mut repos: Vec<Repository> = repos
            .into_iter()
            .map(|(name, priority)| Repository {
                name,
                path: PathBuf::new(),
                priority,
            })
            .collect();
        sort_repos(&mut repos);
        RepositorySet { repos, recipes }
    }

    pub fn repositories(&self) -> &[Repository] {
        &self.repos
    }

    pub fn recipes(&self) -> &[Recipe] {
        &self.recipes
    }

    fn priority_of(&self, repo: &str) -> i64 {
        self.repos
            .iter()
            .find(|r| r.name == repo)
            .map(|r| r.priority)
            .unwrap_or(i64::MIN)
    }

    /// Fills in the category for a shorthand atom by unique-name lookup.
    /// Ambiguity is a hard error listing the candidates.
    pub fn resolve_shorthand(&self, atom: &Atom) -> Result<Atom> {
        if atom.category.is_some() {
            return Ok(atom.clone());
        }
        let categories: BTreeSet<&str> = self
            .recipes
            .iter()
            .filter(|r| r.id.name == atom.name)
            .map(|r| r.id.category.as_str())
            .collect();
        match categories.len() {
            0 => Ok(atom.clone()),
            1 => {
                let mut resolved = atom.clone();
                resolved.category = Some(categories.into_iter().next().unwrap().to_string());
                Ok(resolved)
            }
            _ => Err(Error::AmbiguousName {
                name: atom.name.clone(),
                candidates: categories
                    .into_iter()
                    .map(|c| format!("{c}/{}", atom.name))
                    .collect(),
            }),
        }
    }

    /// All recipes matching the atom, ordered by repository priority
    /// (descending) then version (descending). USE requirements on the
    /// atom are not evaluated here; the resolver checks them once the
    /// effective USE of the candidate is known.
    pub fn find_recipes(&self, atom: &Atom) -> Result<Vec<&Recipe>> {
        let atom = self.resolve_shorthand(atom)?;
        let empty = BTreeSet::new();
        let mut id_only = atom.clone();
        id_only.use_deps.clear();
        let mut found: Vec<&Recipe> = self
            .recipes
            .iter()
            .filter(|r| id_only.matches(&r.id, &empty))
            .collect();
        found.sort_by(|a, b| {
            let pa = self.priority_of(&a.id.repository);
            let pb = self.priority_of(&b.id.repository);
            pb.cmp(&pa)
                .then_with(|| b.id.version.cmp(&a.id.version))
                .then_with(|| a.id.repository.cmp(&b.id.repository))
        });
        Ok(found)
    }

    /// Best keyword-accepted candidate for the atom: overlay priority wins
    /// before version. Accepting `~k` also accepts the stable `k`.
    pub fn best_match(&self, atom: &Atom, accept_keywords: &BTreeSet<String>) -> Result<&Recipe> {
        let candidates = self.find_recipes(atom)?;
        if candidates.is_empty() {
            return Err(Error::NotFound {
                atom: atom.to_string(),
            });
        }
        let accepted: Vec<&&Recipe> = candidates
            .iter()
            .filter(|r| keywords_accepted(&r.keywords, accept_keywords))
            .collect();
        match accepted.first() {
            Some(r) => Ok(**r),
            None => {
                let mut keywords: BTreeSet<String> = BTreeSet::new();
                for c in &candidates {
                    keywords.extend(c.keywords.iter().cloned());
                }
                Err(Error::Masked {
                    atom: atom.to_string(),
                    keywords: keywords.into_iter().collect(),
                })
            }
        }
    }
}

/// Stable keyword `k` is accepted by `k` or `~k`; testing keyword `~k`
/// only by `~k`.
pub fn keywords_accepted(keywords: &BTreeSet<String>, accept: &BTreeSet<String>) -> bool {
    keywords.iter().any(|k| {
        if k.starts_with('~') {
            accept.contains(k)
        } else {
            accept.contains(k) || accept.contains(&format!("~{k}"))
        }
    })
}

fn repos_conf_path(config_root: &Path) -> PathBuf {
    config_root.join("etc/pm/repos.conf")
}

fn sort_repos(repos: &mut [Repository]) {
    repos.sort_by(|a, b| b.priority.cmp(&a.priority).then_with(|| a.name.cmp(&b.name)));
}

/// Reads repos.conf: repositories sorted by descending priority, ties by
/// name. Relative paths resolve against `<config_root>/etc/pm/`.
pub fn load_repositories(config_root: &Path) -> Result<Vec<Repository>> {
    let conf_path = repos_conf_path(config_root);
    let text = std::fs::read_to_string(&conf_path)
        .map_err(|e| Error::io(format!("reading {}", conf_path.display()), e))?;
    let base = conf_path.parent().expect("repos.conf has a parent");

    let mut repos: Vec<Repository> = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = conf::strip_comment(raw);
        if line.is_empty() {
            continue;
        }
        let parse_err = |reason: &str| Error::ConfigFile {
            file: conf_path.clone(),
            line: lineno + 1,
            reason: reason.to_string(),
        };
        let (name, rest) = line
            .split_once('=')
            .ok_or_else(|| parse_err("expected `name = path priority`"))?;
        let name = name.trim().to_string();
        if name.is_empty() {
            return Err(parse_err("empty repository name"));
        }
        let mut parts = rest.split_whitespace();
        let path = parts
            .next()
            .ok_or_else(|| parse_err("missing repository path"))?;
        let priority: i64 = match parts.next() {
            Some(p) => p
                .parse()
                .map_err(|_| parse_err(&format!("bad priority `{p}`")))?,
            None => 0,
        };
        if parts.next().is_some() {
            return Err(parse_err("trailing tokens after priority"));
        }
        if repos.iter().any(|r| r.name == name) {
            return Err(parse_err(&format!("duplicate repository name `{name}`")));
        }
        let mut path = PathBuf::from(path);
        if path.is_relative() {
            path = base.join(path);
        }
        if !path.is_dir() {
            return Err(parse_err(&format!(
                "repository path {} does not exist",
                path.display()
            )));
        }
        repos.push(Repository {
            name,
            path,
            priority,
        });
    }
    if repos.is_empty() {
        return Err(Error::Config(format!(
            "{} registers no repositories",
            conf_path.display()
        )));
    }
    sort_repos(&mut repos);
    Ok(repos)
}

/// Registers an overlay in repos.conf. The rewrite is atomic (temp file +
/// rename) under the `etc/pm/.lock` advisory lock.
pub fn add_overlay(config_root: &Path, name: &str, path: &Path, priority: i64) -> Result<()> {
    let conf_path = repos_conf_path(config_root);
    let _lock = LockFile::acquire(&conf_path.with_file_name(".lock"))?;

    let existing = load_repositories(config_root)?;
    if existing.iter().any(|r| r.name == name) {
        return Err(Error::Config(format!(
            "repository `{name}` is already registered"
        )));
    }
    if !path.is_dir() {
        return Err(Error::Config(format!(
            "overlay path {} is not a readable directory",
            path.display()
        )));
    }

    let mut text = std::fs::read_to_string(&conf_path)
        .map_err(|e| Error::io(format!("reading {}", conf_path.display()), e))?;
    if !text.is_empty() && !text.ends_with('\n') {
        text.push('\n');
    }
    text.push_str(&format!("{name} = {} {priority}\n", path.display()));

    let tmp = conf_path.with_extension("conf.tmp");
    std::fs::write(&tmp, &text).map_err(|e| Error::io(format!("writing {}", tmp.display()), e))?;
    std::fs::rename(&tmp, &conf_path)
        .map_err(|e| Error::io(format!("renaming {}", tmp.display()), e))?;
    Ok(())
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    let iter =
        std::fs::read_dir(dir).map_err(|e| Error::io(format!("reading {}", dir.display()), e))?;
    for entry in iter {
        let entry = entry.map_err(|e| Error::io(format!("reading {}", dir.display()), e))?;
        out.push(entry.path());
    }
    out.sort();
    Ok(out)
}

fn load_tree(repo: &Repository, out: &mut Vec<Recipe>) -> Result<()> {
    for cat_dir in sorted_entries(&repo.path)? {
        if !cat_dir.is_dir() {
            continue;
        }
        for pkg_dir in sorted_entries(&cat_dir)? {
            if !pkg_dir.is_dir() {
                continue;
            }
            for entry in sorted_entries(&pkg_dir)? {
                if entry.extension().and_then(|e| e.to_str()) == Some("recipe") {
                    out.push(parse_recipe(&entry, &repo.name)?);
                }
            }
        }
    }
    Ok(())
}
