//! Layered effective configuration for a (config-root, root, prefix)
//! triple.
//!
//! Everything lives under `<config_root>/etc/pm/`: `make.conf` (required),
//! `repos.conf`, `package.env`, `env/<name>.conf`, `package.use`,
//! `global-env.conf`, and `patches/<cat>/<name>[-<ver>]/*.patch`.
//! Values expand `${VAR}` against what is defined so far, in file order,
//! so `CFLAGS="${CFLAGS} -mmic -O3"` appends exactly as expected.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use indexmap::IndexMap;

use crate::atoms::{Atom, PackageId};
use crate::conf;
use crate::error::{Error, Result};
use crate::repository::Recipe;

pub const DEFAULT_CBUILD: &str = "x86_64-pc-linux-gnu";

/// Where an enabled USE flag came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UseOrigin {
    Global,
    Package,
    Default,
}

/// The USE flags in force for one recipe.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EffectiveUse {
    pub enabled: BTreeSet<String>,
    pub origin: BTreeMap<String, UseOrigin>,
}

impl EffectiveUse {
    pub fn empty() -> EffectiveUse {
        EffectiveUse {
            enabled: BTreeSet::new(),
            origin: BTreeMap::new(),
        }
    }

    /// Space-joined sorted flags, the VDB/plan rendering.
    pub fn render(&self) -> String {
        self.enabled
            .iter()
            .cloned()
            .collect::<Vec<_>>()
            .join(" ")
    }
}

#[derive(Debug, Clone)]
pub struct Config {
    pub config_root: PathBuf,
    pub root: PathBuf,
    pub eprefix: PathBuf,
    /// make.conf variables, fully expanded, in file order.
    pub vars: IndexMap<String, String>,
    /// package.env rules in file order: (atom, env file name).
    pub package_env_rules: Vec<(Atom, String)>,
    /// package.use rules in file order: (atom, adjustment tokens).
    pub package_use_rules: Vec<(Atom, Vec<String>)>,
}

impl Config {
    /// An empty configuration, used by tests and synthetic resolvers.
    pub fn new(config_root: &Path, root: &Path, eprefix: &Path) -> Config {
        Config {
            config_root: config_root.to_path_buf(),
            root: root.to_path_buf(),
            eprefix: eprefix.to_path_buf(),
            vars: IndexMap::new(),
            package_env_rules: Vec::new(),
            package_use_rules: Vec::new(),
        }
    }

    pub fn var(&self, name: &str) -> Option<&str> {
        self.vars.get(name).map(String::as_str)
    }

    pub fn cbuild(&self) -> String {
        self.var("CBUILD").unwrap_or(DEFAULT_CBUILD).to_string()
    }

    pub fn chost(&self) -> String {
        self.var("CHOST")
            .map(str::to_string)
            .unwrap_or_else(|| self.cbuild())
    }

    pub fn accept_keywords(&self) -> BTreeSet<String> {
        self.var("ACCEPT_KEYWORDS")
            .unwrap_or("")
            .split_whitespace()
            .map(str::to_string)
            .collect()
    }

    /// `<root><eprefix>`: the directory the managed system lives in.
    pub fn prefixed_root(&self) -> PathBuf {
        join_prefix(&self.root, &self.eprefix)
    }
}

/// Joins a root directory and an absolute-style prefix offset.
pub fn join_prefix(root: &Path, eprefix: &Path) -> PathBuf {
    let offset = eprefix
        .to_str()
        .map(|s| s.trim_start_matches('/'))
        .unwrap_or("");
    if offset.is_empty() {
        root.to_path_buf()
    } else {
        root.join(offset)
    }
}

fn pm_etc(config_root: &Path) -> PathBuf {
    config_root.join("etc/pm")
}

/// Loads the layered configuration. `make.conf` must exist; rule files are
/// optional but validated eagerly (atoms must parse, referenced env files
/// must exist).
pub fn load_config(config_root: &Path, root: &Path, eprefix: &Path) -> Result<Config> {
    let eprefix_str = eprefix.to_str().unwrap_or("");
    if !eprefix_str.starts_with('/') {
        return Err(Error::Config(format!(
            "prefix `{}` must begin with '/'",
            eprefix.display()
        )));
    }
    let eprefix = if eprefix_str.len() > 1 {
        PathBuf::from(eprefix_str.trim_end_matches('/'))
    } else {
        eprefix.to_path_buf()
    };

    let etc = pm_etc(config_root);
    let make_conf = etc.join("make.conf");
    let text = std::fs::read_to_string(&make_conf)
        .map_err(|e| Error::io(format!("reading {}", make_conf.display()), e))?;

    let mut config = Config::new(config_root, root, &eprefix);
    parse_env_text(&text, &make_conf, &mut config.vars, false)?;

    let package_env = etc.join("package.env");
    if package_env.exists() {
        let text = std::fs::read_to_string(&package_env)
            .map_err(|e| Error::io(format!("reading {}", package_env.display()), e))?;
        for (lineno, raw) in text.lines().enumerate() {
            let line = conf::strip_comment(raw);
            if line.is_empty() {
                continue;
            }
            let mut parts = line.split_whitespace();
            let atom_text = parts.next().expect("non-empty line");
            let atom = Atom::parse(atom_text).map_err(|e| Error::ConfigFile {
                file: package_env.clone(),
                line: lineno + 1,
                reason: e.to_string(),
            })?;
            let env_name = parts.next().ok_or_else(|| Error::ConfigFile {
                file: package_env.clone(),
                line: lineno + 1,
                reason: "expected `atom env-file-name`".to_string(),
            })?;
            if parts.next().is_some() {
                return Err(Error::ConfigFile {
                    file: package_env.clone(),
                    line: lineno + 1,
                    reason: "one env file per rule".to_string(),
                });
            }
            let env_path = etc.join("env").join(env_name);
            if !env_path.is_file() {
                return Err(Error::ConfigFile {
                    file: package_env.clone(),
                    line: lineno + 1,
                    reason: format!("referenced env file {} does not exist", env_path.display()),
                });
            }
            config.package_env_rules.push((atom, env_name.to_string()));
        }
    }

    let package_use = etc.join("package.use");
    if package_use.exists() {
        let text = std::fs::read_to_string(&package_use)
            .map_err(|e| Error::io(format!("reading {}", package_use.display()), e))?;
        for (lineno, raw) in text.lines().enumerate() {
            let line = conf::strip_comment(raw);
            if line.is_empty() {
                continue;
            }
            let mut parts = line.split_whitespace();
            let atom_text = parts.next().expect("non-empty line");
            let atom = Atom::parse(atom_text).map_err(|e| Error::ConfigFile {
                file: package_use.clone(),
                line: lineno + 1,
                reason: e.to_string(),
            })?;
            let tokens: Vec<String> = parts.map(str::to_string).collect();
            if tokens.is_empty() {
                return Err(Error::ConfigFile {
                    file: package_use.clone(),
                    line: lineno + 1,
                    reason: "rule adjusts no flags".to_string(),
                });
            }
            config.package_use_rules.push((atom, tokens));
        }
    }

    Ok(config)
}

/// Parses KEY=value lines into `vars`, expanding `${VAR}` against what is
/// defined so far. With `merge_features` set, FEATURES layers as a
/// token-set union instead of plain override.
fn parse_env_text(
    text: &str,
    file: &Path,
    vars: &mut IndexMap<String, String>,
    merge_features: bool,
) -> Result<()> {
    for (lineno, raw) in text.lines().enumerate() {
        let parsed = conf::parse_kv(raw).map_err(|reason| Error::ConfigFile {
            file: file.to_path_buf(),
            line: lineno + 1,
            reason,
        })?;
        let Some((key, value)) = parsed else {
            continue;
        };
        let expanded = conf::expand(&value, |name| vars.get(name).cloned());
        apply_var(vars, &key, expanded, merge_features);
    }
    Ok(())
}

fn apply_var(vars: &mut IndexMap<String, String>, key: &str, value: String, merge_features: bool) {
    if merge_features && key == "FEATURES" {
        let mut tokens: Vec<String> = vars
            .get("FEATURES")
            .map(|v| v.split_whitespace().map(str::to_string).collect())
            .unwrap_or_default();
        for tok in value.split_whitespace() {
            if !tokens.iter().any(|t| t == tok) {
                tokens.push(tok.to_string());
            }
        }
        vars.insert(key.to_string(), tokens.join(" "));
    } else {
        vars.insert(key.to_string(), value);
    }
}

fn matches_rules(atom: &Atom, id: &PackageId) -> bool {
    // Rule atoms match on identity; USE requirements would be circular
    // here and are ignored.
    let mut id_only = atom.clone();
    id_only.use_deps.clear();
    id_only.matches(id, &BTreeSet::new())
}

/// Computes the USE flags in force for a recipe: global USE tokens left to
/// right (`-*` clears the accumulation), then matching package.use rules in
/// file order, finally intersected with the recipe's IUSE.
pub fn compute_use(config: &Config, recipe: &Recipe) -> EffectiveUse {
    let mut acc: BTreeSet<String> = BTreeSet::new();
    let mut origin: BTreeMap<String, UseOrigin> = BTreeMap::new();

    let apply = |acc: &mut BTreeSet<String>,
                     origin: &mut BTreeMap<String, UseOrigin>,
                     token: &str,
                     from: UseOrigin| {
        if token == "-*" {
            acc.clear();
        } else if let Some(flag) = token.strip_prefix('-') {
            acc.remove(flag);
        } else {
            acc.insert(token.to_string());
            origin.insert(token.to_string(), from);
        }
    };

    for token in config
        .var("USE")
        .unwrap_or("")
        .split_whitespace()
        .collect::<Vec<_>>()
    {
        apply(&mut acc, &mut origin, token, UseOrigin::Global);
    }
    for (atom, tokens) in &config.package_use_rules {
        if matches_rules(atom, &recipe.id) {
            for token in tokens {
                apply(&mut acc, &mut origin, token, UseOrigin::Package);
            }
        }
    }

    let dropped: Vec<&String> = acc.difference(&recipe.iuse).collect();
    if !dropped.is_empty() {
        let (package_scoped, global): (Vec<&String>, Vec<&String>) = dropped
            .into_iter()
            .partition(|f| origin.get(f.as_str()) == Some(&UseOrigin::Package));
        if !package_scoped.is_empty() {
            log::warn!(
                "{}: USE flags not in IUSE ignored: {}",
                recipe.id.cnv(),
                package_scoped
                    .iter()
                    .map(|s| s.as_str())
                    .collect::<Vec<_>>()
                    .join(" ")
            );
        }
        if !global.is_empty() {
            log::debug!(
                "{}: global USE flags not in IUSE: {}",
                recipe.id.cnv(),
                global
                    .iter()
                    .map(|s| s.as_str())
                    .collect::<Vec<_>>()
                    .join(" ")
            );
        }
    }

    let enabled: BTreeSet<String> = acc.intersection(&recipe.iuse).cloned().collect();
    origin.retain(|flag, _| enabled.contains(flag));
    EffectiveUse { enabled, origin }
}

/// Layers the build environment for one recipe: make.conf vars, then
/// `global-env.conf`, then each matching package.env entry's env file in
/// package.env file order. Later layers override, except FEATURES which
/// merges as a token-set union. Env files are read here so their parse
/// errors name the file and line.
pub fn build_environment(config: &Config, recipe: &Recipe) -> Result<IndexMap<String, String>> {
    let etc = pm_etc(&config.config_root);
    let mut env = config.vars.clone();

    let global = etc.join("global-env.conf");
    if global.is_file() {
        let text = std::fs::read_to_string(&global)
            .map_err(|e| Error::io(format!("reading {}", global.display()), e))?;
        parse_env_text(&text, &global, &mut env, true)?;
    }

    for (atom, env_name) in &config.package_env_rules {
        if !matches_rules(atom, &recipe.id) {
            continue;
        }
        let path = etc.join("env").join(env_name);
        let text = std::fs::read_to_string(&path)
            .map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        parse_env_text(&text, &path, &mut env, true)?;
    }

    Ok(env)
}

/// User patches for a package: files under
/// `etc/pm/patches/<category>/<name>/` (all versions) then
/// `.../<name>-<version>/` (exact version), each directory sorted
/// bytewise.
pub fn find_user_patches(config: &Config, id: &PackageId) -> Vec<PathBuf> {
    let base = pm_etc(&config.config_root).join("patches").join(&id.category);
    let mut out = Vec::new();
    for dir in [
        base.join(&id.name),
        base.join(format!("{}-{}", id.name, id.version)),
    ] {
        let Ok(entries) = std::fs::read_dir(&dir) else {
            continue;
        };
        let mut patches: Vec<PathBuf> = entries
            .filter_map(|e| e.ok())
            .map(|e| e.path())
            .filter(|p| p.is_file() && p.extension().and_then(|e| e.to_str()) == Some("patch"))
            .collect();
        patches.sort();
        out.extend(patches);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::atoms::Version;
    use std::fs;

    fn write(path: &Path, text: &str) {
        fs::create_dir_all(path.parent().unwrap()).unwrap();
        fs::write(path, text).unwrap();
    }

    fn recipe_with_iuse(cnv: &str, iuse: &[&str]) -> Recipe {
        let (cat, rest) = cnv.split_once('/').unwrap();
        let dash = rest.rfind('-').unwrap();
        let (name, ver) = (&rest[..dash], &rest[dash + 1..]);
        Recipe {
            id: PackageId {
                category: cat.into(),
                name: name.into(),
                version: Version::parse(ver).unwrap(),
                slot: "0".into(),
                repository: "main".into(),
            },
            description: String::new(),
            slot: "0".into(),
            iuse: iuse.iter().map(|s| s.to_string()).collect(),
            depend: String::new(),
            rdepend: String::new(),
            pdepend: String::new(),
            keywords: BTreeSet::new(),
            src: Vec::new(),
            phases: BTreeMap::new(),
            bundled_patches: Vec::new(),
            dir: PathBuf::new(),
        }
    }

    #[test]
    fn self_append_preserves_leading_space() {
        let t = tempfile::tempdir().unwrap();
        write(
            &t.path().join("etc/pm/make.conf"),
            "CFLAGS=\"${CFLAGS} -mmic -O3\"\n",
        );
        let c = load_config(t.path(), Path::new("/"), Path::new("/")).unwrap();
        assert_eq!(c.var("CFLAGS"), Some(" -mmic -O3"));
    }

    #[test]
    fn accept_keywords_set() {
        let t = tempfile::tempdir().unwrap();
        write(
            &t.path().join("etc/pm/make.conf"),
            "ACCEPT_KEYWORDS=\"~amd64-linux\"\n",
        );
        let c = load_config(t.path(), Path::new("/"), Path::new("/")).unwrap();
        assert_eq!(
            c.accept_keywords(),
            ["~amd64-linux".to_string()].into_iter().collect()
        );
    }

    #[test]
    fn empty_make_conf_defaults() {
        let t = tempfile::tempdir().unwrap();
        write(&t.path().join("etc/pm/make.conf"), "");
        let c = load_config(t.path(), Path::new("/"), Path::new("/")).unwrap();
        assert!(c.vars.is_empty());
        assert_eq!(c.var("USE"), None);
        assert_eq!(c.cbuild(), DEFAULT_CBUILD);
        assert_eq!(c.chost(), DEFAULT_CBUILD);
    }

    #[test]
    fn missing_make_conf_is_an_error() {
        let t = tempfile::tempdir().unwrap();
        assert!(load_config(t.path(), Path::new("/"), Path::new("/")).is_err());
    }

    #[test]
    fn use_computation_matches_make_conf_semantics() {
        let t = tempfile::tempdir().unwrap();
        write(
            &t.path().join("etc/pm/make.conf"),
            "USE=\"-* unicode python ncurses readline threads xml\"\n",
        );
        let c = load_config(t.path(), Path::new("/"), Path::new("/")).unwrap();
        let r = recipe_with_iuse("dev-lang/python-2.7.12", &["python", "ncurses", "tk"]);
        let use_ = compute_use(&c, &r);
        let expected: BTreeSet<String> =
            ["python".to_string(), "ncurses".to_string()].into_iter().collect();
        assert_eq!(use_.enabled, expected);
        assert_eq!(use_.origin["python"], UseOrigin::Global);
    }

    #[test]
    fn package_use_layers_after_global() {
        let t = tempfile::tempdir().unwrap();
        write(&t.path().join("etc/pm/make.conf"), "USE=\"a b\"\n");
        write(&t.path().join("etc/pm/package.use"), "dev-libs/x -a c\n");
        let c = load_config(t.path(), Path::new("/"), Path::new("/")).unwrap();

        let x = recipe_with_iuse("dev-libs/x-1.0", &["a", "b", "c"]);
        let y = recipe_with_iuse("dev-libs/y-1.0", &["a", "b", "c"]);
        let ux = compute_use(&c, &x);
        let uy = compute_use(&c, &y);
        assert_eq!(
            ux.enabled,
            ["b".to_string(), "c".to_string()].into_iter().collect()
        );
        assert_eq!(ux.origin["c"], UseOrigin::Package);
        assert_eq!(
            uy.enabled,
            ["a".to_string(), "b".to_string()].into_iter().collect()
        );
    }

    #[test]
    fn empty_use_is_empty() {
        let t = tempfile::tempdir().unwrap();
        write(&t.path().join("etc/pm/make.conf"), "USE=\"\"\n");
        let c = load_config(t.path(), Path::new("/"), Path::new("/")).unwrap();
        let r = recipe_with_iuse("dev-libs/x-1.0", &["a"]);
        assert!(compute_use(&c, &r).enabled.is_empty());
    }

    #[test]
    fn per_package_env_overrides_and_features_union() {
        let t = tempfile::tempdir().unwrap();
        write(
            &t.path().join("etc/pm/make.conf"),
            "CFLAGS=\"-O3\"\nFEATURES=\"collision-protect\"\n",
        );
        write(
            &t.path().join("etc/pm/env/debug-cflags.conf"),
            "CFLAGS=\"-O2 -ggdb -pipe\"\nCXXFLAGS=\"${CFLAGS}\"\nFEATURES=\"${FEATURES} splitdebug\"\n",
        );
        write(&t.path().join("etc/pm/package.env"), "dev-lang/R debug-cflags.conf\n");
        let c = load_config(t.path(), Path::new("/"), Path::new("/")).unwrap();

        let r = recipe_with_iuse("dev-lang/R-3.3.1", &[]);
        let env = build_environment(&c, &r).unwrap();
        assert_eq!(env["CFLAGS"], "-O2 -ggdb -pipe");
        assert_eq!(env["CXXFLAGS"], "-O2 -ggdb -pipe");
        assert_eq!(env["FEATURES"], "collision-protect splitdebug");

        let other = recipe_with_iuse("sys-libs/zlib-1.2.8", &[]);
        let env = build_environment(&c, &other).unwrap();
        assert_eq!(env["CFLAGS"], "-O3");
        assert_eq!(env["FEATURES"], "collision-protect");
    }

    #[test]
    fn missing_env_file_is_validated_eagerly() {
        let t = tempfile::tempdir().unwrap();
        write(&t.path().join("etc/pm/make.conf"), "");
        write(&t.path().join("etc/pm/package.env"), "dev-lang/R nope.conf\n");
        assert!(matches!(
            load_config(t.path(), Path::new("/"), Path::new("/")),
            Err(Error::ConfigFile { line: 1, .. })
        ));
    }

    #[test]
    fn env_file_parse_error_names_file_and_line() {
        let t = tempfile::tempdir().unwrap();
        write(&t.path().join("etc/pm/make.conf"), "");
        write(&t.path().join("etc/pm/env/bad.conf"), "OK=\"1\"\nnot a kv line\n");
        write(&t.path().join("etc/pm/package.env"), "dev-lang/R bad.conf\n");
        let c = load_config(t.path(), Path::new("/"), Path::new("/")).unwrap();
        let r = recipe_with_iuse("dev-lang/R-3.3.1", &[]);
        match build_environment(&c, &r) {
            Err(Error::ConfigFile { file, line, .. }) => {
                assert!(file.ends_with("env/bad.conf"));
                assert_eq!(line, 2);
            }
            other => panic!("expected config file error, got {other:?}"),
        }
    }

    #[test]
    fn two_unmatched_packages_get_identical_environments() {
        let t = tempfile::tempdir().unwrap();
        write(
            &t.path().join("etc/pm/make.conf"),
            "CFLAGS=\"-O3\"\nCHOST=\"x86_64-pc-linux-gnu\"\n",
        );
        write(&t.path().join("etc/pm/global-env.conf"), "PATH_HINT=\"/opt/bin\"\n");
        let c = load_config(t.path(), Path::new("/"), Path::new("/")).unwrap();
        let a = recipe_with_iuse("dev-libs/a-1.0", &[]);
        let b = recipe_with_iuse("dev-libs/b-2.0", &[]);
        let ea = build_environment(&c, &a).unwrap();
        let eb = build_environment(&c, &b).unwrap();
        assert_eq!(ea, eb);
        assert_eq!(ea["PATH_HINT"], "/opt/bin");
    }

    #[test]
    fn expansion_is_idempotent() {
        let t = tempfile::tempdir().unwrap();
        write(
            &t.path().join("etc/pm/make.conf"),
            "A=\"x\"\nB=\"${A}/y\"\nC=\"${UNDEFINED}tail\"\n",
        );
        let c = load_config(t.path(), Path::new("/"), Path::new("/")).unwrap();
        for (_, v) in &c.vars {
            let again = conf::expand(v, |name| c.vars.get(name).cloned());
            assert_eq!(&again, v);
        }
        assert_eq!(c.var("B"), Some("x/y"));
        assert_eq!(c.var("C"), Some("tail"));
    }

    #[test]
    fn user_patch_scoping() {
        let t = tempfile::tempdir().unwrap();
        write(&t.path().join("etc/pm/make.conf"), "");
        let patches = t.path().join("etc/pm/patches");
        write(
            &patches.join("dev-libs/libffi-3.2.1/libffi-3.2.1-k1om.patch"),
            "versioned",
        );
        write(&patches.join("dev-libs/libffi/fix.patch"), "unversioned");
        write(&patches.join("dev-libs/libffi/README"), "not a patch");
        let c = load_config(t.path(), Path::new("/"), Path::new("/")).unwrap();

        let id = |v: &str| PackageId {
            category: "dev-libs".into(),
            name: "libffi".into(),
            version: Version::parse(v).unwrap(),
            slot: "0".into(),
            repository: "main".into(),
        };

        let found = find_user_patches(&c, &id("3.2.1"));
        assert_eq!(found.len(), 2);
        assert!(found[0].ends_with("dev-libs/libffi/fix.patch"));
        assert!(found[1].ends_with("libffi-3.2.1-k1om.patch"));

        let found = find_user_patches(&c, &id("3.3"));
        assert_eq!(found.len(), 1);
        assert!(found[0].ends_with("fix.patch"));

        // Deterministic bytewise order within one directory.
        write(&patches.join("dev-libs/libffi/a-first.patch"), "a");
        let found = find_user_patches(&c, &id("3.3"));
        assert!(found[0].ends_with("a-first.patch"));
        assert!(found[1].ends_with("fix.patch"));
    }
}
