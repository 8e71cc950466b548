//! Provider selection among slotted installs: list the installed
//! providers of a named module and activate one via an alias symlink.
//!
//! Module definitions come from `etc/pm/select-modules.conf` under the
//! config root, one `module category/name binary-pattern` line each, with
//! `{slot}` in the pattern replaced by the provider's slot. The active
//! selection is recorded at `<root><eprefix>/etc/pm/select/<module>` and
//! aliased as `<root><eprefix>/usr/bin/<module>`.

use std::path::Path;

use crate::atoms::PackageId;
use crate::conf;
use crate::config::join_prefix;
use crate::error::{Error, Result};
use crate::vdb::Vdb;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModuleDef {
    pub module: String,
    pub category: String,
    pub name: String,
    pub pattern: String,
}

impl ModuleDef {
    pub fn binary_for(&self, slot: &str) -> String {
        self.pattern.replace("{slot}", slot)
    }
}

#[derive(Debug, Clone)]
pub struct SelectModule {
    pub module: String,
    pub providers: Vec<PackageId>,
    pub active: Option<PackageId>,
}

pub fn load_module_defs(config_root: &Path) -> Result<Vec<ModuleDef>> {
    let path = config_root.join("etc/pm/select-modules.conf");
    if !path.exists() {
        return Ok(Vec::new());
    }
    let text = std::fs::read_to_string(&path)
        .map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    let mut defs = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = conf::strip_comment(raw);
        if line.is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split_whitespace().collect();
        let [module, package, pattern] = parts.as_slice() else {
            return Err(Error::ConfigFile {
                file: path.clone(),
                line: lineno + 1,
                reason: "expected `module category/name binary-pattern`".to_string(),
            });
        };
        let (category, name) = package.split_once('/').ok_or_else(|| Error::ConfigFile {
            file: path.clone(),
            line: lineno + 1,
            reason: "package must be category/name".to_string(),
        })?;
        defs.push(ModuleDef {
            module: module.to_string(),
            category: category.to_string(),
            name: name.to_string(),
            pattern: pattern.to_string(),
        });
    }
    Ok(defs)
}

pub fn find_module(config_root: &Path, module: &str) -> Result<ModuleDef> {
    load_module_defs(config_root)?
        .into_iter()
        .find(|d| d.module == module)
        .ok_or_else(|| Error::Select(format!("unknown module `{module}`")))
}

fn record_path(vdb: &Vdb, module: &str) -> std::path::PathBuf {
    vdb.base().join("etc/pm/select").join(module)
}

fn read_record(vdb: &Vdb, module: &str) -> Option<String> {
    std::fs::read_to_string(record_path(vdb, module))
        .ok()
        .map(|s| s.trim().to_string())
}

/// Installed providers of a module, ordered by version; the active one is
/// read from the selection record and absent by default.
pub fn list(def: &ModuleDef, vdb: &Vdb) -> Result<SelectModule> {
    let installed = vdb.load()?;
    let mut providers: Vec<PackageId> = installed
        .entries()
        .iter()
        .filter(|e| e.id.category == def.category && e.id.name == def.name)
        .map(|e| e.id.clone())
        .collect();
    providers.sort_by(|a, b| a.version.cmp(&b.version));

    let active = read_record(vdb, &def.module)
        .and_then(|record| providers.iter().find(|p| p.cnvs() == record).cloned());

    Ok(SelectModule {
        module: def.module.clone(),
        providers,
        active,
    })
}

/// Activates a provider: writes the selection record and atomically
/// points `usr/bin/<module>` at the provider's slotted binary.
pub fn set(def: &ModuleDef, provider: &PackageId, vdb: &Vdb, eprefix: &Path) -> Result<()> {
    let installed = vdb.load()?;
    let entry = installed
        .get(provider)
        .ok_or_else(|| Error::NotInstalled {
            id: provider.cnv(),
        })?;

    let binary = def.binary_for(&entry.slot);
    let owned_rel = join_prefix(Path::new(""), eprefix)
        .join("usr/bin")
        .join(&binary)
        .display()
        .to_string();
    let owned_rel = owned_rel.trim_start_matches('/').to_string();
    if !entry.owns(&owned_rel) {
        return Err(Error::Select(format!(
            "{} ships no slotted binary `{binary}`",
            provider.cnv()
        )));
    }

    let record = record_path(vdb, &def.module);
    if let Some(parent) = record.parent() {
        std::fs::create_dir_all(parent)
            .map_err(|e| Error::io(format!("creating {}", parent.display()), e))?;
    }
    std::fs::write(&record, format!("{}\n", entry.id.cnvs()))
        .map_err(|e| Error::io(format!("writing {}", record.display()), e))?;

    let bin_dir = vdb.base().join("usr/bin");
    std::fs::create_dir_all(&bin_dir)
        .map_err(|e| Error::io(format!("creating {}", bin_dir.display()), e))?;
    let alias = bin_dir.join(&def.module);
    let staging = bin_dir.join(format!(".{}.new", def.module));
    if staging.symlink_metadata().is_ok() {
        std::fs::remove_file(&staging)
            .map_err(|e| Error::io(format!("clearing {}", staging.display()), e))?;
    }
    std::os::unix::fs::symlink(&binary, &staging)
        .map_err(|e| Error::io(format!("linking {}", staging.display()), e))?;
    std::fs::rename(&staging, &alias)
        .map_err(|e| Error::io(format!("activating {}", alias.display()), e))?;
    Ok(())
}

/// Drops any selection pointing at a package being unmerged: removes the
/// record and the alias symlink.
pub fn clear_selection_for(vdb: &Vdb, id: &PackageId) -> Result<()> {
    let dir = vdb.base().join("etc/pm/select");
    let Ok(entries) = std::fs::read_dir(&dir) else {
        return Ok(());
    };
    for entry in entries.filter_map(|e| e.ok()) {
        let record = std::fs::read_to_string(entry.path()).unwrap_or_default();
        if record.trim() != id.cnvs() {
            continue;
        }
        let module = entry.file_name().to_string_lossy().to_string();
        std::fs::remove_file(entry.path())
            .map_err(|e| Error::io(format!("removing {}", entry.path().display()), e))?;
        let alias = vdb.base().join("usr/bin").join(&module);
        if alias.symlink_metadata().map(|m| m.file_type().is_symlink()).unwrap_or(false) {
            std::fs::remove_file(&alias)
                .map_err(|e| Error::io(format!("removing {}", alias.display()), e))?;
        }
    }
    // Prune the select dir if nothing is selected anymore.
    let _ = std::fs::remove_dir(&dir);
    let _ = std::fs::remove_dir(vdb.base().join("etc/pm"));
    let _ = std::fs::remove_dir(vdb.base().join("etc"));
    Ok(())
}
