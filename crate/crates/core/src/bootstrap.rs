//! Three-stage prefix bootstrap.
//!
//! Stage 1 installs the package-manager runtime stub with the host
//! toolchain, stage 2 bootstraps the toy compiler (plus the toy libc in
//! RAP mode), and stage 3 rebuilds the whole system set with the
//! bootstrapped compiler. Everything lands inside the prefix directory;
//! a stage marker file makes interrupted runs resumable.

use std::collections::BTreeSet;
use std::os::unix::fs::PermissionsExt;
use std::path::{Path, PathBuf};

use crate::atoms::Atom;
use crate::buildengine::{self, BuildContext};
use crate::config::{self, Config};
use crate::error::{Error, Result};
use crate::lock::LockFile;
use crate::repository::RepositorySet;
use crate::resolver::{self, ResolverContext};
use crate::vdb::Vdb;

/// The fixture system set: what `@system` means here.
pub const SYSTEM_SET: [&str; 5] = [
    "sys-apps/pm-runtime",
    "sys-devel/toy-cc",
    "sys-apps/toy-core",
    "app-shells/toy-sh",
    "sys-libs/toy-libc",
];

pub const STAGE_MARKER: &str = ".bootstrap-stage";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Toolchain {
    Host,
    Bootstrapped,
}

#[derive(Debug, Clone)]
pub struct BootstrapStage {
    pub number: u8,
    pub packages: Vec<Atom>,
    pub toolchain: Toolchain,
}

#[derive(Debug, Clone)]
pub struct BootstrapPlan {
    pub prefix_path: PathBuf,
    pub stages: Vec<BootstrapStage>,
    pub rap_mode: bool,
}

#[derive(Debug, Clone)]
pub struct StageReport {
    pub number: u8,
    pub skipped: bool,
    pub merged: Vec<String>,
}

#[derive(Debug, Clone, Default)]
pub struct BootstrapReport {
    pub stages: Vec<StageReport>,
}

pub fn default_system_set() -> Vec<Atom> {
    SYSTEM_SET
        .iter()
        .map(|s| Atom::parse(s).expect("system set atoms are valid"))
        .collect()
}

/// Plans the three stages. Refuses a non-empty prefix directory.
pub fn plan_bootstrap(
    prefix_path: &Path,
    rap_mode: bool,
    system_set: &[Atom],
) -> Result<BootstrapPlan> {
    if prefix_path.exists() {
        let occupied = std::fs::read_dir(prefix_path)
            .map_err(|e| Error::io(format!("reading {}", prefix_path.display()), e))?
            .next()
            .is_some();
        if occupied && !prefix_path.join(STAGE_MARKER).exists() {
            return Err(Error::Bootstrap(format!(
                "{} is not empty; refusing to overwrite",
                prefix_path.display()
            )));
        }
    }
    if !prefix_path.is_absolute() {
        return Err(Error::Bootstrap(
            "prefix path must be absolute".to_string(),
        ));
    }

    let mut stage2 = vec![Atom::parse("sys-devel/toy-cc").expect("valid atom")];
    if rap_mode {
        stage2.push(Atom::parse("sys-libs/toy-libc").expect("valid atom"));
    }
    Ok(BootstrapPlan {
        prefix_path: prefix_path.to_path_buf(),
        stages: vec![
            BootstrapStage {
                number: 1,
                packages: vec![Atom::parse("sys-apps/pm-runtime").expect("valid atom")],
                toolchain: Toolchain::Host,
            },
            BootstrapStage {
                number: 2,
                packages: stage2,
                toolchain: Toolchain::Host,
            },
            BootstrapStage {
                number: 3,
                packages: system_set.to_vec(),
                toolchain: Toolchain::Bootstrapped,
            },
        ],
        rap_mode,
    })
}

fn read_marker(prefix: &Path) -> u8 {
    std::fs::read_to_string(prefix.join(STAGE_MARKER))
        .ok()
        .and_then(|s| s.trim().parse().ok())
        .unwrap_or(0)
}

fn write_marker(prefix: &Path, stage: u8) -> Result<()> {
    let path = prefix.join(STAGE_MARKER);
    std::fs::write(&path, format!("{stage}\n"))
        .map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

fn host_cc(host_config: &Config) -> String {
    host_config.var("CC").unwrap_or("host-cc").to_string()
}

fn write_prefix_make_conf(
    plan: &BootstrapPlan,
    host_config: &Config,
    toolchain: Toolchain,
) -> Result<()> {
    let cbuild = host_config.cbuild();
    let cc = match toolchain {
        Toolchain::Host => host_cc(host_config),
        Toolchain::Bootstrapped => "toy-cc".to_string(),
    };
    let accept = {
        let set = host_config.accept_keywords();
        if set.is_empty() {
            "~amd64-linux".to_string()
        } else {
            set.into_iter().collect::<Vec<_>>().join(" ")
        }
    };
    let text = format!(
        "CBUILD=\"{cbuild}\"\nCHOST=\"{cbuild}\"\nCC=\"{cc}\"\nACCEPT_KEYWORDS=\"{accept}\"\nFEATURES=\"collision-protect\"\n"
    );
    let path = plan.prefix_path.join("etc/pm/make.conf");
    std::fs::create_dir_all(path.parent().expect("etc/pm path"))
        .map_err(|e| Error::io("creating prefix etc/pm".to_string(), e))?;
    std::fs::write(&path, text).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

fn write_prefix_repos_conf(plan: &BootstrapPlan, repos: &RepositorySet) -> Result<()> {
    let mut text = String::new();
    for r in repos.repositories() {
        text.push_str(&format!("{} = {} {}\n", r.name, r.path.display(), r.priority));
    }
    let path = plan.prefix_path.join("etc/pm/repos.conf");
    std::fs::write(&path, text).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

/// Runs stages up to and including `upto` (tests interrupt at a stage
/// boundary by passing 1 or 2). Already-completed stages are skipped via
/// the marker file.
pub fn execute_bootstrap_stages(
    plan: &BootstrapPlan,
    repos: &RepositorySet,
    host_config: &Config,
    upto: u8,
) -> Result<BootstrapReport> {
    std::fs::create_dir_all(&plan.prefix_path)
        .map_err(|e| Error::io(format!("creating {}", plan.prefix_path.display()), e))?;
    let _lock = LockFile::acquire(&plan.prefix_path.join(".bootstrap-lock"))?;

    let done = read_marker(&plan.prefix_path);
    let mut report = BootstrapReport::default();

    for stage in &plan.stages {
        if stage.number > upto {
            break;
        }
        if stage.number <= done {
            report.stages.push(StageReport {
                number: stage.number,
                skipped: true,
                merged: Vec::new(),
            });
            continue;
        }

        write_prefix_make_conf(plan, host_config, stage.toolchain)?;
        write_prefix_repos_conf(plan, repos)?;

        let config = config::load_config(&plan.prefix_path, Path::new("/"), &plan.prefix_path)?;
        let vdb = Vdb::at(&config.prefixed_root());
        let installed = vdb.load()?;
        let mut ctx = ResolverContext::native(&config, repos, &installed);
        // Stage 3 rebuilds the system set with the bootstrapped compiler
        // even though stages 1-2 already installed parts of it.
        ctx.force_targets = stage.toolchain == Toolchain::Bootstrapped;

        let build_plan = resolver::solve(&stage.packages, &ctx, &[])?;
        let mut merged = Vec::new();
        for action in &build_plan.actions {
            let bctx = BuildContext::prepare(&config, &action.recipe, &action.use_flags)?;
            let result = buildengine::run_phases(&action.recipe, &bctx)
                .and_then(|_| {
                    buildengine::merge(&action.recipe, &bctx, &vdb, action.reason.as_str(), None)
                });
            bctx.cleanup();
            result?;
            merged.push(action.recipe.id.cnv());
        }
        write_marker(&plan.prefix_path, stage.number)?;
        report.stages.push(StageReport {
            number: stage.number,
            skipped: false,
            merged,
        });
    }

    if upto >= 3 && read_marker(&plan.prefix_path) >= 3 {
        write_startprefix(&plan.prefix_path)?;
    }
    Ok(report)
}

/// Runs the whole bootstrap.
pub fn execute_bootstrap(
    plan: &BootstrapPlan,
    repos: &RepositorySet,
    host_config: &Config,
) -> Result<BootstrapReport> {
    execute_bootstrap_stages(plan, repos, host_config, 3)
}

/// Writes the prefix entry script. Refuses until stage 3 has completed.
pub fn write_startprefix(prefix_path: &Path) -> Result<PathBuf> {
    if read_marker(prefix_path) < 3 {
        return Err(Error::Bootstrap(format!(
            "{} has not completed stage 3; cannot write startprefix",
            prefix_path.display()
        )));
    }
    let prefix = prefix_path.display();
    let script = format!(
        "#!/bin/sh\n\
         # Enter the prefix environment rooted at {prefix}.\n\
         EPREFIX=\"{prefix}\"\n\
         export EPREFIX\n\
         PATH=\"$EPREFIX/usr/bin:$EPREFIX/bin:$PATH\"\n\
         export PATH\n\
         echo \"Entering Prefix $EPREFIX\"\n\
         exec \"${{SHELL:-/bin/sh}}\" \"$@\"\n"
    );
    let path = prefix_path.join("startprefix");
    std::fs::write(&path, script)
        .map_err(|e| Error::io(format!("writing {}", path.display()), e))?;
    let mut perms = std::fs::metadata(&path)
        .map_err(|e| Error::io(format!("stat {}", path.display()), e))?
        .permissions();
    perms.set_mode(0o755);
    std::fs::set_permissions(&path, perms)
        .map_err(|e| Error::io(format!("chmod {}", path.display()), e))?;
    Ok(path)
}

/// Expands the `@system` set token.
pub fn system_set_atoms() -> BTreeSet<String> {
    SYSTEM_SET.iter().map(|s| s.to_string()).collect()
}
