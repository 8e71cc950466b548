//! pm: command-line surface over the package-manager core.
//!
//! Machine-consumable output (plans, query results, inspect lines) goes
//! to stdout; diagnostics go to stderr. Exit codes: 0 success, 2 parse or
//! format errors, 3 resolution errors, 4 build errors, 5 merge
//! collisions.

use std::collections::BTreeSet;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use pm_core::atoms::{Atom, Operator};
use pm_core::bootstrap::{self, BootstrapPlan};
use pm_core::buildengine::{self, BuildContext};
use pm_core::config::{self, Config};
use pm_core::error::{Error, ErrorKind};
use pm_core::lock::LockFile;
use pm_core::repository::{self, RepositorySet};
use pm_core::resolver::{self, Action, Reason, ResolverContext};
use pm_core::select;
use pm_core::vdb::Vdb;

#[derive(Parser)]
#[command(name = "pm", version, about = "source-based package manager")]
struct Cli {
    /// Target filesystem receiving installs.
    #[arg(long, global = true)]
    root: Option<PathBuf>,
    /// Directory whose etc/pm configuration governs the operation.
    #[arg(long = "config-root", global = true)]
    config_root: Option<PathBuf>,
    /// Installation offset inside the root.
    #[arg(long, global = true)]
    prefix: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Resolve and build atoms into the target root.
    Merge {
        /// Print the plan without touching any file.
        #[arg(long)]
        pretend: bool,
        /// Also rebuild installed packages whose USE or build environment
        /// changed.
        #[arg(long = "changed-use")]
        changed_use: bool,
        /// Atoms, @world, or @system.
        atoms: Vec<String>,
    },
    /// Remove installed packages.
    Unmerge { atoms: Vec<String> },
    /// Introspection: dependency graphs, installed set, file ownership.
    Query {
        #[command(subcommand)]
        cmd: QueryCmd,
    },
    /// List or activate providers of a select module.
    Select {
        #[command(subcommand)]
        cmd: SelectCmd,
    },
    /// Manage recipe repositories.
    Overlay {
        #[command(subcommand)]
        cmd: OverlayCmd,
    },
    /// Print the machine a built artifact targets.
    Inspect { path: PathBuf },
    /// Bootstrap a fresh prefix in three stages.
    Bootstrap {
        /// Also build the toy libc in stage 2 (self-hosted libc).
        #[arg(long)]
        libc: bool,
        /// Confirm each stage interactively.
        #[arg(long)]
        interactive: bool,
    },
}

#[derive(Subcommand)]
enum QueryCmd {
    /// Render the expanded dependency graph of an atom.
    Depgraph { atom: String },
    /// List installed packages, optionally from another root.
    Installed { root: Option<PathBuf> },
    /// Find the package owning a path.
    Owns { path: PathBuf },
}

#[derive(Subcommand)]
enum SelectCmd {
    List { module: String },
    Set { module: String, provider: String },
}

#[derive(Subcommand)]
enum OverlayCmd {
    Add {
        name: String,
        path: PathBuf,
        #[arg(long, default_value_t = repository::DEFAULT_OVERLAY_PRIORITY)]
        priority: i64,
    },
    List,
}

/// Effective roots for one invocation. Inside a startprefix session the
/// EPREFIX environment variable supplies the ambient prefix; otherwise an
/// explicit --root is required for root-touching commands.
struct Roots {
    root: PathBuf,
    config_root: PathBuf,
    eprefix: PathBuf,
    /// Where the invoking environment's own packages live.
    host_base: PathBuf,
}

fn resolve_roots(cli: &Cli) -> Result<Roots, Error> {
    let ambient = std::env::var_os("EPREFIX").map(PathBuf::from);
    let host_base = ambient.clone().unwrap_or_else(|| PathBuf::from("/"));

    let (root, eprefix) = match (&cli.root, &cli.prefix, &ambient) {
        (Some(root), prefix, _) => (
            root.clone(),
            prefix.clone().unwrap_or_else(|| PathBuf::from("/")),
        ),
        (None, prefix, Some(ambient_prefix)) => (
            PathBuf::from("/"),
            prefix.clone().unwrap_or_else(|| ambient_prefix.clone()),
        ),
        (None, _, None) => {
            return Err(Error::Config(
                "--root is required outside a prefix session".to_string(),
            ))
        }
    };
    let config_root = cli
        .config_root
        .clone()
        .or_else(|| ambient.clone())
        .unwrap_or_else(|| root.clone());
    Ok(Roots {
        root,
        config_root,
        eprefix,
        host_base,
    })
}

fn exit_code_for(err: &Error) -> u8 {
    match err.kind() {
        ErrorKind::Parse => 2,
        ErrorKind::Resolution => 3,
        ErrorKind::Build => 4,
        ErrorKind::Collision => 5,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("pm: {e}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}

fn run(cli: &Cli) -> Result<(), Error> {
    match &cli.command {
        Command::Merge {
            pretend,
            changed_use,
            atoms,
        } => cmd_merge(cli, *pretend, *changed_use, atoms),
        Command::Unmerge { atoms } => cmd_unmerge(cli, atoms),
        Command::Query { cmd } => cmd_query(cli, cmd),
        Command::Select { cmd } => cmd_select(cli, cmd),
        Command::Overlay { cmd } => cmd_overlay(cli, cmd),
        Command::Inspect { path } => {
            let machine = buildengine::inspect_machine(path)?;
            println!("Machine: {machine}");
            Ok(())
        }
        Command::Bootstrap { libc, interactive } => cmd_bootstrap(cli, *libc, *interactive),
    }
}

fn load_target_config(roots: &Roots) -> Result<Config, Error> {
    config::load_config(&roots.config_root, &roots.root, &roots.eprefix)
}

/// Expands positional target tokens: plain atoms, `@world` from the target
/// root's world file, `@system` from the bootstrap system set.
fn expand_targets(tokens: &[String], vdb: &Vdb) -> Result<Vec<Atom>, Error> {
    let mut out = Vec::new();
    for token in tokens {
        match token.as_str() {
            "@world" => out.extend(vdb.read_world()?),
            "@system" => out.extend(bootstrap::default_system_set()),
            _ => out.push(Atom::parse(token)?),
        }
    }
    Ok(out)
}

/// The world file records explicit targets as `category/name[:slot]`.
fn world_atom_for(action: &Action, targets: &[Atom]) -> Option<Atom> {
    targets
        .iter()
        .find(|a| a.matches(&action.recipe.id, &action.use_flags.enabled))
        .map(|a| Atom {
            op: Operator::None,
            category: Some(action.recipe.id.category.clone()),
            name: action.recipe.id.name.clone(),
            version: None,
            slot: a.slot.clone(),
            use_deps: Vec::new(),
        })
}

fn cmd_merge(
    cli: &Cli,
    pretend: bool,
    changed_use: bool,
    tokens: &[String],
) -> Result<(), Error> {
    let roots = resolve_roots(cli)?;
    let config = load_target_config(&roots)?;
    let repos = RepositorySet::load(&roots.config_root)?;
    let target_base = config.prefixed_root();
    let vdb = Vdb::at(&target_base);
    let installed = vdb.load()?;

    let targets = expand_targets(tokens, &vdb)?;
    if targets.is_empty() && !changed_use {
        return Err(Error::Config("nothing to merge".to_string()));
    }

    let cross = roots.host_base != target_base;
    let host_installed = if cross {
        Vdb::at(&roots.host_base).load()?
    } else {
        installed.clone()
    };
    let ctx = ResolverContext {
        config: &config,
        repos: &repos,
        target_installed: &installed,
        host_installed: &host_installed,
        host_root: if cross {
            PathBuf::from("/")
        } else {
            config.root.clone()
        },
        force_targets: false,
    };

    let forced = if changed_use {
        resolver::changed_use_rebuilds(&config, &installed, &repos)?
    } else {
        Vec::new()
    };

    let plan = resolver::solve(&targets, &ctx, &forced)?;
    print!("{}", plan.render());
    std::io::stdout().flush().ok();
    if pretend || plan.is_empty() {
        return Ok(());
    }

    let host_actions: Vec<&Action> = plan
        .actions
        .iter()
        .filter(|a| a.target_root != config.root)
        .collect();
    let host_config = if host_actions.is_empty() {
        None
    } else if std::env::var_os("EPREFIX").is_some() {
        Some(config::load_config(
            &roots.host_base,
            Path::new("/"),
            &roots.host_base,
        )?)
    } else {
        return Err(Error::NotFound {
            atom: format!(
                "build-time dependencies must already be installed on the host: {}",
                host_actions
                    .iter()
                    .map(|a| a.recipe.id.cnv())
                    .collect::<Vec<_>>()
                    .join(", ")
            ),
        });
    };

    std::fs::create_dir_all(&target_base)
        .map_err(|e| Error::io(format!("creating {}", target_base.display()), e))?;
    let _lock = LockFile::acquire(&target_base.join(".pm-lock"))?;
    let _host_lock = match &host_config {
        Some(hc) => Some(LockFile::acquire(&hc.prefixed_root().join(".pm-lock"))?),
        None => None,
    };

    for action in &plan.actions {
        let (action_config, action_vdb) = if action.target_root == config.root {
            (&config, Vdb::at(&target_base))
        } else {
            let hc = host_config.as_ref().expect("host actions imply host config");
            (hc, Vdb::at(&hc.prefixed_root()))
        };
        let use_flags = config::compute_use(action_config, &action.recipe);
        eprintln!(
            ">>> {} {} into {}",
            action.reason,
            action.recipe.id.cnvs(),
            action.target_root.display()
        );
        let bctx = BuildContext::prepare(action_config, &action.recipe, &use_flags)?;
        let world_atom = if action.reason == Reason::Target {
            world_atom_for(action, &targets)
        } else {
            None
        };
        let result = buildengine::run_phases(&action.recipe, &bctx).and_then(|_| {
            buildengine::merge(
                &action.recipe,
                &bctx,
                &action_vdb,
                action.reason.as_str(),
                world_atom.as_ref(),
            )
        });
        bctx.cleanup();
        result?;
    }
    Ok(())
}

fn cmd_unmerge(cli: &Cli, tokens: &[String]) -> Result<(), Error> {
    let roots = resolve_roots(cli)?;
    let config = load_target_config(&roots)?;
    let base = config.prefixed_root();
    let vdb = Vdb::at(&base);
    if tokens.is_empty() {
        return Err(Error::Config("nothing to unmerge".to_string()));
    }
    let _lock = LockFile::acquire(&base.join(".pm-lock"))?;
    for token in tokens {
        let atom = Atom::parse(token)?;
        let installed = vdb.load()?;
        let matches: Vec<_> = installed
            .matching(&atom)
            .iter()
            .map(|e| e.id.clone())
            .collect();
        if matches.is_empty() {
            return Err(Error::NotInstalled { id: atom.to_string() });
        }
        for id in matches {
            eprintln!("<<< {}", id.cnvs());
            buildengine::unmerge(&id, &vdb, &config.root)?;
        }
    }
    Ok(())
}

fn cmd_query(cli: &Cli, cmd: &QueryCmd) -> Result<(), Error> {
    let roots = resolve_roots(cli)?;
    let config = load_target_config(&roots)?;
    let vdb = Vdb::at(&config.prefixed_root());
    match cmd {
        QueryCmd::Installed { root } => {
            let vdb = match root {
                Some(other) => Vdb::at(&config::join_prefix(other, &config.eprefix)),
                None => vdb,
            };
            let installed = vdb.load()?;
            for e in installed.entries() {
                println!(
                    "{} USE=\"{}\"",
                    e.id.cnvs(),
                    e.use_flags.iter().cloned().collect::<Vec<_>>().join(" ")
                );
            }
            Ok(())
        }
        QueryCmd::Owns { path } => {
            let installed = vdb.load()?;
            let rel = path
                .strip_prefix(&config.root)
                .unwrap_or(path)
                .to_string_lossy()
                .trim_start_matches('/')
                .to_string();
            for e in installed.entries() {
                if e.owns(&rel) {
                    println!("{}", e.id.cnv());
                    return Ok(());
                }
            }
            Err(Error::NotFound {
                atom: format!("no installed package owns {}", path.display()),
            })
        }
        QueryCmd::Depgraph { atom } => {
            let repos = RepositorySet::load(&roots.config_root)?;
            let installed = vdb.load()?;
            let atom = Atom::parse(atom)?;
            let mut seen = BTreeSet::new();
            print_depgraph(&atom, "target", 0, &config, &repos, &installed, &mut seen)
        }
    }
}

fn print_depgraph(
    atom: &Atom,
    kind: &str,
    depth: usize,
    config: &Config,
    repos: &RepositorySet,
    installed: &pm_core::InstalledSet,
    seen: &mut BTreeSet<String>,
) -> Result<(), Error> {
    let indent = "  ".repeat(depth);
    let recipe = repos.best_match(atom, &config.accept_keywords())?;
    let mark = if installed.satisfies(atom) { " [installed]" } else { "" };
    println!("{indent}{kind} {atom} -> {}{mark}", recipe.id.cnvs());
    if !seen.insert(recipe.id.cnv()) {
        return Ok(());
    }
    let use_flags = config::compute_use(config, recipe);
    let deps = resolver::expand_dependencies(
        recipe,
        &use_flags,
        installed,
        repos,
        &config.accept_keywords(),
    )?;
    for (kind, atoms) in [
        ("depend", &deps.depend),
        ("rdepend", &deps.rdepend),
        ("pdepend", &deps.pdepend),
    ] {
        for dep in atoms {
            print_depgraph(dep, kind, depth + 1, config, repos, installed, seen)?;
        }
    }
    Ok(())
}

fn cmd_select(cli: &Cli, cmd: &SelectCmd) -> Result<(), Error> {
    let roots = resolve_roots(cli)?;
    let config = load_target_config(&roots)?;
    let base = config.prefixed_root();
    let vdb = Vdb::at(&base);
    match cmd {
        SelectCmd::List { module } => {
            let def = select::find_module(&roots.config_root, module)?;
            let listing = select::list(&def, &vdb)?;
            for p in &listing.providers {
                let marker = if listing.active.as_ref() == Some(p) { " *" } else { "" };
                println!("{}{marker}", p.cnvs());
            }
            Ok(())
        }
        SelectCmd::Set { module, provider } => {
            let def = select::find_module(&roots.config_root, module)?;
            let atom = Atom::parse(provider)?;
            let installed = vdb.load()?;
            let matches = installed.matching(&atom);
            let provider_id = match matches.as_slice() {
                [] => return Err(Error::NotInstalled { id: atom.to_string() }),
                [one] => one.id.clone(),
                many => {
                    return Err(Error::AmbiguousName {
                        name: atom.to_string(),
                        candidates: many.iter().map(|e| e.id.cnvs()).collect(),
                    })
                }
            };
            let _lock = LockFile::acquire(&base.join(".pm-lock"))?;
            select::set(&def, &provider_id, &vdb, &config.eprefix)?;
            eprintln!("{} -> {}", def.module, provider_id.cnvs());
            Ok(())
        }
    }
}

fn cmd_overlay(cli: &Cli, cmd: &OverlayCmd) -> Result<(), Error> {
    let roots = resolve_roots(cli)?;
    match cmd {
        OverlayCmd::Add {
            name,
            path,
            priority,
        } => repository::add_overlay(&roots.config_root, name, path, *priority),
        OverlayCmd::List => {
            for r in repository::load_repositories(&roots.config_root)? {
                println!("{} = {} {}", r.name, r.path.display(), r.priority);
            }
            Ok(())
        }
    }
}

fn confirm_stage(stage: u8) -> Result<bool, Error> {
    eprint!("Proceed with stage {stage}? [y/N] ");
    std::io::stderr().flush().ok();
    let mut answer = String::new();
    std::io::stdin()
        .read_line(&mut answer)
        .map_err(|e| Error::io("reading stdin".to_string(), e))?;
    Ok(answer.trim().eq_ignore_ascii_case("y"))
}

fn cmd_bootstrap(cli: &Cli, libc: bool, interactive: bool) -> Result<(), Error> {
    let prefix = cli
        .prefix
        .clone()
        .ok_or_else(|| Error::Config("bootstrap requires --prefix".to_string()))?;
    let ambient = std::env::var_os("EPREFIX").map(PathBuf::from);
    let config_root = cli
        .config_root
        .clone()
        .or(ambient)
        .ok_or_else(|| {
            Error::Config("bootstrap requires --config-root (or an ambient prefix)".to_string())
        })?;

    let host_config = config::load_config(&config_root, Path::new("/"), Path::new("/"))?;
    let repos = RepositorySet::load(&config_root)?;
    let plan: BootstrapPlan =
        bootstrap::plan_bootstrap(&prefix, libc, &bootstrap::default_system_set())?;

    for stage in &plan.stages {
        eprintln!(
            "stage {}: {}",
            stage.number,
            stage
                .packages
                .iter()
                .map(|a| a.to_string())
                .collect::<Vec<_>>()
                .join(" ")
        );
    }

    if interactive {
        for stage in 1..=3u8 {
            if !confirm_stage(stage)? {
                return Err(Error::Bootstrap(format!("stage {stage} declined")));
            }
            let report = bootstrap::execute_bootstrap_stages(&plan, &repos, &host_config, stage)?;
            for s in report.stages.iter().filter(|s| !s.skipped) {
                eprintln!("stage {} merged: {}", s.number, s.merged.join(", "));
            }
        }
    } else {
        let report = bootstrap::execute_bootstrap(&plan, &repos, &host_config)?;
        for s in &report.stages {
            if s.skipped {
                eprintln!("stage {}: already complete, skipped", s.number);
            } else {
                eprintln!("stage {} merged: {}", s.number, s.merged.join(", "));
            }
        }
    }
    println!("{}", prefix.join("startprefix").display());
    Ok(())
}
