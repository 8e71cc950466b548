//! Dependency resolution: expands conditional dependencies, walks the
//! three dependency kinds, detects slot conflicts and cycles, and emits
//! an ordered build plan.
//!
//! Ordering contract: a DEPEND provider appears strictly before its
//! dependent (or is already installed), an RDEPEND provider no later, and
//! a PDEPEND provider anywhere in the plan; PDEPEND is how cycles are
//! broken. The resolver is greedy: no backtracking, errors are explicit,
//! and all tie-breaking is lexicographic so identical inputs give
//! byte-identical plans.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;
use std::path::PathBuf;

use crate::atoms::{Atom, Operator, PackageId};
use crate::config::{self, Config, EffectiveUse};
use crate::deps::DepExpr;
use crate::error::{Error, Result};
use crate::repository::{DepKind, Recipe, RepositorySet};
use crate::vdb::{InstalledSet, BUILD_ENV_KEYS};

/// Why an action is in the plan.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reason {
    Target,
    ChangedUseRebuild,
    Depend,
    Rdepend,
    Pdepend,
}

impl Reason {
    pub fn as_str(self) -> &'static str {
        match self {
            Reason::Target => "target",
            Reason::ChangedUseRebuild => "changed-use-rebuild",
            Reason::Depend => "depend",
            Reason::Rdepend => "rdepend",
            Reason::Pdepend => "pdepend",
        }
    }

    fn rank(self) -> u8 {
        match self {
            Reason::Target => 4,
            Reason::ChangedUseRebuild => 3,
            Reason::Depend => 2,
            Reason::Rdepend => 1,
            Reason::Pdepend => 0,
        }
    }
}

impl fmt::Display for Reason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone)]
pub struct Action {
    pub recipe: Recipe,
    pub use_flags: EffectiveUse,
    pub reason: Reason,
    pub target_root: PathBuf,
}

#[derive(Debug, Clone, Default)]
pub struct BuildPlan {
    pub actions: Vec<Action>,
}

impl BuildPlan {
    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    /// Stable text rendering, one line per action:
    /// `<reason> <category>/<name>-<version>:<slot> USE="<flags>" -> <root>`
    pub fn render(&self) -> String {
        let mut out = String::new();
        for a in &self.actions {
            out.push_str(&format!(
                "{} {} USE=\"{}\" -> {}\n",
                a.reason,
                a.recipe.id.cnvs(),
                a.use_flags.render(),
                a.target_root.display()
            ));
        }
        out
    }
}

/// Everything `solve` consults. `host_installed`/`host_root` equal the
/// target ones for native builds; when they differ (cross builds) DEPEND
/// atoms resolve against the host and unmet ones are planned into the
/// host root.
pub struct ResolverContext<'a> {
    pub config: &'a Config,
    pub repos: &'a RepositorySet,
    pub target_installed: &'a InstalledSet,
    pub host_installed: &'a InstalledSet,
    pub host_root: PathBuf,
    /// Plan explicit targets even when already satisfied (bootstrap
    /// rebuilds, changed-use rebuilds).
    pub force_targets: bool,
}

impl<'a> ResolverContext<'a> {
    pub fn native(
        config: &'a Config,
        repos: &'a RepositorySet,
        installed: &'a InstalledSet,
    ) -> ResolverContext<'a> {
        ResolverContext {
            config,
            repos,
            target_installed: installed,
            host_installed: installed,
            host_root: config.root.clone(),
            force_targets: false,
        }
    }

    fn is_cross(&self) -> bool {
        self.host_root != self.config.root
    }

    fn installed_for(&self, root: RootKind) -> &InstalledSet {
        match root {
            RootKind::Target => self.target_installed,
            RootKind::Host => self.host_installed,
        }
    }

    fn root_path(&self, root: RootKind) -> PathBuf {
        match root {
            RootKind::Target => self.config.root.clone(),
            RootKind::Host => self.host_root.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum RootKind {
    Target,
    Host,
}

/// The expanded, flattened dependency atoms of one recipe.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ExpandedDeps {
    pub depend: Vec<Atom>,
    pub rdepend: Vec<Atom>,
    pub pdepend: Vec<Atom>,
}

impl ExpandedDeps {
    pub fn of_kind(&self, kind: DepKind) -> &[Atom] {
        match kind {
            DepKind::Depend => &self.depend,
            DepKind::Rdepend => &self.rdepend,
            DepKind::Pdepend => &self.pdepend,
        }
    }
}

/// Resolves conditionals against the effective USE and collapses any-of
/// groups: an alternative already satisfied by `installed` wins, else the
/// first listed satisfiable one. `repos` decides satisfiability of
/// uninstalled alternatives.
pub fn expand_dependencies(
    recipe: &Recipe,
    use_flags: &EffectiveUse,
    installed: &InstalledSet,
    repos: &RepositorySet,
    accept: &BTreeSet<String>,
) -> Result<ExpandedDeps> {
    let mut out = ExpandedDeps::default();
    for kind in DepKind::ALL {
        let exprs = DepExpr::parse(recipe.dep_string(kind))?;
        let atoms = match kind {
            DepKind::Depend => &mut out.depend,
            DepKind::Rdepend => &mut out.rdepend,
            DepKind::Pdepend => &mut out.pdepend,
        };
        expand_into(&exprs, recipe, use_flags, installed, repos, accept, atoms)?;
    }
    Ok(out)
}

fn expand_into(
    exprs: &[DepExpr],
    recipe: &Recipe,
    use_flags: &EffectiveUse,
    installed: &InstalledSet,
    repos: &RepositorySet,
    accept: &BTreeSet<String>,
    out: &mut Vec<Atom>,
) -> Result<()> {
    for expr in exprs {
        match expr {
            DepExpr::Leaf(atom) => out.push(atom.clone()),
            DepExpr::AllOf(children) => {
                expand_into(children, recipe, use_flags, installed, repos, accept, out)?
            }
            DepExpr::Conditional { flag, children } => {
                if use_flags.enabled.contains(flag) {
                    expand_into(children, recipe, use_flags, installed, repos, accept, out)?;
                }
            }
            DepExpr::AnyOf(children) => {
                let chosen = choose_alternative(children, installed, repos, accept);
                match chosen {
                    Some(alt) => expand_into(
                        std::slice::from_ref(alt),
                        recipe,
                        use_flags,
                        installed,
                        repos,
                        accept,
                        out,
                    )?,
                    None => {
                        return Err(Error::AnyOfUnsatisfiable {
                            group: DepExpr::render_group(children),
                            requester: recipe.id.cnv(),
                        })
                    }
                }
            }
        }
    }
    Ok(())
}

/// Installed alternative first, else the first listed satisfiable one.
fn choose_alternative<'e>(
    alternatives: &'e [DepExpr],
    installed: &InstalledSet,
    repos: &RepositorySet,
    accept: &BTreeSet<String>,
) -> Option<&'e DepExpr> {
    let leaf_atoms = |alt: &DepExpr| -> Vec<Atom> {
        let mut atoms = Vec::new();
        DepExpr::leaves(std::slice::from_ref(alt), &mut atoms);
        atoms
    };
    let all_installed = |alt: &DepExpr| -> bool {
        let atoms = leaf_atoms(alt);
        !atoms.is_empty() && atoms.iter().all(|a| installed.satisfies(a))
    };
    let satisfiable = |alt: &DepExpr| -> bool {
        leaf_atoms(alt).iter().all(|a| {
            installed.satisfies(a) || repos.best_match(a, accept).is_ok()
        })
    };
    alternatives
        .iter()
        .find(|alt| all_installed(alt))
        .or_else(|| alternatives.iter().find(|alt| satisfiable(alt)))
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
struct NodeKey {
    root: RootKind,
    category: String,
    name: String,
    slot: String,
}

struct Node {
    recipe: Recipe,
    use_flags: EffectiveUse,
    reason: Reason,
    root: RootKind,
}

struct Solver<'a> {
    ctx: &'a ResolverContext<'a>,
    nodes: BTreeMap<NodeKey, Node>,
    /// DEPEND/RDEPEND ordering edges: provider -> dependent.
    edges: BTreeSet<(NodeKey, NodeKey)>,
}

/// Computes the build plan for `targets` plus the transitive closure of
/// their unmet dependencies. `forced` ids (changed-use rebuilds) are
/// always planned.
pub fn solve(targets: &[Atom], ctx: &ResolverContext, forced: &[PackageId]) -> Result<BuildPlan> {
    let mut solver = Solver {
        ctx,
        nodes: BTreeMap::new(),
        edges: BTreeSet::new(),
    };

    for atom in targets {
        solver.plan_atom(atom, Reason::Target, RootKind::Target, ctx.force_targets)?;
    }
    for id in forced {
        let mut atom = Atom {
            op: Operator::Equal,
            category: Some(id.category.clone()),
            name: id.name.clone(),
            version: Some(id.version.clone()),
            slot: None,
            use_deps: Vec::new(),
        };
        // The slot travels along so slot-keyed nodes stay precise.
        atom.slot = Some(id.slot.clone());
        solver.plan_atom(&atom, Reason::ChangedUseRebuild, RootKind::Target, true)?;
    }

    solver.order()
}

impl<'a> Solver<'a> {
    /// Plans one atom into `root`, recursing through its dependencies.
    /// Returns the node key when an action was (or already is) planned,
    /// None when the atom is satisfied by installed packages.
    fn plan_atom(
        &mut self,
        atom: &Atom,
        reason: Reason,
        root: RootKind,
        force: bool,
    ) -> Result<Option<NodeKey>> {
        let installed = self.ctx.installed_for(root);

        if !force {
            if let Some(existing) = self.find_planned(atom, root) {
                self.bump_reason(&existing, reason);
                return Ok(Some(existing));
            }
            let satisfied = match reason {
                // Explicit targets additionally require the recorded USE to
                // match the currently computed one.
                Reason::Target => installed.matching(atom).iter().any(|entry| {
                    match self.recipe_for_installed(entry) {
                        Some(recipe) => {
                            config::compute_use(self.ctx.config, recipe).enabled
                                == entry.use_flags
                        }
                        None => true,
                    }
                }),
                _ => installed.satisfies(atom),
            };
            if satisfied {
                return Ok(None);
            }
        }

        let accept = self.ctx.config.accept_keywords();
        let recipe = self.ctx.repos.best_match(atom, &accept)?.clone();
        let use_flags = config::compute_use(self.ctx.config, &recipe);
        if !atom
            .use_deps
            .iter()
            .all(|d| use_flags.enabled.contains(&d.flag) == d.enabled)
        {
            return Err(Error::NotFound {
                atom: format!(
                    "{atom} (candidate {} has USE=\"{}\")",
                    recipe.id.cnv(),
                    use_flags.render()
                ),
            });
        }

        let key = NodeKey {
            root,
            category: recipe.id.category.clone(),
            name: recipe.id.name.clone(),
            slot: recipe.slot.clone(),
        };
        if let Some(existing) = self.nodes.get(&key) {
            if existing.recipe.id.version != recipe.id.version {
                return Err(Error::SlotConflict {
                    category: key.category,
                    name: key.name,
                    slot: key.slot,
                    versions: vec![
                        existing.recipe.id.version.to_string(),
                        recipe.id.version.to_string(),
                    ],
                });
            }
            self.bump_reason(&key, reason);
            return Ok(Some(key));
        }

        self.nodes.insert(
            key.clone(),
            Node {
                recipe: recipe.clone(),
                use_flags: use_flags.clone(),
                reason,
                root,
            },
        );

        let deps = expand_dependencies(
            &recipe,
            &use_flags,
            installed,
            self.ctx.repos,
            &accept,
        )?;
        for kind in DepKind::ALL {
            let (dep_reason, dep_root) = match kind {
                DepKind::Depend => (
                    Reason::Depend,
                    if root == RootKind::Target && self.ctx.is_cross() {
                        RootKind::Host
                    } else {
                        root
                    },
                ),
                DepKind::Rdepend => (Reason::Rdepend, root),
                DepKind::Pdepend => (Reason::Pdepend, root),
            };
            for dep_atom in deps.of_kind(kind) {
                // A package trivially provides its own runtime/post deps.
                if kind != DepKind::Depend
                    && dep_root == root
                    && dep_atom.matches(&recipe.id, &use_flags.enabled)
                {
                    continue;
                }
                let dep_key = self.plan_atom(dep_atom, dep_reason, dep_root, false)?;
                if kind != DepKind::Pdepend {
                    if let Some(dep_key) = dep_key {
                        self.edges.insert((dep_key, key.clone()));
                    }
                }
            }
        }
        Ok(Some(key))
    }

    fn find_planned(&self, atom: &Atom, root: RootKind) -> Option<NodeKey> {
        self.nodes
            .iter()
            .find(|(k, n)| k.root == root && atom.matches(&n.recipe.id, &n.use_flags.enabled))
            .map(|(k, _)| k.clone())
    }

    fn bump_reason(&mut self, key: &NodeKey, reason: Reason) {
        if let Some(node) = self.nodes.get_mut(key) {
            if reason.rank() > node.reason.rank() {
                node.reason = reason;
            }
        }
    }

    fn recipe_for_installed(&self, entry: &crate::vdb::VdbEntry) -> Option<&Recipe> {
        self.ctx.repos.recipes().iter().find(|r| {
            r.id.category == entry.id.category
                && r.id.name == entry.id.name
                && r.id.version == entry.id.version
        })
    }

    /// Kahn's algorithm over DEPEND/RDEPEND edges with lexicographic
    /// tie-breaking; remaining nodes mean a cycle not broken by PDEPEND.
    fn order(self) -> Result<BuildPlan> {
        let keys: Vec<NodeKey> = self.nodes.keys().cloned().collect();
        let mut indegree: BTreeMap<&NodeKey, usize> = keys.iter().map(|k| (k, 0)).collect();
        for (_, to) in &self.edges {
            *indegree.get_mut(to).expect("edge endpoints are nodes") += 1;
        }

        let sort_key = |k: &NodeKey| {
            let n = &self.nodes[k];
            (
                n.recipe.id.category.clone(),
                n.recipe.id.name.clone(),
                n.recipe.id.version.to_string(),
                k.root,
            )
        };

        let mut ready: Vec<&NodeKey> = indegree
            .iter()
            .filter(|(_, d)| **d == 0)
            .map(|(k, _)| *k)
            .collect();
        ready.sort_by_key(|k| sort_key(k));
        let mut queue: VecDeque<&NodeKey> = ready.into();

        let mut order: Vec<NodeKey> = Vec::new();
        while let Some(next) = queue.pop_front() {
            order.push(next.clone());
            let mut unlocked: Vec<&NodeKey> = Vec::new();
            for (from, to) in &self.edges {
                if from == next {
                    let d = indegree.get_mut(to).expect("edge endpoints are nodes");
                    *d -= 1;
                    if *d == 0 {
                        unlocked.push(to);
                    }
                }
            }
            unlocked.sort_by_key(|k| sort_key(k));
            // Keep the global order lexicographic among simultaneously
            // ready nodes: merge the unlocked set into the queue.
            let mut merged: Vec<&NodeKey> = queue.drain(..).chain(unlocked).collect();
            merged.sort_by_key(|k| sort_key(k));
            queue = merged.into();
        }

        if order.len() != self.nodes.len() {
            let remaining: BTreeSet<&NodeKey> = self
                .nodes
                .keys()
                .filter(|k| !order.contains(k))
                .collect();
            return Err(Error::DependencyCycle {
                cycle: self.extract_cycle(&remaining),
            });
        }

        let mut actions = Vec::new();
        for key in order {
            let node = &self.nodes[&key];
            actions.push(Action {
                recipe: node.recipe.clone(),
                use_flags: node.use_flags.clone(),
                reason: node.reason,
                target_root: self.ctx.root_path(node.root),
            });
        }
        Ok(BuildPlan { actions })
    }

    fn extract_cycle(&self, remaining: &BTreeSet<&NodeKey>) -> Vec<String> {
        // Walk successors until a key repeats; remaining nodes all sit on
        // or feed a cycle, so this terminates.
        let start = remaining.iter().next().expect("cycle implies remainder");
        let mut seen: Vec<&NodeKey> = vec![start];
        let mut current = *start;
        loop {
            let next = self
                .edges
                .iter()
                .find(|(from, to)| from == current && remaining.contains(to))
                .map(|(_, to)| to);
            let Some(next) = next else { break };
            if let Some(pos) = seen.iter().position(|k| *k == next) {
                seen = seen[pos..].to_vec();
                break;
            }
            seen.push(next);
            current = next;
        }
        let mut cycle: Vec<String> = seen
            .iter()
            .map(|k| self.nodes[*k].recipe.id.cnv())
            .collect();
        if let Some(first) = cycle.first().cloned() {
            cycle.push(first);
        }
        cycle
    }
}

/// A same-slot clash between two distinct versions required together.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SlotConflictInfo {
    pub category: String,
    pub name: String,
    pub slot: String,
    pub versions: Vec<String>,
}

/// Reports plan-internal slot conflicts: two distinct versions of one
/// (category, name, slot) scheduled into the same root. A plan action
/// replacing an installed same-slot version is an upgrade, not a
/// conflict.
pub fn check_slot_conflicts(plan: &BuildPlan, _installed: &InstalledSet) -> Vec<SlotConflictInfo> {
    let mut by_slot: BTreeMap<(String, String, String, String), BTreeSet<String>> =
        BTreeMap::new();
    for a in &plan.actions {
        by_slot
            .entry((
                a.target_root.display().to_string(),
                a.recipe.id.category.clone(),
                a.recipe.id.name.clone(),
                a.recipe.slot.clone(),
            ))
            .or_default()
            .insert(a.recipe.id.version.to_string());
    }
    by_slot
        .into_iter()
        .filter(|(_, versions)| versions.len() > 1)
        .map(|((_, category, name, slot), versions)| SlotConflictInfo {
            category,
            name,
            slot,
            versions: versions.into_iter().collect(),
        })
        .collect()
}

/// Installed packages whose recorded USE or recorded build-environment
/// snapshot no longer matches what the current configuration would
/// produce. Dependents are not included unless they changed themselves.
pub fn changed_use_rebuilds(
    config: &Config,
    installed: &InstalledSet,
    repos: &RepositorySet,
) -> Result<Vec<PackageId>> {
    let mut out = Vec::new();
    for entry in installed.entries() {
        let recipe = repos.recipes().iter().find(|r| {
            r.id.category == entry.id.category
                && r.id.name == entry.id.name
                && r.id.version == entry.id.version
        });
        let Some(recipe) = recipe else {
            log::warn!(
                "{}: recipe vanished from the tree, skipping rebuild check",
                entry.id.cnv()
            );
            continue;
        };

        let use_now = config::compute_use(config, recipe);
        if use_now.enabled != entry.use_flags {
            out.push(entry.id.clone());
            continue;
        }

        let env_now = config::build_environment(config, recipe)?;
        let differs = BUILD_ENV_KEYS.iter().any(|key| {
            let now = env_now.get(*key).map(String::as_str).unwrap_or("");
            let recorded = entry.build_env.get(*key).map(String::as_str).unwrap_or("");
            now != recorded
        });
        if differs {
            out.push(entry.id.clone());
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::repository::Phase;
    use std::collections::BTreeMap as Map;
    use std::path::Path;

    fn recipe(cnv: &str, slot: &str, deps: [(&str, &str); 3]) -> Recipe {
        let (cat, rest) = cnv.split_once('/').unwrap();
        let (name, ver) = crate::vdb::split_name_version(rest).unwrap();
        let mut map = BTreeMap::new();
        for (k, v) in deps {
            map.insert(k, v.to_string());
        }
        Recipe {
            id: PackageId {
                category: cat.into(),
                name,
                version: ver,
                slot: slot.into(),
                repository: "main".into(),
            },
            description: String::new(),
            slot: slot.into(),
            iuse: ["ncurses", "readline", "tk"]
                .iter()
                .map(|s| s.to_string())
                .collect(),
            depend: map.get("DEPEND").cloned().unwrap_or_default(),
            rdepend: map.get("RDEPEND").cloned().unwrap_or_default(),
            pdepend: map.get("PDEPEND").cloned().unwrap_or_default(),
            keywords: ["~test".to_string()].into(),
            src: Vec::new(),
            phases: Map::<Phase, Vec<String>>::new(),
            bundled_patches: Vec::new(),
            dir: PathBuf::new(),
        }
    }

    fn test_config() -> Config {
        let mut c = Config::new(Path::new("/cfg"), Path::new("/rootfs"), Path::new("/"));
        c.vars
            .insert("ACCEPT_KEYWORDS".to_string(), "~test".to_string());
        c
    }

    fn repos(recipes: Vec<Recipe>) -> RepositorySet {
        RepositorySet::in_memory(vec![("main".to_string(), 0)], recipes)
    }

    fn atom(s: &str) -> Atom {
        Atom::parse(s).unwrap()
    }

    fn installed_entry(recipe: &Recipe, use_flags: &[&str]) -> crate::vdb::VdbEntry {
        crate::vdb::VdbEntry {
            id: recipe.id.clone(),
            slot: recipe.slot.clone(),
            use_flags: use_flags.iter().map(|s| s.to_string()).collect(),
            chost: "x86_64-pc-linux-gnu".into(),
            build_env: BUILD_ENV_KEYS
                .iter()
                .map(|k| (k.to_string(), String::new()))
                .collect(),
            contents: Vec::new(),
            depend: recipe.depend.clone(),
            rdepend: recipe.rdepend.clone(),
            pdepend: recipe.pdepend.clone(),
            reason: "target".into(),
        }
    }

    #[test]
    fn python_closure_ordering() {
        let tree = vec![
            recipe(
                "dev-lang/python-2.7.12",
                "2.7",
                [
                    ("DEPEND", ""),
                    (
                        "RDEPEND",
                        "dev-libs/libffi ncurses? ( sys-libs/ncurses ) readline? ( sys-libs/readline ) sys-libs/zlib",
                    ),
                    ("PDEPEND", ""),
                ],
            ),
            recipe("dev-libs/libffi-3.2.1", "0", [("DEPEND", ""), ("RDEPEND", ""), ("PDEPEND", "")]),
            recipe("sys-libs/ncurses-6.0", "0", [("DEPEND", ""), ("RDEPEND", ""), ("PDEPEND", "")]),
            recipe(
                "sys-libs/readline-6.3",
                "0",
                [("DEPEND", ""), ("RDEPEND", "sys-libs/ncurses"), ("PDEPEND", "")],
            ),
            recipe("sys-libs/zlib-1.2.8", "0", [("DEPEND", ""), ("RDEPEND", ""), ("PDEPEND", "")]),
        ];
        let mut config = test_config();
        config.vars.insert("USE".to_string(), "ncurses readline".to_string());
        let repos = repos(tree);
        let installed = InstalledSet::empty();
        let ctx = ResolverContext::native(&config, &repos, &installed);

        let plan = solve(&[atom("python:2.7")], &ctx, &[]).unwrap();
        let names: Vec<String> = plan.actions.iter().map(|a| a.recipe.id.cnv()).collect();
        assert_eq!(
            names,
            vec![
                "dev-libs/libffi-3.2.1",
                "sys-libs/ncurses-6.0",
                "sys-libs/readline-6.3",
                "sys-libs/zlib-1.2.8",
                "dev-lang/python-2.7.12",
            ]
        );
        assert_eq!(plan.actions[4].reason, Reason::Target);
        assert_eq!(plan.actions[0].reason, Reason::Rdepend);

        // Determinism: identical inputs, byte-identical plans.
        let again = solve(&[atom("python:2.7")], &ctx, &[]).unwrap();
        assert_eq!(plan.render(), again.render());
    }

    #[test]
    fn conditional_disabled_drops_dependency() {
        let tree = vec![
            recipe(
                "dev-lang/python-2.7.12",
                "2.7",
                [("DEPEND", ""), ("RDEPEND", "ncurses? ( sys-libs/ncurses )"), ("PDEPEND", "")],
            ),
            recipe("sys-libs/ncurses-6.0", "0", [("DEPEND", ""), ("RDEPEND", ""), ("PDEPEND", "")]),
        ];
        let config = test_config(); // USE empty
        let repos = repos(tree);
        let installed = InstalledSet::empty();
        let ctx = ResolverContext::native(&config, &repos, &installed);
        let plan = solve(&[atom("python:2.7")], &ctx, &[]).unwrap();
        assert_eq!(plan.actions.len(), 1);
    }

    #[test]
    fn satisfied_target_gives_empty_plan() {
        let py = recipe("dev-lang/python-2.7.12", "2.7", [("DEPEND", ""), ("RDEPEND", ""), ("PDEPEND", "")]);
        let config = test_config();
        let repos = repos(vec![py.clone()]);
        let installed = InstalledSet::new(vec![installed_entry(&py, &[])]);
        let ctx = ResolverContext::native(&config, &repos, &installed);
        let plan = solve(&[atom("python:2.7")], &ctx, &[]).unwrap();
        assert!(plan.is_empty());
    }

    #[test]
    fn installed_target_with_stale_use_rebuilds() {
        let py = recipe("dev-lang/python-2.7.12", "2.7", [("DEPEND", ""), ("RDEPEND", ""), ("PDEPEND", "")]);
        let mut config = test_config();
        config.vars.insert("USE".to_string(), "ncurses".to_string());
        let repos = repos(vec![py.clone()]);
        let installed = InstalledSet::new(vec![installed_entry(&py, &[])]);
        let ctx = ResolverContext::native(&config, &repos, &installed);
        let plan = solve(&[atom("python:2.7")], &ctx, &[]).unwrap();
        assert_eq!(plan.actions.len(), 1);
    }

    #[test]
    fn depend_cycle_errors_pdepend_breaks_it() {
        let cyc = vec![
            recipe("app-misc/a-1.0", "0", [("DEPEND", "app-misc/b"), ("RDEPEND", ""), ("PDEPEND", "")]),
            recipe("app-misc/b-1.0", "0", [("DEPEND", "app-misc/a"), ("RDEPEND", ""), ("PDEPEND", "")]),
        ];
        let config = test_config();
        let set = repos(cyc);
        let installed = InstalledSet::empty();
        let ctx = ResolverContext::native(&config, &set, &installed);
        match solve(&[atom("app-misc/a")], &ctx, &[]) {
            Err(Error::DependencyCycle { cycle }) => {
                assert!(cycle.len() >= 3);
                assert_eq!(cycle.first(), cycle.last());
            }
            other => panic!("expected cycle error, got {other:?}"),
        }

        let broken = vec![
            recipe("app-misc/a-1.0", "0", [("DEPEND", "app-misc/b"), ("RDEPEND", ""), ("PDEPEND", "")]),
            recipe("app-misc/b-1.0", "0", [("DEPEND", ""), ("RDEPEND", ""), ("PDEPEND", "app-misc/a")]),
        ];
        let set = repos(broken);
        let ctx = ResolverContext::native(&config, &set, &installed);
        let plan = solve(&[atom("app-misc/b")], &ctx, &[]).unwrap();
        let names: Vec<String> = plan.actions.iter().map(|a| a.recipe.id.cnv()).collect();
        assert_eq!(names, vec!["app-misc/b-1.0", "app-misc/a-1.0"]);
        assert_eq!(plan.actions[1].reason, Reason::Pdepend);
    }

    #[test]
    fn any_of_prefers_installed_then_first_listed() {
        let a = recipe("app-misc/a-1.0", "0", [("DEPEND", ""), ("RDEPEND", ""), ("PDEPEND", "")]);
        let b = recipe("app-misc/b-1.0", "0", [("DEPEND", ""), ("RDEPEND", ""), ("PDEPEND", "")]);
        let top = recipe(
            "app-misc/top-1.0",
            "0",
            [("DEPEND", "|| ( app-misc/a app-misc/b )"), ("RDEPEND", ""), ("PDEPEND", "")],
        );
        let config = test_config();
        let set = repos(vec![a.clone(), b.clone(), top.clone()]);

        // Nothing installed: first listed.
        let empty = InstalledSet::empty();
        let use_flags = config::compute_use(&config, &top);
        let deps =
            expand_dependencies(&top, &use_flags, &empty, &set, &config.accept_keywords()).unwrap();
        assert_eq!(deps.depend, vec![atom("app-misc/a")]);

        // Second alternative installed: it wins.
        let with_b = InstalledSet::new(vec![installed_entry(&b, &[])]);
        let deps =
            expand_dependencies(&top, &use_flags, &with_b, &set, &config.accept_keywords()).unwrap();
        assert_eq!(deps.depend, vec![atom("app-misc/b")]);

        // No satisfiable alternative: error naming the group.
        let hopeless = recipe(
            "app-misc/top-2.0",
            "0",
            [("DEPEND", "|| ( no-such/x no-such/y )"), ("RDEPEND", ""), ("PDEPEND", "")],
        );
        match expand_dependencies(&hopeless, &use_flags, &empty, &set, &config.accept_keywords()) {
            Err(Error::AnyOfUnsatisfiable { group, .. }) => {
                assert_eq!(group, "|| ( no-such/x no-such/y )")
            }
            other => panic!("expected any-of error, got {other:?}"),
        }
    }

    #[test]
    fn in_plan_slot_conflict() {
        let tree = vec![
            recipe("dev-libs/ssl-1.0", "0", [("DEPEND", ""), ("RDEPEND", ""), ("PDEPEND", "")]),
            recipe("dev-libs/ssl-1.1", "0", [("DEPEND", ""), ("RDEPEND", ""), ("PDEPEND", "")]),
            recipe("app-misc/old-1.0", "0", [("DEPEND", "=dev-libs/ssl-1.0"), ("RDEPEND", ""), ("PDEPEND", "")]),
            recipe("app-misc/new-1.0", "0", [("DEPEND", ">=dev-libs/ssl-1.1"), ("RDEPEND", ""), ("PDEPEND", "")]),
        ];
        let config = test_config();
        let set = repos(tree);
        let installed = InstalledSet::empty();
        let ctx = ResolverContext::native(&config, &set, &installed);
        match solve(&[atom("app-misc/old"), atom("app-misc/new")], &ctx, &[]) {
            Err(Error::SlotConflict { versions, .. }) => {
                assert_eq!(versions, vec!["1.0".to_string(), "1.1".to_string()]);
            }
            other => panic!("expected slot conflict, got {other:?}"),
        }
    }

    #[test]
    fn distinct_slots_coexist_and_upgrade_is_not_conflict() {
        let py27 = recipe("dev-lang/python-2.7.12", "2.7", [("DEPEND", ""), ("RDEPEND", ""), ("PDEPEND", "")]);
        let py3512 = recipe("dev-lang/python-3.5.2", "3.5", [("DEPEND", ""), ("RDEPEND", ""), ("PDEPEND", "")]);
        let py2714 = recipe("dev-lang/python-2.7.14", "2.7", [("DEPEND", ""), ("RDEPEND", ""), ("PDEPEND", "")]);

        let config = test_config();
        let set = repos(vec![py27.clone(), py3512, py2714]);
        let installed = InstalledSet::new(vec![installed_entry(&py27, &[])]);
        let ctx = ResolverContext::native(&config, &set, &installed);

        // Distinct slots: no conflict.
        let plan = solve(&[atom("python:3.5")], &ctx, &[]).unwrap();
        assert_eq!(check_slot_conflicts(&plan, &installed), Vec::new());

        // Same-slot upgrade: plan replaces installed, still no conflict.
        let plan = solve(&[atom("=dev-lang/python-2.7.14")], &ctx, &[]).unwrap();
        assert_eq!(plan.actions.len(), 1);
        assert_eq!(check_slot_conflicts(&plan, &installed), Vec::new());

        // A plan carrying two same-slot versions is a conflict.
        let fake = BuildPlan {
            actions: plan
                .actions
                .iter()
                .cloned()
                .chain(solve(&[atom("=dev-lang/python-2.7.12")], &ctx, &[]).map(|p| p.actions).unwrap_or_default())
                .collect(),
        };
        // Force both versions into one artificial plan.
        let mut both = fake;
        if both.actions.len() < 2 {
            let mut ctx2 = ResolverContext::native(&config, &set, &installed);
            ctx2.force_targets = true;
            both.actions
                .extend(solve(&[atom("=dev-lang/python-2.7.12")], &ctx2, &[]).unwrap().actions);
        }
        let conflicts = check_slot_conflicts(&both, &installed);
        assert_eq!(conflicts.len(), 1);
        assert_eq!(conflicts[0].slot, "2.7");
    }

    #[test]
    fn changed_use_is_minimal_and_monotone() {
        let mk = |cnv: &str| recipe(cnv, "0", [("DEPEND", ""), ("RDEPEND", ""), ("PDEPEND", "")]);
        let a = mk("app-misc/a-1.0");
        let b = mk("app-misc/b-1.0");
        let c = mk("app-misc/c-1.0");
        let set = repos(vec![a.clone(), b.clone(), c.clone()]);
        let installed = InstalledSet::new(vec![
            installed_entry(&a, &[]),
            installed_entry(&b, &[]),
            installed_entry(&c, &[]),
        ]);

        // No change: empty.
        let config = test_config();
        assert!(changed_use_rebuilds(&config, &installed, &set).unwrap().is_empty());

        // Package rule flips a flag on exactly one package.
        let mut config1 = test_config();
        config1
            .package_use_rules
            .push((atom("app-misc/a"), vec!["ncurses".to_string()]));
        let r1 = changed_use_rebuilds(&config1, &installed, &set).unwrap();
        assert_eq!(r1.len(), 1);
        assert_eq!(r1[0].cnv(), "app-misc/a-1.0");

        // Monotone: enlarging the affected set never shrinks the result.
        let mut config2 = test_config();
        config2
            .package_use_rules
            .push((atom("app-misc/a"), vec!["ncurses".to_string()]));
        config2
            .package_use_rules
            .push((atom("app-misc/b"), vec!["ncurses".to_string()]));
        let r2 = changed_use_rebuilds(&config2, &installed, &set).unwrap();
        assert_eq!(r2.len(), 2);
        assert!(r1.iter().all(|id| r2.contains(id)));
    }

    #[test]
    fn global_flag_flip_rebuilds_only_packages_declaring_it() {
        // Only `a` declares the flipped flag in IUSE, so only `a` rebuilds;
        // its dependent `b` stays put.
        let mut a = recipe("app-misc/a-1.0", "0", [("DEPEND", ""), ("RDEPEND", ""), ("PDEPEND", "")]);
        a.iuse = ["threads".to_string()].into();
        let b = recipe("app-misc/b-1.0", "0", [("DEPEND", ""), ("RDEPEND", "app-misc/a"), ("PDEPEND", "")]);
        let set = repos(vec![a.clone(), b.clone()]);
        let installed = InstalledSet::new(vec![installed_entry(&a, &[]), installed_entry(&b, &[])]);

        let mut config = test_config();
        config.vars.insert("USE".to_string(), "threads".to_string());
        let rebuilds = changed_use_rebuilds(&config, &installed, &set).unwrap();
        assert_eq!(rebuilds.len(), 1);
        assert_eq!(rebuilds[0].cnv(), "app-misc/a-1.0");
    }

    #[test]
    fn vanished_recipe_is_skipped_with_warning() {
        let a = recipe("app-misc/a-1.0", "0", [("DEPEND", ""), ("RDEPEND", ""), ("PDEPEND", "")]);
        let set = repos(vec![]);
        let installed = InstalledSet::new(vec![installed_entry(&a, &[])]);
        let config = test_config();
        assert!(changed_use_rebuilds(&config, &installed, &set).unwrap().is_empty());
    }

    #[test]
    fn forced_rebuild_of_installed_package() {
        let a = recipe("app-misc/a-1.0", "0", [("DEPEND", ""), ("RDEPEND", ""), ("PDEPEND", "")]);
        let config = test_config();
        let set = repos(vec![a.clone()]);
        let installed = InstalledSet::new(vec![installed_entry(&a, &[])]);
        let ctx = ResolverContext::native(&config, &set, &installed);
        let plan = solve(&[], &ctx, std::slice::from_ref(&a.id)).unwrap();
        assert_eq!(plan.actions.len(), 1);
        assert_eq!(plan.actions[0].reason, Reason::ChangedUseRebuild);
        assert!(plan.render().starts_with("changed-use-rebuild app-misc/a-1.0:0"));
    }

    #[test]
    fn cross_mode_routes_depend_to_host() {
        let tool = recipe("sys-devel/tool-1.0", "0", [("DEPEND", ""), ("RDEPEND", ""), ("PDEPEND", "")]);
        let lib = recipe("dev-libs/lib-1.0", "0", [("DEPEND", ""), ("RDEPEND", ""), ("PDEPEND", "")]);
        let app = recipe(
            "app-misc/app-1.0",
            "0",
            [("DEPEND", "sys-devel/tool"), ("RDEPEND", "dev-libs/lib"), ("PDEPEND", "")],
        );
        let config = test_config(); // root /rootfs
        let set = repos(vec![tool, lib, app]);
        let target = InstalledSet::empty();
        let host = InstalledSet::empty();
        let ctx = ResolverContext {
            config: &config,
            repos: &set,
            target_installed: &target,
            host_installed: &host,
            host_root: PathBuf::from("/"),
            force_targets: false,
        };
        let plan = solve(&[atom("app-misc/app")], &ctx, &[]).unwrap();
        let roots: BTreeMap<String, String> = plan
            .actions
            .iter()
            .map(|a| (a.recipe.id.cn(), a.target_root.display().to_string()))
            .collect();
        assert_eq!(roots["sys-devel/tool"], "/");
        assert_eq!(roots["dev-libs/lib"], "/rootfs");
        assert_eq!(roots["app-misc/app"], "/rootfs");

        // With the tool already on the host, it produces no action.
        let tool_entry = installed_entry(
            &recipe("sys-devel/tool-1.0", "0", [("DEPEND", ""), ("RDEPEND", ""), ("PDEPEND", "")]),
            &[],
        );
        let host = InstalledSet::new(vec![tool_entry]);
        let ctx = ResolverContext { host_installed: &host, ..ctx };
        let plan = solve(&[atom("app-misc/app")], &ctx, &[]).unwrap();
        assert_eq!(plan.actions.len(), 2);
    }

    #[test]
    fn plan_is_independent_of_recipe_insertion_order() {
        let mk = |cnv: &str, rdep: &str| {
            recipe(cnv, "0", [("DEPEND", ""), ("RDEPEND", rdep), ("PDEPEND", "")])
        };
        let tree = vec![
            mk("dev-lang/python-2.7.12", "dev-libs/libffi sys-libs/readline sys-libs/zlib"),
            mk("dev-libs/libffi-3.2.1", ""),
            mk("sys-libs/ncurses-6.0", ""),
            mk("sys-libs/readline-6.3", "sys-libs/ncurses"),
            mk("sys-libs/zlib-1.2.8", ""),
        ];
        let config = test_config();
        let installed = InstalledSet::empty();

        let mut renders = BTreeSet::new();
        // A handful of rotations of the recipe list stand in for arbitrary
        // loading orders.
        for rotate in 0..tree.len() {
            let mut shuffled = tree.clone();
            shuffled.rotate_left(rotate);
            let set = repos(shuffled);
            let ctx = ResolverContext::native(&config, &set, &installed);
            let plan = solve(&[atom("dev-lang/python")], &ctx, &[]).unwrap();
            renders.insert(plan.render());
        }
        assert_eq!(renders.len(), 1, "plans diverged: {renders:?}");
    }

    #[test]
    fn masked_and_missing_propagate() {
        let mut hidden = recipe("app-misc/hidden-1.0", "0", [("DEPEND", ""), ("RDEPEND", ""), ("PDEPEND", "")]);
        hidden.keywords = ["~other".to_string()].into();
        let config = test_config();
        let set = repos(vec![hidden]);
        let installed = InstalledSet::empty();
        let ctx = ResolverContext::native(&config, &set, &installed);
        assert!(matches!(
            solve(&[atom("app-misc/hidden")], &ctx, &[]),
            Err(Error::Masked { .. })
        ));
        assert!(matches!(
            solve(&[atom("no-such/pkg")], &ctx, &[]),
            Err(Error::NotFound { .. })
        ));
    }
}
