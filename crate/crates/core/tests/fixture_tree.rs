//! The bundled fixture tree loads, every recipe round-trips through the
//! renderer, and lookup ordering is stable.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use pm_core::atoms::Atom;
use pm_core::repository::{parse_recipe, RepositorySet};

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

fn load_fixture_set(tmp: &Path) -> RepositorySet {
    let etc = tmp.join("etc/pm");
    std::fs::create_dir_all(&etc).unwrap();
    std::fs::write(etc.join("make.conf"), "ACCEPT_KEYWORDS=\"~amd64-linux\"\n").unwrap();
    std::fs::write(
        etc.join("repos.conf"),
        format!(
            "main = {} 0\nkde = {} 10\n",
            fixtures().join("tree").display(),
            fixtures().join("overlay-kde").display()
        ),
    )
    .unwrap();
    RepositorySet::load(tmp).unwrap()
}

#[test]
fn tree_loads_completely() {
    let tmp = tempfile::tempdir().unwrap();
    let set = load_fixture_set(tmp.path());
    assert_eq!(set.repositories().len(), 2);
    // 15 main-tree recipes + 2 overlay recipes.
    assert_eq!(set.recipes().len(), 17);
}

#[test]
fn every_fixture_recipe_rerenders_equal() {
    let tmp = tempfile::tempdir().unwrap();
    let set = load_fixture_set(tmp.path());
    for recipe in set.recipes() {
        let rendered = recipe.render();
        let dir = tmp
            .path()
            .join("rerender")
            .join(&recipe.id.category)
            .join(&recipe.id.name);
        std::fs::create_dir_all(&dir).unwrap();
        let file = dir.join(format!("{}-{}.recipe", recipe.id.name, recipe.id.version));
        std::fs::write(&file, rendered).unwrap();
        let reparsed = parse_recipe(&file, &recipe.id.repository).unwrap();
        assert_eq!(reparsed.id, recipe.id, "{}", recipe.id.cnv());
        assert_eq!(reparsed.slot, recipe.slot);
        assert_eq!(reparsed.iuse, recipe.iuse);
        assert_eq!(reparsed.keywords, recipe.keywords);
        assert_eq!(reparsed.depend, recipe.depend);
        assert_eq!(reparsed.rdepend, recipe.rdepend);
        assert_eq!(reparsed.pdepend, recipe.pdepend);
        assert_eq!(reparsed.src, recipe.src);
        assert_eq!(reparsed.bundled_patches, recipe.bundled_patches);
        assert_eq!(reparsed.phases, recipe.phases);
    }
}

#[test]
fn overlay_shadows_main_zlib() {
    let tmp = tempfile::tempdir().unwrap();
    let set = load_fixture_set(tmp.path());
    let accept: BTreeSet<String> = ["~amd64-linux".to_string()].into();
    let best = set
        .best_match(&Atom::parse("sys-libs/zlib").unwrap(), &accept)
        .unwrap();
    assert_eq!(best.id.repository, "kde");
    assert_eq!(best.id.version.to_string(), "1.2.9");
}

#[test]
fn shorthand_slurm_resolves_uniquely() {
    let tmp = tempfile::tempdir().unwrap();
    let set = load_fixture_set(tmp.path());
    let found = set.find_recipes(&Atom::parse("slurm").unwrap()).unwrap();
    assert_eq!(found.len(), 1);
    assert_eq!(found[0].id.cn(), "sys-cluster/slurm");
}

#[test]
fn find_order_is_byte_stable() {
    let tmp = tempfile::tempdir().unwrap();
    let set = load_fixture_set(tmp.path());
    let atom = Atom::parse("dev-lang/python").unwrap();
    let render = |set: &RepositorySet| -> String {
        set.find_recipes(&atom)
            .unwrap()
            .iter()
            .map(|r| format!("{}::{}\n", r.id.cnvs(), r.id.repository))
            .collect()
    };
    let first = render(&set);
    for _ in 0..3 {
        let set = load_fixture_set(tmp.path());
        assert_eq!(render(&set), first);
    }
    assert!(first.starts_with("dev-lang/python-3.5.2:3.5"));
}
