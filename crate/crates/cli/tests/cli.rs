//! CLI contract tests: exit codes, --pretend purity, stream separation,
//! ambient prefix sessions, and the spec's command walkthroughs.

use std::path::{Path, PathBuf};
use std::process::Output;

use pm_testutil::snapshot;

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

fn pm(args: &[&str]) -> Output {
    std::process::Command::new(env!("CARGO_BIN_EXE_pm"))
        .args(args)
        .env_remove("EPREFIX")
        .output()
        .expect("pm binary runs")
}

fn pm_with_eprefix(args: &[&str], eprefix: &Path) -> Output {
    std::process::Command::new(env!("CARGO_BIN_EXE_pm"))
        .args(args)
        .env("EPREFIX", eprefix)
        .output()
        .expect("pm binary runs")
}

fn write(path: &Path, text: &str) {
    std::fs::create_dir_all(path.parent().unwrap()).unwrap();
    std::fs::write(path, text).unwrap();
}

/// Minimal native config root over the bundled tree.
fn config_root(base: &Path) -> PathBuf {
    let c = base.join("cfg");
    write(
        &c.join("etc/pm/make.conf"),
        "ACCEPT_KEYWORDS=\"~amd64-linux\"\nUSE=\"ncurses readline python threads xml\"\n",
    );
    write(
        &c.join("etc/pm/repos.conf"),
        &format!("main = {} 0\n", fixtures().join("tree").display()),
    );
    c
}

#[test]
fn pretend_never_mutates() {
    let tmp = tempfile::tempdir().unwrap();
    let c = config_root(tmp.path());
    let r = tmp.path().join("R");
    std::fs::create_dir_all(&r).unwrap();

    let before_r = snapshot::snapshot(&r);
    let before_c = snapshot::snapshot(&c);
    let out = pm(&[
        "merge", "--pretend",
        "--root", r.to_str().unwrap(),
        "--config-root", c.to_str().unwrap(),
        "--prefix", "/",
        "python:2.7",
    ]);
    assert!(out.status.success());
    // The plan went to stdout, nothing to disk.
    assert!(String::from_utf8_lossy(&out.stdout).contains("target dev-lang/python-2.7.12:2.7"));
    assert!(snapshot::diff(&before_r, &snapshot::snapshot(&r)).is_empty());
    assert!(snapshot::diff(&before_c, &snapshot::snapshot(&c)).is_empty());
}

#[test]
fn exit_codes_are_stable() {
    let tmp = tempfile::tempdir().unwrap();
    let c = config_root(tmp.path());
    let r = tmp.path().join("R");
    std::fs::create_dir_all(&r).unwrap();
    let root = r.to_str().unwrap();
    let croot = c.to_str().unwrap();
    let base = ["--root", root, "--config-root", croot, "--prefix", "/"];

    // 2: parse errors.
    let mut args = vec!["merge"];
    args.extend_from_slice(&base);
    args.push("not an atom!!");
    assert_eq!(pm(&args).status.code(), Some(2));

    // 2: inspect on a non-artifact.
    let textfile = tmp.path().join("plain.txt");
    std::fs::write(&textfile, "just text\n").unwrap();
    assert_eq!(pm(&["inspect", textfile.to_str().unwrap()]).status.code(), Some(2));

    // 2: unknown query subcommand (clap usage error).
    let mut args = vec!["query"];
    args.extend_from_slice(&base);
    args.push("frobnicate");
    assert_eq!(pm(&args).status.code(), Some(2));

    // 3: resolution errors (unknown atom, masked candidate).
    let mut args = vec!["merge"];
    args.extend_from_slice(&base);
    args.push("no-such/pkg");
    assert_eq!(pm(&args).status.code(), Some(3));
    let mut args = vec!["merge"];
    args.extend_from_slice(&base);
    args.push("=dev-lang/python-2.7.14"); // keyworded ~next, masked here
    assert_eq!(pm(&args).status.code(), Some(3));
    let mut args = vec!["query"];
    args.extend_from_slice(&base);
    args.extend_from_slice(&["depgraph", "nosuch/pkg"]);
    assert_eq!(pm(&args).status.code(), Some(3));

    // 4: build failure (libffi without its user patch).
    let mut args = vec!["merge"];
    args.extend_from_slice(&base);
    args.push("=dev-libs/libffi-3.2.1");
    assert_eq!(pm(&args).status.code(), Some(4));

    // 5: merge collision.
    let collide = tmp.path().join("collide-tree");
    write(
        &collide.join("app-misc/first/first-1.0.recipe"),
        "KEYWORDS=\"~amd64-linux\"\n[phase:install]\necho-to ${D}${EPREFIX}/usr/share/same.txt one\n",
    );
    write(
        &collide.join("app-misc/second/second-1.0.recipe"),
        "KEYWORDS=\"~amd64-linux\"\n[phase:install]\necho-to ${D}${EPREFIX}/usr/share/same.txt two\n",
    );
    write(
        &c.join("etc/pm/repos.conf"),
        &format!(
            "main = {} 0\ncollide = {} 5\n",
            fixtures().join("tree").display(),
            collide.display()
        ),
    );
    let mut args = vec!["merge"];
    args.extend_from_slice(&base);
    args.push("app-misc/first");
    assert_eq!(pm(&args).status.code(), Some(0));
    let mut args = vec!["merge"];
    args.extend_from_slice(&base);
    args.push("app-misc/second");
    assert_eq!(pm(&args).status.code(), Some(5));
}

#[test]
fn plan_on_stdout_diagnostics_on_stderr() {
    let tmp = tempfile::tempdir().unwrap();
    let c = config_root(tmp.path());
    let r = tmp.path().join("R");
    std::fs::create_dir_all(&r).unwrap();

    let out = pm(&[
        "merge",
        "--root", r.to_str().unwrap(),
        "--config-root", c.to_str().unwrap(),
        "--prefix", "/",
        "sys-libs/zlib",
    ]);
    assert!(out.status.success());
    let stdout = String::from_utf8_lossy(&out.stdout);
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert_eq!(stdout, format!("target sys-libs/zlib-1.2.8:0 USE=\"\" -> {}\n", r.display()));
    assert!(stderr.contains(">>> target sys-libs/zlib-1.2.8:0"));
}

#[test]
fn overlay_add_then_merge_from_overlay() {
    let tmp = tempfile::tempdir().unwrap();
    let c = config_root(tmp.path());
    let r = tmp.path().join("R");
    std::fs::create_dir_all(&r).unwrap();
    let croot = c.to_str().unwrap();

    let overlay = fixtures().join("overlay-kde");
    let out = pm(&[
        "overlay", "--config-root", croot, "--root", r.to_str().unwrap(),
        "add", "kde", overlay.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let out = pm(&["overlay", "--config-root", croot, "--root", r.to_str().unwrap(), "list"]);
    let listing = String::from_utf8_lossy(&out.stdout).to_string();
    assert!(listing.starts_with("kde = "), "{listing}");

    let out = pm(&[
        "merge",
        "--root", r.to_str().unwrap(),
        "--config-root", croot,
        "--prefix", "/",
        "kde-misc/massif-visualizer",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(r.join("usr/bin/massif-visualizer").exists());

    // Overlay shadows main for the shared package name.
    let out = pm(&[
        "merge", "--pretend",
        "--root", r.to_str().unwrap(),
        "--config-root", croot,
        "--prefix", "/",
        "sys-libs/zlib",
    ]);
    assert!(String::from_utf8_lossy(&out.stdout).contains("zlib-1.2.9"));
}

#[test]
fn select_flow_and_unmerge_clears_selection() {
    let tmp = tempfile::tempdir().unwrap();
    let c = config_root(tmp.path());
    std::fs::copy(
        fixtures().join("config/etc/pm/select-modules.conf"),
        c.join("etc/pm/select-modules.conf"),
    )
    .unwrap();
    // The python closure needs the libffi patch.
    std::fs::create_dir_all(c.join("etc/pm/patches/dev-libs/libffi")).unwrap();
    std::fs::copy(
        fixtures().join("config/etc/pm/patches/dev-libs/libffi-3.2.1/libffi-3.2.1-k1om.patch"),
        c.join("etc/pm/patches/dev-libs/libffi/k1om.patch"),
    )
    .unwrap();
    let r = tmp.path().join("R");
    std::fs::create_dir_all(&r).unwrap();
    let root = r.to_str().unwrap();
    let croot = c.to_str().unwrap();

    for atom in ["python:2.7", "python:3.5"] {
        let out = pm(&["merge", "--root", root, "--config-root", croot, "--prefix", "/", atom]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }

    let out = pm(&["select", "--root", root, "--config-root", croot, "--prefix", "/", "list", "python"]);
    let listing = String::from_utf8_lossy(&out.stdout).to_string();
    assert_eq!(listing, "dev-lang/python-2.7.12:2.7\ndev-lang/python-3.5.2:3.5\n");

    let out = pm(&["select", "--root", root, "--config-root", croot, "--prefix", "/", "set", "python", "dev-lang/python:2.7"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(
        std::fs::read_link(r.join("usr/bin/python")).unwrap().to_str().unwrap(),
        "python2.7"
    );
    let out = pm(&["select", "--root", root, "--config-root", croot, "--prefix", "/", "list", "python"]);
    assert!(String::from_utf8_lossy(&out.stdout).contains("dev-lang/python-2.7.12:2.7 *"));

    // Unmerging the active provider clears record and alias.
    let out = pm(&["unmerge", "--root", root, "--config-root", croot, "--prefix", "/", "python:2.7"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(!r.join("usr/bin/python").exists());
    assert!(!r.join("etc/pm/select/python").exists());
    assert!(r.join("usr/bin/python3.5").exists());

    // Unmerging something not installed is a resolution error.
    let out = pm(&["unmerge", "--root", root, "--config-root", croot, "--prefix", "/", "python:2.7"]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn ambient_prefix_session_defaults() {
    let tmp = tempfile::tempdir().unwrap();
    let c = config_root(tmp.path());
    let p = tmp.path().join("P");

    let out = pm(&[
        "bootstrap",
        "--config-root", c.to_str().unwrap(),
        "--prefix", p.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    // Inside the session (EPREFIX set), no --root/--config-root needed:
    // the ambient prefix supplies everything.
    let out = pm_with_eprefix(&["query", "installed"], &p);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let listing = String::from_utf8_lossy(&out.stdout).to_string();
    assert!(listing.contains("sys-apps/pm-runtime-1.0:0"), "{listing}");

    // Merging inside the session lands in the prefix.
    let out = pm_with_eprefix(&["merge", "sys-cluster/slurm"], &p);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(p.join("usr/sbin/slurmd").exists());
    assert!(p.join("etc/slurm/slurm.conf").exists());

    // "16.05" normalizes to the canonical numeric render "16.5".
    let out = pm_with_eprefix(
        &["query", "owns", p.join("usr/sbin/slurmd").to_str().unwrap()],
        &p,
    );
    assert_eq!(String::from_utf8_lossy(&out.stdout), "sys-cluster/slurm-16.5\n");

    // @system expands to the bootstrap set, all satisfied here.
    let out = pm_with_eprefix(&["merge", "--pretend", "@system"], &p);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(String::from_utf8_lossy(&out.stdout), "");

    // Outside a session, --root is required.
    let out = pm(&["query", "installed"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn interactive_bootstrap_reads_confirmations() {
    use std::io::Write;
    use std::process::Stdio;

    let tmp = tempfile::tempdir().unwrap();
    let c = config_root(tmp.path());

    let run = |prefix: &Path, answers: &str| -> std::process::Output {
        let mut child = std::process::Command::new(env!("CARGO_BIN_EXE_pm"))
            .args([
                "bootstrap", "--interactive",
                "--config-root", c.to_str().unwrap(),
                "--prefix", prefix.to_str().unwrap(),
            ])
            .env_remove("EPREFIX")
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()
            .unwrap();
        child.stdin.as_mut().unwrap().write_all(answers.as_bytes()).unwrap();
        child.wait_with_output().unwrap()
    };

    // Declining the first stage aborts before anything is built.
    let p1 = tmp.path().join("P-declined");
    let out = run(&p1, "n\n");
    assert!(!out.status.success());
    assert!(!p1.join(".bootstrap-stage").exists());

    // Confirming all three stages completes the bootstrap.
    let p2 = tmp.path().join("P-confirmed");
    let out = run(&p2, "y\ny\ny\n");
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(std::fs::read_to_string(p2.join(".bootstrap-stage")).unwrap(), "3\n");
    assert!(p2.join("startprefix").exists());
}

#[test]
fn depgraph_renders_expanded_tree() {
    let tmp = tempfile::tempdir().unwrap();
    let c = config_root(tmp.path());
    let r = tmp.path().join("R");
    std::fs::create_dir_all(&r).unwrap();

    let out = pm(&[
        "query",
        "--root", r.to_str().unwrap(),
        "--config-root", c.to_str().unwrap(),
        "--prefix", "/",
        "depgraph", "python:2.7",
    ]);
    assert!(out.status.success());
    let graph = String::from_utf8_lossy(&out.stdout).to_string();
    assert!(graph.starts_with("target python:2.7 -> dev-lang/python-2.7.12:2.7"));
    assert!(graph.contains("rdepend sys-libs/readline -> sys-libs/readline-6.3:0"));
    assert!(graph.contains("  rdepend sys-libs/ncurses -> sys-libs/ncurses-6.0:0"));
}
