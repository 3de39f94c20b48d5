use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn mheat(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mheat")).args(args).current_dir(dir).env_remove("MHEAT_THREADS").output().unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path.to_string_lossy().into_owned()
}

const QUICK: &str = r#"
seed = 5
n_paths = 2000

[manifold]
kind = "torus"
dim = 2

[field]
kind = "sin"
direction = [1.0, 0.0]

[experiment]
kind = "estimate"
quantity = "grad"
t = 0.5
points = [[0.3, 0.0], [1.0, 2.0]]
"#;

#[test]
fn list_prints_every_registry() {
    let tmp = tempfile::tempdir().unwrap();
    for kind in ["manifolds", "fields", "potentials", "checks"] {
        let out = mheat(&["list", kind], tmp.path());
        assert_eq!(out.status.code(), Some(0), "{kind}");
        assert!(!out.stdout.is_empty());
    }
    let checks = String::from_utf8(mheat(&["list", "checks"], tmp.path()).stdout).unwrap();
    for name in ["kernel-bounds", "weighted-l2", "gaffney", "semigroup-bounds", "kato", "czscan"] {
        assert!(checks.contains(name), "{name}");
    }
}

#[test]
fn unknown_list_kind_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(mheat(&["list", "bogus"], tmp.path()).status.code(), Some(2));
}

#[test]
fn gamma_violation_exits_2_with_its_line() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(
        tmp.path(),
        "bad.toml",
        "[manifold]\nkind = \"euclidean\"\ndim = 2\n\n[experiment]\nkind = \"verify\"\ncheck = \"kernel-bounds\"\nalpha = 0.1\ngamma = 0.25\nbeta = 0.1\n",
    );
    let out = mheat(&["run", &cfg], tmp.path());
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.contains("bad.toml:9:"), "{err}");
    assert!(err.contains("γ < 2α"), "{err}");
    assert!(!tmp.path().join("mheat-out").exists());
}

#[test]
fn passing_run_exits_0_and_writes_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "quick.toml", QUICK);
    let out = mheat(&["run", &cfg], tmp.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let dir = tmp.path().join("mheat-out/quick");
    for name in ["summary.json", "estimate-grad.csv", "estimate-grad.x0.dat", "MANIFEST"] {
        assert!(dir.join(name).exists(), "{name}");
    }
    let manifest = fs::read_to_string(dir.join("MANIFEST")).unwrap();
    assert!(manifest.starts_with("status complete\n"));
    assert!(manifest.contains("summary.json"));
}

#[test]
fn reruns_are_byte_identical_and_seed_flag_changes_them() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "quick.toml", QUICK);
    let read = |d: &str| fs::read(tmp.path().join(d).join("estimate-grad.csv")).unwrap();
    assert_eq!(mheat(&["run", &cfg, "--out", "a"], tmp.path()).status.code(), Some(0));
    let threaded = Command::new(env!("CARGO_BIN_EXE_mheat"))
        .args(["run", &cfg, "--out", "b"])
        .current_dir(tmp.path())
        .env("MHEAT_THREADS", "3")
        .output()
        .unwrap();
    assert_eq!(threaded.status.code(), Some(0));
    assert_eq!(mheat(&["run", &cfg, "--out", "c", "--seed", "6"], tmp.path()).status.code(), Some(0));
    assert_eq!(read("a"), read("b"));
    assert_eq!(fs::read(tmp.path().join("a/summary.json")).unwrap(), fs::read(tmp.path().join("b/summary.json")).unwrap());
    assert_ne!(read("a"), read("c"));
}

#[test]
fn biased_estimate_exits_1() {
    // a single walk step on the sphere carries a bias far above the noise
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(
        tmp.path(),
        "biased.toml",
        r#"
n_paths = 20000
h = 1.0

[manifold]
kind = "sphere"
dim = 2
radius = 1.0

[field]
kind = "linear"
direction = [0.0, 0.0, 1.0]

[experiment]
kind = "estimate"
quantity = "pt"
t = 1.0
"#,
    );
    let out = mheat(&["run", &cfg, "--out", "o"], tmp.path());
    assert_eq!(out.status.code(), Some(1));
    let csv = fs::read_to_string(tmp.path().join("o/estimate-pt.csv")).unwrap();
    assert!(csv.contains(",fail,monte-carlo"), "{csv}");
}

#[test]
fn aborted_run_still_writes_a_manifest() {
    // σ below twice the curvature bound leaves no default truncation time
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(
        tmp.path(),
        "abort.toml",
        r#"
[manifold]
kind = "hyperbolic"
dim = 2
scale = 1.0

[field]
kind = "gaussian_bump"
width = 1.0

[experiment]
kind = "estimate"
quantity = "green_hess"
sigma = 1.0
"#,
    );
    let out = mheat(&["run", &cfg, "--out", "o"], tmp.path());
    assert_eq!(out.status.code(), Some(2));
    let manifest = fs::read_to_string(tmp.path().join("o/MANIFEST")).unwrap();
    assert!(manifest.starts_with("status aborted\n"), "{manifest}");
    let summary = fs::read_to_string(tmp.path().join("o/summary.json")).unwrap();
    assert!(summary.contains("\"status\": \"aborted\""));
}

#[test]
fn zero_threads_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "quick.toml", QUICK);
    assert_eq!(mheat(&["run", &cfg, "--threads", "0"], tmp.path()).status.code(), Some(2));
}
