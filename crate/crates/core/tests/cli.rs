use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn scenario(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(name)
}

fn crowdsim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_crowdsim"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn text(bytes: &[u8]) -> String {
    String::from_utf8_lossy(bytes).into_owned()
}

fn simulate_into(scenario: &Path, out: &Path) -> Output {
    crowdsim(&[
        "simulate",
        "--scenario",
        scenario.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--ensemble",
        "3",
        "--level",
        "5",
        "--workers",
        "1",
    ])
}

#[test]
fn simulate_writes_trajectories_and_metadata() {
    let dir = tempfile::tempdir().unwrap();
    let out = simulate_into(&scenario("minimal.json"), dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", text(&out.stderr));
    assert!(text(&out.stdout).contains("wrote"));

    let csv = std::fs::read_to_string(dir.path().join("trajectories.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("member,step,time,pedestrian,kind,x,y,tv,evacuated"));
    assert_eq!(lines.count(), 3 * 33);

    let meta: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("metadata.json")).unwrap()).unwrap();
    assert_eq!(meta["level"], 5);
    assert_eq!(meta["steps"], 32);
    assert_eq!(meta["ensemble_size"], 3);
    assert!(meta["kappa"].as_f64().unwrap() > 0.0);
    assert!(dir.path().join("scenario.normalized.json").exists());
}

#[test]
fn normalized_copy_reproduces_the_run() {
    let first = tempfile::tempdir().unwrap();
    let second = tempfile::tempdir().unwrap();
    let out = simulate_into(&scenario("square_obstacle.json"), first.path());
    assert_eq!(out.status.code(), Some(0), "{}", text(&out.stderr));
    let normalized = first.path().join("scenario.normalized.json");
    let out = simulate_into(&normalized, second.path());
    assert_eq!(out.status.code(), Some(0), "{}", text(&out.stderr));
    for name in ["trajectories.csv", "contacts.csv"] {
        let a = std::fs::read(first.path().join(name)).unwrap();
        let b = std::fs::read(second.path().join(name)).unwrap();
        assert!(a == b, "{name} differs when rerun from the normalized copy");
    }
}

#[test]
fn nondim_prints_groups_and_kappa() {
    let out = crowdsim(&["nondim", "--scenario", scenario("convex_room.json").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", text(&out.stderr));
    let stdout = text(&out.stdout);
    let kappa_line = stdout.lines().find(|l| l.trim_start().starts_with("kappa:")).expect("kappa line");
    let kappa: f64 = kappa_line.split(':').nth(1).unwrap().trim().parse().unwrap();
    assert!((kappa - 0.958).abs() < 1e-3, "{kappa}");
    assert_eq!(stdout.lines().count(), 5);
}

#[test]
fn missing_scenario_is_an_input_error() {
    let out = crowdsim(&["simulate", "--scenario", "/nonexistent/scenario.json"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(!text(&out.stderr).is_empty());
}

#[test]
fn unknown_field_is_reported_with_its_position() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    std::fs::write(
        &path,
        "{\n  \"geometry\": {\"outer\": [[0,0],[1,0],[1,1],[0,1]], \"r0\": 0.1},\n  \"crowd\": {},\n  \"speling\": 1\n}\n",
    )
    .unwrap();
    let out = crowdsim(&["simulate", "--scenario", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    let stderr = text(&out.stderr);
    assert!(stderr.contains("speling") && stderr.contains("line 4"), "{stderr}");
}

#[test]
fn invalid_geometry_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bowtie.json");
    std::fs::write(
        &path,
        r#"{"geometry": {"outer": [[0,0],[1,1],[1,0],[0,1]], "r0": 0.1}, "crowd": {"passive": [[0.5, 0.2]]}}"#,
    )
    .unwrap();
    let out = crowdsim(&["simulate", "--scenario", path.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1), "{}", text(&out.stderr));
}

#[test]
fn failed_verification_exits_with_three() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("strict.json");
    std::fs::write(
        &path,
        r#"{
  "geometry": {"outer": [[0,0],[1,0],[1,1],[0,1]], "r0": 0.1},
  "crowd": {"passive": [[0.5, 0.5]]},
  "experiments": {"reflect": {"members": 200, "level": 4, "threshold": 1e-6}}
}"#,
    )
    .unwrap();
    let out = crowdsim(&["verify-reflect", "--scenario", path.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3), "{}", text(&out.stderr));
    assert!(text(&out.stdout).contains("FAIL"));
    assert!(dir.path().join("results.json").exists());
}

#[test]
fn seed_override_changes_the_ensemble() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let run = |dir: &Path, seed: &str| {
        crowdsim(&[
            "simulate",
            "--scenario",
            scenario("minimal.json").to_str().unwrap(),
            "--out",
            dir.to_str().unwrap(),
            "--level",
            "4",
            "--ensemble",
            "2",
            "--seed",
            seed,
        ])
    };
    assert_eq!(run(a.path(), "1").status.code(), Some(0));
    assert_eq!(run(b.path(), "2").status.code(), Some(0));
    let ta = std::fs::read(a.path().join("trajectories.csv")).unwrap();
    let tb = std::fs::read(b.path().join("trajectories.csv")).unwrap();
    assert_ne!(ta, tb);
}
