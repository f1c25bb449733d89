use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

fn marvin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_marvin")).args(args).env_remove("MARVIN_CYCLE_MODEL").output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = marvin(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn err(args: &[&str]) -> String {
    let out = marvin(args);
    assert!(!out.status.success(), "{args:?} should fail");
    String::from_utf8(out.stderr).unwrap()
}

/// MLP fixture files shared by the tests.
fn fixture() -> &'static Path {
    static DIR: OnceLock<(tempfile::TempDir, PathBuf)> = OnceLock::new();
    &DIR.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().to_str().unwrap().to_string();
        ok(&["fixtures", "--model", "mlp", "--out", &out]);
        let manifest = dir.path().join("mlp/manifest.toml");
        (dir, manifest)
    })
    .1
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn fixtures_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let out = s(dir.path());
    let text = ok(&["fixtures", "--model", "mlp", "--seed", "42", "--out", out]);
    assert!(text.contains("float accuracy"));
    let first: Vec<Vec<u8>> = ["network.toml", "weights.mrvw", "dataset.bin", "manifest.toml"]
        .iter()
        .map(|f| fs::read(fixture().parent().unwrap().join(f)).unwrap())
        .collect();
    for (f, bytes) in ["network.toml", "weights.mrvw", "dataset.bin", "manifest.toml"].iter().zip(first) {
        assert_eq!(fs::read(dir.path().join("mlp").join(f)).unwrap(), bytes, "{f}");
    }
}

#[test]
fn run_writes_reports_and_programs() {
    let dir = tempfile::tempdir().unwrap();
    let text = ok(&["run", s(fixture()), "--config", "w4a4", "--out", s(dir.path())]);
    assert!(text.contains("0_dense") && text.contains("w4a4"));
    let summary = fs::read_to_string(dir.path().join("summary.csv")).unwrap();
    let lines: Vec<&str> = summary.lines().collect();
    assert_eq!(lines[0], "style,total_cycles,instruction_count,load_count,store_count,stall_cycles,mac_count");
    assert!(lines[1].starts_with("baseline,") && lines[2].starts_with("packed,"));
    let layers = fs::read_to_string(dir.path().join("layers.csv")).unwrap();
    assert_eq!(layers.lines().count(), 4);

    // re-running gives the same bytes
    let again = tempfile::tempdir().unwrap();
    ok(&["run", s(fixture()), "--config", "w4a4", "--out", s(again.path())]);
    for f in ["summary.csv", "layers.csv", "packed.bin", "packed.json"] {
        assert_eq!(fs::read(dir.path().join(f)).unwrap(), fs::read(again.path().join(f)).unwrap(), "{f}");
    }

    let asm = ok(&["disasm", s(&dir.path().join("packed.bin"))]);
    assert!(asm.contains("nn_mac"), "{}", &asm[..asm.len().min(400)]);

    let sweep = dir.path().join("sweep.csv");
    let text = ok(&["power", "--report", s(&dir.path().join("summary.csv")), "--out", s(&sweep)]);
    assert!(text.contains("minimum valid voltage 0.62 V"));
    assert!(text.contains("at 0.62 V"));
    let csv = fs::read_to_string(&sweep).unwrap();
    assert!(csv.lines().any(|l| l.starts_with("0.61,") && l.ends_with(",false")));
    assert!(csv.lines().any(|l| l.starts_with("0.62,") && l.ends_with(",true")));

    let params = dir.path().join("params.toml");
    fs::write(&params, "activity = 0.2\nfrequency_hz = \"fast\"\n").unwrap();
    let msg = err(&["power", "--report", s(&dir.path().join("summary.csv")), "--config", s(&params)]);
    assert!(msg.contains("line 2"), "{msg}");
}

#[test]
fn cycle_model_override() {
    let dir = tempfile::tempdir().unwrap();
    let model = dir.path().join("cycles.toml");
    fs::write(&model, "load = 1\n").unwrap();
    let run = |env: Option<&Path>| {
        let out = dir.path().join(if env.is_some() { "a" } else { "b" });
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_marvin"));
        cmd.args(["run", s(fixture()), "--out", s(&out)]).env_remove("MARVIN_CYCLE_MODEL");
        if let Some(p) = env {
            cmd.env("MARVIN_CYCLE_MODEL", p);
        }
        assert!(cmd.output().unwrap().status.success());
        fs::read_to_string(out.join("summary.csv")).unwrap()
    };
    let cycles = |s: &str| -> u64 { s.lines().nth(2).unwrap().split(',').nth(1).unwrap().parse().unwrap() };
    assert!(cycles(&run(Some(&model))) < cycles(&run(None)));

    fs::write(&model, "load = 0\n").unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_marvin"))
        .args(["run", s(fixture())])
        .env("MARVIN_CYCLE_MODEL", &model)
        .output()
        .unwrap();
    assert!(!out.status.success());
}

#[test]
fn dse_respects_budget() {
    let dir = tempfile::tempdir().unwrap();
    let text = ok(&["dse", s(fixture()), "--threshold", "1", "--iters", "30", "--out", s(dir.path())]);
    assert!(text.contains("best:"));
    let points = fs::read_to_string(dir.path().join("points.csv")).unwrap();
    let n = points.lines().count() - 1;
    assert!((1..=30).contains(&n), "{n}");
    assert!(fs::read_to_string(dir.path().join("summary.csv")).unwrap().contains("hypervolume,"));
}

#[test]
fn bad_inputs_fail() {
    let dir = tempfile::tempdir().unwrap();
    err(&["run", s(fixture()), "--config", "w3a3"]);
    err(&["run", s(fixture()), "--config", "w8a8,w4a4"]);
    err(&["run", s(fixture()), "--config", "w8a8@1.5"]);
    err(&["run", "--model", "resnet"]);
    err(&["disasm", s(&dir.path().join("missing.bin"))]);

    let manifest = dir.path().join("manifest.toml");
    let text = fs::read_to_string(fixture()).unwrap();
    let base = fixture().parent().unwrap();
    let text = text.replace("\"network.toml\"", &format!("{:?}", base.join("network.toml")));
    fs::write(&manifest, format!("{text}colour = 3\n")).unwrap();
    let msg = err(&["run", s(&manifest)]);
    assert!(msg.contains("colour"), "{msg}");
    // a failed run leaves nothing behind
    let out = dir.path().join("out");
    err(&["run", s(&manifest), "--out", s(&out)]);
    assert!(!out.exists());
}
