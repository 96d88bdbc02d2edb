use std::fs;
use std::path::Path;

use cipherloop::controller::transcript::Transcript;
use cipherloop::experiment::{replay, replay_file, run, ExperimentConfig, ExperimentReport, RunOptions, REPORT_FILE};

const TOY: &str = r#"
name = "toy"
seed = 11

[plant]
kind = "custom"
a = [[-1.0]]
b = [[1.0]]
c = [[1.0]]
k = [[-1.0]]
l = [[1.0]]

[simulation]
horizon = 4.0
substeps = 50
x0 = [1.0]
mode = "encrypted"

[crypto]
modulus_bits = 96
key_dim = 2

[feasibility]
h = [0.1, 3.0]

[runs]
h = [0.1]
static_gain = "from-certificate"
gain_factor = 2.0
schedules = [{ kind = "power", exponent = 2.0 }, { kind = "fixed", value = 30.0 }]
mrms = { window = 2.0, at = 4.0 }
transcripts = true

[audit]
h = 0.1
static_gain = "from-certificate"
gain_factor = 2.0
schedules = [{ kind = "power", exponent = 2.0 }, { kind = "fixed", value = 30.0 }]
"#;

fn toy() -> ExperimentConfig {
    ExperimentConfig::from_toml(TOY).unwrap()
}

fn run_in(dir: &Path, seed: Option<u64>) -> ExperimentReport {
    run(&toy(), &RunOptions { out_dir: dir.to_path_buf(), seed, jobs: Some(2) }).unwrap()
}

#[test]
fn toy_experiment_writes_consistent_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let rep = run_in(dir.path(), None);
    assert_eq!(rep.feasibility.len(), 2);
    assert!(rep.feasibility[0].feasible);
    assert!(rep.feasibility[0].lambda_min.unwrap() >= 1.0);
    assert_eq!(rep.unrunnable(), 0);
    assert_eq!(rep.runs.len(), 2);
    for r in &rep.runs {
        assert_eq!(r.status, "ok");
        assert!(r.mrms.is_some());
        assert!(r.z_final < r.z0);
    }
    assert!(rep.runs[0].summable && !rep.runs[1].summable);
    assert_eq!(rep.audits.len(), 3);
    for a in &rep.audits {
        assert!(a.passed, "{a:?}");
    }
    let fixed = rep.audits[2].residual.as_ref().unwrap();
    assert!(fixed.entered_in_time);
    for f in &rep.files {
        assert!(dir.path().join(f).is_file(), "{f}");
    }
    assert_eq!(ExperimentReport::load(dir.path()).unwrap(), rep);
    // plotted series are backed by their CSV
    for stem in ["theta_e", "u", "norm_z"] {
        assert!(rep.files.contains(&format!("plots/{stem}.svg")));
        assert!(rep.files.contains(&format!("plots/{stem}.csv")));
    }
}

#[test]
fn same_seed_gives_identical_bytes() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let ra = run_in(a.path(), None);
    let rb = run_in(b.path(), None);
    assert_eq!(ra.files, rb.files);
    for f in &ra.files {
        assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap(), "{f}");
    }
    let c = tempfile::tempdir().unwrap();
    let rc = run_in(c.path(), Some(99));
    assert_ne!(fs::read(a.path().join(REPORT_FILE)).unwrap(), fs::read(c.path().join(REPORT_FILE)).unwrap());
    assert_ne!(ra.runs[0].seed, rc.runs[0].seed);
}

#[test]
fn replay_detects_corruption_and_seed_changes() {
    let dir = tempfile::tempdir().unwrap();
    let rep = run_in(dir.path(), None);
    let path = dir.path().join(rep.runs[0].transcript.as_ref().unwrap());
    let verdict = replay_file(&path, None).unwrap();
    assert!(verdict.passed(), "{verdict}");
    assert_eq!(verdict.records, 40);

    let other = replay_file(&path, Some(12345)).unwrap();
    assert!(!other.passed());
    assert_eq!(other.divergence, Some(0));

    let mut t = Transcript::read_from(&mut fs::read(&path).unwrap().as_slice()).unwrap();
    let original = t.clone();
    // flip one residue of the measurement sent at step 7; u_7 depends on χ_7 only
    t.records[7].y[0].body[0] ^= 1;
    let bad = replay(&t, None).unwrap();
    assert!(!bad.passed());
    assert_eq!(bad.controller, cipherloop::controller::transcript::ReplayCheck::Mismatch { record: 7, field: "chi_prime" });
    assert!(bad.to_string().contains("record 7"));
    assert_ne!(t, original);
}

#[test]
fn error_classes_map_to_exit_codes() {
    let empty = TOY.replace("h = [0.1, 3.0]", "h = []");
    let e = ExperimentConfig::from_toml(&empty).unwrap_err();
    assert_eq!(e.exit_code(), 1);
    let missing = ExperimentConfig::from_file(Path::new("/nonexistent/config.toml")).unwrap_err();
    assert_eq!(missing.exit_code(), 1);
}
