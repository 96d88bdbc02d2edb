use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const TOY: &str = r#"
name = "toy"
seed = 3

[plant]
kind = "custom"
a = [[-1.0]]
b = [[1.0]]
c = [[1.0]]
k = [[-1.0]]
l = [[1.0]]

[simulation]
horizon = 2.0
x0 = [1.0]
mode = "encrypted"

[crypto]
modulus_bits = 96
key_dim = 2

[feasibility]
h = [0.1]

[runs]
h = [0.1]
static_gain = "from-certificate"
gain_factor = 2.0
schedules = [{ kind = "power", exponent = 2.0 }]
transcripts = true
plots = false
"#;

fn cli(args: &[&str], env_out: Option<&Path>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_cipherloop"));
    cmd.args(args).env_remove("CIPHERLOOP_OUT");
    if let Some(p) = env_out {
        cmd.env("CIPHERLOOP_OUT", p);
    }
    cmd.output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

#[test]
fn run_replay_and_check_cert() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("toy.toml");
    fs::write(&cfg, TOY).unwrap();
    let root = dir.path().join("outputs");
    let o = cli(&["run", cfg.to_str().unwrap(), "--jobs", "1"], Some(&root));
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let out = root.join("toy");
    assert!(out.join("report.toml").is_file());
    assert!(String::from_utf8_lossy(&o.stdout).contains("feasible"));

    let transcript = fs::read_dir(out.join("runs")).unwrap().next().unwrap().unwrap().path().join("transcript.bin");
    let o = cli(&["replay", transcript.to_str().unwrap()], None);
    assert_eq!(code(&o), 0);
    assert!(String::from_utf8_lossy(&o.stdout).starts_with("pass"));
    let o = cli(&["replay", transcript.to_str().unwrap(), "--seed", "77"], None);
    assert_eq!(code(&o), 3);
    fs::write(&transcript, b"garbage").unwrap();
    assert_eq!(code(&cli(&["replay", transcript.to_str().unwrap()], None)), 3);

    let cert = out.join("certificates/h0.1.toml");
    let args = ["check-cert", cert.to_str().unwrap(), "--plant", cfg.to_str().unwrap(), "--h", "0.1"];
    let o = cli(&args, None);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stdout).contains("valid"));
    // the same certificate does not fit the motor
    let o = cli(&["check-cert", cert.to_str().unwrap(), "--plant", "dc_motor", "--h", "0.1"], None);
    assert_ne!(code(&o), 0);
    let o = cli(&["check-cert", cert.to_str().unwrap(), "--plant", cfg.to_str().unwrap(), "--h", "0.2"], None);
    assert_eq!(code(&o), 1);
}

#[test]
fn config_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("empty.toml");
    fs::write(&cfg, TOY.replace("h = [0.1]\n\n[runs]", "h = []\n\n[runs]")).unwrap();
    let o = cli(&["run", cfg.to_str().unwrap(), "--out", dir.path().join("o").to_str().unwrap()], None);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("empty"));
    assert_eq!(code(&cli(&["run", "--preset", "nope"], None)), 1);
    assert_eq!(code(&cli(&["run"], None)), 1);
}

#[test]
fn missing_certificate_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("unstable.toml");
    // positive feedback around an unstable plant: no certificate, so the run has no static gain
    fs::write(&cfg, TOY.replace("a = [[-1.0]]", "a = [[1.0]]").replace("k = [[-1.0]]", "k = [[0.5]]").replace("l = [[1.0]]", "l = [[3.0]]")).unwrap();
    let o = cli(&["run", cfg.to_str().unwrap(), "--out", dir.path().join("o").to_str().unwrap()], None);
    assert_eq!(code(&o), 2, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn presets_are_listed() {
    let o = cli(&["presets"], None);
    assert_eq!(code(&o), 0);
    let text = String::from_utf8_lossy(&o.stdout);
    for p in ["table1", "table2", "table3", "fig3", "fig4", "fig5", "stable_demo"] {
        assert!(text.lines().any(|l| l == p), "{p}");
    }
    let o = cli(&["presets", "table2"], None);
    assert!(String::from_utf8_lossy(&o.stdout).contains("exponent = 0.4"));
}
