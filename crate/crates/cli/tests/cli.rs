use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_rotcool"))
}

fn repo_config(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

fn toy_config(dir: &Path, extra: &str) -> PathBuf {
    let path = dir.join("toy.toml");
    let text = format!(
        "l_list = [1]\nseeds = [4]\noutput_dir = \"{}\"\n{extra}\n[molecule]\nj_max_g = 2\nj_max_e = 2\ntemperature = 5.0\n\
         [pulse]\nduration = 4.0\ndt = 0.1\n[krotov]\nalpha = 2.0\nmax_iters = 5\n",
        dir.join("out").display()
    );
    fs::write(&path, text).unwrap();
    path
}

fn run(cmd: &mut Command) -> Output {
    cmd.arg("--log-level").arg("warn").output().unwrap()
}

#[test]
fn shipped_configs_parse() {
    for name in ["desk.toml", "benchmark_j11.toml"] {
        rotcool::experiment::ExperimentConfig::load(&repo_config(name)).unwrap();
    }
}

#[test]
fn run_writes_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = toy_config(dir.path(), "");
    let out = run(bin().arg("run").arg("--config").arg(&cfg).arg("--threads").arg("2"));
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).contains("L=1 seed=4"));
    assert!(dir.path().join("out/L1_seed4/krotov.csv").exists());
}

#[test]
fn seed_and_out_flags_override_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = toy_config(dir.path(), "");
    let other = dir.path().join("elsewhere");
    let out = run(bin().args(["run", "--l", "2", "--seed", "9"]).arg("--config").arg(&cfg).arg("--out").arg(&other));
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(other.join("L2_seed9/report.csv").exists());
}

#[test]
fn config_errors_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "l_list = []\n").unwrap();
    assert_eq!(run(bin().arg("sweep").arg("--config").arg(&bad)).status.code(), Some(1));
    let missing = dir.path().join("nope.toml");
    assert_eq!(run(bin().arg("sweep").arg("--config").arg(&missing)).status.code(), Some(1));
}

#[test]
fn partial_sweep_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = toy_config(dir.path(), "");
    // a guess file that does not exist makes every run fail
    let text = fs::read_to_string(&cfg).unwrap().replace(
        "[pulse]\n",
        &format!("[pulse]\nguess_file = \"{}\"\n", dir.path().join("missing.csv").display()),
    );
    fs::write(&cfg, text).unwrap();
    let out = run(bin().arg("sweep").arg("--config").arg(&cfg));
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    let runs = fs::read_to_string(dir.path().join("out/runs.csv")).unwrap();
    assert!(runs.contains("failed"));
}

#[test]
fn field_commands() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = toy_config(dir.path(), "");
    let field = dir.path().join("zero.csv");
    fs::write(&field, "t,re,im\n5.0e-2,0.0,0.0\n1.5e-1,0.0,0.0\n").unwrap();
    let out = run(bin().arg("validate-field").arg("--config").arg(&cfg).arg("--field").arg(&field));
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8_lossy(&out.stdout);
    let infid: f64 = text.trim().strip_prefix("infidelity=").unwrap().parse().unwrap();
    assert!(infid > 0.0 && infid < 1.0);

    // the zero field leaves every level in place: the map is the identity
    let out = run(bin().arg("steady-state").arg("--config").arg(&cfg).arg("--field").arg(&field));
    assert_eq!(out.status.code(), Some(2));

    let pulse = dir.path().join("pulse.csv");
    let mut text = String::from("t,re,im\n");
    for k in 0..40 {
        text.push_str(&format!("{},{},{}\n", (k as f64 + 0.5) * 0.1, 0.8, 0.3));
    }
    fs::write(&pulse, text).unwrap();
    let out = run(bin().arg("steady-state").arg("--config").arg(&cfg).arg("--field").arg(&pulse));
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["cycle_map.csv", "steady_state.csv", "report.csv"] {
        assert!(dir.path().join("out").join(f).exists(), "{f}");
    }

    let out = run(bin().arg("validate-field").arg("--config").arg(&cfg).arg("--field").arg(dir.path().join("none.csv")));
    assert_eq!(out.status.code(), Some(2));
}
