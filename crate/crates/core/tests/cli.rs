//! End-to-end runs of the binary: exit codes, artifacts and determinism.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

const BIN: &str = env!("CARGO_BIN_EXE_bistable-fronts");

fn system(a11: f64, a12: f64, a21: f64, a22: f64) -> String {
    format!(
        "[system]\nperiod = 1.0\nd1 = {{ mean = 1.0 }}\nd2 = {{ mean = 1.0 }}\nb1 = {{ mean = 1.0 }}\nb2 = {{ mean = 1.0 }}\n\
         a11 = {{ mean = {a11:?} }}\na12 = {{ mean = {a12:?} }}\na21 = {{ mean = {a21:?} }}\na22 = {{ mean = {a22:?} }}\n"
    )
}

/// Small grid and short horizons so the whole pipeline runs in seconds.
const FAST: &str = "[grid]\nn = 32\nperiods = 60\n\n[audit]\nseeds = 8\n\n[front]\nt_speed = 30.0\n\n\
[verify]\nlattice_t = 16\nlattice_x = 64\nperiods = 60\nsandwich_t = 8.0\nstability_t = 40.0\n";

struct Run {
    dir: TempDir,
}

impl Run {
    fn new() -> Self {
        Self { dir: tempfile::tempdir().unwrap() }
    }

    fn config(&self, name: &str, text: &str) -> PathBuf {
        let p = self.dir.path().join(name);
        fs::write(&p, text).unwrap();
        p
    }

    fn out(&self) -> PathBuf {
        self.dir.path().join("out")
    }

    fn cmd(&self, args: &[&str], config: &Path) -> Output {
        Command::new(BIN)
            .args(args)
            .arg("--config")
            .arg(config)
            .arg("--out")
            .arg(self.out())
            .output()
            .unwrap()
    }

    fn json(&self, name: &str) -> Value {
        serde_json::from_str(&fs::read_to_string(self.out().join(name)).unwrap()).unwrap()
    }
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

#[test]
fn audit_passes_on_symmetric_constants() {
    let r = Run::new();
    let cfg = r.config("sym.toml", &system(1.0, 1.5, 1.5, 1.0));
    let o = r.cmd(&["audit"], &cfg);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stdout).contains("verdict: pass"));
    let j = r.json("audit.json");
    assert_eq!(j["passed"], true);
    assert_eq!(j["config"]["system"]["a12"]["mean"], 1.5);
    for m in j["report"]["h1"].as_array().unwrap() {
        assert!((m.as_f64().unwrap() + 0.5).abs() < 1e-8);
    }
}

#[test]
fn audit_fails_on_weak_competition() {
    let r = Run::new();
    let cfg = r.config("weak.toml", &system(1.0, 0.5, 0.5, 1.0));
    let o = r.cmd(&["audit"], &cfg);
    assert_eq!(code(&o), 1);
    assert_eq!(r.json("audit.json")["passed"], false);
}

#[test]
fn configuration_errors_exit_2() {
    let r = Run::new();
    let base = system(1.0, 1.5, 1.5, 1.0);
    let unknown = r.config("unknown.toml", &format!("{base}\n[grid]\nn = 32\nspacing = 2\n"));
    assert_eq!(code(&r.cmd(&["audit"], &unknown)), 2);
    let negative = r.config("neg.toml", &format!("{base}\n[verify]\nstability_tol = -1.0\n"));
    assert_eq!(code(&r.cmd(&["audit"], &negative)), 2);
    let absent = r.dir.path().join("absent.toml");
    assert_eq!(code(&r.cmd(&["audit"], &absent)), 2);
    let no_config = Command::new(BIN).arg("audit").arg("--out").arg(r.out()).output().unwrap();
    assert_eq!(code(&no_config), 2);
    let bad_flag = Command::new(BIN).args(["audit", "--frobnicate"]).output().unwrap();
    assert_eq!(code(&bad_flag), 2);
}

#[test]
fn missing_prerequisites_exit_4() {
    let r = Run::new();
    let cfg = r.config("base.toml", &format!("{}{FAST}", system(1.0, 1.8, 1.3, 1.0)));
    assert_eq!(code(&r.cmd(&["front"], &cfg)), 4);
    assert_eq!(code(&r.cmd(&["verify"], &cfg)), 4);
    // a failed audit is not a prerequisite either
    let weak = r.config("weak.toml", &format!("{}{FAST}", system(1.0, 0.5, 0.5, 1.0)));
    assert_eq!(code(&r.cmd(&["audit"], &weak)), 1);
    assert_eq!(code(&r.cmd(&["front"], &weak)), 4);
}

#[test]
fn symmetric_front_stands_still() {
    let r = Run::new();
    let cfg = r.config("sym.toml", &format!("{}{FAST}", system(1.0, 1.5, 1.5, 1.0)));
    assert_eq!(code(&r.cmd(&["audit"], &cfg)), 0);
    let o = r.cmd(&["front"], &cfg);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let c = r.json("front.json")["report"]["c"].as_f64().unwrap();
    assert!(c.abs() < 1e-3, "c = {c}");
}

#[test]
fn baseline_pipeline_and_its_failure_modes() {
    let r = Run::new();
    let text = format!("{}{FAST}", system(1.0, 1.8, 1.3, 1.0));
    let cfg = r.config("base.toml", &text);
    assert_eq!(code(&r.cmd(&["audit"], &cfg)), 0);

    let o = r.cmd(&["front"], &cfg);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("c = ") && stdout.contains("residual = "));
    let front = r.json("front.json");
    let c = front["report"]["c"].as_f64().unwrap();
    assert!((c + 0.26967).abs() < 1e-3, "c = {c}");
    assert_eq!(front["config"], r.json("audit.json")["config"]);

    let o = r.cmd(&["verify"], &cfg);
    assert_eq!(code(&o), 0, "{}{}", String::from_utf8_lossy(&o.stdout), String::from_utf8_lossy(&o.stderr));
    let v = r.json("verify.json");
    assert_eq!(v["report"]["sandwich"]["violations"], 0);
    let csv = fs::read_to_string(r.out().join("stability.csv")).unwrap();
    assert!(csv.starts_with("label,t,error,shift"));

    // a hundredfold tighter tolerance is a controlled failure
    let tight = r.config("tight.toml", &text.replace("stability_t = 40.0", "stability_t = 40.0\nstability_tol = 1e-5"));
    assert_eq!(code(&r.cmd(&["verify"], &tight)), 1);
    assert_eq!(r.json("verify.json")["passed"], false);

    // a dip in the core of the table surfaces as a numerical error
    let path = r.out().join("profile.csv");
    let table = fs::read_to_string(&path).unwrap();
    let mut rows: Vec<Vec<String>> =
        table.lines().map(|l| l.split(',').map(str::to_string).collect()).collect();
    for k in 2..rows.len() {
        let u: f64 = rows[k][2].parse().unwrap();
        if rows[k][0] == rows[k - 1][0] && 0.3 < u && u < 0.7 {
            let prev: f64 = rows[k - 1][2].parse().unwrap();
            rows[k][2] = format!("{:e}", prev - 0.05);
        }
    }
    let corrupted: Vec<String> = rows.iter().map(|r| r.join(",")).collect();
    fs::write(&path, corrupted.join("\n") + "\n").unwrap();
    let o = r.cmd(&["verify"], &cfg);
    assert_eq!(code(&o), 3);
    assert!(String::from_utf8_lossy(&o.stderr).contains("not strictly increasing"));
}

fn strip_run(mut v: Value) -> Value {
    v.as_object_mut().unwrap().remove("run");
    v
}

#[test]
fn identical_inputs_give_identical_artifacts() {
    let text = format!("{}{FAST}", system(1.0, 1.8, 1.3, 1.0));
    let runs: Vec<Run> = (0..2).map(|_| Run::new()).collect();
    for r in &runs {
        let cfg = r.config("base.toml", &text);
        for cmd in ["audit", "front", "steady"] {
            assert_eq!(code(&r.cmd(&[cmd, "--seed", "11"], &cfg)), 0, "{cmd}");
        }
    }
    for name in ["audit.json", "front.json", "steady.json"] {
        assert_eq!(strip_run(runs[0].json(name)), strip_run(runs[1].json(name)), "{name}");
    }
    assert_eq!(runs[0].json("front.json")["config"]["seed"], 11);
    for name in ["profile.csv", "coexistence.csv"] {
        let a = fs::read(runs[0].out().join(name)).unwrap();
        let b = fs::read(runs[1].out().join(name)).unwrap();
        assert!(a == b, "{name} differs");
    }
}

#[test]
fn module_commands_write_their_artifacts() {
    let r = Run::new();
    let cfg = r.config("base.toml", &format!("{}{FAST}\n[simulate]\nt_total = 5.0\n", system(1.0, 1.8, 1.3, 1.0)));
    for (cmd, files) in [
        ("eigen", &["eigen.json", "eigen_species1.csv", "eigen_zero_phi2.csv"][..]),
        ("speeds", &["speeds.json", "dispersion_c1_minus.csv"][..]),
        ("steady", &["steady.json", "semitrivial.csv"][..]),
        ("transform", &["transform.json", "cooperative.csv"][..]),
        ("simulate", &["simulate.json", "simulate_track.csv", "final_state.csv"][..]),
    ] {
        let o = r.cmd(&[cmd, "--threads", "1"], &cfg);
        assert_eq!(code(&o), 0, "{cmd}: {}", String::from_utf8_lossy(&o.stderr));
        for f in files {
            assert!(r.out().join(f).exists(), "{cmd} did not write {f}");
        }
        assert_eq!(r.json(&format!("{cmd}.json"))["command"], cmd);
    }
    let eig = r.json("eigen.json");
    let mu0 = eig["report"]["mu0"].as_f64().unwrap();
    assert!((mu0 + 0.8).abs() < 1e-8, "mu0 = {mu0}");
    let sum = r.json("speeds.json")["report"]["sum"].as_f64().unwrap();
    assert!((sum - 4.0).abs() < 1e-6, "sum = {sum}");
    // CSV values carry 17 significant digits
    let phi = fs::read_to_string(r.out().join("eigen_species1.csv")).unwrap();
    let field = phi.lines().nth(2).unwrap().split(',').nth(1).unwrap();
    assert_eq!(field.split('e').next().unwrap().replace(['.', '-'], "").len(), 17, "{field}");
}
