use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_parabolic-ocp"))
}

struct Run {
    dir: TempDir,
    config: PathBuf,
}

impl Run {
    /// Writes `body` (a JSON object without the output block) as the config.
    fn new(body: &str) -> Run {
        let dir = tempfile::tempdir().unwrap();
        let config = dir.path().join("run.json");
        let out = dir.path().join("out");
        let text = format!("{{\n  \"output\": {{ \"directory\": {:?} }},\n{body}\n}}\n", out.display().to_string());
        fs::write(&config, text).unwrap();
        Run { dir, config }
    }

    fn out(&self) -> PathBuf {
        self.dir.path().join("out")
    }

    fn cmd(&self, sub: &str, extra: &[&str]) -> Output {
        bin().arg(sub).arg("--config").arg(&self.config).args(extra).output().unwrap()
    }

    fn report(&self, name: &str) -> Value {
        serde_json::from_str(&fs::read_to_string(self.out().join(name)).unwrap()).unwrap()
    }
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const LQ: &str = r#"  "problem": { "preset": "lq_interior" },
  "grid": { "nodes": [17], "steps": 16 },
  "conditions": { "n_samples": 50 },
  "seed": 2"#;

#[test]
fn solve_writes_the_triplet_and_history() {
    let r = Run::new(LQ);
    let o = r.cmd("solve", &[]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    for f in ["u.txt", "y.txt", "phi.txt", "mu_q.txt", "mu_terminal.txt", "history.json", "solve_report.json"] {
        assert!(r.out().join(f).exists(), "{f} missing");
    }
    let rep = r.report("solve_report.json");
    assert_eq!(rep["status"], "converged");
    assert_eq!(rep["config"]["problem"]["preset"], "lq_interior");
    assert_eq!(rep["config"]["grid"]["nodes"][0], 17);
    let u = fs::read_to_string(r.out().join("u.txt")).unwrap();
    assert!(u.starts_with("n=1 nodes=17 T=1 N_t=16 rows=17\n"));
}

#[test]
fn malformed_config_reports_the_line() {
    let r = Run::new("  \"problem\": { \"preset\": \"lq_interior\", }");
    let o = r.cmd("solve", &[]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("line 3"), "{}", stderr(&o));
    let r = Run::new("  \"problem\": { \"preset\": \"lq_interior\" },\n  \"grids\": {}");
    let o = r.cmd("solve", &[]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("unknown field `grids`"), "{}", stderr(&o));
}

#[test]
fn usage_errors_exit_with_one() {
    assert_eq!(code(&bin().output().unwrap()), 1);
    assert_eq!(code(&bin().arg("solve").output().unwrap()), 1);
    assert_eq!(code(&bin().args(["solve", "--config", "/nonexistent/run.json"]).output().unwrap()), 1);
    let r = Run::new(LQ);
    assert_eq!(code(&r.cmd("solve", &["--bogus"])), 1);
    assert_eq!(code(&r.cmd("solve", &["--seed", "minus one"])), 1);
    assert_eq!(code(&bin().arg("--help").output().unwrap()), 0);
}

#[test]
fn forced_stall_exits_with_two() {
    let r = Run::new(&format!("{LQ},\n  \"solver\": {{ \"max_stages\": 0 }}"));
    let o = r.cmd("solve", &[]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
    assert_eq!(r.report("solve_report.json")["status"], "stalled");
}

#[test]
fn kkt_check_passes_then_fails_on_tampered_multipliers() {
    let r = Run::new(
        r#"  "problem": { "preset": "state_active" },
  "grid": { "nodes": [17], "steps": 16 },
  "solver": { "lambda0": 10.0 }"#,
    );
    assert_eq!(code(&r.cmd("solve", &[])), 0);
    let o = r.cmd("check-kkt", &[]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));
    assert_eq!(r.report("kkt_report.json")["report"]["pass"], true);
    // move every mass one level earlier: off the active set
    let p = r.out().join("mu_q.txt");
    let text = fs::read_to_string(&p).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    let zeros = lines[1];
    let shifted: Vec<&str> = [lines[0], zeros].into_iter().chain(lines[3..].iter().copied()).chain([zeros]).collect();
    fs::write(&p, shifted.join("\n") + "\n").unwrap();
    assert_eq!(code(&r.cmd("check-kkt", &[])), 3);
    fs::remove_file(&p).unwrap();
    let o = r.cmd("check-kkt", &[]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("mu_q.txt"), "{}", stderr(&o));
}

#[test]
fn negative_masses_fail_the_sign_check() {
    let r = Run::new(
        r#"  "problem": { "preset": "state_active" },
  "grid": { "nodes": [17], "steps": 16 },
  "solver": { "lambda0": 10.0 }"#,
    );
    assert_eq!(code(&r.cmd("solve", &[])), 0);
    let p = r.out().join("mu_q.txt");
    let text = fs::read_to_string(&p).unwrap();
    let flipped: String = text
        .lines()
        .enumerate()
        .map(|(i, l)| {
            if i == 0 {
                l.to_string()
            } else {
                l.split(' ').map(|v| format!("{:?}", -v.parse::<f64>().unwrap())).collect::<Vec<_>>().join(" ")
            }
        })
        .collect::<Vec<_>>()
        .join("\n");
    fs::write(&p, flipped + "\n").unwrap();
    assert_eq!(code(&r.cmd("check-kkt", &[])), 3);
    assert!(r.report("kkt_report.json")["report"]["sign_violation"].as_f64().unwrap() > 0.0);
}

#[test]
fn ssc_exit_codes() {
    let convex = Run::new(LQ);
    assert_eq!(code(&convex.cmd("solve", &[])), 0);
    assert_eq!(code(&convex.cmd("check-ssc", &[])), 0);
    let rep = convex.report("ssc_report.json");
    assert!(rep["reports"][0]["min_ratio"].as_f64().unwrap() >= 0.1 - 1e-8);

    let indefinite = Run::new(
        r#"  "problem": { "preset": "indefinite" },
  "grid": { "nodes": [9], "steps": 8 },
  "conditions": { "n_samples": 20 }"#,
    );
    assert_eq!(code(&indefinite.cmd("solve", &[])), 0);
    assert_eq!(code(&indefinite.cmd("check-ssc", &[])), 3);
    assert!(indefinite.report("ssc_report.json")["reports"][0]["min_ratio"].as_f64().unwrap() < 0.0);

    // every control node strongly active at the upper bound
    let boxed = Run::new(
        r#"  "problem": { "preset": "lq_interior", "bounds": [-0.01, 0.01] },
  "grid": { "nodes": [9], "steps": 8 },
  "conditions": { "n_samples": 5 }"#,
    );
    assert_eq!(code(&boxed.cmd("solve", &[])), 0);
    let o = boxed.cmd("check-ssc", &[]);
    assert_eq!(code(&o), 4, "{}", stderr(&o));
}

#[test]
fn gradcheck_exit_codes() {
    let body = r#"  "problem": { "preset": "cubic" },
  "grid": { "nodes": [17], "steps": 16 },
  "gradcheck": { "control": "2 * sin(pi * x) * t" }"#;
    let r = Run::new(body);
    let o = r.cmd("gradcheck", &[]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));
    assert!(r.report("gradcheck_report.json")["report"]["max_relative_error"].as_f64().unwrap() <= 1e-5);

    let broken = Run::new(&body.replace("\"control\"", "\"adjoint_scale\": 1.5, \"control\""));
    assert_eq!(code(&broken.cmd("gradcheck", &[])), 3);

    let no_tikhonov = Run::new(&body.replace("\"preset\": \"cubic\"", "\"preset\": \"cubic\", \"nu\": 0"));
    let o = no_tikhonov.cmd("gradcheck", &[]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("Tikhonov"), "{}", stderr(&o));
}

#[test]
fn convergence_command() {
    let r = Run::new(
        r#"  "problem": { "preset": "manufactured" },
  "convergence": {
    "levels": [{ "nodes": 9, "steps": 16 }, { "nodes": 17, "steps": 16 }, { "nodes": 33, "steps": 16 }],
    "isolate": "space"
  }"#,
    );
    assert_eq!(code(&r.cmd("convergence", &[])), 0);
    assert!(r.report("convergence_report.json")["min_order_h"].as_f64().unwrap() >= 1.9);

    let single = Run::new(
        r#"  "problem": { "preset": "manufactured" },
  "convergence": { "levels": [{ "nodes": 9, "steps": 8 }] }"#,
    );
    assert_eq!(code(&single.cmd("convergence", &[])), 0);
    let rep = single.report("convergence_report.json");
    assert!(rep["table"]["levels"][0]["order_h"].is_null());
    assert!(rep["min_order_h"].is_null());

    let bad = Run::new(
        r#"  "problem": { "preset": "manufactured" },
  "convergence": { "levels": [{ "nodes": 9, "steps": 8 }, { "nodes": 12, "steps": 8 }] }"#,
    );
    assert_eq!(code(&bad.cmd("convergence", &[])), 1);
}

fn read_all(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<(String, Vec<u8>)> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let p = e.unwrap().path();
            (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap())
        })
        .collect();
    v.sort();
    v
}

#[test]
fn repeated_runs_are_byte_identical_and_seed_overrides_apply() {
    let r = Run::new(
        r#"  "problem": { "preset": "state_active" },
  "grid": { "nodes": [17], "steps": 16 },
  "solver": { "lambda0": 10.0 },
  "conditions": { "n_samples": 40 },
  "seed": 4"#,
    );
    let mut snaps = Vec::new();
    for seed in ["4", "4", "5"] {
        for sub in ["solve", "check-ssc"] {
            assert_eq!(code(&r.cmd(sub, &["--seed", seed])), 0);
        }
        snaps.push(read_all(&r.out()));
    }
    assert_eq!(snaps[0], snaps[1]);
    assert_ne!(snaps[0], snaps[2]);
    assert_eq!(r.report("ssc_report.json")["config"]["seed"], 5);
}

#[test]
fn quiet_suppresses_progress_output() {
    let r = Run::new(LQ);
    let loud = r.cmd("solve", &[]);
    assert!(!loud.stdout.is_empty());
    let quiet = r.cmd("solve", &["--quiet"]);
    assert_eq!(code(&quiet), 0);
    assert!(quiet.stdout.is_empty());
}

#[test]
fn out_flag_overrides_the_configured_directory() {
    let r = Run::new(LQ);
    let other = r.dir.path().join("elsewhere");
    assert_eq!(code(&r.cmd("solve", &["--out", other.to_str().unwrap()])), 0);
    assert!(other.join("u.txt").exists());
    assert!(!r.out().exists());
}
