//! End-to-end runs of the `sa-lab` binary on small configs.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

const SYNTHETIC: &str = "\
[problem]
kind = synthetic
alpha = 0.6
x_star = 1, -0.5
sigma = 0.5

[schedule]
rule = power
d3 = 1
d2 = 0.8

[run]
n0 = 10
T = 300
n_trajectories = 40
seed = 3
x0 = 2, 2
deltas = 0.1, 0.5

[bound]
D = 2.5
samples = 200

[verify]
check_samples = 300
";

fn data_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs/data")
}

fn write_config(dir: &TempDir, name: &str, text: &str) -> PathBuf {
    let path = dir.path().join(name);
    fs::write(&path, text.replace("@DATA@", data_dir().to_str().unwrap())).unwrap();
    path
}

fn run(args: &[&str], config: &Path, out: &Path, workers: Option<&str>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_sa-lab"));
    cmd.args(args).arg("--config").arg(config).arg("--out").arg(out);
    match workers {
        Some(w) => cmd.env("SA_LAB_WORKERS", w),
        None => cmd.env_remove("SA_LAB_WORKERS"),
    };
    cmd.output().expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn simulate_is_byte_identical_across_worker_counts() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(&dir, "s.conf", SYNTHETIC);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert_eq!(run(&["simulate"], &cfg, &a, Some("1")).status.code(), Some(0));
    assert_eq!(run(&["simulate"], &cfg, &b, Some("3")).status.code(), Some(0));
    for f in ["summary.csv", "simulate.json", "README.md"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    let csv = fs::read_to_string(a.join("summary.csv")).unwrap();
    assert!(csv.starts_with("seed,sup_dist_after_n0,envelope_violated\n"));
    assert_eq!(csv.lines().count(), 41);
}

#[test]
fn seed_flag_changes_the_campaign() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(&dir, "s.conf", SYNTHETIC);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    run(&["simulate"], &cfg, &a, None);
    let o = Command::new(env!("CARGO_BIN_EXE_sa-lab"))
        .args(["simulate", "--seed", "99", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&b)
        .output()
        .unwrap();
    assert!(o.status.success());
    assert_ne!(fs::read(a.join("summary.csv")).unwrap(), fs::read(b.join("summary.csv")).unwrap());
}

#[test]
fn bound_writes_curves_and_report() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(&dir, "s.conf", SYNTHETIC);
    let out = dir.path().join("bound");
    let o = run(&["bound"], &cfg, &out, None);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let curves = fs::read_to_string(out.join("curves.csv")).unwrap();
    assert!(curves.starts_with("delta,branch,n,envelope,failure_bound\n"));
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["report"]["d"]["provenance"], "declared");
    assert!(report["report"]["c1"]["value"].as_f64().unwrap() > 0.0);
}

#[test]
fn bound_without_d_is_a_config_error() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(&dir, "s.conf", &SYNTHETIC.replace("D = 2.5\n", ""));
    let o = run(&["bound"], &cfg, &dir.path().join("o"), None);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("bound.D"), "{}", stderr(&o));
}

#[test]
fn calibrate_d_writes_a_tagged_value() {
    let dir = TempDir::new().unwrap();
    let text = SYNTHETIC
        .replace("D = 2.5", "D = calibrate\ncalibration_trajectories = 100")
        .replace("T = 300", "T = 200");
    let cfg = write_config(&dir, "s.conf", &text);
    let out = dir.path().join("cal");
    let o = run(&["calibrate-d"], &cfg, &out, None);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let d = fs::read_to_string(out.join("d.txt")).unwrap();
    assert!(d.contains("calibrated"), "{d}");
}

#[test]
fn verify_passes_on_the_synthetic_family() {
    let dir = TempDir::new().unwrap();
    let text = SYNTHETIC.replace("T = 300", "T = 2000");
    let cfg = write_config(&dir, "s.conf", &text);
    let out = dir.path().join("v");
    let o = run(&["verify"], &cfg, &out, None);
    assert_eq!(o.status.code(), Some(0), "{}\n{}", String::from_utf8_lossy(&o.stdout), stderr(&o));
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("verify.json")).unwrap()).unwrap();
    let items = v["items"].as_array().unwrap();
    assert!(items.iter().any(|i| i["name"] == "pathwise_envelope"));
    assert!(items.iter().all(|i| i["status"] != "fail"));
}

#[test]
fn verify_reports_td_fixed_point() {
    let dir = TempDir::new().unwrap();
    let text = "\
[problem]
kind = td0
chain = @DATA@/td_chain.txt
costs = @DATA@/td_costs.txt
features = @DATA@/td_features.txt
gamma = 0.5

[schedule]
rule = harmonic
b = 8

[run]
T = 2000
n_trajectories = 30
seed = 7
";
    let cfg = write_config(&dir, "td.conf", text);
    let out = dir.path().join("v");
    let o = run(&["verify"], &cfg, &out, None);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stdout));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("fixed_point_oracle"));
    assert!(stdout.contains("bound_domination"));
}

#[test]
fn infeasible_stitch_exits_with_three() {
    let dir = TempDir::new().unwrap();
    let text = format!("{SYNTHETIC}\n[stitch]\nc = 1\nexponent = 1\nk_breve = 1\nnu = 0.1\neps = 0.01\ndelta = 0.1\n");
    let cfg = write_config(&dir, "s.conf", &text);
    let o = run(&["bound"], &cfg, &dir.path().join("o"), None);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    assert!(stderr(&o).contains("floor"), "{}", stderr(&o));
}

#[test]
fn config_errors_name_line_and_field() {
    let dir = TempDir::new().unwrap();
    let cases = [
        (SYNTHETIC.replace("n_trajectories = 40", "n_trajectories = forty"), "run.n_trajectories"),
        (SYNTHETIC.replace("deltas = 0.1, 0.5", "deltas = 0.1, -1"), "run.deltas"),
        (SYNTHETIC.replace("kind = synthetic", "kind = bandit"), "problem.kind"),
        (SYNTHETIC.replace("[bound]", "[bonud]"), "bonud"),
    ];
    for (text, field) in cases {
        let cfg = write_config(&dir, "bad.conf", &text);
        let o = run(&["simulate"], &cfg, &dir.path().join("o"), None);
        assert_eq!(o.status.code(), Some(2), "{field}");
        let err = stderr(&o);
        assert!(err.contains(field) && err.contains("line"), "{field}: {err}");
    }
}

#[test]
fn missing_data_file_is_reported() {
    let dir = TempDir::new().unwrap();
    let text = "[problem]\nkind = qlearning\nmdp = nowhere.txt\n[schedule]\nrule = harmonic\nb = 1\n[run]\nT = 10\nn_trajectories = 1\n";
    let cfg = write_config(&dir, "q.conf", text);
    let o = run(&["verify"], &cfg, &dir.path().join("o"), None);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("nowhere.txt"), "{}", stderr(&o));
}
