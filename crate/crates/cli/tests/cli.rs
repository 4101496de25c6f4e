use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const SMALL: &str = r#"
id = "small"
strategy = "adaptsfl"
seed = 1
rounds = 20

[model]
dims = [4, 8, 6, 3]
samples = 120

[network]
n_devices = 3

[estimate]
probe_rounds = 2
samples = 2
"#;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_adaptsfl")).args(args).output().unwrap()
}

fn small_config(dir: &Path) -> String {
    let path = dir.join("small.toml");
    fs::write(&path, SMALL).unwrap();
    path.to_str().unwrap().to_string()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn optimize_writes_trace_and_solution() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let out = dir.path().join("o");
    let res = run(&["optimize", "--scenario", &cfg, "--out-dir", s(&out)]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let trace = fs::read_to_string(out.join("trace.csv")).unwrap();
    assert!(trace.starts_with("reopt,iter,interval,objective,lambda"));
    assert!(trace.lines().count() >= 2);
    let solution = fs::read_to_string(out.join("solution.csv")).unwrap();
    let mut lines = solution.lines();
    assert_eq!(lines.next().unwrap(), "interval,objective,c_1,c_2,c_3");
    let row: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert!(row[0].parse::<u64>().unwrap() >= 1);
    assert!(row[2..].iter().all(|c| (1..=3).contains(&c.parse::<usize>().unwrap())));
    assert_eq!(String::from_utf8(res.stdout).unwrap(), solution);
}

#[test]
fn optimize_accepts_a_profile_csv_and_trace_path() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let profile = dir.path().join("profile.csv");
    fs::write(
        &profile,
        "layer,fp_flops_cum,bp_flops_cum,act_bits,grad_bits,param_bits_cum,sigma_sq,g_sq\n\
         1,1e9,2e9,1e7,1e7,1e5,0.01,0.05\n\
         2,2e9,4e9,5e6,5e6,1e6,0.01,0.04\n",
    )
    .unwrap();
    let trace = dir.path().join("t.csv");
    let res = run(&[
        "optimize",
        "--config",
        &cfg,
        "--profile",
        s(&profile),
        "--eps",
        "1.0",
        "--out",
        s(&trace),
        "--out-dir",
        s(dir.path()),
    ]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    assert!(trace.exists());
}

#[test]
fn unreachable_target_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let res = run(&["optimize", "--config", &cfg, "--eps", "1e-12", "--out-dir", s(dir.path())]);
    assert_eq!(res.status.code(), Some(2));
    let res = run(&["bound", "--config", &cfg, "--eps", "1e-12"]);
    assert_eq!(res.status.code(), Some(2));
}

#[test]
fn other_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.toml");
    assert_eq!(run(&["simulate", "--config", s(&missing)]).status.code(), Some(1));
    assert_eq!(run(&["sweep", "--out-dir", s(dir.path())]).status.code(), Some(1));
    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "rounds = 0\n").unwrap();
    assert_eq!(run(&["simulate", "--config", s(&bad)]).status.code(), Some(1));
}

#[test]
fn bound_prints_labeled_terms() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let res = run(&["bound", "--config", &cfg, "--interval", "4", "--cut", "2", "--rounds", "50"]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let text = String::from_utf8(res.stdout).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "term,value");
    let value = |name: &str| -> f64 {
        text.lines()
            .find_map(|l| l.strip_prefix(&format!("{name},")))
            .unwrap_or_else(|| panic!("missing {name}"))
            .parse()
            .unwrap()
    };
    let total = value("optimization") + value("noise") + value("drift");
    assert!((value("total") - total).abs() <= 1e-12 * total);
    assert!(value("drift") > 0.0);
    assert!(value("min_rounds") > 0.0);
}

#[test]
fn simulate_is_reproducible_and_honours_the_seed() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let (a, b, c) = (dir.path().join("a"), dir.path().join("b"), dir.path().join("c"));
    for out in [&a, &b] {
        let res = run(&["simulate", "--config", &cfg, "--out-dir", s(out)]);
        assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    }
    assert!(run(&["simulate", "--config", &cfg, "--seed", "9", "--out-dir", s(&c)]).status.success());
    for name in ["loss.csv", "events.csv", "trace.csv", "config.toml"] {
        assert_eq!(fs::read(a.join(name)).unwrap(), fs::read(b.join(name)).unwrap(), "{name}");
    }
    let loss = fs::read_to_string(a.join("loss.csv")).unwrap();
    assert!(loss.starts_with("round,loss,drift_max,wallclock_model_seconds"));
    assert_eq!(loss.lines().count(), 21);
    assert!(fs::read_to_string(a.join("events.csv")).unwrap().starts_with("round,step,device,start_s,end_s"));
    assert_ne!(loss, fs::read_to_string(c.join("loss.csv")).unwrap());
}

#[test]
fn sweep_writes_summary_and_runs() {
    let dir = tempfile::tempdir().unwrap();
    let base: String = SMALL
        .lines()
        .map(|l| match l.strip_prefix('[') {
            Some(rest) => format!("[base.{rest}\n"),
            None => format!("{l}\n"),
        })
        .collect();
    let base = base.replace("strategy = \"adaptsfl\"\n", "");
    let text = format!("strategies = [\"adaptsfl\", \"rma+rms\"]\nseeds = [0, 1]\n[base]\n{base}");
    let path = dir.path().join("sweep.toml");
    fs::write(&path, text).unwrap();
    let out = dir.path().join("out");
    let res = run(&["sweep", "--config", s(&path), "--out-dir", s(&out)]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let runs = fs::read_to_string(out.join("runs.csv")).unwrap();
    assert_eq!(runs.lines().count(), 5);
    let summary = fs::read_to_string(out.join("summary.csv")).unwrap();
    assert!(summary.contains("adaptsfl") && summary.contains("rma+rms"));
}
