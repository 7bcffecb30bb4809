use std::path::Path;
use std::process::{Command, Output};

fn b2mapo(root: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_b2mapo"))
        .args(args)
        .env("B2MAPO_OUTPUT_ROOT", root)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

const CONFIG: &str = r#"
[game]
builder = "chain"
agents = 3

[scheme]
mode = "b2mapo-dag"
episodes = 4
horizon = 16

[experiment]
seeds = [0, 1]
rounds = 4
oracle = "monitor"
"#;

#[test]
fn quick_verify_passes_and_writes_bounds() {
    let tmp = tempfile::tempdir().unwrap();
    let out = b2mapo(tmp.path(), &["verify", "--scale-down", "50", "--out", "v"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(tmp.path().join("v/bounds.csv")).unwrap();
    assert!(csv.starts_with("statement,seed,lhs,rhs,slack,pass,tolerance\n"));
    assert!(csv.lines().skip(1).all(|l| l.split(',').nth(5) == Some("1")));
    let report = b2mapo(tmp.path(), &["report", tmp.path().join("v").to_str().unwrap()]);
    assert_eq!(code(&report), 0);
    assert!(String::from_utf8_lossy(&report.stdout).contains("bounds: PASS"));
}

#[test]
fn train_reruns_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("c.toml");
    std::fs::write(&cfg, CONFIG).unwrap();
    let cfg = cfg.to_str().unwrap();
    for dir in ["a", "b"] {
        let out = b2mapo(tmp.path(), &["train", "--config", cfg, "--out", dir]);
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    }
    for f in [
        "manifest.txt",
        "summary.csv",
        "seed_0/metrics.csv",
        "seed_1/metrics.csv",
        "seed_0/batches.csv",
        "seed_1/policy.txt",
    ] {
        let a = std::fs::read(tmp.path().join("a").join(f)).unwrap();
        let b = std::fs::read(tmp.path().join("b").join(f)).unwrap();
        assert_eq!(a, b, "{f} differs");
    }
    let metrics = std::fs::read_to_string(tmp.path().join("a/seed_0/metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 5);
}

#[test]
fn overrides_replace_config_values() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("c.toml");
    std::fs::write(&cfg, CONFIG).unwrap();
    let out = b2mapo(
        tmp.path(),
        &[
            "train", "--config", cfg.to_str().unwrap(), "--seeds", "7,9", "--rounds", "2", "--mode", "a2po", "--oracle",
            "exact", "--timings",
        ],
    );
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let run = tmp.path().join("run");
    assert!(!run.join("seed_0").exists() && run.join("seed_9").is_dir());
    let manifest = std::fs::read_to_string(run.join("manifest.txt")).unwrap();
    assert!(manifest.contains("mode a2po") && manifest.contains("oracle exact") && manifest.contains("seeds 7 9"));
    let metrics = std::fs::read_to_string(run.join("seed_7/metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 3);
    // a2po updates the three agents one at a time
    let timings = std::fs::read_to_string(run.join("seed_7/timings.csv")).unwrap();
    let last = timings.lines().last().unwrap();
    assert_eq!(last.split(',').nth(4).unwrap().split(' ').count(), 3);

    let out = b2mapo(tmp.path(), &["train", "--config", cfg.to_str().unwrap(), "--mode", "happo"]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("scheme.mode"));
}

#[test]
fn config_errors_exit_2_and_name_the_key() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("bad.toml");
    std::fs::write(&cfg, "[scheme]\nclip = -1.0\n").unwrap();
    let out = b2mapo(tmp.path(), &["train", "--config", cfg.to_str().unwrap()]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("scheme.clip"));

    let out = b2mapo(tmp.path(), &["train", "--config", "/nonexistent.toml"]);
    assert_eq!(code(&out), 2);
    let out = b2mapo(tmp.path(), &["train"]);
    assert_eq!(code(&out), 2);
}

#[test]
fn partition_prints_sequences() {
    let tmp = tempfile::tempdir().unwrap();
    let graph = tmp.path().join("g.txt");
    std::fs::write(&graph, "n 4\n0 1 0.9\n1 2\n# comment\n2 3 0.5\n").unwrap();
    let g = graph.to_str().unwrap();
    let out = b2mapo(tmp.path(), &["partition", g]);
    assert_eq!(code(&out), 0);
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("batches 2"), "{text}");
    assert!(text.contains("bruteforce 2 greedy 2 layered 4") && text.contains("agree yes"), "{text}");
    let out = b2mapo(tmp.path(), &["partition", g, "--method", "layer"]);
    assert!(String::from_utf8_lossy(&out.stdout).contains("sequence 0;1;2;3"));

    std::fs::write(&graph, "n 2\n0 5\n").unwrap();
    let out = b2mapo(tmp.path(), &["partition", g]);
    assert_eq!(code(&out), 2);
}

#[test]
fn report_on_empty_dir_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    let out = b2mapo(tmp.path(), &["report", tmp.path().to_str().unwrap()]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("metrics.csv"));
}

#[test]
fn bench_writes_one_row_per_mode() {
    let tmp = tempfile::tempdir().unwrap();
    let out = b2mapo(tmp.path(), &["bench", "--agents", "3", "--rounds", "2", "--warmup", "0"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(tmp.path().join("bench/bench.csv")).unwrap();
    let modes: Vec<&str> = csv.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(modes, ["mappo", "b2mapo-dag", "a2po"]);
}
