use std::path::Path;

use assert_cmd::Command;

fn fairpfn() -> Command {
    Command::cargo_bin("fairpfn").unwrap()
}

fn stdout(cmd: &mut Command) -> String {
    String::from_utf8(cmd.assert().success().get_output().stdout.clone()).unwrap()
}

fn bench(dir: &Path, count: usize) -> String {
    stdout(fairpfn().args(["--seed", "3", "--out"]).arg(dir).args(["bench", "--count"]).arg(count.to_string()))
}

#[test]
fn usage_errors_exit_with_two() {
    fairpfn().arg("frobnicate").assert().code(2);
    fairpfn().args(["bench", "--cases", "nonsense"]).assert().code(2);
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    std::fs::write(&cfg, "{ not json").unwrap();
    fairpfn().arg("--config").arg(&cfg).arg("--out").arg(dir.path().join("b")).arg("bench").assert().code(2);
}

#[test]
fn missing_inputs_exit_with_three() {
    let dir = tempfile::tempdir().unwrap();
    fairpfn()
        .arg("--out")
        .arg(dir.path().join("r"))
        .args(["eval", "--bench"])
        .arg(dir.path().join("nowhere"))
        .assert()
        .code(3);
}

#[test]
fn bench_count_and_refusal() {
    let dir = tempfile::tempdir().unwrap();
    let b = dir.path().join("bench");
    let first = bench(&b, 5);
    assert!(first.contains("30 instances"), "{first}");
    fairpfn().args(["--seed", "3", "--out"]).arg(&b).args(["bench", "--count", "5"]).assert().code(3);
    let again = stdout(fairpfn().args(["--seed", "3", "--force", "--exec", "sequential", "--out"]).arg(&b).args(["bench", "--count", "5"]));
    let hash = |s: &str| s.lines().find(|l| l.starts_with("manifest")).unwrap().to_string();
    assert_eq!(hash(&first), hash(&again));
    assert!(b.join("config.json").exists());
}

#[test]
fn eval_rerun_and_report() {
    let dir = tempfile::tempdir().unwrap();
    let b = dir.path().join("bench");
    bench(&b, 2);
    let out = dir.path().join("results");
    let eval = |run: &str| {
        fairpfn()
            .arg("--out")
            .arg(&out)
            .args(["eval", "--bench"])
            .arg(&b)
            .args(["--methods", "constant,unfair,level2", "--run-id", run])
            .assert()
            .success();
    };
    eval("a");
    eval("b");
    let text = std::fs::read_to_string(out.join("results.csv")).unwrap();
    let mut lines = text.lines();
    let header = lines.next().unwrap();
    assert!(header.starts_with("run_id,"));
    let rows: Vec<&str> = lines.collect();
    let (a, b_rows): (Vec<&str>, Vec<&str>) = rows.iter().partition(|l| l.starts_with("a,"));
    assert_eq!(a.len(), b_rows.len());
    for (x, y) in a.iter().zip(&b_rows) {
        assert_eq!(x[2..], y[2..]);
    }
    for line in &a {
        let f: Vec<&str> = line.split(',').collect();
        if f[3] == "constant" && f[4] == "tce" {
            assert_eq!(f[5], "0");
        }
        if f[3] == "level2" && f[2] == "biased" {
            assert_eq!(f[5], "n/a");
        }
    }

    let report = dir.path().join("report");
    let printed = stdout(
        fairpfn()
            .arg("--out")
            .arg(&report)
            .args(["report", "--results"])
            .arg(out.join("results.csv"))
            .arg("--bench")
            .arg(&b),
    );
    assert!(printed.contains("biased"), "{printed}");
    for f in ["aggregates.csv", "pareto.json", "plot_data.json", "report_manifest.json"] {
        assert!(report.join(f).exists(), "{f}");
    }
}

#[test]
fn train_writes_checkpoint_and_checks_trend() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("train.json");
    std::fs::write(
        &cfg,
        r#"{"steps": 40, "datasets_per_step": 2, "base_lr": 0.002,
            "prior": {"n_samples": [40, 80]},
            "model": {"layers": 1, "heads": 2, "width": 8, "ff_width": 16}}"#,
    )
    .unwrap();
    let ck = dir.path().join("m.fpfn");
    let printed = stdout(
        fairpfn()
            .args(["--seed", "1", "--assert", "--config"])
            .arg(&cfg)
            .arg("--out")
            .arg(&ck)
            .args(["train", "--log-every", "100"]),
    );
    assert!(printed.contains("method fairpfn") && printed.contains("PASS loss trend"), "{printed}");
    assert!(ck.exists() && dir.path().join("m.loss.csv").exists() && dir.path().join("m.config.json").exists());
    // Existing checkpoint is kept without --force.
    fairpfn().arg("--config").arg(&cfg).arg("--out").arg(&ck).arg("train").assert().code(3);

    let biased = dir.path().join("u.fpfn");
    let printed = stdout(
        fairpfn()
            .arg("--config")
            .arg(&cfg)
            .arg("--out")
            .arg(&biased)
            .args(["train", "--steps", "2", "--target-mode", "biased"]),
    );
    assert!(printed.contains("method pfn-unfair"), "{printed}");
}

#[test]
fn prior_sample_writes_pairs() {
    let dir = tempfile::tempdir().unwrap();
    fairpfn()
        .args(["--seed", "4", "--out"])
        .arg(dir.path())
        .args(["prior", "sample", "--count", "2"])
        .assert()
        .success();
    let scm = std::fs::read_dir(dir.path())
        .unwrap()
        .filter(|e| e.as_ref().unwrap().file_name().to_string_lossy().ends_with(".scm.json"))
        .count();
    assert_eq!(scm, 2);
}
