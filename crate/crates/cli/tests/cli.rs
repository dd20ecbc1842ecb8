use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use whittle_bandit::config::ExperimentConfig;

fn bin() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_whittle-bandit"));
    cmd.env_remove("WHITTLE_THREADS");
    cmd
}

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

fn write_config(dir: &Path, name: &str, json: &str) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, json).unwrap();
    path
}

fn records(path: &Path) -> (csv::StringRecord, Vec<csv::StringRecord>) {
    let mut r = csv::Reader::from_path(path).unwrap();
    let header = r.headers().unwrap().clone();
    let rows = r.records().collect::<Result<Vec<_>, _>>().unwrap();
    (header, rows)
}

#[test]
fn help_and_version_exit_zero() {
    let o = run(&["--help"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("simulate"));
    assert_eq!(run(&["--version"]).status.code(), Some(0));
}

#[test]
fn usage_errors_exit_two() {
    assert_eq!(run(&[]).status.code(), Some(2));
    assert_eq!(run(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(run(&["index"]).status.code(), Some(2));
    let fig = fixture("fig2a.json");
    let o = run(&["simulate", "--config", fig.to_str().unwrap(), "--beta", "0.9", "--average"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn unknown_suite_exits_two() {
    let o = run(&["verify", "bogus"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("bogus"));
}

#[test]
fn missing_config_file_exits_two() {
    let o = run(&["index", "--config", "/nonexistent/cfg.json", "--pi", "0.5"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("/nonexistent/cfg.json"));
}

#[test]
fn malformed_config_names_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let bad_type = write_config(dir.path(), "a.json", r#"{"schema_version": 1, "arms": [{"kind": "A", "p": "x", "rho0": 0.1, "rho1": 0.5}]}"#);
    let o = run(&["index", "--config", bad_type.to_str().unwrap(), "--pi", "0.5"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("arms[0].p"), "{}", stderr(&o));

    let unknown = write_config(dir.path(), "b.json", r#"{"schema_version": 1, "horizon": 10, "speed": 2}"#);
    let o = run(&["simulate", "--config", unknown.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("speed"), "{}", stderr(&o));

    let bad_value = write_config(
        dir.path(),
        "c.json",
        r#"{"schema_version": 1, "arms": [{"kind": "B", "p": 0.1, "rho0": 0.8, "rho1": 0.5}]}"#,
    );
    let o = run(&["index", "--config", bad_value.to_str().unwrap(), "--pi", "0.5"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("arms[0]"), "{}", stderr(&o));

    let version = write_config(dir.path(), "d.json", r#"{"schema_version": 7}"#);
    let o = run(&["simulate", "--config", version.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("schema_version"), "{}", stderr(&o));
}

#[test]
fn invalid_thread_count_exits_two() {
    let o = bin().args(["verify", "vanishing-discount"]).env("WHITTLE_THREADS", "many").output().unwrap();
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("WHITTLE_THREADS"));
}

#[test]
fn failing_suite_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "v.json", r#"{"schema_version": 1, "verify": {"models_per_family": 1, "grid_size": 3}}"#);
    let out = dir.path().join("checks.csv");
    let o = run(&["verify", "oracle", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
    assert!(stdout(&o).lines().all(|l| l.starts_with("[FAIL]")));
    let (header, rows) = records(&out);
    assert_eq!(&header, vec!["check", "passed", "detail"]);
    assert_eq!(rows.len(), 4);
}

#[test]
fn passing_suite_exits_zero() {
    let o = run(&["verify", "vanishing-discount"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).lines().all(|l| l.starts_with("[PASS]")));
}

#[test]
fn index_average_on_type_b_is_rho1() {
    let fig = fixture("fig2b.json");
    let o = run(&["index", "--config", fig.to_str().unwrap(), "--pi", "0.1,0.5,0.9", "--average"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let rho1 = ExperimentConfig::load(&fig).unwrap().arms.unwrap()[4].rho1;
    let mut r = csv::Reader::from_reader(o.stdout.as_slice());
    let mut seen = 0;
    for rec in r.records() {
        let rec = rec.unwrap();
        if &rec[1] == "B" {
            assert_eq!(&rec[3], "average");
            assert_eq!(rec[4].parse::<f64>().unwrap(), rho1);
            seen += 1;
        }
    }
    assert_eq!(seen, 3);
}

#[test]
fn index_uses_configured_beliefs_and_beta_override() {
    let fig = fixture("fig2c.json");
    let o = run(&["index", "--config", fig.to_str().unwrap(), "--beta", "0.9"]);
    assert_eq!(o.status.code(), Some(0));
    let mut r = csv::Reader::from_reader(o.stdout.as_slice());
    let rows: Vec<_> = r.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 11 * 5);
    assert!(rows.iter().all(|r| &r[3] == "discounted:0.9"));
}

#[test]
fn index_rejects_out_of_range_belief() {
    let fig = fixture("fig2c.json");
    let o = run(&["index", "--config", fig.to_str().unwrap(), "--pi", "1.5"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn simulate_csv_is_deterministic_across_runs_and_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    let fig = fixture("fig2c.json");
    let mut outputs = Vec::new();
    for threads in ["1", "4", "4"] {
        let out = dir.path().join(format!("runs-{}.csv", outputs.len()));
        let o = bin()
            .args(["simulate", "--config", fig.to_str().unwrap(), "--out", out.to_str().unwrap()])
            .env("WHITTLE_THREADS", threads)
            .output()
            .unwrap();
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
        let summary = std::fs::read(dir.path().join(format!("runs-{}.summary.csv", outputs.len()))).unwrap();
        assert_eq!(summary, o.stdout);
        outputs.push((std::fs::read(&out).unwrap(), o.stdout));
    }
    assert!(outputs.windows(2).all(|w| w[0] == w[1]));
    let text = String::from_utf8(outputs[0].0.clone()).unwrap();
    assert!(text.starts_with("run_id,seed,t,policy,arm,reward,cumulative\r\n"));
    assert_eq!(text.lines().count(), 1 + 2 * 100 * 800);
}

#[test]
fn simulate_single_seed_override() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("one.csv");
    let fig = fixture("fig2a.json");
    let o = run(&["simulate", "--config", fig.to_str().unwrap(), "--seed", "7", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    let (_, rows) = records(&out);
    assert_eq!(rows.len(), 2 * 800);
    assert!(rows.iter().all(|r| &r[1] == "7"));
    let last = rows.iter().rfind(|r| &r[3] == "whittle").unwrap();
    let total: u64 = rows.iter().filter(|r| &r[3] == "whittle").map(|r| r[5].parse::<u64>().unwrap()).sum();
    assert_eq!(last[6].parse::<u64>().unwrap(), total);
}

#[test]
fn simulate_horizon_zero_writes_headers_only() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = ExperimentConfig::load(&fixture("fig2a.json")).unwrap();
    cfg.horizon = Some(0);
    let path = write_config(dir.path(), "zero.json", &cfg.to_json());
    let out = dir.path().join("zero.csv");
    let o = run(&["simulate", "--config", path.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let (_, rows) = records(&out);
    assert!(rows.is_empty());
    let mut r = csv::Reader::from_reader(o.stdout.as_slice());
    for rec in r.records() {
        let rec = rec.unwrap();
        assert_eq!(&rec[2], "0");
        assert_eq!(rec[3].parse::<f64>().unwrap(), 0.0);
    }
}

#[test]
fn simulate_population_and_svg() {
    let dir = tempfile::tempdir().unwrap();
    let svg = dir.path().join("pop.svg");
    let cfg = fixture("population-10.json");
    let o = run(&["simulate", "--config", cfg.to_str().unwrap(), "--svg", svg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let mut r = csv::Reader::from_reader(o.stdout.as_slice());
    assert_eq!(r.headers().unwrap().len(), 5 + 10);
    assert_eq!(r.records().count(), 2);
    let text = std::fs::read_to_string(&svg).unwrap();
    assert!(text.starts_with("<svg") && text.matches("<polyline").count() == 2);
}

#[test]
fn value_writes_grid_and_thresholds() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("v.csv");
    let fig = fixture("fig2a.json");
    let o = run(&["value", "--config", fig.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let (header, rows) = records(&out);
    assert_eq!(&header, vec!["arm", "pi", "v", "v_play", "v_idle", "action"]);
    assert_eq!(rows.len(), 5 * 2001);
    for r in &rows {
        let v: f64 = r[2].parse().unwrap();
        let best = r[3].parse::<f64>().unwrap().max(r[4].parse().unwrap());
        assert!((v - best).abs() < 1e-6);
    }
    let mut s = csv::Reader::from_reader(o.stdout.as_slice());
    assert_eq!(s.records().count(), 5);

    let o = run(&["value", "--config", fig.to_str().unwrap(), "--average"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn learn_writes_one_run_per_seed() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = ExperimentConfig::load(&fixture("learning.json")).unwrap();
    cfg.horizon = Some(300);
    let path = write_config(dir.path(), "learn.json", &cfg.to_json());
    let out = dir.path().join("learn.csv");
    let svg = dir.path().join("learn.svg");
    let o = run(&["learn", "--config", path.to_str().unwrap(), "--out", out.to_str().unwrap(), "--svg", svg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let (header, rows) = records(&out);
    assert_eq!(header.len(), 11 + 5);
    let ids: std::collections::BTreeSet<&str> = rows.iter().map(|r| r.get(0).unwrap()).collect();
    assert_eq!(ids.len(), 20);
    assert_eq!(rows.len(), 20 * 300);
    for r in &rows {
        let regret: i64 = r[8].parse().unwrap();
        assert_eq!(regret, r[7].parse::<i64>().unwrap() - r[6].parse::<i64>().unwrap());
        for m in 11..16 {
            let mass: f64 = r[m].parse().unwrap();
            assert!((0.0..=1.0 + 1e-12).contains(&mass));
        }
    }
    let (_, series) = records(&dir.path().join("learn.series.csv"));
    assert_eq!(series.len(), 300);
    let summary = std::fs::read(dir.path().join("learn.summary.csv")).unwrap();
    assert_eq!(summary, o.stdout);
    assert!(svg.exists());
}

#[test]
fn learn_requires_learning_section() {
    let o = run(&["learn", "--config", fixture("fig2a.json").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("learning"));
}
