use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_posterior-score"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn binary")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn synth(dir: &Path, name: &str, extra: &[&str]) -> String {
    let path = dir.join(name);
    let path_s = path.to_str().unwrap().to_owned();
    let mut args = vec!["synth", "--cells", "120", "--samples", "40", "--seed", "3", "--out", &path_s];
    args.extend_from_slice(extra);
    let out = run(&args);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    path_s
}

#[test]
fn synth_prints_closed_form_and_writes_rows() {
    let dir = TempDir::new().unwrap();
    let path = dir.path().join("o.csv");
    let out = run(&[
        "synth", "--model", "oracle", "--cells", "25", "--samples", "7", "--seed", "7", "--out",
        path.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0);
    assert!(String::from_utf8_lossy(&out.stdout).contains("expected info gain: 0.8047"));
    let text = fs::read_to_string(&path).unwrap();
    let rows: Vec<&str> = text.lines().skip(1).collect();
    assert_eq!(rows.len(), 25);
    for row in rows {
        let samples = row.rsplit(',').next().unwrap();
        assert_eq!(samples.split(';').count(), 7);
    }
}

#[test]
fn synth_flag_combinations() {
    let dir = TempDir::new().unwrap();
    let out_path = dir.path().join("x.csv");
    let o = out_path.to_str().unwrap();
    let base = ["synth", "--cells", "5", "--samples", "4", "--seed", "1", "--out", o];
    let cases: [&[&str]; 5] = [
        &["--model", "shifted"],
        &["--model", "oracle", "--offset", "1.0"],
        &["--model", "shifted", "--offset", "1", "--width-factor", "0.5"],
        &["--model", "overconfident", "--width-factor", "-1"],
        &["--model", "psychic"],
    ];
    for extra in cases {
        let mut args = base.to_vec();
        args.extend_from_slice(extra);
        let out = run(&args);
        assert_eq!(code(&out), 2, "{extra:?}: {}", stderr(&out));
    }
    assert!(!out_path.exists());

    let mut args = base.to_vec();
    args.extend_from_slice(&["--model", "shifted", "--offset", "-0.5"]);
    assert_eq!(code(&run(&args)), 0);
}

#[test]
fn score_unknown_feature_names_it() {
    let dir = TempDir::new().unwrap();
    let input = synth(dir.path(), "o.csv", &["--model", "oracle"]);
    let out_dir = dir.path().join("s");
    let out = run(&["score", "--input", &input, "--features", "F9", "--out", out_dir.to_str().unwrap()]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("F9"));
    assert!(!out_dir.join("summary.json").exists());
}

#[test]
fn score_malformed_row_names_it() {
    let dir = TempDir::new().unwrap();
    let input = dir.path().join("bad.csv");
    fs::write(
        &input,
        "model,image_id,cell_id,feature,true_value,samples\nm,a,1,F1,0.5,1;2;3\nm,a,2,F1,oops,1;2;3\n",
    )
    .unwrap();
    let out = run(&["score", "--input", input.to_str().unwrap(), "--out", dir.path().join("s").to_str().unwrap()]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("row 2"), "{}", stderr(&out));
}

#[test]
fn bad_flags_exit_two() {
    let out = run(&["score", "--out", "x"]);
    assert_eq!(code(&out), 2);
    let out = run(&["score", "--input", "x.csv", "--density", "histogram", "--out", "x"]);
    assert_eq!(code(&out), 2);
    let out = run(&["score", "--input", "x.csv", "--kld-grid", "10", "--out", "x"]);
    assert_eq!(code(&out), 2);
    let out = bin()
        .args(["report", "--summaries", "a", "--out", "b"])
        .env("POSTERIOR_SCORE_THREADS", "many")
        .output()
        .unwrap();
    assert_eq!(code(&out), 2);
}

#[test]
fn report_on_missing_or_invalid_summaries() {
    let dir = TempDir::new().unwrap();
    let out_dir = dir.path().join("r");
    let out = run(&["report", "--summaries", dir.path().join("nope").to_str().unwrap(), "--out", out_dir.to_str().unwrap()]);
    assert_eq!(code(&out), 1);
    let empty = dir.path().join("empty");
    fs::create_dir(&empty).unwrap();
    let out = run(&["report", "--summaries", empty.to_str().unwrap(), "--out", out_dir.to_str().unwrap()]);
    assert_eq!(code(&out), 1);
    fs::write(empty.join("m__F1.report.json"), "{\"model\": 1}").unwrap();
    let out = run(&["report", "--summaries", empty.to_str().unwrap(), "--out", out_dir.to_str().unwrap()]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("m__F1.report.json"));
}

#[test]
fn two_models_end_to_end() {
    let dir = TempDir::new().unwrap();
    let a = synth(dir.path(), "o.csv", &["--model", "oracle"]);
    let b = synth(dir.path(), "s.jsonl", &["--model", "shuffled"]);
    let scores = dir.path().join("scores");
    let out = run(&[
        "score", "--input", &a, "--input", &b, "--features", "all", "--seed", "5", "--dump-cells", "--out",
        scores.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));

    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(scores.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["features"], serde_json::json!(["F1"]));
    assert_eq!(summary["models"], serde_json::json!(["oracle", "shuffled"]));
    assert_eq!(summary["rows"].as_array().unwrap().len(), 6);

    let rendered = dir.path().join("rendered");
    let out = run(&["report", "--summaries", scores.to_str().unwrap(), "--out", rendered.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let table = fs::read_to_string(rendered.join("table.md")).unwrap();
    let metric_rows = table.lines().filter(|l| l.starts_with("| ") && !l.starts_with("| Metric")).count();
    assert_eq!(metric_rows, 6);

    for model in ["oracle", "shuffled"] {
        let rank = fs::read_to_string(rendered.join(format!("{model}__F1.rank_hist.csv"))).unwrap();
        let counts: Vec<u64> = rank.lines().skip(1).map(|l| l.rsplit(',').next().unwrap().parse().unwrap()).collect();
        assert_eq!(counts.len(), 20);
        assert_eq!(counts.iter().sum::<u64>(), 120);

        let cells = fs::read_to_string(scores.join(format!("{model}__F1.cells.jsonl"))).unwrap();
        let min_ll = cells
            .lines()
            .map(|l| serde_json::from_str::<serde_json::Value>(l).unwrap()["loglik_posterior"].as_f64().unwrap())
            .fold(f64::INFINITY, f64::min);
        let ll = fs::read_to_string(rendered.join(format!("{model}__F1.loglik_hist.csv"))).unwrap();
        let first_lo: f64 = ll.lines().nth(1).unwrap().split(',').next().unwrap().parse().unwrap();
        assert!(first_lo <= min_ll);

        let grid = fs::read_to_string(rendered.join(format!("{model}__F1.marginal_grid.csv"))).unwrap();
        assert_eq!(grid.lines().count(), 257);
    }
}

#[test]
fn config_file_and_flag_precedence() {
    let dir = TempDir::new().unwrap();
    let input = synth(dir.path(), "o.csv", &["--model", "oracle"]);
    let cfg = dir.path().join("cfg.toml");
    fs::write(&cfg, "seed = 9\n[scoring]\npool_cap = 2000\n[scoring.density]\nestimator = \"kde\"\n").unwrap();

    let estimator_of = |out_dir: &Path| -> String {
        let cells = fs::read_to_string(out_dir.join("oracle__F1.cells.jsonl")).unwrap();
        let first: serde_json::Value = serde_json::from_str(cells.lines().next().unwrap()).unwrap();
        first["posterior"]["type"].as_str().unwrap().to_owned()
    };

    let from_file = dir.path().join("file");
    let out = run(&["score", "--input", &input, "--config", cfg.to_str().unwrap(), "--dump-cells", "--out", from_file.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert_eq!(estimator_of(&from_file), "kde");

    let overridden = dir.path().join("flag");
    let out = run(&[
        "score", "--input", &input, "--config", cfg.to_str().unwrap(), "--density", "gmm", "--dump-cells", "--out",
        overridden.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert_eq!(estimator_of(&overridden), "gmm");

    fs::write(&cfg, "sed = 9\n").unwrap();
    let out = run(&["score", "--input", &input, "--config", cfg.to_str().unwrap(), "--out", overridden.to_str().unwrap()]);
    assert_eq!(code(&out), 2);
}

#[test]
fn thread_count_does_not_change_output() {
    let dir = TempDir::new().unwrap();
    let input = synth(dir.path(), "o.csv", &["--model", "overconfident"]);
    let mut outputs = Vec::new();
    for threads in ["1", "3"] {
        let out_dir = dir.path().join(format!("t{threads}"));
        let out = bin()
            .args(["score", "--input", &input, "--seed", "2", "--out", out_dir.to_str().unwrap()])
            .env("POSTERIOR_SCORE_THREADS", threads)
            .output()
            .unwrap();
        assert_eq!(code(&out), 0, "{}", stderr(&out));
        outputs.push(fs::read(out_dir.join("overconfident__F1.report.json")).unwrap());
    }
    assert_eq!(outputs[0], outputs[1]);
}
