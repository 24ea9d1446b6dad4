use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use graphviz_rust::parse;
use kancd::train::TrainHistory;

fn kancd(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kancd"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

const SMALL: &[&str] = &["--n", "60", "--m", "16", "--k", "3", "--seed", "3"];

fn synth(dir: &Path) {
    let mut args = vec!["synth", "--out", "data"];
    args.extend_from_slice(SMALL);
    let o = kancd(dir, &args);
    assert!(o.status.success(), "{}", stderr(&o));
}

#[test]
fn train_eval_diagnose_viz_pipeline() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    synth(dir);
    for f in ["logs.csv", "q.csv", "manifest.json", "mastery.csv"] {
        assert!(dir.join("data").join(f).exists(), "{f}");
    }
    fs::write(
        dir.join("run.conf"),
        "# small run\nvariant = KaNCD+\nepochs = 3\nbatch_size = 32\ndata = data\n",
    )
    .unwrap();
    let o = kancd(
        dir,
        &[
            "train", "--config", "run.conf", "--out", "run", "--epochs", "2",
        ],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).starts_with("KaNCD+ epochs=2"));
    assert!(dir.join("run/checkpoint.kcd").exists());
    let history =
        TrainHistory::from_jsonl(&fs::read_to_string(dir.join("run/history.jsonl")).unwrap())
            .unwrap();
    assert_eq!(history.epochs.len(), 2);

    let o = kancd(
        dir,
        &[
            "eval",
            "--data",
            "data",
            "--out",
            "run",
            "--eval_split",
            "both",
        ],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let report = fs::read_to_string(dir.join("run/eval_report.jsonl")).unwrap();
    let lines: Vec<serde_json::Value> = report
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(lines.len(), 2);
    assert_eq!(lines[0]["split"], "train");
    assert_eq!(lines[1]["split"], "test");
    let last = &history.last().unwrap().test;
    assert_eq!(lines[1]["auc"].as_f64(), last.auc);
    assert_eq!(lines[1]["acc"].as_f64().unwrap(), last.acc);
    assert_eq!(lines[1]["loss"].as_f64().unwrap(), last.loss);

    let o = kancd(
        dir,
        &[
            "diagnose",
            "--data",
            "data",
            "--out",
            "run",
            "--students",
            "s4",
        ],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let table = fs::read_to_string(dir.join("run/mastery.csv")).unwrap();
    let rows: Vec<&str> = table.lines().collect();
    assert_eq!(rows[0], "student_id,c0,c1,c2");
    assert_eq!(rows.len(), 2);
    assert!(rows[1].starts_with("s4,"));
    let o = kancd(dir, &["diagnose", "--out", "run", "--students", "all"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(
        fs::read_to_string(dir.join("run/mastery.csv"))
            .unwrap()
            .lines()
            .count(),
        61
    );
    let o = kancd(dir, &["diagnose", "--out", "run", "--students", "ghost"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).starts_with("error[lookup]"));

    let o = kancd(
        dir,
        &[
            "viz",
            "--data",
            "data",
            "--out",
            "run",
            "--kan",
            "out",
            "--prune_threshold",
            "0",
        ],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let dot = fs::read_to_string(dir.join("run/kan_out.dot")).unwrap();
    parse(&dot).expect("valid DOT");
    assert_eq!(dot.matches("->").count(), 3);
    let again = kancd(
        dir,
        &[
            "viz",
            "--data",
            "data",
            "--out",
            "run",
            "--kan",
            "out",
            "--prune_threshold",
            "0",
        ],
    );
    assert!(again.status.success());
    assert_eq!(
        fs::read_to_string(dir.join("run/kan_out.dot")).unwrap(),
        dot
    );

    let o = kancd(
        dir,
        &["viz", "--out", "run", "--kan", "stu", "--format", "svg"],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(fs::read_to_string(dir.join("run/kan_stu.svg"))
        .unwrap()
        .contains("<polyline"));
}

#[test]
fn failures_exit_nonzero_with_a_coded_line() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    synth(dir);

    let o = kancd(dir, &["train", "--data", "data", "--variant", "BERT"]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.starts_with("error[variant]:"));
    assert!(err.contains("KA2NCD-kan"));
    assert_eq!(err.lines().count(), 1);

    let o = kancd(
        dir,
        &["train", "--logs", "data/logs.csv", "--q", "missing_q.csv"],
    );
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).starts_with("error[io]:"));
    assert!(stderr(&o).contains("missing_q.csv"));

    let o = kancd(dir, &["train", "--data", "data", "--epochs", "0"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).starts_with("error[config]:"));

    let o = kancd(dir, &["synth", "--n", "0", "--out", "x"]);
    assert_eq!(o.status.code(), Some(2));

    let o = kancd(dir, &["frobnicate"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).starts_with("error[usage]:"));

    fs::write(dir.join("bad.conf"), "epochs 3\n").unwrap();
    let o = kancd(dir, &["train", "--config", "bad.conf"]);
    assert_eq!(o.status.code(), Some(2));

    let o = kancd(
        dir,
        &[
            "train",
            "--data",
            "data",
            "--variant",
            "NCD",
            "--epochs",
            "1",
            "--ncd_hidden",
            "8,4",
            "--out",
            "ncd",
        ],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let o = kancd(dir, &["viz", "--out", "ncd"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).starts_with("error[capability]:"));

    let ckpt = dir.join("ncd/checkpoint.kcd");
    let mut bytes = fs::read(&ckpt).unwrap();
    let mid = bytes.len() / 2;
    bytes[mid] ^= 0xff;
    fs::write(&ckpt, bytes).unwrap();
    let o = kancd(dir, &["eval", "--data", "data", "--out", "ncd"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).starts_with("error[checkpoint]:"));
}

#[test]
fn eval_rejects_a_dataset_with_other_dimensions() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    synth(dir);
    let o = kancd(
        dir,
        &[
            "synth", "--out", "other", "--n", "30", "--m", "16", "--k", "4",
        ],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let o = kancd(
        dir,
        &[
            "train",
            "--data",
            "data",
            "--variant",
            "IRT",
            "--epochs",
            "1",
            "--out",
            "irt",
        ],
    );
    assert!(o.status.success());
    let o = kancd(dir, &["eval", "--data", "other", "--out", "irt"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).starts_with("error[integrity]:"));
}

#[test]
fn synth_is_reproducible() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    synth(a.path());
    synth(b.path());
    for f in ["logs.csv", "q.csv", "mastery.csv", "items.csv"] {
        assert_eq!(
            fs::read(a.path().join("data").join(f)).unwrap(),
            fs::read(b.path().join("data").join(f)).unwrap()
        );
    }
}
