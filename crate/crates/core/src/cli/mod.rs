//! The `kancd` command-line tool.

mod config;

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Arg, ArgAction, Command};
use serde::Serialize;

pub use config::{parse_config_text, RunConfig, KEYS};

use crate::cdm::DiagnosisModel;
use crate::checkpoint::{self, CheckpointMeta};
use crate::data::{load_logs, synth_dina, Dataset};
use crate::error::{Error, Result};
use crate::train::{evaluate, train, Metrics};
use crate::viz;

const COMMANDS: &[(&str, &str)] = &[
    (
        "train",
        "train a model and write checkpoint.kcd and history.jsonl",
    ),
    ("eval", "score a checkpoint and write eval_report.jsonl"),
    (
        "diagnose",
        "write per-concept mastery of chosen students to mastery.csv",
    ),
    ("viz", "draw a KAN sub-network as DOT or SVG"),
    (
        "synth",
        "generate a synthetic DINA dataset with ground-truth mastery",
    ),
];

/// Exit status for a failed command: 2 for bad invocations, 1 otherwise.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) | Error::UnknownVariant { .. } => 2,
        _ => 1,
    }
}

fn command() -> Command {
    let mut cmd = Command::new("kancd")
        .about("Cognitive diagnosis with Kolmogorov-Arnold networks")
        .version(env!("CARGO_PKG_VERSION"))
        .subcommand_required(true)
        .arg_required_else_help(true)
        .arg(
            Arg::new("config")
                .long("config")
                .global(true)
                .value_name("PATH")
                .help("flat key = value configuration file"),
        );
    for (key, default, help) in KEYS {
        let mut arg = Arg::new(*key)
            .long(*key)
            .global(true)
            .value_name("VALUE")
            .action(ArgAction::Set)
            .help(if default.is_empty() {
                help.to_string()
            } else {
                format!("{help} [default: {default}]")
            });
        if key.contains('_') {
            arg = arg.alias(key.replace('_', "-"));
        }
        cmd = cmd.arg(arg);
    }
    for (name, about) in COMMANDS {
        cmd = cmd.subcommand(Command::new(*name).about(*about));
    }
    cmd
}

/// Runs the tool with `args` (including the program name) and returns the
/// process exit code. Results go to stdout, errors to stderr as a single
/// `error[<code>]: <message>` line.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let matches = match command().try_get_matches_from(args) {
        Ok(m) => m,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            if code == 0 {
                let _ = e.print();
            } else {
                let text = e.render().to_string();
                let first = text.lines().next().unwrap_or("invalid arguments");
                eprintln!("error[usage]: {}", first.trim_start_matches("error: "));
            }
            return code;
        }
    };
    let (name, sub) = matches.subcommand().expect("subcommand required");
    let mut overrides = BTreeMap::new();
    for (key, _, _) in KEYS {
        if let Some(v) = sub.get_one::<String>(key) {
            overrides.insert(key.to_string(), v.clone());
        }
    }
    let file = sub.get_one::<String>("config").map(PathBuf::from);
    let outcome = RunConfig::load(file.as_deref(), &overrides).and_then(|cfg| dispatch(name, &cfg));
    match outcome {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error[{}]: {}", e.code(), e.to_string().replace('\n', " "));
            exit_code(&e)
        }
    }
}

fn dispatch(name: &str, cfg: &RunConfig) -> Result<()> {
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    match name {
        "train" => cmd_train(cfg, &mut out),
        "eval" => cmd_eval(cfg, &mut out),
        "diagnose" => cmd_diagnose(cfg, &mut out),
        "viz" => cmd_viz(cfg, &mut out),
        "synth" => cmd_synth(cfg, &mut out),
        other => Err(Error::Config(format!("unknown command '{other}'"))),
    }
}

fn ensure_out(cfg: &RunConfig) -> Result<()> {
    std::fs::create_dir_all(&cfg.out).map_err(|e| Error::io(&cfg.out, e))
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn say(out: &mut dyn std::io::Write, text: std::fmt::Arguments) -> Result<()> {
    out.write_fmt(text)
        .and_then(|_| out.write_all(b"\n"))
        .map_err(|e| Error::io(Path::new("<stdout>"), e))
}

/// Loads the configured dataset without splitting it.
fn raw_dataset(cfg: &RunConfig) -> Result<Option<Dataset>> {
    match (&cfg.data, &cfg.logs, &cfg.q) {
        (Some(dir), _, _) => Dataset::load(dir).map(Some),
        (None, Some(logs), Some(q)) => load_logs(logs, q).map(Some),
        (None, Some(_), None) | (None, None, Some(_)) => {
            Err(Error::Config("logs and q must be given together".into()))
        }
        (None, None, None) => Ok(None),
    }
}

/// Loads and splits the dataset; an existing saved split is kept.
fn split_dataset(cfg: &RunConfig, ratio: f64, seed: u64) -> Result<Option<Dataset>> {
    match raw_dataset(cfg)? {
        Some(d) if d.split.is_some() => Ok(Some(d)),
        Some(d) => d.split(ratio, seed).map(Some),
        None => Ok(None),
    }
}

fn require(data: Option<Dataset>, what: &str) -> Result<Dataset> {
    data.ok_or_else(|| Error::Config(format!("{what} needs a dataset: set data, or logs and q")))
}

fn fmt_auc(m: &Metrics) -> String {
    m.auc.map_or("undefined".into(), |a| format!("{a:.6}"))
}

pub fn cmd_train(cfg: &RunConfig, out: &mut dyn std::io::Write) -> Result<()> {
    let data = require(
        split_dataset(cfg, cfg.split_ratio, cfg.split_seed)?,
        "train",
    )?;
    let mut model = DiagnosisModel::new(cfg.model_config(data.n(), data.m(), data.k()), &data.q)?;
    let history = train(&mut model, &data, &cfg.train)?;
    ensure_out(cfg)?;
    write_file(&cfg.out.join("history.jsonl"), &history.to_jsonl())?;
    let split = data.split.as_ref().expect("dataset was split");
    let meta = CheckpointMeta {
        student_ids: data.student_ids.clone(),
        exercise_ids: data.exercise_ids.clone(),
        concept_ids: data.concept_ids.clone(),
        train_seed: Some(cfg.seed),
        split_seed: Some(split.seed),
        split_ratio: Some(split.ratio),
        source: data.source.clone(),
    };
    let bytes = checkpoint::to_bytes(&model, &meta);
    if let Some(parent) = cfg
        .checkpoint
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
    {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(&cfg.checkpoint, &bytes).map_err(|e| Error::io(&cfg.checkpoint, e))?;
    let last = history.last().expect("at least one epoch");
    say(
        out,
        format_args!(
            "{} epochs={} train_loss={:.6} test_auc={} test_acc={:.6} test_loss={:.6}",
            model.variant(),
            history.epochs.len(),
            last.train_loss,
            fmt_auc(&last.test),
            last.test.acc,
            last.test.loss
        ),
    )?;
    say(
        out,
        format_args!(
            "checkpoint {} sha256={}",
            cfg.checkpoint.display(),
            checkpoint::sha256_hex(&bytes)
        ),
    )
}

#[derive(Serialize)]
struct EvalLine<'a> {
    split: &'a str,
    variant: String,
    #[serde(flatten)]
    metrics: &'a Metrics,
}

fn check_dims(model: &DiagnosisModel, data: &Dataset) -> Result<()> {
    let c = model.config();
    if (c.n, c.m, c.k) != (data.n(), data.m(), data.k()) {
        return Err(Error::Integrity(format!(
            "checkpoint dims (N={}, M={}, K={}) differ from dataset ({}, {}, {})",
            c.n,
            c.m,
            c.k,
            data.n(),
            data.m(),
            data.k()
        )));
    }
    Ok(())
}

fn split_of(cfg: &RunConfig, meta: &CheckpointMeta) -> (f64, u64) {
    (
        meta.split_ratio.unwrap_or(cfg.split_ratio),
        meta.split_seed.unwrap_or(cfg.split_seed),
    )
}

pub fn cmd_eval(cfg: &RunConfig, out: &mut dyn std::io::Write) -> Result<()> {
    let (model, meta) = checkpoint::load(&cfg.checkpoint)?;
    let (ratio, seed) = split_of(cfg, &meta);
    let data = require(split_dataset(cfg, ratio, seed)?, "eval")?;
    check_dims(&model, &data)?;
    let parts: &[&str] = match cfg.eval_split.as_str() {
        "train" => &["train"],
        "both" => &["train", "test"],
        _ => &["test"],
    };
    let mut report = String::new();
    for part in parts {
        let logs = if *part == "train" {
            data.train()?
        } else {
            data.test()?
        };
        let metrics = evaluate(&model, logs)?;
        let line = EvalLine {
            split: part,
            variant: model.variant().to_string(),
            metrics: &metrics,
        };
        report.push_str(&serde_json::to_string(&line).expect("report serializes"));
        report.push('\n');
        say(
            out,
            format_args!(
                "{part}: auc={} acc={:.6} loss={:.6} n={}",
                fmt_auc(&metrics),
                metrics.acc,
                metrics.loss,
                metrics.n_evaluated
            ),
        )?;
    }
    ensure_out(cfg)?;
    write_file(&cfg.out.join("eval_report.jsonl"), &report)
}

pub fn cmd_diagnose(cfg: &RunConfig, out: &mut dyn std::io::Write) -> Result<()> {
    let (model, meta) = checkpoint::load(&cfg.checkpoint)?;
    let (ratio, seed) = split_of(cfg, &meta);
    let data = split_dataset(cfg, ratio, seed)?;
    let exercises = match &data {
        Some(d) => {
            check_dims(&model, d)?;
            Some(d.train_exercises_by_student()?)
        }
        None => None,
    };
    let (student_ids, concept_ids) = match &data {
        Some(d) => (d.student_ids.clone(), d.concept_ids.clone()),
        None => (meta.student_ids.clone(), meta.concept_ids.clone()),
    };
    let chosen: Vec<usize> = if cfg.students.iter().any(|s| s.eq_ignore_ascii_case("all")) {
        (0..model.config().n).collect()
    } else {
        cfg.students
            .iter()
            .map(|s| {
                student_ids
                    .iter()
                    .position(|id| id == s)
                    .ok_or_else(|| Error::Lookup(format!("unknown student id '{s}'")))
            })
            .collect::<Result<_>>()?
    };
    let concept_ids = if concept_ids.len() == model.config().k {
        concept_ids
    } else {
        (0..model.config().k).map(|c| format!("c{c}")).collect()
    };
    let name_of = |i: usize| student_ids.get(i).cloned().unwrap_or_else(|| i.to_string());

    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["student_id".to_string()];
    header.extend(concept_ids.iter().cloned());
    let csv_err = |e: csv::Error| Error::Integrity(format!("mastery table: {e}"));
    w.write_record(&header).map_err(csv_err)?;
    let mut untrained = false;
    for s in &chosen {
        let ex = exercises.as_ref().map_or(&[][..], |e| e[*s].as_slice());
        let mv = model.mastery(*s, ex)?;
        untrained |= mv.untrained;
        let mut rec = vec![name_of(*s)];
        rec.extend(mv.values.iter().map(|v| format!("{v:.6}")));
        w.write_record(&rec).map_err(csv_err)?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| Error::Integrity(format!("mastery table: {e}")))?;
    ensure_out(cfg)?;
    let path = cfg.out.join("mastery.csv");
    std::fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
    if untrained {
        eprintln!("warning[untrained]: the checkpoint has not been trained; mastery values are from initialization");
    }
    say(
        out,
        format_args!("wrote {} rows to {}", chosen.len(), path.display()),
    )
}

pub fn cmd_viz(cfg: &RunConfig, out: &mut dyn std::io::Write) -> Result<()> {
    let (model, meta) = checkpoint::load(&cfg.checkpoint)?;
    let name = match &cfg.kan {
        Some(n) => n.clone(),
        None => model.kan_names().into_iter().next().ok_or_else(|| {
            Error::Capability(format!("{} has no KAN sub-networks", model.variant()))
        })?,
    };
    let net = model.kan(&name)?;
    let (ratio, seed) = split_of(cfg, &meta);
    let sample = match split_dataset(cfg, ratio, seed)? {
        Some(d) => {
            check_dims(&model, &d)?;
            viz::kan_sample(&model, &name, d.train()?)?
        }
        None => viz::grid_sample(net, 64)?,
    };
    let (text, report) = viz::render(&model, &name, &sample, cfg.prune_threshold, cfg.format)?;
    ensure_out(cfg)?;
    let path = cfg
        .out
        .join(format!("kan_{name}.{}", cfg.format.extension()));
    write_file(&path, &text)?;
    say(
        out,
        format_args!(
            "{} kept {}/{} edges ({:.3}) at threshold {}",
            path.display(),
            report.kept(),
            report.total(),
            report.kept_fraction(),
            cfg.prune_threshold
        ),
    )
}

pub fn cmd_synth(cfg: &RunConfig, out: &mut dyn std::io::Write) -> Result<()> {
    cfg.synth.check_identifiable()?;
    let synth = synth_dina(&cfg.synth)?;
    synth.dataset.save(&cfg.out)?;
    let mut text = String::from("student_id");
    for c in &synth.dataset.concept_ids {
        text.push(',');
        text.push_str(c);
    }
    text.push('\n');
    for (id, row) in synth.dataset.student_ids.iter().zip(&synth.mastery) {
        text.push_str(id);
        for v in row {
            text.push(',');
            text.push_str(if *v == 1 { "1" } else { "0" });
        }
        text.push('\n');
    }
    write_file(&cfg.out.join("mastery.csv"), &text)?;
    let mut w = String::from("exercise_id,guess,slip\n");
    for ((id, g), s) in synth
        .dataset
        .exercise_ids
        .iter()
        .zip(&synth.guess)
        .zip(&synth.slip)
    {
        w.push_str(&format!("{id},{g},{s}\n"));
    }
    write_file(&cfg.out.join("items.csv"), &w)?;
    say(
        out,
        format_args!(
            "wrote {} students, {} exercises, {} concepts, {} logs to {}",
            synth.dataset.n(),
            synth.dataset.m(),
            synth.dataset.k(),
            synth.dataset.logs.len(),
            cfg.out.display()
        ),
    )?;
    out.flush().map_err(|e| Error::io(Path::new("<stdout>"), e))
}
