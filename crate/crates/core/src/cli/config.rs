use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::cdm::{ModelConfig, Variant};
use crate::data::SynthSpec;
use crate::error::{Error, Result};
use crate::kan::{Renorm, SplineGrid};
use crate::train::{AdamConfig, TrainConfig};
use crate::viz::Format;

/// Every recognized configuration key with its default and help text.
/// Each key is also a command-line flag of the same name.
pub const KEYS: &[(&str, &str, &str)] = &[
    ("variant", "KA2NCD-e", "model variant"),
    (
        "data",
        "",
        "dataset directory (as written by `synth` or a previous save)",
    ),
    (
        "logs",
        "",
        "response log CSV (student_id,exercise_id,score)",
    ),
    ("q", "", "Q-matrix CSV (exercise_id,concept columns)"),
    (
        "split_ratio",
        "0.7",
        "fraction of each student's logs used for training",
    ),
    (
        "split_seed",
        "",
        "seed of the train/test split (defaults to seed)",
    ),
    ("batch_size", "128", "training batch size"),
    ("lr", "0.002", "Adam learning rate"),
    ("epochs", "20", "training epochs"),
    (
        "tau_start",
        "1.0",
        "Gumbel-Softmax temperature at the first epoch",
    ),
    (
        "tau_end",
        "0.3",
        "Gumbel-Softmax temperature at the last epoch",
    ),
    (
        "gumbel_per_batch",
        "true",
        "redraw Gumbel noise every batch",
    ),
    (
        "project_monotone",
        "true",
        "clamp monotone FC weights after each step",
    ),
    ("grid_lo", "-1.0", "lower end of the KAN spline grid"),
    ("grid_hi", "1.0", "upper end of the KAN spline grid"),
    ("grid_intervals", "5", "grid intervals G"),
    ("grid_order", "3", "spline degree p"),
    (
        "renorm",
        "none",
        "renormalization between KAN layers (none, affine)",
    ),
    (
        "k_heads",
        "2",
        "sub-embedding modules of the two-level variants",
    ),
    (
        "ncd_hidden",
        "256,128",
        "hidden widths of NCD-style FC heads",
    ),
    ("kan_hidden", "", "hidden widths of KAN heads"),
    (
        "checkpoint",
        "",
        "checkpoint path (defaults to <out>/checkpoint.kcd)",
    ),
    (
        "eval_split",
        "test",
        "split(s) to evaluate: test, train or both",
    ),
    (
        "students",
        "all",
        "comma-separated student ids to diagnose, or all",
    ),
    (
        "kan",
        "",
        "KAN sub-network to draw (defaults to the first one)",
    ),
    (
        "prune_threshold",
        "0.05",
        "relative edge importance below which edges are dropped",
    ),
    ("format", "dot", "graph format: dot or svg"),
    ("n", "300", "synthetic students"),
    ("m", "30", "synthetic exercises"),
    ("k", "5", "synthetic concepts"),
    ("guess_lo", "0.05", "lower bound of synthetic guessing"),
    ("guess_hi", "0.25", "upper bound of synthetic guessing"),
    ("slip_lo", "0.05", "lower bound of synthetic slipping"),
    ("slip_hi", "0.25", "upper bound of synthetic slipping"),
    (
        "prevalence",
        "0.5",
        "probability a synthetic student masters a concept",
    ),
    (
        "q_density",
        "0.2",
        "probability of each extra concept on a synthetic exercise",
    ),
    (
        "seed",
        "0",
        "seed for initialization, batching and synthesis",
    ),
    ("out", "out", "output directory"),
];

/// Reads `key = value` lines; `#` starts a comment.
pub fn parse_config_text(text: &str, origin: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("{origin}:{}: expected key = value", i + 1)))?;
        let key = key.trim().replace('-', "_");
        if !KEYS.iter().any(|(k, _, _)| *k == key) {
            return Err(Error::Config(format!(
                "{origin}:{}: unknown key '{key}'",
                i + 1
            )));
        }
        out.insert(key, value.trim().to_string());
    }
    Ok(out)
}

/// Fully resolved settings for one command.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub variant: Variant,
    pub data: Option<PathBuf>,
    pub logs: Option<PathBuf>,
    pub q: Option<PathBuf>,
    pub split_ratio: f64,
    pub split_seed: u64,
    pub train: TrainConfig,
    pub grid: SplineGrid,
    pub renorm: Renorm,
    pub k_heads: usize,
    pub ncd_hidden: Vec<usize>,
    pub kan_hidden: Vec<usize>,
    pub checkpoint: PathBuf,
    pub eval_split: String,
    pub students: Vec<String>,
    pub kan: Option<String>,
    pub prune_threshold: f64,
    pub format: Format,
    pub synth: SynthSpec,
    pub seed: u64,
    pub out: PathBuf,
}

fn value<T: FromStr>(map: &BTreeMap<String, String>, key: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    let raw = get(map, key);
    raw.parse()
        .map_err(|e| Error::Config(format!("{key} = '{raw}': {e}")))
}

fn get<'a>(map: &'a BTreeMap<String, String>, key: &str) -> &'a str {
    map.get(key).map(String::as_str).unwrap_or_else(|| {
        KEYS.iter()
            .find(|(k, _, _)| *k == key)
            .map(|(_, d, _)| *d)
            .expect("key is declared")
    })
}

fn path(map: &BTreeMap<String, String>, key: &str) -> Option<PathBuf> {
    let raw = get(map, key);
    (!raw.is_empty()).then(|| PathBuf::from(raw))
}

fn widths(map: &BTreeMap<String, String>, key: &str) -> Result<Vec<usize>> {
    get(map, key)
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse()
                .map_err(|_| Error::Config(format!("{key}: '{s}' is not a width")))
        })
        .collect()
}

impl RunConfig {
    /// Builds a configuration from explicit key/value settings, defaults
    /// filling the rest.
    pub fn from_map(map: &BTreeMap<String, String>) -> Result<RunConfig> {
        for key in map.keys() {
            if !KEYS.iter().any(|(k, _, _)| k == key) {
                return Err(Error::Config(format!("unknown key '{key}'")));
            }
        }
        let seed: u64 = value(map, "seed")?;
        let out = PathBuf::from(get(map, "out"));
        let split_seed = match get(map, "split_seed") {
            "" => seed,
            _ => value(map, "split_seed")?,
        };
        let train = TrainConfig {
            batch_size: value(map, "batch_size")?,
            epochs: value(map, "epochs")?,
            seed,
            adam: AdamConfig {
                lr: value(map, "lr")?,
                ..AdamConfig::default()
            },
            tau_start: value(map, "tau_start")?,
            tau_end: value(map, "tau_end")?,
            gumbel_per_batch: value(map, "gumbel_per_batch")?,
            project_monotone: value(map, "project_monotone")?,
        };
        let grid = SplineGrid::new(
            value(map, "grid_lo")?,
            value(map, "grid_hi")?,
            value(map, "grid_intervals")?,
            value(map, "grid_order")?,
        )?;
        let synth = SynthSpec {
            n: value(map, "n")?,
            m: value(map, "m")?,
            k: value(map, "k")?,
            guess: (value(map, "guess_lo")?, value(map, "guess_hi")?),
            slip: (value(map, "slip_lo")?, value(map, "slip_hi")?),
            prevalence: value(map, "prevalence")?,
            q_density: value(map, "q_density")?,
            seed,
        };
        let eval_split = get(map, "eval_split").to_ascii_lowercase();
        if !matches!(eval_split.as_str(), "test" | "train" | "both") {
            return Err(Error::Config(format!(
                "eval_split must be test, train or both (got '{eval_split}')"
            )));
        }
        let split_ratio: f64 = value(map, "split_ratio")?;
        if !(split_ratio > 0.0 && split_ratio < 1.0) {
            return Err(Error::Config(format!(
                "split_ratio must lie in (0, 1), got {split_ratio}"
            )));
        }
        let prune_threshold: f64 = value(map, "prune_threshold")?;
        if prune_threshold.is_nan() || prune_threshold < 0.0 {
            return Err(Error::Config(format!(
                "prune_threshold must be ≥ 0, got {prune_threshold}"
            )));
        }
        let config = RunConfig {
            variant: get(map, "variant").parse()?,
            data: path(map, "data"),
            logs: path(map, "logs"),
            q: path(map, "q"),
            split_ratio,
            split_seed,
            train,
            grid,
            renorm: value(map, "renorm")?,
            k_heads: value(map, "k_heads")?,
            ncd_hidden: widths(map, "ncd_hidden")?,
            kan_hidden: widths(map, "kan_hidden")?,
            checkpoint: path(map, "checkpoint").unwrap_or_else(|| out.join("checkpoint.kcd")),
            eval_split,
            students: get(map, "students")
                .split(',')
                .map(|s| s.trim().to_string())
                .filter(|s| !s.is_empty())
                .collect(),
            kan: Some(get(map, "kan").to_string()).filter(|s| !s.is_empty()),
            prune_threshold,
            format: value(map, "format")?,
            synth,
            seed,
            out,
        };
        config.train.validate()?;
        Ok(config)
    }

    /// Reads a config file and applies `overrides` on top of it.
    pub fn load(file: Option<&Path>, overrides: &BTreeMap<String, String>) -> Result<RunConfig> {
        let mut map = match file {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
                parse_config_text(&text, &p.display().to_string())?
            }
            None => BTreeMap::new(),
        };
        map.extend(overrides.iter().map(|(k, v)| (k.clone(), v.clone())));
        RunConfig::from_map(&map)
    }

    pub fn model_config(&self, n: usize, m: usize, k: usize) -> ModelConfig {
        ModelConfig {
            grid: self.grid.clone(),
            renorm: self.renorm,
            k_heads: self.k_heads,
            ncd_hidden: self.ncd_hidden.clone(),
            kan_hidden: self.kan_hidden.clone(),
            seed: self.seed,
            ..ModelConfig::new(self.variant, n, m, k)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::DEFAULT_RATIO;

    #[test]
    fn defaults_parse() {
        let c = RunConfig::from_map(&BTreeMap::new()).unwrap();
        assert_eq!(c.variant, Variant::Ka2ncdE);
        assert_eq!(c.train.batch_size, 128);
        assert_eq!(c.train.epochs, 20);
        assert_eq!(c.split_ratio, DEFAULT_RATIO);
        assert_eq!(c.checkpoint, PathBuf::from("out/checkpoint.kcd"));
        assert_eq!(c.students, vec!["all"]);
    }

    #[test]
    fn file_then_overrides() {
        let map = parse_config_text(
            "# run\nvariant = NCD+\nepochs=3\nbatch-size = 16 # small\n",
            "t",
        )
        .unwrap();
        let mut over = BTreeMap::new();
        over.insert("epochs".to_string(), "5".to_string());
        let mut merged = map.clone();
        merged.extend(over);
        let c = RunConfig::from_map(&merged).unwrap();
        assert_eq!(c.variant, Variant::NcdPlus);
        assert_eq!(c.train.epochs, 5);
        assert_eq!(c.train.batch_size, 16);
    }

    #[test]
    fn bad_input_is_a_config_error() {
        assert!(matches!(
            parse_config_text("nonsense", "t"),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            parse_config_text("colour = red", "t"),
            Err(Error::Config(_))
        ));
        let mut m = BTreeMap::new();
        m.insert("epochs".to_string(), "0".to_string());
        assert!(matches!(RunConfig::from_map(&m), Err(Error::Config(_))));
        m.insert("epochs".to_string(), "many".to_string());
        assert!(matches!(RunConfig::from_map(&m), Err(Error::Config(_))));
        let mut v = BTreeMap::new();
        v.insert("variant".to_string(), "XYZ".to_string());
        assert!(matches!(
            RunConfig::from_map(&v),
            Err(Error::UnknownVariant { .. })
        ));
    }
}
