use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::adam::{adam_step, AdamConfig, AdamState};
use super::metrics::{bce_loss, Metrics};
use crate::autodiff::{Graph, Tensor};
use crate::cdm::{DiagnosisModel, Mode, TraceVars};
use crate::data::{batches, Dataset, Response};
use crate::error::{Error, Result};

/// Optimization settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub adam: AdamConfig,
    /// Gumbel-Softmax temperature at the first and last epoch (linear in between).
    pub tau_start: f64,
    pub tau_end: f64,
    /// Redraw Gumbel noise for every batch; otherwise once per epoch.
    pub gumbel_per_batch: bool,
    pub project_monotone: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 128,
            epochs: 20,
            seed: 0,
            adam: AdamConfig::default(),
            tau_start: 1.0,
            tau_end: 0.3,
            gumbel_per_batch: true,
            project_monotone: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        let a = &self.adam;
        if !(a.lr > 0.0
            && a.eps > 0.0
            && (0.0..1.0).contains(&a.beta1)
            && (0.0..1.0).contains(&a.beta2))
        {
            return Err(Error::Config(format!("invalid Adam settings {a:?}")));
        }
        if !(self.tau_start > 0.0 && self.tau_end > 0.0) {
            return Err(Error::Config("Gumbel temperatures must be positive".into()));
        }
        Ok(())
    }

    /// Temperature used during `epoch` (0-based).
    pub fn tau(&self, epoch: usize) -> f64 {
        if self.epochs <= 1 {
            return self.tau_start;
        }
        let f = epoch as f64 / (self.epochs - 1) as f64;
        self.tau_start + (self.tau_end - self.tau_start) * f
    }
}

/// One epoch's record.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub test: Metrics,
    pub wall_ms: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    /// Mean training loss of the untrained model.
    pub initial_train_loss: f64,
    pub epochs: Vec<EpochRecord>,
}

impl TrainHistory {
    pub fn last(&self) -> Option<&EpochRecord> {
        self.epochs.last()
    }

    /// One JSON object per line, one line per epoch.
    pub fn to_jsonl(&self) -> String {
        self.epochs
            .iter()
            .map(|e| serde_json::to_string(e).expect("records serialize") + "\n")
            .collect()
    }

    pub fn from_jsonl(text: &str) -> Result<TrainHistory> {
        let epochs = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| {
                serde_json::from_str(l).map_err(|e| Error::Parse {
                    path: "history".into(),
                    line: i + 1,
                    detail: e.to_string(),
                })
            })
            .collect::<Result<_>>()?;
        Ok(TrainHistory {
            initial_train_loss: f64::NAN,
            epochs,
        })
    }

    /// Digest of everything except wall-clock times, for determinism checks.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.initial_train_loss.to_le_bytes());
        for e in &self.epochs {
            h.update((e.epoch as u64).to_le_bytes());
            h.update(e.train_loss.to_le_bytes());
            h.update(e.test.auc.unwrap_or(f64::NAN).to_le_bytes());
            h.update(e.test.acc.to_le_bytes());
            h.update(e.test.loss.to_le_bytes());
            h.update((e.test.n_evaluated as u64).to_le_bytes());
        }
        format!("{:x}", h.finalize())
    }
}

fn mix(seed: u64, a: u64, b: u64) -> u64 {
    // splitmix64 finalizer over a simple combination
    let mut z =
        seed ^ a.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ b.wrapping_mul(0xC2B2_AE3D_27D4_EB4F);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

const EVAL_CHUNK: usize = 512;

/// Deterministic predictions for a set of responses, scored in parallel chunks.
pub fn predict_responses(model: &DiagnosisModel, responses: &[Response]) -> Result<Vec<f64>> {
    let parts = responses
        .par_chunks(EVAL_CHUNK)
        .map(|chunk| {
            let s: Vec<usize> = chunk.iter().map(|r| r.student).collect();
            let e: Vec<usize> = chunk.iter().map(|r| r.exercise).collect();
            model.predict(&s, &e)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(parts.concat())
}

pub fn labels(responses: &[Response]) -> Vec<f64> {
    responses.iter().map(|r| f64::from(r.score)).collect()
}

pub fn evaluate(model: &DiagnosisModel, responses: &[Response]) -> Result<Metrics> {
    let scores = predict_responses(model, responses)?;
    Metrics::compute(&scores, &labels(responses))
}

/// Loss and gradients of one batch in training mode; the gradients are
/// added into the parameters' buffers.
pub fn batch_step_gradients(
    model: &mut DiagnosisModel,
    batch: &[Response],
    mode: Mode,
) -> Result<f64> {
    let s: Vec<usize> = batch.iter().map(|r| r.student).collect();
    let e: Vec<usize> = batch.iter().map(|r| r.exercise).collect();
    let mut g = Graph::new();
    let pred = model.forward(&mut g, &s, &e, mode, &mut TraceVars::default())?;
    let loss = bce_loss(&mut g, pred, &labels(batch))?;
    let value = g.value(loss)[0];
    if !value.is_finite() {
        return Ok(value);
    }
    let grads = g.backward(loss)?;
    for (_, p) in model.params_mut() {
        p.zero_grad();
        grads.accumulate_into(p)?;
    }
    Ok(value)
}

/// Trains `model` on the dataset's training part and evaluates on its test
/// part after every epoch.
pub fn train(
    model: &mut DiagnosisModel,
    dataset: &Dataset,
    config: &TrainConfig,
) -> Result<TrainHistory> {
    config.validate()?;
    let train_set = dataset.train()?;
    let test_set = dataset.test()?;
    if train_set.is_empty() {
        return Err(Error::Contract("training split is empty".into()));
    }
    let (n, m, k) = (model.config().n, model.config().m, model.config().k);
    if (n, m, k) != (dataset.n(), dataset.m(), dataset.k()) {
        return Err(Error::Integrity(format!(
            "model dims (N={n}, M={m}, K={k}) differ from dataset ({}, {}, {})",
            dataset.n(),
            dataset.m(),
            dataset.k()
        )));
    }

    let initial = predict_responses(model, train_set)?;
    let mut history = TrainHistory {
        initial_train_loss: super::metrics::bce(&initial, &labels(train_set))?,
        epochs: Vec::with_capacity(config.epochs),
    };
    let mut state = {
        let params = model.params();
        let refs: Vec<&Tensor> = params.iter().map(|(_, t)| *t).collect();
        AdamState::new(&refs)
    };

    for epoch in 0..config.epochs {
        let start = Instant::now();
        let tau = config.tau(epoch);
        let order = batches(
            train_set.len(),
            config.batch_size,
            mix(config.seed, 1, epoch as u64),
        )?;
        let mut loss_sum = 0.0;
        for (b, idx) in order.iter().enumerate() {
            let batch: Vec<Response> = idx.iter().map(|i| train_set[*i]).collect();
            let noise_seed = if config.gumbel_per_batch {
                mix(config.seed, 2 + epoch as u64, b as u64)
            } else {
                mix(config.seed, 2 + epoch as u64, 0)
            };
            let loss = batch_step_gradients(model, &batch, Mode::Train { tau, noise_seed })?;
            if !loss.is_finite() {
                return Err(Error::NonFinite { epoch, batch: b });
            }
            loss_sum += loss * batch.len() as f64;
            {
                let mut params: Vec<&mut Tensor> =
                    model.params_mut().into_iter().map(|(_, t)| t).collect();
                adam_step(&mut params, &mut state, &config.adam)?;
            }
            if config.project_monotone {
                model.project_monotone();
            }
        }
        let test = evaluate(model, test_set)?;
        history.epochs.push(EpochRecord {
            epoch,
            train_loss: loss_sum / train_set.len() as f64,
            test,
            wall_ms: start.elapsed().as_secs_f64() * 1e3,
        });
    }
    model.set_trained_epochs(model.trained_epochs() + config.epochs);
    Ok(history)
}
