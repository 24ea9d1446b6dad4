use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};

/// Predictions are clamped to `[EPS, 1 − EPS]` before taking logs.
pub const EPS: f64 = 1e-7;

/// Mean binary cross-entropy of `pred` (`B × 1` or `B`) against 0/1 labels.
pub fn bce_loss(g: &mut Graph, pred: Var, labels: &[f64]) -> Result<Var> {
    let n = g.value(pred).len();
    if n != labels.len() {
        return Err(Error::shape("bce_loss", &[n], &[labels.len()]));
    }
    let shape = g.shape(pred).to_vec();
    let p = g.clamp(pred, EPS, 1.0 - EPS);
    let log_p = g.log(p)?;
    let q = g.one_minus(p);
    let log_q = g.log(q)?;
    let y = g.input(shape.clone(), labels.to_vec())?;
    let not_y = g.one_minus(y);
    let pos = g.mul(y, log_p)?;
    let neg = g.mul(not_y, log_q)?;
    let sum = g.add(pos, neg)?;
    let mean = g.mean(sum)?;
    Ok(g.scale(mean, -1.0))
}

/// Scalar counterpart of [`bce_loss`] for evaluation.
pub fn bce(scores: &[f64], labels: &[f64]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::shape("bce", &[scores.len()], &[labels.len()]));
    }
    if scores.is_empty() {
        return Err(Error::Contract("loss of an empty prediction set".into()));
    }
    let total: f64 = scores
        .iter()
        .zip(labels)
        .map(|(s, y)| {
            let p = s.clamp(EPS, 1.0 - EPS);
            -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
        })
        .sum();
    Ok(total / scores.len() as f64)
}

/// Area under the ROC curve via the Mann–Whitney statistic, with average
/// ranks for tied scores.
pub fn auc(scores: &[f64], labels: &[f64]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::shape("auc", &[scores.len()], &[labels.len()]));
    }
    let n_pos = labels.iter().filter(|y| **y > 0.5).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::UndefinedMetric(format!(
            "AUC needs both classes ({n_pos} positive, {n_neg} negative)"
        )));
    }
    let ranks = average_ranks(scores);
    let rank_sum_pos: f64 = ranks
        .iter()
        .zip(labels)
        .filter(|(_, y)| **y > 0.5)
        .map(|(r, _)| r)
        .sum();
    let (p, q) = (n_pos as f64, n_neg as f64);
    Ok((rank_sum_pos - p * (p + 1.0) / 2.0) / (p * q))
}

/// Ranks `1..=n` with ties given their average rank.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|a, b| values[*a].total_cmp(&values[*b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let avg = (i + j + 2) as f64 / 2.0;
        order[i..=j].iter().for_each(|k| ranks[*k] = avg);
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation (Pearson correlation of average ranks).
/// `None` when either side is constant.
pub fn spearman(a: &[f64], b: &[f64]) -> Result<Option<f64>> {
    if a.len() != b.len() {
        return Err(Error::shape("spearman", &[a.len()], &[b.len()]));
    }
    let (ra, rb) = (average_ranks(a), average_ranks(b));
    let n = a.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in ra.iter().zip(&rb) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        return Ok(None);
    }
    Ok(Some(sab / (saa * sbb).sqrt()))
}

/// Fraction of predictions where `score ≥ threshold` agrees with the label.
pub fn acc(scores: &[f64], labels: &[f64], threshold: f64) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::shape("acc", &[scores.len()], &[labels.len()]));
    }
    if scores.is_empty() {
        return Err(Error::Contract(
            "accuracy of an empty prediction set".into(),
        ));
    }
    let hits = scores
        .iter()
        .zip(labels)
        .filter(|(s, y)| (**s >= threshold) == (**y > 0.5))
        .count();
    Ok(hits as f64 / scores.len() as f64)
}

/// Evaluation results on one prediction set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    /// `None` when only one class is present.
    pub auc: Option<f64>,
    pub acc: f64,
    pub loss: f64,
    pub n_evaluated: usize,
}

impl Metrics {
    pub fn compute(scores: &[f64], labels: &[f64]) -> Result<Metrics> {
        let auc = match auc(scores, labels) {
            Ok(a) => Some(a),
            Err(Error::UndefinedMetric(_)) => None,
            Err(e) => return Err(e),
        };
        Ok(Metrics {
            auc,
            acc: acc(scores, labels, 0.5)?,
            loss: bce(scores, labels)?,
            n_evaluated: scores.len(),
        })
    }
}
