#![allow(dead_code)]

use kancd::autodiff::{Graph, Tensor};
use kancd::cdm::{DiagnosisModel, Mode, ModelConfig, TraceVars, Variant};
use kancd::kan::{KanLayer, SplineGrid};
use kancd::train::bce_loss;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Textbook recursive Cox–de Boor. `x` must already lie in `[lo, hi]`;
/// the right end belongs to the last cell.
pub fn naive_basis(knots: &[f64], i: usize, p: usize, x: f64, last_cell: usize) -> f64 {
    if p == 0 {
        let at_end = x >= knots[last_cell + 1];
        let hit = if at_end {
            i == last_cell
        } else {
            knots[i] <= x && x < knots[i + 1]
        };
        return if hit { 1.0 } else { 0.0 };
    }
    let pf = |num: f64, den: f64| if den == 0.0 { 0.0 } else { num / den };
    pf(x - knots[i], knots[i + p] - knots[i]) * naive_basis(knots, i, p - 1, x, last_cell)
        + pf(knots[i + p + 1] - x, knots[i + p + 1] - knots[i + 1])
            * naive_basis(knots, i + 1, p - 1, x, last_cell)
}

pub fn naive_knots(lo: f64, hi: f64, g: usize, p: usize) -> Vec<f64> {
    let h = (hi - lo) / g as f64;
    (0..g + 2 * p + 1)
        .map(|i| lo + (i as f64 - p as f64) * h)
        .collect()
}

/// Sum over edges of `w·x/(1+e^{−x}) + Σ c_l B_l(clamp(x))`, one edge at a time.
pub fn naive_layer(layer: &KanLayer, rows: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let grid = &layer.grid;
    let (g, p) = (grid.intervals(), grid.order());
    let knots = naive_knots(grid.lo(), grid.hi(), g, p);
    let l = g + p;
    let coeffs = layer.spline_coeffs.values();
    let base = layer.base_weight.values();
    rows.iter()
        .map(|x| {
            (0..layer.n_out)
                .map(|q| {
                    let mut total = 0.0;
                    for (pi, &xv) in x.iter().enumerate() {
                        let xc = xv.clamp(grid.lo(), grid.hi());
                        let mut spline = 0.0;
                        for b in 0..l {
                            spline += coeffs[(q * layer.n_in + pi) * l + b]
                                * naive_basis(&knots, b, p, xc, p + g - 1);
                        }
                        total += base[q * layer.n_in + pi] * xv / (1.0 + (-xv).exp()) + spline;
                    }
                    total
                })
                .collect()
        })
        .collect()
}

pub fn random_layer<R: Rng>(rng: &mut R) -> (KanLayer, Vec<Vec<f64>>) {
    let n_in = rng.gen_range(1..=5);
    let n_out = rng.gen_range(1..=4);
    let lo = rng.gen_range(-3.0..0.5);
    let hi = lo + rng.gen_range(0.2..4.0);
    let grid = SplineGrid::new(lo, hi, rng.gen_range(1..=8), rng.gen_range(0..=4)).unwrap();
    let mut layer = KanLayer::new(n_in, n_out, grid, rng).unwrap();
    for c in layer.spline_coeffs.values_mut() {
        *c = rng.gen_range(-2.0..2.0);
    }
    let pad = 0.2 * (hi - lo);
    let rows = (0..rng.gen_range(1..=8))
        .map(|_| {
            (0..n_in)
                .map(|_| rng.gen_range(lo - pad..hi + pad))
                .collect()
        })
        .collect();
    (layer, rows)
}

/// Efficient layer forward through the graph.
pub fn graph_layer(layer: &KanLayer, rows: &[Vec<f64>]) -> Vec<f64> {
    let mut g = Graph::new();
    let x = g
        .input(vec![rows.len(), layer.n_in], rows.concat())
        .unwrap();
    let y = layer.forward(&mut g, x).unwrap();
    g.value(y).to_vec()
}

/// Max abs difference between the efficient and naive forward.
pub fn kan_oracle_error(layer: &KanLayer, rows: &[Vec<f64>]) -> f64 {
    let fast = graph_layer(layer, rows);
    let slow: Vec<f64> = naive_layer(layer, rows).concat();
    fast.iter()
        .zip(&slow)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max)
}

/// AUC by counting every (positive, negative) pair; ties count one half.
pub fn pair_auc(scores: &[f64], labels: &[f64]) -> f64 {
    let (mut twice, mut pairs) = (0u64, 0u64);
    for (i, yi) in labels.iter().enumerate() {
        if *yi < 0.5 {
            continue;
        }
        for (j, yj) in labels.iter().enumerate() {
            if *yj > 0.5 {
                continue;
            }
            pairs += 1;
            if scores[i] > scores[j] {
                twice += 2;
            } else if scores[i] == scores[j] {
                twice += 1;
            }
        }
    }
    (twice as f64 / 2.0) / pairs as f64
}

pub fn bce_loop(scores: &[f64], labels: &[f64]) -> f64 {
    let mut total = 0.0;
    for i in 0..scores.len() {
        let p = scores[i].clamp(1e-7, 1.0 - 1e-7);
        total -= if labels[i] > 0.5 {
            p.ln()
        } else {
            (1.0 - p).ln()
        };
    }
    total / scores.len() as f64
}

/// A random `m × k` Q-matrix in which every row names a concept.
pub fn random_q<R: Rng>(m: usize, k: usize, rng: &mut R) -> Vec<Vec<u8>> {
    (0..m)
        .map(|j| {
            (0..k)
                .map(|c| u8::from(c == j % k || rng.gen_bool(0.4)))
                .collect()
        })
        .collect()
}

/// Width of the NCD-style FC stacks in the full gradient suite.
pub const NARROW_NCD: [usize; 2] = [16, 8];

pub fn tiny_model(
    variant: Variant,
    seed: u64,
    q: &[Vec<u8>],
    ncd_hidden: &[usize],
) -> DiagnosisModel {
    let mut cfg = ModelConfig::new(variant, 5, q.len(), q[0].len());
    cfg.seed = seed;
    cfg.ncd_hidden = ncd_hidden.to_vec();
    let mut model = DiagnosisModel::new(cfg, q).unwrap();
    // move off special points such as the identity W_Q, whose products sit
    // exactly on the spline grid's clamped ends
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    for (_, t) in model.params_mut() {
        for v in t.values_mut() {
            *v += rng.gen_range(-0.05..0.05);
        }
    }
    model
}

fn batch_loss(model: &DiagnosisModel, s: &[usize], e: &[usize], y: &[f64], mode: Mode) -> f64 {
    let mut g = Graph::new();
    let pred = model
        .forward(&mut g, s, e, mode, &mut TraceVars::default())
        .unwrap();
    let loss = bce_loss(&mut g, pred, y).unwrap();
    g.value(loss)[0]
}

/// Largest relative error between reverse-mode and central-difference
/// gradients over every parameter entry, and the number of entries checked.
/// Relative error is `|a − n| / max(|a|, |n|, 1e-5)`. Only every `stride`-th
/// entry (counted across all tensors) is perturbed.
pub fn gradient_check(
    model: &mut DiagnosisModel,
    s: &[usize],
    e: &[usize],
    y: &[f64],
    stride: usize,
) -> (f64, usize, String) {
    let mode = Mode::Train {
        tau: 0.7,
        noise_seed: 11,
    };
    let mut g = Graph::new();
    let pred = model
        .forward(&mut g, s, e, mode, &mut TraceVars::default())
        .unwrap();
    let loss = bce_loss(&mut g, pred, y).unwrap();
    let grads = g.backward(loss).unwrap();
    let analytic: Vec<(String, Vec<f64>)> = model
        .params()
        .iter()
        .map(|(n, t)| {
            let v = grads
                .get(t)
                .map(<[f64]>::to_vec)
                .unwrap_or_else(|| vec![0.0; t.numel()]);
            (n.clone(), v)
        })
        .collect();

    let h = 1e-6;
    let (mut worst, mut checked, mut where_) = (0.0f64, 0usize, String::new());
    let mut flat = 0usize;
    for (pi, (name, grad)) in analytic.iter().enumerate() {
        for (j, a) in grad.iter().enumerate() {
            flat += 1;
            if !(flat - 1).is_multiple_of(stride) {
                continue;
            }
            let orig = model.params()[pi].1.values()[j];
            let set = |m: &mut DiagnosisModel, v: f64| m.params_mut()[pi].1.values_mut()[j] = v;
            set(model, orig + h);
            let up = batch_loss(model, s, e, y, mode);
            set(model, orig - h);
            let down = batch_loss(model, s, e, y, mode);
            set(model, orig);
            let num = (up - down) / (2.0 * h);
            let rel = (a - num).abs() / a.abs().max(num.abs()).max(1e-5);
            if rel > worst {
                worst = rel;
                where_ = format!("{name}[{j}] analytic {a:e} numeric {num:e}");
            }
            checked += 1;
        }
    }
    (worst, checked, where_)
}

/// The 5-student × 4-exercise × 3-concept instance used for gradient checks.
pub fn gradient_instance<R: Rng>(rng: &mut R) -> (Vec<Vec<u8>>, Vec<usize>, Vec<usize>, Vec<f64>) {
    let q = random_q(4, 3, rng);
    let (mut s, mut e, mut y) = (Vec::new(), Vec::new(), Vec::new());
    for st in 0..5 {
        for ex in 0..4 {
            s.push(st);
            e.push(ex);
            y.push(f64::from(u8::from(rng.gen_bool(0.5))));
        }
    }
    (q, s, e, y)
}

pub fn tensor_rows(t: &Tensor) -> Vec<Vec<f64>> {
    (0..t.shape()[0]).map(|r| t.row(r).to_vec()).collect()
}

/// Raises the NCD proficiency `f_S = σ(h_S)` of each active concept by 0.05
/// (through the student's embedding row) for `pairs` random (student,
/// exercise) pairs. Returns (perturbations tried, decreases of r̂).
pub fn monotonicity_probe<R: Rng>(
    model: &DiagnosisModel,
    pairs: usize,
    rng: &mut R,
) -> (usize, usize) {
    let (n, m, k) = (model.config().n, model.config().m, model.config().k);
    let (mut tried, mut violations) = (0, 0);
    for _ in 0..pairs {
        let (s, e) = (rng.gen_range(0..n), rng.gen_range(0..m));
        let base = model.predict(&[s], &[e]).unwrap()[0];
        for c in 0..k {
            if model.q().at(e, c) == 0.0 {
                continue;
            }
            let mut probe = model.clone();
            let bank = probe.bank_mut().expect("NCD has an embedding bank");
            let h = &mut bank.w_s.values_mut()[s * k + c];
            let f = (1.0 / (1.0 + (-*h).exp()) + 0.05).min(1.0 - 1e-12);
            *h = (f / (1.0 - f)).ln();
            let after = probe.predict(&[s], &[e]).unwrap()[0];
            tried += 1;
            if after < base {
                violations += 1;
            }
        }
    }
    (tried, violations)
}
