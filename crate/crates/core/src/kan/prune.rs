use serde::Serialize;

use super::layer::{KanLayer, KanNetwork};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// Mean of `|φ_{q,p}(x_p)|` over the rows of `sample`, as an `n_out × n_in` matrix.
pub fn edge_importance(layer: &KanLayer, sample: &Tensor) -> Result<Vec<Vec<f64>>> {
    let (rows, width) = match sample.shape() {
        [r, w] => (*r, *w),
        s => return Err(Error::shape("edge_importance", s, &[0, layer.n_in])),
    };
    if width != layer.n_in {
        return Err(Error::shape(
            "edge_importance",
            sample.shape(),
            &[rows, layer.n_in],
        ));
    }
    if rows == 0 {
        return Err(Error::Contract(
            "edge importance needs a non-empty sample".into(),
        ));
    }
    let mut imp = vec![vec![0.0; layer.n_in]; layer.n_out];
    for r in 0..rows {
        for (p, &x) in sample.row(r).iter().enumerate() {
            let basis = layer.grid.basis(x);
            for (q, row) in imp.iter_mut().enumerate() {
                row[p] += layer.edge_value_with_basis(q, p, x, &basis).abs();
            }
        }
    }
    let n = rows as f64;
    imp.iter_mut().flatten().for_each(|v| *v /= n);
    Ok(imp)
}

/// Per-layer outcome of [`prune`].
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LayerPrune {
    pub kept: usize,
    pub total: usize,
    pub importance: Vec<Vec<f64>>,
    pub kept_mask: Vec<Vec<bool>>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct PruneReport {
    pub threshold: f64,
    pub layers: Vec<LayerPrune>,
}

impl PruneReport {
    pub fn kept(&self) -> usize {
        self.layers.iter().map(|l| l.kept).sum()
    }

    pub fn total(&self) -> usize {
        self.layers.iter().map(|l| l.total).sum()
    }

    pub fn kept_fraction(&self) -> f64 {
        self.kept() as f64 / self.total().max(1) as f64
    }
}

/// Keep rule shared by pruning and graph export. Threshold zero keeps every
/// edge; otherwise an edge survives when it is active and reaches
/// `threshold · max`, and the per-layer maximum always survives.
pub fn keeps_edge(importance: f64, max: f64, threshold: f64) -> bool {
    threshold == 0.0 || (importance > 0.0 && (importance >= threshold * max || importance == max))
}

pub fn keep_mask(importance: &[Vec<f64>], threshold: f64) -> Vec<Vec<bool>> {
    let max = importance.iter().flatten().fold(0.0f64, |m, v| m.max(*v));
    importance
        .iter()
        .map(|row| row.iter().map(|v| keeps_edge(*v, max, threshold)).collect())
        .collect()
}

/// Copy of `net` with every low-importance edge zeroed. Importance for layer
/// `i` is measured on the inputs that layer receives from the unpruned
/// network when fed `sample`.
pub fn prune(
    net: &KanNetwork,
    sample: &Tensor,
    threshold: f64,
) -> Result<(KanNetwork, PruneReport)> {
    if threshold.is_nan() || threshold < 0.0 {
        return Err(Error::Config(format!(
            "prune threshold must be ≥ 0, got {threshold}"
        )));
    }
    let inputs = net.layer_inputs(sample)?;
    let mut pruned = net.clone();
    let mut report = PruneReport {
        threshold,
        layers: Vec::with_capacity(net.layers.len()),
    };
    for (layer, input) in pruned.layers.iter_mut().zip(&inputs) {
        let importance = edge_importance(layer, input)?;
        let mask = keep_mask(&importance, threshold);
        let mut kept = 0;
        for (q, row) in mask.iter().enumerate() {
            for (p, keep) in row.iter().enumerate() {
                if *keep {
                    kept += 1;
                } else {
                    layer.zero_edge(q, p);
                }
            }
        }
        report.layers.push(LayerPrune {
            kept,
            total: layer.n_in * layer.n_out,
            importance,
            kept_mask: mask,
        });
    }
    Ok((pruned, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kan::{Renorm, SplineGrid};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sample(rows: usize, width: usize, seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::new(
            vec![rows, width],
            (0..rows * width)
                .map(|_| rng.gen_range(-1.0..1.0))
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn zero_edge_has_zero_importance_and_scaling_is_linear() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut layer = KanLayer::new(3, 2, SplineGrid::default(), &mut rng).unwrap();
        layer.zero_edge(1, 2);
        let x = sample(20, 3, 4);
        let before = edge_importance(&layer, &x).unwrap();
        assert_eq!(before[1][2], 0.0);

        let l = layer.basis_count();
        let start = l; // edge (out 0, in 1)
        layer.spline_coeffs.values_mut()[start..start + l]
            .iter_mut()
            .for_each(|c| *c *= 2.0);
        layer.base_weight.values_mut()[1] *= 2.0;
        let after = edge_importance(&layer, &x).unwrap();
        assert!((after[0][1] - 2.0 * before[0][1]).abs() < 1e-12);
        assert_eq!(after[1][0], before[1][0]);
    }

    #[test]
    fn empty_sample_is_rejected() {
        let layer = KanLayer::zeros(2, 1, SplineGrid::default()).unwrap();
        let x = Tensor::new(vec![0, 2], vec![]).unwrap();
        assert!(matches!(
            edge_importance(&layer, &x),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn threshold_zero_keeps_everything_and_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let net =
            KanNetwork::random(&[4, 3, 2], &SplineGrid::default(), Renorm::None, &mut rng).unwrap();
        let x = sample(16, 4, 6);
        let (pruned, report) = prune(&net, &x, 0.0).unwrap();
        assert_eq!(report.kept(), report.total());
        assert_eq!(pruned.eval(&x).unwrap(), net.eval(&x).unwrap());
    }

    #[test]
    fn above_one_keeps_only_the_maximum() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let net =
            KanNetwork::random(&[4, 3], &SplineGrid::default(), Renorm::None, &mut rng).unwrap();
        let (_, report) = prune(&net, &sample(10, 4, 9), 1.0 + 1e-9).unwrap();
        assert_eq!(report.layers[0].kept, 1);

        let zero = KanNetwork::new(
            vec![KanLayer::zeros(2, 2, SplineGrid::default()).unwrap()],
            Renorm::None,
        )
        .unwrap();
        let (_, report) = prune(&zero, &sample(4, 2, 1), 0.5).unwrap();
        assert_eq!(report.kept(), 0);
        assert!(prune(&zero, &sample(4, 2, 1), -0.1).is_err());
    }
}
