use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use super::grid::SplineGrid;
use crate::autodiff::{sigmoid, Graph, Tensor, Var};
use crate::error::{Error, Result};

/// One KAN layer: `n_in × n_out` learnable edge functions
/// `φ(x) = w_base·silu(x) + Σ_l c_l·B_l(x)`; each output sums its edges.
#[derive(Clone, Debug)]
pub struct KanLayer {
    pub n_in: usize,
    pub n_out: usize,
    pub grid: SplineGrid,
    /// `[n_out, n_in, L]`
    pub spline_coeffs: Tensor,
    /// `[n_out, n_in]`
    pub base_weight: Tensor,
}

impl KanLayer {
    /// Random layer: base weights uniform in `±1/√n_in`, spline coefficients
    /// normal with standard deviation `0.1/√L`.
    pub fn new<R: Rng>(n_in: usize, n_out: usize, grid: SplineGrid, rng: &mut R) -> Result<Self> {
        let mut layer = KanLayer::zeros(n_in, n_out, grid)?;
        let bound = 1.0 / (n_in as f64).sqrt();
        let uni = Uniform::new_inclusive(-bound, bound);
        for w in layer.base_weight.values_mut() {
            *w = uni.sample(rng);
        }
        let l = layer.grid.basis_count() as f64;
        let normal = Normal::new(0.0, 0.1 / l.sqrt()).expect("positive std");
        for c in layer.spline_coeffs.values_mut() {
            *c = normal.sample(rng);
        }
        Ok(layer)
    }

    pub fn zeros(n_in: usize, n_out: usize, grid: SplineGrid) -> Result<Self> {
        if n_in == 0 || n_out == 0 {
            return Err(Error::Config(format!(
                "KAN layer needs positive widths, got {n_in}→{n_out}"
            )));
        }
        let l = grid.basis_count();
        Ok(KanLayer {
            n_in,
            n_out,
            spline_coeffs: Tensor::param(vec![n_out, n_in, l], vec![0.0; n_out * n_in * l])?,
            base_weight: Tensor::param(vec![n_out, n_in], vec![0.0; n_out * n_in])?,
            grid,
        })
    }

    pub fn basis_count(&self) -> usize {
        self.grid.basis_count()
    }

    /// Coefficients of edge `(q, p)`.
    pub fn edge_coeffs(&self, q: usize, p: usize) -> &[f64] {
        let l = self.basis_count();
        let start = (q * self.n_in + p) * l;
        &self.spline_coeffs.values()[start..start + l]
    }

    pub fn edge_base(&self, q: usize, p: usize) -> f64 {
        self.base_weight.values()[q * self.n_in + p]
    }

    /// `φ_{q,p}(x)` evaluated for a single edge.
    pub fn edge_value(&self, q: usize, p: usize, x: f64) -> f64 {
        let basis = self.grid.basis(x);
        self.edge_value_with_basis(q, p, x, &basis)
    }

    pub(crate) fn edge_value_with_basis(&self, q: usize, p: usize, x: f64, basis: &[f64]) -> f64 {
        let spline: f64 = self
            .edge_coeffs(q, p)
            .iter()
            .zip(basis)
            .map(|(c, b)| c * b)
            .sum();
        self.edge_base(q, p) * x * sigmoid(x) + spline
    }

    /// Sets every parameter of edge `(q, p)` to zero.
    pub fn zero_edge(&mut self, q: usize, p: usize) {
        let l = self.basis_count();
        let start = (q * self.n_in + p) * l;
        self.spline_coeffs.values_mut()[start..start + l]
            .iter_mut()
            .for_each(|c| *c = 0.0);
        self.base_weight.values_mut()[q * self.n_in + p] = 0.0;
    }

    /// Basis tensor `[B, n_in, L]` for a `[B, n_in]` input.
    pub fn bspline_basis(&self, g: &mut Graph, x: Var) -> Var {
        let grid = self.grid.clone();
        g.expand(x, grid.basis_count(), move |v, out, d| {
            grid.basis_with_deriv(v, out, d)
        })
    }

    /// Layer forward: the basis is evaluated once for the whole batch and
    /// contracted against all coefficients in a single product.
    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let shape = g.shape(x).to_vec();
        let batch = match shape.as_slice() {
            [b, n] if *n == self.n_in => *b,
            _ => return Err(Error::shape("kan_layer_forward", &shape, &[0, self.n_in])),
        };
        let l = self.basis_count();
        let basis = self.bspline_basis(g, x);
        let flat = g.reshape(basis, vec![batch, self.n_in * l])?;
        let coeffs = g.param(&self.spline_coeffs);
        let coeffs = g.reshape(coeffs, vec![self.n_out, self.n_in * l])?;
        let spline = g.matmul_t(flat, coeffs)?;
        let act = g.silu(x);
        let base_w = g.param(&self.base_weight);
        let base = g.matmul_t(act, base_w)?;
        g.add(spline, base)
    }

    /// Forward for one-hot inputs given by index, without materializing the
    /// `B × n_in` one-hot batch.
    pub fn forward_one_hot(&self, g: &mut Graph, idx: &[usize]) -> Result<Var> {
        self.forward_indicator(g, idx, 0.0, 1.0)
    }

    /// Forward for inputs equal to `off` everywhere except `on` at column
    /// `idx[r]` of row `r`: `Σ_p φ_{q,p}(off)` plus the per-input correction
    /// `φ_{q,i}(on) − φ_{q,i}(off)`.
    pub fn forward_indicator(
        &self,
        g: &mut Graph,
        idx: &[usize],
        off: f64,
        on: f64,
    ) -> Result<Var> {
        if let Some(bad) = idx.iter().find(|i| **i >= self.n_in) {
            return Err(Error::Lookup(format!(
                "one-hot index {bad} out of range for width {}",
                self.n_in
            )));
        }
        let l = self.basis_count();
        let (b0, b1) = (self.grid.basis(off), self.grid.basis(on));
        let (s0, s1) = (off * sigmoid(off), on * sigmoid(on));
        let coeffs = g.param(&self.spline_coeffs);
        let coeffs = g.reshape(coeffs, vec![self.n_out * self.n_in, l])?;
        let base_w = g.param(&self.base_weight);

        let off_basis = g.input(vec![l, 1], b0.clone())?;
        let at_off = g.matmul(coeffs, off_basis)?;
        let at_off = g.reshape(at_off, vec![self.n_out, self.n_in])?;
        let base_off = g.scale(base_w, s0);
        let at_off = g.add(at_off, base_off)?;
        let offset = g.sum_rows(at_off)?;
        let offset = g.reshape(offset, vec![1, self.n_out])?;

        let delta_basis: Vec<f64> = b1.iter().zip(&b0).map(|(a, b)| a - b).collect();
        let delta_basis = g.input(vec![l, 1], delta_basis)?;
        let delta = g.matmul(coeffs, delta_basis)?;
        let delta = g.reshape(delta, vec![self.n_out, self.n_in])?;
        let base_delta = g.scale(base_w, s1 - s0);
        let delta = g.add(delta, base_delta)?;
        let by_input = g.transpose(delta)?;
        let picked = g.gather_rows(by_input, idx)?;
        g.add(picked, offset)
    }
}

/// Input handling between layers of a [`KanNetwork`].
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Renorm {
    /// Inputs go to the grid as they are and are clamped at its boundary.
    #[default]
    None,
    /// The network input is taken to lie in `[0, 1]` and mapped affinely
    /// onto the grid range; hidden activations are squashed by a sigmoid
    /// first and then mapped the same way.
    AffineToGrid,
}

impl std::str::FromStr for Renorm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Renorm::None),
            "affine" | "affine-to-grid" => Ok(Renorm::AffineToGrid),
            other => Err(Error::Config(format!(
                "unknown renormalization '{other}' (none | affine-to-grid)"
            ))),
        }
    }
}

/// Stack of KAN layers applied in order.
#[derive(Clone, Debug)]
pub struct KanNetwork {
    pub layers: Vec<KanLayer>,
    pub renorm: Renorm,
}

impl KanNetwork {
    pub fn new(layers: Vec<KanLayer>, renorm: Renorm) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Config("KAN network needs at least one layer".into()));
        }
        for pair in layers.windows(2) {
            if pair[0].n_out != pair[1].n_in {
                return Err(Error::shape(
                    "kan_network",
                    &[pair[0].n_in, pair[0].n_out],
                    &[pair[1].n_in, pair[1].n_out],
                ));
            }
        }
        Ok(KanNetwork { layers, renorm })
    }

    /// Random network with widths `widths[0] → … → widths[last]`.
    pub fn random<R: Rng>(
        widths: &[usize],
        grid: &SplineGrid,
        renorm: Renorm,
        rng: &mut R,
    ) -> Result<Self> {
        if widths.len() < 2 {
            return Err(Error::Config(
                "KAN widths need an input and an output".into(),
            ));
        }
        let layers = widths
            .windows(2)
            .map(|w| KanLayer::new(w[0], w[1], grid.clone(), rng))
            .collect::<Result<Vec<_>>>()?;
        KanNetwork::new(layers, renorm)
    }

    pub fn n_in(&self) -> usize {
        self.layers[0].n_in
    }

    pub fn n_out(&self) -> usize {
        self.layers[self.layers.len() - 1].n_out
    }

    pub fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.n_in()];
        w.extend(self.layers.iter().map(|l| l.n_out));
        w
    }

    /// Maps the raw input of layer `index` to what the layer actually sees.
    pub fn prepare_input(&self, g: &mut Graph, x: Var, index: usize) -> Var {
        match self.renorm {
            Renorm::None => x,
            Renorm::AffineToGrid => {
                let grid = &self.layers[index].grid;
                let unit = if index == 0 { x } else { g.sigmoid(x) };
                let scaled = g.scale(unit, grid.hi() - grid.lo());
                g.add_scalar(scaled, grid.lo())
            }
        }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let mut h = x;
        for (i, layer) in self.layers.iter().enumerate() {
            let input = self.prepare_input(g, h, i);
            h = layer.forward(g, input)?;
        }
        Ok(h)
    }

    /// Forward for a one-hot batch given by index; renormalization of the
    /// network input applies to the implied 0/1 entries.
    pub fn forward_one_hot(&self, g: &mut Graph, idx: &[usize]) -> Result<Var> {
        let (off, on) = match self.renorm {
            Renorm::None => (0.0, 1.0),
            Renorm::AffineToGrid => (self.layers[0].grid.lo(), self.layers[0].grid.hi()),
        };
        let mut h = self.layers[0].forward_indicator(g, idx, off, on)?;
        for (i, layer) in self.layers.iter().enumerate().skip(1) {
            let input = self.prepare_input(g, h, i);
            h = layer.forward(g, input)?;
        }
        Ok(h)
    }

    /// Forward outside any training graph.
    pub fn eval(&self, x: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let xv = g.constant(x);
        let out = self.forward(&mut g, xv)?;
        Ok(g.tensor(out))
    }

    /// The input each layer receives (after renormalization) for batch `x`.
    pub fn layer_inputs(&self, x: &Tensor) -> Result<Vec<Tensor>> {
        let mut g = Graph::new();
        let mut h = g.constant(x);
        let mut inputs = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            let input = self.prepare_input(&mut g, h, i);
            inputs.push(g.tensor(input));
            h = layer.forward(&mut g, input)?;
        }
        Ok(inputs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(11)
    }

    #[test]
    fn zero_layer_outputs_zero() {
        let layer = KanLayer::zeros(3, 2, SplineGrid::default()).unwrap();
        let x = Tensor::new(vec![4, 3], (0..12).map(|i| i as f64 * 0.1 - 0.5).collect()).unwrap();
        let net = KanNetwork::new(vec![layer], Renorm::None).unwrap();
        assert!(net.eval(&x).unwrap().values().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn single_basis_selection() {
        let mut layer = KanLayer::zeros(1, 1, SplineGrid::default()).unwrap();
        layer.spline_coeffs.values_mut()[0] = 1.0;
        let net = KanNetwork::new(vec![layer.clone()], Renorm::None).unwrap();
        for x in [-0.9, -0.5, 0.0, 0.3] {
            let out = net
                .eval(&Tensor::new(vec![1, 1], vec![x]).unwrap())
                .unwrap();
            assert_eq!(out.values()[0], layer.grid.basis(x)[0]);
        }
    }

    #[test]
    fn width_mismatch_is_a_shape_error() {
        let layer = KanLayer::new(3, 2, SplineGrid::default(), &mut rng()).unwrap();
        let mut g = Graph::new();
        let x = g.input(vec![2, 4], vec![0.0; 8]).unwrap();
        assert!(matches!(layer.forward(&mut g, x), Err(Error::Shape { .. })));
        let a = KanLayer::zeros(3, 2, SplineGrid::default()).unwrap();
        let b = KanLayer::zeros(3, 1, SplineGrid::default()).unwrap();
        assert!(KanNetwork::new(vec![a, b], Renorm::None).is_err());
    }

    #[test]
    fn one_hot_path_matches_dense_forward() {
        let layer = KanLayer::new(7, 3, SplineGrid::default(), &mut rng()).unwrap();
        let idx = [0usize, 4, 6, 4, 2];
        let mut dense = vec![0.0; idx.len() * 7];
        for (r, &i) in idx.iter().enumerate() {
            dense[r * 7 + i] = 1.0;
        }
        let mut g = Graph::new();
        let x = g.input(vec![idx.len(), 7], dense).unwrap();
        let full = layer.forward(&mut g, x).unwrap();
        let sparse = layer.forward_one_hot(&mut g, &idx).unwrap();
        for (a, b) in g.value(full).iter().zip(g.value(sparse)) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
        assert!(layer.forward_one_hot(&mut g, &[7]).is_err());
    }

    #[test]
    fn affine_renorm_maps_unit_interval_to_grid() {
        let net = KanNetwork::random(
            &[2, 3, 1],
            &SplineGrid::default(),
            Renorm::AffineToGrid,
            &mut rng(),
        )
        .unwrap();
        let x = Tensor::new(vec![2, 2], vec![0.0, 1.0, 0.5, 0.25]).unwrap();
        let inputs = net.layer_inputs(&x).unwrap();
        assert_eq!(inputs[0].values(), &[-1.0, 1.0, 0.0, -0.5]);
        assert!(inputs[1].values().iter().all(|v| (-1.0..=1.0).contains(v)));
    }
}
