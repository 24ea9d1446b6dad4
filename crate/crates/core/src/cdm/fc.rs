use rand::Rng;
use rand_distr::{Distribution, Uniform};

use crate::autodiff::{Graph, Tensor, Var};
use crate::error::Result;
use crate::kan::{KanNetwork, Renorm, SplineGrid};

/// Named parameter references, collected in a fixed order.
pub(crate) type Named<'a> = Vec<(String, &'a Tensor)>;
pub(crate) type NamedMut<'a> = Vec<(String, &'a mut Tensor)>;

/// Fully connected layer `y = x·Wᵀ + b`.
#[derive(Clone, Debug)]
pub struct Fc {
    /// `[n_out, n_in]`
    pub weight: Tensor,
    /// `[1, n_out]`
    pub bias: Tensor,
    /// Weights are projected onto `W ≥ 0` after every optimizer step.
    pub monotone: bool,
}

impl Fc {
    pub fn new<R: Rng>(n_in: usize, n_out: usize, monotone: bool, rng: &mut R) -> Result<Self> {
        let bound = (6.0 / (n_in + n_out) as f64).sqrt();
        let uni = Uniform::new_inclusive(-bound, bound);
        let w = (0..n_in * n_out).map(|_| uni.sample(rng)).collect();
        Ok(Fc {
            weight: Tensor::param(vec![n_out, n_in], w)?,
            bias: Tensor::param(vec![1, n_out], vec![0.0; n_out])?,
            monotone,
        })
    }

    pub fn n_in(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn n_out(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let w = g.param(&self.weight);
        let b = g.param(&self.bias);
        let xw = g.matmul_t(x, w)?;
        g.add(xw, b)
    }

    pub fn project(&mut self) {
        if self.monotone {
            self.weight
                .values_mut()
                .iter_mut()
                .for_each(|w| *w = w.max(0.0));
        }
    }

    pub(crate) fn collect<'a>(&'a self, prefix: &str, out: &mut Named<'a>) {
        out.push((format!("{prefix}.weight"), &self.weight));
        out.push((format!("{prefix}.bias"), &self.bias));
    }

    pub(crate) fn collect_mut<'a>(&'a mut self, prefix: &str, out: &mut NamedMut<'a>) {
        out.push((format!("{prefix}.weight"), &mut self.weight));
        out.push((format!("{prefix}.bias"), &mut self.bias));
    }
}

/// FC stack with sigmoid between layers (none after the last).
#[derive(Clone, Debug)]
pub struct Mlp {
    pub layers: Vec<Fc>,
}

impl Mlp {
    pub fn new<R: Rng>(widths: &[usize], monotone: bool, rng: &mut R) -> Result<Self> {
        let layers = widths
            .windows(2)
            .map(|w| Fc::new(w[0], w[1], monotone, rng))
            .collect::<Result<_>>()?;
        Ok(Mlp { layers })
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let mut h = x;
        for (i, layer) in self.layers.iter().enumerate() {
            if i > 0 {
                h = g.sigmoid(h);
            }
            h = layer.forward(g, h)?;
        }
        Ok(h)
    }
}

/// A sub-network that is either an FC stack or a KAN.
#[derive(Clone, Debug)]
pub enum Head {
    Mlp(Mlp),
    Kan(KanNetwork),
}

impl Head {
    pub fn mlp<R: Rng>(widths: &[usize], monotone: bool, rng: &mut R) -> Result<Self> {
        Ok(Head::Mlp(Mlp::new(widths, monotone, rng)?))
    }

    pub fn kan<R: Rng>(
        widths: &[usize],
        grid: &SplineGrid,
        renorm: Renorm,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(Head::Kan(KanNetwork::random(widths, grid, renorm, rng)?))
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        match self {
            Head::Mlp(m) => m.forward(g, x),
            Head::Kan(k) => k.forward(g, x),
        }
    }

    pub fn as_kan(&self) -> Option<&KanNetwork> {
        match self {
            Head::Kan(k) => Some(k),
            Head::Mlp(_) => None,
        }
    }

    pub fn project(&mut self) {
        if let Head::Mlp(m) = self {
            m.layers.iter_mut().for_each(Fc::project);
        }
    }

    pub(crate) fn collect<'a>(&'a self, prefix: &str, out: &mut Named<'a>) {
        match self {
            Head::Mlp(m) => {
                for (i, l) in m.layers.iter().enumerate() {
                    l.collect(&format!("{prefix}.fc{i}"), out);
                }
            }
            Head::Kan(k) => collect_kan(k, prefix, out),
        }
    }

    pub(crate) fn collect_mut<'a>(&'a mut self, prefix: &str, out: &mut NamedMut<'a>) {
        match self {
            Head::Mlp(m) => {
                for (i, l) in m.layers.iter_mut().enumerate() {
                    l.collect_mut(&format!("{prefix}.fc{i}"), out);
                }
            }
            Head::Kan(k) => collect_kan_mut(k, prefix, out),
        }
    }
}

pub(crate) fn collect_kan<'a>(net: &'a KanNetwork, prefix: &str, out: &mut Named<'a>) {
    for (i, l) in net.layers.iter().enumerate() {
        out.push((format!("{prefix}.kan{i}.spline"), &l.spline_coeffs));
        out.push((format!("{prefix}.kan{i}.base"), &l.base_weight));
    }
}

pub(crate) fn collect_kan_mut<'a>(net: &'a mut KanNetwork, prefix: &str, out: &mut NamedMut<'a>) {
    for (i, l) in net.layers.iter_mut().enumerate() {
        out.push((format!("{prefix}.kan{i}.spline"), &mut l.spline_coeffs));
        out.push((format!("{prefix}.kan{i}.base"), &mut l.base_weight));
    }
}
