use rand::Rng;
use rand_distr::{Distribution, Uniform};

use super::fc::{Named, NamedMut};
use crate::autodiff::{Graph, Tensor, Var};
use crate::error::Result;

/// Student, exercise and concept embedding tables.
#[derive(Clone, Debug)]
pub struct EmbeddingBank {
    /// `[N, D]`
    pub w_s: Tensor,
    /// `[M, D]`
    pub w_e: Tensor,
    /// `[K, D]`
    pub w_q: Tensor,
}

pub(crate) fn xavier<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> Result<Tensor> {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    let uni = Uniform::new_inclusive(-bound, bound);
    Tensor::param(
        vec![rows, cols],
        (0..rows * cols).map(|_| uni.sample(rng)).collect(),
    )
}

impl EmbeddingBank {
    /// Random student and exercise tables; `W_Q` starts as the identity when
    /// `D = K` so that `h_C` is the Q-matrix row itself.
    pub fn new<R: Rng>(n: usize, m: usize, k: usize, d: usize, rng: &mut R) -> Result<Self> {
        let w_s = xavier(n, d, rng)?;
        let w_e = xavier(m, d, rng)?;
        let w_q = if d == k {
            let mut eye = vec![0.0; k * d];
            (0..k).for_each(|i| eye[i * d + i] = 1.0);
            Tensor::param(vec![k, d], eye)?
        } else {
            xavier(k, d, rng)?
        };
        Ok(EmbeddingBank { w_s, w_e, w_q })
    }

    /// `(h_S, h_E, h_C)` for a batch; `q_rows` holds the batch's Q rows `[B, K]`.
    pub fn embed(
        &self,
        g: &mut Graph,
        students: &[usize],
        exercises: &[usize],
        q_rows: Var,
    ) -> Result<(Var, Var, Var)> {
        let ws = g.param(&self.w_s);
        let hs = g.gather_rows(ws, students)?;
        let we = g.param(&self.w_e);
        let he = g.gather_rows(we, exercises)?;
        let wq = g.param(&self.w_q);
        let hc = g.matmul(q_rows, wq)?;
        Ok((hs, he, hc))
    }

    pub(crate) fn collect<'a>(&'a self, prefix: &str, out: &mut Named<'a>) {
        out.push((format!("{prefix}.w_s"), &self.w_s));
        out.push((format!("{prefix}.w_e"), &self.w_e));
        out.push((format!("{prefix}.w_q"), &self.w_q));
    }

    pub(crate) fn collect_mut<'a>(&'a mut self, prefix: &str, out: &mut NamedMut<'a>) {
        out.push((format!("{prefix}.w_s"), &mut self.w_s));
        out.push((format!("{prefix}.w_e"), &mut self.w_e));
        out.push((format!("{prefix}.w_q"), &mut self.w_q));
    }
}
