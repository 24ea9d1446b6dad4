use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Uniform B-spline grid on `[lo, hi]` with `intervals` cells and degree `order`.
///
/// The knot vector extends `order` cells past each end, giving
/// `intervals + 2·order + 1` knots and `intervals + order` basis functions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GridParams")]
pub struct SplineGrid {
    lo: f64,
    hi: f64,
    intervals: usize,
    order: usize,
    #[serde(skip)]
    knots: Vec<f64>,
}

#[derive(Deserialize)]
struct GridParams {
    lo: f64,
    hi: f64,
    intervals: usize,
    order: usize,
}

impl TryFrom<GridParams> for SplineGrid {
    type Error = Error;

    fn try_from(p: GridParams) -> Result<Self> {
        SplineGrid::new(p.lo, p.hi, p.intervals, p.order)
    }
}

impl Default for SplineGrid {
    fn default() -> Self {
        SplineGrid::new(-1.0, 1.0, 5, 3).expect("default grid is valid")
    }
}

impl SplineGrid {
    pub fn new(lo: f64, hi: f64, intervals: usize, order: usize) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite()) || lo >= hi {
            return Err(Error::Config(format!("grid range [{lo}, {hi}] is empty")));
        }
        if intervals == 0 {
            return Err(Error::Config("grid needs at least one interval".into()));
        }
        let h = (hi - lo) / intervals as f64;
        let knots = (0..intervals + 2 * order + 1)
            .map(|i| lo + (i as f64 - order as f64) * h)
            .collect();
        Ok(SplineGrid {
            lo,
            hi,
            intervals,
            order,
            knots,
        })
    }

    pub fn lo(&self) -> f64 {
        self.lo
    }

    pub fn hi(&self) -> f64 {
        self.hi
    }

    pub fn intervals(&self) -> usize {
        self.intervals
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    /// Number of basis functions `L = G + p`.
    pub fn basis_count(&self) -> usize {
        self.intervals + self.order
    }

    /// Evaluates all `L` basis functions at `x` (clamped into range) by
    /// bottom-up Cox–de Boor, writing values and `d/dx` into the slices.
    /// The derivative is zero where clamping took effect.
    pub fn basis_with_deriv(&self, x: f64, values: &mut [f64], deriv: &mut [f64]) {
        let p = self.order;
        let t = &self.knots;
        let clamped = x < self.lo || x > self.hi;
        let xc = x.clamp(self.lo, self.hi);
        let h = (self.hi - self.lo) / self.intervals as f64;
        // interval index in the extended knot vector; x == hi closes the last cell
        let cell = (((xc - self.lo) / h).floor() as usize).min(self.intervals - 1);
        let mut span = p + cell;
        // guard against rounding placing x just outside [t_span, t_span+1)
        if xc < t[span] && span > p {
            span -= 1;
        } else if xc >= t[span + 1] && span + 1 < p + self.intervals {
            span += 1;
        }

        let n0 = t.len() - 1;
        let mut cur = vec![0.0; n0];
        cur[span] = 1.0;
        let mut prev_degree = Vec::new();
        for d in 1..=p {
            if d == p {
                prev_degree = cur.clone();
            }
            let len = n0 - d;
            let mut next = vec![0.0; len];
            for (i, slot) in next.iter_mut().enumerate() {
                let mut v = 0.0;
                if cur[i] != 0.0 {
                    v += (xc - t[i]) / (t[i + d] - t[i]) * cur[i];
                }
                if cur[i + 1] != 0.0 {
                    v += (t[i + d + 1] - xc) / (t[i + d + 1] - t[i + 1]) * cur[i + 1];
                }
                *slot = v;
            }
            cur = next;
        }
        values.copy_from_slice(&cur);

        if p == 0 || clamped {
            deriv.iter_mut().for_each(|d| *d = 0.0);
            return;
        }
        let pf = p as f64;
        for (i, d) in deriv.iter_mut().enumerate() {
            let left = pf / (t[i + p] - t[i]) * prev_degree[i];
            let right = pf / (t[i + p + 1] - t[i + 1]) * prev_degree[i + 1];
            *d = left - right;
        }
    }

    pub fn basis(&self, x: f64) -> Vec<f64> {
        let l = self.basis_count();
        let mut v = vec![0.0; l];
        let mut d = vec![0.0; l];
        self.basis_with_deriv(x, &mut v, &mut d);
        v
    }
}
