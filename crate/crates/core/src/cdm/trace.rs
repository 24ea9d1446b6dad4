use std::collections::BTreeMap;

use serde::Serialize;

use crate::autodiff::{Graph, Tensor, Var};

/// How a forward pass treats stochastic parts (only DINA has any).
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Mode {
    /// Soft Gumbel-Softmax relaxation at temperature `tau`, noise drawn from
    /// a generator seeded with `noise_seed`.
    Train { tau: f64, noise_seed: u64 },
    /// Deterministic hard decisions.
    Eval,
}

/// Intermediates recorded during one forward, keyed by name (`theta`,
/// `f_s`, `v`, `ls`, …). Inputs fed to named KAN sub-networks are stored
/// under `in:<name>`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ForwardTrace {
    pub values: BTreeMap<String, Tensor>,
}

impl ForwardTrace {
    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.values.get(name)
    }

    pub fn v(&self) -> Option<&Tensor> {
        self.get("v")
    }

    pub fn ls(&self) -> Option<&Tensor> {
        self.get("ls")
    }
}

/// Graph handles collected while building a forward.
#[derive(Debug, Default)]
pub struct TraceVars(pub(crate) Vec<(String, Var)>);

impl TraceVars {
    pub(crate) fn put(&mut self, name: impl Into<String>, v: Var) {
        self.0.push((name.into(), v));
    }

    pub fn resolve(&self, g: &Graph) -> ForwardTrace {
        ForwardTrace {
            values: self
                .0
                .iter()
                .map(|(n, v)| (n.clone(), g.tensor(*v)))
                .collect(),
        }
    }
}

/// Per-concept proficiency readout for one student.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MasteryVector {
    pub student: usize,
    pub values: Vec<f64>,
    /// Which internal quantity the values come from.
    pub source: &'static str,
    /// Set when the model has not been trained.
    pub untrained: bool,
}
