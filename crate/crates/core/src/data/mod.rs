//! Response logs, Q-matrix, splitting, batching and the synthetic generator.

mod dataset;
mod synth;

pub use dataset::{
    batches, load_logs, read_q, train_count, Dataset, Manifest, QTable, Response, Split,
    DEFAULT_RATIO, MIN_LOGS,
};
pub use synth::{synth_dina, SynthSpec, Synthetic};
