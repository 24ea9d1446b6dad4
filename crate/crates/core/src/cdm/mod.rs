//! Diagnosis models: traditional, neural, KAN head replacements and the
//! two-level KAN aggregation models.

mod bank;
mod fc;
mod model;
mod trace;
mod variant;

pub use bank::EmbeddingBank;
pub use fc::{Fc, Head, Mlp};
pub use model::{dina_response, DiagnosisModel, Heads, ModelConfig, SubEmbeddings};
pub use trace::{ForwardTrace, MasteryVector, Mode, TraceVars};
pub use variant::Variant;
