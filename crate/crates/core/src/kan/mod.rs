//! Kolmogorov–Arnold layers with B-spline edge activations.

mod grid;
mod layer;
mod prune;

pub use grid::SplineGrid;
pub use layer::{KanLayer, KanNetwork, Renorm};
pub use prune::{edge_importance, keep_mask, keeps_edge, prune, LayerPrune, PruneReport};
