//! Factor grids, the procedural renderer, dataset stores and splits.

pub mod render;
pub mod spec;
pub mod split;
pub mod store;

pub use render::render;
pub use spec::{desk_spec, dsprites_like_spec, dsprites_like_with, Factor, FactorKind, FactorSpec, FactorTuple, FactorValue};
pub use split::{make_compositional_split, sample_labeled_subset, LabeledSubset, SplitAssignment};
pub use store::{DatasetStore, ImageSource, InstrumentedStore};
