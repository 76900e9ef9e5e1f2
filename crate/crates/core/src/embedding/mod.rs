//! User and item embeddings trained with negative sampling.
//!
//! Each user is a document and each consumed item a word. Every event
//! contributes one PV-DBOW update (the user vector predicts the item) and
//! one skip-gram update per in-window neighbor (the item predicts its
//! neighbors), so user vectors and item input vectors end up in the same
//! geometry against a shared output matrix.

mod config;
mod model;
mod space;
mod train;

pub use config::{default_config, Architecture, TrainingConfig};
pub use model::{example_gradient, example_loss, init_model, EmbeddingModel, ExampleGradient, LOGIT_CLAMP};
pub use space::{normalize_space, EmbeddingSpace};
pub use train::{train, train_model, TrainedModel};
