//! k-sparse autoencoders over dense retrieval embeddings.

pub mod control;
pub mod error;
pub mod interpret;
pub mod io;
pub mod numerics;
pub mod retrieval;
pub mod sae;
pub mod steering;
pub mod store;
pub mod synth;
pub mod training;

pub use error::{Error, Result};
pub use numerics::{AdamState, CosineSchedule, DenseVector, Matrix};
pub use sae::{SaeGradients, SaeParams, SparseLatent};
pub use store::{EmbeddingStore, QrelSet, StoreKind};
pub use training::{TrainConfig, TrainReport};
