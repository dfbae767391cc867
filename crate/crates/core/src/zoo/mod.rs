//! The eight pretraining architectures, their composite losses, the
//! drug-response classifier head and the checkpoint format.

mod checkpoint;
mod model;
mod variant;

pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use model::{EmbeddingVars, Embeddings, LossBreakdown, LossWeights, Model, PretrainLossVars, ZooOptions};
pub use variant::{parse_variants, Family, Similarity, Variant};

use crate::data::DRUG_DIM;
use crate::nn::Activation;

/// Width of shared and private embeddings.
pub const EMBED_DIM: usize = 128;
/// Activation of the encoders' final layer. Hidden layers use relu; the
/// embedding itself is linear so shared and private codes can be signed and
/// orthogonal.
pub const EMBEDDING_ACTIVATION: Activation = Activation::Identity;
/// Encoder hidden widths; the decoder mirrors them.
pub const HIDDEN_DIMS: [usize; 2] = [512, 256];
pub const DISCRIMINATOR_HIDDEN: usize = 64;
pub const CLASSIFIER_INPUT: usize = EMBED_DIM + DRUG_DIM;
pub const CLASSIFIER_DIMS: [usize; 4] = [CLASSIFIER_INPUT, 64, 32, 1];
