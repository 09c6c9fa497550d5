//! Set encoder: hash tokenizer, Transformer blocks with pluggable
//! inter-entity attention, and the checkpoint file format.

mod attention;
mod checkpoint;
mod config;
mod model;
pub mod relpos;
pub mod tokenizer;

pub use attention::{count_attention_logits, entity_attention, AttentionSpec, ForwardStats};
pub use checkpoint::{Checkpoint, CheckpointMeta, CHECKPOINT_VERSION};
pub use config::{AttentionMode, EncoderConfig};
pub use model::{SetEncoder, TokenizedSet, NEUTRAL_PARAM};
pub use tokenizer::{tokenize, EMPTY_ID};
