//! Sparse path encoder: sparsification, the transformer stack, the
//! reconstruction decoder and checkpoints.

pub mod checkpoint;
mod config;
mod model;
mod sparsify;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint};
pub use config::EncoderConfig;
pub use model::{
    encoder_layer, multi_head_attention, reconstruction_loss, DecoderVars, EncodedBatch, EncodedPath, EncoderModel,
    EncoderVars, LayerVars,
};
pub use sparsify::{removal_count, sparsify, sparsify_removing};
