//! Neural demapper: network, optimizer, training loop and model files.

pub mod io;
pub mod mlp;
pub mod optim;
pub mod train;

pub use io::{load_model, save_model, ModelHeader};
pub use mlp::{FeatureFlags, Mlp, MlpModel, Mode};
pub use optim::{AdamW, AdamWConfig};
pub use train::{infer_bit_llrs, infer_symbol_logprobs, train, History, TrainConfig};
