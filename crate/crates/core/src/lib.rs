//! Shared-representation probabilistic demapping for QAM and APSK constellations.
//!
//! A single trainable demapper predicts logits for a hierarchical binary
//! representation shared by a whole set of constellations. Symbol
//! probabilities follow from the per-bit Bernoulli factors, and bit LLRs for
//! any bit mapping follow from marginalizing the symbol probabilities.

pub mod bench;
pub mod bits;
pub mod catalog;
pub mod channel;
pub mod constellation;
pub mod demap;
pub mod error;
pub mod neural;
pub mod representation;

pub use error::{Error, Result};
