//! mddAE: an encoder-decoder that learns a disentangled split between a
//! soft target representation (class/attribute probabilities) and a free
//! latent code, trained with a distance-covariance decorrelation
//! regularizer. Includes image editing through the soft target slots and a
//! classification-based protocol for scoring disentanglement strength.

pub mod checkpoint;
pub mod config;
pub mod data;
pub mod editing;
pub mod error;
pub mod evalkit;
pub mod losses;
pub mod nets;
pub mod optim;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{Graph, Tensor};
