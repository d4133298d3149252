//! Frozen, differentiable toy text encoder and feature import.

mod features;
mod model;
mod vocab;

pub use features::{import_features, write_features, ItemFeatures};
pub use model::{EncodedText, EncoderConfig, EncoderTrace, PromptElement, PromptSequence, TextEncoder};
pub use vocab::{normalize_words, Vocabulary, EOS, PAD, UNK};

pub const NORM_EPS: f64 = 1e-12;

/// Unit-normalizes `v`. Returns `(v, true)` unchanged when its norm is at
/// most [`NORM_EPS`].
pub fn l2_normalize(v: &[f64]) -> (Vec<f64>, bool) {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm <= NORM_EPS {
        return (v.to_vec(), true);
    }
    (v.iter().map(|x| x / norm).collect(), false)
}
