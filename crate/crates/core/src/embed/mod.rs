//! Turning raw inputs into token sequences: image patches with a class
//! token and learned positions, and text ids with token, segment and
//! position tables.

mod patch;
mod text;
mod vocab;

pub use crate::nn::TokenSequence;
pub use patch::{patchify, unpatchify, PatchEmbedder};
pub use text::TextEmbedder;
pub use vocab::{normalize_text, StopWords, Vocabulary, CLS, PAD, RESERVED, SEP, UNK};
