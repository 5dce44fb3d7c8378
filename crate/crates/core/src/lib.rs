//! Attribute-aware multi-vector sequential recommendation.
//!
//! Items are lists of `key: value` text attributes. A compact transformer
//! encodes an item (or a user's reverse-ordered history) into one pooled
//! vector per attribute span, and a user–item score is the sum over
//! attributes of the maximum cosine similarity between the item's attribute
//! vector and the user's vectors for the same attribute.
//!
//! Pipeline: [`corpus`] → [`tokenizer`] → [`encoder`] → [`matching`] /
//! [`index`] → [`training`] → [`eval`].

pub mod corpus;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod index;
pub mod matching;
pub mod pipeline;
pub mod selfcheck;
pub mod tensor;
pub mod tokenizer;
pub mod training;

pub use error::{Error, Result};

use sha2::{Digest, Sha256};

/// Lower-case hex SHA-256 of `bytes`.
pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}
