//! Backoff n-gram language models: counting, smoothing, querying and ARPA
//! interchange.
//!
//! All probabilities are log10, as in the ARPA format. The sentence-start
//! sentinel `<s>` is context-only and never predicted; `</s>` and `<unk>`
//! are regular predicted tokens.

mod arpa;
mod counts;
mod estimate;
mod model;
mod vocab;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use arpa::{read_arpa, write_arpa};
pub use counts::{count_ngrams, CountTable};
pub use estimate::{discount, estimate};
pub use model::{Entry, NGramModel};
pub use vocab::{Vocab, BOS, EOS, UNK};

/// Highest supported order.
pub const MAX_ORDER: usize = 6;

/// Bits reserved per token id when packing an n-gram into a `u128` key.
pub(crate) const ID_BITS: u32 = 21;
pub(crate) const MAX_VOCAB: usize = (1 << ID_BITS) - 1;

#[derive(Debug, Error)]
pub enum LmError {
    #[error("order {0} is outside the supported range 1-{MAX_ORDER}")]
    OrderOutOfRange(usize),
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("invalid token {0:?}: tokens must be non-empty, contain no whitespace, and not be a sentence sentinel")]
    InvalidToken(String),
    #[error("vocabulary exceeds {MAX_VOCAB} tokens")]
    VocabTooLarge,
    #[error("discount for order {order} is undefined ({discount})")]
    DegenerateCounts { order: usize, discount: f64 },
    #[error("malformed ARPA at line {line}: {reason}")]
    MalformedArpa { line: usize, reason: String },
    #[error("ARPA header declares order {declared} but sections cover order {found}")]
    OrderMismatch { declared: usize, found: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Smoothing {
    /// Maximum likelihood; unseen events under a seen context get zero mass.
    #[serde(rename = "none")]
    Unsmoothed,
    /// Interpolated Kneser-Ney with one discount per order.
    #[serde(rename = "kneser-ney")]
    KneserNey,
    /// Interpolated Witten-Bell.
    #[serde(rename = "witten-bell")]
    WittenBell,
}

impl Smoothing {
    pub fn as_str(self) -> &'static str {
        match self {
            Smoothing::Unsmoothed => "none",
            Smoothing::KneserNey => "kneser-ney",
            Smoothing::WittenBell => "witten-bell",
        }
    }
}

impl fmt::Display for Smoothing {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Smoothing {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "none" => Ok(Smoothing::Unsmoothed),
            "kneser-ney" => Ok(Smoothing::KneserNey),
            "witten-bell" => Ok(Smoothing::WittenBell),
            other => Err(format!(
                "unknown smoothing `{other}` (expected none, kneser-ney or witten-bell)"
            )),
        }
    }
}

pub(crate) fn pack(ids: &[u32]) -> u128 {
    ids.iter()
        .fold(0u128, |key, &id| (key << ID_BITS) | id as u128)
}

pub(crate) fn pack_with(ids: &[u32], last: u32) -> u128 {
    (pack(ids) << ID_BITS) | last as u128
}

pub(crate) fn unpack(mut key: u128, len: usize) -> Vec<u32> {
    let mask = (1u128 << ID_BITS) - 1;
    let mut ids = vec![0u32; len];
    for slot in ids.iter_mut().rev() {
        *slot = (key & mask) as u32;
        key >>= ID_BITS;
    }
    ids
}

/// Key of the n-gram without its last token.
pub(crate) fn context_of(key: u128) -> u128 {
    key >> ID_BITS
}

/// Key of the n-gram without its first token.
pub(crate) fn suffix_of(key: u128, len: usize) -> u128 {
    let keep = ID_BITS * (len as u32 - 1);
    if keep == 0 {
        0
    } else {
        key & ((1u128 << keep) - 1)
    }
}

pub(crate) fn validate_order(order: usize) -> Result<(), LmError> {
    if (1..=MAX_ORDER).contains(&order) {
        Ok(())
    } else {
        Err(LmError::OrderOutOfRange(order))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn key_packing() {
        let ids = [5, 0, 2_000_000, 7, 1, 3];
        let key = pack(&ids);
        assert_eq!(unpack(key, 6), ids);
        assert_eq!(unpack(context_of(key), 5), &ids[..5]);
        assert_eq!(unpack(suffix_of(key, 6), 5), &ids[1..]);
        assert_eq!(pack_with(&ids[..5], 3), key);
        assert_eq!(suffix_of(pack(&[9]), 1), 0);
    }

    #[test]
    fn smoothing_names() {
        for s in [Smoothing::Unsmoothed, Smoothing::KneserNey, Smoothing::WittenBell] {
            assert_eq!(s.as_str().parse::<Smoothing>().unwrap(), s);
        }
        assert!("good-turing".parse::<Smoothing>().is_err());
    }
}
