//! Greedy and prefix-beam-search decoding of emission matrices, with
//! optional n-gram shallow fusion.

mod batch;
mod beam;
mod emissions;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::s2s_adapter::AdapterError;
use crate::tokenizer::TokenizationLevel;

pub use batch::{decode_batch, BatchItem, BatchOutput, Decoded, Strategy};
pub use beam::{beam_decode, BeamDecoder, Hypothesis};
pub use emissions::{
    EmissionError, EmissionMatrix, FrameMode, BLANK_SYMBOL, EOS_SYMBOL, ROW_TOLERANCE,
};

pub const DEFAULT_BEAM_SIZE: usize = 25;

#[derive(Debug, Error)]
pub enum DecodeError {
    #[error("expected a {expected} emission matrix, got {found}")]
    ModeMismatch {
        expected: &'static str,
        found: &'static str,
    },
    #[error("{0}-level decoding needs a lexicon trie")]
    MissingTrie(TokenizationLevel),
    #[error("a lexicon trie was given but the LM level is {0}")]
    TrieWithoutLexiconLevel(TokenizationLevel),
    #[error("invalid decoding configuration: {0}")]
    InvalidConfig(String),
    #[error("emission vocabulary differs from the first item of the batch")]
    VocabMismatch,
    #[error(transparent)]
    Adapter(#[from] AdapterError),
}

/// LM weight found best by the weight sweep: 1.5 for character and subword
/// LMs, 0.5 for word LMs.
pub fn default_lm_weight(level: TokenizationLevel) -> f64 {
    match level {
        TokenizationLevel::Character | TokenizationLevel::Subword => 1.5,
        TokenizationLevel::Word => 0.5,
    }
}

/// Best n-gram order per level: 6 for character and subword, 3 for word.
pub fn default_order(level: TokenizationLevel) -> usize {
    match level {
        TokenizationLevel::Character | TokenizationLevel::Subword => 6,
        TokenizationLevel::Word => 3,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodeConfig {
    pub beam_size: usize,
    /// alpha: multiplier on the natural-log LM score.
    pub lm_weight: f64,
    /// beta: added once per emitted LM unit.
    pub unit_insertion_score: f64,
    pub lm_level: TokenizationLevel,
    pub nbest: usize,
    /// Only the best `k` non-blank symbols of each frame are expanded.
    /// `None` expands every symbol.
    pub token_beam: Option<usize>,
}

impl DecodeConfig {
    pub fn for_level(level: TokenizationLevel) -> Self {
        DecodeConfig {
            beam_size: DEFAULT_BEAM_SIZE,
            lm_weight: default_lm_weight(level),
            unit_insertion_score: 0.0,
            lm_level: level,
            nbest: 1,
            token_beam: None,
        }
    }

    pub fn validate(&self) -> Result<(), DecodeError> {
        let bad = |m: &str| Err(DecodeError::InvalidConfig(m.to_string()));
        if self.beam_size == 0 {
            return bad("beam size must be at least 1");
        }
        if self.nbest == 0 || self.nbest > self.beam_size {
            return bad("nbest must be between 1 and the beam size");
        }
        if !(self.lm_weight >= 0.0 && self.lm_weight.is_finite()) {
            return bad("LM weight must be a non-negative finite number");
        }
        if !self.unit_insertion_score.is_finite() {
            return bad("unit insertion score must be finite");
        }
        if self.token_beam == Some(0) {
            return bad("token beam must be at least 1");
        }
        Ok(())
    }
}

impl Default for DecodeConfig {
    fn default() -> Self {
        Self::for_level(TokenizationLevel::Character)
    }
}

/// Per-frame argmax, adjacent repeats collapsed, blanks removed.
pub fn greedy_ctc(emissions: &EmissionMatrix) -> Result<Vec<usize>, DecodeError> {
    let FrameMode::Ctc { blank } = emissions.mode() else {
        return Err(DecodeError::ModeMismatch {
            expected: "ctc",
            found: emissions.mode().name(),
        });
    };
    let mut out = Vec::new();
    let mut prev = None;
    for t in 0..emissions.frames() {
        let best = emissions.argmax(t);
        if best != blank && prev != Some(best) {
            out.push(best);
        }
        prev = Some(best);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GreedyS2s {
    pub labeling: Vec<usize>,
    /// False when no frame predicted the end token.
    pub terminated: bool,
}

/// Per-frame argmax up to (not including) the first end token.
pub fn greedy_s2s(emissions: &EmissionMatrix) -> Result<GreedyS2s, DecodeError> {
    let FrameMode::Seq2Seq { eos } = emissions.mode() else {
        return Err(DecodeError::ModeMismatch {
            expected: "s2s",
            found: emissions.mode().name(),
        });
    };
    let mut labeling = Vec::new();
    for t in 0..emissions.frames() {
        let best = emissions.argmax(t);
        if best == eos {
            return Ok(GreedyS2s {
                labeling,
                terminated: true,
            });
        }
        labeling.push(best);
    }
    log::warn!(
        "no end token in {} frames, keeping the full sequence",
        emissions.frames()
    );
    Ok(GreedyS2s {
        labeling,
        terminated: false,
    })
}

/// Sum of the per-frame maxima: the log-probability of the best path.
pub fn best_path_score(emissions: &EmissionMatrix, frames: usize) -> f64 {
    (0..frames.min(emissions.frames()))
        .map(|t| emissions.row(t)[emissions.argmax(t)] as f64)
        .sum()
}
