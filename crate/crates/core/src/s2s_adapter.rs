//! Turns sequence-to-sequence posteriors into CTC-shaped matrices so the
//! CTC beam search can fuse an LM into them.
//!
//! Each kept frame becomes a blank-dominant row followed by the original row
//! with a near-zero blank column, so repeated characters survive collapse.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::decoder::{EmissionError, EmissionMatrix, FrameMode, BLANK_SYMBOL};

/// Probability mass not given to blank on inserted rows, and given to blank
/// on content rows.
pub const DEFAULT_EPSILON: f64 = 1e-7;

#[derive(Debug, Error)]
pub enum AdapterError {
    #[error("the adapter takes s2s matrices, got {0}")]
    ModeMismatch(&'static str),
    #[error("invalid adapter configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Emission(#[from] EmissionError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EosPolicy {
    /// Drop the first frame whose argmax is the end token and all after it.
    #[default]
    TruncateAtGreedyEos,
    KeepAll,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdapterConfig {
    /// Natural-log blank probability on inserted rows.
    pub blank_fill: f64,
    /// Natural-log blank probability on content rows.
    pub content_blank: f64,
    pub eos_policy: EosPolicy,
}

impl Default for AdapterConfig {
    fn default() -> Self {
        AdapterConfig {
            blank_fill: (-DEFAULT_EPSILON).ln_1p(),
            content_blank: DEFAULT_EPSILON.ln(),
            eos_policy: EosPolicy::default(),
        }
    }
}

impl AdapterConfig {
    fn validate(&self) -> Result<(), AdapterError> {
        let half = 0.5f64.ln();
        if !(self.blank_fill > half && self.blank_fill < 0.0) {
            return Err(AdapterError::InvalidConfig(
                "blank_fill must lie in (ln 0.5, 0)".into(),
            ));
        }
        if !(self.content_blank < half && self.content_blank > f64::NEG_INFINITY) {
            return Err(AdapterError::InvalidConfig(
                "content_blank must lie in (-inf, ln 0.5)".into(),
            ));
        }
        Ok(())
    }
}

/// Number of frames kept under `policy`.
pub fn effective_length(emissions: &EmissionMatrix, policy: EosPolicy) -> usize {
    match (policy, emissions.mode()) {
        (EosPolicy::TruncateAtGreedyEos, FrameMode::Seq2Seq { eos }) => (0..emissions.frames())
            .find(|&t| emissions.argmax(t) == eos)
            .unwrap_or(emissions.frames()),
        _ => emissions.frames(),
    }
}

pub fn adapt(
    emissions: &EmissionMatrix,
    config: &AdapterConfig,
) -> Result<EmissionMatrix, AdapterError> {
    let FrameMode::Seq2Seq { eos } = emissions.mode() else {
        return Err(AdapterError::ModeMismatch(emissions.mode().name()));
    };
    config.validate()?;
    let kept = effective_length(emissions, config.eos_policy);

    let mut vocab: Vec<String> = emissions
        .vocab()
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != eos)
        .map(|(_, s)| s.clone())
        .collect();
    let real = vocab.len();
    vocab.push(BLANK_SYMBOL.to_string());
    let width = vocab.len();

    let mut inserted = vec![0f32; width];
    if real > 0 {
        let residual = (-config.blank_fill.exp()).ln_1p() - (real as f64).ln();
        inserted[..real].fill(residual as f32);
        inserted[real] = config.blank_fill as f32;
    }

    let keep_mass = (-config.content_blank.exp()).ln_1p();
    let mut data = Vec::with_capacity(2 * kept * width);
    for t in 0..kept {
        data.extend_from_slice(&inserted);
        let row = emissions.row(t);
        let values: Vec<f64> = row
            .iter()
            .enumerate()
            .filter(|&(i, _)| i != eos)
            .map(|(_, &x)| x as f64)
            .collect();
        let mass = log_sum_exp(&values);
        let start = data.len();
        if mass == f64::NEG_INFINITY {
            let uniform = keep_mass - (real as f64).ln();
            data.extend(std::iter::repeat_n(uniform as f32, real));
        } else {
            data.extend(values.iter().map(|&x| (x - mass + keep_mass) as f32));
        }
        data.push(if real > 0 { config.content_blank as f32 } else { 0.0 });

        // Rounding may tie the leading symbol with an earlier one.
        let original = emissions.argmax(t);
        if original != eos && real > 0 {
            let target = start + original - usize::from(original > eos);
            let out = &mut data[start..start + width];
            let best = argmax(out);
            if start + best != target {
                data[target] = out[best].next_up();
            }
        }
    }
    Ok(EmissionMatrix::new(data, 2 * kept, vocab)?)
}

fn argmax(row: &[f32]) -> usize {
    let mut best = 0;
    for (i, &x) in row.iter().enumerate().skip(1) {
        if x > row[best] {
            best = i;
        }
    }
    best
}

fn log_sum_exp(values: &[f64]) -> f64 {
    let m = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + values.iter().map(|&x| (x - m).exp()).sum::<f64>().ln()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decoder::{greedy_ctc, greedy_s2s};

    fn s2s(rows: &[&[f64]], vocab: &[&str]) -> EmissionMatrix {
        let rows: Vec<Vec<f64>> = rows
            .iter()
            .map(|r| r.iter().map(|x| x.ln()).collect())
            .collect();
        EmissionMatrix::from_rows(&rows, vocab).unwrap()
    }

    const V: [&str; 3] = ["a", "b", "<eos>"];

    #[test]
    fn single_frame() {
        let m = s2s(&[&[0.6, 0.3, 0.1]], &V);
        let out = adapt(&m, &AdapterConfig::default()).unwrap();
        assert_eq!(out.frames(), 2);
        assert_eq!(out.vocab(), ["a", "b", "<ctc>"]);
        assert_eq!(out.text_of(&greedy_ctc(&out).unwrap()), "a");
    }

    #[test]
    fn repeated_character_survives() {
        let m = s2s(
            &[&[0.8, 0.1, 0.1], &[0.7, 0.2, 0.1], &[0.1, 0.1, 0.8]],
            &V,
        );
        let out = adapt(&m, &AdapterConfig::default()).unwrap();
        assert_eq!(out.frames(), 4);
        assert_eq!(out.argmax(0), 2);
        assert_eq!(out.argmax(1), 0);
        assert_eq!(out.argmax(2), 2);
        assert_eq!(out.argmax(3), 0);
        assert_eq!(out.text_of(&greedy_ctc(&out).unwrap()), "aa");
    }

    #[test]
    fn eos_first_gives_empty_matrix() {
        let m = s2s(&[&[0.1, 0.1, 0.8], &[0.8, 0.1, 0.1]], &V);
        let out = adapt(&m, &AdapterConfig::default()).unwrap();
        assert_eq!(out.frames(), 0);
        assert!(greedy_ctc(&out).unwrap().is_empty());
    }

    #[test]
    fn keep_all_keeps_every_frame() {
        let m = s2s(&[&[0.1, 0.1, 0.8], &[0.8, 0.1, 0.1]], &V);
        let config = AdapterConfig {
            eos_policy: EosPolicy::KeepAll,
            ..AdapterConfig::default()
        };
        let out = adapt(&m, &config).unwrap();
        assert_eq!(out.frames(), 4);
        assert!(out.check_rows().is_ok());
    }

    #[test]
    fn all_mass_on_eos_row_is_spread() {
        let rows = vec![vec![f64::NEG_INFINITY, f64::NEG_INFINITY, 0.0]];
        let m = EmissionMatrix::from_rows(&rows, &V).unwrap();
        let config = AdapterConfig {
            eos_policy: EosPolicy::KeepAll,
            ..AdapterConfig::default()
        };
        let out = adapt(&m, &config).unwrap();
        assert!(out.check_rows().is_ok());
    }

    #[test]
    fn rejects_ctc_and_bad_config() {
        let ctc = s2s(&[&[0.5, 0.5]], &["a", "<ctc>"]);
        assert!(matches!(
            adapt(&ctc, &AdapterConfig::default()),
            Err(AdapterError::ModeMismatch("ctc"))
        ));
        let m = s2s(&[&[0.6, 0.3, 0.1]], &V);
        let bad = AdapterConfig {
            blank_fill: 0.0,
            ..AdapterConfig::default()
        };
        assert!(matches!(adapt(&m, &bad), Err(AdapterError::InvalidConfig(_))));
    }

    #[test]
    fn near_ties_keep_their_winner() {
        let a = -std::f32::consts::LN_2;
        let b = f32::from_bits(a.to_bits() + 1);
        let rest = (1.0 - (a as f64).exp() - (b as f64).exp()).ln() as f32;
        let m = EmissionMatrix::new(vec![a, b, rest], 1, V.iter().map(|s| s.to_string()).collect())
            .unwrap();
        let out = adapt(&m, &AdapterConfig::default()).unwrap();
        assert_eq!(greedy_ctc(&out).unwrap(), greedy_s2s(&m).unwrap().labeling);
    }
}
