//! A noisy-channel stand-in for an optical model: turns reference text into
//! CTC emission matrices, plus a small synthetic language to feed it.

use std::collections::BTreeMap;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gumbel, Zipf};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::decoder::{EmissionError, EmissionMatrix, FrameMode};
use crate::tokenizer::{tokenize_chars, SPACE_MARKER};

#[derive(Debug, Error)]
pub enum SimulateError {
    #[error("character {0:?} is not in the emission vocabulary")]
    UnknownCharacter(String),
    #[error("invalid noise model: {0}")]
    InvalidNoise(String),
    #[error(transparent)]
    Emission(#[from] EmissionError),
}

/// Which symbols a character gets confused with.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub enum Neighborhood {
    /// Every other symbol is equally confusable.
    #[default]
    Uniform,
    /// Listed symbols are confusable; everything else scores lower still.
    Table(BTreeMap<String, Vec<String>>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    /// Gumbel noise is added to scores divided by this.
    pub temperature: f64,
    pub neighborhood: Neighborhood,
    /// Chance of a blank frame before a character (always one between repeats).
    pub blank_affinity: f64,
    pub frames_per_char: usize,
    pub seed: u64,
}

impl Default for NoiseModel {
    fn default() -> Self {
        NoiseModel {
            temperature: 1.0,
            neighborhood: Neighborhood::Uniform,
            blank_affinity: 0.5,
            frames_per_char: 1,
            seed: 0,
        }
    }
}

impl NoiseModel {
    pub fn validate(&self) -> Result<(), SimulateError> {
        let bad = |m: &str| Err(SimulateError::InvalidNoise(m.to_string()));
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return bad("temperature must be positive");
        }
        if !(0.0..1.0).contains(&self.blank_affinity) {
            return bad("blank affinity must lie in [0, 1)");
        }
        if self.frames_per_char == 0 {
            return bad("at least one frame per character");
        }
        Ok(())
    }

    /// Same model with the seed shifted for item `index`.
    pub fn for_item(&self, index: u64) -> NoiseModel {
        NoiseModel {
            seed: self
                .seed
                .wrapping_add(index.wrapping_mul(0x9E37_79B9_7F4A_7C15)),
            ..self.clone()
        }
    }
}

fn symbol_index(vocab: &[String], token: &str) -> Option<usize> {
    vocab.iter().position(|v| {
        v == token || (token == SPACE_MARKER && v == " ")
    })
}

/// Emission matrix for `text` over a CTC vocabulary.
pub fn synthesize(
    text: &str,
    noise: &NoiseModel,
    vocab: &[String],
) -> Result<EmissionMatrix, SimulateError> {
    noise.validate()?;
    let FrameMode::Ctc { blank } = FrameMode::infer(vocab)? else {
        return Err(SimulateError::InvalidNoise(
            "simulation needs a CTC vocabulary".into(),
        ));
    };
    let targets: Vec<usize> = tokenize_chars(text)
        .iter()
        .map(|c| symbol_index(vocab, c).ok_or_else(|| SimulateError::UnknownCharacter(c.clone())))
        .collect::<Result<_, _>>()?;

    let neighbors: Vec<Vec<bool>> = match &noise.neighborhood {
        Neighborhood::Uniform => Vec::new(),
        Neighborhood::Table(table) => vocab
            .iter()
            .map(|s| {
                let listed = table.get(s.as_str()).map(Vec::as_slice).unwrap_or(&[]);
                vocab.iter().map(|v| listed.contains(v)).collect()
            })
            .collect(),
    };

    let mut rng = ChaCha8Rng::seed_from_u64(noise.seed);
    let mut frames = Vec::new();
    let mut prev = None;
    for &t in &targets {
        if prev == Some(t) || rng.random_bool(noise.blank_affinity) {
            frames.push(blank);
        }
        frames.extend(std::iter::repeat_n(t, noise.frames_per_char));
        prev = Some(t);
    }

    let gumbel = Gumbel::new(0.0, 1.0).expect("valid Gumbel parameters");
    let v = vocab.len();
    let mut data = Vec::with_capacity(frames.len() * v);
    let mut logits = vec![0f64; v];
    for &target in &frames {
        for (j, logit) in logits.iter_mut().enumerate() {
            let score = if j == target {
                1.0
            } else if neighbors.is_empty() || neighbors[target][j] {
                0.0
            } else {
                -1.0
            };
            *logit = score / noise.temperature + gumbel.sample(&mut rng);
        }
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let norm = max + logits.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
        data.extend(logits.iter().map(|x| (x - norm) as f32));
    }
    Ok(EmissionMatrix::new(data, frames.len(), vocab.to_vec())?)
}

/// [`synthesize`] over many texts, item `i` seeded by `noise.for_item(i)`.
pub fn synthesize_batch<S: AsRef<str> + Sync>(
    texts: &[S],
    noise: &NoiseModel,
    vocab: &[String],
) -> Result<Vec<EmissionMatrix>, SimulateError> {
    texts
        .par_iter()
        .enumerate()
        .map(|(i, t)| synthesize(t.as_ref(), &noise.for_item(i as u64), vocab))
        .collect()
}

/// Character vocabulary of a corpus with `<ctc>` appended; spaces appear as
/// a literal space.
pub fn ctc_vocab<S: AsRef<str>>(texts: &[S]) -> Vec<String> {
    let mut chars: Vec<String> = texts
        .iter()
        .flat_map(|t| tokenize_chars(t.as_ref()))
        .map(|c| if c == SPACE_MARKER { " ".to_string() } else { c })
        .collect();
    chars.sort();
    chars.dedup();
    chars.push(crate::decoder::BLANK_SYMBOL.to_string());
    chars
}

/// Generator of a toy language: a fixed random lexicon whose words follow a
/// Zipfian first-order Markov chain.
pub struct SyntheticLanguage {
    words: Vec<String>,
    successors: Vec<Vec<usize>>,
    zipf: Zipf<f64>,
}

impl SyntheticLanguage {
    pub fn new(lexicon_size: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let letters: Vec<char> = "abcdefghijklmnopqrstuvwxyz".chars().collect();
        let mut words: Vec<String> = Vec::with_capacity(lexicon_size);
        while words.len() < lexicon_size.max(1) {
            let len = rng.random_range(2..=8);
            let w: String = (0..len).map(|_| *letters.choose(&mut rng).unwrap()).collect();
            if !words.contains(&w) {
                words.push(w);
            }
        }
        let n = words.len();
        let successors = (0..n)
            .map(|_| (0..8).map(|_| rng.random_range(0..n)).collect())
            .collect();
        SyntheticLanguage {
            words,
            successors,
            zipf: Zipf::new(8.0, 1.2).expect("valid Zipf parameters"),
        }
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    /// A line of 4 to 10 words.
    pub fn line<R: Rng + ?Sized>(&self, rng: &mut R) -> String {
        let len = rng.random_range(4..=10);
        let mut word = rng.random_range(0..self.words.len());
        let mut out = Vec::with_capacity(len);
        for _ in 0..len {
            out.push(self.words[word].as_str());
            let rank = self.zipf.sample(rng) as usize - 1;
            word = self.successors[word][rank];
        }
        out.join(" ")
    }

    pub fn corpus(&self, lines: usize, seed: u64) -> Vec<String> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..lines).map(|_| self.line(&mut rng)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decoder::greedy_ctc;

    fn vocab() -> Vec<String> {
        ["a", "b", "c", " ", "<ctc>"].iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn noiseless_limit_recovers_text() {
        let noise = NoiseModel {
            temperature: 1e-6,
            ..NoiseModel::default()
        };
        for text in ["abc", "aab", "a  b", "ccc"] {
            let m = synthesize(text, &noise, &vocab()).unwrap();
            assert_eq!(m.text_of(&greedy_ctc(&m).unwrap()), text);
        }
    }

    #[test]
    fn empty_text() {
        let m = synthesize("", &NoiseModel::default(), &vocab()).unwrap();
        assert_eq!(m.frames(), 0);
    }

    #[test]
    fn deterministic_by_seed() {
        let noise = NoiseModel {
            seed: 42,
            frames_per_char: 2,
            ..NoiseModel::default()
        };
        let a = synthesize("abc ab", &noise, &vocab()).unwrap();
        let b = synthesize("abc ab", &noise, &vocab()).unwrap();
        assert_eq!(a, b);
        let c = synthesize("abc ab", &noise.for_item(1), &vocab()).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn unknown_character() {
        assert!(matches!(
            synthesize("abz", &NoiseModel::default(), &vocab()),
            Err(SimulateError::UnknownCharacter(c)) if c == "z"
        ));
    }

    #[test]
    fn table_neighborhood_rows_are_normalized() {
        let mut table = BTreeMap::new();
        table.insert("a".to_string(), vec!["b".to_string()]);
        let noise = NoiseModel {
            neighborhood: Neighborhood::Table(table),
            ..NoiseModel::default()
        };
        let m = synthesize("abca", &noise, &vocab()).unwrap();
        assert!(m.check_rows().is_ok());
    }

    #[test]
    fn synthetic_language_is_deterministic() {
        let lang = SyntheticLanguage::new(50, 3);
        let a = lang.corpus(5, 1);
        assert_eq!(a, SyntheticLanguage::new(50, 3).corpus(5, 1));
        assert!(a.iter().all(|l| (4..=10).contains(&l.split(' ').count())));
        let v = ctc_vocab(&a);
        assert_eq!(v.last().unwrap(), "<ctc>");
        assert!(v.contains(&" ".to_string()));
    }
}
