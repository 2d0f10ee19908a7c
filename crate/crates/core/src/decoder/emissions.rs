use std::fmt;

use thiserror::Error;

use crate::tokenizer::SPACE_MARKER;

/// Vocabulary entry of the CTC blank.
pub const BLANK_SYMBOL: &str = "<ctc>";
/// Vocabulary entry of the sequence-to-sequence end token.
pub const EOS_SYMBOL: &str = "<eos>";

/// Rows must log-sum-exp to zero within this tolerance.
pub const ROW_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Error, PartialEq)]
pub enum EmissionError {
    #[error("expected {expected} values for the declared shape, found {found}")]
    ShapeMismatch { expected: usize, found: usize },
    #[error("invalid vocabulary: {0}")]
    InvalidVocab(String),
    #[error("row {row} is not normalized (log-sum-exp {log_sum})")]
    UnnormalizedRows { row: usize, log_sum: f64 },
}

/// What the special column of an emission matrix means.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FrameMode {
    Ctc { blank: usize },
    Seq2Seq { eos: usize },
}

impl FrameMode {
    /// Derives the mode from the position of `<ctc>` or `<eos>`.
    pub fn infer<S: AsRef<str>>(vocab: &[S]) -> Result<Self, EmissionError> {
        let find = |sym: &str| {
            let hits: Vec<usize> = vocab
                .iter()
                .enumerate()
                .filter(|(_, v)| v.as_ref() == sym)
                .map(|(i, _)| i)
                .collect();
            hits
        };
        let blanks = find(BLANK_SYMBOL);
        let eos = find(EOS_SYMBOL);
        match (blanks.as_slice(), eos.as_slice()) {
            ([b], []) => Ok(FrameMode::Ctc { blank: *b }),
            ([], [e]) => Ok(FrameMode::Seq2Seq { eos: *e }),
            ([], []) => Err(EmissionError::InvalidVocab(format!(
                "neither {BLANK_SYMBOL} nor {EOS_SYMBOL} present"
            ))),
            _ => Err(EmissionError::InvalidVocab(format!(
                "exactly one of {BLANK_SYMBOL} or {EOS_SYMBOL} must appear once"
            ))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            FrameMode::Ctc { .. } => "ctc",
            FrameMode::Seq2Seq { .. } => "s2s",
        }
    }
}

impl fmt::Display for FrameMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// T x V matrix of natural-log posteriors, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct EmissionMatrix {
    vocab: Vec<String>,
    mode: FrameMode,
    frames: usize,
    data: Vec<f32>,
}

impl EmissionMatrix {
    /// Builds a matrix and checks shape, vocabulary and row normalization.
    pub fn new(data: Vec<f32>, frames: usize, vocab: Vec<String>) -> Result<Self, EmissionError> {
        let m = Self::new_unnormalized(data, frames, vocab)?;
        m.check_rows()?;
        Ok(m)
    }

    /// Like [`new`](Self::new) but skips the row check.
    pub fn new_unnormalized(
        data: Vec<f32>,
        frames: usize,
        vocab: Vec<String>,
    ) -> Result<Self, EmissionError> {
        if vocab.is_empty() {
            return Err(EmissionError::InvalidVocab("empty vocabulary".into()));
        }
        let mode = FrameMode::infer(&vocab)?;
        let expected = frames * vocab.len();
        if data.len() != expected {
            return Err(EmissionError::ShapeMismatch {
                expected,
                found: data.len(),
            });
        }
        Ok(EmissionMatrix {
            vocab,
            mode,
            frames,
            data,
        })
    }

    /// Builds from f64 rows, mostly for tests and synthetic data.
    pub fn from_rows<S: AsRef<str>>(rows: &[Vec<f64>], vocab: &[S]) -> Result<Self, EmissionError> {
        let vocab: Vec<String> = vocab.iter().map(|s| s.as_ref().to_string()).collect();
        let mut data = Vec::with_capacity(rows.len() * vocab.len());
        for row in rows {
            if row.len() != vocab.len() {
                return Err(EmissionError::ShapeMismatch {
                    expected: vocab.len(),
                    found: row.len(),
                });
            }
            data.extend(row.iter().map(|&x| x as f32));
        }
        Self::new(data, rows.len(), vocab)
    }

    /// Worst row whose log-sum-exp is off zero by more than the tolerance.
    pub fn check_rows(&self) -> Result<(), EmissionError> {
        let mut worst: Option<(usize, f64, f64)> = None;
        for t in 0..self.frames {
            let ls = log_sum_exp(self.row(t));
            let dev = if ls.is_nan() { f64::INFINITY } else { ls.abs() };
            if dev > ROW_TOLERANCE && worst.is_none_or(|(_, _, w)| dev > w) {
                worst = Some((t, ls, dev));
            }
        }
        match worst {
            Some((row, log_sum, _)) => Err(EmissionError::UnnormalizedRows { row, log_sum }),
            None => Ok(()),
        }
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn symbols(&self) -> usize {
        self.vocab.len()
    }

    pub fn vocab(&self) -> &[String] {
        &self.vocab
    }

    pub fn mode(&self) -> FrameMode {
        self.mode
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn row(&self, t: usize) -> &[f32] {
        let v = self.vocab.len();
        &self.data[t * v..(t + 1) * v]
    }

    /// Index of the largest entry of row `t`; the first one wins ties.
    pub fn argmax(&self, t: usize) -> usize {
        let row = self.row(t);
        let mut best = 0;
        for (i, &x) in row.iter().enumerate().skip(1) {
            if x > row[best] {
                best = i;
            }
        }
        best
    }

    /// Symbol used as an LM character; a literal space becomes the marker.
    pub fn symbol(&self, index: usize) -> &str {
        let s = self.vocab[index].as_str();
        if s == " " {
            SPACE_MARKER
        } else {
            s
        }
    }

    /// Text of a labeling, with markers turned back into spaces.
    pub fn text_of(&self, labeling: &[usize]) -> String {
        let mut out = String::new();
        for &i in labeling {
            let s = self.symbol(i);
            if s == SPACE_MARKER {
                out.push(' ');
            } else {
                out.push_str(s);
            }
        }
        out
    }
}

pub(crate) fn log_sum_exp(row: &[f32]) -> f64 {
    let m = row.iter().fold(f64::NEG_INFINITY, |m, &x| m.max(x as f64));
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + row.iter().map(|&x| (x as f64 - m).exp()).sum::<f64>().ln()
}
