//! Edit distance, corpus CER/WER and the LM hyperparameter grid search.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::decoder::{decode_batch, BatchItem, BeamDecoder, DecodeConfig, Strategy};
use crate::lexicon::{unigram_scores, Lexicon, LexiconTrie};
use crate::lm::NGramModel;
use crate::s2s_adapter::AdapterConfig;
use crate::tokenizer::tokenize_chars;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("the validation set is empty")]
    EmptyValset,
    #[error("invalid tuning grid: {0}")]
    InvalidGrid(String),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EditOps {
    pub distance: usize,
    pub substitutions: usize,
    pub insertions: usize,
    pub deletions: usize,
}

impl std::ops::AddAssign for EditOps {
    fn add_assign(&mut self, o: Self) {
        self.distance += o.distance;
        self.substitutions += o.substitutions;
        self.insertions += o.insertions;
        self.deletions += o.deletions;
    }
}

/// Levenshtein distance turning reference `a` into hypothesis `b`.
///
/// The breakdown comes from one backtrace that takes a diagonal step first,
/// then a deletion, then an insertion.
pub fn edit_distance<T: PartialEq>(a: &[T], b: &[T]) -> EditOps {
    let (n, m) = (a.len(), b.len());
    let w = m + 1;
    let mut d = vec![0usize; (n + 1) * w];
    for i in 0..=n {
        d[i * w] = i;
    }
    for (j, x) in d.iter_mut().take(w).enumerate() {
        *x = j;
    }
    for i in 1..=n {
        for j in 1..=m {
            let sub = d[(i - 1) * w + j - 1] + usize::from(a[i - 1] != b[j - 1]);
            let del = d[(i - 1) * w + j] + 1;
            let ins = d[i * w + j - 1] + 1;
            d[i * w + j] = sub.min(del).min(ins);
        }
    }
    let mut ops = EditOps {
        distance: d[n * w + m],
        ..EditOps::default()
    };
    let (mut i, mut j) = (n, m);
    while i > 0 || j > 0 {
        let here = d[i * w + j];
        if i > 0 && j > 0 {
            let cost = usize::from(a[i - 1] != b[j - 1]);
            if d[(i - 1) * w + j - 1] + cost == here {
                ops.substitutions += cost;
                i -= 1;
                j -= 1;
                continue;
            }
        }
        if i > 0 && d[(i - 1) * w + j] + 1 == here {
            ops.deletions += 1;
            i -= 1;
        } else {
            ops.insertions += 1;
            j -= 1;
        }
    }
    ops
}

/// One scored utterance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemScore {
    pub id: String,
    pub reference: String,
    pub hypothesis: String,
    pub chars: EditOps,
    pub words: EditOps,
    pub reference_chars: usize,
    pub reference_words: usize,
    pub seconds: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub items: Vec<ItemScore>,
    /// Total character edits over total reference characters.
    pub cer: f64,
    pub wer: f64,
    pub chars: EditOps,
    pub words: EditOps,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalItem {
    pub id: String,
    pub reference: String,
    pub hypothesis: String,
    pub seconds: Option<f64>,
}

fn words(text: &str) -> Vec<&str> {
    text.split_whitespace().collect()
}

fn rate(distance: usize, length: usize) -> f64 {
    distance as f64 / length.max(1) as f64
}

/// Scores (reference, hypothesis) pairs; ids are their positions.
pub fn evaluate<R: AsRef<str>, H: AsRef<str>>(pairs: &[(R, H)]) -> EvalReport {
    evaluate_items(
        pairs
            .iter()
            .enumerate()
            .map(|(i, (r, h))| EvalItem {
                id: i.to_string(),
                reference: r.as_ref().to_string(),
                hypothesis: h.as_ref().to_string(),
                seconds: None,
            })
            .collect(),
    )
}

pub fn evaluate_items(items: Vec<EvalItem>) -> EvalReport {
    let mut chars = EditOps::default();
    let mut word_ops = EditOps::default();
    let (mut ref_chars, mut ref_words) = (0, 0);
    let scored: Vec<ItemScore> = items
        .into_iter()
        .map(|item| {
            let rc = tokenize_chars(&item.reference);
            let hc = tokenize_chars(&item.hypothesis);
            let rw = words(&item.reference);
            let hw = words(&item.hypothesis);
            let c = edit_distance(&rc, &hc);
            let w = edit_distance(&rw, &hw);
            chars += c;
            word_ops += w;
            ref_chars += rc.len();
            ref_words += rw.len();
            ItemScore {
                reference_chars: rc.len(),
                reference_words: rw.len(),
                id: item.id,
                reference: item.reference,
                hypothesis: item.hypothesis,
                chars: c,
                words: w,
                seconds: item.seconds,
            }
        })
        .collect();
    EvalReport {
        items: scored,
        cer: rate(chars.distance, ref_chars),
        wer: rate(word_ops.distance, ref_words),
        chars,
        words: word_ops,
    }
}

impl EvalReport {
    /// Mean decoding time over items that carry one.
    pub fn mean_seconds(&self) -> Option<f64> {
        let times: Vec<f64> = self.items.iter().filter_map(|i| i.seconds).collect();
        (!times.is_empty()).then(|| times.iter().sum::<f64>() / times.len() as f64)
    }
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let id_width = self
            .items
            .iter()
            .map(|i| i.id.chars().count())
            .chain([6])
            .max()
            .unwrap_or(6);
        writeln!(f, "{:<id_width$}  {:>7}  {:>7}  {:>8}", "id", "CER", "WER", "seconds")?;
        for item in &self.items {
            let seconds = item.seconds.map_or("-".to_string(), |s| format!("{s:.3}"));
            writeln!(
                f,
                "{:<id_width$}  {:>7.2}  {:>7.2}  {:>8}",
                item.id,
                100.0 * rate(item.chars.distance, item.reference_chars),
                100.0 * rate(item.words.distance, item.reference_words),
                seconds
            )?;
        }
        writeln!(
            f,
            "{:<id_width$}  {:>7.2}  {:>7.2}  {:>8}",
            "corpus",
            100.0 * self.cer,
            100.0 * self.wer,
            ""
        )?;
        if let Some(mean) = self.mean_seconds() {
            writeln!(f, "mean seconds per item: {mean:.6}")?;
        }
        write!(
            f,
            "chars: {} sub, {} ins, {} del; words: {} sub, {} ins, {} del",
            self.chars.substitutions,
            self.chars.insertions,
            self.chars.deletions,
            self.words.substitutions,
            self.words.insertions,
            self.words.deletions
        )
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Objective {
    Cer,
    #[default]
    Wer,
}

impl FromStr for Objective {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "cer" => Ok(Objective::Cer),
            "wer" => Ok(Objective::Wer),
            _ => Err(format!("unknown objective {s:?}, expected cer or wer")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneGrid {
    pub lm_weights: Vec<f64>,
    pub orders: Vec<usize>,
    pub objective: Objective,
}

impl Default for TuneGrid {
    fn default() -> Self {
        TuneGrid {
            lm_weights: (0..=10).map(|i| i as f64 * 0.5).collect(),
            orders: (1..=6).collect(),
            objective: Objective::default(),
        }
    }
}

impl TuneGrid {
    pub fn validate(&self) -> Result<(), MetricsError> {
        if self.lm_weights.is_empty() || self.orders.is_empty() {
            return Err(MetricsError::InvalidGrid("empty axis".into()));
        }
        if self.lm_weights.iter().any(|w| !(*w >= 0.0 && w.is_finite())) {
            return Err(MetricsError::InvalidGrid(
                "weights must be finite and non-negative".into(),
            ));
        }
        if self.orders.contains(&0) {
            return Err(MetricsError::InvalidGrid("orders start at 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TunePoint {
    pub order: usize,
    pub lm_weight: f64,
    pub cer: Option<f64>,
    pub wer: Option<f64>,
    /// Why the point could not be scored.
    pub error: Option<String>,
}

impl TunePoint {
    pub fn objective(&self, objective: Objective) -> Option<f64> {
        match objective {
            Objective::Cer => self.cer,
            Objective::Wer => self.wer,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneResult {
    pub objective: Objective,
    /// Best scored point, `None` when every point failed.
    pub best: Option<TunePoint>,
    /// Every grid point, orders outermost.
    pub surface: Vec<TunePoint>,
}

/// A validation utterance.
pub struct ValItem {
    pub emissions: crate::decoder::EmissionMatrix,
    pub reference: String,
}

/// Decodes the validation set at every (order, weight) point and picks the
/// one minimizing the objective; ties go to the smaller weight, then the
/// smaller order.
///
/// `family` builds the LM of a given order. `lexicon` is required for
/// subword and word LMs, whose tries are rebuilt for each order.
pub fn tune<F, E>(
    valset: &[ValItem],
    grid: &TuneGrid,
    mut family: F,
    lexicon: Option<&Lexicon>,
    base: &DecodeConfig,
    adapter: Option<&AdapterConfig>,
) -> Result<TuneResult, MetricsError>
where
    F: FnMut(usize) -> Result<NGramModel, E>,
    E: fmt::Display,
{
    if valset.is_empty() {
        return Err(MetricsError::EmptyValset);
    }
    grid.validate()?;
    let items: Vec<BatchItem> = valset
        .iter()
        .enumerate()
        .map(|(i, v)| BatchItem {
            id: i.to_string(),
            emissions: v.emissions.clone(),
        })
        .collect();

    let mut surface = Vec::with_capacity(grid.orders.len() * grid.lm_weights.len());
    for &order in &grid.orders {
        let failed = |error: String| {
            grid.lm_weights.iter().map(move |&lm_weight| TunePoint {
                order,
                lm_weight,
                cer: None,
                wer: None,
                error: Some(error.clone()),
            })
        };
        let model = match family(order) {
            Ok(m) => m,
            Err(e) => {
                surface.extend(failed(e.to_string()));
                continue;
            }
        };
        let trie = match lexicon {
            Some(lex) => match LexiconTrie::build(lex, &unigram_scores(lex, &model)) {
                Ok(t) => Some(t),
                Err(e) => {
                    surface.extend(failed(e.to_string()));
                    continue;
                }
            },
            None => None,
        };
        for &lm_weight in &grid.lm_weights {
            let config = DecodeConfig {
                lm_weight,
                ..base.clone()
            };
            surface.push(score_point(&items, valset, order, config, &model, trie.as_ref(), adapter));
        }
    }

    let best = surface
        .iter()
        .filter_map(|p| p.objective(grid.objective).map(|v| (v, p)))
        .min_by(|(va, a), (vb, b)| {
            va.total_cmp(vb)
                .then(a.lm_weight.total_cmp(&b.lm_weight))
                .then(a.order.cmp(&b.order))
        })
        .map(|(_, p)| p.clone());
    Ok(TuneResult {
        objective: grid.objective,
        best,
        surface,
    })
}

fn score_point(
    items: &[BatchItem],
    valset: &[ValItem],
    order: usize,
    config: DecodeConfig,
    model: &NGramModel,
    trie: Option<&LexiconTrie>,
    adapter: Option<&AdapterConfig>,
) -> TunePoint {
    let lm_weight = config.lm_weight;
    let point = |cer, wer, error| TunePoint {
        order,
        lm_weight,
        cer,
        wer,
        error,
    };
    let decoder = match BeamDecoder::new(config, model, trie) {
        Ok(d) => d,
        Err(e) => return point(None, None, Some(e.to_string())),
    };
    let outputs = decode_batch(items, &Strategy::Beam(&decoder), adapter, true);
    let mut pairs = Vec::with_capacity(outputs.len());
    for (out, v) in outputs.into_iter().zip(valset) {
        match out.result {
            Ok(d) => pairs.push((v.reference.as_str(), d.text)),
            Err(e) => return point(None, None, Some(format!("item {}: {e}", out.id))),
        }
    }
    let report = evaluate(&pairs);
    point(Some(report.cer), Some(report.wer), None)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chars(s: &str) -> Vec<char> {
        s.chars().collect()
    }

    #[test]
    fn edit_distance_examples() {
        assert_eq!(edit_distance(&chars("abc"), &chars("abc")), EditOps::default());
        let ops = edit_distance(&chars("abc"), &chars("abd"));
        assert_eq!((ops.distance, ops.substitutions, ops.insertions, ops.deletions), (1, 1, 0, 0));
        let ops = edit_distance(&words("the cat sat"), &words("the mat"));
        assert_eq!((ops.distance, ops.substitutions, ops.insertions, ops.deletions), (2, 1, 0, 1));
        let ops = edit_distance(&chars(""), &chars("xy"));
        assert_eq!((ops.distance, ops.insertions), (2, 2));
    }

    #[test]
    fn evaluate_examples() {
        let r = evaluate(&[("same text", "same text"), ("a", "a")]);
        assert_eq!((r.cer, r.wer), (0.0, 0.0));
        let r = evaluate(&[("ab", "")]);
        assert_eq!(r.cer, 1.0);
        assert_eq!(r.chars.deletions, 2);
        let r = evaluate(&[("abcd", "abce"), ("abcdef", "abcde")]);
        assert!((r.cer - 0.2).abs() < 1e-15);
    }

    #[test]
    fn corpus_rate_is_not_mean_of_ratios() {
        let r = evaluate(&[("a", "b"), ("abcdefghij", "abcdefghij")]);
        assert!((r.cer - 1.0 / 11.0).abs() < 1e-15);
    }

    #[test]
    fn report_table_and_json() {
        let r = evaluate(&[("the cat", "the mat")]);
        let table = r.to_string();
        assert!(table.contains("14.29"));
        assert!(table.contains("50.00"));
        let json = serde_json::to_string(&r).unwrap();
        let back: EvalReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back, r);
    }

    #[test]
    fn default_grid() {
        let g = TuneGrid::default();
        assert_eq!(g.lm_weights.len(), 11);
        assert_eq!(g.lm_weights[10], 5.0);
        assert_eq!(g.orders, vec![1, 2, 3, 4, 5, 6]);
        assert!(TuneGrid { orders: vec![], ..g.clone() }.validate().is_err());
        assert!(TuneGrid { lm_weights: vec![-0.5], ..g }.validate().is_err());
    }

    #[test]
    fn objective_parsing() {
        assert_eq!("CER".parse::<Objective>().unwrap(), Objective::Cer);
        assert!("bleu".parse::<Objective>().is_err());
    }
}
