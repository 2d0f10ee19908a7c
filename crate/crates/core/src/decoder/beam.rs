use std::cmp::Ordering;
use std::f64::consts::LN_10;

use rustc_hash::FxHashMap;
use serde::Serialize;

use super::{DecodeConfig, DecodeError, EmissionMatrix, FrameMode};
use crate::lexicon::LexiconTrie;
use crate::lm::{NGramModel, Vocab};

/// A finished decoding hypothesis.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Hypothesis {
    /// Emission-vocabulary indices of the emitted characters.
    pub labeling: Vec<usize>,
    pub text: String,
    /// LM units the labeling was segmented into.
    pub units: Vec<String>,
    /// Fused score: acoustic + alpha * ln(10) * lm_log10 + beta * units.
    pub score: f64,
    /// Natural-log probability summed over every alignment of the labeling.
    pub acoustic: f64,
    /// log10 LM probability of the unit sequence, end of sentence included.
    pub lm_log10: f64,
}

const ROOT: u32 = 0;

/// Sequences stored as a tree of (parent, value) nodes, so that a sequence
/// is identified by a single id and extended in constant time.
struct SequenceTree {
    nodes: Vec<(u32, u32)>,
    index: FxHashMap<(u32, u32), u32>,
}

impl SequenceTree {
    fn new() -> Self {
        SequenceTree {
            nodes: vec![(ROOT, u32::MAX)],
            index: FxHashMap::default(),
        }
    }

    fn child(&mut self, parent: u32, value: u32) -> u32 {
        let next = self.nodes.len() as u32;
        *self.index.entry((parent, value)).or_insert_with(|| {
            self.nodes.push((parent, value));
            next
        })
    }

    fn path(&self, mut id: u32) -> Vec<u32> {
        let mut out = Vec::new();
        while id != ROOT {
            let (parent, value) = self.nodes[id as usize];
            out.push(value);
            id = parent;
        }
        out.reverse();
        out
    }

    fn last(&self, id: u32) -> Option<u32> {
        (id != ROOT).then(|| self.nodes[id as usize].1)
    }

    /// The last `n` values, left-padded with `pad` past the root.
    fn tail(&self, mut id: u32, n: usize, pad: u32, out: &mut Vec<u32>) {
        out.clear();
        out.resize(n, pad);
        for slot in out.iter_mut().rev() {
            if id == ROOT {
                break;
            }
            let (parent, value) = self.nodes[id as usize];
            *slot = value;
            id = parent;
        }
    }

    fn cmp_paths(&self, a: u32, b: u32) -> Ordering {
        if a == b {
            Ordering::Equal
        } else {
            self.path(a).cmp(&self.path(b))
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Hash)]
struct Key {
    labeling: u32,
    /// Committed LM units, after the implicit `<s>` padding.
    units: u32,
    node: u32,
}

#[derive(Clone, Copy)]
struct Hyp {
    key: Key,
    p_blank: f64,
    p_nonblank: f64,
    lm_log10: f64,
    /// Smeared log10 estimate for the unit in progress (lexicon mode).
    smear: f64,
    n_units: usize,
}

impl Hyp {
    fn acoustic(&self) -> f64 {
        log_add(self.p_blank, self.p_nonblank)
    }
}

fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + (-(a - b).abs()).exp().ln_1p()
}

fn accumulate(next: &mut FxHashMap<Key, Hyp>, template: Hyp, p_blank: f64, p_nonblank: f64) {
    next.entry(template.key)
        .and_modify(|h| {
            h.p_blank = log_add(h.p_blank, p_blank);
            h.p_nonblank = log_add(h.p_nonblank, p_nonblank);
        })
        .or_insert(Hyp {
            p_blank,
            p_nonblank,
            ..template
        });
}

/// LM state reached by appending one character to a hypothesis.
struct Extension {
    units: u32,
    node: u32,
    lm_log10: f64,
    smear: f64,
    n_units: usize,
}

/// Prefix beam search over CTC emissions with n-gram shallow fusion.
///
/// In character mode every emitted character is an LM unit. In lexicon mode
/// characters walk a spelling trie and the LM is queried when a unit is
/// completed; inside a unit the trie's smeared unigram score stands in.
pub struct BeamDecoder<'a> {
    config: DecodeConfig,
    lm: &'a NGramModel,
    trie: Option<&'a LexiconTrie>,
    /// LM ids of the units completing at each trie node.
    node_units: Vec<Vec<u32>>,
    fusion: f64,
}

impl<'a> BeamDecoder<'a> {
    pub fn new(
        config: DecodeConfig,
        lm: &'a NGramModel,
        trie: Option<&'a LexiconTrie>,
    ) -> Result<Self, DecodeError> {
        config.validate()?;
        match (config.lm_level.is_lexical(), trie) {
            (true, None) => return Err(DecodeError::MissingTrie(config.lm_level)),
            (false, Some(_)) => return Err(DecodeError::TrieWithoutLexiconLevel(config.lm_level)),
            _ => {}
        }
        let node_units = trie
            .map(|t| {
                (0..t.len())
                    .map(|i| t.node(i).units.iter().map(|u| lm.token_id(u)).collect())
                    .collect()
            })
            .unwrap_or_default();
        Ok(BeamDecoder {
            fusion: config.lm_weight * LN_10,
            config,
            lm,
            trie,
            node_units,
        })
    }

    pub fn config(&self) -> &DecodeConfig {
        &self.config
    }

    pub fn lm(&self) -> &NGramModel {
        self.lm
    }

    fn weighted(&self, log10: f64) -> f64 {
        // alpha = 0 disables the LM entirely, including impossible events.
        if self.config.lm_weight == 0.0 {
            0.0
        } else {
            self.fusion * log10
        }
    }

    fn ranking_score(&self, h: &Hyp) -> f64 {
        h.acoustic()
            + self.weighted(h.lm_log10 + h.smear)
            + self.config.unit_insertion_score * h.n_units as f64
    }

    fn commit(
        &self,
        h: &Hyp,
        unit: u32,
        units: &mut SequenceTree,
        context: &mut Vec<u32>,
    ) -> Extension {
        units.tail(h.key.units, self.lm.order() - 1, Vocab::BOS_ID, context);
        Extension {
            units: units.child(h.key.units, unit),
            node: LexiconTrie::ROOT as u32,
            lm_log10: h.lm_log10 + self.lm.log10_prob(context, unit),
            smear: 0.0,
            n_units: h.n_units + 1,
        }
    }

    fn extend(
        &self,
        h: &Hyp,
        symbol: &str,
        lm_char: u32,
        units: &mut SequenceTree,
        context: &mut Vec<u32>,
        out: &mut Vec<Extension>,
    ) {
        out.clear();
        let Some(trie) = self.trie else {
            out.push(self.commit(h, lm_char, units, context));
            return;
        };
        let Some(next) = trie.child(h.key.node as usize, symbol) else {
            return;
        };
        let node = trie.node(next);
        if !node.children.is_empty() {
            out.push(Extension {
                units: h.key.units,
                node: next as u32,
                lm_log10: h.lm_log10,
                smear: node.smear,
                n_units: h.n_units,
            });
        }
        for &unit in &self.node_units[next] {
            out.push(self.commit(h, unit, units, context));
        }
    }

    /// Decodes one CTC matrix, returning up to `nbest` hypotheses with
    /// non-increasing scores.
    pub fn decode(&self, emissions: &EmissionMatrix) -> Result<Vec<Hypothesis>, DecodeError> {
        let FrameMode::Ctc { blank } = emissions.mode() else {
            return Err(DecodeError::ModeMismatch {
                expected: "ctc",
                found: emissions.mode().name(),
            });
        };
        let symbols: Vec<usize> = (0..emissions.symbols()).filter(|&s| s != blank).collect();
        let lm_chars: Vec<u32> = (0..emissions.symbols())
            .map(|s| self.lm.token_id(emissions.symbol(s)))
            .collect();
        let lexical = self.trie.is_some();
        let mut labelings = SequenceTree::new();
        let mut units = SequenceTree::new();
        let mut context = Vec::with_capacity(self.lm.order());

        let mut beam = vec![Hyp {
            key: Key {
                labeling: ROOT,
                units: ROOT,
                node: LexiconTrie::ROOT as u32,
            },
            p_blank: 0.0,
            p_nonblank: f64::NEG_INFINITY,
            lm_log10: 0.0,
            smear: 0.0,
            n_units: 0,
        }];
        let mut candidates: Vec<usize> = Vec::with_capacity(symbols.len());
        let mut extensions: Vec<Extension> = Vec::new();
        let mut next: FxHashMap<Key, Hyp> = FxHashMap::default();

        for t in 0..emissions.frames() {
            let row: Vec<f64> = emissions.row(t).iter().map(|&x| x as f64).collect();
            candidates.clear();
            candidates.extend(symbols.iter().copied().filter(|&s| row[s] > f64::NEG_INFINITY));
            if let Some(k) = self.config.token_beam {
                if candidates.len() > k {
                    candidates.sort_by(|&a, &b| row[b].total_cmp(&row[a]).then(a.cmp(&b)));
                    candidates.truncate(k);
                }
            }

            next.clear();
            for h in &beam {
                let total = h.acoustic();
                accumulate(&mut next, *h, total + row[blank], f64::NEG_INFINITY);
                let last = labelings.last(h.key.labeling).map(|s| s as usize);
                if let Some(last) = last {
                    accumulate(&mut next, *h, f64::NEG_INFINITY, h.p_nonblank + row[last]);
                }
                for &c in &candidates {
                    let base = if last == Some(c) { h.p_blank } else { total };
                    let p = base + row[c];
                    if p == f64::NEG_INFINITY {
                        continue;
                    }
                    let symbol = emissions.symbol(c);
                    self.extend(h, symbol, lm_chars[c], &mut units, &mut context, &mut extensions);
                    if extensions.is_empty() {
                        continue;
                    }
                    let labeling = labelings.child(h.key.labeling, c as u32);
                    for ext in extensions.drain(..) {
                        if self.config.lm_weight > 0.0 && ext.lm_log10 == f64::NEG_INFINITY {
                            continue;
                        }
                        let template = Hyp {
                            key: Key {
                                labeling,
                                units: ext.units,
                                node: ext.node,
                            },
                            p_blank: f64::NEG_INFINITY,
                            p_nonblank: f64::NEG_INFINITY,
                            lm_log10: ext.lm_log10,
                            smear: ext.smear,
                            n_units: ext.n_units,
                        };
                        accumulate(&mut next, template, f64::NEG_INFINITY, p);
                    }
                }
            }

            let mut scored: Vec<(f64, Hyp)> = next
                .values()
                .map(|h| (self.ranking_score(h), *h))
                .filter(|(s, _)| *s > f64::NEG_INFINITY)
                .collect();
            let order = |a: &(f64, Hyp), b: &(f64, Hyp)| {
                b.0.total_cmp(&a.0)
                    .then_with(|| labelings.cmp_paths(a.1.key.labeling, b.1.key.labeling))
                    .then_with(|| units.cmp_paths(a.1.key.units, b.1.key.units))
                    .then_with(|| a.1.key.node.cmp(&b.1.key.node))
            };
            let k = self.config.beam_size;
            if scored.len() > k {
                scored.select_nth_unstable_by(k - 1, order);
                scored.truncate(k);
            }
            scored.sort_by(order);
            beam = scored.into_iter().map(|(_, h)| h).collect();
        }

        let pad = self.lm.order() - 1;
        let mut finals: Vec<Hypothesis> = Vec::with_capacity(beam.len());
        for h in beam {
            if lexical && h.key.node != LexiconTrie::ROOT as u32 {
                continue;
            }
            units.tail(h.key.units, pad, Vocab::BOS_ID, &mut context);
            let lm_log10 = h.lm_log10 + self.lm.log10_prob(&context, Vocab::EOS_ID);
            let acoustic = h.acoustic();
            let score = acoustic
                + self.weighted(lm_log10)
                + self.config.unit_insertion_score * h.n_units as f64;
            if score == f64::NEG_INFINITY {
                continue;
            }
            let labeling: Vec<usize> = labelings
                .path(h.key.labeling)
                .into_iter()
                .map(|s| s as usize)
                .collect();
            finals.push(Hypothesis {
                text: emissions.text_of(&labeling),
                units: units
                    .path(h.key.units)
                    .into_iter()
                    .map(|u| self.lm.vocab().token(u).to_string())
                    .collect(),
                labeling,
                score,
                acoustic,
                lm_log10,
            });
        }
        finals.sort_by(|a, b| {
            b.score
                .total_cmp(&a.score)
                .then_with(|| a.labeling.cmp(&b.labeling))
        });
        // Several segmentations may spell the same characters; keep the best.
        finals.dedup_by(|later, earlier| later.labeling == earlier.labeling);
        finals.truncate(self.config.nbest);
        Ok(finals)
    }
}

/// One-shot form of [`BeamDecoder::decode`].
pub fn beam_decode(
    emissions: &EmissionMatrix,
    config: &DecodeConfig,
    lm: &NGramModel,
    trie: Option<&LexiconTrie>,
) -> Result<Vec<Hypothesis>, DecodeError> {
    BeamDecoder::new(config.clone(), lm, trie)?.decode(emissions)
}
