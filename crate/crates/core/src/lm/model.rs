use rustc_hash::FxHashMap;

use super::{pack, pack_with, unpack, LmError, Smoothing, Vocab};

/// One stored n-gram: its conditional probability and the backoff weight
/// applied when it is used as a context. Both log10.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Entry {
    pub log10_prob: f64,
    pub log10_backoff: f64,
}

/// Backoff n-gram model. Immutable once built, so it can be shared across
/// decoding threads.
#[derive(Debug, Clone)]
pub struct NGramModel {
    pub(crate) order: usize,
    pub(crate) smoothing: Option<Smoothing>,
    pub(crate) vocab: Vocab,
    pub(crate) tables: Vec<FxHashMap<u128, Entry>>,
}

impl NGramModel {
    pub fn order(&self) -> usize {
        self.order
    }

    /// Smoothing used for estimation; `None` for models read from ARPA.
    pub fn smoothing(&self) -> Option<Smoothing> {
        self.smoothing
    }

    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    /// Id of a token, mapping out-of-vocabulary tokens to `<unk>`.
    pub fn token_id(&self, token: &str) -> u32 {
        self.vocab.id_or_unk(token)
    }

    /// Number of stored k-grams.
    pub fn ngram_count(&self, k: usize) -> usize {
        self.tables.get(k - 1).map_or(0, |t| t.len())
    }

    /// The `order - 1` copies of `<s>` every sentence starts from.
    pub fn start_context(&self) -> Vec<u32> {
        vec![Vocab::BOS_ID; self.order - 1]
    }

    /// Tokens that can be predicted: everything except `<s>`.
    pub fn predicted_ids(&self) -> impl Iterator<Item = u32> + '_ {
        self.vocab
            .iter()
            .map(|(id, _)| id)
            .filter(|&id| id != Vocab::BOS_ID)
    }

    pub fn lookup<S: AsRef<str>>(&self, ngram: &[S]) -> Option<Entry> {
        if ngram.is_empty() || ngram.len() > self.order {
            return None;
        }
        let ids: Option<Vec<u32>> = ngram.iter().map(|t| self.vocab.get(t.as_ref())).collect();
        self.tables[ngram.len() - 1].get(&pack(&ids?)).copied()
    }

    /// log10 P(word | context) with the standard backoff recursion. Only the
    /// last `order - 1` context ids are used.
    pub fn log10_prob(&self, context: &[u32], word: u32) -> f64 {
        let ctx = &context[context.len().saturating_sub(self.order - 1)..];
        let mut backoff = 0.0;
        for start in 0..=ctx.len() {
            let hist = &ctx[start..];
            if let Some(e) = self.tables[hist.len()].get(&pack_with(hist, word)) {
                return backoff + e.log10_prob;
            }
            if !hist.is_empty() {
                if let Some(e) = self.tables[hist.len() - 1].get(&pack(hist)) {
                    backoff += e.log10_backoff;
                }
            }
        }
        f64::NEG_INFINITY
    }

    /// String form of [`log10_prob`](Self::log10_prob).
    pub fn conditional<S: AsRef<str>>(&self, context: &[S], token: &str) -> f64 {
        let ids: Vec<u32> = context.iter().map(|t| self.token_id(t.as_ref())).collect();
        self.log10_prob(&ids, self.token_id(token))
    }

    /// Sum of conditionals over the `<s>`-padded, `</s>`-terminated sequence.
    pub fn score_sequence<S: AsRef<str>>(&self, tokens: &[S]) -> f64 {
        let mut context = self.start_context();
        let mut total = 0.0;
        for t in tokens {
            let id = self.token_id(t.as_ref());
            total += self.log10_prob(&context, id);
            context.push(id);
        }
        total + self.log10_prob(&context, Vocab::EOS_ID)
    }

    /// `10^(-sum log10 P / M)` with M counting one `</s>` per sequence.
    pub fn perplexity<S: AsRef<str>>(&self, corpus: &[Vec<S>]) -> Result<f64, LmError> {
        if corpus.is_empty() {
            return Err(LmError::EmptyCorpus);
        }
        let mut total = 0.0;
        let mut events = 0usize;
        for seq in corpus {
            total += self.score_sequence(seq);
            events += seq.len() + 1;
        }
        Ok(10f64.powf(-total / events as f64))
    }

    /// Every stored n-gram of order below the top, as an id context.
    pub fn contexts(&self) -> Vec<Vec<u32>> {
        let mut out: Vec<Vec<u32>> = vec![Vec::new()];
        for k in 1..self.order {
            let mut level: Vec<Vec<u32>> =
                self.tables[k - 1].keys().map(|&key| unpack(key, k)).collect();
            level.sort();
            out.extend(level);
        }
        out
    }

    /// Stored k-grams as ids with their entries, sorted by id sequence.
    pub fn entries(&self, k: usize) -> Vec<(Vec<u32>, Entry)> {
        let mut out: Vec<(Vec<u32>, Entry)> = self.tables[k - 1]
            .iter()
            .map(|(&key, &e)| (unpack(key, k), e))
            .collect();
        out.sort_by(|a, b| a.0.cmp(&b.0));
        out
    }

    /// The same model with its highest-order table removed.
    pub fn without_top_order(&self) -> Option<NGramModel> {
        if self.order < 2 {
            return None;
        }
        let mut tables = self.tables[..self.order - 1].to_vec();
        for e in tables.last_mut().unwrap().values_mut() {
            e.log10_backoff = 0.0;
        }
        Some(NGramModel {
            order: self.order - 1,
            smoothing: self.smoothing,
            vocab: self.vocab.clone(),
            tables,
        })
    }
}
