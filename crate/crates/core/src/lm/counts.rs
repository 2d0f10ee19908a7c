use rustc_hash::FxHashMap;

use super::{pack, suffix_of, unpack, validate_order, LmError, Vocab, BOS, EOS};

/// Raw and Kneser-Ney-adjusted n-gram counts for orders `1..=order`.
///
/// Only windows whose last token is a predicted token are stored; the
/// all-`<s>` padding windows are contexts, not events.
#[derive(Debug, Clone)]
pub struct CountTable {
    order: usize,
    vocab: Vocab,
    raw: Vec<FxHashMap<u128, u64>>,
    adjusted: Vec<FxHashMap<u128, u64>>,
    sentences: usize,
}

/// Counts every window of the padded sequences. Each sequence gets
/// `order - 1` copies of `<s>` on the left and one `</s>` on the right.
pub fn count_ngrams<S: AsRef<str>>(
    sequences: &[Vec<S>],
    order: usize,
) -> Result<CountTable, LmError> {
    validate_order(order)?;
    if sequences.is_empty() {
        return Err(LmError::EmptyCorpus);
    }
    let mut vocab = Vocab::new();
    let mut raw: Vec<FxHashMap<u128, u64>> = vec![FxHashMap::default(); order];
    let mut padded: Vec<u32> = Vec::new();
    for seq in sequences {
        padded.clear();
        padded.extend(std::iter::repeat_n(Vocab::BOS_ID, order - 1));
        for token in seq {
            let token = token.as_ref();
            if token.is_empty()
                || token.chars().any(char::is_whitespace)
                || token == BOS
                || token == EOS
            {
                return Err(LmError::InvalidToken(token.to_string()));
            }
            padded.push(vocab.intern(token)?);
        }
        padded.push(Vocab::EOS_ID);

        for end in 0..padded.len() {
            if padded[end] == Vocab::BOS_ID {
                continue;
            }
            for k in 1..=order.min(end + 1) {
                let key = pack(&padded[end + 1 - k..=end]);
                *raw[k - 1].entry(key).or_insert(0) += 1;
            }
        }
    }

    // Continuation counts: number of distinct left extensions. N-grams that
    // start with <s> have no real left context and keep their raw counts.
    let mut adjusted: Vec<FxHashMap<u128, u64>> = vec![FxHashMap::default(); order];
    adjusted[order - 1] = raw[order - 1].clone();
    for k in 1..order {
        let mut table: FxHashMap<u128, u64> = FxHashMap::default();
        for &longer in raw[k].keys() {
            *table.entry(suffix_of(longer, k + 1)).or_insert(0) += 1;
        }
        for (&key, &count) in &raw[k - 1] {
            if unpack(key, k)[0] == Vocab::BOS_ID {
                table.insert(key, count);
            }
        }
        adjusted[k - 1] = table;
    }

    Ok(CountTable {
        order,
        vocab,
        raw,
        adjusted,
        sentences: sequences.len(),
    })
}

impl CountTable {
    pub fn order(&self) -> usize {
        self.order
    }

    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    pub fn sentences(&self) -> usize {
        self.sentences
    }

    fn key_of<S: AsRef<str>>(&self, ngram: &[S]) -> Option<u128> {
        if ngram.is_empty() || ngram.len() > self.order {
            return None;
        }
        let ids: Option<Vec<u32>> = ngram.iter().map(|t| self.vocab.get(t.as_ref())).collect();
        ids.map(|ids| pack(&ids))
    }

    /// Number of times the n-gram occurs as a window.
    pub fn count<S: AsRef<str>>(&self, ngram: &[S]) -> u64 {
        self.key_of(ngram)
            .and_then(|key| self.raw[ngram.len() - 1].get(&key).copied())
            .unwrap_or(0)
    }

    /// Kneser-Ney count: raw at the top order, continuation count below.
    pub fn adjusted_count<S: AsRef<str>>(&self, ngram: &[S]) -> u64 {
        self.key_of(ngram)
            .and_then(|key| self.adjusted[ngram.len() - 1].get(&key).copied())
            .unwrap_or(0)
    }

    /// Stored k-grams as token strings with their raw counts, in id order.
    pub fn ngrams(&self, k: usize) -> Vec<(Vec<&str>, u64)> {
        let mut entries: Vec<(Vec<u32>, u64)> = self.raw[k - 1]
            .iter()
            .map(|(&key, &c)| (unpack(key, k), c))
            .collect();
        entries.sort();
        entries
            .into_iter()
            .map(|(ids, c)| (ids.iter().map(|&i| self.vocab.token(i)).collect(), c))
            .collect()
    }

    pub(crate) fn raw_table(&self, k: usize) -> &FxHashMap<u128, u64> {
        &self.raw[k - 1]
    }

    pub(crate) fn adjusted_table(&self, k: usize) -> &FxHashMap<u128, u64> {
        &self.adjusted[k - 1]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seqs(lines: &[&str]) -> Vec<Vec<String>> {
        lines
            .iter()
            .map(|l| l.split_whitespace().map(String::from).collect())
            .collect()
    }

    #[test]
    fn bigram_windows() {
        let counts = count_ngrams(&seqs(&["a b"]), 2).unwrap();
        let bigrams = counts.ngrams(2);
        assert_eq!(
            bigrams,
            vec![
                (vec!["<s>", "a"], 1),
                (vec!["a", "b"], 1),
                (vec!["b", "</s>"], 1)
            ]
        );
        assert_eq!(counts.count(&["a", "b"]), 1);
        assert_eq!(counts.count(&["b", "a"]), 0);
    }

    #[test]
    fn unigrams_exclude_bos() {
        let counts = count_ngrams(&seqs(&["a"]), 1).unwrap();
        assert_eq!(counts.ngrams(1), vec![(vec!["</s>"], 1), (vec!["a"], 1)]);
        assert_eq!(counts.count(&["<s>"]), 0);
    }

    #[test]
    fn errors() {
        assert!(matches!(
            count_ngrams::<String>(&[], 2),
            Err(LmError::EmptyCorpus)
        ));
        assert!(matches!(
            count_ngrams(&seqs(&["a"]), 7),
            Err(LmError::OrderOutOfRange(7))
        ));
        assert!(matches!(
            count_ngrams(&seqs(&["a"]), 0),
            Err(LmError::OrderOutOfRange(0))
        ));
        assert!(matches!(
            count_ngrams(&[vec!["<s>"]], 2),
            Err(LmError::InvalidToken(_))
        ));
    }

    #[test]
    fn continuation_counts() {
        // "x a" and "y a": a has two distinct left extensions.
        let counts = count_ngrams(&seqs(&["x a", "y a", "y a"]), 2).unwrap();
        assert_eq!(counts.count(&["a"]), 3);
        assert_eq!(counts.adjusted_count(&["a"]), 2);
        assert_eq!(counts.adjusted_count(&["</s>"]), 1);
        // top order keeps raw counts
        assert_eq!(counts.adjusted_count(&["y", "a"]), 2);
    }

    #[test]
    fn bos_initial_ngrams_keep_raw_counts() {
        let counts = count_ngrams(&seqs(&["a b", "a c", "a b"]), 3).unwrap();
        assert_eq!(counts.count(&["<s>", "a"]), 3);
        assert_eq!(counts.adjusted_count(&["<s>", "a"]), 3);
        assert_eq!(counts.adjusted_count(&["a", "b"]), 1);
    }
}
