//! Test-only oracles. Nothing here calls into the estimator or the beam
//! search; they recompute every quantity from scratch by brute force.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;

/// Interpolated Kneser-Ney evaluated straight from the corpus by scanning
/// padded windows for every count it needs.
pub struct KneserNeyOracle {
    order: usize,
    padded: Vec<Vec<String>>,
    predicted: Vec<String>,
}

impl KneserNeyOracle {
    pub fn new(corpus: &[Vec<String>], order: usize) -> Self {
        let padded: Vec<Vec<String>> = corpus
            .iter()
            .map(|s| {
                let mut p = vec!["<s>".to_string(); order - 1];
                p.extend(s.iter().cloned());
                p.push("</s>".to_string());
                p
            })
            .collect();
        let mut predicted: BTreeSet<String> = corpus.iter().flatten().cloned().collect();
        predicted.insert("</s>".into());
        predicted.insert("<unk>".into());
        KneserNeyOracle {
            order,
            padded,
            predicted: predicted.into_iter().collect(),
        }
    }

    pub fn predicted(&self) -> &[String] {
        &self.predicted
    }

    fn raw(&self, gram: &[String]) -> u64 {
        if gram.last().map(String::as_str) == Some("<s>") {
            return 0;
        }
        self.padded
            .iter()
            .map(|s| s.windows(gram.len()).filter(|w| *w == gram).count() as u64)
            .sum()
    }

    fn count(&self, gram: &[String]) -> u64 {
        if gram.len() == self.order || gram[0] == "<s>" {
            return self.raw(gram);
        }
        let mut left: BTreeSet<&String> = BTreeSet::new();
        for s in &self.padded {
            for w in s.windows(gram.len() + 1) {
                if w[1..] == *gram {
                    left.insert(&w[0]);
                }
            }
        }
        left.len() as u64
    }

    fn discount(&self, k: usize) -> f64 {
        let mut grams: BTreeSet<Vec<String>> = BTreeSet::new();
        for s in &self.padded {
            for w in s.windows(k) {
                if w[k - 1] != "<s>" {
                    grams.insert(w.to_vec());
                }
            }
        }
        let (mut n1, mut n2) = (0, 0);
        for g in &grams {
            match self.count(g) {
                1 => n1 += 1,
                2 => n2 += 1,
                _ => {}
            }
        }
        if n1 == 0 || n2 == 0 {
            0.75
        } else {
            n1 as f64 / (n1 as f64 + 2.0 * n2 as f64)
        }
    }

    fn prob(&self, k: usize, history: &[String], word: &str) -> f64 {
        let d = self.discount(k);
        let with = |u: &str| {
            let mut g = history.to_vec();
            g.push(u.to_string());
            g
        };
        let counts: Vec<u64> = self.predicted.iter().map(|u| self.count(&with(u))).collect();
        let total: u64 = counts.iter().sum();
        let types = counts.iter().filter(|&&c| c > 0).count() as f64;
        let c = self.count(&with(word)) as f64;
        if k == 1 {
            let total = total as f64;
            return (c - d).max(0.0) / total
                + d * types / total / self.predicted.len() as f64;
        }
        if total == 0 {
            return self.prob(k - 1, &history[1..], word);
        }
        let total = total as f64;
        (c - d).max(0.0) / total + d * types / total * self.prob(k - 1, &history[1..], word)
    }

    /// log10 P(word | context), using at most `order - 1` context tokens.
    /// Out-of-vocabulary tokens are mapped to `<unk>`.
    pub fn log10(&self, context: &[String], word: &str) -> f64 {
        let known = |t: &String| {
            if t == "<s>" || self.predicted.contains(t) {
                t.clone()
            } else {
                "<unk>".to_string()
            }
        };
        let ctx: Vec<String> = context[context.len().saturating_sub(self.order - 1)..]
            .iter()
            .map(known)
            .collect();
        let word = known(&word.to_string());
        self.prob(ctx.len() + 1, &ctx, &word).log10()
    }

    /// Every length-(order-1) history that occurs in the padded corpus.
    pub fn histories(&self) -> Vec<Vec<String>> {
        let mut out: BTreeSet<Vec<String>> = BTreeSet::new();
        for s in &self.padded {
            for w in s.windows(self.order) {
                out.insert(w[..self.order - 1].to_vec());
            }
        }
        out.into_iter().collect()
    }
}

pub fn tokens(line: &str) -> Vec<String> {
    line.split_whitespace().map(String::from).collect()
}

pub fn random_corpus<R: Rng>(rng: &mut R, vocab: usize, sequences: usize, max_len: usize) -> Vec<Vec<String>> {
    (0..sequences)
        .map(|_| {
            let len = rng.random_range(0..=max_len);
            (0..len)
                .map(|_| format!("w{}", rng.random_range(0..vocab)))
                .collect()
        })
        .collect()
}

fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// Sums the probability of every alignment per collapsed labeling by
/// enumerating all V^T frame paths. `rows` hold natural-log probabilities.
pub fn labeling_marginals(rows: &[Vec<f64>], blank: usize) -> BTreeMap<Vec<usize>, f64> {
    let t = rows.len();
    let v = rows.first().map_or(0, Vec::len);
    let mut out: BTreeMap<Vec<usize>, f64> = BTreeMap::new();
    if t == 0 {
        out.insert(Vec::new(), 0.0);
        return out;
    }
    let total = v.pow(t as u32);
    for code in 0..total {
        let mut path = Vec::with_capacity(t);
        let mut c = code;
        for _ in 0..t {
            path.push(c % v);
            c /= v;
        }
        let logp: f64 = path.iter().enumerate().map(|(i, &s)| rows[i][s]).sum();
        let mut labeling = Vec::new();
        let mut prev = None;
        for &s in &path {
            if s != blank && Some(s) != prev {
                labeling.push(s);
            }
            prev = Some(s);
        }
        let slot = out.entry(labeling).or_insert(f64::NEG_INFINITY);
        *slot = log_add(*slot, logp);
    }
    out
}

/// Random normalized log-probability rows.
pub fn random_log_rows<R: Rng>(rng: &mut R, frames: usize, symbols: usize) -> Vec<Vec<f64>> {
    (0..frames)
        .map(|_| {
            let raw: Vec<f64> = (0..symbols).map(|_| rng.random_range(0.05..1.0)).collect();
            let sum: f64 = raw.iter().sum();
            raw.iter().map(|x| (x / sum).ln()).collect()
        })
        .collect()
}
