use rustc_hash::FxHashMap;

use super::{
    context_of, pack, suffix_of, CountTable, Entry, LmError, NGramModel, Smoothing, Vocab,
};

/// Fallback discount when the count-of-counts cannot determine one.
pub const FALLBACK_DISCOUNT: f64 = 0.75;

/// Absolute discount `n1 / (n1 + 2 n2)` from count-of-counts, or the
/// fallback when either count is zero.
pub fn discount<I: IntoIterator<Item = u64>>(counts: I) -> f64 {
    let (mut n1, mut n2) = (0u64, 0u64);
    for c in counts {
        match c {
            1 => n1 += 1,
            2 => n2 += 1,
            _ => {}
        }
    }
    if n1 == 0 || n2 == 0 {
        FALLBACK_DISCOUNT
    } else {
        n1 as f64 / (n1 as f64 + 2.0 * n2 as f64)
    }
}

struct ContextStats {
    total: u64,
    types: u64,
}

/// Estimates an interpolated backoff model from counts.
///
/// Stored probabilities are the fully interpolated values and each context
/// carries the interpolation weight of the lower order as its backoff, so
/// backoff queries reproduce the interpolated distribution exactly.
pub fn estimate(counts: &CountTable, smoothing: Smoothing) -> Result<NGramModel, LmError> {
    let order = counts.order();
    let vocab = counts.vocab().clone();
    let predicted = (vocab.len() - 1) as f64;

    let mut model = NGramModel {
        order,
        smoothing: Some(smoothing),
        vocab,
        tables: vec![FxHashMap::default(); order],
    };

    // All-<s> contexts are stored without probability mass.
    for k in 1..order.max(2) {
        let key = pack(&vec![Vocab::BOS_ID; k]);
        model.tables[k - 1].insert(
            key,
            Entry {
                log10_prob: f64::NEG_INFINITY,
                log10_backoff: 0.0,
            },
        );
    }

    for k in 1..=order {
        let table = match smoothing {
            Smoothing::KneserNey => counts.adjusted_table(k),
            _ => counts.raw_table(k),
        };
        let d = match smoothing {
            Smoothing::KneserNey => {
                let d = discount(table.values().copied());
                if !(d > 0.0 && d < 1.0) {
                    return Err(LmError::DegenerateCounts { order: k, discount: d });
                }
                d
            }
            _ => 0.0,
        };

        let mut stats: FxHashMap<u128, ContextStats> = FxHashMap::default();
        for (&key, &c) in table {
            let s = stats.entry(context_of(key)).or_insert(ContextStats { total: 0, types: 0 });
            s.total += c;
            s.types += 1;
        }

        // Weight given to the lower-order distribution under each context.
        let lower_weight = |s: &ContextStats| -> f64 {
            let (total, types) = (s.total as f64, s.types as f64);
            match smoothing {
                Smoothing::Unsmoothed => 0.0,
                Smoothing::KneserNey => d * types / total,
                Smoothing::WittenBell => types / (total + types),
            }
        };

        let mut new_entries: Vec<(u128, f64)> = Vec::with_capacity(table.len());
        if k == 1 {
            let s = &stats[&0];
            let gamma = lower_weight(s);
            for id in model.predicted_ids().collect::<Vec<_>>() {
                let c = table.get(&(id as u128)).copied().unwrap_or(0) as f64;
                let p = interpolate(smoothing, c, s, d, gamma, 1.0 / predicted);
                new_entries.push((id as u128, p));
            }
        } else {
            for (&key, &c) in table {
                let s = &stats[&context_of(key)];
                let gamma = lower_weight(s);
                let lower = if gamma > 0.0 {
                    let suffix = super::unpack(suffix_of(key, k), k - 1);
                    let (ctx, w) = suffix.split_at(k - 2);
                    10f64.powf(model.log10_prob(ctx, w[0]))
                } else {
                    0.0
                };
                let p = interpolate(smoothing, c as f64, s, d, gamma, lower);
                new_entries.push((key, p));
            }
        }

        for (key, p) in new_entries {
            model.tables[k - 1].insert(
                key,
                Entry {
                    log10_prob: p.log10(),
                    log10_backoff: 0.0,
                },
            );
        }

        if k >= 2 {
            for (ctx, s) in &stats {
                let bow = lower_weight(s).log10();
                let entry = model.tables[k - 2]
                    .get_mut(ctx)
                    .expect("every context is a stored lower-order n-gram");
                entry.log10_backoff = bow;
            }
        }
    }

    Ok(model)
}

fn interpolate(
    smoothing: Smoothing,
    count: f64,
    s: &ContextStats,
    d: f64,
    gamma: f64,
    lower: f64,
) -> f64 {
    let total = s.total as f64;
    match smoothing {
        Smoothing::Unsmoothed => count / total,
        Smoothing::KneserNey => (count - d).max(0.0) / total + gamma * lower,
        Smoothing::WittenBell => {
            let types = s.types as f64;
            (count + types * lower) / (total + types)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lm::count_ngrams;

    fn seqs(lines: &[&str]) -> Vec<Vec<String>> {
        lines
            .iter()
            .map(|l| l.split_whitespace().map(String::from).collect())
            .collect()
    }

    fn model(lines: &[&str], order: usize, smoothing: Smoothing) -> NGramModel {
        estimate(&count_ngrams(&seqs(lines), order).unwrap(), smoothing).unwrap()
    }

    fn assert_normalized(m: &NGramModel) {
        let words: Vec<u32> = m.predicted_ids().collect();
        for ctx in m.contexts() {
            let total: f64 = words.iter().map(|&w| 10f64.powf(m.log10_prob(&ctx, w))).sum();
            assert!((total - 1.0).abs() < 1e-9, "context {ctx:?} sums to {total}");
        }
    }

    #[test]
    fn discount_from_count_of_counts() {
        assert_eq!(discount([1, 1, 2, 5]), 2.0 / 4.0);
        assert_eq!(discount([1, 1, 3]), FALLBACK_DISCOUNT);
        assert_eq!(discount([]), FALLBACK_DISCOUNT);
    }

    #[test]
    fn unigram_mle() {
        let m = model(&["a a a"], 1, Smoothing::Unsmoothed);
        assert!((m.conditional::<&str>(&[], "a") - 0.75f64.log10()).abs() < 1e-12);
        assert!((m.conditional::<&str>(&[], "</s>") - 0.25f64.log10()).abs() < 1e-12);
        assert_eq!(m.conditional::<&str>(&[], "<unk>"), f64::NEG_INFINITY);
        assert_eq!(m.conditional::<&str>(&[], "zzz"), f64::NEG_INFINITY);
        assert_normalized(&m);
    }

    #[test]
    fn mle_unseen_event_under_seen_context() {
        let m = model(&["a b", "b a"], 2, Smoothing::Unsmoothed);
        assert_eq!(m.conditional(&["a"], "a"), f64::NEG_INFINITY);
        assert!((m.conditional(&["a"], "b") - 0.5f64.log10()).abs() < 1e-12);
        assert_normalized(&m);
    }

    #[test]
    fn kneser_ney_never_negative_infinity() {
        let m = model(&["a b a c a b"], 3, Smoothing::KneserNey);
        for ctx in m.contexts() {
            for w in m.predicted_ids() {
                assert!(m.log10_prob(&ctx, w).is_finite());
            }
        }
        assert!(m.conditional(&["c", "c"], "zzz").is_finite());
        assert_normalized(&m);
    }

    #[test]
    fn kneser_ney_unigram_by_hand() {
        // counts a:3, </s>:1 -> D = 0.75 (no n2), V = {<unk>, </s>, a}
        let m = model(&["a a a"], 1, Smoothing::KneserNey);
        let p = |t: &str| 10f64.powf(m.conditional::<&str>(&[], t));
        assert!((p("a") - (2.25 / 4.0 + 0.75 * 2.0 / 4.0 / 3.0)).abs() < 1e-12);
        assert!((p("</s>") - (0.25 / 4.0 + 0.125)).abs() < 1e-12);
        assert!((p("<unk>") - 0.125).abs() < 1e-12);
    }

    #[test]
    fn witten_bell_normalized_and_finite() {
        for order in 1..=6 {
            let m = model(&["a b c a", "b b c", "c a"], order, Smoothing::WittenBell);
            assert_normalized(&m);
            assert!(m.conditional(&["a", "a"], "c").is_finite());
        }
    }

    #[test]
    fn witten_bell_bigram_by_hand() {
        // Bigrams under context a: (a,b) twice, (a,</s>) once -> c(a)=3, T(a)=2.
        let m = model(&["a b", "a b a"], 2, Smoothing::WittenBell);
        let lower = 10f64.powf(m.conditional::<&str>(&[], "b"));
        let want = (2.0 + 2.0 * lower) / (3.0 + 2.0);
        assert!((10f64.powf(m.conditional(&["a"], "b")) - want).abs() < 1e-12);
        let bow = m.lookup(&["a"]).unwrap().log10_backoff;
        assert!((bow - (2.0f64 / 5.0).log10()).abs() < 1e-12);
    }

    #[test]
    fn order_six_estimable() {
        for s in [Smoothing::KneserNey, Smoothing::WittenBell, Smoothing::Unsmoothed] {
            let m = model(&["a b c d e f g", "g f e d c b a"], 6, s);
            assert_eq!(m.order(), 6);
            assert!(m.ngram_count(6) > 0);
            assert_normalized(&m);
        }
    }

    #[test]
    fn top_order_has_no_backoff() {
        let m = model(&["a b a c"], 3, Smoothing::KneserNey);
        for (_, e) in m.entries(3) {
            assert_eq!(e.log10_backoff, 0.0);
        }
    }

    #[test]
    fn contexts_are_stored() {
        let m = model(&["a b a c", "c c"], 4, Smoothing::KneserNey);
        for k in 2..=4 {
            for (ids, _) in m.entries(k) {
                let ctx: Vec<&str> = ids[..k - 1].iter().map(|&i| m.vocab().token(i)).collect();
                assert!(m.lookup(&ctx).is_some(), "{ctx:?}");
            }
        }
    }

    #[test]
    fn duplicated_corpus_keeps_mle() {
        let lines = ["a b c", "b c", "c a b"];
        let doubled: Vec<&str> = lines.iter().chain(lines.iter()).copied().collect();
        let m1 = model(&lines, 3, Smoothing::Unsmoothed);
        let m2 = model(&doubled, 3, Smoothing::Unsmoothed);
        for ctx in m1.contexts() {
            for w in m1.predicted_ids() {
                let (a, b) = (m1.log10_prob(&ctx, w), m2.log10_prob(&ctx, w));
                assert!(a == b || (a - b).abs() < 1e-12, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn perplexity_cases() {
        let m = model(&["a b"], 1, Smoothing::Unsmoothed);
        let ppl = m.perplexity(&seqs(&["a b", "b a"])).unwrap();
        assert!((ppl - 3.0).abs() < 1e-9);
        assert!(matches!(
            m.perplexity::<String>(&[]),
            Err(LmError::EmptyCorpus)
        ));

        let train = seqs(&["a b a c a b", "c b a"]);
        let mle = model(&["a b a c a b", "c b a"], 3, Smoothing::Unsmoothed);
        let kn = model(&["a b a c a b", "c b a"], 3, Smoothing::KneserNey);
        assert!(mle.perplexity(&train).unwrap() <= kn.perplexity(&train).unwrap());
    }

    #[test]
    fn empty_sequence_scores_end_sentinel() {
        let m = model(&["a b", "a"], 2, Smoothing::KneserNey);
        let want = m.conditional(&["<s>"], "</s>");
        assert_eq!(m.score_sequence::<&str>(&[]), want);
    }

    #[test]
    fn backoff_consistency_with_truncated_model() {
        let m = model(&["a b a c a b", "b c c a"], 3, Smoothing::KneserNey);
        let lower = m.without_top_order().unwrap();
        for ctx in m.contexts().into_iter().filter(|c| c.len() == 2) {
            for w in m.predicted_ids() {
                let mut key = ctx.clone();
                key.push(w);
                let tokens: Vec<&str> = key.iter().map(|&i| m.vocab().token(i)).collect();
                if m.lookup(&tokens).is_some() {
                    continue;
                }
                let ctx_tokens: Vec<&str> = tokens[..2].to_vec();
                let bow = m.lookup(&ctx_tokens).map_or(0.0, |e| e.log10_backoff);
                let want = bow + lower.log10_prob(&ctx[1..], w);
                assert!((m.log10_prob(&ctx, w) - want).abs() < 1e-12);
            }
        }
    }
}
