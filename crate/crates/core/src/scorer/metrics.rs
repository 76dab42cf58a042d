//! Metric primitives used by the scoring rules.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use crate::domain::Triplet;

/// |P ∩ T| / |P ∪ T|. Two empty sets agree perfectly.
pub fn set_iou<T: Ord>(pred: &BTreeSet<T>, truth: &BTreeSet<T>) -> f64 {
    let union = pred.union(truth).count();
    if union == 0 {
        return 1.0;
    }
    pred.intersection(truth).count() as f64 / union as f64
}

/// Edit distance over token sequences (unit insert/delete/substitute).
pub fn levenshtein<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, x) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, y) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(x != y);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// `1 - lev(a, b) / max(|a|, |b|)`, 1.0 for two empty sequences.
pub fn levenshtein_similarity<T: PartialEq>(a: &[T], b: &[T]) -> f64 {
    let longest = a.len().max(b.len());
    if longest == 0 {
        return 1.0;
    }
    1.0 - levenshtein(a, b) as f64 / longest as f64
}

/// Lowercase whitespace tokens.
pub fn tokenize(s: &str) -> Vec<String> {
    s.split_whitespace().map(str::to_lowercase).collect()
}

/// BLEU-1: clipped unigram precision times brevity penalty.
pub fn bleu1(pred: &str, truth: &str) -> f64 {
    let p = tokenize(pred);
    let t = tokenize(truth);
    if p.is_empty() {
        return if t.is_empty() { 1.0 } else { 0.0 };
    }
    let mut ref_counts: HashMap<&str, usize> = HashMap::new();
    for tok in &t {
        *ref_counts.entry(tok.as_str()).or_default() += 1;
    }
    let mut hyp_counts: HashMap<&str, usize> = HashMap::new();
    for tok in &p {
        *hyp_counts.entry(tok.as_str()).or_default() += 1;
    }
    let clipped: usize = hyp_counts
        .iter()
        .map(|(tok, n)| (*n).min(ref_counts.get(tok).copied().unwrap_or(0)))
        .sum();
    let precision = clipped as f64 / p.len() as f64;
    let bp = if p.len() < t.len() {
        (1.0 - t.len() as f64 / p.len() as f64).exp()
    } else {
        1.0
    };
    precision * bp
}

/// Macro F1 with predicate classes as the macro axis: per-predicate F1 over
/// triplet sets, averaged over predicates present in either side.
pub fn macro_f1_by_predicate(pred: &BTreeSet<Triplet>, truth: &BTreeSet<Triplet>) -> f64 {
    let mut classes: BTreeMap<&str, (usize, usize, usize)> = BTreeMap::new(); // (tp, |P|, |T|)
    for t in pred {
        let c = classes.entry(t.predicate.as_str()).or_default();
        c.1 += 1;
        if truth.contains(t) {
            c.0 += 1;
        }
    }
    for t in truth {
        classes.entry(t.predicate.as_str()).or_default().2 += 1;
    }
    if classes.is_empty() {
        return 1.0;
    }
    let total: f64 = classes
        .values()
        .map(|&(tp, np, nt)| if tp == 0 { 0.0 } else { 2.0 * tp as f64 / (np + nt) as f64 })
        .sum();
    total / classes.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Plain recursive edit distance, exponential but obviously correct.
    fn lev_oracle(a: &[&str], b: &[&str]) -> usize {
        match (a.split_first(), b.split_first()) {
            (None, _) => b.len(),
            (_, None) => a.len(),
            (Some((x, ra)), Some((y, rb))) => {
                let sub = lev_oracle(ra, rb) + usize::from(x != y);
                sub.min(lev_oracle(ra, b) + 1).min(lev_oracle(a, rb) + 1)
            }
        }
    }

    #[test]
    fn levenshtein_matches_recursive_oracle() {
        let alphabet = ["a", "b", "c"];
        let mut seqs: Vec<Vec<&str>> = vec![vec![]];
        for len in 1..=4 {
            let mut idx = vec![0usize; len];
            loop {
                seqs.push(idx.iter().map(|&i| alphabet[i]).collect());
                let mut k = 0;
                while k < len {
                    idx[k] += 1;
                    if idx[k] < alphabet.len() {
                        break;
                    }
                    idx[k] = 0;
                    k += 1;
                }
                if k == len {
                    break;
                }
            }
        }
        for a in seqs.iter().step_by(3) {
            for b in seqs.iter().step_by(5) {
                assert_eq!(levenshtein(a, b), lev_oracle(a, b), "{a:?} vs {b:?}");
            }
        }
    }

    #[test]
    fn similarity_example() {
        let s = levenshtein_similarity(&["a", "b", "c"], &["a", "c"]);
        assert!((s - (1.0 - 1.0 / 3.0)).abs() < 1e-12);
        assert_eq!(levenshtein_similarity::<&str>(&[], &[]), 1.0);
        assert_eq!(levenshtein_similarity(&["a"], &[]), 0.0);
    }

    #[test]
    fn bleu1_cases() {
        assert_eq!(bleu1("HR 72 BP 120/80", "hr 72 bp 120/80"), 1.0);
        // clipped: "the the the" vs "the cat": 1/3 precision, no penalty
        assert!((bleu1("the the the", "the cat") - 1.0 / 3.0).abs() < 1e-12);
        // short hypothesis: precision 1, bp = exp(1 - 4/2)
        assert!((bleu1("hr 72", "hr 72 bp 90") - (-1.0f64).exp()).abs() < 1e-12);
        assert_eq!(bleu1("", "hr"), 0.0);
        assert_eq!(bleu1("", ""), 1.0);
    }

    #[test]
    fn iou_sets() {
        let p: BTreeSet<_> = ["drill"].into();
        let t: BTreeSet<_> = ["drill", "saw"].into();
        assert_eq!(set_iou(&p, &t), 0.5);
        assert_eq!(set_iou(&t, &p), 0.5);
        assert_eq!(set_iou::<&str>(&BTreeSet::new(), &BTreeSet::new()), 1.0);
    }
}
