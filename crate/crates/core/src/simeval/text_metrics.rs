//! Reference-based text metrics over token sequences. Tokens can be any
//! ordered type, so words and vocabulary ids score identically.

use std::collections::{BTreeMap, BTreeSet};

use crate::error::{Error, Result};

pub const BLEU_MAX_N: usize = 4;
/// Numerator used in place of a zero n-gram match count above unigrams.
pub const BLEU_EPSILON: f64 = 1e-9;
pub const ROUGE_BETA: f64 = 1.2;
pub const CIDER_MAX_N: usize = 4;

fn ngrams<T: Ord + Clone>(tokens: &[T], n: usize) -> BTreeMap<Vec<T>, usize> {
    let mut out = BTreeMap::new();
    if n > 0 && tokens.len() >= n {
        for w in tokens.windows(n) {
            *out.entry(w.to_vec()).or_insert(0) += 1;
        }
    }
    out
}

/// Sentence BLEU with clipped precisions. Orders above the candidate length
/// have no n-grams and are left out, with the remaining orders weighted
/// equally. No unigram match scores exactly 0; a zero match count at a
/// higher order uses [`BLEU_EPSILON`] as its numerator. The brevity penalty
/// uses the reference length closest to the candidate's (shorter on ties).
pub fn bleu<T: Ord + Clone>(candidate: &[T], references: &[Vec<T>], max_n: usize) -> f64 {
    if candidate.is_empty() || references.is_empty() || max_n == 0 {
        return 0.0;
    }
    let orders = max_n.min(candidate.len());
    let mut log_sum = 0.0;
    for n in 1..=orders {
        let cand = ngrams(candidate, n);
        let mut max_ref: BTreeMap<&Vec<T>, usize> = BTreeMap::new();
        for r in references {
            for (g, c) in ngrams(r, n) {
                if let Some((key, _)) = cand.get_key_value(&g) {
                    let slot = max_ref.entry(key).or_insert(0);
                    *slot = (*slot).max(c);
                }
            }
        }
        let matched: usize = cand.iter().map(|(g, &c)| c.min(max_ref.get(g).copied().unwrap_or(0))).sum();
        let total: usize = cand.values().sum();
        if matched == 0 && n == 1 {
            return 0.0;
        }
        let numerator = if matched == 0 { BLEU_EPSILON } else { matched as f64 };
        log_sum += (numerator / total as f64).ln();
    }
    let c = candidate.len();
    let r = references.iter().map(Vec::len).min_by_key(|&len| (len.abs_diff(c), len)).expect("references is non-empty");
    let bp = if c > r { 1.0 } else { (1.0 - r as f64 / c as f64).exp() };
    bp * (log_sum / orders as f64).exp()
}

pub fn lcs_len<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { cur[j].max(prev[j + 1]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// LCS F-measure, `(1 + b^2) R P / (R + b^2 P)` with `b = 1.2`.
pub fn rouge_l<T: PartialEq>(candidate: &[T], reference: &[T]) -> f64 {
    if candidate.is_empty() || reference.is_empty() {
        return 0.0;
    }
    let lcs = lcs_len(candidate, reference) as f64;
    if lcs == 0.0 {
        return 0.0;
    }
    let (r, p) = (lcs / reference.len() as f64, lcs / candidate.len() as f64);
    let b2 = ROUGE_BETA * ROUGE_BETA;
    (1.0 + b2) * r * p / (r + b2 * p)
}

/// Document frequencies of n-grams (orders 1..=4) over a reference corpus.
/// Each document is the reference set of one item.
#[derive(Clone, Debug, PartialEq)]
pub struct CorpusStats<T: Ord> {
    pub n_docs: usize,
    pub df: BTreeMap<Vec<T>, usize>,
}

impl<T: Ord + Clone> CorpusStats<T> {
    pub fn from_documents(docs: &[Vec<Vec<T>>]) -> Self {
        let mut df = BTreeMap::new();
        for doc in docs {
            let mut seen = BTreeSet::new();
            for r in doc {
                for n in 1..=CIDER_MAX_N {
                    seen.extend(ngrams(r, n).into_keys());
                }
            }
            for g in seen {
                *df.entry(g).or_insert(0) += 1;
            }
        }
        Self { n_docs: docs.len(), df }
    }

    /// `ln(N / max(1, df))`.
    pub fn idf(&self, gram: &[T]) -> f64 {
        let df = self.df.get(gram).copied().unwrap_or(0).max(1);
        (self.n_docs as f64 / df as f64).ln()
    }
}

fn tfidf<T: Ord + Clone>(tokens: &[T], n: usize, stats: &CorpusStats<T>) -> BTreeMap<Vec<T>, f64> {
    ngrams(tokens, n).into_iter().map(|(g, c)| (g.clone(), c as f64 * stats.idf(&g))).collect()
}

fn sparse_cosine<T: Ord>(a: &BTreeMap<Vec<T>, f64>, b: &BTreeMap<Vec<T>, f64>) -> f64 {
    let na = a.values().map(|v| v * v).sum::<f64>().sqrt();
    let nb = b.values().map(|v| v * v).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    a.iter().filter_map(|(g, v)| b.get(g).map(|w| v * w)).sum::<f64>() / (na * nb)
}

/// Mean over orders 1..=4 of the average tf-idf cosine between the
/// candidate and each reference. A zero vector contributes cosine 0.
pub fn cider<T: Ord + Clone>(candidate: &[T], references: &[Vec<T>], stats: &CorpusStats<T>) -> Result<f64> {
    if stats.n_docs == 0 {
        return Err(Error::InvalidArgument("CIDEr needs corpus statistics from at least one document".into()));
    }
    if references.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for n in 1..=CIDER_MAX_N {
        let c = tfidf(candidate, n, stats);
        let sum: f64 = references.iter().map(|r| sparse_cosine(&c, &tfidf(r, n, stats))).sum();
        total += sum / references.len() as f64;
    }
    Ok(total / CIDER_MAX_N as f64)
}
