use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub fn cosine_similarity(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::Shape(format!("vectors of length {} and {}", u.len(), v.len())));
    }
    let (nu, nv) = (norm(u), norm(v));
    if nu == 0.0 || nv == 0.0 {
        return Err(Error::ZeroVector);
    }
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    Ok((dot / (nu * nv)).clamp(-1.0, 1.0))
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Maps text to a fixed-width vector.
pub trait Embedder: Send + Sync {
    fn dim(&self) -> usize;
    fn embed(&self, text: &str) -> Result<Vec<f64>>;
}

pub const FALLBACK_DIM: usize = 256;

/// L2-normalized bag of hashed whitespace tokens.
#[derive(Clone, Copy, Debug, Default)]
pub struct HashEmbedder;

impl Embedder for HashEmbedder {
    fn dim(&self) -> usize {
        FALLBACK_DIM
    }

    fn embed(&self, text: &str) -> Result<Vec<f64>> {
        fallback_embed(text)
    }
}

fn fnv1a(token: &str) -> u64 {
    token.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01b3))
}

pub fn token_bucket(token: &str) -> usize {
    (fnv1a(token) % FALLBACK_DIM as u64) as usize
}

pub fn fallback_embed(text: &str) -> Result<Vec<f64>> {
    let mut v = vec![0.0; FALLBACK_DIM];
    for tok in text.split_whitespace() {
        v[token_bucket(tok)] += 1.0;
    }
    let n = norm(&v);
    if n == 0.0 {
        return Err(Error::ZeroVector);
    }
    v.iter_mut().for_each(|x| *x /= n);
    Ok(v)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankedComparison {
    pub feedback: String,
    /// Similarity to each comment, in relevance order. Comments that cannot
    /// be embedded get `-inf`.
    pub similarities: Vec<f64>,
    /// 1-based relevance rank of the most similar comment.
    pub rank_j: usize,
}

/// `comments` must be in relevance order. Equal similarities resolve to the
/// better (smaller) relevance rank. A feedback that cannot be embedded has
/// no most-similar comment and is assigned the worst rank, `m`.
pub fn rank_feedback(feedback: &str, comments: &[&str], embedder: &dyn Embedder) -> Result<RankedComparison> {
    if comments.is_empty() {
        return Err(Error::InvalidArgument("no comments to rank against".into()));
    }
    let Ok(f) = embedder.embed(feedback) else {
        return Ok(RankedComparison {
            feedback: feedback.to_string(),
            similarities: vec![f64::NEG_INFINITY; comments.len()],
            rank_j: comments.len(),
        });
    };
    let similarities: Vec<f64> = comments
        .iter()
        .map(|c| embedder.embed(c).and_then(|e| cosine_similarity(&f, &e)).unwrap_or(f64::NEG_INFINITY))
        .collect();
    let mut best = 0;
    for (i, &s) in similarities.iter().enumerate() {
        if s > similarities[best] {
            best = i;
        }
    }
    Ok(RankedComparison { feedback: feedback.to_string(), similarities, rank_j: best + 1 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn cosine_fixtures() {
        assert!((cosine_similarity(&[1.0, 2.0], &[2.0, 4.0]).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(cosine_similarity(&[1.0, 0.0], &[0.0, 3.0]).unwrap(), 0.0);
        assert!((cosine_similarity(&[1.0, 1.0], &[1.0, 0.0]).unwrap() - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);
        assert!(matches!(cosine_similarity(&[0.0, 0.0], &[1.0, 0.0]), Err(Error::ZeroVector)));
        assert!(cosine_similarity(&[1.0], &[1.0, 0.0]).is_err());
    }

    proptest! {
        #[test]
        fn cosine_scale_invariant(u in prop::collection::vec(-5.0f64..5.0, 4), v in prop::collection::vec(-5.0f64..5.0, 4), a in 0.01f64..100.0) {
            prop_assume!(norm(&u) > 1e-6 && norm(&v) > 1e-6);
            let scaled: Vec<f64> = u.iter().map(|x| a * x).collect();
            prop_assert!((cosine_similarity(&scaled, &v).unwrap() - cosine_similarity(&u, &v).unwrap()).abs() < 1e-12);
        }
    }

    #[test]
    fn fallback_embedding_basics() {
        let a = fallback_embed("river flood rescue").unwrap();
        assert_eq!(a, fallback_embed("river flood rescue").unwrap());
        assert_eq!(a.len(), FALLBACK_DIM);
        assert!((cosine_similarity(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        assert!(matches!(fallback_embed("   "), Err(Error::ZeroVector)));
    }

    #[test]
    fn disjoint_texts_are_orthogonal() {
        let (x, y) = ("great stadium", "awful weather");
        let bx: Vec<usize> = x.split(' ').map(token_bucket).collect();
        let by: Vec<usize> = y.split(' ').map(token_bucket).collect();
        assert!(bx.iter().all(|b| !by.contains(b)), "pair collides: {bx:?} {by:?}");
        let c = cosine_similarity(&fallback_embed(x).unwrap(), &fallback_embed(y).unwrap()).unwrap();
        assert_eq!(c, 0.0);
    }

    #[test]
    fn exact_match_dominates() {
        let comments = ["lovely day", "awful news today", "what a great match", "sad story"];
        let r = rank_feedback("what a great match", &comments, &HashEmbedder).unwrap();
        assert_eq!(r.rank_j, 3);
        assert_eq!(rank_feedback("anything", &["only one"], &HashEmbedder).unwrap().rank_j, 1);
        assert!(rank_feedback("x", &[], &HashEmbedder).is_err());
    }

    #[test]
    fn ties_go_to_better_rank() {
        let r = rank_feedback("same words", &["other", "same words", "same words"], &HashEmbedder).unwrap();
        assert_eq!(r.rank_j, 2);
    }

    #[test]
    fn unembeddable_feedback_gets_worst_rank() {
        assert_eq!(rank_feedback("", &["a", "b", "c"], &HashEmbedder).unwrap().rank_j, 3);
    }

    #[test]
    fn matches_exhaustive_scan() {
        let words = ["rain", "goal", "vote", "cake", "band", "tax", "happy", "sad"];
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..100 {
            let text = |rng: &mut ChaCha8Rng| {
                (0..rng.gen_range(1..4)).map(|_| words[rng.gen_range(0..words.len())]).collect::<Vec<_>>().join(" ")
            };
            let feedback = text(&mut rng);
            let comments: Vec<String> = (0..rng.gen_range(1..7)).map(|_| text(&mut rng)).collect();
            let refs: Vec<&str> = comments.iter().map(String::as_str).collect();
            let got = rank_feedback(&feedback, &refs, &HashEmbedder).unwrap().rank_j;
            // brute force: first index whose similarity no other exceeds
            let f = fallback_embed(&feedback).unwrap();
            let sims: Vec<f64> = comments
                .iter()
                .map(|c| {
                    let e = fallback_embed(c).unwrap();
                    f.iter().zip(&e).map(|(a, b)| a * b).sum::<f64>()
                })
                .collect();
            let want = (0..sims.len()).find(|&i| sims.iter().all(|&s| s <= sims[i] + 1e-12)).unwrap() + 1;
            assert_eq!(got, want);
        }
    }
}
