//! Ground-truth comment labels from a four-scorer ensemble with 3-of-4
//! majority voting and a `(0.49, 0.51)` safety margin on the mean score.

use std::collections::HashSet;
use std::fmt;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Label, Sentiment};
use crate::error::{Error, Result};

const LEXICON: &str = include_str!("../assets/sentiment_lexicon_en.txt");

pub const MARGIN_LOW: f64 = 0.49;
pub const MARGIN_HIGH: f64 = 0.51;
/// Means within this distance of a margin bound count as on the bound, which
/// is outside the open interval.
const BOUNDARY_TOLERANCE: f64 = 1e-12;
pub const ENSEMBLE_SIZE: usize = 4;
const MAJORITY: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScorerVerdict {
    /// `-1` or `+1`.
    pub polarity: i8,
    pub confidence: f64,
}

impl ScorerVerdict {
    pub fn new(polarity: i8, confidence: f64) -> Result<Self> {
        let v = Self { polarity, confidence };
        v.validate()?;
        Ok(v)
    }

    fn validate(&self) -> Result<()> {
        if self.polarity != 1 && self.polarity != -1 {
            return Err(Error::InvalidArgument(format!("polarity {} is not -1 or +1", self.polarity)));
        }
        if !(0.0..=1.0).contains(&self.confidence) {
            return Err(Error::InvalidArgument(format!("confidence {} outside [0, 1]", self.confidence)));
        }
        Ok(())
    }
}

/// `(polarity * confidence + 1) / 2`: 0 is fully negative, 1 fully positive.
pub fn normalize_sentiment_score(v: &ScorerVerdict) -> Result<f64> {
    v.validate()?;
    Ok((f64::from(v.polarity) * v.confidence + 1.0) / 2.0)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ExclusionReason {
    NoMajority,
    SafetyMargin,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnsembleResult {
    pub per_scorer: [ScorerVerdict; ENSEMBLE_SIZE],
    pub normalized_scores: [f64; ENSEMBLE_SIZE],
    /// Mean of all four normalized scores.
    pub mean_score: f64,
    pub label: Label,
    pub exclusion: Option<ExclusionReason>,
}

pub fn in_safety_margin(mean: f64) -> bool {
    mean > MARGIN_LOW + BOUNDARY_TOLERANCE && mean < MARGIN_HIGH - BOUNDARY_TOLERANCE
}

pub fn ensemble_label(verdicts: &[ScorerVerdict; ENSEMBLE_SIZE]) -> Result<EnsembleResult> {
    let mut normalized_scores = [0.0; ENSEMBLE_SIZE];
    for (n, v) in normalized_scores.iter_mut().zip(verdicts) {
        *n = normalize_sentiment_score(v)?;
    }
    let mean_score = normalized_scores.iter().sum::<f64>() / ENSEMBLE_SIZE as f64;
    let positives = verdicts.iter().filter(|v| v.polarity == 1).count();
    let majority = if positives >= MAJORITY {
        Some(Sentiment::Positive)
    } else if ENSEMBLE_SIZE - positives >= MAJORITY {
        Some(Sentiment::Negative)
    } else {
        None
    };
    let (label, exclusion) = match majority {
        None => (Label::Excluded, Some(ExclusionReason::NoMajority)),
        Some(_) if in_safety_margin(mean_score) => (Label::Excluded, Some(ExclusionReason::SafetyMargin)),
        Some(s) => (Label::Known(s), None),
    };
    Ok(EnsembleResult { per_scorer: *verdicts, normalized_scores, mean_score, label, exclusion })
}

/// Plug-in contract for a sentiment model: UTF-8 text in, verdict out.
pub trait SentimentScorer: Send + Sync {
    fn name(&self) -> &str;
    fn score(&self, text: &str) -> Result<ScorerVerdict>;
}

/// Positive and negative words known to one fallback scorer.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LexiconVariant {
    pub positive: Vec<&'static str>,
    pub negative: Vec<&'static str>,
}

/// The bundled lexicon split round-robin (within each polarity) into four
/// disjoint variants.
pub fn lexicon_variants() -> &'static [LexiconVariant; ENSEMBLE_SIZE] {
    static VARIANTS: OnceLock<[LexiconVariant; ENSEMBLE_SIZE]> = OnceLock::new();
    VARIANTS.get_or_init(|| {
        let mut variants: [LexiconVariant; ENSEMBLE_SIZE] =
            std::array::from_fn(|_| LexiconVariant { positive: Vec::new(), negative: Vec::new() });
        let (mut pos_i, mut neg_i) = (0, 0);
        for line in LEXICON.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')) {
            let Some((word, polarity)) = line.split_once('\t') else { continue };
            if polarity.trim() == "1" {
                variants[pos_i % ENSEMBLE_SIZE].positive.push(word);
                pos_i += 1;
            } else {
                variants[neg_i % ENSEMBLE_SIZE].negative.push(word);
                neg_i += 1;
            }
        }
        variants
    })
}

pub fn all_positive_words() -> HashSet<&'static str> {
    lexicon_variants().iter().flat_map(|v| v.positive.iter().copied()).collect()
}

pub fn all_negative_words() -> HashSet<&'static str> {
    lexicon_variants().iter().flat_map(|v| v.negative.iter().copied()).collect()
}

/// Deterministic word-count scorer standing in for a pretrained model.
#[derive(Clone, Debug)]
pub struct LexiconScorer {
    name: String,
    positive: HashSet<String>,
    negative: HashSet<String>,
}

impl LexiconScorer {
    pub fn new<P, N>(name: impl Into<String>, positive: P, negative: N) -> Self
    where
        P: IntoIterator,
        P::Item: Into<String>,
        N: IntoIterator,
        N::Item: Into<String>,
    {
        Self {
            name: name.into(),
            positive: positive.into_iter().map(Into::into).collect(),
            negative: negative.into_iter().map(Into::into).collect(),
        }
    }
}

impl SentimentScorer for LexiconScorer {
    fn name(&self) -> &str {
        &self.name
    }

    fn score(&self, text: &str) -> Result<ScorerVerdict> {
        let tokens: Vec<&str> = text.split_whitespace().collect();
        let pos = tokens.iter().filter(|t| self.positive.contains(**t)).count() as f64;
        let neg = tokens.iter().filter(|t| self.negative.contains(**t)).count() as f64;
        let diff = pos - neg;
        let polarity = if diff < 0.0 { -1 } else { 1 };
        let confidence = (diff.abs() / (tokens.len() as f64).max(1.0)).clamp(0.0, 1.0);
        Ok(ScorerVerdict { polarity, confidence })
    }
}

/// Four scorers that each label comments (or generated feedback).
pub struct Ensemble {
    scorers: Vec<Box<dyn SentimentScorer>>,
}

impl Ensemble {
    pub fn new(scorers: Vec<Box<dyn SentimentScorer>>) -> Result<Self> {
        if scorers.len() != ENSEMBLE_SIZE {
            return Err(Error::InvalidArgument(format!(
                "ensemble needs {ENSEMBLE_SIZE} scorers, got {}",
                scorers.len()
            )));
        }
        Ok(Self { scorers })
    }

    /// The four lexicon fallback scorers, one per disjoint variant.
    pub fn fallback() -> Self {
        let scorers = lexicon_variants()
            .iter()
            .enumerate()
            .map(|(i, v)| {
                Box::new(LexiconScorer::new(format!("lexicon-{i}"), v.positive.clone(), v.negative.clone()))
                    as Box<dyn SentimentScorer>
            })
            .collect();
        Self { scorers }
    }

    pub fn scorer_names(&self) -> Vec<&str> {
        self.scorers.iter().map(|s| s.name()).collect()
    }

    pub fn classify(&self, text: &str) -> Result<EnsembleResult> {
        let mut verdicts = [ScorerVerdict { polarity: 1, confidence: 0.0 }; ENSEMBLE_SIZE];
        for (v, s) in verdicts.iter_mut().zip(&self.scorers) {
            *v = s.score(text)?;
        }
        ensemble_label(&verdicts)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetentionReport {
    pub total: usize,
    pub retained: usize,
    pub xx_majority: usize,
    pub xx_margin: usize,
}

impl RetentionReport {
    pub fn retention(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.retained as f64 / self.total as f64
        }
    }

    pub fn to_csv(&self) -> String {
        format!(
            "total,retained,xx_majority,xx_margin\n{},{},{},{}\n",
            self.total, self.retained, self.xx_majority, self.xx_margin
        )
    }
}

impl fmt::Display for RetentionReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "comments      {}", self.total)?;
        writeln!(f, "retained      {} ({:.2}%)", self.retained, 100.0 * self.retention())?;
        writeln!(f, "XX (majority) {}", self.xx_majority)?;
        write!(f, "XX (margin)   {}", self.xx_margin)
    }
}

/// Relabels every comment with the ensemble verdict.
pub fn annotate_corpus(corpus: &Corpus, ensemble: &Ensemble) -> Result<(Corpus, RetentionReport)> {
    let mut out = corpus.clone();
    let mut report = RetentionReport::default();
    for post in &mut out.posts {
        for c in &mut post.comments {
            let result = ensemble.classify(&c.text)?;
            report.total += 1;
            match result.exclusion {
                None => report.retained += 1,
                Some(ExclusionReason::NoMajority) => report.xx_majority += 1,
                Some(ExclusionReason::SafetyMargin) => report.xx_margin += 1,
            }
            c.sentiment = result.label;
        }
    }
    Ok((out, report))
}
