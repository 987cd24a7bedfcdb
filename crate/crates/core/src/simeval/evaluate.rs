use std::collections::BTreeMap;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::ranking::{mean_reciprocal_rank, recall_at_k};
use super::similarity::{rank_feedback, Embedder};
use super::text_metrics::{bleu, cider, rouge_l, CorpusStats, BLEU_MAX_N};
use crate::annotate::Ensemble;
use crate::corpus::{Corpus, Label, Sample, Sentiment};
use crate::encoders::ModelState;
use crate::error::{Error, Result};
use crate::genctrl::{beam_search_generate, BeamOptions};

pub const RECALL_KS: [usize; 4] = [1, 3, 5, 10];

/// Labels generated text. Errors mark a sample the classifier could not
/// handle.
pub trait SentimentClassifier: Sync {
    fn label(&self, text: &str) -> Result<Label>;
}

impl SentimentClassifier for Ensemble {
    fn label(&self, text: &str) -> Result<Label> {
        Ok(self.classify(text)?.label)
    }
}

/// Top beams for one sample: without control, and under the sample's own
/// ground-truth sentiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeedbackPair {
    pub post_id: String,
    pub comment_rank: u32,
    pub sentiment: Sentiment,
    pub uncontrolled: String,
    pub controlled: String,
}

/// Uncontrolled generation depends only on the post, so it runs once per
/// post. Work is spread over samples; output order follows `samples`.
pub fn generate_feedback(state: &ModelState, samples: &[Sample], beam: &BeamOptions) -> Result<Vec<FeedbackPair>> {
    if !state.is_trained() {
        return Err(Error::Untrained);
    }
    let top = |s: &Sample, sentiment: Option<Sentiment>| -> Result<String> {
        let beams = beam_search_generate(state, &s.text_tokens, &s.images[..], sentiment, beam)?;
        Ok(beams.first().map(|b| state.vocabulary.detokenize(b.words())).unwrap_or_default())
    };
    let mut first_of_post: BTreeMap<&str, usize> = BTreeMap::new();
    for (i, s) in samples.iter().enumerate() {
        first_of_post.entry(&s.post_id).or_insert(i);
    }
    let posts: Vec<(&str, usize)> = first_of_post.into_iter().collect();
    let free: Vec<String> = posts.par_iter().map(|&(_, i)| top(&samples[i], None)).collect::<Result<_>>()?;
    let free: BTreeMap<&str, &String> = posts.iter().map(|p| p.0).zip(&free).collect();
    samples
        .par_iter()
        .map(|s| {
            Ok(FeedbackPair {
                post_id: s.post_id.clone(),
                comment_rank: s.comment_rank,
                sentiment: s.sentiment,
                uncontrolled: free[s.post_id.as_str()].clone(),
                controlled: top(s, Some(s.sentiment))?,
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ControlAccuracy {
    /// Percent of uncontrolled generations whose label matches the ground
    /// truth.
    pub usent_acc: f64,
    /// Same for generations controlled to the ground-truth sentiment.
    pub csent_acc: f64,
    /// `csent_acc - usent_acc`, in percentage points.
    pub control_acc: f64,
    pub evaluated: usize,
    /// Samples dropped because the classifier failed on either generation.
    pub skipped: usize,
    pub labels: Vec<Option<(Label, Label)>>,
}

/// An `XX` label on a generation counts as a miss.
pub fn score_control(pairs: &[FeedbackPair], classifier: &dyn SentimentClassifier) -> ControlAccuracy {
    let (mut u_hits, mut c_hits, mut n, mut skipped) = (0usize, 0usize, 0usize, 0usize);
    let mut labels = Vec::with_capacity(pairs.len());
    for p in pairs {
        match (classifier.label(&p.uncontrolled), classifier.label(&p.controlled)) {
            (Ok(u), Ok(c)) => {
                n += 1;
                u_hits += usize::from(u == Label::Known(p.sentiment));
                c_hits += usize::from(c == Label::Known(p.sentiment));
                labels.push(Some((u, c)));
            }
            _ => {
                skipped += 1;
                labels.push(None);
            }
        }
    }
    let pct = |hits: usize| if n == 0 { 0.0 } else { 100.0 * hits as f64 / n as f64 };
    let (usent_acc, csent_acc) = (pct(u_hits), pct(c_hits));
    ControlAccuracy { usent_acc, csent_acc, control_acc: csent_acc - usent_acc, evaluated: n, skipped, labels }
}

pub fn control_accuracy(
    state: &ModelState,
    samples: &[Sample],
    classifier: &dyn SentimentClassifier,
    beam: &BeamOptions,
) -> Result<ControlAccuracy> {
    Ok(score_control(&generate_feedback(state, samples, beam)?, classifier))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub bleu: f64,
    pub rouge_l: f64,
    pub cider: f64,
    pub mrr: f64,
    /// `(k, recall@k)` for k in 1, 3, 5, 10.
    pub recall_at: Vec<(usize, f64)>,
    pub usent_acc: f64,
    pub csent_acc: f64,
    pub control_acc: f64,
    pub samples: usize,
    pub skipped: usize,
}

impl MetricReport {
    pub fn to_table(&self) -> String {
        let mut rows: Vec<(String, String)> = vec![
            ("BLEU".into(), format!("{:.4}", self.bleu)),
            ("ROUGE-L".into(), format!("{:.4}", self.rouge_l)),
            ("CIDEr".into(), format!("{:.4}", self.cider)),
            ("MRR".into(), format!("{:.4}", self.mrr)),
        ];
        for (k, r) in &self.recall_at {
            rows.push((format!("Recall@{k}"), format!("{r:.4}")));
        }
        rows.push(("Uncontrolled sentiment acc (%)".into(), format!("{:.2}", self.usent_acc)));
        rows.push(("Controlled sentiment acc (%)".into(), format!("{:.2}", self.csent_acc)));
        rows.push(("Control accuracy (points)".into(), format!("{:.2}", self.control_acc)));
        rows.push(("Samples".into(), self.samples.to_string()));
        rows.push(("Skipped".into(), self.skipped.to_string()));
        let width = rows.iter().map(|r| r.0.len()).max().unwrap_or(0);
        let mut out = String::new();
        let _ = writeln!(out, "{:<width$}  Value", "Metric");
        let _ = writeln!(out, "{}  -----", "-".repeat(width));
        for (name, value) in rows {
            let _ = writeln!(out, "{name:<width$}  {value}");
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub post_id: String,
    pub comment_rank: u32,
    pub sentiment: Sentiment,
    pub reference: String,
    pub uncontrolled: String,
    pub controlled: String,
    pub uncontrolled_label: Option<Label>,
    pub controlled_label: Option<Label>,
    pub rank_j: usize,
    pub bleu: f64,
    pub rouge_l: f64,
    pub cider: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub report: MetricReport,
    pub records: Vec<SampleRecord>,
}

/// Scores already generated feedback. The controlled generation is the
/// candidate for the reference metrics and for ranking against the post's
/// comments. `corpus` supplies comment texts and must be the preprocessed
/// corpus the samples were built from.
pub fn score_feedback(
    pairs: &[FeedbackPair],
    corpus: &Corpus,
    classifier: &dyn SentimentClassifier,
    embedder: &dyn Embedder,
) -> Result<Evaluation> {
    if pairs.is_empty() {
        return Err(Error::InvalidArgument("nothing to evaluate".into()));
    }
    let index: BTreeMap<&str, usize> = corpus.posts.iter().enumerate().map(|(i, p)| (p.post_id.as_str(), i)).collect();
    let mut refs = Vec::with_capacity(pairs.len());
    let mut comment_lists = Vec::with_capacity(pairs.len());
    for p in pairs {
        let post = index
            .get(p.post_id.as_str())
            .map(|&i| &corpus.posts[i])
            .ok_or_else(|| Error::InvalidArgument(format!("post `{}` not in corpus", p.post_id)))?;
        let ranked = post.ranked_comments();
        let reference = ranked.iter().find(|c| c.relevance_rank == p.comment_rank).ok_or_else(|| {
            Error::InvalidArgument(format!("post `{}` has no comment of rank {}", p.post_id, p.comment_rank))
        })?;
        refs.push(reference.text.as_str());
        comment_lists.push(ranked.iter().map(|c| c.text.as_str()).collect::<Vec<_>>());
    }
    let words = |s: &str| s.split_whitespace().map(str::to_string).collect::<Vec<_>>();
    let stats = CorpusStats::from_documents(&refs.iter().map(|r| vec![words(r)]).collect::<Vec<_>>());
    let control = score_control(pairs, classifier);

    let mut records = Vec::with_capacity(pairs.len());
    for (i, p) in pairs.iter().enumerate() {
        let cand = words(&p.controlled);
        let reference = vec![words(refs[i])];
        let ranked = rank_feedback(&p.controlled, &comment_lists[i], embedder)?;
        let labels = control.labels[i];
        records.push(SampleRecord {
            post_id: p.post_id.clone(),
            comment_rank: p.comment_rank,
            sentiment: p.sentiment,
            reference: refs[i].to_string(),
            uncontrolled: p.uncontrolled.clone(),
            controlled: p.controlled.clone(),
            uncontrolled_label: labels.map(|l| l.0),
            controlled_label: labels.map(|l| l.1),
            rank_j: ranked.rank_j,
            bleu: bleu(&cand, &reference, BLEU_MAX_N),
            rouge_l: rouge_l(&cand, &reference[0]),
            cider: cider(&cand, &reference, &stats)?,
        });
    }
    let n = records.len() as f64;
    let mean = |f: fn(&SampleRecord) -> f64| records.iter().map(f).sum::<f64>() / n;
    let ranks: Vec<usize> = records.iter().map(|r| r.rank_j).collect();
    let report = MetricReport {
        bleu: mean(|r| r.bleu),
        rouge_l: mean(|r| r.rouge_l),
        cider: mean(|r| r.cider),
        mrr: mean_reciprocal_rank(&ranks)?,
        recall_at: RECALL_KS.iter().map(|&k| Ok((k, recall_at_k(&ranks, k)?))).collect::<Result<_>>()?,
        usent_acc: control.usent_acc,
        csent_acc: control.csent_acc,
        control_acc: control.control_acc,
        samples: records.len(),
        skipped: control.skipped,
    };
    Ok(Evaluation { report, records })
}

pub fn evaluate(
    state: &ModelState,
    samples: &[Sample],
    corpus: &Corpus,
    classifier: &dyn SentimentClassifier,
    embedder: &dyn Embedder,
    beam: &BeamOptions,
) -> Result<Evaluation> {
    score_feedback(&generate_feedback(state, samples, beam)?, corpus, classifier, embedder)
}
