//! Reference-based text metrics, embedding similarity ranking and
//! controllability scoring.

mod evaluate;
mod ranking;
mod similarity;
mod text_metrics;

pub use evaluate::{
    control_accuracy, evaluate, generate_feedback, score_control, score_feedback, ControlAccuracy, Evaluation,
    FeedbackPair, MetricReport, SampleRecord, SentimentClassifier, RECALL_KS,
};
pub use ranking::{mean_reciprocal_rank, recall_at_k};
pub use similarity::{
    cosine_similarity, fallback_embed, rank_feedback, token_bucket, Embedder, HashEmbedder, RankedComparison,
    FALLBACK_DIM,
};
pub use text_metrics::{bleu, cider, lcs_len, rouge_l, CorpusStats, BLEU_EPSILON, BLEU_MAX_N, CIDER_MAX_N, ROUGE_BETA};
