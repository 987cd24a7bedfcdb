//! Posts, comments and training samples in the CMFeed column layout.

mod folds;
mod images;
mod io;
mod preprocess;
mod sample;
mod synthetic;
mod vocab;

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use folds::{split_folds, Fold};
pub use images::{FsImageSource, ImageSource, ImageTensor, MemoryImageSource, IMAGE_CHANNELS, IMAGE_SIDE};
pub use io::{read_corpus_csv, write_corpus_csv, IngestReport, Violation, CSV_COLUMNS};
pub use preprocess::{is_stopword, preprocess_text};
pub use sample::{
    assemble_post_samples, assemble_sample, build_samples, load_image_slots, Sample, SampleOptions, IMAGE_SLOTS,
};
pub use synthetic::{generate_synthetic_corpus, generate_with, SyntheticCorpus, SyntheticOptions, NEUTRAL_WORDS};
pub use vocab::{Vocabulary, BOS, EOS, PAD, UNK};

/// Requested or observed polarity.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Sentiment {
    Negative = 0,
    Positive = 1,
}

impl Sentiment {
    pub fn opposite(self) -> Self {
        match self {
            Sentiment::Negative => Sentiment::Positive,
            Sentiment::Positive => Sentiment::Negative,
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        match i {
            0 => Some(Sentiment::Negative),
            1 => Some(Sentiment::Positive),
            _ => None,
        }
    }

    pub const BOTH: [Sentiment; 2] = [Sentiment::Negative, Sentiment::Positive];
}

/// Ground-truth comment label: a polarity, or `XX` when the annotation
/// ensemble could not agree.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Label {
    Known(Sentiment),
    Excluded,
}

impl Label {
    pub fn sentiment(self) -> Option<Sentiment> {
        match self {
            Label::Known(s) => Some(s),
            Label::Excluded => None,
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Label::Known(Sentiment::Negative) => f.write_str("0"),
            Label::Known(Sentiment::Positive) => f.write_str("1"),
            Label::Excluded => f.write_str("XX"),
        }
    }
}

impl FromStr for Label {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "0" => Ok(Label::Known(Sentiment::Negative)),
            "1" => Ok(Label::Known(Sentiment::Positive)),
            "XX" | "xx" => Ok(Label::Excluded),
            other => Err(Error::Schema(format!("sentiment label `{other}` is not one of 0, 1, XX"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Comment {
    pub text: String,
    pub likes: u64,
    /// 1 = most relevant.
    pub relevance_rank: u32,
    pub sentiment: Label,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Post {
    pub post_id: String,
    pub title: String,
    pub body: String,
    /// In order of appearance; the first three feed the visual encoder.
    pub image_refs: Vec<String>,
    pub post_likes: u64,
    pub shares: u64,
    pub comments: Vec<Comment>,
}

impl Post {
    /// Comments sorted by relevance rank.
    pub fn ranked_comments(&self) -> Vec<&Comment> {
        let mut out: Vec<&Comment> = self.comments.iter().collect();
        out.sort_by_key(|c| c.relevance_rank);
        out
    }

    pub fn input_text(&self) -> String {
        if self.title.is_empty() {
            self.body.clone()
        } else {
            format!("{} {}", self.title, self.body)
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Corpus {
    pub posts: Vec<Post>,
}

impl Corpus {
    pub fn comment_count(&self) -> usize {
        self.posts.iter().map(|p| p.comments.len()).sum()
    }

    pub fn post(&self, post_id: &str) -> Option<&Post> {
        self.posts.iter().find(|p| p.post_id == post_id)
    }

    /// Checks the structural invariants: unique post ids, non-empty bodies,
    /// and relevance ranks forming `1..=m` within each post.
    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for post in &self.posts {
            if !seen.insert(post.post_id.as_str()) {
                return Err(Error::Schema(format!("duplicate post_id `{}`", post.post_id)));
            }
            if post.body.trim().is_empty() {
                return Err(Error::Schema(format!("post `{}` has an empty body", post.post_id)));
            }
            check_ranks(post)?;
        }
        Ok(())
    }

    /// Applies [`preprocess_text`] to every title, body and comment. Comments
    /// that reduce to nothing are dropped and the survivors re-ranked
    /// contiguously in their original order; posts whose body empties are
    /// dropped.
    pub fn preprocessed(&self) -> Corpus {
        let posts = self
            .posts
            .iter()
            .filter_map(|post| {
                let body = preprocess_text(&post.body);
                if body.is_empty() {
                    return None;
                }
                let mut comments: Vec<Comment> = post
                    .ranked_comments()
                    .into_iter()
                    .filter_map(|c| {
                        let text = preprocess_text(&c.text);
                        (!text.is_empty()).then(|| Comment { text, ..c.clone() })
                    })
                    .collect();
                for (i, c) in comments.iter_mut().enumerate() {
                    c.relevance_rank = i as u32 + 1;
                }
                Some(Post { title: preprocess_text(&post.title), body, comments, ..post.clone() })
            })
            .collect();
        Corpus { posts }
    }
}

fn check_ranks(post: &Post) -> Result<()> {
    let mut ranks: Vec<u32> = post.comments.iter().map(|c| c.relevance_rank).collect();
    ranks.sort_unstable();
    if ranks.iter().enumerate().any(|(i, &r)| r != i as u32 + 1) {
        return Err(Error::Schema(format!(
            "post `{}`: relevance ranks {ranks:?} are not 1..={}",
            post.post_id,
            ranks.len()
        )));
    }
    Ok(())
}
