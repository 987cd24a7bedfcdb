use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use super::Corpus;
use crate::error::{Error, Result};

pub const PAD: usize = 0;
pub const BOS: usize = 1;
pub const EOS: usize = 2;
pub const UNK: usize = 3;

const RESERVED: [&str; 4] = ["<pad>", "<bos>", "<eos>", "<unk>"];

/// Whitespace word vocabulary. Ids `0..4` are reserved for PAD, BOS, EOS and
/// UNK; the remaining ids map one-to-one onto words.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Vocabulary {
    words: Vec<String>,
    #[serde(skip)]
    ids: HashMap<String, usize>,
}

impl Vocabulary {
    pub fn from_words<I, S>(words: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut vocab = Vocabulary { words: RESERVED.iter().map(|s| s.to_string()).collect(), ids: HashMap::new() };
        for w in words {
            let w = w.into();
            if w.is_empty() || w.contains(char::is_whitespace) || RESERVED.contains(&w.as_str()) {
                return Err(Error::InvalidArgument(format!("`{w}` cannot be a vocabulary word")));
            }
            if vocab.words.contains(&w) {
                return Err(Error::InvalidArgument(format!("duplicate vocabulary word `{w}`")));
            }
            vocab.words.push(w);
        }
        vocab.reindex();
        Ok(vocab)
    }

    /// Builds a vocabulary from whitespace-tokenised texts, keeping words seen
    /// at least `min_count` times. Ids are assigned by descending frequency,
    /// then alphabetically.
    pub fn build<'a>(texts: impl IntoIterator<Item = &'a str>, min_count: usize) -> Self {
        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
        for text in texts {
            for w in text.split_whitespace() {
                *counts.entry(w).or_default() += 1;
            }
        }
        let mut entries: Vec<(&str, usize)> =
            counts.into_iter().filter(|(w, c)| *c >= min_count && !RESERVED.contains(w)).collect();
        entries.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
        Self::from_words(entries.into_iter().map(|(w, _)| w)).expect("words come from whitespace split")
    }

    /// Vocabulary over the input text and comments of the posts at
    /// `post_indices`, typically a training fold.
    pub fn from_posts(corpus: &Corpus, post_indices: &[usize], min_count: usize) -> Self {
        let texts: Vec<String> = post_indices
            .iter()
            .flat_map(|&i| {
                let p = &corpus.posts[i];
                std::iter::once(p.input_text()).chain(p.comments.iter().map(|c| c.text.clone()))
            })
            .collect();
        Self::build(texts.iter().map(String::as_str), min_count)
    }

    pub fn reindex(&mut self) {
        self.ids = self.words.iter().cloned().enumerate().map(|(i, w)| (w, i)).collect();
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.len() == RESERVED.len()
    }

    pub fn id(&self, word: &str) -> Option<usize> {
        self.ids.get(word).copied()
    }

    pub fn word(&self, id: usize) -> Option<&str> {
        self.words.get(id).map(String::as_str)
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn tokenize(&self, text: &str) -> Vec<usize> {
        text.split_whitespace().map(|w| self.id(w).unwrap_or(UNK)).collect()
    }

    /// Joins word ids back into text, skipping PAD, BOS and EOS.
    pub fn detokenize(&self, ids: &[usize]) -> String {
        ids.iter()
            .filter(|&&id| !matches!(id, PAD | BOS | EOS))
            .map(|&id| self.word(id).unwrap_or(RESERVED[UNK]))
            .collect::<Vec<_>>()
            .join(" ")
    }
}
