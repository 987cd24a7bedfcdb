//! Seeded generator for sentiment-separable corpora in the CSV layout.
//!
//! Each post has a mood. Comments draw their polarity from the mood (biased,
//! not fixed) and their sentiment words from the matching lexicon block, one
//! word per lexicon variant. Images are procedural patterns whose palette
//! follows the post mood.

use std::path::Path;

use image::{Rgb, RgbImage};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{write_corpus_csv, Comment, Corpus, Label, MemoryImageSource, Post, Sentiment, IMAGE_SIDE};
use crate::annotate::lexicon_variants;
use crate::error::{Error, Result};

pub const NEUTRAL_WORDS: [&str; 32] = [
    "news",
    "today",
    "people",
    "report",
    "city",
    "week",
    "story",
    "government",
    "local",
    "family",
    "town",
    "morning",
    "update",
    "official",
    "crowd",
    "road",
    "school",
    "market",
    "council",
    "weather",
    "photo",
    "video",
    "team",
    "year",
    "country",
    "world",
    "police",
    "event",
    "plan",
    "public",
    "service",
    "community",
];

const TOPICS: [[&str; 8]; 8] = [
    ["flood", "river", "rain", "water", "storm", "dam", "rescue", "village"],
    ["election", "vote", "minister", "party", "campaign", "poll", "leader", "parliament"],
    ["football", "match", "goal", "league", "coach", "stadium", "player", "season"],
    ["hospital", "doctor", "health", "patient", "nurse", "vaccine", "clinic", "care"],
    ["birthday", "celebration", "age", "oldest", "cake", "guests", "anniversary", "party"],
    ["wildlife", "beaver", "forest", "wetland", "nature", "species", "habitat", "park"],
    ["economy", "prices", "inflation", "bank", "jobs", "wages", "budget", "tax"],
    ["concert", "music", "festival", "band", "stage", "singer", "album", "tour"],
];

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticOptions {
    pub max_images: usize,
    pub min_comments: usize,
    pub max_comments: usize,
    /// Probability that a comment shares its post's mood.
    pub mood_agreement: f64,
    /// Probability of adding a fourth sentiment word (from the last variant).
    pub fourth_word: f64,
}

impl Default for SyntheticOptions {
    fn default() -> Self {
        Self { max_images: 5, min_comments: 3, max_comments: 6, mood_agreement: 0.7, fourth_word: 0.5 }
    }
}

#[derive(Clone, Debug)]
pub struct SyntheticCorpus {
    pub corpus: Corpus,
    pub images: MemoryImageSource,
}

impl SyntheticCorpus {
    /// Writes `corpus.csv` and `images/*.png` under `dir`.
    pub fn write_to_dir(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir.join("images")).map_err(|e| Error::io(dir, e))?;
        write_corpus_csv(&self.corpus, &dir.join("corpus.csv"))?;
        for (name, img) in &self.images.images {
            img.save(dir.join(name))?;
        }
        Ok(())
    }
}

pub fn generate_synthetic_corpus(seed: u64, n_posts: usize) -> Result<SyntheticCorpus> {
    generate_with(seed, n_posts, &SyntheticOptions::default())
}

pub fn generate_with(seed: u64, n_posts: usize, opts: &SyntheticOptions) -> Result<SyntheticCorpus> {
    if n_posts == 0 {
        return Err(Error::InvalidArgument("n_posts must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let variants = lexicon_variants();
    let mut images = MemoryImageSource::default();
    let mut posts = Vec::with_capacity(n_posts);

    for p in 0..n_posts {
        let topic = &TOPICS[rng.gen_range(0..TOPICS.len())];
        let mood = if rng.gen_bool(0.5) { Sentiment::Positive } else { Sentiment::Negative };
        let title = (0..3).map(|_| *topic.choose(&mut rng).unwrap()).collect::<Vec<_>>().join(" ");
        let body_len = rng.gen_range(10..=16);
        let body = (0..body_len)
            .map(|_| {
                if rng.gen_bool(0.6) {
                    *topic.choose(&mut rng).unwrap()
                } else {
                    *NEUTRAL_WORDS.choose(&mut rng).unwrap()
                }
            })
            .collect::<Vec<_>>()
            .join(" ");

        let post_id = format!("syn{p:05}");
        let n_images = rng.gen_range(0..=opts.max_images);
        let mut image_refs = Vec::with_capacity(n_images);
        for i in 0..n_images {
            let name = format!("images/{post_id}_{i}.png");
            images.images.insert(name.clone(), draw_image(mood, &mut rng));
            image_refs.push(name);
        }

        let n_comments = rng.gen_range(opts.min_comments..=opts.max_comments);
        let mut comments: Vec<Comment> = (0..n_comments)
            .map(|_| {
                let sentiment = if rng.gen_bool(opts.mood_agreement) { mood } else { mood.opposite() };
                let pick = |v: usize, rng: &mut ChaCha8Rng| {
                    let block = match sentiment {
                        Sentiment::Positive => &variants[v].positive,
                        Sentiment::Negative => &variants[v].negative,
                    };
                    *block.choose(rng).unwrap()
                };
                let mut words = vec![
                    pick(0, &mut rng),
                    *NEUTRAL_WORDS.choose(&mut rng).unwrap(),
                    pick(1, &mut rng),
                    *topic.choose(&mut rng).unwrap(),
                    pick(2, &mut rng),
                ];
                if rng.gen_bool(opts.fourth_word) {
                    words.push(pick(3, &mut rng));
                }
                Comment {
                    text: words.join(" "),
                    likes: rng.gen_range(0..60),
                    relevance_rank: 0,
                    sentiment: Label::Known(sentiment),
                }
            })
            .collect();
        // most liked first, ties by generation order
        let mut order: Vec<usize> = (0..comments.len()).collect();
        order.sort_by_key(|&i| std::cmp::Reverse(comments[i].likes));
        for (rank, &i) in order.iter().enumerate() {
            comments[i].relevance_rank = rank as u32 + 1;
        }
        comments.sort_by_key(|c| c.relevance_rank);

        posts.push(Post {
            post_id,
            title,
            body,
            image_refs,
            post_likes: rng.gen_range(0..5000),
            shares: rng.gen_range(0..500),
            comments,
        });
    }
    Ok(SyntheticCorpus { corpus: Corpus { posts }, images })
}

/// Warm, bright discs for positive moods; dark, cool stripes for negative.
fn draw_image(mood: Sentiment, rng: &mut ChaCha8Rng) -> RgbImage {
    let side = IMAGE_SIDE as u32;
    let cx = rng.gen_range(32.0..96.0f64);
    let cy = rng.gen_range(32.0..96.0f64);
    let radius = rng.gen_range(18.0..40.0f64);
    let period = rng.gen_range(6..16u32);
    let jitter = rng.gen_range(0..40u8);
    RgbImage::from_fn(side, side, |x, y| match mood {
        Sentiment::Positive => {
            let d = ((x as f64 - cx).powi(2) + (y as f64 - cy).powi(2)).sqrt();
            if d < radius {
                Rgb([250, 220u8.saturating_sub(jitter), 80])
            } else {
                Rgb([200, 150 + (y / 4) as u8, 90u8.saturating_add(jitter)])
            }
        }
        Sentiment::Negative => {
            if (y / period) % 2 == 0 {
                Rgb([20, 30u8.saturating_add(jitter), 70])
            } else {
                Rgb([50, 60, 110 + (x / 4) as u8])
            }
        }
    })
}
