use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{Comment, Corpus, ImageSource, ImageTensor, Post, Sentiment, Vocabulary, BOS, EOS};
use crate::error::{Error, Result};

pub const IMAGE_SLOTS: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleOptions {
    pub max_text_len: usize,
    /// Content tokens kept from the comment, before BOS/EOS wrapping.
    pub max_target_len: usize,
}

impl Default for SampleOptions {
    fn default() -> Self {
        Self { max_text_len: 64, max_target_len: 16 }
    }
}

/// One training/evaluation example: post text, the first three images and a
/// single labelled comment.
#[derive(Clone, Debug)]
pub struct Sample {
    pub post_id: String,
    pub comment_rank: u32,
    pub text_tokens: Vec<usize>,
    /// Always exactly three slots; missing or unreadable images are blank.
    pub images: Arc<[ImageTensor; IMAGE_SLOTS]>,
    /// `BOS, w1 .. wn, EOS`
    pub target_tokens: Vec<usize>,
    pub sentiment: Sentiment,
    pub warnings: Vec<String>,
}

impl Sample {
    /// Post text and images with an empty `BOS, EOS` target, for generation
    /// and attribution. `sentiment` is the polarity to request.
    pub fn for_input(
        post: &Post,
        vocab: &Vocabulary,
        source: &dyn ImageSource,
        opts: &SampleOptions,
        sentiment: Sentiment,
    ) -> Result<Sample> {
        let mut text_tokens = vocab.tokenize(&post.input_text());
        if text_tokens.is_empty() {
            return Err(Error::SampleRejected(format!("post `{}` has no text tokens", post.post_id)));
        }
        text_tokens.truncate(opts.max_text_len);
        let (slots, warnings) = load_image_slots(post, source);
        Ok(Sample {
            post_id: post.post_id.clone(),
            comment_rank: 0,
            text_tokens,
            images: Arc::new(slots),
            target_tokens: vec![BOS, EOS],
            sentiment,
            warnings,
        })
    }
}

/// Loads the first three images of a post in order of appearance.
pub fn load_image_slots(post: &Post, source: &dyn ImageSource) -> ([ImageTensor; IMAGE_SLOTS], Vec<String>) {
    let mut warnings = Vec::new();
    let slots = std::array::from_fn(|i| match post.image_refs.get(i) {
        None => ImageTensor::blank(),
        Some(r) => source.load(r).unwrap_or_else(|e| {
            warnings.push(format!("post `{}`: image `{r}` unreadable, using blank slot ({e})", post.post_id));
            ImageTensor::blank()
        }),
    });
    (slots, warnings)
}

pub fn assemble_sample(
    post: &Post,
    comment: &Comment,
    vocab: &Vocabulary,
    source: &dyn ImageSource,
    opts: &SampleOptions,
) -> Result<Sample> {
    let (slots, warnings) = load_image_slots(post, source);
    let mut sample = with_images(post, comment, vocab, Arc::new(slots), opts)?;
    sample.warnings = warnings;
    Ok(sample)
}

fn with_images(
    post: &Post,
    comment: &Comment,
    vocab: &Vocabulary,
    images: Arc<[ImageTensor; IMAGE_SLOTS]>,
    opts: &SampleOptions,
) -> Result<Sample> {
    let sentiment = comment.sentiment.sentiment().ok_or_else(|| {
        Error::InvalidArgument(format!("post `{}`: comment labelled XX is excluded from samples", post.post_id))
    })?;
    let mut text_tokens = vocab.tokenize(&post.input_text());
    if text_tokens.is_empty() {
        return Err(Error::SampleRejected(format!("post `{}` has no text tokens", post.post_id)));
    }
    text_tokens.truncate(opts.max_text_len);
    let mut body = vocab.tokenize(&comment.text);
    if body.is_empty() {
        return Err(Error::SampleRejected(format!(
            "post `{}`: comment {} has no tokens",
            post.post_id, comment.relevance_rank
        )));
    }
    body.truncate(opts.max_target_len);
    let mut target_tokens = Vec::with_capacity(body.len() + 2);
    target_tokens.push(BOS);
    target_tokens.extend(body);
    target_tokens.push(EOS);
    Ok(Sample {
        post_id: post.post_id.clone(),
        comment_rank: comment.relevance_rank,
        text_tokens,
        images,
        target_tokens,
        sentiment,
        warnings: Vec::new(),
    })
}

/// Samples for every labelled comment of a post; images load once and are
/// shared. Rejected comments are reported as warnings.
pub fn assemble_post_samples(
    post: &Post,
    vocab: &Vocabulary,
    source: &dyn ImageSource,
    opts: &SampleOptions,
) -> (Vec<Sample>, Vec<String>) {
    let (slots, mut warnings) = load_image_slots(post, source);
    let images = Arc::new(slots);
    let mut samples = Vec::new();
    for c in post.ranked_comments() {
        if c.sentiment.sentiment().is_none() {
            continue;
        }
        match with_images(post, c, vocab, Arc::clone(&images), opts) {
            Ok(s) => samples.push(s),
            Err(e) => warnings.push(e.to_string()),
        }
    }
    (samples, warnings)
}

/// Samples for the posts at `post_indices`, in that order.
pub fn build_samples(
    corpus: &Corpus,
    post_indices: &[usize],
    vocab: &Vocabulary,
    source: &dyn ImageSource,
    opts: &SampleOptions,
) -> (Vec<Sample>, Vec<String>) {
    let mut samples = Vec::new();
    let mut warnings = Vec::new();
    for &i in post_indices {
        let (s, w) = assemble_post_samples(&corpus.posts[i], vocab, source, opts);
        samples.extend(s);
        warnings.extend(w);
    }
    (samples, warnings)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Label, MemoryImageSource};
    use image::{Rgb, RgbImage};

    fn post_with_images(n: usize) -> (Post, MemoryImageSource) {
        let mut source = MemoryImageSource::default();
        let mut refs = Vec::new();
        for i in 0..n {
            let name = format!("img{i}.png");
            source.images.insert(name.clone(), RgbImage::from_pixel(8, 8, Rgb([(i * 40) as u8 + 10, 0, 0])));
            refs.push(name);
        }
        let post = Post {
            post_id: "p".into(),
            title: "storm".into(),
            body: "river town".into(),
            image_refs: refs,
            post_likes: 0,
            shares: 0,
            comments: vec![Comment {
                text: "great town".into(),
                likes: 1,
                relevance_rank: 1,
                sentiment: Label::Known(Sentiment::Positive),
            }],
        };
        (post, source)
    }

    fn vocab() -> Vocabulary {
        Vocabulary::build(["storm river town great"], 1)
    }

    #[test]
    fn five_images_keep_first_three_in_order() {
        let (post, source) = post_with_images(5);
        let s = assemble_sample(&post, &post.comments[0], &vocab(), &source, &SampleOptions::default()).unwrap();
        for (slot, img) in s.images.iter().enumerate() {
            let expected = ((slot * 40) as f32 + 10.0) / 255.0;
            assert!((img.at(0, 0, 0) - expected).abs() < 1e-6);
        }
    }

    #[test]
    fn input_sample_has_empty_target() {
        let (post, source) = post_with_images(2);
        let s = Sample::for_input(&post, &vocab(), &source, &SampleOptions::default(), Sentiment::Negative).unwrap();
        assert_eq!(s.target_tokens, vec![BOS, EOS]);
        assert_eq!(s.text_tokens, vocab().tokenize("storm river town"));
        assert_eq!(s.sentiment, Sentiment::Negative);
        assert_eq!(s.images.iter().filter(|i| i.is_blank()).count(), 1);
    }

    #[test]
    fn padding_with_blank_slots() {
        for n in [0, 1] {
            let (post, source) = post_with_images(n);
            let s = assemble_sample(&post, &post.comments[0], &vocab(), &source, &SampleOptions::default()).unwrap();
            assert_eq!(s.images.len(), 3);
            let blanks = s.images.iter().filter(|i| i.is_blank()).count();
            assert_eq!(blanks, 3 - n);
            assert!(s.images[n..].iter().all(|i| i.data().iter().all(|&v| v == 0.0)));
        }
    }

    #[test]
    fn unreadable_image_becomes_blank_with_warning() {
        let (mut post, source) = post_with_images(1);
        post.image_refs.insert(0, "missing.png".into());
        let s = assemble_sample(&post, &post.comments[0], &vocab(), &source, &SampleOptions::default()).unwrap();
        assert!(s.images[0].is_blank());
        assert!(!s.images[1].is_blank());
        assert_eq!(s.warnings.len(), 1);
    }

    #[test]
    fn target_wrapped_and_ids_in_range() {
        let (post, source) = post_with_images(0);
        let v = vocab();
        let s = assemble_sample(&post, &post.comments[0], &v, &source, &SampleOptions::default()).unwrap();
        assert_eq!(s.target_tokens.first(), Some(&BOS));
        assert_eq!(s.target_tokens.last(), Some(&EOS));
        assert!(s.text_tokens.iter().chain(&s.target_tokens).all(|&t| t < v.len()));
    }

    #[test]
    fn xx_and_empty_text_rejected() {
        let (mut post, source) = post_with_images(0);
        let mut c = post.comments[0].clone();
        c.sentiment = Label::Excluded;
        assert!(assemble_sample(&post, &c, &vocab(), &source, &SampleOptions::default()).is_err());
        post.title.clear();
        post.body.clear();
        let err = assemble_sample(&post, &post.comments[0], &vocab(), &source, &SampleOptions::default());
        assert!(matches!(err, Err(Error::SampleRejected(_))));
    }
}
