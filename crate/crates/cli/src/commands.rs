use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use sentifeed::annotate::{annotate_corpus, Ensemble, RetentionReport};
use sentifeed::corpus::{
    build_samples, generate_synthetic_corpus, load_image_slots, preprocess_text, read_corpus_csv, split_folds, Corpus,
    Fold, FsImageSource, ImageSource, IngestReport, Post, Sample, Sentiment, Vocabulary, IMAGE_SLOTS,
};
use sentifeed::encoders::ModelState;
use sentifeed::genctrl::{beam_search_generate, train};
use sentifeed::kaap::{kaap_attribution, save_attribution, select_k_by_dice, AttributionOptions, KSelection, Modality};
use sentifeed::simeval::{evaluate, HashEmbedder};
use sentifeed::{Error, Result};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::record::ExperimentRecord;

/// A validated corpus plus where its image references resolve.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CorpusArchive {
    pub corpus: Corpus,
    pub image_root: PathBuf,
    /// Text already cleaned by the preprocessing pipeline.
    pub preprocessed: bool,
    pub ingest: Option<IngestReport>,
    pub retention: Option<RetentionReport>,
}

impl CorpusArchive {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string(self)?).map_err(|e| Error::io(path, e))
    }

    pub fn images(&self) -> FsImageSource {
        FsImageSource::new(&self.image_root)
    }

    /// The corpus as the model sees it.
    pub fn clean(&self) -> Corpus {
        if self.preprocessed {
            self.corpus.clone()
        } else {
            self.corpus.preprocessed()
        }
    }
}

/// Held-out split written next to a trained model.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SplitFile {
    pub folds: usize,
    pub fold: usize,
    pub seed: u64,
    pub split: Fold,
}

pub struct Ctx {
    pub config: RunConfig,
    pub out_dir: PathBuf,
}

impl Ctx {
    fn out(&self, name: &str) -> PathBuf {
        self.out_dir.join(name)
    }

    fn record(&self, command: &str) -> ExperimentRecord {
        ExperimentRecord::start(command, &self.config)
    }
}

fn write(path: &Path, content: impl AsRef<[u8]>) -> Result<()> {
    std::fs::write(path, content).map_err(|e| Error::io(path, e))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    write(path, serde_json::to_string_pretty(value)?)
}

/// Hashes the archive and every image that fills one of its slots.
fn record_archive(rec: &mut ExperimentRecord, path: &Path, archive: &CorpusArchive) -> Result<()> {
    rec.input(path)?;
    let source = archive.images();
    for post in &archive.corpus.posts {
        for r in post.image_refs.iter().take(IMAGE_SLOTS) {
            let p = source.resolve(r);
            if p.is_file() {
                rec.input(&p)?;
            }
        }
    }
    Ok(())
}

fn held_out(cfg: &RunConfig, corpus: &Corpus) -> Result<SplitFile> {
    let split = split_folds(corpus, cfg.data.folds, cfg.seed)?.swap_remove(cfg.data.fold);
    Ok(SplitFile { folds: cfg.data.folds, fold: cfg.data.fold, seed: cfg.seed, split })
}

/// `split.json` beside the model when present, otherwise the split the
/// config describes.
fn split_for(cfg: &RunConfig, model: &Path, corpus: &Corpus) -> Result<Fold> {
    let beside = model.with_file_name("split.json");
    if beside.is_file() {
        let text = std::fs::read_to_string(&beside).map_err(|e| Error::io(&beside, e))?;
        let file: SplitFile = serde_json::from_str(&text)?;
        if file.split.test.iter().chain(&file.split.train).any(|&i| i >= corpus.posts.len()) {
            return Err(Error::InvalidArgument(format!("{} does not match this corpus", beside.display())));
        }
        return Ok(file.split);
    }
    Ok(held_out(cfg, corpus)?.split)
}

fn load_model(path: &Path) -> Result<ModelState> {
    ModelState::load(path, None)
}

pub fn synth(ctx: &Ctx, posts: usize) -> Result<()> {
    let mut rec = ctx.record("synth");
    let synthetic = generate_synthetic_corpus(ctx.config.seed, posts)?;
    synthetic.write_to_dir(&ctx.out_dir)?;
    println!("wrote {} posts, {} comments to {}", posts, synthetic.corpus.comment_count(), ctx.out_dir.display());
    rec.outputs = vec![ctx.out("corpus.csv"), ctx.out("images")];
    rec.finish(&ctx.out_dir)?;
    Ok(())
}

pub fn ingest(ctx: &Ctx, csv: &Path, images: Option<&Path>, skip_invalid: bool) -> Result<()> {
    let mut rec = ctx.record("ingest");
    rec.input(csv)?;
    let (corpus, mut report) = read_corpus_csv(csv)?;
    for v in &report.violations {
        eprintln!("row {}: {}", v.row, v.message);
    }
    if !report.is_valid() && !skip_invalid {
        return Err(Error::Schema(format!(
            "{} of {} rows violate the schema (rerun with --skip-invalid to drop them)",
            report.violations.len(),
            report.rows_read
        )));
    }
    corpus.validate()?;
    let root = match images {
        Some(dir) => dir.to_path_buf(),
        None => csv.parent().map(Path::to_path_buf).unwrap_or_default(),
    };
    let root = std::fs::canonicalize(&root).map_err(|e| Error::io(&root, e))?;
    let source = FsImageSource::new(&root);
    for post in &corpus.posts {
        report.warnings.extend(load_image_slots(post, &source).1);
    }
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    let archive =
        CorpusArchive { corpus, image_root: root, preprocessed: false, ingest: Some(report), retention: None };
    record_archive(&mut rec, csv, &archive)?;
    let path = ctx.out("corpus.json");
    archive.save(&path)?;
    let r = archive.ingest.as_ref().expect("set above");
    println!(
        "ingested {} of {} rows: {} posts, {} violations, {} warnings",
        r.rows_ingested,
        r.rows_read,
        r.posts,
        r.violations.len(),
        r.warnings.len()
    );
    rec.outputs = vec![path];
    rec.finish(&ctx.out_dir)?;
    Ok(())
}

pub fn annotate(ctx: &Ctx, corpus_path: &Path) -> Result<()> {
    let mut rec = ctx.record("annotate");
    let archive = CorpusArchive::load(corpus_path)?;
    rec.input(corpus_path)?;
    let (corpus, retention) = annotate_corpus(&archive.clean(), &Ensemble::fallback())?;
    let annotated = CorpusArchive { corpus, preprocessed: true, retention: Some(retention), ..archive };
    let path = ctx.out("annotated.json");
    annotated.save(&path)?;
    let csv = ctx.out("retention.csv");
    write(&csv, retention.to_csv())?;
    println!("{retention}");
    rec.outputs = vec![path, csv];
    rec.finish(&ctx.out_dir)?;
    Ok(())
}

pub fn train_model(ctx: &Ctx, corpus_path: &Path) -> Result<()> {
    let cfg = &ctx.config;
    let mut rec = ctx.record("train");
    let archive = CorpusArchive::load(corpus_path)?;
    record_archive(&mut rec, corpus_path, &archive)?;
    let corpus = archive.clean();
    let split = held_out(cfg, &corpus)?;
    let vocab = Vocabulary::from_posts(&corpus, &split.split.train, cfg.data.vocab_min_count);
    let (samples, warnings) =
        build_samples(&corpus, &split.split.train, &vocab, &archive.images(), &cfg.sample_options());
    for w in &warnings {
        log::warn!("{w}");
    }
    if samples.is_empty() {
        return Err(Error::InvalidArgument("the training split has no labelled comments".into()));
    }
    let model_cfg = cfg.model_config(vocab.len())?;
    let mut state = ModelState::new(model_cfg, vocab, cfg.seed)?;
    log::info!("training on {} samples from {} posts, {} epochs", samples.len(), split.split.train.len(), cfg.epochs());
    let report = train(&mut state, &samples, &cfg.train_config())?;

    let model = ctx.out("model.json");
    state.save(&model)?;
    let split_path = ctx.out("split.json");
    write_json(&split_path, &split)?;
    let report_path = ctx.out("train_report.json");
    write_json(&report_path, &report)?;
    println!(
        "trained {} steps in {:.1} s, final loss {:.4}",
        report.steps,
        report.wall_clock_secs,
        report.epoch_losses.last().copied().unwrap_or(f64::NAN)
    );
    rec.train = Some(report);
    rec.outputs = vec![model, split_path, report_path];
    rec.finish(&ctx.out_dir)?;
    Ok(())
}

/// `None` is the uncontrolled request.
pub fn sentiment_name(s: Option<Sentiment>) -> &'static str {
    match s {
        None => "none",
        Some(Sentiment::Negative) => "0",
        Some(Sentiment::Positive) => "1",
    }
}

#[derive(Serialize)]
struct BeamRecord<'a> {
    post_id: &'a str,
    sentiment: &'static str,
    rank: usize,
    text: String,
    tokens: &'a [usize],
    log_prob: f64,
    score: f64,
}

pub struct GenerateInput {
    pub corpus: Option<PathBuf>,
    pub post_ids: Vec<String>,
    pub text: Option<String>,
    pub images: Vec<PathBuf>,
    pub sentiment: Option<Sentiment>,
}

pub fn generate(ctx: &Ctx, model_path: &Path, input: &GenerateInput) -> Result<()> {
    let cfg = &ctx.config;
    let mut rec = ctx.record("generate");
    let state = load_model(model_path)?;
    rec.input(model_path)?;
    let mut samples = Vec::new();
    if let Some(text) = &input.text {
        if input.images.len() > IMAGE_SLOTS {
            log::warn!("only the first {IMAGE_SLOTS} images are used");
        }
        let post = Post {
            post_id: "input".into(),
            title: String::new(),
            body: preprocess_text(text),
            image_refs: input.images.iter().map(|p| p.display().to_string()).collect(),
            post_likes: 0,
            shares: 0,
            comments: Vec::new(),
        };
        for p in input.images.iter().take(IMAGE_SLOTS) {
            if p.is_file() {
                rec.input(p)?;
            }
        }
        samples.push(sample_for(&post, &state.vocabulary, &FsImageSource::new("."), cfg, input.sentiment)?);
    }
    if !input.post_ids.is_empty() {
        let path = input.corpus.as_deref().ok_or_else(|| Error::InvalidArgument("--post-id needs --corpus".into()))?;
        let archive = CorpusArchive::load(path)?;
        rec.input(path)?;
        let corpus = archive.clean();
        for id in &input.post_ids {
            let post =
                corpus.post(id).ok_or_else(|| Error::InvalidArgument(format!("no post `{id}` in the corpus")))?;
            samples.push(sample_for(post, &state.vocabulary, &archive.images(), cfg, input.sentiment)?);
        }
    }
    if samples.is_empty() {
        return Err(Error::InvalidArgument("pass --post-id or --text".into()));
    }

    let mut lines = String::new();
    let name = sentiment_name(input.sentiment);
    for s in &samples {
        let beams = beam_search_generate(&state, &s.text_tokens, &s.images[..], input.sentiment, &cfg.beam())?;
        println!("post {} sentiment {name}", s.post_id);
        for b in &beams {
            let text = state.vocabulary.detokenize(b.words());
            println!("  {:>2}  {:>9.4}  {:>8.4}  {text}", b.rank, b.log_prob, b.score);
            let r = BeamRecord {
                post_id: &s.post_id,
                sentiment: name,
                rank: b.rank,
                text,
                tokens: &b.tokens,
                log_prob: b.log_prob,
                score: b.score,
            };
            let _ = writeln!(lines, "{}", serde_json::to_string(&r)?);
        }
    }
    let path = ctx.out("generations.jsonl");
    write(&path, lines)?;
    rec.outputs = vec![path];
    rec.finish(&ctx.out_dir)?;
    Ok(())
}

/// Input-only sample; an uncontrolled request is stored as positive since
/// the sentiment field is unused when generating without control.
fn sample_for(
    post: &Post,
    vocab: &Vocabulary,
    source: &dyn ImageSource,
    cfg: &RunConfig,
    sentiment: Option<Sentiment>,
) -> Result<Sample> {
    let s = Sample::for_input(post, vocab, source, &cfg.sample_options(), sentiment.unwrap_or(Sentiment::Positive))?;
    for w in &s.warnings {
        log::warn!("{w}");
    }
    Ok(s)
}

pub fn evaluate_model(ctx: &Ctx, model_path: &Path, corpus_path: &Path, max_samples: Option<usize>) -> Result<()> {
    let cfg = &ctx.config;
    let mut rec = ctx.record("evaluate");
    let state = load_model(model_path)?;
    rec.input(model_path)?;
    let archive = CorpusArchive::load(corpus_path)?;
    record_archive(&mut rec, corpus_path, &archive)?;
    let corpus = archive.clean();
    let split = split_for(cfg, model_path, &corpus)?;
    let (mut samples, warnings) =
        build_samples(&corpus, &split.test, &state.vocabulary, &archive.images(), &cfg.sample_options());
    for w in &warnings {
        log::warn!("{w}");
    }
    if let Some(n) = max_samples {
        samples.truncate(n);
    }
    if samples.is_empty() {
        return Err(Error::InvalidArgument("the test split has no labelled comments".into()));
    }
    log::info!("evaluating {} samples from {} posts", samples.len(), split.test.len());
    let eval = evaluate(&state, &samples, &corpus, &Ensemble::fallback(), &HashEmbedder, &cfg.beam())?;

    let metrics = ctx.out("metrics.json");
    write_json(&metrics, &eval.report)?;
    let table = ctx.out("metrics.txt");
    let text = eval.report.to_table();
    write(&table, &text)?;
    let mut lines = String::new();
    for r in &eval.records {
        let _ = writeln!(lines, "{}", serde_json::to_string(r)?);
    }
    let detail = ctx.out("samples.jsonl");
    write(&detail, lines)?;
    print!("{text}");
    rec.metrics = Some(eval.report);
    rec.outputs = vec![metrics, table, detail];
    rec.finish(&ctx.out_dir)?;
    Ok(())
}

#[derive(Serialize)]
struct Selections {
    image: Option<KSelection>,
    text: Option<KSelection>,
}

pub fn attribute(
    ctx: &Ctx,
    model_path: &Path,
    corpus_path: &Path,
    post_id: Option<&str>,
    select_k: bool,
) -> Result<()> {
    let cfg = &ctx.config;
    let mut rec = ctx.record("attribute");
    let state = load_model(model_path)?;
    rec.input(model_path)?;
    let archive = CorpusArchive::load(corpus_path)?;
    record_archive(&mut rec, corpus_path, &archive)?;
    let corpus = archive.clean();
    let source = archive.images();
    let split = split_for(cfg, model_path, &corpus)?;
    let post = match post_id {
        Some(id) => corpus.post(id).ok_or_else(|| Error::InvalidArgument(format!("no post `{id}` in the corpus")))?,
        None => split
            .test
            .first()
            .map(|&i| &corpus.posts[i])
            .ok_or_else(|| Error::InvalidArgument("empty test split".into()))?,
    };
    let base = AttributionOptions { k: 0, image_slot: cfg.attribution.image_slot, beam: cfg.beam() };

    let (mut k_img, mut k_txt) = (cfg.attribution.k_img, cfg.attribution.k_txt);
    let mut outputs = Vec::new();
    if select_k {
        let (mut samples, _) = build_samples(&corpus, &split.test, &state.vocabulary, &source, &cfg.sample_options());
        samples.truncate(cfg.attribution.select_samples);
        let range = 2..=cfg.attribution.k_max;
        let image = select_k_by_dice(&state, &samples, Modality::Image, range.clone(), &base)?;
        let text = select_k_by_dice(&state, &samples, Modality::Text, range, &base)?;
        println!(
            "selected k: image {} (converged {}), text {} (converged {})",
            image.k, image.converged, text.k, text.converged
        );
        (k_img, k_txt) = (image.k, text.k);
        let path = ctx.out("k_selection.json");
        write_json(&path, &Selections { image: Some(image), text: Some(text) })?;
        outputs.push(path);
    }

    let dir = ctx.out("attributions");
    for sentiment in Sentiment::BOTH {
        let sample = sample_for(post, &state.vocabulary, &source, cfg, Some(sentiment))?;
        for modality in [Modality::Image, Modality::Text] {
            let k = match modality {
                Modality::Image => k_img,
                Modality::Text => {
                    let n = sample.text_tokens.len();
                    if n < 2 {
                        log::warn!("post `{}` has a single token; skipping the text map", post.post_id);
                        continue;
                    }
                    if k_txt > n {
                        log::warn!("k_txt {k_txt} exceeds the {n} input words; using {n}");
                    }
                    k_txt.min(n)
                }
            };
            let map = kaap_attribution(&state, &sample, sentiment, modality, &AttributionOptions { k, ..base })?;
            let stem = format!("{}_{}_{}", post.post_id, modality, sentiment_name(Some(sentiment)));
            let image = (modality == Modality::Image).then(|| &sample.images[base.image_slot]);
            outputs.extend(save_attribution(&map, &dir, &stem, image)?);
            let mut order: Vec<usize> = (0..map.k).collect();
            order.sort_by(|&a, &b| map.kaap[b].total_cmp(&map.kaap[a]));
            println!("{stem}: k {} exact {} top segment {} feedback \"{}\"", map.k, map.exact, order[0], map.feedback);
        }
    }
    rec.outputs = outputs;
    rec.finish(&ctx.out_dir)?;
    Ok(())
}
