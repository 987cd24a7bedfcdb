//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each and
//! exits non-zero if any fails.

use std::collections::HashMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use sentifeed::annotate::{annotate_corpus, Ensemble, ScorerVerdict, SentimentScorer};
use sentifeed::corpus::*;
use sentifeed::encoders::{multi_head_attention, scaled_dot_attention, MhaWeights, ModelConfig, ModelState};
use sentifeed::genctrl::{
    attention_trace, beam_search, beam_search_generate, build_control_masks, greedy_decode, sample_loss, train,
    BeamOptions, StepModel, TrainConfig,
};
use sentifeed::kaap::{
    dice_coefficient, partition_features, run_sizes, select_k_with, shapley_approx, shapley_auto, shapley_exact,
    spearman_rho, verify_additivity, FnGame, Modality,
};
use sentifeed::simeval::{
    bleu, cider, evaluate, fallback_embed, mean_reciprocal_rank, rank_feedback, recall_at_k, rouge_l, CorpusStats,
    HashEmbedder, BLEU_MAX_N,
};
use sentifeed::tensor::Matrix;

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn main() {
    let criteria: [(&str, u64, fn() -> Outcome); 11] = [
        ("control-mask invariants", 1, c01_masks),
        ("pairwise additivity identity", 5, c02_additivity),
        ("approximate vs exact Shapley", 30, c03_shapley_oracle),
        ("attention correctness", 5, c04_attention),
        ("finite-difference gradient check", 60, c05_gradients),
        ("controllability at desk scale", 1800, c06_controllability),
        ("x = 0 bypass equivalence", 60, c07_bypass),
        ("metric oracles", 10, c08_metrics),
        ("annotation pipeline", 5, c09_annotation),
        ("beam search", 5, c10_beam),
        ("dice and k selection", 120, c11_dice),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (i, (name, budget, run)) in criteria.iter().enumerate() {
        let id = format!("{:02}", i + 1);
        if !filter.is_empty() && !filter.iter().any(|f| id.contains(f.as_str()) || name.contains(f.as_str())) {
            continue;
        }
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|p| {
            let msg = p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()));
            Err(format!("panicked: {}", msg.unwrap_or_default()))
        });
        let elapsed = start.elapsed();
        let outcome = match outcome {
            Ok(d) if elapsed > Duration::from_secs(*budget) => Err(format!("{d}; over the {budget}s budget")),
            o => o,
        };
        let (tag, detail) = match &outcome {
            Ok(d) => ("PASS", d),
            Err(d) => ("FAIL", d),
        };
        failed += usize::from(outcome.is_err());
        println!("{tag} {id} {name} ({:.2}s): {detail}", elapsed.as_secs_f64());
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}

fn c01_masks() -> Outcome {
    let mut checked = 0;
    for d in [10usize, 100, 512] {
        for x in [0.0, 5.0, 10.0, 20.0] {
            let z = (x * d as f64 / 100.0).round() as usize;
            for seed in 0..10 {
                let m = build_control_masks(d, x, seed).map_err(|e| e.to_string())?;
                let (neg, pos) = (&m.mask_neg, &m.mask_pos);
                ensure!(neg.len() == d && pos.len() == d, "mask width");
                let zn = neg.iter().filter(|&&v| v == 0).count();
                let zp = pos.iter().filter(|&&v| v == 0).count();
                ensure!(zn == z && zp == z, "d={d} x={x}: {zn}/{zp} zeros, want {z}");
                ensure!(neg.iter().chain(pos).all(|&v| v <= 1), "non-binary mask");
                ensure!((0..d).all(|i| neg[i] == 1 || pos[i] == 1), "d={d} x={x}: zero sets overlap");
                let shared = (0..d).filter(|&i| neg[i] == 1 && pos[i] == 1).count();
                ensure!(shared == d - 2 * z, "d={d} x={x}: {shared} shared active");
                checked += 1;
            }
        }
    }
    Ok(format!("{checked} mask pairs"))
}

fn coalition_index(s: &[bool]) -> usize {
    s.iter().enumerate().map(|(i, &b)| usize::from(b) << i).sum()
}

fn c02_additivity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let table: Vec<f64> = (0..4).map(|_| rng.gen_range(-10.0..10.0)).collect();
        let g = FnGame { n: 2, f: |s: &[bool]| Ok(table[coalition_index(s)]) };
        for values in [shapley_exact(&g), shapley_approx(&g)] {
            let v = values.map_err(|e| e.to_string())?;
            // S1 + S2 - (f(F) - f(∅))
            let identity = v[0] + v[1] - (table[3] - table[0]);
            worst = worst.max(identity.abs());
            worst = worst.max(verify_additivity(&v, &g).map_err(|e| e.to_string())?);
        }
    }
    ensure!(worst <= 1e-9, "worst residual {worst:e}");
    Ok(format!("100 games, worst residual {worst:.1e}"))
}

fn c03_shapley_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let k = 8;
    let mut rhos = Vec::new();
    for _ in 0..50 {
        let w: Vec<f64> = (0..k).map(|_| rng.gen_range(0.0..1.0)).collect();
        let v: Vec<f64> = (0..k).map(|_| rng.gen_range(0.0..1.0)).collect();
        // monotone: concave in the total weight plus the best single member
        let g = FnGame {
            n: k,
            f: |s: &[bool]| {
                let total: f64 = (0..k).filter(|&i| s[i]).map(|i| w[i]).sum();
                let best = (0..k).filter(|&i| s[i]).map(|i| v[i]).fold(0.0, f64::max);
                Ok(total.sqrt() + best)
            },
        };
        let e = shapley_exact(&g).map_err(|e| e.to_string())?;
        let a = shapley_approx(&g).map_err(|e| e.to_string())?;
        rhos.push(spearman_rho(&e, &a).map_err(|e| e.to_string())?);
    }
    let mean = rhos.iter().sum::<f64>() / rhos.len() as f64;
    let min = rhos.iter().copied().fold(f64::INFINITY, f64::min);
    ensure!(mean >= 0.9, "mean spearman {mean:.4} (min {min:.4})");

    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let c: Vec<f64> = (0..k).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let g = FnGame { n: k, f: |s: &[bool]| Ok((0..k).filter(|&i| s[i]).map(|i| c[i]).sum()) };
        let e = shapley_exact(&g).map_err(|e| e.to_string())?;
        let a = shapley_approx(&g).map_err(|e| e.to_string())?;
        for i in 0..k {
            worst = worst.max((e[i] - a[i]).abs()).max((e[i] - c[i]).abs());
        }
    }
    ensure!(worst <= 1e-9, "additive games differ by {worst:e}");
    Ok(format!("mean rho {mean:.4} (min {min:.4}); additive max diff {worst:.1e}"))
}

fn tiny_vocab() -> Vocabulary {
    Vocabulary::from_words((0..12).map(|i| format!("w{i}"))).unwrap()
}

fn small_config(vocab: &Vocabulary) -> ModelConfig {
    ModelConfig {
        d_model: 8,
        d_embed: 4,
        n_layers: 1,
        n_heads: 2,
        d_ffn_hidden: 16,
        control_x: 25.0,
        ..ModelConfig::desk(vocab.len())
    }
}

fn pattern_image(seed: u64) -> ImageTensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ImageTensor::from_data((0..ImageTensor::LEN).map(|_| rng.gen_range(0.0..1.0f32)).collect()).unwrap()
}

fn hand_sample() -> Sample {
    Sample {
        post_id: "p".into(),
        comment_rank: 1,
        text_tokens: vec![4, 5, 6, 7, 8, 9],
        images: Arc::new([pattern_image(1), ImageTensor::blank(), pattern_image(2)]),
        target_tokens: vec![BOS, 10, 11, 12, EOS],
        sentiment: Sentiment::Positive,
        warnings: Vec::new(),
    }
}

fn softmax_oracle(q: &Matrix, k: &Matrix, v: &Matrix) -> Matrix {
    let d = q.cols as f64;
    let mut out = Matrix::zeros(q.rows, v.cols);
    for i in 0..q.rows {
        let scores: Vec<f64> =
            (0..k.rows).map(|j| (0..q.cols).map(|c| q.get(i, c) * k.get(j, c)).sum::<f64>() / d.sqrt()).collect();
        let m = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = scores.iter().map(|s| (s - m).exp()).sum();
        for j in 0..k.rows {
            let w = (scores[j] - m).exp() / z;
            for c in 0..v.cols {
                out.set(i, c, out.get(i, c) + w * v.get(j, c));
            }
        }
    }
    out
}

fn c04_attention() -> Outcome {
    let vocab = tiny_vocab();
    let state = ModelState::new(small_config(&vocab), vocab, 4).map_err(|e| e.to_string())?;
    let trace = attention_trace(&state, &hand_sample(), Some(Sentiment::Negative)).map_err(|e| e.to_string())?;
    ensure!(!trace.causal.is_empty() && !trace.bidirectional.is_empty(), "no attention recorded");
    let mut rows = 0;
    let mut worst_sum: f64 = 0.0;
    for m in trace.causal.iter().chain(&trace.bidirectional) {
        for r in 0..m.rows {
            worst_sum = worst_sum.max((m.row(r).iter().sum::<f64>() - 1.0).abs());
            rows += 1;
        }
    }
    ensure!(worst_sum <= 1e-6, "row sums off by {worst_sum:e}");
    for m in &trace.causal {
        for r in 0..m.rows {
            for c in r + 1..m.cols {
                ensure!(m.get(r, c) == 0.0, "future weight {} at ({r}, {c})", m.get(r, c));
            }
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(44);
    let mut random = |r, c| Matrix::from_vec(r, c, (0..r * c).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
    let (q, k, v) = (random(5, 4), random(7, 4), random(7, 4));
    let id = Matrix::identity(4);
    let w = MhaWeights { w_q: &id, w_k: &id, w_v: &id, w_o: &id, n_heads: 1 };
    let oracle = softmax_oracle(&q, &k, &v);
    let mha = multi_head_attention(&q, &k, &v, &w).map_err(|e| e.to_string())?;
    let sdp = scaled_dot_attention(&q, &k, &v).map_err(|e| e.to_string())?;
    let diff = mha.max_abs_diff(&oracle).max(sdp.max_abs_diff(&oracle));
    ensure!(diff <= 1e-9, "identity reduction differs by {diff:e}");
    Ok(format!(
        "{} causal + {} bidirectional maps, {rows} rows, max row-sum error {worst_sum:.1e}; reduction diff {diff:.1e}",
        trace.causal.len(),
        trace.bidirectional.len()
    ))
}

fn c05_gradients() -> Outcome {
    let vocab = tiny_vocab();
    let mut state = ModelState::new(small_config(&vocab), vocab, 5).map_err(|e| e.to_string())?;
    let sample = hand_sample();
    let control = Some(Sentiment::Positive);
    let (_, grads) = sample_loss(&state, &sample, control).map_err(|e| e.to_string())?;
    let sizes: Vec<(usize, usize)> = state.params.iter().map(|(id, _, m)| (id, m.len())).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(55);
    let h = 1e-3;
    let (mut checked, mut zero_skipped, mut worst): (usize, usize, f64) = (0, 0, 0.0);
    let mut attempts = 0;
    while checked < 20 {
        attempts += 1;
        ensure!(attempts < 10_000, "could not find 20 parameters with a gradient");
        let (id, len) = sizes[rng.gen_range(0..sizes.len())];
        let idx = rng.gen_range(0..len);
        let analytic = grads[id].as_ref().map_or(0.0, |g| g.data[idx]);
        let original = state.params.get(id).data[idx];
        state.params.get_mut(id).data[idx] = original + h;
        let up = sample_loss(&state, &sample, control).map_err(|e| e.to_string())?.0;
        state.params.get_mut(id).data[idx] = original - h;
        let down = sample_loss(&state, &sample, control).map_err(|e| e.to_string())?.0;
        state.params.get_mut(id).data[idx] = original;
        let numeric = (up - down) / (2.0 * h);
        if analytic == 0.0 {
            // parameters outside the computation (unused embedding rows)
            ensure!(numeric.abs() < 1e-9, "{}[{idx}]: analytic 0, numeric {numeric:e}", state.params.name(id));
            zero_skipped += 1;
            continue;
        }
        let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs());
        ensure!(
            rel <= 1e-4,
            "{}[{idx}]: analytic {analytic:e}, numeric {numeric:e}, rel {rel:e}",
            state.params.name(id)
        );
        worst = worst.max(rel);
        checked += 1;
    }
    Ok(format!("20 parameters, max relative error {worst:.2e} ({zero_skipped} untouched parameters skipped)"))
}

struct Pipeline {
    corpus: Corpus,
    vocab: Vocabulary,
    train: Vec<Sample>,
    test: Vec<Sample>,
}

/// Synthetic corpus written to disk, ingested back, annotated, split by
/// post and turned into samples.
fn synthetic_pipeline(n_posts: usize, seed: u64) -> Result<Pipeline, String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    generate_synthetic_corpus(seed, n_posts).and_then(|s| s.write_to_dir(dir.path())).map_err(|e| e.to_string())?;
    let (raw, report) = read_corpus_csv(&dir.path().join("corpus.csv")).map_err(|e| e.to_string())?;
    ensure!(report.violations.is_empty(), "ingest violations: {:?}", report.violations);
    let (corpus, _) = annotate_corpus(&raw.preprocessed(), &Ensemble::fallback()).map_err(|e| e.to_string())?;
    let fold = split_folds(&corpus, 5, seed).map_err(|e| e.to_string())?.swap_remove(0);
    let vocab = Vocabulary::from_posts(&corpus, &fold.train, 1);
    let images = FsImageSource::new(dir.path());
    let opts = SampleOptions::default();
    let (train, _) = build_samples(&corpus, &fold.train, &vocab, &images, &opts);
    let (test, _) = build_samples(&corpus, &fold.test, &vocab, &images, &opts);
    Ok(Pipeline { corpus, vocab, train, test })
}

fn c06_controllability() -> Outcome {
    let p = synthetic_pipeline(200, 42)?;
    let mut state =
        ModelState::new(ModelConfig::desk(p.vocab.len()), p.vocab.clone(), 42).map_err(|e| e.to_string())?;
    let report = train(&mut state, &p.train, &TrainConfig { epochs: 10, seed: 42, ..TrainConfig::default() })
        .map_err(|e| e.to_string())?;
    let eval = evaluate(&state, &p.test, &p.corpus, &Ensemble::fallback(), &HashEmbedder, &BeamOptions::default())
        .map_err(|e| e.to_string())?;
    let r = &eval.report;
    let detail = format!(
        "{} train / {} test samples, final loss {:.3}; usent {:.2}% csent {:.2}% delta {:.2} points (skipped {}); BLEU {:.4} MRR {:.3}",
        p.train.len(),
        p.test.len(),
        report.epoch_losses.last().copied().unwrap_or(f64::NAN),
        r.usent_acc,
        r.csent_acc,
        r.control_acc,
        r.skipped,
        r.bleu,
        r.mrr
    );
    ensure!(r.control_acc >= 10.0, "{detail}");
    Ok(detail)
}

fn c07_bypass() -> Outcome {
    let p = synthetic_pipeline(200, 7)?;
    let cfg = ModelConfig { control_x: 0.0, ..ModelConfig::desk(p.vocab.len()) };
    let mut state = ModelState::new(cfg, p.vocab.clone(), 7).map_err(|e| e.to_string())?;
    train(&mut state, &p.train, &TrainConfig { epochs: 1, seed: 7, ..TrainConfig::default() })
        .map_err(|e| e.to_string())?;
    ensure!(p.test.len() >= 50, "only {} test samples", p.test.len());
    let beam = BeamOptions::default();
    for s in &p.test[..50] {
        let gen = |sent| {
            beam_search_generate(&state, &s.text_tokens, &s.images[..], sent, &beam)
                .map(|b| b.into_iter().map(|g| g.tokens).collect::<Vec<_>>())
                .map_err(|e| e.to_string())
        };
        let free = gen(None)?;
        for sent in [Sentiment::Negative, Sentiment::Positive] {
            ensure!(gen(Some(sent))? == free, "post {} differs under {sent:?}", s.post_id);
        }
    }
    Ok("50 samples, all beams identical under both sentiments".into())
}

fn c08_metrics() -> Outcome {
    let words = ["rain", "goal", "vote", "cake", "band", "tax", "happy", "sad", "storm", "river"];
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let text = |rng: &mut ChaCha8Rng| {
        (0..rng.gen_range(1..5)).map(|_| words[rng.gen_range(0..words.len())]).collect::<Vec<_>>().join(" ")
    };
    for instance in 0..100 {
        let n = rng.gen_range(1..20);
        let mut ranks = Vec::with_capacity(n);
        let mut oracle_ranks = Vec::with_capacity(n);
        for _ in 0..n {
            let feedback = text(&mut rng);
            let comments: Vec<String> = (0..rng.gen_range(1..12)).map(|_| text(&mut rng)).collect();
            let refs: Vec<&str> = comments.iter().map(String::as_str).collect();
            ranks.push(rank_feedback(&feedback, &refs, &HashEmbedder).map_err(|e| e.to_string())?.rank_j);
            let f = fallback_embed(&feedback).map_err(|e| e.to_string())?;
            let mut best = (0, f64::NEG_INFINITY);
            for (j, c) in comments.iter().enumerate() {
                let e = fallback_embed(c).map_err(|e| e.to_string())?;
                let s: f64 = f.iter().zip(&e).map(|(a, b)| a * b).sum();
                if s > best.1 + 1e-12 {
                    best = (j, s);
                }
            }
            oracle_ranks.push(best.0 + 1);
        }
        ensure!(ranks == oracle_ranks, "instance {instance}: ranks {ranks:?} vs {oracle_ranks:?}");
        let mut inv = 0.0;
        for &r in &ranks {
            inv += 1.0 / r as f64;
        }
        let mrr = mean_reciprocal_rank(&ranks).map_err(|e| e.to_string())?;
        ensure!(mrr == inv / n as f64, "instance {instance}: MRR {mrr} vs {}", inv / n as f64);
        for k in [1, 3, 5, 10] {
            let mut hits = 0;
            for &r in &ranks {
                if r <= k {
                    hits += 1;
                }
            }
            let got = recall_at_k(&ranks, k).map_err(|e| e.to_string())?;
            ensure!(got == hits as f64 / n as f64, "instance {instance}: recall@{k} {got}");
        }
    }

    let w = |s: &str| s.split(' ').map(str::to_string).collect::<Vec<_>>();
    let close = |a: f64, b: f64| (a - b).abs() <= 1e-6;
    let cand = w("the cat sat on the mat");
    // p = (6/6, 4/5, 3/4, 2/3), brevity penalty exp(1 - 7/6)
    let b1 = bleu(&cand, &[w("the cat sat on the red mat")], BLEU_MAX_N);
    ensure!(close(b1, 0.6731821382), "BLEU {b1}");
    // no 4-gram match: smoothed numerator 1e-9
    let b2 = bleu(&cand, &[w("the cat is on the mat")], BLEU_MAX_N);
    ensure!(close(b2, 0.0025406637), "smoothed BLEU {b2}");
    ensure!(bleu(&cand, &[cand.clone()], BLEU_MAX_N) == 1.0, "identical BLEU");
    // LCS 3, P = 1, R = 1/2, beta 1.2
    let r = rouge_l(&w("the cat sat"), &w("the cat sat on the mat"));
    ensure!(close(r, 0.6288659794), "ROUGE-L {r}");
    let stats = CorpusStats::from_documents(&[vec![w("a b")], vec![w("a c")]]);
    let c1 = cider(&w("a b"), &[w("a b")], &stats).map_err(|e| e.to_string())?;
    ensure!(close(c1, 0.5), "CIDEr {c1}");
    // unigram cosine 1, bigram cosine 1/sqrt(2), no 3- or 4-grams in the reference
    let c2 = cider(&w("a b b"), &[w("a b")], &stats).map_err(|e| e.to_string())?;
    ensure!(close(c2, 0.4267766953), "CIDEr {c2}");
    Ok("100 ranking instances exact; BLEU, ROUGE-L, CIDEr fixtures within 1e-6".into())
}

/// Replays a fixed verdict for each comment text.
struct Scripted {
    slot: usize,
    table: Arc<HashMap<String, [ScorerVerdict; 4]>>,
}

impl SentimentScorer for Scripted {
    fn name(&self) -> &str {
        "scripted"
    }

    fn score(&self, text: &str) -> sentifeed::Result<ScorerVerdict> {
        Ok(self.table[text][self.slot])
    }
}

/// Label from integer arithmetic: confidences in thousandths, so
/// `8000 * mean = sum(polarity * c + 1000)`.
fn oracle_label(v: &[(i8, u32); 4]) -> (Option<Sentiment>, &'static str) {
    let pos = v.iter().filter(|x| x.0 == 1).count();
    let majority = match pos {
        3 | 4 => Some(Sentiment::Positive),
        0 | 1 => Some(Sentiment::Negative),
        _ => return (None, "majority"),
    };
    let sum: i64 = v.iter().map(|&(p, c)| i64::from(p) * i64::from(c) + 1000).sum();
    if sum > 3920 && sum < 4080 {
        return (None, "margin");
    }
    (majority, "kept")
}

fn c09_annotation() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut verdicts: Vec<[(i8, u32); 4]> = vec![
        // means 0.49, 0.495 and 0.51 with a 3-of-4 positive majority
        [(1, 0), (1, 0), (1, 0), (-1, 80)],
        [(1, 0), (1, 0), (1, 0), (-1, 40)],
        [(1, 40), (1, 40), (1, 40), (-1, 40)],
    ];
    for _ in 0..400 {
        verdicts.push(std::array::from_fn(|_| {
            let p = if rng.gen_bool(0.5) { 1 } else { -1 };
            // bias towards low confidence so the margin is exercised
            (p, if rng.gen_bool(0.5) { rng.gen_range(0..60) } else { rng.gen_range(0..=1000) })
        }));
    }
    let mut table = HashMap::new();
    let mut comments = Vec::new();
    for (i, v) in verdicts.iter().enumerate() {
        let text = format!("comment{i}");
        let sv: [ScorerVerdict; 4] =
            std::array::from_fn(|j| ScorerVerdict::new(v[j].0, f64::from(v[j].1) / 1000.0).unwrap());
        table.insert(text.clone(), sv);
        comments.push(Comment { text, likes: 0, relevance_rank: i as u32 + 1, sentiment: Label::Excluded });
    }
    let table = Arc::new(table);
    let scorers: Vec<Box<dyn SentimentScorer>> =
        (0..4).map(|slot| Box::new(Scripted { slot, table: Arc::clone(&table) }) as Box<dyn SentimentScorer>).collect();
    let ensemble = Ensemble::new(scorers).map_err(|e| e.to_string())?;
    let corpus = Corpus {
        posts: vec![Post {
            post_id: "p".into(),
            title: String::new(),
            body: "body".into(),
            image_refs: Vec::new(),
            post_likes: 0,
            shares: 0,
            comments,
        }],
    };
    let (labelled, report) = annotate_corpus(&corpus, &ensemble).map_err(|e| e.to_string())?;

    let (mut kept, mut by_majority, mut by_margin) = (0, 0, 0);
    for (v, c) in verdicts.iter().zip(&labelled.posts[0].comments) {
        let (label, why) = oracle_label(v);
        match why {
            "kept" => kept += 1,
            "majority" => by_majority += 1,
            _ => by_margin += 1,
        }
        ensure!(c.sentiment.sentiment() == label, "{}: {:?} vs oracle {label:?} ({why})", c.text, c.sentiment);
    }
    ensure!(
        (report.total, report.retained, report.xx_majority, report.xx_margin)
            == (verdicts.len(), kept, by_majority, by_margin),
        "report {report:?} vs oracle kept {kept}, majority {by_majority}, margin {by_margin}"
    );
    let boundary: Vec<Label> = labelled.posts[0].comments[..3].iter().map(|c| c.sentiment).collect();
    let expected = [Label::Known(Sentiment::Positive), Label::Excluded, Label::Known(Sentiment::Positive)];
    ensure!(boundary == expected, "boundary labels {boundary:?}");
    Ok(format!(
        "{} verdicts: {kept} kept, {by_majority} no majority, {by_margin} in margin; 0.49/0.495/0.51 -> kept/XX/kept",
        verdicts.len()
    ))
}

/// Next-token distribution depends only on the previous token.
struct HandSet;

const A: usize = 2;
const B: usize = 3;

impl StepModel for HandSet {
    fn next_log_probs(&self, prefix: &[usize]) -> sentifeed::Result<Vec<f64>> {
        // ids: 0 BOS, 1 EOS, 2 a, 3 b
        let p = match *prefix.last().unwrap() {
            0 => [0.2f64, 0.5, 0.3],
            A => [0.4, 0.1, 0.5],
            _ => [0.6, 0.3, 0.1],
        };
        Ok(vec![f64::NEG_INFINITY, p[0].ln(), p[1].ln(), p[2].ln()])
    }
}

fn c10_beam() -> Outcome {
    let max_len = 4;
    let opts = BeamOptions { beam_size: 64, max_len, bos: 0, eos: 1 };
    let model = HandSet;
    // every EOS-terminated sequence within max_len, plus the capped ones
    let mut all: Vec<(Vec<usize>, f64)> = Vec::new();
    for len in 0..=max_len {
        for code in 0..1usize << len {
            let mut toks: Vec<usize> = (0..len).map(|i| if code >> i & 1 == 1 { B } else { A }).collect();
            if len < max_len {
                toks.push(1);
            }
            let mut prefix = vec![0];
            let mut lp = 0.0;
            for &t in &toks {
                lp += model.next_log_probs(&prefix).unwrap()[t];
                prefix.push(t);
            }
            all.push((toks, lp));
        }
    }
    let score = |x: &(Vec<usize>, f64)| x.1 / x.0.len() as f64;
    all.sort_by(|x, y| score(y).total_cmp(&score(x)).then_with(|| x.0.cmp(&y.0)));
    let beams = beam_search(&model, &opts).map_err(|e| e.to_string())?;
    ensure!(beams.len() == all.len(), "{} beams for {} sequences", beams.len(), all.len());
    for (b, (toks, lp)) in beams.iter().zip(&all) {
        ensure!(&b.tokens == toks && (b.log_prob - lp).abs() < 1e-12, "beam {:?} vs {toks:?}", b.tokens);
    }
    let one = beam_search(&model, &BeamOptions { beam_size: 1, ..opts }).map_err(|e| e.to_string())?;
    let greedy = greedy_decode(&model, &opts).map_err(|e| e.to_string())?;
    ensure!(
        one.len() == 1 && one[0].tokens == greedy.tokens,
        "beam 1 {:?} vs greedy {:?}",
        one[0].tokens,
        greedy.tokens
    );
    Ok(format!("{} sequences enumerated and matched; beam 1 = greedy {:?}", all.len(), greedy.tokens))
}

fn c11_dice() -> Outcome {
    let close = |a: f64, b: f64| (a - b).abs() <= 1e-4;
    let a = [true, true, true, false, false];
    let b = [false, true, true, true, false];
    ensure!(dice_coefficient(&a, &a).map_err(|e| e.to_string())? == 1.0, "identical");
    ensure!(dice_coefficient(&[true, false], &[false, true]).map_err(|e| e.to_string())? == 0.0, "disjoint");
    let d = dice_coefficient(&a, &b).map_err(|e| e.to_string())?;
    ensure!(close(d, 0.6667), "2-of-3 overlap gave {d}");

    // five horizontal regions with piecewise-constant importance
    let side = IMAGE_SIDE;
    let weights = [1.0, 2.0, 3.0, 4.0, 5.0];
    let mut region_of_row = Vec::with_capacity(side);
    for (r, h) in run_sizes(side, weights.len()).into_iter().enumerate() {
        region_of_row.extend(std::iter::repeat(r).take(h));
    }
    let region_size: Vec<f64> =
        (0..weights.len()).map(|r| (region_of_row.iter().filter(|&&x| x == r).count() * side) as f64).collect();
    let map_for = |_: usize, k: usize| {
        let p = partition_features(side * side, k, Modality::Image)?;
        let owner = p.owner();
        let game = FnGame {
            n: k,
            f: |s: &[bool]| {
                let mut kept = [0usize; 5];
                for (px, &seg) in owner.iter().enumerate() {
                    if s[seg] {
                        kept[region_of_row[px / side]] += 1;
                    }
                }
                Ok((0..5).map(|r| weights[r] * kept[r] as f64 / region_size[r]).sum())
            },
        };
        let (phi, _) = shapley_auto(&game)?;
        let kaap: Vec<f64> = phi.iter().map(|v| v / k as f64).collect();
        p.per_feature(&kaap)
    };
    let sel = select_k_with(2..=30, 1, map_for).map_err(|e| e.to_string())?;
    let curve: Vec<String> = sel.curve.iter().map(|(k, d)| format!("{k}:{d:.3}")).collect();
    let detail = format!("selected k = {} (converged {}), dice curve {}", sel.k, sel.converged, curve.join(" "));
    ensure!(sel.k <= 8, "{detail}");
    Ok(detail)
}
