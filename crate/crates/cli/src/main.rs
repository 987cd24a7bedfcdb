mod commands;
mod config;
mod record;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use sentifeed::corpus::Sentiment;
use sentifeed::{Error, Result};

use crate::commands::{Ctx, GenerateInput};
use crate::config::{Preset, RunConfig};

/// Sentiment-controlled feedback generation with attribution.
///
/// Exit codes: 0 success, 1 runtime failure (I/O, divergence, unreadable
/// image), 2 validation failure (bad input, config or arguments).
#[derive(Parser)]
#[command(name = "sentifeed", version)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// TOML run configuration; flags below override its fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    beam_size: Option<usize>,
    /// Percent of control-layer units zeroed per sentiment.
    #[arg(long, global = true)]
    control_x: Option<f64>,
    #[arg(long, global = true)]
    k_img: Option<usize>,
    #[arg(long, global = true)]
    k_txt: Option<usize>,
    #[arg(long, global = true)]
    folds: Option<usize>,
    /// Held-out fold index.
    #[arg(long, global = true)]
    fold: Option<usize>,
    #[arg(long, global = true)]
    epochs: Option<usize>,
    #[arg(long, global = true, value_parser = parse_preset)]
    preset: Option<Preset>,
    #[arg(long, global = true, default_value = ".")]
    out_dir: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic corpus (corpus.csv and images/) to the output directory.
    Synth {
        #[arg(long, default_value_t = 200)]
        posts: usize,
    },
    /// Validate a corpus CSV and write corpus.json.
    Ingest {
        #[arg(long)]
        csv: PathBuf,
        /// Root for relative image paths; defaults to the CSV's directory.
        #[arg(long)]
        images: Option<PathBuf>,
        /// Drop rows that violate the schema instead of failing.
        #[arg(long)]
        skip_invalid: bool,
    },
    /// Preprocess and relabel comments with the annotation ensemble.
    Annotate {
        #[arg(long)]
        corpus: PathBuf,
    },
    /// Train on all folds but the held-out one; writes model.json.
    Train {
        #[arg(long)]
        corpus: PathBuf,
    },
    /// Beam-search feedback for corpus posts or raw input.
    Generate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long)]
        post_id: Vec<String>,
        /// Raw post text instead of a corpus post.
        #[arg(long)]
        text: Option<String>,
        /// Image files for --text, in slot order.
        #[arg(long)]
        image: Vec<PathBuf>,
        /// 0, 1, or none to disable the control layer.
        #[arg(long, default_value = "none", value_parser = parse_sentiment)]
        sentiment: SentimentArg,
    },
    /// Score the held-out fold: text metrics, ranking and control accuracy.
    Evaluate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        /// Evaluate only the first N test samples.
        #[arg(long)]
        max_samples: Option<usize>,
    },
    /// Attribution heatmaps for one post, per modality and sentiment.
    Attribute {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        /// Defaults to the first held-out post.
        #[arg(long)]
        post_id: Option<String>,
        /// Choose k per modality by adjacent-k mask agreement first.
        #[arg(long)]
        select_k: bool,
    },
    /// Print the effective configuration as TOML.
    Config,
}

/// A requested sentiment; `None` disables the control layer.
#[derive(Clone, Copy, Debug, PartialEq)]
struct SentimentArg(Option<Sentiment>);

fn parse_sentiment(s: &str) -> std::result::Result<SentimentArg, String> {
    match s {
        "none" => Ok(SentimentArg(None)),
        "0" => Ok(SentimentArg(Some(Sentiment::Negative))),
        "1" => Ok(SentimentArg(Some(Sentiment::Positive))),
        other => Err(format!("`{other}` is not one of 0, 1, none")),
    }
}

fn parse_preset(s: &str) -> std::result::Result<Preset, String> {
    match s {
        "paper" => Ok(Preset::Paper),
        "desk" => Ok(Preset::Desk),
        "wide" => Ok(Preset::Wide),
        other => Err(format!("`{other}` is not one of paper, desk, wide")),
    }
}

fn effective_config(g: &Global) -> Result<RunConfig> {
    let mut c = match &g.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(v) = g.seed {
        c.seed = v;
    }
    if let Some(v) = g.beam_size {
        c.generation.beam_size = v;
    }
    if let Some(v) = g.control_x {
        c.control.x_percent = v;
    }
    if let Some(v) = g.k_img {
        c.attribution.k_img = v;
    }
    if let Some(v) = g.k_txt {
        c.attribution.k_txt = v;
    }
    if let Some(v) = g.folds {
        c.data.folds = v;
    }
    if let Some(v) = g.fold {
        c.data.fold = v;
    }
    if let Some(v) = g.epochs {
        c.train.epochs = Some(v);
    }
    if let Some(v) = g.preset {
        c.model.preset = v;
    }
    c.validate()?;
    Ok(c)
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Io { .. } | Error::Diverged { .. } | Error::Image(_) | Error::ZeroVector => 1,
        _ => 2,
    }
}

fn run(cli: Cli) -> Result<()> {
    let config = effective_config(&cli.global)?;
    if let Command::Config = cli.command {
        print!("{}", config.to_toml());
        return Ok(());
    }
    let out_dir = cli.global.out_dir;
    std::fs::create_dir_all(&out_dir).map_err(|e| Error::io(&out_dir, e))?;
    let ctx = Ctx { config, out_dir };
    match cli.command {
        Command::Synth { posts } => commands::synth(&ctx, posts),
        Command::Ingest { csv, images, skip_invalid } => commands::ingest(&ctx, &csv, images.as_deref(), skip_invalid),
        Command::Annotate { corpus } => commands::annotate(&ctx, &corpus),
        Command::Train { corpus } => commands::train_model(&ctx, &corpus),
        Command::Generate { model, corpus, post_id, text, image, sentiment } => {
            let input = GenerateInput { corpus, post_ids: post_id, text, images: image, sentiment: sentiment.0 };
            commands::generate(&ctx, &model, &input)
        }
        Command::Evaluate { model, corpus, max_samples } => {
            commands::evaluate_model(&ctx, &model, &corpus, max_samples)
        }
        Command::Attribute { model, corpus, post_id, select_k } => {
            commands::attribute(&ctx, &model, &corpus, post_id.as_deref(), select_k)
        }
        Command::Config => unreachable!("handled above"),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).format_timestamp(None).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
