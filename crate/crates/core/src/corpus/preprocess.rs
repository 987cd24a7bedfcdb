//! Comment and post text normalisation.
//!
//! Stages run in a fixed order: lowercase, emoji/emoticon to words,
//! apostrophe contractions, accent folding, punctuation and digit removal,
//! bare contractions, stop-word removal. The output is a single-space joined
//! sequence of lowercase ASCII words.

use std::collections::{HashMap, HashSet};
use std::sync::OnceLock;

use regex::Regex;
use unicode_normalization::char::is_combining_mark;
use unicode_normalization::UnicodeNormalization;

const STOPWORDS: &str = include_str!("../../assets/stopwords_en.txt");
const CONTRACTIONS: &str = include_str!("../../assets/contractions_en.txt");
const EMOJI: &str = include_str!("../../assets/emoji_en.txt");

struct Tables {
    stopwords: HashSet<&'static str>,
    emoji: Vec<(&'static str, &'static str)>,
    apostrophe_re: Regex,
    contractions: HashMap<&'static str, &'static str>,
}

fn data_lines(text: &'static str) -> impl Iterator<Item = &'static str> {
    text.lines().map(str::trim_end).filter(|l| !l.is_empty() && !l.starts_with('#'))
}

fn tables() -> &'static Tables {
    static TABLES: OnceLock<Tables> = OnceLock::new();
    TABLES.get_or_init(|| {
        let stopwords = data_lines(STOPWORDS).map(str::trim).collect();
        let mut emoji: Vec<_> = data_lines(EMOJI).filter_map(|l| l.split_once('\t')).collect();
        // longest symbols first so multi-codepoint sequences win
        emoji.sort_by_key(|(sym, _)| std::cmp::Reverse(sym.len()));
        let contractions: HashMap<_, _> = data_lines(CONTRACTIONS).filter_map(|l| l.split_once('\t')).collect();
        let mut keys: Vec<&str> = contractions.keys().copied().filter(|k| k.contains('\'')).collect();
        keys.sort_by_key(|k| std::cmp::Reverse(k.len()));
        let alternation = keys.iter().map(|k| regex::escape(k)).collect::<Vec<_>>().join("|");
        let apostrophe_re = Regex::new(&format!(r"\b(?:{alternation})\b")).expect("contraction regex");
        Tables { stopwords, emoji, apostrophe_re, contractions }
    })
}

pub fn is_stopword(word: &str) -> bool {
    tables().stopwords.contains(word)
}

/// Normalises raw text. Returns an empty string when nothing survives.
pub fn preprocess_text(raw: &str) -> String {
    let t = tables();
    let mut text = raw.to_lowercase().replace(['\u{2019}', '\u{2018}', '`'], "'");

    for (symbol, words) in &t.emoji {
        if text.contains(symbol) {
            text = text.replace(symbol, &format!(" {words} "));
        }
    }

    let text = t.apostrophe_re.replace_all(&text, |caps: &regex::Captures<'_>| t.contractions[&caps[0]].to_string());

    let folded: String =
        text.nfkd().filter(|c| !is_combining_mark(*c)).map(|c| if c.is_ascii_lowercase() { c } else { ' ' }).collect();

    let mut out: Vec<&str> = Vec::new();
    for token in folded.split_whitespace() {
        match t.contractions.get(token) {
            Some(expansion) => out.extend(expansion.split(' ')),
            None => out.push(token),
        }
    }
    out.retain(|w| !t.stopwords.contains(w));
    out.join(" ")
}
