use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Comment, Corpus, ImageSource, Label, Post};
use crate::error::{Error, Result};

pub const CSV_COLUMNS: [&str; 10] = [
    "post_id",
    "title",
    "body",
    "image_paths",
    "post_likes",
    "shares",
    "comment_text",
    "comment_likes",
    "relevance_rank",
    "sentiment_label",
];

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    /// 1-based line number in the CSV file (the header is line 1).
    pub row: u64,
    pub message: String,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct IngestReport {
    pub rows_read: usize,
    pub rows_ingested: usize,
    pub posts: usize,
    pub violations: Vec<Violation>,
    pub warnings: Vec<String>,
}

impl IngestReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    /// Records a warning for every image reference that cannot be loaded.
    /// Such slots become blank when samples are assembled.
    pub fn check_images(&mut self, corpus: &Corpus, source: &dyn ImageSource) {
        for post in &corpus.posts {
            for r in &post.image_refs {
                if let Err(e) = source.load(r) {
                    self.warnings
                        .push(format!("post `{}`: image `{r}` unreadable, slot will be blank ({e})", post.post_id));
                }
            }
        }
    }
}

pub fn read_corpus_csv(path: &Path) -> Result<(Corpus, IngestReport)> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_corpus(file)
}

/// Parses the CSV layout. A missing column is a hard error; row-level
/// problems are collected as [`Violation`]s and the offending rows skipped.
pub fn read_corpus(reader: impl Read) -> Result<(Corpus, IngestReport)> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).flexible(true).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let mut col = HashMap::new();
    for name in CSV_COLUMNS {
        let idx =
            headers.iter().position(|h| h.trim() == name).ok_or_else(|| Error::MissingColumn(name.to_string()))?;
        col.insert(name, idx);
    }

    let mut report = IngestReport::default();
    let mut posts: Vec<Post> = Vec::new();
    let mut post_rows: Vec<Vec<u64>> = Vec::new();
    let mut by_id: HashMap<String, usize> = HashMap::new();

    for record in rdr.records() {
        report.rows_read += 1;
        let record = match record {
            Ok(r) => r,
            Err(e) => {
                let row = e.position().map_or(0, |p| p.line());
                report.violations.push(Violation { row, message: e.to_string() });
                continue;
            }
        };
        let row = record.position().map_or(0, |p| p.line());
        let field = |name: &str| record.get(col[name]).unwrap_or("").trim();
        let mut problems = Vec::new();
        let mut int = |name: &str| -> u64 {
            field(name).parse::<u64>().unwrap_or_else(|_| {
                problems.push(format!("`{name}` = `{}` is not a non-negative integer", field(name)));
                0
            })
        };
        let post_likes = int("post_likes");
        let shares = int("shares");
        let comment_likes = int("comment_likes");
        let rank = int("relevance_rank");
        if field("relevance_rank").parse::<u64>() == Ok(0) {
            problems.push("`relevance_rank` must be positive".into());
        }
        let label = match field("sentiment_label").parse::<Label>() {
            Ok(l) => Some(l),
            Err(e) => {
                problems.push(e.to_string());
                None
            }
        };
        let post_id = field("post_id");
        if post_id.is_empty() {
            problems.push("`post_id` is empty".into());
        }
        if !problems.is_empty() {
            report.violations.extend(problems.into_iter().map(|message| Violation { row, message }));
            continue;
        }

        let image_refs: Vec<String> =
            field("image_paths").split(';').map(str::trim).filter(|s| !s.is_empty()).map(String::from).collect();
        let idx = *by_id.entry(post_id.to_string()).or_insert_with(|| {
            posts.push(Post {
                post_id: post_id.to_string(),
                title: field("title").to_string(),
                body: field("body").to_string(),
                image_refs: image_refs.clone(),
                post_likes,
                shares,
                comments: Vec::new(),
            });
            post_rows.push(Vec::new());
            posts.len() - 1
        });
        let post = &posts[idx];
        if post.body != field("body") || post.image_refs != image_refs {
            report
                .violations
                .push(Violation { row, message: format!("post `{post_id}` repeats with different body or images") });
            continue;
        }
        post_rows[idx].push(row);
        posts[idx].comments.push(Comment {
            text: field("comment_text").to_string(),
            likes: comment_likes,
            relevance_rank: rank as u32,
            sentiment: label.expect("checked above"),
        });
        report.rows_ingested += 1;
    }

    let mut kept = Vec::with_capacity(posts.len());
    for (post, rows) in posts.into_iter().zip(post_rows) {
        match super::check_ranks(&post) {
            Ok(()) => kept.push(post),
            Err(e) => {
                report.rows_ingested -= rows.len();
                report.violations.extend(rows.iter().map(|&row| Violation { row, message: e.to_string() }));
            }
        }
    }
    report.posts = kept.len();
    Ok((Corpus { posts: kept }, report))
}

pub fn write_corpus_csv(corpus: &Corpus, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_corpus(corpus, file)
}

/// One row per (post, comment) pair, comments in relevance order.
pub fn write_corpus(corpus: &Corpus, writer: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(CSV_COLUMNS)?;
    for post in &corpus.posts {
        let images = post.image_refs.join(";");
        for c in post.ranked_comments() {
            w.write_record([
                post.post_id.as_str(),
                &post.title,
                &post.body,
                &images,
                &post.post_likes.to_string(),
                &post.shares.to_string(),
                &c.text,
                &c.likes.to_string(),
                &c.relevance_rank.to_string(),
                &c.sentiment.to_string(),
            ])?;
        }
    }
    w.flush().map_err(|e| Error::io("<csv writer>", e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const GOOD: &str = "\
post_id,title,body,image_paths,post_likes,shares,comment_text,comment_likes,relevance_rank,sentiment_label
p1,Title,Some body,a.png;b.png,10,2,great news,5,1,1
p1,Title,Some body,a.png;b.png,10,2,awful,3,2,0
p2,T2,Other body,,0,0,hmm,0,1,XX
";

    #[test]
    fn parses_valid_rows() {
        let (corpus, report) = read_corpus(GOOD.as_bytes()).unwrap();
        assert!(report.is_valid(), "{:?}", report.violations);
        assert_eq!(report.rows_ingested, 3);
        assert_eq!(corpus.posts.len(), 2);
        assert_eq!(corpus.posts[0].image_refs, vec!["a.png", "b.png"]);
        assert!(corpus.posts[1].image_refs.is_empty());
        assert_eq!(corpus.posts[1].comments[0].sentiment, Label::Excluded);
    }

    #[test]
    fn missing_column_named() {
        let csv = GOOD.replace(",sentiment_label", "");
        match read_corpus(csv.as_bytes()) {
            Err(Error::MissingColumn(c)) => assert_eq!(c, "sentiment_label"),
            other => panic!("expected missing column, got {other:?}"),
        }
    }

    #[test]
    fn row_violations_carry_line_numbers() {
        let csv = GOOD.replace("hmm,0,1,XX", "hmm,zero,0,XX");
        let (corpus, report) = read_corpus(csv.as_bytes()).unwrap();
        assert!(report.violations.iter().all(|v| v.row == 4), "{:?}", report.violations);
        assert_eq!(corpus.posts.len(), 1);
        assert_eq!(report.violations.len(), 2);
    }

    #[test]
    fn gapped_ranks_reported_per_row() {
        let csv = GOOD.replace("awful,3,2,0", "awful,3,3,0");
        let (corpus, report) = read_corpus(csv.as_bytes()).unwrap();
        assert_eq!(corpus.posts.len(), 1);
        let rows: Vec<u64> = report.violations.iter().map(|v| v.row).collect();
        assert_eq!(rows, vec![2, 3]);
    }

    #[test]
    fn write_then_read() {
        let (corpus, _) = read_corpus(GOOD.as_bytes()).unwrap();
        let mut buf = Vec::new();
        write_corpus(&corpus, &mut buf).unwrap();
        let (again, report) = read_corpus(buf.as_slice()).unwrap();
        assert!(report.is_valid());
        assert_eq!(again, corpus);
    }
}
