//! Posts, corpora, and streaming ingestion.

use std::collections::HashMap;
use std::fmt;
use std::io::{self, BufRead, Write};

use indexmap::IndexMap;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use unicode_normalization::UnicodeNormalization;

use crate::lexicon::{MatchPolicy, TermMatcher};
use crate::par;

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("failed to read input: {0}")]
    Io(#[from] io::Error),
    #[error("csv input unreadable: {0}")]
    Csv(String),
    #[error("unknown input format {0:?} (expected jsonl or csv)")]
    UnknownFormat(String),
    #[error("cannot sample {requested} posts from a corpus of {available}")]
    SampleTooLarge { requested: usize, available: usize },
    #[error("filter term must be nonempty")]
    EmptyTerm,
    #[error("failed to serialize post {id}: {source}")]
    Serialize {
        id: String,
        source: serde_json::Error,
    },
}

/// One social-media post.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Post {
    pub id: String,
    pub text: String,
    #[serde(default)]
    pub created_at: Option<String>,
    #[serde(default)]
    pub source: String,
    #[serde(default)]
    pub meta: serde_json::Map<String, serde_json::Value>,
}

impl Post {
    pub fn new(id: impl Into<String>, text: impl Into<String>) -> Self {
        Post {
            id: id.into(),
            text: text.into(),
            created_at: None,
            source: String::new(),
            meta: serde_json::Map::new(),
        }
    }

    pub fn with_source(mut self, source: impl Into<String>) -> Self {
        self.source = source.into();
        self
    }
}

/// One step in the derivation of a corpus from raw input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FilterStep {
    Term { term: String, policy: MatchPolicy },
    Lexicon { name: String },
    Sample { n: usize, seed: u64 },
    Substitute { pairs: usize },
    Concat { sources: Vec<String> },
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Provenance {
    pub source: String,
    pub ingested_at: String,
    pub filters: Vec<FilterStep>,
}

/// An ordered, id-unique collection of posts plus how it was derived.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Corpus {
    posts: Vec<Post>,
    pub provenance: Provenance,
}

impl Corpus {
    /// Builds a corpus from posts, keeping the position of the first
    /// occurrence of each id and the content of the last.
    pub fn from_posts(posts: impl IntoIterator<Item = Post>) -> Self {
        let (corpus, _) = Self::dedup(posts);
        corpus
    }

    fn dedup(posts: impl IntoIterator<Item = Post>) -> (Self, usize) {
        let mut by_id: IndexMap<String, Post> = IndexMap::new();
        let mut duplicates = 0;
        for post in posts {
            if by_id.insert(post.id.clone(), post).is_some() {
                duplicates += 1;
            }
        }
        let corpus = Corpus {
            posts: by_id.into_values().collect(),
            provenance: Provenance::default(),
        };
        (corpus, duplicates)
    }

    pub fn posts(&self) -> &[Post] {
        &self.posts
    }

    pub fn into_posts(self) -> Vec<Post> {
        self.posts
    }

    pub fn len(&self) -> usize {
        self.posts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.posts.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.posts.iter().map(|p| p.id.as_str())
    }

    pub fn get(&self, id: &str) -> Option<&Post> {
        self.posts.iter().find(|p| p.id == id)
    }

    /// Index from id to post, for repeated lookups.
    pub fn index(&self) -> HashMap<&str, &Post> {
        self.posts.iter().map(|p| (p.id.as_str(), p)).collect()
    }

    pub fn with_provenance(mut self, provenance: Provenance) -> Self {
        self.provenance = provenance;
        self
    }

    /// Derives a sub-corpus that shares this corpus's provenance plus `step`.
    pub fn derive(&self, posts: Vec<Post>, step: FilterStep) -> Corpus {
        let mut provenance = self.provenance.clone();
        provenance.filters.push(step);
        Corpus { posts, provenance }
    }

    /// Concatenates corpora; later duplicates of an id replace earlier ones.
    pub fn concat(parts: &[&Corpus]) -> Corpus {
        let posts = parts.iter().flat_map(|c| c.posts.iter().cloned());
        let mut out = Corpus::from_posts(posts);
        out.provenance.filters.push(FilterStep::Concat {
            sources: parts.iter().map(|c| c.provenance.source.clone()).collect(),
        });
        out
    }
}

/// [`normalize`] without allocating when the text is already canonical.
pub fn normalized(text: &str) -> std::borrow::Cow<'_, str> {
    let mut prev_space = true;
    let mut clean_ws = true;
    for ch in text.chars() {
        if ch.is_whitespace() {
            if prev_space || ch != ' ' {
                clean_ws = false;
                break;
            }
            prev_space = true;
        } else {
            prev_space = false;
        }
    }
    if clean_ws && !text.ends_with(' ') && unicode_normalization::is_nfc(text) {
        std::borrow::Cow::Borrowed(text)
    } else {
        std::borrow::Cow::Owned(normalize(text))
    }
}

/// Canonical text form used throughout: NFC, whitespace runs collapsed to a
/// single space, ends trimmed. Case and punctuation are untouched.
pub fn normalize(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut pending_space = false;
    for ch in text.nfc() {
        if ch.is_whitespace() {
            pending_space = !out.is_empty();
        } else {
            if pending_space {
                out.push(' ');
                pending_space = false;
            }
            out.push(ch);
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Jsonl,
    Csv,
}

impl Format {
    /// Guesses the format from a file name, defaulting to JSONL.
    pub fn from_path(path: &std::path::Path) -> Format {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("csv") => Format::Csv,
            _ => Format::Jsonl,
        }
    }
}

impl std::str::FromStr for Format {
    type Err = CorpusError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "jsonl" | "ndjson" | "json" => Ok(Format::Jsonl),
            "csv" => Ok(Format::Csv),
            other => Err(CorpusError::UnknownFormat(other.to_string())),
        }
    }
}

/// Why a record was skipped during ingestion.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SkipReason {
    InvalidUtf8,
    MalformedRecord,
    EmptyId,
    EmptyText,
    DuplicateId,
}

impl fmt::Display for SkipReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            SkipReason::InvalidUtf8 => "invalid utf-8",
            SkipReason::MalformedRecord => "malformed record",
            SkipReason::EmptyId => "empty id",
            SkipReason::EmptyText => "empty text",
            SkipReason::DuplicateId => "duplicate id (last record kept)",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct IngestWarning {
    /// 1-based record number in the input.
    pub record: usize,
    pub reason: SkipReason,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct IngestReport {
    pub records: usize,
    pub accepted: usize,
    pub warnings: Vec<IngestWarning>,
}

impl IngestReport {
    pub fn warning_count(&self) -> usize {
        self.warnings.len()
    }

    pub fn count(&self, reason: &SkipReason) -> usize {
        self.warnings.iter().filter(|w| &w.reason == reason).count()
    }
}

/// A record-level outcome from a streaming reader.
#[derive(Debug, Clone, PartialEq)]
pub enum Record {
    Post(Post),
    Skipped(IngestWarning),
}

/// Streams posts out of JSONL, one line at a time.
///
/// Lines that are blank are ignored. Undecodable or malformed lines become
/// [`Record::Skipped`]; only I/O failures end the stream with an error.
pub struct JsonlReader<R> {
    reader: R,
    buf: Vec<u8>,
    record: usize,
}

impl<R: BufRead> JsonlReader<R> {
    pub fn new(reader: R) -> Self {
        JsonlReader {
            reader,
            buf: Vec::with_capacity(1024),
            record: 0,
        }
    }
}

impl<R: BufRead> Iterator for JsonlReader<R> {
    type Item = Result<Record, CorpusError>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            self.buf.clear();
            match self.reader.read_until(b'\n', &mut self.buf) {
                Ok(0) => return None,
                Ok(_) => {}
                Err(e) => return Some(Err(e.into())),
            }
            let line = trim_ascii(&self.buf);
            if line.is_empty() {
                continue;
            }
            self.record += 1;
            let record = self.record;
            let skip = |reason| Some(Ok(Record::Skipped(IngestWarning { record, reason })));
            let Ok(text) = std::str::from_utf8(line) else {
                return skip(SkipReason::InvalidUtf8);
            };
            let post: Post = match serde_json::from_str(text) {
                Ok(p) => p,
                Err(_) => return skip(SkipReason::MalformedRecord),
            };
            return Some(Ok(finish_record(post, record)));
        }
    }
}

fn trim_ascii(bytes: &[u8]) -> &[u8] {
    let start = bytes.iter().position(|b| !b.is_ascii_whitespace());
    let Some(start) = start else { return &[] };
    let end = bytes.iter().rposition(|b| !b.is_ascii_whitespace()).unwrap();
    &bytes[start..=end]
}

fn finish_record(mut post: Post, record: usize) -> Record {
    if post.id.trim().is_empty() {
        return Record::Skipped(IngestWarning {
            record,
            reason: SkipReason::EmptyId,
        });
    }
    post.text = normalize(&post.text);
    if post.text.is_empty() {
        return Record::Skipped(IngestWarning {
            record,
            reason: SkipReason::EmptyText,
        });
    }
    Record::Post(post)
}

/// Streams posts out of CSV with an `id,text,source` header.
pub fn csv_records<R: io::Read>(reader: R) -> impl Iterator<Item = Result<Record, CorpusError>> {
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(reader);
    let columns = rdr.byte_headers().ok().map(|h| {
        let find = |name: &str| h.iter().position(|c| trim_ascii(c).eq_ignore_ascii_case(name.as_bytes()));
        (find("id"), find("text"), find("source"))
    });
    let mut record = 0usize;
    rdr.into_byte_records().map(move |row| {
        record += 1;
        let skip = |reason| Ok(Record::Skipped(IngestWarning { record, reason }));
        let row = match row {
            Ok(r) => r,
            Err(e) if e.is_io_error() => return Err(CorpusError::Csv(e.to_string())),
            Err(_) => return skip(SkipReason::MalformedRecord),
        };
        let Some((Some(id_col), Some(text_col), source_col)) = columns else {
            return skip(SkipReason::MalformedRecord);
        };
        let field = |i: usize| row.get(i).map(std::str::from_utf8);
        let (Some(id), Some(text)) = (field(id_col), field(text_col)) else {
            return skip(SkipReason::MalformedRecord);
        };
        let source = source_col.and_then(field).unwrap_or(Ok(""));
        let (Ok(id), Ok(text), Ok(source)) = (id, text, source) else {
            return skip(SkipReason::InvalidUtf8);
        };
        Ok(finish_record(Post::new(id, text).with_source(source), record))
    })
}

/// Reads a whole input into a corpus.
///
/// Skipped records are tallied in the report. Duplicate ids keep the last
/// record's content at the first record's position.
pub fn ingest<R: BufRead>(
    input: R,
    format: Format,
    source: &str,
) -> Result<(Corpus, IngestReport), CorpusError> {
    let records: Box<dyn Iterator<Item = Result<Record, CorpusError>>> = match format {
        Format::Jsonl => Box::new(JsonlReader::new(input)),
        Format::Csv => Box::new(csv_records(input)),
    };
    let mut report = IngestReport::default();
    let mut by_id: IndexMap<String, Post> = IndexMap::new();
    for rec in records {
        report.records += 1;
        match rec? {
            Record::Post(post) => {
                let record = report.records;
                if by_id.insert(post.id.clone(), post).is_some() {
                    report.warnings.push(IngestWarning {
                        record,
                        reason: SkipReason::DuplicateId,
                    });
                }
            }
            Record::Skipped(w) => report.warnings.push(w),
        }
    }
    report.accepted = by_id.len();
    for w in &report.warnings {
        log::debug!("record {}: {}", w.record, w.reason);
    }
    let corpus = Corpus {
        posts: by_id.into_values().collect(),
        provenance: Provenance {
            source: source.to_string(),
            ingested_at: chrono::Utc::now().to_rfc3339(),
            filters: Vec::new(),
        },
    };
    Ok((corpus, report))
}

/// [`ingest`] from a file; the format defaults to a guess from the extension.
pub fn ingest_path(
    path: &std::path::Path,
    format: Option<Format>,
) -> Result<(Corpus, IngestReport), CorpusError> {
    let file = std::fs::File::open(path)?;
    let format = format.unwrap_or_else(|| Format::from_path(path));
    ingest(io::BufReader::new(file), format, &path.display().to_string())
}

/// Writes one post per line.
pub fn write_jsonl<'a, W: Write>(
    posts: impl IntoIterator<Item = &'a Post>,
    mut out: W,
) -> Result<(), CorpusError> {
    for post in posts {
        serde_json::to_writer(&mut out, post).map_err(|source| CorpusError::Serialize {
            id: post.id.clone(),
            source,
        })?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

/// Posts whose text contains `term` under `policy`.
pub fn filter_by_term(
    corpus: &Corpus,
    term: &str,
    policy: MatchPolicy,
) -> Result<Corpus, CorpusError> {
    let term = normalize(term);
    if term.is_empty() {
        return Err(CorpusError::EmptyTerm);
    }
    let matcher = TermMatcher::new([term.as_str()], policy);
    let posts = par::filter_slice(corpus.posts(), |p| matcher.is_match(&p.text));
    Ok(corpus.derive(posts, FilterStep::Term { term, policy }))
}

/// A uniform random subset of `n` posts in shuffled order.
pub fn sample(corpus: &Corpus, n: usize, seed: u64) -> Result<Corpus, CorpusError> {
    if n > corpus.len() {
        return Err(CorpusError::SampleTooLarge {
            requested: n,
            available: corpus.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut indices = rand::seq::index::sample(&mut rng, corpus.len(), n).into_vec();
    indices.shuffle(&mut rng);
    let posts = indices.into_iter().map(|i| corpus.posts[i].clone()).collect();
    Ok(corpus.derive(posts, FilterStep::Sample { n, seed }))
}
