//! Corpus ingestion: text normalization, duplicate removal, two-sentence
//! segmentation and time bucketing.
//!
//! Records travel as newline-delimited JSON. Raw posts use the fields
//! `id, channel, author, date, text, fwd_from, refs`; emitted units repeat
//! those fields (with `text` replaced by the unit text) and add
//! `unit_id, post_id, timestep`.

use std::collections::{BTreeMap, HashMap};
use std::io::{BufRead, Write};
use std::sync::LazyLock;

use chrono::{DateTime, Duration, Utc};
use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Units shorter than this (in whitespace tokens) are dropped.
pub const MIN_WORDS: usize = 4;

/// Sentences per document unit.
pub const SENTENCES_PER_UNIT: usize = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawPost {
    #[serde(rename = "id")]
    pub post_id: String,
    #[serde(rename = "channel")]
    pub channel_id: String,
    #[serde(rename = "author", default)]
    pub author_id: Option<String>,
    #[serde(rename = "date")]
    pub timestamp: DateTime<Utc>,
    pub text: String,
    #[serde(default)]
    pub fwd_from: Option<String>,
    #[serde(rename = "refs", default)]
    pub referenced_channels: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DocUnit {
    pub unit_id: String,
    pub post_id: String,
    #[serde(rename = "channel")]
    pub channel_id: String,
    #[serde(rename = "author", default)]
    pub author_id: Option<String>,
    #[serde(rename = "date")]
    pub timestamp: DateTime<Utc>,
    pub timestep: u32,
    pub text: String,
    #[serde(default)]
    pub fwd_from: Option<String>,
    #[serde(rename = "refs", default)]
    pub referenced_channels: Vec<String>,
}

/// Wire form of a unit: the raw-post layout plus unit fields.
#[derive(Serialize, Deserialize)]
struct UnitRecord {
    id: String,
    #[serde(flatten)]
    unit: DocUnit,
}

static URL_TOKEN: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)([a-z][a-z0-9+.\-]*://|^\W*www\.)").unwrap());

static EMOJI: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(
        r"[\p{Extended_Pictographic}\p{Emoji_Presentation}\p{Emoji_Modifier}\p{Regional_Indicator}\u{200D}\u{FE0E}\u{FE0F}\u{20E3}\u{E0020}-\u{E007F}]",
    )
    .unwrap()
});

/// Strips URLs, emoji and hashtags, then collapses whitespace.
///
/// URLs and hashtags are removed as whole whitespace-delimited tokens.
pub fn normalize_text(raw: &str) -> String {
    let without_emoji = EMOJI.replace_all(raw, "");
    let mut out = String::with_capacity(without_emoji.len());
    for token in without_emoji.split_whitespace() {
        if token.starts_with('#') || URL_TOKEN.is_match(token) {
            continue;
        }
        if !out.is_empty() {
            out.push(' ');
        }
        out.push_str(token);
    }
    out
}

pub fn word_count(text: &str) -> usize {
    text.split_whitespace().count()
}

/// Drops repeated (normalized text, author) pairs, keeping the earliest post.
///
/// Posts without an author are keyed by their channel. Equal timestamps
/// resolve to the lexicographically smallest post id so the surviving set
/// does not depend on input order. Survivors keep their input order.
pub fn dedupe(posts: Vec<RawPost>) -> Vec<RawPost> {
    let mut best: HashMap<(String, String), usize> = HashMap::new();
    for (idx, post) in posts.iter().enumerate() {
        let author = post.author_id.as_ref().unwrap_or(&post.channel_id).clone();
        let key = (normalize_text(&post.text), author);
        match best.get(&key) {
            Some(&cur) => {
                let incumbent = &posts[cur];
                let earlier = (post.timestamp, &post.post_id) < (incumbent.timestamp, &incumbent.post_id);
                if earlier {
                    best.insert(key, idx);
                }
            }
            None => {
                best.insert(key, idx);
            }
        }
    }
    let mut keep = vec![false; posts.len()];
    for idx in best.into_values() {
        keep[idx] = true;
    }
    posts
        .into_iter()
        .zip(keep)
        .filter_map(|(p, k)| k.then_some(p))
        .collect()
}

fn is_terminal(c: char) -> bool {
    matches!(c, '.' | '!' | '?' | '…')
}

/// Splits text into sentences at runs of terminal punctuation that are
/// followed by whitespace or the end of the text.
pub fn split_sentences(text: &str) -> Vec<String> {
    let chars: Vec<(usize, char)> = text.char_indices().collect();
    let mut sentences = Vec::new();
    let mut start = 0usize;
    let mut i = 0usize;
    while i < chars.len() {
        if is_terminal(chars[i].1) {
            let mut j = i;
            while j + 1 < chars.len() && is_terminal(chars[j + 1].1) {
                j += 1;
            }
            let at_boundary = j + 1 == chars.len() || chars[j + 1].1.is_whitespace();
            if at_boundary {
                let end = chars[j].0 + chars[j].1.len_utf8();
                let sentence = text[start..end].trim();
                if !sentence.is_empty() {
                    sentences.push(sentence.to_string());
                }
                start = end;
            }
            i = j + 1;
        } else {
            i += 1;
        }
    }
    let tail = text[start..].trim();
    if !tail.is_empty() {
        sentences.push(tail.to_string());
    }
    sentences
}

/// Groups sentences into disjoint consecutive pairs; an odd trailing
/// sentence forms its own group.
pub fn pair_sentences(sentences: &[String]) -> Vec<String> {
    sentences
        .chunks(SENTENCES_PER_UNIT)
        .map(|chunk| chunk.join(" "))
        .collect()
}

/// Cuts a normalized post into two-sentence units of at least four words.
///
/// Unit ids are `<post_id>#<k>` where `k` is the pair index before the
/// short-unit filter, so ids stay stable if the word rule changes.
/// `timestep` is left at 0 until [`bucketize`].
pub fn segment(post: &RawPost) -> Vec<DocUnit> {
    let sentences = split_sentences(&post.text);
    pair_sentences(&sentences)
        .into_iter()
        .enumerate()
        .filter(|(_, text)| word_count(text) >= MIN_WORDS)
        .map(|(k, text)| DocUnit {
            unit_id: format!("{}#{}", post.post_id, k),
            post_id: post.post_id.clone(),
            channel_id: post.channel_id.clone(),
            author_id: post.author_id.clone(),
            timestamp: post.timestamp,
            timestep: 0,
            text,
            fwd_from: post.fwd_from.clone(),
            referenced_channels: post.referenced_channels.clone(),
        })
        .collect()
}

pub fn timestep_of(timestamp: DateTime<Utc>, corpus_start: DateTime<Utc>, window: Duration) -> Result<u32> {
    if window <= Duration::zero() {
        return Err(Error::Domain("window length must be positive".into()));
    }
    if timestamp < corpus_start {
        return Err(Error::Range(format!(
            "timestamp {timestamp} precedes corpus start {corpus_start}"
        )));
    }
    let offset = (timestamp - corpus_start).num_milliseconds();
    let step = offset / window.num_milliseconds();
    u32::try_from(step).map_err(|_| Error::Range(format!("timestep {step} out of range")))
}

/// Assigns every unit to the batch of its window index.
pub fn bucketize(
    units: Vec<DocUnit>,
    corpus_start: DateTime<Utc>,
    window: Duration,
) -> Result<BTreeMap<u32, Vec<DocUnit>>> {
    let mut batches: BTreeMap<u32, Vec<DocUnit>> = BTreeMap::new();
    for mut unit in units {
        unit.timestep = timestep_of(unit.timestamp, corpus_start, window)?;
        batches.entry(unit.timestep).or_default().push(unit);
    }
    Ok(batches)
}

/// Full ingest: normalize, dedupe, segment and bucket. Units come back in
/// (timestep, input) order.
pub fn ingest(posts: Vec<RawPost>, corpus_start: DateTime<Utc>, window: Duration) -> Result<Vec<DocUnit>> {
    let normalized: Vec<RawPost> = posts
        .into_iter()
        .map(|mut p| {
            p.text = normalize_text(&p.text);
            p
        })
        .collect();
    let units: Vec<DocUnit> = dedupe(normalized).iter().flat_map(segment).collect();
    Ok(bucketize(units, corpus_start, window)?
        .into_values()
        .flatten()
        .collect())
}

pub fn read_posts(reader: impl BufRead) -> Result<Vec<RawPost>> {
    read_jsonl(reader, "post record")
}

pub fn read_units(reader: impl BufRead) -> Result<Vec<DocUnit>> {
    let records: Vec<UnitRecord> = read_jsonl(reader, "unit record")?;
    Ok(records.into_iter().map(|r| r.unit).collect())
}

pub fn write_units(mut writer: impl Write, units: &[DocUnit]) -> std::io::Result<()> {
    for unit in units {
        let record = UnitRecord {
            id: unit.post_id.clone(),
            unit: unit.clone(),
        };
        serde_json::to_writer(&mut writer, &record)?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}

/// Drops a trailing partial line (left by an interrupted append). Returns
/// whether the file was changed.
pub(crate) fn repair_jsonl_tail(path: &std::path::Path) -> Result<bool> {
    let bytes = match std::fs::read(path) {
        Ok(b) => b,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(false),
        Err(e) => return Err(Error::io(path, e)),
    };
    if bytes.is_empty() || bytes.ends_with(b"\n") {
        return Ok(false);
    }
    let keep = bytes.iter().rposition(|&b| b == b'\n').map_or(0, |i| i + 1);
    let f = std::fs::OpenOptions::new().write(true).open(path).map_err(|e| Error::io(path, e))?;
    f.set_len(keep as u64).map_err(|e| Error::io(path, e))?;
    f.sync_all().map_err(|e| Error::io(path, e))?;
    Ok(true)
}

pub(crate) fn read_jsonl<T: serde::de::DeserializeOwned>(reader: impl BufRead, what: &str) -> Result<Vec<T>> {
    let mut out = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(format!("<{what} line {}>", n + 1), e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(&line).map_err(|e| Error::json(format!("{what} on line {}", n + 1), e))?;
        out.push(record);
    }
    Ok(out)
}
