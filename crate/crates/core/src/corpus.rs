//! Policy ingestion and sentence-aware segmentation.
//!
//! Tokens are maximal runs of non-whitespace characters. A sentence ends at a
//! token whose last character is `.`, `!` or `?`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_MAX_TOKENS: usize = 300;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SourceFormat {
    Plain,
    Html,
}

impl SourceFormat {
    /// `.html`/`.htm` files are markup, everything else is plain text.
    pub fn from_path(path: &std::path::Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("html") || ext.eq_ignore_ascii_case("htm") => {
                SourceFormat::Html
            }
            _ => SourceFormat::Plain,
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum IngestError {
    #[error("policy {0:?} is empty after normalization")]
    EmptyDocument(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolicyDocument {
    pub policy_id: String,
    pub text: String,
    pub source: Option<String>,
    /// Number of invalid UTF-8 sequences replaced during decoding.
    pub replaced_bytes: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub index: usize,
    pub text: String,
    pub token_count: usize,
}

pub fn collapse_whitespace(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn decode_lossy(raw: &[u8]) -> (String, usize) {
    let mut out = String::with_capacity(raw.len());
    let mut replaced = 0;
    for chunk in raw.utf8_chunks() {
        out.push_str(chunk.valid());
        if !chunk.invalid().is_empty() {
            out.push(char::REPLACEMENT_CHARACTER);
            replaced += 1;
        }
    }
    (out, replaced)
}

fn decode_entity(name: &str) -> Option<char> {
    if let Some(num) = name.strip_prefix('#') {
        let code = match num.strip_prefix(['x', 'X']) {
            Some(hex) => u32::from_str_radix(hex, 16).ok()?,
            None => num.parse().ok()?,
        };
        return char::from_u32(code);
    }
    Some(match name {
        "amp" => '&',
        "lt" => '<',
        "gt" => '>',
        "quot" => '"',
        "apos" => '\'',
        "nbsp" => ' ',
        "ndash" => '\u{2013}',
        "mdash" => '\u{2014}',
        "lsquo" => '\u{2018}',
        "rsquo" => '\u{2019}',
        "ldquo" => '\u{201C}',
        "rdquo" => '\u{201D}',
        "hellip" => '\u{2026}',
        "copy" => '\u{00A9}',
        "reg" => '\u{00AE}',
        _ => return None,
    })
}

fn decode_entities(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut rest = text;
    while let Some(amp) = rest.find('&') {
        out.push_str(&rest[..amp]);
        let tail = &rest[amp + 1..];
        let decoded = tail
            .find(';')
            .filter(|&semi| semi <= 10)
            .and_then(|semi| decode_entity(&tail[..semi]).map(|c| (c, semi)));
        match decoded {
            Some((c, semi)) => {
                out.push(c);
                rest = &tail[semi + 1..];
            }
            None => {
                out.push('&');
                rest = tail;
            }
        }
    }
    out.push_str(rest);
    out
}

/// Removes comments, `<script>`/`<style>` bodies and tags. Every removed
/// construct becomes a space so adjacent blocks do not fuse.
pub fn strip_html(html: &str) -> String {
    let lower = html.to_ascii_lowercase();
    let mut out = String::with_capacity(html.len());
    let mut i = 0;
    while i < html.len() {
        let rest = &lower[i..];
        if rest.starts_with("<!--") {
            i = lower[i + 4..].find("-->").map_or(html.len(), |e| i + 4 + e + 3);
            out.push(' ');
        } else if let Some(tag) = ["script", "style"]
            .into_iter()
            .find(|t| rest.starts_with(&format!("<{t}")) && !is_name_char(rest, t.len() + 1))
        {
            let close = format!("</{tag}");
            i = match lower[i..].find(&close) {
                Some(c) => lower[i + c..].find('>').map_or(html.len(), |g| i + c + g + 1),
                None => html.len(),
            };
            out.push(' ');
        } else if rest.starts_with('<') {
            i = lower[i..].find('>').map_or(html.len(), |g| i + g + 1);
            out.push(' ');
        } else {
            let next = lower[i..].find('<').map_or(html.len(), |n| i + n);
            out.push_str(&html[i..next]);
            i = next;
        }
    }
    decode_entities(&out)
}

fn is_name_char(s: &str, at: usize) -> bool {
    s.as_bytes()
        .get(at)
        .is_some_and(|b| b.is_ascii_alphanumeric() || *b == b'-')
}

pub fn ingest(
    policy_id: &str,
    raw: &[u8],
    format: SourceFormat,
) -> Result<PolicyDocument, IngestError> {
    let (decoded, replaced_bytes) = decode_lossy(raw);
    let text = match format {
        SourceFormat::Plain => collapse_whitespace(&decoded),
        SourceFormat::Html => collapse_whitespace(&strip_html(&decoded)),
    };
    if text.is_empty() {
        return Err(IngestError::EmptyDocument(policy_id.to_string()));
    }
    Ok(PolicyDocument {
        policy_id: policy_id.to_string(),
        text,
        source: None,
        replaced_bytes,
    })
}

fn ends_sentence(token: &str) -> bool {
    token.ends_with(['.', '!', '?'])
}

fn sentences(text: &str) -> Vec<Vec<&str>> {
    let mut out = Vec::new();
    let mut current = Vec::new();
    for tok in text.split_whitespace() {
        current.push(tok);
        if ends_sentence(tok) {
            out.push(std::mem::take(&mut current));
        }
    }
    if !current.is_empty() {
        out.push(current);
    }
    out
}

/// Greedy packing of whole sentences into segments of at most `max_tokens`
/// tokens. A sentence longer than the budget is cut at token boundaries into
/// segments of its own.
///
/// Panics if `max_tokens` is zero.
pub fn segment(doc: &PolicyDocument, max_tokens: usize) -> Vec<Segment> {
    segment_text(&doc.text, max_tokens)
}

pub fn segment_text(text: &str, max_tokens: usize) -> Vec<Segment> {
    assert!(max_tokens >= 1, "max_tokens must be positive");
    let mut packed: Vec<Vec<&str>> = Vec::new();
    let mut current: Vec<&str> = Vec::new();
    for sentence in sentences(text) {
        if current.len() + sentence.len() <= max_tokens {
            current.extend(sentence);
            continue;
        }
        if !current.is_empty() {
            packed.push(std::mem::take(&mut current));
        }
        if sentence.len() <= max_tokens {
            current = sentence;
        } else {
            packed.extend(sentence.chunks(max_tokens).map(<[&str]>::to_vec));
        }
    }
    if !current.is_empty() {
        packed.push(current);
    }
    packed
        .into_iter()
        .enumerate()
        .map(|(index, toks)| Segment {
            index,
            token_count: toks.len(),
            text: toks.join(" "),
        })
        .collect()
}
