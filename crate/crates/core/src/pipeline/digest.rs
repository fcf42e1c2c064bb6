//! Content digests for duplicate detection.
//!
//! HTML is summarized before hashing: attributes are dropped, and so are
//! dates and then all remaining decimal digits, so that pages differing only
//! in counters, timestamps or calendars share a digest. Other content is
//! hashed as is.

use std::sync::OnceLock;

use regex::bytes::Regex;
use xxhash_rust::xxh3::Xxh3;

use super::html::{Token, Tokenizer};

/// Identifies the summarization rules; stored alongside digests.
pub const DIGEST_VERSION: &str = "summary-v1";

fn date_pattern() -> &'static Regex {
    static DATES: OnceLock<Regex> = OnceLock::new();
    DATES.get_or_init(|| {
        let month = "(?:jan(?:uary)?|feb(?:ruary)?|mar(?:ch)?|apr(?:il)?|may|june?|july?|aug(?:ust)?|sep(?:t(?:ember)?)?|oct(?:ober)?|nov(?:ember)?|dec(?:ember)?)";
        let weekday = "(?:(?:mon|tue|wed|thu|fri|sat|sun)[a-z]*\\.?,?\\s+)?";
        let iso = r"\d{4}-\d{2}-\d{2}(?:[T ]\d{2}:\d{2}(?::\d{2}(?:\.\d+)?)?(?:Z|[+-]\d{2}:?\d{2})?)?";
        let numeric = r"\d{1,2}[/.\-]\d{1,2}[/.\-]\d{2,4}";
        let month_first = format!(r"{weekday}{month}\.?\s+\d{{1,2}}(?:st|nd|rd|th)?,?\s+\d{{4}}");
        let day_first = format!(r"{weekday}\d{{1,2}}(?:st|nd|rd|th)?\s+{month}\.?,?\s+\d{{4}}");
        let month_year = format!(r"{month}\.?\s+\d{{4}}");
        Regex::new(&format!(
            "(?i)(?:{iso}|{numeric}|{month_first}|{day_first}|{month_year})"
        ))
        .expect("date pattern compiles")
    })
}

/// Text with dates and digits removed.
pub fn summarize_text(text: &[u8]) -> Vec<u8> {
    let without_dates = date_pattern().replace_all(text, &b""[..]);
    without_dates.iter().copied().filter(|b| !b.is_ascii_digit()).collect()
}

/// The summary that is hashed for an HTML page.
pub fn summarize_html(html: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(html.len() / 2);
    for token in Tokenizer::new(html) {
        match token {
            Token::Start { name, .. } => {
                out.push(b'<');
                out.extend_from_slice(&name);
                out.push(b'>');
            }
            Token::End { name } => {
                out.extend_from_slice(b"</");
                out.extend_from_slice(&name);
                out.push(b'>');
            }
            Token::Text(text) => out.extend_from_slice(&summarize_text(text)),
        }
    }
    out
}

pub fn is_html(content_type: Option<&str>) -> bool {
    content_type.is_some_and(|ct| {
        let ct = ct.to_ascii_lowercase();
        ct.contains("text/html") || ct.contains("application/xhtml")
    })
}

/// 128-bit digest of a response body.
pub fn digest(body: &[u8], content_type: Option<&str>) -> u128 {
    let mut hasher = Xxh3::new();
    if is_html(content_type) {
        hasher.update(&summarize_html(body));
    } else {
        hasher.update(body);
    }
    hasher.digest128()
}
