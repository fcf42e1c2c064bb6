//! A forgiving HTML tokenizer, enough for link extraction and page
//! summarization. It never fails: malformed markup degrades into text.

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Token<'a> {
    Text(&'a [u8]),
    Start {
        name: Vec<u8>,
        attrs: Vec<(Vec<u8>, Vec<u8>)>,
    },
    End {
        name: Vec<u8>,
    },
}

pub struct Tokenizer<'a> {
    input: &'a [u8],
    pos: usize,
    /// Set after `<script>`/`<style>`: everything up to the matching end tag
    /// is raw text.
    raw_until: Option<&'static [u8]>,
}

impl<'a> Tokenizer<'a> {
    pub fn new(input: &'a [u8]) -> Self {
        Tokenizer {
            input,
            pos: 0,
            raw_until: None,
        }
    }

    fn rest(&self) -> &'a [u8] {
        &self.input[self.pos..]
    }
}

impl<'a> Iterator for Tokenizer<'a> {
    type Item = Token<'a>;

    fn next(&mut self) -> Option<Token<'a>> {
        loop {
            if self.pos >= self.input.len() {
                return None;
            }
            if let Some(end_name) = self.raw_until.take() {
                let start = self.pos;
                let end = find_end_tag(self.rest(), end_name).map_or(self.input.len(), |i| start + i);
                self.pos = end;
                if end > start {
                    return Some(Token::Text(&self.input[start..end]));
                }
                continue;
            }
            let rest = self.rest();
            if rest[0] != b'<' {
                let n = memchr(b'<', rest).unwrap_or(rest.len());
                let text = &rest[..n];
                self.pos += n;
                return Some(Token::Text(text));
            }
            if rest.starts_with(b"<!--") {
                self.pos += find(&rest[4..], b"-->").map_or(rest.len(), |i| i + 7);
                continue;
            }
            if rest.starts_with(b"<!") || rest.starts_with(b"<?") {
                self.pos += memchr(b'>', rest).map_or(rest.len(), |i| i + 1);
                continue;
            }
            let closing = rest.get(1) == Some(&b'/');
            let name_start = if closing { 2 } else { 1 };
            if !rest.get(name_start).is_some_and(|b| b.is_ascii_alphabetic()) {
                // A lone '<' is text.
                self.pos += 1;
                return Some(Token::Text(&rest[..1]));
            }
            let mut i = name_start;
            while i < rest.len() && !rest[i].is_ascii_whitespace() && rest[i] != b'>' && rest[i] != b'/' {
                i += 1;
            }
            let name = rest[name_start..i].to_ascii_lowercase();
            if closing {
                self.pos += memchr(b'>', rest).map_or(rest.len(), |j| j + 1);
                return Some(Token::End { name });
            }
            let (attrs, consumed) = parse_attrs(&rest[i..]);
            self.pos += i + consumed;
            if name == b"script" {
                self.raw_until = Some(b"script");
            } else if name == b"style" {
                self.raw_until = Some(b"style");
            }
            return Some(Token::Start { name, attrs });
        }
    }
}

/// Parses attributes up to and including the closing `>`; returns them and
/// the number of bytes consumed.
fn parse_attrs(s: &[u8]) -> (Vec<(Vec<u8>, Vec<u8>)>, usize) {
    let mut attrs = Vec::new();
    let mut i = 0;
    loop {
        while i < s.len() && (s[i].is_ascii_whitespace() || s[i] == b'/') {
            i += 1;
        }
        if i >= s.len() {
            return (attrs, i);
        }
        if s[i] == b'>' {
            return (attrs, i + 1);
        }
        let start = i;
        while i < s.len() && !s[i].is_ascii_whitespace() && !b"=>/".contains(&s[i]) {
            i += 1;
        }
        let name = s[start..i].to_ascii_lowercase();
        while i < s.len() && s[i].is_ascii_whitespace() {
            i += 1;
        }
        let mut value = Vec::new();
        if i < s.len() && s[i] == b'=' {
            i += 1;
            while i < s.len() && s[i].is_ascii_whitespace() {
                i += 1;
            }
            if i < s.len() && (s[i] == b'"' || s[i] == b'\'') {
                let quote = s[i];
                let vstart = i + 1;
                let vend = memchr(quote, &s[vstart..]).map_or(s.len(), |j| vstart + j);
                value = decode_entities(&s[vstart..vend]);
                i = (vend + 1).min(s.len());
            } else {
                let vstart = i;
                while i < s.len() && !s[i].is_ascii_whitespace() && s[i] != b'>' {
                    i += 1;
                }
                value = decode_entities(&s[vstart..i]);
            }
        }
        if !name.is_empty() {
            attrs.push((name, value));
        } else if i == start {
            i += 1;
        }
    }
}

fn find_end_tag(s: &[u8], name: &[u8]) -> Option<usize> {
    let mut from = 0;
    while let Some(i) = find(&s[from..], b"</") {
        let at = from + i;
        let candidate = &s[at + 2..];
        if candidate.len() >= name.len() && candidate[..name.len()].eq_ignore_ascii_case(name) {
            return Some(at);
        }
        from = at + 2;
    }
    None
}

fn memchr(b: u8, s: &[u8]) -> Option<usize> {
    s.iter().position(|&c| c == b)
}

fn find(haystack: &[u8], needle: &[u8]) -> Option<usize> {
    haystack.windows(needle.len()).position(|w| w == needle)
}

/// Decodes the character references that matter in URLs and text.
pub fn decode_entities(s: &[u8]) -> Vec<u8> {
    if !s.contains(&b'&') {
        return s.to_vec();
    }
    let mut out = Vec::with_capacity(s.len());
    let mut i = 0;
    while i < s.len() {
        if s[i] == b'&' {
            if let Some(semi) = s[i..].iter().take(12).position(|&c| c == b';') {
                let ent = &s[i + 1..i + semi];
                let decoded: Option<u32> = match ent {
                    b"amp" => Some('&' as u32),
                    b"lt" => Some('<' as u32),
                    b"gt" => Some('>' as u32),
                    b"quot" => Some('"' as u32),
                    b"apos" => Some('\'' as u32),
                    b"nbsp" => Some(0xa0),
                    [b'#', b'x' | b'X', hex @ ..] => std::str::from_utf8(hex)
                        .ok()
                        .and_then(|h| u32::from_str_radix(h, 16).ok()),
                    [b'#', dec @ ..] => std::str::from_utf8(dec).ok().and_then(|d| d.parse().ok()),
                    _ => None,
                };
                if let Some(c) = decoded.and_then(char::from_u32) {
                    let mut buf = [0u8; 4];
                    out.extend_from_slice(c.encode_utf8(&mut buf).as_bytes());
                    i += semi + 1;
                    continue;
                }
            }
        }
        out.push(s[i]);
        i += 1;
    }
    out
}

/// Links found in a page, in document order, plus the base override.
#[derive(Debug, Default, Clone, PartialEq, Eq)]
pub struct Links {
    pub base: Option<Vec<u8>>,
    pub hrefs: Vec<Vec<u8>>,
}

/// Extracts outgoing links: `a`/`area`/`link` hrefs and `frame`/`iframe`
/// sources, plus `<base href>`.
pub fn extract_links(html: &[u8]) -> Links {
    let mut links = Links::default();
    for token in Tokenizer::new(html) {
        let Token::Start { name, attrs } = token else {
            continue;
        };
        let wanted: &[u8] = match name.as_slice() {
            b"a" | b"area" | b"link" | b"base" => b"href",
            b"frame" | b"iframe" => b"src",
            _ => continue,
        };
        let Some((_, value)) = attrs.into_iter().find(|(n, _)| n == wanted) else {
            continue;
        };
        let value = trim_ascii(&value).to_vec();
        if value.is_empty() {
            continue;
        }
        if name == b"base" {
            if links.base.is_none() {
                links.base = Some(value);
            }
        } else {
            links.hrefs.push(value);
        }
    }
    links
}

fn trim_ascii(s: &[u8]) -> &[u8] {
    let start = s.iter().position(|b| !b.is_ascii_whitespace()).unwrap_or(s.len());
    let end = s.iter().rposition(|b| !b.is_ascii_whitespace()).map_or(start, |e| e + 1);
    &s[start..end]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tokenizes_tags_and_text() {
        let toks: Vec<_> = Tokenizer::new(b"<p class=x>Hi <b>there</b></p>").collect();
        assert_eq!(toks.len(), 6);
        assert_eq!(
            toks[0],
            Token::Start {
                name: b"p".to_vec(),
                attrs: vec![(b"class".to_vec(), b"x".to_vec())]
            }
        );
        assert_eq!(toks[1], Token::Text(b"Hi "));
    }

    #[test]
    fn extracts_links_in_order() {
        let html = br#"<html><head><base href="http://b.com/d/"><link rel=stylesheet href='s.css'></head>
            <body><!-- <a href="/hidden"> --><a href="/one">1</a><A HREF=two?x=1&amp;y=2>2</A>
            <script>var s = "<a href='/no'>";</script><iframe src="/f"></iframe><a name=anchor>x</a></body>"#;
        let links = extract_links(html);
        assert_eq!(links.base.as_deref(), Some(&b"http://b.com/d/"[..]));
        let hrefs: Vec<&[u8]> = links.hrefs.iter().map(|h| h.as_slice()).collect();
        assert_eq!(hrefs, [&b"s.css"[..], b"/one", b"two?x=1&y=2", b"/f"]);
    }

    #[test]
    fn survives_garbage() {
        for input in [&b"<"[..], b"<a", b"<a href=", b"<a href=\"x", b"</", b"<!--", b"a < b > c", b"<script>"] {
            let _: Vec<_> = Tokenizer::new(input).collect();
            let _ = extract_links(input);
        }
    }

    #[test]
    fn decodes_numeric_entities() {
        assert_eq!(decode_entities(b"a&#38;b&#x26;c&bogus;"), b"a&b&c&bogus;");
    }
}
