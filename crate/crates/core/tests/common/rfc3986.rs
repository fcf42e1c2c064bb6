//! Reference resolver and normalizer, transcribed step by step from the
//! generic URI syntax (component regex, strict reference resolution with the
//! "same scheme" leniency, buffer-based dot-segment removal). Kept separate
//! from the crawler's implementation so that the two can be compared.

#![allow(dead_code)]

use regex::Regex;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Parts {
    pub scheme: Option<String>,
    pub authority: Option<String>,
    pub path: String,
    pub query: Option<String>,
    pub fragment: Option<String>,
}

pub fn split(reference: &str) -> Parts {
    let re = Regex::new(r"^(([^:/?#]+):)?(//([^/?#]*))?([^?#]*)(\?([^#]*))?(#(.*))?$").unwrap();
    let caps = re.captures(reference).expect("regex matches every string");
    Parts {
        scheme: caps.get(2).map(|m| m.as_str().to_string()),
        authority: caps.get(4).map(|m| m.as_str().to_string()),
        path: caps.get(5).map_or(String::new(), |m| m.as_str().to_string()),
        query: caps.get(7).map(|m| m.as_str().to_string()),
        fragment: caps.get(9).map(|m| m.as_str().to_string()),
    }
}

pub fn remove_dot_segments(path: &str) -> String {
    let mut input = path.to_string();
    let mut output = String::new();
    while !input.is_empty() {
        if input.starts_with("../") {
            input.replace_range(..3, "");
        } else if input.starts_with("./") {
            input.replace_range(..2, "");
        } else if input.starts_with("/./") {
            input.replace_range(..3, "/");
        } else if input == "/." {
            input = "/".to_string();
        } else if input.starts_with("/../") {
            input.replace_range(..4, "/");
            truncate_last_segment(&mut output);
        } else if input == "/.." {
            input = "/".to_string();
            truncate_last_segment(&mut output);
        } else if input == "." || input == ".." {
            input.clear();
        } else {
            let start = usize::from(input.starts_with('/'));
            let end = input[start..].find('/').map_or(input.len(), |i| i + start);
            output.push_str(&input[..end]);
            input.replace_range(..end, "");
        }
    }
    output
}

fn truncate_last_segment(output: &mut String) {
    match output.rfind('/') {
        Some(i) => output.truncate(i),
        None => output.clear(),
    }
}

fn merge(base: &Parts, reference_path: &str) -> String {
    if base.authority.is_some() && base.path.is_empty() {
        format!("/{reference_path}")
    } else {
        match base.path.rfind('/') {
            Some(i) => format!("{}{}", &base.path[..=i], reference_path),
            None => reference_path.to_string(),
        }
    }
}

pub fn resolve(base: &str, reference: &str) -> Parts {
    let base = split(base);
    let mut r = split(reference);
    if r.scheme.as_deref().map(str::to_ascii_lowercase) == base.scheme.as_deref().map(str::to_ascii_lowercase) {
        r.scheme = None;
    }
    let mut t = Parts::default();
    if r.scheme.is_some() {
        t.scheme = r.scheme.clone();
        t.authority = r.authority.clone();
        t.path = remove_dot_segments(&r.path);
        t.query = r.query.clone();
    } else {
        if r.authority.is_some() {
            t.authority = r.authority.clone();
            t.path = remove_dot_segments(&r.path);
            t.query = r.query.clone();
        } else {
            if r.path.is_empty() {
                t.path = base.path.clone();
                t.query = if r.query.is_some() { r.query.clone() } else { base.query.clone() };
            } else {
                if r.path.starts_with('/') {
                    t.path = remove_dot_segments(&r.path);
                } else {
                    t.path = remove_dot_segments(&merge(&base, &r.path));
                }
                t.query = r.query.clone();
            }
            t.authority = base.authority.clone();
        }
        t.scheme = base.scheme.clone();
    }
    t.fragment = r.fragment;
    t
}

pub fn recompose(t: &Parts) -> String {
    let mut s = String::new();
    if let Some(scheme) = &t.scheme {
        s.push_str(scheme);
        s.push(':');
    }
    if let Some(authority) = &t.authority {
        s.push_str("//");
        s.push_str(authority);
    }
    s.push_str(&t.path);
    if let Some(q) = &t.query {
        s.push('?');
        s.push_str(q);
    }
    if let Some(f) = &t.fragment {
        s.push('#');
        s.push_str(f);
    }
    s
}

const UNRESERVED: &str = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789-._~";
const SUB_DELIMS: &str = "!$&'()*+,;=";

fn pct_normalize(s: &str, extra: &str) -> String {
    let bytes = s.as_bytes();
    let mut out = String::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        if c == b'%'
            && i + 2 < bytes.len()
            && bytes[i + 1].is_ascii_hexdigit()
            && bytes[i + 2].is_ascii_hexdigit()
        {
            let v = u8::from_str_radix(&s[i + 1..i + 3], 16).unwrap();
            if UNRESERVED.as_bytes().contains(&v) {
                out.push(v as char);
            } else {
                out.push_str(&format!("%{v:02X}"));
            }
            i += 3;
            continue;
        }
        if c < 0x80 && c != b'%' && (UNRESERVED.contains(c as char) || SUB_DELIMS.contains(c as char) || extra.contains(c as char)) {
            out.push(c as char);
        } else {
            out.push_str(&format!("%{c:02X}"));
        }
        i += 1;
    }
    out
}

/// Syntax-based normalization of an absolute http(s) URI, with the crawler's
/// conventions layered on top: no fragment, no empty query, no default port,
/// `/` for an empty path. ASCII hosts only.
pub fn normalize(uri: &str) -> Option<String> {
    let p = split(uri);
    let scheme = p.scheme?.to_ascii_lowercase();
    if scheme != "http" && scheme != "https" {
        return None;
    }
    let authority = p.authority?;
    let (userinfo, hostport) = match authority.rfind('@') {
        Some(i) => (Some(&authority[..i]), &authority[i + 1..]),
        None => (None, &authority[..]),
    };
    let (host, port) = match hostport.rfind(':') {
        Some(i) if !hostport.starts_with('[') => (&hostport[..i], &hostport[i + 1..]),
        _ => (hostport, ""),
    };
    let host = host.to_ascii_lowercase();
    if host.is_empty() {
        return None;
    }
    let default_port = if scheme == "http" { "80" } else { "443" };
    let port = port.trim_start_matches('0');
    let mut out = format!("{scheme}://");
    if let Some(u) = userinfo {
        out.push_str(&pct_normalize(u, ":"));
        out.push('@');
    }
    out.push_str(&host);
    if !port.is_empty() && port != default_port {
        out.push(':');
        out.push_str(port);
    }
    let mut path = remove_dot_segments(&pct_normalize(&p.path, ":@/"));
    if path.is_empty() {
        path = "/".into();
    }
    out.push_str(&path);
    if let Some(q) = p.query.filter(|q| !q.is_empty()) {
        out.push('?');
        out.push_str(&pct_normalize(&q, ":@/?"));
    }
    Some(out)
}

pub const RFC_BASE: &str = "http://a/b/c/d;p?q";

/// The normal examples of reference resolution, `(reference, result)`.
pub const NORMAL_EXAMPLES: &[(&str, &str)] = &[
    ("g:h", "g:h"),
    ("g", "http://a/b/c/g"),
    ("./g", "http://a/b/c/g"),
    ("g/", "http://a/b/c/g/"),
    ("/g", "http://a/g"),
    ("//g", "http://g"),
    ("?y", "http://a/b/c/d;p?y"),
    ("g?y", "http://a/b/c/g?y"),
    ("#s", "http://a/b/c/d;p?q#s"),
    ("g#s", "http://a/b/c/g#s"),
    ("g?y#s", "http://a/b/c/g?y#s"),
    (";x", "http://a/b/c/;x"),
    ("g;x", "http://a/b/c/g;x"),
    ("g;x?y#s", "http://a/b/c/g;x?y#s"),
    ("", "http://a/b/c/d;p?q"),
    (".", "http://a/b/c/"),
    ("./", "http://a/b/c/"),
    ("..", "http://a/b/"),
    ("../", "http://a/b/"),
    ("../g", "http://a/b/g"),
    ("../..", "http://a/"),
    ("../../", "http://a/"),
    ("../../g", "http://a/g"),
];

/// The abnormal examples; "http:g" uses the lenient (same-scheme) reading.
pub const ABNORMAL_EXAMPLES: &[(&str, &str)] = &[
    ("../../../g", "http://a/g"),
    ("../../../../g", "http://a/g"),
    ("/./g", "http://a/g"),
    ("/../g", "http://a/g"),
    ("g.", "http://a/b/c/g."),
    (".g", "http://a/b/c/.g"),
    ("g..", "http://a/b/c/g.."),
    ("..g", "http://a/b/c/..g"),
    ("./../g", "http://a/b/g"),
    ("./g/.", "http://a/b/c/g/"),
    ("g/./h", "http://a/b/c/g/h"),
    ("g/../h", "http://a/b/c/h"),
    ("g;x=1/./y", "http://a/b/c/g;x=1/y"),
    ("g;x=1/../y", "http://a/b/c/y"),
    ("g?y/./x", "http://a/b/c/g?y/./x"),
    ("g?y/../x", "http://a/b/c/g?y/../x"),
    ("g#s/./x", "http://a/b/c/g#s/./x"),
    ("g#s/../x", "http://a/b/c/g#s/../x"),
    ("http:g", "http://a/b/c/g"),
];
