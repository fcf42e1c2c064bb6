//! Boolean filters gating each crawl phase.
//!
//! A filter is a tree of atoms combined with `and`, `or` and `not`. Filters
//! over URLs ("prefetch" filters) decide what gets scheduled, fetched and
//! followed; filters over fetched responses ("postfetch" filters) decide what
//! gets parsed and stored.
//!
//! Expressions are written as, e.g.
//!
//! ```text
//! hostEndsWith(.uk) and not pathContains(/cgi-bin/)
//! statusClass(2xx) and (contentTypeIs(text/html) or not duplicate())
//! ```
//!
//! Atom arguments are either raw text (balanced parentheses allowed) or a
//! double-quoted string with `\"` and `\\` escapes.

use std::fmt;
use std::marker::PhantomData;

use regex::Regex;
use thiserror::Error;

use crate::burl::CrawlUrl;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum FilterError {
    #[error("syntax error at {position}: {message}")]
    SyntaxError { position: usize, message: String },
    #[error("unknown filter atom `{0}`")]
    UnknownAtom(String),
}

fn syntax(position: usize, message: impl Into<String>) -> FilterError {
    FilterError::SyntaxError {
        position,
        message: message.into(),
    }
}

/// What a filter can look at. URL facts are always available; response facts
/// only for postfetch subjects.
pub trait FilterSubject {
    /// Whether response atoms (content type, status, duplicate) apply.
    const POSTFETCH: bool;

    fn url(&self) -> &CrawlUrl;

    fn content_type(&self) -> Option<&str> {
        None
    }

    fn status(&self) -> Option<u16> {
        None
    }

    fn digest_seen(&self) -> Option<bool> {
        None
    }

    /// Number of resources already handled for this host, when known.
    fn host_count(&self) -> Option<u64> {
        None
    }
}

impl FilterSubject for CrawlUrl {
    const POSTFETCH: bool = false;

    fn url(&self) -> &CrawlUrl {
        self
    }
}

/// A URL together with the number of resources already fetched from its
/// host, for `maxPerHost` atoms.
pub struct CountedUrl<'a> {
    pub url: &'a CrawlUrl,
    pub host_count: u64,
}

impl FilterSubject for CountedUrl<'_> {
    const POSTFETCH: bool = false;

    fn url(&self) -> &CrawlUrl {
        self.url
    }

    fn host_count(&self) -> Option<u64> {
        Some(self.host_count)
    }
}

#[derive(Debug, Clone)]
pub struct Pattern(Regex);

impl PartialEq for Pattern {
    fn eq(&self, other: &Self) -> bool {
        self.0.as_str() == other.0.as_str()
    }
}

impl Eq for Pattern {}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Atom {
    HostSuffix(String),
    HostEquals(String),
    PathPrefix(String),
    PathContains(String),
    PathRegex(Pattern),
    UrlRegex(Pattern),
    ContentTypeEquals(String),
    /// First digit of the status code (2 for 2xx).
    StatusClass(u16),
    DigestSeen,
    MaxPerHost(u64),
}

impl Atom {
    fn name(&self) -> &'static str {
        match self {
            Atom::HostSuffix(_) => "hostEndsWith",
            Atom::HostEquals(_) => "hostEquals",
            Atom::PathPrefix(_) => "pathStartsWith",
            Atom::PathContains(_) => "pathContains",
            Atom::PathRegex(_) => "pathMatches",
            Atom::UrlRegex(_) => "urlMatches",
            Atom::ContentTypeEquals(_) => "contentTypeIs",
            Atom::StatusClass(_) => "statusClass",
            Atom::DigestSeen => "duplicate",
            Atom::MaxPerHost(_) => "maxPerHost",
        }
    }

    fn argument(&self) -> String {
        match self {
            Atom::HostSuffix(s)
            | Atom::HostEquals(s)
            | Atom::PathPrefix(s)
            | Atom::PathContains(s)
            | Atom::ContentTypeEquals(s) => s.clone(),
            Atom::PathRegex(p) | Atom::UrlRegex(p) => p.0.as_str().to_string(),
            Atom::StatusClass(c) => format!("{c}xx"),
            Atom::DigestSeen => String::new(),
            Atom::MaxPerHost(n) => n.to_string(),
        }
    }

    fn is_postfetch(&self) -> bool {
        matches!(
            self,
            Atom::ContentTypeEquals(_) | Atom::StatusClass(_) | Atom::DigestSeen
        )
    }

    fn build(name: &str, arg: String, position: usize) -> Result<Atom, FilterError> {
        let regex = |arg: &str| {
            Regex::new(arg)
                .map(Pattern)
                .map_err(|e| syntax(position, format!("bad regex: {e}")))
        };
        Ok(match name {
            "hostEndsWith" | "host-suffix" => Atom::HostSuffix(arg.to_ascii_lowercase()),
            "hostEquals" | "host-equals" => Atom::HostEquals(arg.to_ascii_lowercase()),
            "pathStartsWith" | "path-prefix" => Atom::PathPrefix(arg),
            "pathContains" => Atom::PathContains(arg),
            "pathMatches" | "path-regex" => Atom::PathRegex(regex(&arg)?),
            "urlMatches" | "url-regex" => Atom::UrlRegex(regex(&arg)?),
            "contentTypeIs" | "content-type-equals" => {
                Atom::ContentTypeEquals(arg.to_ascii_lowercase())
            }
            "statusClass" | "status-class" => {
                let digit = arg
                    .trim_end_matches(['x', 'X'])
                    .parse::<u16>()
                    .ok()
                    .filter(|d| (1..=5).contains(d))
                    .ok_or_else(|| syntax(position, format!("bad status class `{arg}`")))?;
                Atom::StatusClass(digit)
            }
            "duplicate" | "digest-seen" => {
                if !arg.is_empty() {
                    return Err(syntax(position, "duplicate() takes no argument"));
                }
                Atom::DigestSeen
            }
            "maxPerHost" | "max-per-host" => Atom::MaxPerHost(
                arg.parse()
                    .map_err(|_| syntax(position, format!("bad count `{arg}`")))?,
            ),
            _ => return Err(FilterError::UnknownAtom(name.to_string())),
        })
    }

    fn eval<S: FilterSubject + ?Sized>(&self, subject: &S) -> bool {
        let url = subject.url();
        match self {
            Atom::HostSuffix(suffix) => url.host().ends_with(suffix.as_str()),
            Atom::HostEquals(host) => url.host() == host,
            Atom::PathPrefix(prefix) => url.path().starts_with(prefix.as_str()),
            Atom::PathContains(part) => url.path().contains(part.as_str()),
            Atom::PathRegex(p) => p.0.is_match(url.path()),
            Atom::UrlRegex(p) => p.0.is_match(url.as_str()),
            Atom::ContentTypeEquals(ct) => subject.content_type().is_some_and(|actual| {
                let essence = actual.split(';').next().unwrap_or("").trim();
                essence.eq_ignore_ascii_case(ct)
            }),
            Atom::StatusClass(class) => subject.status().is_some_and(|s| s / 100 == *class),
            Atom::DigestSeen => subject.digest_seen().unwrap_or(false),
            Atom::MaxPerHost(max) => subject.host_count().unwrap_or(0) < *max,
        }
    }
}

/// Untyped filter tree.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Expr {
    True,
    False,
    Atom(Atom),
    And(Vec<Expr>),
    Or(Vec<Expr>),
    Not(Box<Expr>),
}

impl Expr {
    pub(crate) fn eval<S: FilterSubject + ?Sized>(&self, subject: &S) -> bool {
        match self {
            Expr::True => true,
            Expr::False => false,
            Expr::Atom(atom) => atom.eval(subject),
            Expr::And(parts) => parts.iter().all(|p| p.eval(subject)),
            Expr::Or(parts) => parts.iter().any(|p| p.eval(subject)),
            Expr::Not(inner) => !inner.eval(subject),
        }
    }

    fn atoms(&self) -> Box<dyn Iterator<Item = &Atom> + '_> {
        match self {
            Expr::True | Expr::False => Box::new(std::iter::empty()),
            Expr::Atom(a) => Box::new(std::iter::once(a)),
            Expr::And(parts) | Expr::Or(parts) => Box::new(parts.iter().flat_map(Expr::atoms)),
            Expr::Not(inner) => inner.atoms(),
        }
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let join = |f: &mut fmt::Formatter<'_>, parts: &[Expr], op: &str| {
            f.write_str("(")?;
            for (i, p) in parts.iter().enumerate() {
                if i > 0 {
                    write!(f, " {op} ")?;
                }
                write!(f, "{p}")?;
            }
            f.write_str(")")
        };
        match self {
            Expr::True => f.write_str("true"),
            Expr::False => f.write_str("false"),
            Expr::Atom(atom) => {
                let arg = atom.argument();
                let raw_ok = !arg.is_empty()
                    && !arg.starts_with('"')
                    && arg.chars().all(|c| !c.is_whitespace() && c != '(' && c != ')');
                if arg.is_empty() || raw_ok {
                    write!(f, "{}({arg})", atom.name())
                } else {
                    let escaped = arg.replace('\\', "\\\\").replace('"', "\\\"");
                    write!(f, "{}(\"{escaped}\")", atom.name())
                }
            }
            Expr::And(parts) => join(f, parts, "and"),
            Expr::Or(parts) => join(f, parts, "or"),
            Expr::Not(inner) => write!(f, "not {inner}"),
        }
    }
}

/// A filter over base type `B`.
pub struct Filter<B: ?Sized> {
    expr: Expr,
    _base: PhantomData<fn(&B)>,
}

impl<B: ?Sized> Clone for Filter<B> {
    fn clone(&self) -> Self {
        Filter {
            expr: self.expr.clone(),
            _base: PhantomData,
        }
    }
}

impl<B: ?Sized> PartialEq for Filter<B> {
    fn eq(&self, other: &Self) -> bool {
        self.expr == other.expr
    }
}

impl<B: ?Sized> fmt::Debug for Filter<B> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Filter({})", self.expr)
    }
}

impl<B: ?Sized> fmt::Display for Filter<B> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.expr.fmt(f)
    }
}

impl<B: FilterSubject + ?Sized> Filter<B> {
    pub fn always() -> Self {
        Self::from_expr_unchecked(Expr::True)
    }

    pub fn never() -> Self {
        Self::from_expr_unchecked(Expr::False)
    }

    /// Fails with `UnknownAtom` if the tree uses response atoms and `B` is a
    /// prefetch base type.
    pub fn from_expr(expr: Expr) -> Result<Self, FilterError> {
        if !B::POSTFETCH {
            if let Some(atom) = expr.atoms().find(|a| a.is_postfetch()) {
                return Err(FilterError::UnknownAtom(atom.name().to_string()));
            }
        }
        Ok(Self::from_expr_unchecked(expr))
    }

    fn from_expr_unchecked(expr: Expr) -> Self {
        Filter {
            expr,
            _base: PhantomData,
        }
    }

    pub fn parse(text: &str) -> Result<Self, FilterError> {
        Self::from_expr(parse_expression(text)?)
    }

    pub fn evaluate(&self, subject: &B) -> bool {
        self.expr.eval(subject)
    }

    pub fn expr(&self) -> &Expr {
        &self.expr
    }

    pub fn and(self, other: Self) -> Self {
        Self::from_expr_unchecked(Expr::And(vec![self.expr, other.expr]))
    }

    pub fn or(self, other: Self) -> Self {
        Self::from_expr_unchecked(Expr::Or(vec![self.expr, other.expr]))
    }

    #[allow(clippy::should_implement_trait)]
    pub fn not(self) -> Self {
        Self::from_expr_unchecked(Expr::Not(Box::new(self.expr)))
    }
}

impl Filter<CountedUrl<'static>> {
    /// Evaluates on a counted URL of any lifetime.
    pub fn evaluate_counted(&self, subject: &CountedUrl<'_>) -> bool {
        self.expr.eval(subject)
    }
}

/// Parses an untyped filter expression.
pub fn parse_expression(text: &str) -> Result<Expr, FilterError> {
    let mut parser = Parser { text, pos: 0 };
    let expr = parser.or()?;
    parser.skip_ws();
    if parser.pos < text.len() {
        return Err(syntax(parser.pos, "unexpected trailing input"));
    }
    Ok(expr)
}

struct Parser<'a> {
    text: &'a str,
    pos: usize,
}

impl Parser<'_> {
    fn rest(&self) -> &str {
        &self.text[self.pos..]
    }

    fn skip_ws(&mut self) {
        let trimmed = self.rest().trim_start();
        self.pos = self.text.len() - trimmed.len();
    }

    /// Consumes `word` if it is the next whole identifier.
    fn keyword(&mut self, word: &str) -> bool {
        self.skip_ws();
        let rest = self.rest();
        if rest.len() >= word.len() && rest[..word.len()].eq_ignore_ascii_case(word) {
            let next = rest[word.len()..].chars().next();
            if !next.is_some_and(is_ident_char) {
                self.pos += word.len();
                return true;
            }
        }
        false
    }

    fn or(&mut self) -> Result<Expr, FilterError> {
        let mut parts = vec![self.and()?];
        while self.keyword("or") {
            parts.push(self.and()?);
        }
        Ok(if parts.len() == 1 {
            parts.pop().unwrap()
        } else {
            Expr::Or(parts)
        })
    }

    fn and(&mut self) -> Result<Expr, FilterError> {
        let mut parts = vec![self.unary()?];
        while self.keyword("and") {
            parts.push(self.unary()?);
        }
        Ok(if parts.len() == 1 {
            parts.pop().unwrap()
        } else {
            Expr::And(parts)
        })
    }

    fn unary(&mut self) -> Result<Expr, FilterError> {
        if self.keyword("not") {
            return Ok(Expr::Not(Box::new(self.unary()?)));
        }
        self.primary()
    }

    fn primary(&mut self) -> Result<Expr, FilterError> {
        self.skip_ws();
        let start = self.pos;
        if self.rest().starts_with('(') {
            self.pos += 1;
            let inner = self.or()?;
            self.skip_ws();
            if !self.rest().starts_with(')') {
                return Err(syntax(self.pos, "expected `)`"));
            }
            self.pos += 1;
            return Ok(inner);
        }
        let ident_len = self
            .rest()
            .find(|c: char| !is_ident_char(c))
            .unwrap_or(self.rest().len());
        if ident_len == 0 {
            return Err(syntax(start, "expected a filter"));
        }
        let ident = &self.text[start..start + ident_len];
        self.pos += ident_len;
        if ["and", "or", "not"]
            .iter()
            .any(|k| ident.eq_ignore_ascii_case(k))
        {
            return Err(syntax(start, format!("unexpected `{ident}`")));
        }
        self.skip_ws();
        if !self.rest().starts_with('(') {
            return match ident.to_ascii_lowercase().as_str() {
                "true" => Ok(Expr::True),
                "false" => Ok(Expr::False),
                _ => Err(syntax(self.pos, format!("expected `(` after `{ident}`"))),
            };
        }
        self.pos += 1;
        let arg = self.argument()?;
        Ok(Expr::Atom(Atom::build(ident, arg, start)?))
    }

    /// Reads an atom argument and the closing parenthesis.
    fn argument(&mut self) -> Result<String, FilterError> {
        self.skip_ws();
        let start = self.pos;
        if self.rest().starts_with('"') {
            let mut out = String::new();
            let mut chars = self.rest()[1..].char_indices();
            loop {
                match chars.next() {
                    Some((_, '\\')) => match chars.next() {
                        Some((_, c)) => out.push(c),
                        None => return Err(syntax(start, "unterminated string")),
                    },
                    Some((i, '"')) => {
                        self.pos += 1 + i + 1;
                        break;
                    }
                    Some((_, c)) => out.push(c),
                    None => return Err(syntax(start, "unterminated string")),
                }
            }
            self.skip_ws();
            if !self.rest().starts_with(')') {
                return Err(syntax(self.pos, "expected `)`"));
            }
            self.pos += 1;
            return Ok(out);
        }
        let mut depth = 0usize;
        for (i, c) in self.rest().char_indices() {
            match c {
                '(' => depth += 1,
                ')' if depth == 0 => {
                    let arg = self.rest()[..i].trim().to_string();
                    self.pos += i + 1;
                    return Ok(arg);
                }
                ')' => depth -= 1,
                _ => {}
            }
        }
        Err(syntax(start, "unterminated argument"))
    }
}

fn is_ident_char(c: char) -> bool {
    c.is_ascii_alphanumeric() || c == '-' || c == '_'
}

#[cfg(test)]
mod tests {
    use super::*;

    fn url(s: &str) -> CrawlUrl {
        CrawlUrl::parse(s, None).unwrap()
    }

    struct Response {
        url: CrawlUrl,
        content_type: &'static str,
        status: u16,
    }

    impl FilterSubject for Response {
        const POSTFETCH: bool = true;

        fn url(&self) -> &CrawlUrl {
            &self.url
        }

        fn content_type(&self) -> Option<&str> {
            Some(self.content_type)
        }

        fn status(&self) -> Option<u16> {
            Some(self.status)
        }
    }

    #[test]
    fn evaluates_examples() {
        assert!(Filter::<CrawlUrl>::always().evaluate(&url("http://x.com/")));
        let f = Filter::<CrawlUrl>::parse("hostEndsWith(.uk) and pathStartsWith(/news)").unwrap();
        assert!(f.evaluate(&url("http://bbc.co.uk/news/x")));
        assert!(!f.evaluate(&url("http://bbc.com/news/x")));

        let html = Response {
            url: url("http://a.com/"),
            content_type: "text/html; charset=utf-8",
            status: 200,
        };
        let f = Filter::<Response>::parse("not contentTypeIs(text/html)").unwrap();
        assert!(!f.evaluate(&html));
        let f = Filter::<Response>::parse("statusClass(2xx)").unwrap();
        assert!(f.evaluate(&html));
    }

    #[test]
    fn parses_structure() {
        let e = parse_expression("hostEndsWith(.uk) and not pathContains(/cgi-bin/)").unwrap();
        assert_eq!(
            e,
            Expr::And(vec![
                Expr::Atom(Atom::HostSuffix(".uk".into())),
                Expr::Not(Box::new(Expr::Atom(Atom::PathContains("/cgi-bin/".into())))),
            ])
        );
        assert_eq!(parse_expression("true").unwrap(), Expr::True);
        assert_eq!(parse_expression(" FALSE ").unwrap(), Expr::False);
        let e = parse_expression("a-b-c(1) ").unwrap_err();
        assert_eq!(e, FilterError::UnknownAtom("a-b-c".into()));
    }

    #[test]
    fn precedence_and_over_or() {
        let e = parse_expression("true or false and false").unwrap();
        assert_eq!(
            e,
            Expr::Or(vec![Expr::True, Expr::And(vec![Expr::False, Expr::False])])
        );
    }

    #[test]
    fn syntax_errors_report_position() {
        assert!(matches!(
            parse_expression("and and"),
            Err(FilterError::SyntaxError { position: 0, .. })
        ));
        assert!(matches!(
            parse_expression("true and"),
            Err(FilterError::SyntaxError { position: 8, .. })
        ));
        assert!(matches!(
            parse_expression("(true"),
            Err(FilterError::SyntaxError { .. })
        ));
        assert!(matches!(
            parse_expression("hostEquals(a.com"),
            Err(FilterError::SyntaxError { .. })
        ));
        assert!(matches!(
            parse_expression("true false"),
            Err(FilterError::SyntaxError { position: 5, .. })
        ));
    }

    #[test]
    fn prefetch_filters_reject_response_atoms() {
        assert_eq!(
            Filter::<CrawlUrl>::parse("statusClass(2xx)").unwrap_err(),
            FilterError::UnknownAtom("statusClass".into())
        );
    }

    #[test]
    fn regex_and_quoted_arguments() {
        let f = Filter::<CrawlUrl>::parse(r#"urlMatches("^https?://[^/]+/(a|b)$")"#).unwrap();
        assert!(f.evaluate(&url("http://x.com/a")));
        assert!(!f.evaluate(&url("http://x.com/c")));
        let printed = f.to_string();
        assert_eq!(Filter::<CrawlUrl>::parse(&printed).unwrap(), f);
        let f = Filter::<CrawlUrl>::parse("pathMatches(^/(x|y)/)").unwrap();
        assert!(f.evaluate(&url("http://x.com/y/z")));
    }

    #[test]
    fn max_per_host_uses_count() {
        let f = Filter::<CountedUrl>::parse("maxPerHost(3)").unwrap();
        let u = url("http://a.com/");
        assert!(f.evaluate(&CountedUrl { url: &u, host_count: 2 }));
        assert!(!f.evaluate(&CountedUrl { url: &u, host_count: 3 }));
    }
}
