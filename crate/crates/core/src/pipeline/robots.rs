//! Robots exclusion: parsing of robots.txt and longest-match evaluation.
//!
//! Groups addressed to the configured agent token (matched
//! case-insensitively) are merged; if there are none, the `*` groups are
//! used. Among the rules matching a path the longest pattern wins, and
//! `allow` wins ties. Patterns support `*` (any sequence) and a trailing `$`
//! (end of path).

#[derive(Debug, Clone, PartialEq, Eq)]
struct Rule {
    allow: bool,
    pattern: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct RobotsRules {
    rules: Vec<Rule>,
    disallow_all: bool,
    crawl_delay_ms: Option<u64>,
}

/// Upper bound on the size of a robots.txt body that is parsed.
pub const MAX_ROBOTS_BYTES: usize = 500 * 1024;

impl RobotsRules {
    pub fn allow_all() -> Self {
        RobotsRules::default()
    }

    pub fn disallow_all() -> Self {
        RobotsRules {
            disallow_all: true,
            ..Default::default()
        }
    }

    pub fn parse(body: &[u8], agent_token: &str) -> Self {
        let body = &body[..body.len().min(MAX_ROBOTS_BYTES)];
        let token = agent_token.to_ascii_lowercase();
        let mut specific = Vec::new();
        let mut generic = Vec::new();
        let mut specific_delay = None;
        let mut generic_delay = None;
        let mut found_specific = false;

        // State of the group being read.
        let mut agents_for_group: Vec<String> = Vec::new();
        let mut in_rules = false;

        for raw_line in body.split(|&b| b == b'\n') {
            let line = match raw_line.iter().position(|&b| b == b'#') {
                Some(i) => &raw_line[..i],
                None => raw_line,
            };
            let Some(colon) = line.iter().position(|&b| b == b':') else {
                continue;
            };
            let key = String::from_utf8_lossy(&line[..colon]).trim().to_ascii_lowercase();
            let value = trim(&line[colon + 1..]);
            match key.as_str() {
                "user-agent" => {
                    if in_rules {
                        agents_for_group.clear();
                        in_rules = false;
                    }
                    let agent = String::from_utf8_lossy(value).to_ascii_lowercase();
                    // Product token only: "Foo/1.0" names agent "foo".
                    let agent = agent.split(['/', ' ']).next().unwrap_or("").to_string();
                    agents_for_group.push(agent);
                }
                "allow" | "disallow" | "crawl-delay" => {
                    in_rules = true;
                    let applies_specific =
                        !token.is_empty() && agents_for_group.contains(&token);
                    let applies_generic = agents_for_group.iter().any(|a| a == "*");
                    if !applies_specific && !applies_generic {
                        continue;
                    }
                    if applies_specific {
                        found_specific = true;
                    }
                    if key == "crawl-delay" {
                        let delay = std::str::from_utf8(value)
                            .ok()
                            .and_then(|v| v.trim().parse::<f64>().ok())
                            .filter(|d| d.is_finite() && *d >= 0.0)
                            .map(|d| (d * 1000.0) as u64);
                        if applies_specific {
                            specific_delay = specific_delay.or(delay);
                        } else {
                            generic_delay = generic_delay.or(delay);
                        }
                        continue;
                    }
                    // An empty value matches nothing.
                    if value.is_empty() {
                        continue;
                    }
                    let rule = Rule {
                        allow: key == "allow",
                        pattern: normalize_pattern(value),
                    };
                    if applies_specific {
                        specific.push(rule);
                    } else {
                        generic.push(rule);
                    }
                }
                _ => {}
            }
        }
        if found_specific {
            RobotsRules {
                rules: specific,
                disallow_all: false,
                crawl_delay_ms: specific_delay,
            }
        } else {
            RobotsRules {
                rules: generic,
                disallow_all: false,
                crawl_delay_ms: generic_delay,
            }
        }
    }

    /// Whether `path_query` (starting with `/`) may be fetched.
    pub fn allowed(&self, path_query: &[u8]) -> bool {
        if self.disallow_all {
            return path_query == b"/robots.txt";
        }
        let path = normalize_pattern(path_query);
        let mut best: Option<(usize, bool)> = None;
        for rule in &self.rules {
            if matches(&rule.pattern, &path) {
                let len = rule.pattern.len();
                best = match best {
                    Some((l, a)) if l > len || (l == len && a) => Some((l, a)),
                    _ => Some((len, rule.allow)),
                };
            }
        }
        best.is_none_or(|(_, allow)| allow)
    }

    pub fn crawl_delay_ms(&self) -> Option<u64> {
        self.crawl_delay_ms
    }

    pub fn rule_count(&self) -> usize {
        self.rules.len()
    }
}

fn trim(mut s: &[u8]) -> &[u8] {
    while let [first, rest @ ..] = s {
        if first.is_ascii_whitespace() {
            s = rest;
        } else {
            break;
        }
    }
    while let [rest @ .., last] = s {
        if last.is_ascii_whitespace() {
            s = rest;
        } else {
            break;
        }
    }
    s
}

/// Percent-escapes of unreserved characters are decoded, other escapes are
/// upper-cased and raw non-ASCII bytes are escaped, so that patterns and
/// canonical paths compare byte by byte.
fn normalize_pattern(s: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(s.len());
    let mut i = 0;
    while i < s.len() {
        let b = s[i];
        if b == b'%' && i + 2 < s.len() {
            let (h, l) = (s[i + 1], s[i + 2]);
            if let (Some(h), Some(l)) = (hex(h), hex(l)) {
                let c = h << 4 | l;
                if c.is_ascii_alphanumeric() || b"-._~".contains(&c) {
                    out.push(c);
                } else {
                    out.push(b'%');
                    out.push(s[i + 1].to_ascii_uppercase());
                    out.push(s[i + 2].to_ascii_uppercase());
                }
                i += 3;
                continue;
            }
        }
        if b >= 0x80 || b == b' ' {
            out.extend_from_slice(format!("%{b:02X}").as_bytes());
        } else {
            out.push(b);
        }
        i += 1;
    }
    out
}

fn hex(b: u8) -> Option<u8> {
    (b as char).to_digit(16).map(|d| d as u8)
}

/// Matches `pattern` against a prefix of `path` (the whole path if the
/// pattern ends with `$`).
fn matches(pattern: &[u8], path: &[u8]) -> bool {
    let (pattern, anchored) = match pattern.split_last() {
        Some((b'$', rest)) => (rest, true),
        _ => (pattern, false),
    };
    // Classic two-pointer glob with backtracking to the last star.
    let (mut p, mut s) = (0, 0);
    let mut star: Option<(usize, usize)> = None;
    loop {
        if p == pattern.len() {
            if !anchored || s == path.len() {
                return true;
            }
        } else if pattern[p] == b'*' {
            star = Some((p, s));
            p += 1;
            continue;
        } else if s < path.len() && pattern[p] == path[s] {
            p += 1;
            s += 1;
            continue;
        }
        match star {
            Some((sp, ss)) if ss < path.len() => {
                star = Some((sp, ss + 1));
                p = sp + 1;
                s = ss + 1;
            }
            _ => return false,
        }
    }
}
