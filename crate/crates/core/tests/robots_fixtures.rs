//! Robots exclusion matching against the published reference examples of
//! path matching and rule precedence (RFC 9309 and the widely used crawler
//! documentation tables).

use hostwise::pipeline::robots::RobotsRules;

fn rules(body: &str) -> RobotsRules {
    RobotsRules::parse(body.as_bytes(), "hostwise")
}

/// A single `Disallow` rule; `matching` paths are blocked, the others are not.
fn check_pattern(pattern: &str, matching: &[&str], not_matching: &[&str]) {
    let r = rules(&format!("User-agent: *\nDisallow: {pattern}\n"));
    for p in matching {
        assert!(!r.allowed(p.as_bytes()), "{pattern} should match {p}");
    }
    for p in not_matching {
        assert!(r.allowed(p.as_bytes()), "{pattern} should not match {p}");
    }
}

#[test]
fn root_and_star_match_everything() {
    check_pattern("/", &["/", "/a", "/a/b?c"], &[]);
    check_pattern("/*", &["/", "/a", "/a/b?c"], &[]);
}

#[test]
fn anchored_root_matches_only_root() {
    check_pattern("/$", &["/"], &["/?a=b", "/index.html"]);
}

#[test]
fn plain_prefix() {
    check_pattern(
        "/fish",
        &[
            "/fish",
            "/fish.html",
            "/fish/salmon.html",
            "/fishheads",
            "/fishheads/yummy.html",
            "/fish.php?id=anything",
        ],
        &["/Fish.asp", "/catfish", "/?id=fish", "/desert/fish"],
    );
    check_pattern(
        "/fish*",
        &["/fish", "/fish.html", "/fish/salmon.html", "/fishheads", "/fish.php?id=anything"],
        &["/Fish.asp", "/catfish", "/?id=fish", "/desert/fish"],
    );
}

#[test]
fn directory_prefix() {
    check_pattern(
        "/fish/",
        &["/fish/", "/fish/?id=anything", "/fish/salmon.htm"],
        &["/fish", "/fish.html", "/animals/fish/", "/Fish/Salmon.asp"],
    );
}

#[test]
fn inner_wildcards() {
    check_pattern(
        "/*.php",
        &[
            "/index.php",
            "/filename.php",
            "/folder/filename.php",
            "/folder/filename.php?parameters",
            "/folder/any.php.file.html",
            "/filename.php/",
        ],
        &["/", "/windows.PHP"],
    );
    check_pattern(
        "/*.php$",
        &["/filename.php", "/folder/filename.php"],
        &["/filename.php?parameters", "/filename.php/", "/filename.php5", "/windows.PHP"],
    );
    check_pattern(
        "/fish*.php",
        &["/fish.php", "/fishheads/catfish.php?parameters"],
        &["/Fish.PHP"],
    );
}

#[test]
fn longest_match_wins() {
    let r = rules("User-agent: *\nAllow: /p\nDisallow: /\n");
    assert!(r.allowed(b"/page"));
    let r = rules("User-agent: *\nAllow: /page\nDisallow: /*.htm\n");
    assert!(!r.allowed(b"/page.htm"));
    let r = rules("User-agent: *\nAllow: /$\nDisallow: /\n");
    assert!(r.allowed(b"/"));
    assert!(!r.allowed(b"/page.htm"));
}

#[test]
fn allow_wins_ties() {
    let r = rules("User-agent: *\nAllow: /folder\nDisallow: /folder\n");
    assert!(r.allowed(b"/folder/page"));
}

#[test]
fn disallow_private_prefix() {
    let r = rules("User-agent: *\nDisallow: /private\n");
    assert!(!r.allowed(b"/private/x"));
    assert!(r.allowed(b"/pub"));
}

#[test]
fn empty_file_allows_everything() {
    let r = rules("");
    assert!(r.allowed(b"/"));
    assert!(r.allowed(b"/anything?at=all"));
}

#[test]
fn empty_disallow_allows_everything() {
    let r = rules("User-agent: *\nDisallow:\n");
    assert!(r.allowed(b"/x"));
}

#[test]
fn specific_agent_group_replaces_generic_one() {
    let body = "User-agent: *\nDisallow: /\n\nUser-agent: HostWise/2.0\nDisallow: /tmp/\n";
    let r = rules(body);
    assert!(r.allowed(b"/a"));
    assert!(!r.allowed(b"/tmp/a"));
    let other = RobotsRules::parse(body.as_bytes(), "otherbot");
    assert!(!other.allowed(b"/a"));
}

#[test]
fn consecutive_user_agent_lines_share_a_group() {
    let r = rules("User-agent: a\nUser-agent: hostwise\nDisallow: /x\n\nUser-agent: b\nDisallow: /y\n");
    assert!(!r.allowed(b"/x"));
    assert!(r.allowed(b"/y"));
}

#[test]
fn percent_escapes_compare_equal() {
    check_pattern("/foo/bar%3Cbaz", &["/foo/bar%3cbaz", "/foo/bar%3Cbaz"], &["/foo/barbaz"]);
    check_pattern("/%7Ejoe", &["/~joe/index.html"], &[]);
}

#[test]
fn comments_and_unknown_lines_are_ignored() {
    let r = rules("# hello\nUser-agent: * # everyone\nSitemap: http://a/s.xml\nDisallow: /c # no c\n");
    assert!(!r.allowed(b"/c"));
    assert!(r.allowed(b"/d"));
}
