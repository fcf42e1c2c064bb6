//! Fetch and parse workers talk to the scheduling side only through the
//! todo, results and done queues: neither module may reach the workbench.

const FETCH: &str = include_str!("../src/pipeline/fetch.rs");
const PARSE: &str = include_str!("../src/pipeline/parse.rs");

fn code_lines(source: &str) -> impl Iterator<Item = &str> {
    source.lines().map(str::trim).filter(|l| !l.starts_with("//"))
}

#[test]
fn fetch_workers_do_not_touch_the_workbench() {
    for line in code_lines(FETCH) {
        assert!(!line.contains("Workbench"), "fetch.rs: {line}");
        assert!(!line.contains("distributor::Distributor"), "fetch.rs: {line}");
    }
}

#[test]
fn parse_workers_do_not_touch_the_workbench() {
    for line in code_lines(PARSE) {
        assert!(!line.contains("workbench"), "parse.rs: {line}");
        assert!(!line.contains("Workbench"), "parse.rs: {line}");
        assert!(!line.contains("Sieve"), "parse.rs: {line}");
    }
}
