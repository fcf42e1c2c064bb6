use hostwise::filters::{parse_expression, Atom, Expr, Filter};
use hostwise::CrawlUrl;
use proptest::prelude::*;

const ATOMS: &[&str] = &[
    "hostEndsWith(.uk)",
    "hostEquals(a.com)",
    "pathStartsWith(/news)",
    "pathContains(cgi)",
    "pathMatches(^/[a-m])",
    r#"urlMatches("\\?")"#,
];

/// Outcome of each atom in `ATOMS`, computed directly from the URL parts.
fn atom_truths(u: &CrawlUrl) -> Vec<bool> {
    let path = u.path();
    vec![
        u.host().ends_with(".uk"),
        u.host() == "a.com",
        path.starts_with("/news"),
        path.contains("cgi"),
        path.as_bytes().get(1).is_some_and(|c| (b'a'..=b'm').contains(c)),
        u.as_str().contains('?'),
    ]
}

#[derive(Debug, Clone)]
enum Tree {
    Leaf(usize),
    Const(bool),
    And(Vec<Tree>),
    Or(Vec<Tree>),
    Not(Box<Tree>),
}

fn tree() -> impl Strategy<Value = Tree> {
    let leaf = prop_oneof![
        (0..ATOMS.len()).prop_map(Tree::Leaf),
        any::<bool>().prop_map(Tree::Const),
    ];
    leaf.prop_recursive(4, 32, 4, |inner| {
        prop_oneof![
            prop::collection::vec(inner.clone(), 2..4).prop_map(Tree::And),
            prop::collection::vec(inner.clone(), 2..4).prop_map(Tree::Or),
            inner.prop_map(|t| Tree::Not(Box::new(t))),
        ]
    })
}

fn render(t: &Tree) -> String {
    match t {
        Tree::Leaf(i) => ATOMS[*i].to_string(),
        Tree::Const(b) => b.to_string(),
        Tree::And(ts) => format!("({})", ts.iter().map(render).collect::<Vec<_>>().join(" and ")),
        Tree::Or(ts) => format!("({})", ts.iter().map(render).collect::<Vec<_>>().join(" or ")),
        Tree::Not(t) => format!("not {}", render(t)),
    }
}

fn truth(t: &Tree, atoms: &[bool]) -> bool {
    match t {
        Tree::Leaf(i) => atoms[*i],
        Tree::Const(b) => *b,
        Tree::And(ts) => ts.iter().fold(true, |acc, t| acc & truth(t, atoms)),
        Tree::Or(ts) => ts.iter().fold(false, |acc, t| acc | truth(t, atoms)),
        Tree::Not(t) => !truth(t, atoms),
    }
}

fn url() -> impl Strategy<Value = CrawlUrl> {
    let host = prop::sample::select(vec!["a.com", "bbc.co.uk", "x.org", "news.uk"]);
    let path = prop::sample::select(vec!["/", "/news/x", "/cgi-bin/y", "/zeta", "/b?q=1", "/news?cgi"]);
    (host, path).prop_map(|(h, p)| CrawlUrl::parse(&format!("http://{h}{p}"), None).unwrap())
}

proptest! {
    #[test]
    fn evaluation_matches_truth_table(t in tree(), u in url()) {
        let f = Filter::<CrawlUrl>::parse(&render(&t)).unwrap();
        prop_assert_eq!(f.evaluate(&u), truth(&t, &atom_truths(&u)));
    }

    #[test]
    fn print_then_parse_is_identity(t in tree()) {
        let f = Filter::<CrawlUrl>::parse(&render(&t)).unwrap();
        let again = Filter::<CrawlUrl>::parse(&f.to_string()).unwrap();
        prop_assert_eq!(again, f);
    }

    #[test]
    fn de_morgan_and_absorption(a in tree(), b in tree(), u in url()) {
        let fa = Filter::<CrawlUrl>::parse(&render(&a)).unwrap();
        let fb = Filter::<CrawlUrl>::parse(&render(&b)).unwrap();
        let lhs = fa.clone().and(fb.clone()).not();
        let rhs = fa.clone().not().or(fb.clone().not());
        prop_assert_eq!(lhs.evaluate(&u), rhs.evaluate(&u));
        let lhs = fa.clone().or(fb.clone()).not();
        let rhs = fa.clone().not().and(fb.clone().not());
        prop_assert_eq!(lhs.evaluate(&u), rhs.evaluate(&u));
        let absorbed = fa.clone().or(fa.clone().and(fb.clone()));
        prop_assert_eq!(absorbed.evaluate(&u), fa.evaluate(&u));
        let absorbed = fa.clone().and(fa.clone().or(fb));
        prop_assert_eq!(absorbed.evaluate(&u), fa.evaluate(&u));
    }
}

#[test]
fn kebab_aliases_print_canonically() {
    let e = parse_expression("host-suffix(.uk) or path-prefix(/a)").unwrap();
    assert_eq!(
        e,
        Expr::Or(vec![
            Expr::Atom(Atom::HostSuffix(".uk".into())),
            Expr::Atom(Atom::PathPrefix("/a".into())),
        ])
    );
    assert_eq!(e.to_string(), "(hostEndsWith(.uk) or pathStartsWith(/a))");
}
