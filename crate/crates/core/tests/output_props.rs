mod common;

use proptest::prelude::*;

use common::*;
use pmig_core::operator::{CompareOp, Direction, OperatorFragment};
use pmig_core::output::{parse_output, serialize, ParseErrorKind};

fn quote(v: &str) -> String {
    if v.contains('\'') {
        format!("\"{v}\"")
    } else {
        format!("'{v}'")
    }
}

/// Independent writer that pads every comma, bracket and colon with the
/// given whitespace runs.
fn padded(f: &OperatorFragment, pads: &[String]) -> String {
    let mut k = 0;
    let mut pad = || {
        k += 1;
        pads[k % pads.len()].clone()
    };
    let mut lines = Vec::new();
    let list = |key: &str, items: Vec<String>, pad: &mut dyn FnMut() -> String| {
        let mut s = format!("{}{key}{}:{}[{}", pad(), pad(), pad(), pad());
        for (i, item) in items.iter().enumerate() {
            if i > 0 {
                s.push_str(&format!("{},{}", pad(), pad()));
            }
            s.push_str(item);
        }
        s.push_str(&format!("{}]{}", pad(), pad()));
        s
    };
    if !f.select.is_empty() {
        lines.push(list("select", f.select.iter().map(|c| c.to_string()).collect(), &mut pad));
    }
    let filters = f.filters.iter().map(|p| format!("{}{}{}", p.column, p.op, quote(&p.value))).collect();
    lines.push(list("filters", filters, &mut pad));
    if !f.group_by.is_empty() {
        lines.push(list("group_by", f.group_by.iter().map(|c| c.to_string()).collect(), &mut pad));
    }
    if !f.order_by.is_empty() {
        let keys = f
            .order_by
            .iter()
            .map(|k| format!("{} {}", k.column, if k.direction == Direction::Asc { "ASC" } else { "DESC" }))
            .collect();
        lines.push(list("order_by", keys, &mut pad));
    }
    if let Some(n) = f.limit {
        lines.push(format!("{}limit{}:{}{n}{}", pad(), pad(), pad(), pad()));
    }
    lines.join("\n")
}

fn info_line() -> impl Strategy<Value = String> {
    "[a-z][a-z ]{0,20}".prop_map(|s| format!("note: {s}"))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn parse_inverts_serialize(f in canonical_fragment()) {
        let text = serialize(&f);
        let parsed = parse_output(&text).unwrap();
        prop_assert_eq!(parsed.fragment, f);
        prop_assert!(parsed.diagnostics.is_empty());
        prop_assert!(parsed.recognized_line_count >= 1);
    }

    #[test]
    fn whitespace_around_punctuation_is_ignored(
        f in canonical_fragment(),
        pads in prop::collection::vec("[ \t]{0,3}", 1..8),
    ) {
        let plain = parse_output(&padded(&f, &[String::new()])).unwrap();
        let spaced = parse_output(&padded(&f, &pads)).unwrap();
        prop_assert_eq!(&plain.fragment, &f);
        prop_assert_eq!(spaced.fragment, plain.fragment);
        prop_assert!(spaced.diagnostics.is_empty());
    }

    #[test]
    fn operators_tokenize_by_longest_match(
        c in column(),
        a in op(),
        b in prop::option::of(op()),
        v in "[A-Za-z0-9_ ]{0,6}",
        gap in "[ ]{0,2}",
    ) {
        let glued = format!("{}{}", a.as_str(), b.map_or("", |b| b.as_str()));
        let text = format!("filters: [{c}{gap}{glued}{gap}'{v}']");
        let got = parse_output(&text);
        match CompareOp::from_symbol(&glued) {
            Some(expected) => {
                let p = &got.unwrap().fragment.filters[0];
                prop_assert_eq!(p.op, expected);
                prop_assert_eq!(&p.column, &c);
                prop_assert_eq!(&p.value, &v);
            }
            None => {
                let e = got.unwrap_err();
                prop_assert_eq!(e.kind, ParseErrorKind::BadOperator);
                prop_assert!(e.is_fused_operator());
            }
        }
    }

    #[test]
    fn diagnostics_never_change_the_fragment(
        f in canonical_fragment(),
        notes in prop::collection::vec((info_line(), 0usize..6), 1..4),
    ) {
        let text = serialize(&f);
        let mut lines: Vec<String> = text.lines().map(String::from).collect();
        for (note, at) in &notes {
            let at = at % (lines.len() + 1);
            lines.insert(at, note.clone());
        }
        let noisy = parse_output(&lines.join("\n")).unwrap();
        prop_assert_eq!(noisy.fragment, f);
        let texts: Vec<&str> = noisy.diagnostics.iter().map(|d| d.text.as_str()).collect();
        let expected: Vec<&str> = lines.iter().filter(|l| l.starts_with("note: ")).map(String::as_str).collect();
        prop_assert_eq!(texts, expected);
        prop_assert!(noisy.diagnostics.windows(2).all(|w| w[0].line_number < w[1].line_number));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2000))]

    /// Mangled output either parses or points at a real piece of its line.
    #[test]
    fn error_snippets_come_from_the_input(
        f in canonical_fragment(),
        edits in prop::collection::vec((any::<prop::sample::Index>(), prop::sample::select(vec!["", "[", "]", "'", "\"", "=", ">", "!", ",", ":", " ", "x"])), 1..4),
    ) {
        let mut text = serialize(&f);
        for (at, s) in edits {
            let mut i = at.index(text.len() + 1);
            while !text.is_char_boundary(i) {
                i -= 1;
            }
            if s.is_empty() && i < text.len() {
                let mut j = i + 1;
                while !text.is_char_boundary(j) {
                    j += 1;
                }
                text.replace_range(i..j, "");
            } else {
                text.insert_str(i, s);
            }
        }
        if let Err(e) = parse_output(&text) {
            prop_assert!(e.line_number >= 1);
            let line = text.lines().nth(e.line_number - 1).unwrap_or("");
            prop_assert!(line.contains(&e.snippet), "{:?} not in {:?}", e.snippet, line);
        }
    }
}

#[test]
fn keywords_are_case_insensitive() {
    let a = parse_output("Filters: [Gender='Male']").unwrap();
    let b = parse_output("filters: [Gender='Male']").unwrap();
    assert_eq!(a.fragment, b.fragment);
}

#[test]
fn bare_values_are_quoted_on_output() {
    let p = parse_output("filters: [Age>40]").unwrap();
    assert_eq!(serialize(&p.fragment), "filters: [Age>'40']");
}
