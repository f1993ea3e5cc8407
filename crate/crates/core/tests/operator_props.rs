mod common;

use std::collections::BTreeMap;

use proptest::prelude::*;

use common::*;
use pmig_core::operator::{canonicalize, compare, normalize_column, FilterPredicate, SchemaContext};

fn schema_of(f: &pmig_core::operator::OperatorFragment) -> SchemaContext {
    let mut cols: Vec<_> = f.columns().cloned().collect();
    cols.sort();
    cols.dedup();
    if cols.is_empty() {
        cols.push(col("Id"));
    }
    SchemaContext::new("t", cols).unwrap()
}

fn counts(filters: &[FilterPredicate]) -> BTreeMap<&FilterPredicate, usize> {
    let mut m = BTreeMap::new();
    for p in filters {
        *m.entry(p).or_default() += 1;
    }
    m
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn canonicalize_is_idempotent(f in fragment()) {
        let once = canonicalize(&f);
        prop_assert!(once.is_canonical());
        prop_assert_eq!(canonicalize(&once), once);
    }

    #[test]
    fn canonicalize_preserves_semantics(f in fragment()) {
        let c = canonicalize(&f);
        prop_assert_eq!(counts(&c.filters), counts(&f.filters));
        prop_assert_eq!(&c.group_by, &f.group_by);
        prop_assert_eq!(&c.order_by, &f.order_by);
        prop_assert_eq!(&c.select, &f.select);
        prop_assert_eq!(c.limit, f.limit);
    }

    #[test]
    fn compare_ignores_filter_order((f, perm) in fragment().prop_flat_map(|f| {
        let filters = f.filters.clone();
        (Just(f), shuffled(filters))
    })) {
        let mut g = f.clone();
        g.filters = perm;
        let s = schema_of(&f);
        prop_assert!(compare(&f, &g, &s).is_empty());
        prop_assert!(compare(&g, &f, &s).is_empty());
    }

    #[test]
    fn compare_is_reflexive(f in canonical_fragment()) {
        prop_assert!(compare(&f, &f, &schema_of(&f)).is_empty());
    }
}

proptest! {
    #[test]
    fn compare_is_symmetric_up_to_relabeling(a in fragment(), b in fragment()) {
        let mut both = a.clone();
        both.filters.extend(b.filters.clone());
        both.select.extend(b.select.clone());
        let s = schema_of(&both);
        let ab = compare(&a, &b, &s);
        let ba = compare(&b, &a, &s);
        prop_assert_eq!(&ab.filters.missing, &ba.filters.extra);
        prop_assert_eq!(&ab.filters.extra, &ba.filters.missing);
        prop_assert_eq!(&ab.group_by.missing, &ba.group_by.extra);
        prop_assert_eq!(&ab.order_by.extra, &ba.order_by.missing);
        prop_assert_eq!(&ab.select.missing, &ba.select.extra);
        prop_assert_eq!(ab.group_by.reordered, ba.group_by.reordered);
        prop_assert_eq!(ab.limit.is_some(), ba.limit.is_some());
        prop_assert_eq!(ab.is_empty(), ba.is_empty());
    }

    #[test]
    fn normalization_is_idempotent(raw in "[ '\"`]{0,2}[A-Za-z_][A-Za-z0-9_]{0,4}( {1,3}[A-Za-z0-9_]{1,4}){0,2}[ '\"`]{0,2}") {
        if let Ok(c) = normalize_column(&raw) {
            prop_assert!(!c.as_str().contains([' ', '\'', '"', '`']));
            prop_assert_eq!(normalize_column(c.as_str()).unwrap(), c);
        }
    }

    #[test]
    fn order_sensitive_lists_notice_swaps(mut f in canonical_fragment(), a in column(), b in column()) {
        prop_assume!(a != b);
        f.group_by = vec![a, b];
        let mut g = f.clone();
        g.group_by.swap(0, 1);
        let d = compare(&f, &g, &schema_of(&f));
        prop_assert!(d.group_by.reordered);
        prop_assert!(!d.is_empty());
    }
}
