//! Generators shared by the property suites.
#![allow(dead_code)]

use proptest::prelude::*;
use proptest::sample::{select, subsequence};

use pmig_core::operator::{
    canonicalize, normalize_column, ColumnRef, CompareOp, Direction, FilterPredicate, OperatorFragment, OrderKey,
    SchemaContext,
};
use pmig_core::testbed::{TestCase, Tier};

pub fn col(s: &str) -> ColumnRef {
    normalize_column(s).unwrap()
}

pub fn column() -> impl Strategy<Value = ColumnRef> {
    "[A-Za-z][A-Za-z0-9]{0,5}(_[A-Za-z0-9]{1,5}){0,2}".prop_map(|s| col(&s))
}

pub fn op() -> impl Strategy<Value = CompareOp> {
    select(CompareOp::ALL.to_vec())
}

pub fn direction() -> impl Strategy<Value = Direction> {
    prop_oneof![Just(Direction::Asc), Just(Direction::Desc)]
}

/// Any value the writer can quote: free of line breaks and never holding
/// both quote characters.
pub fn value() -> impl Strategy<Value = String> {
    prop_oneof![
        4 => "[A-Za-z0-9 _,.:;<>=!()\\[\\]-]{0,12}",
        1 => "[a-z ']{0,6}",
        1 => "[a-z \"]{0,6}",
    ]
}

pub fn fragment_over(cols: Vec<ColumnRef>, val: BoxedStrategy<String>) -> impl Strategy<Value = OperatorFragment> {
    let c = select(cols);
    (
        prop::collection::vec((c.clone(), op(), val), 0..5),
        prop::collection::vec(c.clone(), 0..3),
        prop::collection::vec((c.clone(), direction()), 0..3),
        prop::option::of(0u64..10_000),
        prop::collection::vec(c, 0..3),
    )
        .prop_map(|(filters, group_by, order_by, limit, select)| OperatorFragment {
            filters: filters.into_iter().map(|(c, o, v)| FilterPredicate::new(c, o, v)).collect(),
            group_by,
            order_by: order_by.into_iter().map(|(c, d)| OrderKey::new(c, d)).collect(),
            limit,
            select,
        })
}

pub fn fragment() -> impl Strategy<Value = OperatorFragment> {
    prop::collection::vec(column(), 1..6).prop_flat_map(|cols| fragment_over(cols, value().boxed()))
}

pub fn canonical_fragment() -> impl Strategy<Value = OperatorFragment> {
    fragment().prop_map(|f| canonicalize(&f))
}

/// Values shaped like the ones drifted models split (`New_York`).
pub fn schema_value() -> impl Strategy<Value = String> {
    prop_oneof![
        "[A-Z][a-z]{1,5}(_[A-Z][a-z]{1,5}){0,2}",
        "[0-9]{1,4}",
        "(19|20)[0-9]{2}-[01][0-9]",
    ]
}

/// A schema plus a canonical fragment drawn from its columns.
pub fn schema_and_fragment() -> impl Strategy<Value = (SchemaContext, OperatorFragment)> {
    let names = prop::collection::btree_set(
        prop_oneof![
            "[A-Z][a-z]{1,6}(_[A-Z][a-z]{1,6}){0,2}",
            select(vec!["Visit_Date", "Issue_Year", "Month", "TIMES_LATE", "City", "New"]).prop_map(String::from),
        ],
        1..7,
    );
    names.prop_flat_map(|names| {
        let cols: Vec<ColumnRef> = names.iter().map(|n| col(n)).collect();
        let schema = SchemaContext::new("t", cols.clone()).unwrap();
        (Just(schema), fragment_over(cols, schema_value().boxed()).prop_map(|f| canonicalize(&f)))
    })
}

pub fn case_from(id: String, schema: SchemaContext, expected: OperatorFragment) -> TestCase {
    TestCase {
        id,
        tier: Tier::Easy,
        task: "filter_extract".into(),
        question: "q".into(),
        schema,
        expected,
        source_entry: None,
    }
}

/// Random cases with distinct ids.
pub fn cases(max: usize) -> impl Strategy<Value = Vec<TestCase>> {
    prop::collection::vec(schema_and_fragment(), 1..max).prop_map(|v| {
        v.into_iter()
            .enumerate()
            .map(|(i, (s, f))| case_from(format!("c{i:03}"), s, f))
            .collect()
    })
}

pub fn shuffled<T: Clone + std::fmt::Debug + 'static>(items: Vec<T>) -> impl Strategy<Value = Vec<T>> {
    Just(items).prop_shuffle()
}

pub fn some_of<T: Clone + std::fmt::Debug + 'static>(items: Vec<T>) -> impl Strategy<Value = Vec<T>> {
    let n = items.len();
    subsequence(items, 0..=n)
}
