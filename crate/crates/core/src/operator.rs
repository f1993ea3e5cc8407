//! Canonical representation of extracted SQL operator fragments and the
//! comparison semantics used by the runner.
//!
//! Join predicates are not modelled; a fragment covers select, filter,
//! group-by, order-by and limit only.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum OperatorError {
    #[error("column name is empty")]
    EmptyName,
    #[error("invalid column name `{0}`")]
    InvalidName(String),
    #[error("schema `{0}` declares no columns")]
    EmptySchema(String),
}

/// A normalized column identifier, `[A-Za-z_][A-Za-z0-9_]*`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct ColumnRef(String);

impl ColumnRef {
    pub fn as_str(&self) -> &str {
        &self.0
    }

    /// Underscore-delimited tokens of the name.
    pub fn tokens(&self) -> impl Iterator<Item = &str> {
        self.0.split('_')
    }
}

impl fmt::Display for ColumnRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl TryFrom<String> for ColumnRef {
    type Error = OperatorError;

    fn try_from(value: String) -> Result<Self, Self::Error> {
        normalize_column(&value)
    }
}

impl TryFrom<&str> for ColumnRef {
    type Error = OperatorError;

    fn try_from(value: &str) -> Result<Self, Self::Error> {
        normalize_column(value)
    }
}

impl From<ColumnRef> for String {
    fn from(c: ColumnRef) -> String {
        c.0
    }
}

pub fn is_identifier(s: &str) -> bool {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) if c.is_ascii_alphabetic() || c == '_' => {}
        _ => return false,
    }
    chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

/// Every proper prefix of `s` that ends just before an underscore:
/// `New_York_City` yields `New`, `New_York`.
pub fn underscore_prefixes(s: &str) -> impl Iterator<Item = &str> {
    s.match_indices('_').filter(|(i, _)| *i > 0).map(move |(i, _)| &s[..i])
}

const QUOTES: [char; 3] = ['\'', '"', '`'];

/// Strip surrounding quotes, collapse whitespace runs into single
/// underscores, keep character case.
pub fn normalize_column(raw: &str) -> Result<ColumnRef, OperatorError> {
    let mut s = raw.trim();
    while let Some(c) = s.chars().next() {
        if QUOTES.contains(&c) && s.len() >= 2 && s.ends_with(c) {
            s = s[1..s.len() - 1].trim();
        } else {
            break;
        }
    }
    if s.is_empty() {
        return Err(OperatorError::EmptyName);
    }
    let name = s.split_whitespace().collect::<Vec<_>>().join("_");
    if !is_identifier(&name) {
        return Err(OperatorError::InvalidName(raw.to_string()));
    }
    Ok(ColumnRef(name))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CompareOp {
    #[serde(rename = "=")]
    Eq,
    #[serde(rename = "!=")]
    Ne,
    #[serde(rename = ">")]
    Gt,
    #[serde(rename = ">=")]
    Ge,
    #[serde(rename = "<")]
    Lt,
    #[serde(rename = "<=")]
    Le,
}

impl CompareOp {
    pub const ALL: [CompareOp; 6] = [Self::Eq, Self::Ne, Self::Gt, Self::Ge, Self::Lt, Self::Le];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Eq => "=",
            Self::Ne => "!=",
            Self::Gt => ">",
            Self::Ge => ">=",
            Self::Lt => "<",
            Self::Le => "<=",
        }
    }

    pub fn from_symbol(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|op| op.as_str() == s)
    }
}

// Ordered by symbol text so canonical filter order is plain lexicographic.
impl Ord for CompareOp {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.as_str().cmp(other.as_str())
    }
}

impl PartialOrd for CompareOp {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for CompareOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// `column op 'value'`. The value is the quote-stripped source text, kept
/// byte-for-byte.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct FilterPredicate {
    pub column: ColumnRef,
    pub op: CompareOp,
    pub value: String,
}

impl FilterPredicate {
    pub fn new(column: ColumnRef, op: CompareOp, value: impl Into<String>) -> Self {
        Self {
            column,
            op,
            value: value.into(),
        }
    }
}

impl fmt::Display for FilterPredicate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{}'{}'", self.column, self.op, self.value)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
pub enum Direction {
    #[default]
    #[serde(rename = "ASC")]
    Asc,
    #[serde(rename = "DESC")]
    Desc,
}

impl Direction {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Asc => "ASC",
            Self::Desc => "DESC",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct OrderKey {
    pub column: ColumnRef,
    #[serde(default)]
    pub direction: Direction,
}

impl OrderKey {
    pub fn new(column: ColumnRef, direction: Direction) -> Self {
        Self { column, direction }
    }
}

impl fmt::Display for OrderKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {}", self.column, self.direction.as_str())
    }
}

/// Structured operator content extracted from one question.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct OperatorFragment {
    pub filters: Vec<FilterPredicate>,
    pub group_by: Vec<ColumnRef>,
    pub order_by: Vec<OrderKey>,
    pub limit: Option<u64>,
    pub select: Vec<ColumnRef>,
}

impl OperatorFragment {
    pub fn is_empty(&self) -> bool {
        self.filters.is_empty()
            && self.group_by.is_empty()
            && self.order_by.is_empty()
            && self.limit.is_none()
            && self.select.is_empty()
    }

    /// Every column mentioned, in serialization order (select, filters,
    /// group_by, order_by), duplicates included.
    pub fn columns(&self) -> impl Iterator<Item = &ColumnRef> {
        self.select
            .iter()
            .chain(self.filters.iter().map(|p| &p.column))
            .chain(self.group_by.iter())
            .chain(self.order_by.iter().map(|k| &k.column))
    }

    /// Sort filters into canonical order. Sequences keep their order.
    pub fn canonical(mut self) -> Self {
        self.filters.sort();
        self
    }

    pub fn is_canonical(&self) -> bool {
        self.filters.windows(2).all(|w| w[0] <= w[1])
    }
}

/// Canonical form: filters sorted by (column, op, value). Columns are
/// normalized at construction so there is nothing else to rewrite.
pub fn canonicalize(fragment: &OperatorFragment) -> OperatorFragment {
    fragment.clone().canonical()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SchemaContext {
    pub table: String,
    pub columns: Vec<ColumnRef>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub descriptions: BTreeMap<ColumnRef, String>,
}

impl SchemaContext {
    pub fn new(table: impl Into<String>, columns: Vec<ColumnRef>) -> Result<Self, OperatorError> {
        let table = table.into();
        if columns.is_empty() {
            return Err(OperatorError::EmptySchema(table));
        }
        let mut seen = BTreeSet::new();
        let columns = columns.into_iter().filter(|c| seen.insert(c.clone())).collect();
        Ok(Self {
            table,
            columns,
            descriptions: BTreeMap::new(),
        })
    }

    pub fn validate(&self) -> Result<(), OperatorError> {
        if self.columns.is_empty() {
            return Err(OperatorError::EmptySchema(self.table.clone()));
        }
        Ok(())
    }

    pub fn contains(&self, column: &ColumnRef) -> bool {
        self.columns.iter().any(|c| c == column)
    }

    pub fn contains_name(&self, name: &str) -> bool {
        self.columns.iter().any(|c| c.as_str() == name)
    }

    /// One-line rendering used as the `{schema}` prompt binding.
    pub fn describe(&self) -> String {
        let cols: Vec<&str> = self.columns.iter().map(|c| c.as_str()).collect();
        format!("{}({})", self.table, cols.join(", "))
    }
}

/// Missing/extra elements of an order-sensitive list.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Deserialize<'de>"))]
pub struct SeqDiff<T> {
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub missing: Vec<T>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub extra: Vec<T>,
    /// Same elements, different order.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub reordered: bool,
}

impl<T> Default for SeqDiff<T> {
    fn default() -> Self {
        Self {
            missing: Vec::new(),
            extra: Vec::new(),
            reordered: false,
        }
    }
}

impl<T: Clone + Ord> SeqDiff<T> {
    fn of(expected: &[T], actual: &[T]) -> Self {
        if expected == actual {
            return Self::default();
        }
        let (missing, extra) = multiset_difference(expected, actual);
        let reordered = missing.is_empty() && extra.is_empty();
        Self {
            missing,
            extra,
            reordered,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.missing.is_empty() && self.extra.is_empty() && !self.reordered
    }
}

fn multiset_difference<T: Clone + Ord>(expected: &[T], actual: &[T]) -> (Vec<T>, Vec<T>) {
    let mut counts: BTreeMap<&T, i64> = BTreeMap::new();
    for e in expected {
        *counts.entry(e).or_default() += 1;
    }
    for a in actual {
        *counts.entry(a).or_default() -= 1;
    }
    let mut missing = Vec::new();
    let mut extra = Vec::new();
    for (item, n) in counts {
        for _ in 0..n.max(0) {
            missing.push(item.clone());
        }
        for _ in 0..(-n).max(0) {
            extra.push(item.clone());
        }
    }
    (missing, extra)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LimitDiff {
    pub expected: Option<u64>,
    pub actual: Option<u64>,
}

/// Field-by-field difference between an expected and an actual fragment.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct DiffSet {
    #[serde(default, skip_serializing_if = "SeqDiff::is_empty")]
    pub filters: SeqDiff<FilterPredicate>,
    #[serde(default, skip_serializing_if = "SeqDiff::is_empty")]
    pub group_by: SeqDiff<ColumnRef>,
    #[serde(default, skip_serializing_if = "SeqDiff::is_empty")]
    pub order_by: SeqDiff<OrderKey>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub limit: Option<LimitDiff>,
    #[serde(default, skip_serializing_if = "SeqDiff::is_empty")]
    pub select: SeqDiff<ColumnRef>,
    /// Columns introduced by the actual fragment that the schema lacks.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub unknown_columns: Vec<ColumnRef>,
}

impl DiffSet {
    pub fn is_empty(&self) -> bool {
        self.filters.is_empty()
            && self.group_by.is_empty()
            && self.order_by.is_empty()
            && self.limit.is_none()
            && self.select.is_empty()
            && self.unknown_columns.is_empty()
    }

    /// Columns of every extra element, in field order.
    pub fn extra_columns(&self) -> impl Iterator<Item = &ColumnRef> {
        self.select
            .extra
            .iter()
            .chain(self.filters.extra.iter().map(|p| &p.column))
            .chain(self.group_by.extra.iter())
            .chain(self.order_by.extra.iter().map(|k| &k.column))
    }
}

/// Compare two canonical fragments. Filters compare as a multiset; the
/// other lists are order-sensitive.
pub fn compare(expected: &OperatorFragment, actual: &OperatorFragment, schema: &SchemaContext) -> DiffSet {
    let mut filters_e = expected.filters.clone();
    let mut filters_a = actual.filters.clone();
    filters_e.sort();
    filters_a.sort();
    let (missing, extra) = multiset_difference(&filters_e, &filters_a);
    let mut diff = DiffSet {
        filters: SeqDiff {
            missing,
            extra,
            reordered: false,
        },
        group_by: SeqDiff::of(&expected.group_by, &actual.group_by),
        order_by: SeqDiff::of(&expected.order_by, &actual.order_by),
        limit: (expected.limit != actual.limit).then_some(LimitDiff {
            expected: expected.limit,
            actual: actual.limit,
        }),
        select: SeqDiff::of(&expected.select, &actual.select),
        unknown_columns: Vec::new(),
    };
    let mut unknown: Vec<ColumnRef> = Vec::new();
    for c in diff.extra_columns() {
        if !schema.contains(c) && !unknown.contains(c) {
            unknown.push(c.clone());
        }
    }
    diff.unknown_columns = unknown;
    diff
}
