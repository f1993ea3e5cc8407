//! Line-oriented output grammar shared by model outputs, suite files and
//! reports.
//!
//! ```text
//! select: [col, ...]
//! filters: [col op 'value', ...]
//! group_by: [col, ...]
//! order_by: [col ASC|DESC, ...]
//! limit: N
//! ```
//!
//! Keywords are case-insensitive and whitespace around punctuation is
//! ignored. Only the `filters:` line appears in the original prompt format;
//! the other four lines extend it in the same bracketed style. Any other
//! non-empty line is kept as a diagnostic instead of failing the parse.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::operator::{
    normalize_column, ColumnRef, CompareOp, Direction, FilterPredicate, OperatorFragment, OrderKey,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ParseErrorKind {
    NoRecognizedLines,
    MalformedList,
    BadOperator,
    UnterminatedQuote,
    BadLimit,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, thiserror::Error)]
#[error("{kind:?} at line {line_number}: `{snippet}`")]
pub struct ParseError {
    pub kind: ParseErrorKind,
    /// 1-based.
    pub line_number: usize,
    pub snippet: String,
}

impl ParseError {
    fn new(kind: ParseErrorKind, line_number: usize, snippet: &str) -> Self {
        Self {
            kind,
            line_number,
            snippet: snippet.to_string(),
        }
    }

    /// True when a `BadOperator` snippet shows operator characters glued to
    /// a column name (`Gender>=='Male'`, `COUNT>TASKS`) rather than a
    /// predicate that lacks an operator entirely.
    pub fn is_fused_operator(&self) -> bool {
        self.kind == ParseErrorKind::BadOperator && operator_runs(&self.snippet) > 0
    }
}

fn operator_runs(s: &str) -> usize {
    let mut runs = 0;
    let mut in_run = false;
    let mut quote = None;
    for c in s.chars() {
        if let Some(q) = quote {
            if c == q {
                quote = None;
            }
            continue;
        }
        if is_quote(c) {
            quote = Some(c);
            in_run = false;
            continue;
        }
        if is_op_char(c) {
            if !in_run {
                runs += 1;
            }
            in_run = true;
        } else {
            in_run = false;
        }
    }
    runs
}

/// A line the grammar did not recognize, kept verbatim.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InfoLine {
    pub line_number: usize,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParsedOutput {
    pub fragment: OperatorFragment,
    pub diagnostics: Vec<InfoLine>,
    pub recognized_line_count: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Field {
    Select,
    Filters,
    GroupBy,
    OrderBy,
    Limit,
}

impl Field {
    fn from_keyword(word: &str) -> Option<Self> {
        match word.to_ascii_lowercase().as_str() {
            "select" => Some(Self::Select),
            "filters" => Some(Self::Filters),
            "group_by" => Some(Self::GroupBy),
            "order_by" => Some(Self::OrderBy),
            "limit" => Some(Self::Limit),
            _ => None,
        }
    }
}

fn is_op_char(c: char) -> bool {
    matches!(c, '=' | '!' | '<' | '>')
}

fn is_quote(c: char) -> bool {
    c == '\'' || c == '"'
}

/// Split `keyword : rest` when the line starts with a grammar keyword.
fn recognize(line: &str) -> Option<(Field, &str)> {
    let trimmed = line.trim_start();
    let end = trimmed
        .find(|c: char| !(c.is_ascii_alphabetic() || c == '_'))
        .unwrap_or(trimmed.len());
    let field = Field::from_keyword(&trimmed[..end])?;
    let rest = trimmed[end..].trim_start();
    rest.strip_prefix(':').map(|r| (field, r))
}

/// Parse raw model output.
pub fn parse_output(text: &str) -> Result<ParsedOutput, ParseError> {
    let mut fragment = OperatorFragment::default();
    let mut diagnostics = Vec::new();
    let mut seen: Vec<Field> = Vec::new();

    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.strip_suffix('\r').unwrap_or(raw);
        if line.trim().is_empty() {
            continue;
        }
        let Some((field, rest)) = recognize(line) else {
            diagnostics.push(InfoLine {
                line_number: line_no,
                text: line.to_string(),
            });
            continue;
        };
        if seen.contains(&field) {
            return Err(ParseError::new(ParseErrorKind::MalformedList, line_no, line.trim()));
        }
        seen.push(field);
        match field {
            Field::Filters => {
                for item in split_list(rest, line_no)? {
                    fragment.filters.push(parse_predicate(item, line_no)?);
                }
            }
            Field::GroupBy => {
                for item in split_list(rest, line_no)? {
                    fragment.group_by.push(parse_column(item, line_no)?);
                }
            }
            Field::Select => {
                for item in split_list(rest, line_no)? {
                    fragment.select.push(parse_column(item, line_no)?);
                }
            }
            Field::OrderBy => {
                for item in split_list(rest, line_no)? {
                    fragment.order_by.push(parse_order_key(item, line_no)?);
                }
            }
            Field::Limit => {
                let value = rest.trim();
                let n = value
                    .parse::<u64>()
                    .map_err(|_| ParseError::new(ParseErrorKind::BadLimit, line_no, value))?;
                fragment.limit = Some(n);
            }
        }
    }

    if seen.is_empty() {
        let snippet = text.lines().next().unwrap_or("");
        return Err(ParseError::new(ParseErrorKind::NoRecognizedLines, 1, snippet));
    }
    Ok(ParsedOutput {
        fragment,
        diagnostics,
        recognized_line_count: seen.len(),
    })
}

/// Items of a `[a, b, c]` list, as trimmed slices of the source line.
fn split_list(rest: &str, line_no: usize) -> Result<Vec<&str>, ParseError> {
    let body = rest.trim();
    let Some(inner) = body.strip_prefix('[') else {
        return Err(ParseError::new(ParseErrorKind::MalformedList, line_no, body));
    };
    let mut items = Vec::new();
    let mut start = 0;
    let mut quote: Option<(char, usize)> = None;
    let mut close = None;
    for (i, c) in inner.char_indices() {
        if let Some((q, _)) = quote {
            if c == q {
                quote = None;
            }
            continue;
        }
        match c {
            '\'' | '"' => quote = Some((c, i)),
            ',' => {
                items.push(&inner[start..i]);
                start = i + 1;
            }
            ']' => {
                items.push(&inner[start..i]);
                close = Some(i);
                break;
            }
            _ => {}
        }
    }
    if let Some((_, at)) = quote {
        return Err(ParseError::new(ParseErrorKind::UnterminatedQuote, line_no, &inner[at..]));
    }
    let Some(close) = close else {
        return Err(ParseError::new(ParseErrorKind::MalformedList, line_no, body));
    };
    if !inner[close + 1..].trim().is_empty() {
        return Err(ParseError::new(ParseErrorKind::MalformedList, line_no, body));
    }
    if items.len() == 1 && items[0].trim().is_empty() {
        return Ok(Vec::new());
    }
    let items: Vec<&str> = items.into_iter().map(str::trim).collect();
    if items.iter().any(|s| s.is_empty()) {
        return Err(ParseError::new(ParseErrorKind::MalformedList, line_no, body));
    }
    Ok(items)
}

fn parse_column(item: &str, line_no: usize) -> Result<ColumnRef, ParseError> {
    if item.chars().any(is_op_char) {
        return Err(ParseError::new(ParseErrorKind::BadOperator, line_no, item));
    }
    normalize_column(item).map_err(|_| ParseError::new(ParseErrorKind::MalformedList, line_no, item))
}

fn parse_order_key(item: &str, line_no: usize) -> Result<OrderKey, ParseError> {
    let (column, direction) = match item.rsplit_once(char::is_whitespace) {
        Some((head, tail)) if tail.eq_ignore_ascii_case("asc") => (head, Direction::Asc),
        Some((head, tail)) if tail.eq_ignore_ascii_case("desc") => (head, Direction::Desc),
        _ => (item, Direction::Asc),
    };
    Ok(OrderKey::new(parse_column(column, line_no)?, direction))
}

/// `column op value` with longest-match operator tokenization.
fn parse_predicate(item: &str, line_no: usize) -> Result<FilterPredicate, ParseError> {
    let bad_op = || ParseError::new(ParseErrorKind::BadOperator, line_no, item);
    let malformed = || ParseError::new(ParseErrorKind::MalformedList, line_no, item);

    let mut quote = None;
    let mut op_at = None;
    for (i, c) in item.char_indices() {
        if let Some(q) = quote {
            if c == q {
                quote = None;
            }
            continue;
        }
        if is_quote(c) {
            quote = Some(c);
        } else if is_op_char(c) {
            op_at = Some(i);
            break;
        }
    }
    let at = op_at.ok_or_else(bad_op)?;
    let tail = &item[at..];
    let (op, len) = match tail.get(..2).and_then(CompareOp::from_symbol) {
        Some(op) => (op, 2),
        None => match tail.get(..1).and_then(CompareOp::from_symbol) {
            Some(op) => (op, 1),
            None => return Err(bad_op()),
        },
    };
    let rest = item[at + len..].trim();
    if rest.starts_with(is_op_char) {
        return Err(bad_op());
    }
    let column = normalize_column(&item[..at]).map_err(|_| malformed())?;

    let value = match rest.chars().next() {
        Some(q) if is_quote(q) => {
            let body = &rest[1..];
            let end = body.find(q).ok_or_else(|| {
                ParseError::new(ParseErrorKind::UnterminatedQuote, line_no, rest)
            })?;
            if !body[end + 1..].trim().is_empty() {
                return Err(malformed());
            }
            body[..end].to_string()
        }
        Some(_) => {
            if rest.chars().any(is_op_char) {
                return Err(bad_op());
            }
            if rest.chars().any(is_quote) {
                return Err(malformed());
            }
            rest.to_string()
        }
        None => return Err(malformed()),
    };
    Ok(FilterPredicate { column, op, value })
}

struct QuotedValue<'a>(&'a str);

impl fmt::Display for QuotedValue<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let q = if self.0.contains('\'') && !self.0.contains('"') {
            '"'
        } else {
            '\''
        };
        write!(f, "{q}{}{q}", self.0)
    }
}

fn join<T, F: Fn(&T) -> String>(items: &[T], render: F) -> String {
    items.iter().map(render).collect::<Vec<_>>().join(", ")
}

/// Emit the grammar: one line per non-empty field in the fixed order
/// select, filters, group_by, order_by, limit. An empty fragment is
/// `filters: []`.
pub fn serialize(fragment: &OperatorFragment) -> String {
    let mut lines = Vec::new();
    if !fragment.select.is_empty() {
        lines.push(format!("select: [{}]", join(&fragment.select, |c| c.to_string())));
    }
    if !fragment.filters.is_empty() || fragment.is_empty() {
        lines.push(format!(
            "filters: [{}]",
            join(&fragment.filters, |p| format!(
                "{}{}{}",
                p.column,
                p.op,
                QuotedValue(&p.value)
            ))
        ));
    }
    if !fragment.group_by.is_empty() {
        lines.push(format!("group_by: [{}]", join(&fragment.group_by, |c| c.to_string())));
    }
    if !fragment.order_by.is_empty() {
        lines.push(format!("order_by: [{}]", join(&fragment.order_by, |k| k.to_string())));
    }
    if let Some(n) = fragment.limit {
        lines.push(format!("limit: {n}"));
    }
    lines.join("\n")
}
