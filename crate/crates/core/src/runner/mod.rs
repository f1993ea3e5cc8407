//! Suite execution, failure categorization and the migration loop.

mod migrate;
mod report;

pub use migrate::{
    hint, merge_snippet, migrate, FixRecord, FixerError, GateRecord, Hint, InteractiveFixer, IterationRecord, MigrationConfig,
    MigrationError, MigrationOutcome, MigrationStatus, PromptFixer, ScriptedFixer,
};
pub use report::{render_markdown, render_structured, render_table, ReportFormat};

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::thread;

use serde::{Deserialize, Serialize};

use crate::operator::{canonicalize, compare, underscore_prefixes, DiffSet, OperatorFragment, SchemaContext};
use crate::output::{parse_output, ParseError, ParsedOutput};
use crate::prompt::{render, Registry, RenderError};
use crate::provider::{ChatMessage, ChatRequest, Provider, Usage};
use crate::taxonomy::FailureCategory;
use crate::testbed::{Suite, TestCase, Tier};

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
#[error("the output matches the expected fragment; there is nothing to categorize")]
pub struct NotAFailure;

fn actual_columns_outside_schema<'a>(
    actual: &'a OperatorFragment,
    schema: &'a SchemaContext,
) -> impl Iterator<Item = &'a str> + 'a {
    actual.columns().filter(|c| !schema.contains(c)).map(|c| c.as_str())
}

/// Assign exactly one category to a failed output. Rules are tried in a
/// fixed order so overlapping symptoms (a simplified column is also a
/// nonexistent one) land in the most specific bucket.
pub fn categorize(
    expected: &OperatorFragment,
    actual: &Result<ParsedOutput, ParseError>,
    schema: &SchemaContext,
) -> Result<FailureCategory, NotAFailure> {
    let parsed = match actual {
        Err(e) if e.is_fused_operator() => return Ok(FailureCategory::OperatorColumnFusion),
        Err(_) => return Ok(FailureCategory::FormatViolation),
        Ok(p) => p,
    };
    if !parsed.diagnostics.is_empty() {
        return Ok(FailureCategory::InfoMessageLeak);
    }
    let actual = canonicalize(&parsed.fragment);
    let diff = compare(expected, &actual, schema);
    if diff.is_empty() {
        return Err(NotAFailure);
    }
    if actual.order_by.is_empty() && !expected.order_by.is_empty() {
        return Ok(FailureCategory::MissingOrdering);
    }
    if actual.group_by.is_empty() && !expected.group_by.is_empty() {
        return Ok(FailureCategory::MissingGrouping);
    }
    if !actual.order_by.is_empty() && expected.order_by.is_empty() {
        return Ok(FailureCategory::RedundantOperation);
    }
    let truncated = actual_columns_outside_schema(&actual, schema).any(|a| {
        expected
            .columns()
            .any(|e| e.as_str().len() > a.len() && e.as_str().starts_with(a))
    });
    if truncated {
        return Ok(FailureCategory::ColumnSimplification);
    }
    let value_split = diff.filters.extra.iter().any(|p| {
        expected
            .filters
            .iter()
            .any(|e| underscore_prefixes(&e.value).any(|prefix| prefix == p.column.as_str()))
    });
    if value_split {
        return Ok(FailureCategory::ColumnValueConfusion);
    }
    if actual_columns_outside_schema(&actual, schema).next().is_some() {
        return Ok(FailureCategory::NonexistentColumn);
    }
    if !diff.filters.missing.is_empty() && diff.filters.extra.is_empty() {
        return Ok(FailureCategory::MissingImplicitFilter);
    }
    Ok(FailureCategory::SemanticMisinterpretation)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Pass,
    Fail,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParseOutcome {
    Parsed(ParsedOutput),
    Error(ParseError),
}

impl ParseOutcome {
    pub fn as_result(&self) -> Result<ParsedOutput, ParseError> {
        match self {
            Self::Parsed(p) => Ok(p.clone()),
            Self::Error(e) => Err(e.clone()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaseResult {
    pub case_id: String,
    pub task: String,
    pub tier: Tier,
    pub raw_output: String,
    pub parsed: ParseOutcome,
    pub verdict: Verdict,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub category: Option<FailureCategory>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diff: Option<DiffSet>,
    pub usage: Usage,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl CaseResult {
    pub fn passed(&self) -> bool {
        self.verdict == Verdict::Pass
    }
}

/// Judge one raw output against a case.
pub fn evaluate(case: &TestCase, raw_output: String, usage: Usage, lenient: bool) -> CaseResult {
    let parsed = parse_output(&raw_output);
    let mut warnings = Vec::new();
    let (verdict, diff) = match &parsed {
        Err(_) => (Verdict::Fail, None),
        Ok(p) => {
            let diff = compare(&case.expected, &canonicalize(&p.fragment), &case.schema);
            let verdict = match (diff.is_empty(), p.diagnostics.is_empty()) {
                (true, true) => Verdict::Pass,
                (true, false) if lenient => {
                    warnings.extend(p.diagnostics.iter().map(|d| format!("ignored line {}: {}", d.line_number, d.text)));
                    Verdict::Pass
                }
                _ => Verdict::Fail,
            };
            (verdict, (!diff.is_empty()).then_some(diff))
        }
    };
    let category = match verdict {
        Verdict::Pass => None,
        Verdict::Fail => Some(categorize(&case.expected, &parsed, &case.schema).unwrap_or(FailureCategory::FormatViolation)),
    };
    CaseResult {
        case_id: case.id.clone(),
        task: case.task.clone(),
        tier: case.tier,
        raw_output,
        parsed: match parsed {
            Ok(p) => ParseOutcome::Parsed(p),
            Err(e) => ParseOutcome::Error(e),
        },
        verdict,
        category,
        diff,
        usage,
        warnings,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct UsageTotals {
    pub calls: u64,
    pub input_tokens: u64,
    pub output_tokens: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub suite: String,
    pub model_tag: String,
    pub prompt_versions: BTreeMap<String, u32>,
    pub pass_rate: f64,
    pub histogram: BTreeMap<FailureCategory, usize>,
    pub usage: UsageTotals,
    pub results: Vec<CaseResult>,
    /// Seconds since the Unix epoch.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timestamp: Option<u64>,
}

/// Percentage with one decimal, halves rounded up. An empty run counts as
/// fully passing.
pub fn pass_rate(passed: usize, total: usize) -> f64 {
    if total == 0 {
        return 100.0;
    }
    let tenths = (2000 * passed as u64 + total as u64) / (2 * total as u64);
    tenths as f64 / 10.0
}

impl RunReport {
    pub fn from_results(
        suite: &str,
        model_tag: &str,
        prompt_versions: BTreeMap<String, u32>,
        results: Vec<CaseResult>,
    ) -> Self {
        let passed = results.iter().filter(|r| r.passed()).count();
        let mut histogram = BTreeMap::new();
        for c in results.iter().filter_map(|r| r.category) {
            *histogram.entry(c).or_insert(0) += 1;
        }
        let usage = UsageTotals {
            calls: results.len() as u64,
            input_tokens: results.iter().map(|r| r.usage.input_tokens).sum(),
            output_tokens: results.iter().map(|r| r.usage.output_tokens).sum(),
        };
        Self {
            suite: suite.to_string(),
            model_tag: model_tag.to_string(),
            prompt_versions,
            pass_rate: pass_rate(passed, results.len()),
            histogram,
            usage,
            results,
            timestamp: None,
        }
    }

    pub fn passed(&self) -> usize {
        self.results.iter().filter(|r| r.passed()).count()
    }

    pub fn all_passed(&self) -> bool {
        self.results.iter().all(CaseResult::passed)
    }

    pub fn failed_ids(&self) -> Vec<String> {
        self.results.iter().filter(|r| !r.passed()).map(|r| r.case_id.clone()).collect()
    }

    /// Whether the stored aggregates agree with the per-case results.
    pub fn is_consistent(&self) -> bool {
        let fresh = Self::from_results(&self.suite, &self.model_tag, self.prompt_versions.clone(), self.results.clone());
        fresh.pass_rate == self.pass_rate
            && fresh.histogram == self.histogram
            && fresh.usage == self.usage
            && self.results.iter().all(|r| r.passed() == r.category.is_none())
    }

    pub fn stamp_now(&mut self) {
        self.timestamp = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .ok()
            .map(|d| d.as_secs());
    }
}

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error("no template for task `{task}` and model `{model_tag}`")]
    MissingTemplate { task: String, model_tag: String },
    #[error("parallelism must be at least 1")]
    ZeroParallelism,
    #[error("case {case}: {source}")]
    Render { case: String, source: RenderError },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunOptions {
    pub parallelism: usize,
    /// Let diagnostics-only mismatches pass with a warning.
    pub lenient: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            parallelism: 4,
            lenient: false,
        }
    }
}

fn bindings(case: &TestCase) -> BTreeMap<String, String> {
    let schema = case.schema.describe();
    let context = case
        .schema
        .descriptions
        .iter()
        .map(|(k, v)| format!("{k}: {v}"))
        .collect::<Vec<_>>()
        .join("\n");
    [
        ("question", case.question.clone()),
        ("user_question", case.question.clone()),
        ("schema", schema.clone()),
        ("external_context", schema),
        ("context", context),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect()
}

/// The request the runner sends for a case.
pub fn build_request(registry: &Registry, case: &TestCase, model_tag: &str) -> Result<ChatRequest, RunError> {
    let template = registry.get(&case.task, model_tag).ok_or_else(|| RunError::MissingTemplate {
        task: case.task.clone(),
        model_tag: model_tag.to_string(),
    })?;
    let system = render(template, &bindings(case)).map_err(|source| RunError::Render {
        case: case.id.clone(),
        source,
    })?;
    let mut messages = Vec::with_capacity(2);
    if !system.trim().is_empty() {
        messages.push(ChatMessage::system(system));
    }
    messages.push(ChatMessage::user(case.question.clone()));
    Ok(ChatRequest::new(model_tag, messages).with_case(case.id.clone()))
}

fn run_case(provider: &dyn Provider, request: &ChatRequest, case: &TestCase, lenient: bool) -> CaseResult {
    match provider.complete(request) {
        Ok(resp) => evaluate(case, resp.content, resp.usage, lenient),
        Err(e) => {
            let raw_output = format!("transport error: {e}");
            CaseResult {
                case_id: case.id.clone(),
                task: case.task.clone(),
                tier: case.tier,
                parsed: match parse_output(&raw_output) {
                    Ok(p) => ParseOutcome::Parsed(p),
                    Err(e) => ParseOutcome::Error(e),
                },
                raw_output,
                verdict: Verdict::Fail,
                category: Some(FailureCategory::FormatViolation),
                diff: None,
                usage: Usage::default(),
                warnings: Vec::new(),
            }
        }
    }
}

/// Run every case of `suite` and assemble a report in suite order.
pub fn run_suite(
    provider: &dyn Provider,
    registry: &Registry,
    suite: &Suite,
    model_tag: &str,
    options: &RunOptions,
) -> Result<RunReport, RunError> {
    if options.parallelism == 0 {
        return Err(RunError::ZeroParallelism);
    }
    let mut prompt_versions = BTreeMap::new();
    for case in &suite.cases {
        if !prompt_versions.contains_key(&case.task) {
            let t = registry.get(&case.task, model_tag).ok_or_else(|| RunError::MissingTemplate {
                task: case.task.clone(),
                model_tag: model_tag.to_string(),
            })?;
            prompt_versions.insert(case.task.clone(), t.version);
        }
    }
    let requests = suite
        .cases
        .iter()
        .map(|c| build_request(registry, c, model_tag))
        .collect::<Result<Vec<_>, _>>()?;

    let next = AtomicUsize::new(0);
    let workers = options.parallelism.min(suite.cases.len()).max(1);
    let mut indexed: Vec<(usize, CaseResult)> = thread::scope(|s| {
        let handles: Vec<_> = (0..workers)
            .map(|_| {
                s.spawn(|| {
                    let mut done = Vec::new();
                    loop {
                        let i = next.fetch_add(1, Ordering::Relaxed);
                        let Some(case) = suite.cases.get(i) else { break };
                        done.push((i, run_case(provider, &requests[i], case, options.lenient)));
                    }
                    done
                })
            })
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("runner worker panicked"))
            .collect()
    });
    indexed.sort_by_key(|(i, _)| *i);
    let results = indexed.into_iter().map(|(_, r)| r).collect();
    Ok(RunReport::from_results(&suite.name, model_tag, prompt_versions, results))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "gate", rename_all = "lowercase")]
pub enum GateResult {
    Pass,
    Fail { failed: Vec<String> },
}

impl GateResult {
    pub fn passed(&self) -> bool {
        matches!(self, Self::Pass)
    }
}

pub fn regression_gate(report: &RunReport, threshold: f64) -> GateResult {
    if report.pass_rate >= threshold {
        GateResult::Pass
    } else {
        GateResult::Fail {
            failed: report.failed_ids(),
        }
    }
}
