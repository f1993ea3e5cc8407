//! The semi-assisted migration loop: run the testbed, hand failing tasks
//! to a fixer along with hints, repeat until clean, then gate on the
//! regression suite.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{regression_gate, run_suite, GateResult, RunError, RunOptions, RunReport};
use crate::prompt::{lint, parse_prompt_file, template_path, Feature, PromptTemplate, Registry, RegistryError, SectionKind};
use crate::provider::Provider;
use crate::taxonomy::FailureCategory;
use crate::testbed::{extend_suite, Suite, TestCase, TestbedError, Tier};

/// A fixed recommendation for one failure category.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Hint {
    pub category: FailureCategory,
    pub feature: Feature,
    pub text: String,
}

pub fn hint(category: FailureCategory) -> Hint {
    use FailureCategory::*;
    let (feature, advice) = match category {
        MissingOrdering => (
            Feature::FormattingRules,
            "add explicit rule: include ORDER BY for time/trend questions",
        ),
        MissingGrouping => (Feature::Examples, "add worked examples that group per category or period"),
        NonexistentColumn => (
            Feature::UnderscoreRule,
            "add rule: use the schema's column names, with underscores instead of spaces",
        ),
        SemanticMisinterpretation => (
            Feature::Examples,
            "add worked examples showing how ambiguous columns are read",
        ),
        MissingImplicitFilter => (Feature::ImplicitInferenceRule, "add rule: infer implicit columns/filters"),
        ColumnValueConfusion => (
            Feature::NoQuoteRule,
            "add rule: do not quote column names and keep values whole",
        ),
        ColumnSimplification => (
            Feature::UnderscoreRule,
            "add rule: keep full underscore-joined column names exactly as in the schema",
        ),
        FormatViolation => (Feature::ExplicitOutputFormat, "add explicit output_format section"),
        InfoMessageLeak => (
            Feature::EmptyListRule,
            "add rule: when nothing matches, return filters: [] instead of a message",
        ),
        RedundantOperation => (
            Feature::Examples,
            "add worked examples without ORDER BY where none is asked for",
        ),
        OperatorColumnFusion => (
            Feature::FormattingRules,
            "add formatting rules that separate column, operator and value",
        ),
    };
    Hint {
        category,
        feature,
        text: format!("{advice} ({})", feature.name()),
    }
}

#[derive(Debug, thiserror::Error)]
pub enum FixerError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{file}:{line}: {message}")]
    Syntax { file: PathBuf, line: usize, message: String },
}

/// Proposes a revised template for a failing task. `Ok(None)` means the
/// fixer has nothing more to offer.
pub trait PromptFixer {
    fn propose(
        &mut self,
        template: &PromptTemplate,
        failures: &[FailureCategory],
        hints: &[Hint],
    ) -> Result<Option<PromptTemplate>, FixerError>;
}

fn same_content(a: &PromptTemplate, b: &PromptTemplate) -> bool {
    a.sections == b.sections && a.example_encoding == b.example_encoding
}

/// Adds one hinted feature per call from a directory of
/// `<feature_name>.prompt` snippets.
#[derive(Debug, Clone, Default)]
pub struct ScriptedFixer {
    snippets: BTreeMap<Feature, PromptTemplate>,
}

impl ScriptedFixer {
    pub fn load(dir: &Path) -> Result<Self, FixerError> {
        let io = |source| FixerError::Io {
            path: dir.to_path_buf(),
            source,
        };
        let mut snippets = BTreeMap::new();
        let mut paths: Vec<PathBuf> = fs::read_dir(dir)
            .map_err(io)?
            .map(|e| e.map(|e| e.path()))
            .collect::<Result<_, _>>()
            .map_err(io)?;
        paths.sort();
        for path in paths {
            if path.extension().and_then(|e| e.to_str()) != Some("prompt") {
                continue;
            }
            let Some(feature) = path.file_stem().and_then(|s| s.to_str()).and_then(|s| s.parse::<Feature>().ok())
            else {
                log::warn!("ignoring fixture {} (not named after a prompt feature)", path.display());
                continue;
            };
            let text = fs::read_to_string(&path).map_err(|source| FixerError::Io {
                path: path.clone(),
                source,
            })?;
            let snippet = parse_prompt_file(&text, "fixture", "fixture").map_err(|(line, message)| FixerError::Syntax {
                file: path.clone(),
                line,
                message,
            })?;
            snippets.insert(feature, snippet);
        }
        Ok(Self { snippets })
    }

    pub fn with_snippet(mut self, feature: Feature, snippet: PromptTemplate) -> Self {
        self.snippets.insert(feature, snippet);
        self
    }

    pub fn features(&self) -> impl Iterator<Item = Feature> + '_ {
        self.snippets.keys().copied()
    }

    fn present(&self, template: &PromptTemplate, feature: Feature) -> bool {
        let have = lint(template);
        match feature {
            Feature::Examples => {
                let want = self.snippets.get(&feature).map_or(1, |s| lint(s).example_count.max(1));
                have.example_count >= want
            }
            f => have.has(f, 1),
        }
    }
}

/// Fold a snippet into a template: rules and examples accumulate, every
/// other section is replaced or added.
pub fn merge_snippet(template: &PromptTemplate, snippet: &PromptTemplate) -> PromptTemplate {
    let mut out = template.clone();
    for s in &snippet.sections {
        match (s.kind, out.section_mut(s.kind)) {
            (SectionKind::Rules, Some(existing)) => {
                if existing.body.is_empty() {
                    existing.body = s.body.clone();
                }
                for r in &s.rules {
                    if !existing.rules.contains(r) {
                        existing.rules.push(r.clone());
                    }
                }
            }
            (SectionKind::Examples, Some(existing)) => {
                for e in &s.examples {
                    if !existing.examples.contains(e) {
                        existing.examples.push(e.clone());
                    }
                }
            }
            _ => out.put_section(s.clone()),
        }
    }
    out
}

impl PromptFixer for ScriptedFixer {
    fn propose(
        &mut self,
        template: &PromptTemplate,
        _failures: &[FailureCategory],
        hints: &[Hint],
    ) -> Result<Option<PromptTemplate>, FixerError> {
        let hinted: BTreeSet<Feature> = hints.iter().map(|h| h.feature).collect();
        let next = Feature::ALL
            .into_iter()
            .filter(|f| hinted.contains(f) && self.snippets.contains_key(f))
            .find(|f| !self.present(template, *f));
        Ok(next.map(|f| merge_snippet(template, &self.snippets[&f])))
    }
}

/// Prints hints, waits for the operator to edit the prompt file, then
/// reloads it.
pub struct InteractiveFixer<R, W> {
    root: PathBuf,
    input: R,
    output: W,
}

impl<R: BufRead, W: Write> InteractiveFixer<R, W> {
    pub fn new(root: impl Into<PathBuf>, input: R, output: W) -> Self {
        Self {
            root: root.into(),
            input,
            output,
        }
    }
}

impl<R: BufRead, W: Write> PromptFixer for InteractiveFixer<R, W> {
    fn propose(
        &mut self,
        template: &PromptTemplate,
        failures: &[FailureCategory],
        hints: &[Hint],
    ) -> Result<Option<PromptTemplate>, FixerError> {
        let path = template_path(&self.root, &template.task, &template.model_tag);
        let io = |source| FixerError::Io {
            path: path.clone(),
            source,
        };
        let mut counts: BTreeMap<FailureCategory, usize> = BTreeMap::new();
        for f in failures {
            *counts.entry(*f).or_default() += 1;
        }
        writeln!(self.output, "task {} on {}:", template.task, template.model_tag).map_err(io)?;
        for (category, n) in &counts {
            writeln!(self.output, "  {category} x{n}").map_err(io)?;
        }
        for h in hints {
            writeln!(self.output, "  hint: {}", h.text).map_err(io)?;
        }
        writeln!(self.output, "edit {} and press Enter to re-run (EOF stops)", path.display()).map_err(io)?;
        self.output.flush().map_err(io)?;
        let mut line = String::new();
        if self.input.read_line(&mut line).map_err(io)? == 0 {
            return Ok(None);
        }
        let text = fs::read_to_string(&path).map_err(io)?;
        let edited = parse_prompt_file(&text, &template.task, &template.model_tag).map_err(|(line, message)| {
            FixerError::Syntax {
                file: path.clone(),
                line,
                message,
            }
        })?;
        Ok((!same_content(&edited, template)).then_some(edited))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MigrationStatus {
    Converged,
    IterationLimit,
    GateLoopLimit,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MigrationConfig {
    /// Testbed runs allowed across all gate rounds.
    pub max_iterations: usize,
    pub gate_threshold: f64,
    /// Regression gate attempts before giving up.
    pub max_gate_loops: usize,
    pub run: RunOptions,
}

impl Default for MigrationConfig {
    fn default() -> Self {
        Self {
            max_iterations: 10,
            gate_threshold: 100.0,
            max_gate_loops: 3,
            run: RunOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixRecord {
    pub task: String,
    pub categories: Vec<FailureCategory>,
    pub hints: Vec<String>,
    /// Version written, or `None` when the fixer changed nothing.
    pub new_version: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub prompt_versions: BTreeMap<String, u32>,
    pub report: RunReport,
    pub fixes: Vec<FixRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateRecord {
    pub after_iteration: usize,
    pub report: RunReport,
    pub result: GateResult,
    /// Regression cases copied into the testbed after this gate.
    pub added_cases: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MigrationOutcome {
    pub model_tag: String,
    pub status: MigrationStatus,
    pub iterations: Vec<IterationRecord>,
    pub gates: Vec<GateRecord>,
    pub fixer_calls: usize,
    pub final_prompt_versions: BTreeMap<String, u32>,
    pub testbed: Suite,
}

impl MigrationOutcome {
    pub fn converged(&self) -> bool {
        self.status == MigrationStatus::Converged
    }
}

#[derive(Debug, thiserror::Error)]
pub enum MigrationError {
    #[error(transparent)]
    Run(#[from] RunError),
    #[error(transparent)]
    Registry(#[from] RegistryError),
    #[error(transparent)]
    Fixer(#[from] FixerError),
    #[error(transparent)]
    Testbed(#[from] TestbedError),
}

fn versions(registry: &Registry, suite: &Suite, model_tag: &str) -> BTreeMap<String, u32> {
    suite
        .cases
        .iter()
        .filter_map(|c| registry.get(&c.task, model_tag).map(|t| (c.task.clone(), t.version)))
        .collect()
}

/// Drive templates for `model_tag` until the testbed passes and the
/// regression gate holds. Templates for every task must already exist.
pub fn migrate(
    registry: &mut Registry,
    testbed: &Suite,
    regression: &Suite,
    provider: &dyn Provider,
    fixer: &mut dyn PromptFixer,
    model_tag: &str,
    config: &MigrationConfig,
) -> Result<MigrationOutcome, MigrationError> {
    let mut outcome = MigrationOutcome {
        model_tag: model_tag.to_string(),
        status: MigrationStatus::IterationLimit,
        iterations: Vec::new(),
        gates: Vec::new(),
        fixer_calls: 0,
        final_prompt_versions: BTreeMap::new(),
        testbed: testbed.clone(),
    };
    let finish = |mut o: MigrationOutcome, status, registry: &Registry| {
        o.status = status;
        o.final_prompt_versions = versions(registry, &o.testbed, model_tag);
        o.final_prompt_versions.extend(versions(registry, regression, model_tag));
        Ok(o)
    };

    loop {
        loop {
            if outcome.iterations.len() >= config.max_iterations {
                return finish(outcome, MigrationStatus::IterationLimit, registry);
            }
            let report = run_suite(provider, registry, &outcome.testbed, model_tag, &config.run)?;
            let mut record = IterationRecord {
                iteration: outcome.iterations.len() + 1,
                prompt_versions: report.prompt_versions.clone(),
                report,
                fixes: Vec::new(),
            };
            if record.report.all_passed() {
                outcome.iterations.push(record);
                break;
            }
            let mut by_task: BTreeMap<String, Vec<FailureCategory>> = BTreeMap::new();
            for r in record.report.results.iter().filter(|r| !r.passed()) {
                by_task
                    .entry(r.task.clone())
                    .or_default()
                    .push(r.category.unwrap_or(FailureCategory::FormatViolation));
            }
            for (task, categories) in by_task {
                let distinct: BTreeSet<FailureCategory> = categories.iter().copied().collect();
                let hints: Vec<Hint> = distinct.iter().map(|c| hint(*c)).collect();
                let current = registry.require(&task, model_tag)?.clone();
                outcome.fixer_calls += 1;
                let proposal = fixer.propose(&current, &categories, &hints)?;
                let new_version = match proposal.filter(|p| !same_content(p, &current)) {
                    Some(p) => {
                        let mut next = current.next_revision();
                        next.sections = p.sections;
                        next.example_encoding = p.example_encoding;
                        let v = next.version;
                        registry.insert(next)?;
                        Some(v)
                    }
                    None => None,
                };
                record.fixes.push(FixRecord {
                    task,
                    categories: distinct.into_iter().collect(),
                    hints: hints.into_iter().map(|h| h.text).collect(),
                    new_version,
                });
            }
            outcome.iterations.push(record);
        }

        let report = run_suite(provider, registry, regression, model_tag, &config.run)?;
        let result = regression_gate(&report, config.gate_threshold);
        let mut gate = GateRecord {
            after_iteration: outcome.iterations.len(),
            report,
            result: result.clone(),
            added_cases: Vec::new(),
        };
        let GateResult::Fail { failed } = result else {
            outcome.gates.push(gate);
            return finish(outcome, MigrationStatus::Converged, registry);
        };
        if outcome.gates.len() + 1 >= config.max_gate_loops {
            outcome.gates.push(gate);
            return finish(outcome, MigrationStatus::GateLoopLimit, registry);
        }
        for id in failed {
            let Some(case) = regression.case(&id) else { continue };
            if outcome.testbed.case(&id).is_some() {
                continue;
            }
            let hard = TestCase {
                tier: Tier::Hard,
                ..case.clone()
            };
            outcome.testbed = extend_suite(&outcome.testbed, hard)?;
            gate.added_cases.push(id);
        }
        outcome.gates.push(gate);
    }
}
