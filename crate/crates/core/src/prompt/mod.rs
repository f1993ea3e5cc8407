//! Versioned prompt templates keyed by (task, model tag).
//!
//! A template is an ordered list of sections drawn from a fixed structure
//! (role, instructions, rules, reasoning, output format, examples, context,
//! final instructions). Structural features of a template are detected by
//! [`lint`] and drive the mock provider's behaviour.

mod format;
mod registry;
mod render;

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::output::parse_output;

pub use format::{parse_prompt_file, write_prompt_file};
pub use registry::{
    diff, load_registry, save_template, template_path, FeatureDelta, FeatureValue, Registry, RegistryError, SectionDiff,
};
pub use render::{lint_rendered, render, RenderError};

pub const PLACEHOLDERS: [&str; 5] = ["question", "context", "schema", "user_question", "external_context"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SectionKind {
    RoleObjective,
    Instructions,
    Rules,
    Reasoning,
    OutputFormat,
    Examples,
    Context,
    FinalInstructions,
}

impl SectionKind {
    pub const ALL: [SectionKind; 8] = [
        Self::RoleObjective,
        Self::Instructions,
        Self::Rules,
        Self::Reasoning,
        Self::OutputFormat,
        Self::Examples,
        Self::Context,
        Self::FinalInstructions,
    ];

    /// Marker used in `.prompt` files (`@rules`).
    pub fn marker(self) -> &'static str {
        match self {
            Self::RoleObjective => "role_objective",
            Self::Instructions => "instructions",
            Self::Rules => "rules",
            Self::Reasoning => "reasoning",
            Self::OutputFormat => "output_format",
            Self::Examples => "examples",
            Self::Context => "context",
            Self::FinalInstructions => "final",
        }
    }

    /// Heading used in rendered prompts (`# Rules`).
    pub fn heading(self) -> &'static str {
        match self {
            Self::RoleObjective => "Role and Objective",
            Self::Instructions => "Instructions",
            Self::Rules => "Rules",
            Self::Reasoning => "Reasoning Strategy",
            Self::OutputFormat => "Output Format",
            Self::Examples => "Examples",
            Self::Context => "Context",
            Self::FinalInstructions => "Final Instructions",
        }
    }

    pub fn from_marker(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.marker() == s)
    }
}

impl fmt::Display for SectionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.marker())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExampleEncoding {
    PlainText,
    JsonLike,
    #[default]
    MarkupTagged,
}

impl ExampleEncoding {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::PlainText => "plain_text",
            Self::JsonLike => "json_like",
            Self::MarkupTagged => "markup_tagged",
        }
    }
}

impl FromStr for ExampleEncoding {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "plain_text" => Ok(Self::PlainText),
            "json_like" => Ok(Self::JsonLike),
            "markup_tagged" => Ok(Self::MarkupTagged),
            other => Err(format!("unknown example encoding `{other}`")),
        }
    }
}

/// A worked question/answer pair. The answer must parse cleanly under the
/// output grammar.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExampleBlock {
    pub question: String,
    pub answer: String,
}

impl ExampleBlock {
    pub fn new(question: impl Into<String>, answer: impl Into<String>) -> Self {
        Self {
            question: question.into(),
            answer: answer.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptSection {
    pub kind: SectionKind,
    pub body: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub rules: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub examples: Vec<ExampleBlock>,
}

impl PromptSection {
    pub fn new(kind: SectionKind, body: impl Into<String>) -> Self {
        Self {
            kind,
            body: body.into(),
            rules: Vec::new(),
            examples: Vec::new(),
        }
    }

    pub fn rules(body: impl Into<String>, rules: Vec<String>) -> Self {
        Self {
            rules,
            ..Self::new(SectionKind::Rules, body)
        }
    }

    pub fn examples(body: impl Into<String>, examples: Vec<ExampleBlock>) -> Self {
        Self {
            examples,
            ..Self::new(SectionKind::Examples, body)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Lineage {
    pub model_tag: String,
    pub version: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub task: String,
    pub model_tag: String,
    pub sections: Vec<PromptSection>,
    #[serde(default)]
    pub example_encoding: ExampleEncoding,
    pub version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub created_from: Option<Lineage>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TemplateError {
    #[error("section `{0}` appears more than once")]
    DuplicateSection(SectionKind),
    #[error("section `{0}` is out of order")]
    OutOfOrder(SectionKind),
    #[error("unknown placeholder `{{{0}}}`")]
    UnknownPlaceholder(String),
    #[error("rules section has no rules")]
    EmptyRules,
    #[error("{0}")]
    MisplacedContent(String),
    #[error("example answer does not parse cleanly: {0}")]
    BadExampleAnswer(String),
    #[error("invalid identifier `{0}`")]
    BadIdentifier(String),
    #[error("version must be at least 1")]
    BadVersion,
}

/// Task names and model tags double as path components.
pub fn is_valid_tag(s: &str) -> bool {
    !s.is_empty()
        && !s.starts_with('.')
        && s.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'))
}

/// Names written as `{name}` in a text.
pub fn placeholders_in(text: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut rest = text;
    while let Some(open) = rest.find('{') {
        let after = &rest[open + 1..];
        let len = after
            .find(|c: char| !(c.is_ascii_lowercase() || c == '_'))
            .unwrap_or(after.len());
        if len > 0 && after[len..].starts_with('}') {
            out.push(&after[..len]);
            rest = &after[len + 1..];
        } else {
            rest = after;
        }
    }
    out
}

impl PromptTemplate {
    pub fn new(task: impl Into<String>, model_tag: impl Into<String>) -> Self {
        Self {
            task: task.into(),
            model_tag: model_tag.into(),
            sections: Vec::new(),
            example_encoding: ExampleEncoding::default(),
            version: 1,
            created_from: None,
        }
    }

    pub fn with_section(mut self, section: PromptSection) -> Self {
        self.put_section(section);
        self
    }

    pub fn section(&self, kind: SectionKind) -> Option<&PromptSection> {
        self.sections.iter().find(|s| s.kind == kind)
    }

    pub fn section_mut(&mut self, kind: SectionKind) -> Option<&mut PromptSection> {
        self.sections.iter_mut().find(|s| s.kind == kind)
    }

    /// Insert or replace a section, keeping canonical order.
    pub fn put_section(&mut self, section: PromptSection) {
        match self.section_mut(section.kind) {
            Some(existing) => *existing = section,
            None => {
                let at = self
                    .sections
                    .iter()
                    .position(|s| s.kind > section.kind)
                    .unwrap_or(self.sections.len());
                self.sections.insert(at, section);
            }
        }
    }

    /// Next version of this template on the same model tag.
    pub fn next_revision(&self) -> Self {
        Self {
            version: self.version + 1,
            created_from: Some(Lineage {
                model_tag: self.model_tag.clone(),
                version: self.version,
            }),
            ..self.clone()
        }
    }

    /// Version 1 of this template under another model tag.
    pub fn seed_for(&self, model_tag: &str) -> Self {
        Self {
            model_tag: model_tag.to_string(),
            version: 1,
            created_from: Some(Lineage {
                model_tag: self.model_tag.clone(),
                version: self.version,
            }),
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<(), TemplateError> {
        for id in [&self.task, &self.model_tag] {
            if !is_valid_tag(id) {
                return Err(TemplateError::BadIdentifier(id.clone()));
            }
        }
        if self.version == 0 {
            return Err(TemplateError::BadVersion);
        }
        let mut seen = BTreeSet::new();
        let mut last = None;
        for s in &self.sections {
            if !seen.insert(s.kind) {
                return Err(TemplateError::DuplicateSection(s.kind));
            }
            if last.is_some_and(|l| l > s.kind) {
                return Err(TemplateError::OutOfOrder(s.kind));
            }
            last = Some(s.kind);
            validate_section(s)?;
        }
        Ok(())
    }
}

fn validate_section(s: &PromptSection) -> Result<(), TemplateError> {
    let texts = std::iter::once(s.body.as_str()).chain(s.rules.iter().map(String::as_str));
    for text in texts {
        if let Some(bad) = placeholders_in(text).into_iter().find(|p| !PLACEHOLDERS.contains(p)) {
            return Err(TemplateError::UnknownPlaceholder(bad.to_string()));
        }
    }
    for line in s.body.lines() {
        let t = line.trim_start();
        let conflict = t.starts_with('@')
            || line.starts_with("# ") && SectionKind::ALL.iter().any(|k| line[2..].trim() == k.heading())
            || s.kind == SectionKind::Rules && t.starts_with("- ")
            || s.kind == SectionKind::Examples
                && (t.starts_with(">>")
                    || t.starts_with("Question:")
                    || t.starts_with("<example>")
                    || t.starts_with("{\"question\""));
        if conflict {
            return Err(TemplateError::MisplacedContent(format!(
                "body line of `{}` section is reserved syntax: {line}",
                s.kind
            )));
        }
    }
    match s.kind {
        SectionKind::Rules => {
            if s.rules.is_empty() {
                return Err(TemplateError::EmptyRules);
            }
            if let Some(r) = s.rules.iter().find(|r| r.contains('\n') || r.trim().is_empty()) {
                return Err(TemplateError::MisplacedContent(format!("rule must be one non-empty line: {r:?}")));
            }
        }
        _ if !s.rules.is_empty() => {
            return Err(TemplateError::MisplacedContent(format!("rules outside the rules section in `{}`", s.kind)));
        }
        _ => {}
    }
    if s.kind != SectionKind::Examples && !s.examples.is_empty() {
        return Err(TemplateError::MisplacedContent(format!("examples outside the examples section in `{}`", s.kind)));
    }
    for ex in &s.examples {
        if ex.question.trim().is_empty() || ex.question.contains('\n') {
            return Err(TemplateError::MisplacedContent(format!("example question must be one line: {:?}", ex.question)));
        }
        match parse_output(&ex.answer) {
            Ok(p) if p.diagnostics.is_empty() => {}
            Ok(p) => return Err(TemplateError::BadExampleAnswer(p.diagnostics[0].text.clone())),
            Err(e) => return Err(TemplateError::BadExampleAnswer(e.to_string())),
        }
    }
    Ok(())
}

/// A detectable structural property of a prompt.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Feature {
    #[serde(rename = "has_explicit_output_format")]
    ExplicitOutputFormat,
    #[serde(rename = "has_formatting_rules")]
    FormattingRules,
    #[serde(rename = "has_underscore_rule")]
    UnderscoreRule,
    #[serde(rename = "has_no_quote_rule")]
    NoQuoteRule,
    #[serde(rename = "has_empty_list_rule")]
    EmptyListRule,
    #[serde(rename = "has_implicit_inference_rule")]
    ImplicitInferenceRule,
    #[serde(rename = "example_count")]
    Examples,
    #[serde(rename = "has_reasoning_section")]
    ReasoningSection,
    #[serde(rename = "has_final_step_by_step")]
    FinalStepByStep,
}

impl Feature {
    pub const ALL: [Feature; 9] = [
        Self::ExplicitOutputFormat,
        Self::FormattingRules,
        Self::UnderscoreRule,
        Self::NoQuoteRule,
        Self::EmptyListRule,
        Self::ImplicitInferenceRule,
        Self::Examples,
        Self::ReasoningSection,
        Self::FinalStepByStep,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::ExplicitOutputFormat => "has_explicit_output_format",
            Self::FormattingRules => "has_formatting_rules",
            Self::UnderscoreRule => "has_underscore_rule",
            Self::NoQuoteRule => "has_no_quote_rule",
            Self::EmptyListRule => "has_empty_list_rule",
            Self::ImplicitInferenceRule => "has_implicit_inference_rule",
            Self::Examples => "example_count",
            Self::ReasoningSection => "has_reasoning_section",
            Self::FinalStepByStep => "has_final_step_by_step",
        }
    }
}

impl fmt::Display for Feature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Feature {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|f| f.name() == s)
            .ok_or_else(|| format!("unknown prompt feature `{s}`"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct PromptFeatureSet {
    pub has_explicit_output_format: bool,
    pub has_formatting_rules: bool,
    pub has_underscore_rule: bool,
    pub has_no_quote_rule: bool,
    pub has_empty_list_rule: bool,
    pub has_implicit_inference_rule: bool,
    pub example_count: usize,
    pub has_reasoning_section: bool,
    pub has_final_step_by_step: bool,
}

impl PromptFeatureSet {
    /// Whether the flag is set; for [`Feature::Examples`], whether at least
    /// `min_examples` examples are present.
    pub fn has(&self, feature: Feature, min_examples: usize) -> bool {
        match feature {
            Feature::ExplicitOutputFormat => self.has_explicit_output_format,
            Feature::FormattingRules => self.has_formatting_rules,
            Feature::UnderscoreRule => self.has_underscore_rule,
            Feature::NoQuoteRule => self.has_no_quote_rule,
            Feature::EmptyListRule => self.has_empty_list_rule,
            Feature::ImplicitInferenceRule => self.has_implicit_inference_rule,
            Feature::Examples => self.example_count >= min_examples.max(1),
            Feature::ReasoningSection => self.has_reasoning_section,
            Feature::FinalStepByStep => self.has_final_step_by_step,
        }
    }

    pub fn satisfies(&self, req: &FeatureRequirements) -> bool {
        self.missing(req).is_empty()
    }

    pub fn missing(&self, req: &FeatureRequirements) -> Vec<Feature> {
        req.features
            .iter()
            .copied()
            .filter(|f| !self.has(*f, req.min_examples))
            .collect()
    }

    /// `(name, value)` pairs in declaration order.
    pub fn entries(&self) -> Vec<(&'static str, FeatureValue)> {
        Feature::ALL
            .into_iter()
            .map(|f| {
                let v = match f {
                    Feature::Examples => FeatureValue::Count(self.example_count),
                    _ => FeatureValue::Flag(self.has(f, 1)),
                };
                (f.name(), v)
            })
            .collect()
    }
}

impl fmt::Display for PromptFeatureSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (name, value) in self.entries() {
            writeln!(f, "{name}: {value}")?;
        }
        Ok(())
    }
}

/// A set of features a prompt must carry. `min_examples` applies when
/// [`Feature::Examples`] is in the set.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct FeatureRequirements {
    pub features: BTreeSet<Feature>,
    pub min_examples: usize,
}

impl FeatureRequirements {
    pub fn new(features: impl IntoIterator<Item = Feature>, min_examples: usize) -> Self {
        Self {
            features: features.into_iter().collect(),
            min_examples,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn is_subset(&self, other: &FeatureRequirements) -> bool {
        self.features.is_subset(&other.features)
            && (!self.features.contains(&Feature::Examples) || self.min_examples <= other.min_examples)
    }

    /// `has_x` names plus `example_count>=N`.
    pub fn to_strings(&self) -> Vec<String> {
        self.features
            .iter()
            .map(|f| match f {
                Feature::Examples => format!("example_count>={}", self.min_examples.max(1)),
                other => other.name().to_string(),
            })
            .collect()
    }

    pub fn parse<S: AsRef<str>>(items: &[S]) -> Result<Self, String> {
        let mut req = Self::default();
        for item in items {
            let item = item.as_ref().trim();
            if let Some(n) = item.strip_prefix("example_count>=") {
                req.min_examples = n.trim().parse().map_err(|_| format!("bad example count in `{item}`"))?;
                req.features.insert(Feature::Examples);
            } else {
                let f: Feature = item.parse()?;
                if f == Feature::Examples {
                    req.min_examples = req.min_examples.max(1);
                }
                req.features.insert(f);
            }
        }
        Ok(req)
    }
}

fn contains_ci(haystack: &str, needle: &str) -> bool {
    haystack.to_ascii_lowercase().contains(needle)
}

/// Feature flags from a list of rule lines. Shared by [`lint`] and
/// [`lint_rendered`] so both detect rules identically.
pub(crate) fn rule_flags<'a>(rules: impl IntoIterator<Item = &'a str>, set: &mut PromptFeatureSet) {
    for rule in rules {
        set.has_formatting_rules = true;
        set.has_underscore_rule |= contains_ci(rule, "underscore");
        set.has_no_quote_rule |= contains_ci(rule, "not quote") || contains_ci(rule, "never quote");
        set.has_empty_list_rule |= rule.contains("filters: []");
        set.has_implicit_inference_rule |= contains_ci(rule, "infer") && contains_ci(rule, "implicit");
    }
}

pub(crate) fn final_flag(body: &str) -> bool {
    contains_ci(body, "step by step")
}

/// Detect structural features of a template.
pub fn lint(template: &PromptTemplate) -> PromptFeatureSet {
    let mut set = PromptFeatureSet::default();
    for s in &template.sections {
        match s.kind {
            SectionKind::Rules => rule_flags(s.rules.iter().map(String::as_str), &mut set),
            SectionKind::OutputFormat => set.has_explicit_output_format = true,
            SectionKind::Examples => set.example_count += s.examples.len(),
            SectionKind::Reasoning => set.has_reasoning_section = true,
            SectionKind::FinalInstructions => set.has_final_step_by_step = final_flag(&s.body),
            _ => {}
        }
    }
    set
}
