use std::collections::BTreeMap;

use serde::Serialize;

use super::{final_flag, placeholders_in, rule_flags, ExampleBlock, ExampleEncoding, PromptFeatureSet, PromptTemplate, SectionKind};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum RenderError {
    #[error("no binding for placeholder `{{{0}}}`")]
    UnboundPlaceholder(String),
}

fn substitute(text: &str, bindings: &BTreeMap<String, String>) -> Result<String, RenderError> {
    let mut out = text.to_string();
    for name in placeholders_in(text) {
        let value = bindings
            .get(name)
            .ok_or_else(|| RenderError::UnboundPlaceholder(name.to_string()))?;
        out = out.replace(&format!("{{{name}}}"), value);
    }
    Ok(out)
}

#[derive(Serialize)]
struct JsonExample<'a> {
    question: &'a str,
    answer: &'a str,
}

fn encode_examples(examples: &[ExampleBlock], encoding: ExampleEncoding) -> String {
    match encoding {
        ExampleEncoding::PlainText => examples
            .iter()
            .map(|e| format!("Question: {}\nAnswer: {}", e.question, e.answer))
            .collect::<Vec<_>>()
            .join("\n\n"),
        ExampleEncoding::MarkupTagged => examples
            .iter()
            .map(|e| {
                format!(
                    "<example>\n<question>{}</question>\n<answer>{}</answer>\n</example>",
                    e.question, e.answer
                )
            })
            .collect::<Vec<_>>()
            .join("\n"),
        ExampleEncoding::JsonLike => examples
            .iter()
            .map(|e| {
                serde_json::to_string(&JsonExample {
                    question: &e.question,
                    answer: &e.answer,
                })
                .expect("string fields serialize")
            })
            .collect::<Vec<_>>()
            .join("\n"),
    }
}

/// Render a template: sections in canonical order, each under a
/// `# <Section Name>` heading, separated by blank lines.
pub fn render(template: &PromptTemplate, bindings: &BTreeMap<String, String>) -> Result<String, RenderError> {
    let mut sections: Vec<_> = template.sections.iter().collect();
    sections.sort_by_key(|s| s.kind);
    let mut blocks = Vec::with_capacity(sections.len());
    for s in sections {
        let mut parts = Vec::new();
        if !s.body.is_empty() {
            parts.push(substitute(&s.body, bindings)?);
        }
        if !s.rules.is_empty() {
            let rules = s
                .rules
                .iter()
                .map(|r| substitute(r, bindings).map(|r| format!("- {r}")))
                .collect::<Result<Vec<_>, _>>()?;
            parts.push(rules.join("\n"));
        }
        if !s.examples.is_empty() {
            parts.push(encode_examples(&s.examples, template.example_encoding));
        }
        let mut block = format!("# {}", s.kind.heading());
        for p in parts {
            block.push('\n');
            block.push_str(&p);
        }
        blocks.push(block);
    }
    Ok(blocks.join("\n\n"))
}

/// Recover the feature set from rendered prompt text. Agrees with
/// [`super::lint`] on anything produced by [`render`].
pub fn lint_rendered(text: &str) -> PromptFeatureSet {
    let mut set = PromptFeatureSet::default();
    let mut current: Option<SectionKind> = None;
    let mut final_body = String::new();
    for line in text.lines() {
        if let Some(h) = line.strip_prefix("# ") {
            if let Some(kind) = SectionKind::ALL.into_iter().find(|k| k.heading() == h.trim()) {
                current = Some(kind);
                match kind {
                    SectionKind::OutputFormat => set.has_explicit_output_format = true,
                    SectionKind::Reasoning => set.has_reasoning_section = true,
                    _ => {}
                }
                continue;
            }
        }
        match current {
            Some(SectionKind::Rules) => {
                if let Some(rule) = line.strip_prefix("- ") {
                    rule_flags([rule], &mut set);
                }
            }
            Some(SectionKind::Examples) => {
                if line == "<example>" || line.starts_with("Question:") || line.starts_with("{\"question\":") {
                    set.example_count += 1;
                }
            }
            Some(SectionKind::FinalInstructions) => {
                final_body.push_str(line);
                final_body.push('\n');
            }
            _ => {}
        }
    }
    set.has_final_step_by_step = final_flag(&final_body);
    set
}
