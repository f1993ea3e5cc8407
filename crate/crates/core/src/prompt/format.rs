//! The line-oriented `.prompt` file format.
//!
//! ```text
//! @version 2 from gpt-4-32k@1
//! @instructions
//! Extract SQL filters from the input question.
//! @rules
//! Formatting Rules:
//! - Enclose the filters in square brackets.
//! @examples encoding=markup_tagged
//! >> question: List the demographics details for males after 2009.
//! >> answer: filters: [Gender='Male', Registration_Date>'2009']
//! @context
//! Input: {question}
//! ```
//!
//! Lines following `>> answer:` that do not start with `>>` continue the
//! answer, so multi-line answers need no escaping.

use super::{ExampleBlock, Lineage, PromptSection, PromptTemplate, SectionKind};

/// A syntax problem at a 1-based line.
pub type SyntaxError = (usize, String);

enum ExampleField {
    Question,
    Answer,
}

struct SectionBuilder {
    section: PromptSection,
    body: Vec<String>,
    field: Option<ExampleField>,
}

impl SectionBuilder {
    fn finish(mut self) -> PromptSection {
        let start = self.body.iter().position(|l| !l.trim().is_empty()).unwrap_or(self.body.len());
        let end = self.body.iter().rposition(|l| !l.trim().is_empty()).map_or(start, |i| i + 1);
        self.section.body = self.body[start..end].join("\n");
        self.section
    }
}

fn parse_version(rest: &str) -> Option<(u32, Option<Lineage>)> {
    let mut words = rest.split_whitespace();
    let version = words.next()?.parse().ok()?;
    match (words.next(), words.next(), words.next()) {
        (None, _, _) => Some((version, None)),
        (Some("from"), Some(origin), None) => {
            let (tag, v) = origin.rsplit_once('@')?;
            Some((
                version,
                Some(Lineage {
                    model_tag: tag.to_string(),
                    version: v.parse().ok()?,
                }),
            ))
        }
        _ => None,
    }
}

/// Parse a `.prompt` file body. Task and model tag come from the path.
pub fn parse_prompt_file(text: &str, task: &str, model_tag: &str) -> Result<PromptTemplate, SyntaxError> {
    let mut template = PromptTemplate::new(task, model_tag);
    let mut current: Option<SectionBuilder> = None;
    let mut saw_version = false;

    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.strip_suffix('\r').unwrap_or(raw);

        if let Some(marker) = line.strip_prefix('@') {
            let (name, rest) = marker.split_once(char::is_whitespace).unwrap_or((marker, ""));
            if name == "version" {
                if saw_version || current.is_some() || !template.sections.is_empty() {
                    return Err((line_no, "`@version` must be the first line".into()));
                }
                let (v, lineage) = parse_version(rest)
                    .ok_or_else(|| (line_no, format!("malformed version header `{line}`")))?;
                template.version = v;
                template.created_from = lineage;
                saw_version = true;
                continue;
            }
            let kind = SectionKind::from_marker(name)
                .ok_or_else(|| (line_no, format!("unknown section marker `@{name}`")))?;
            if let Some(done) = current.take() {
                template.sections.push(done.finish());
            }
            let rest = rest.trim();
            if kind == SectionKind::Examples {
                if let Some(enc) = rest.strip_prefix("encoding=") {
                    template.example_encoding = enc.parse().map_err(|e: String| (line_no, e))?;
                } else if !rest.is_empty() {
                    return Err((line_no, format!("unexpected text after `@examples`: `{rest}`")));
                }
            } else if !rest.is_empty() {
                return Err((line_no, format!("unexpected text after `@{name}`: `{rest}`")));
            }
            current = Some(SectionBuilder {
                section: PromptSection::new(kind, ""),
                body: Vec::new(),
                field: None,
            });
            continue;
        }

        let Some(b) = current.as_mut() else {
            if line.trim().is_empty() {
                continue;
            }
            return Err((line_no, "text before the first section marker".into()));
        };

        match b.section.kind {
            SectionKind::Rules if line.trim_start().starts_with("- ") => {
                b.section.rules.push(line.trim_start()[2..].trim().to_string());
            }
            SectionKind::Examples if line.trim_start().starts_with(">>") => {
                let item = line.trim_start()[2..].trim_start();
                if let Some(q) = item.strip_prefix("question:") {
                    b.section.examples.push(ExampleBlock::new(q.trim(), ""));
                    b.field = Some(ExampleField::Question);
                } else if let Some(a) = item.strip_prefix("answer:") {
                    let Some(ex) = b.section.examples.last_mut().filter(|e| e.answer.is_empty()) else {
                        return Err((line_no, "`>> answer:` without a preceding question".into()));
                    };
                    ex.answer = a.trim().to_string();
                    b.field = Some(ExampleField::Answer);
                } else {
                    return Err((line_no, format!("expected `>> question:` or `>> answer:`, got `{line}`")));
                }
            }
            SectionKind::Examples if b.field.is_some() => {
                if line.trim().is_empty() {
                    continue;
                }
                let ex = b.section.examples.last_mut().expect("field implies an example");
                let target = match b.field {
                    Some(ExampleField::Question) => &mut ex.question,
                    _ => &mut ex.answer,
                };
                target.push('\n');
                target.push_str(line.trim());
            }
            _ => b.body.push(line.to_string()),
        }
    }
    if let Some(done) = current.take() {
        template.sections.push(done.finish());
    }
    if let Some(ex) = template
        .sections
        .iter()
        .flat_map(|s| &s.examples)
        .find(|e| e.answer.is_empty())
    {
        return Err((0, format!("example `{}` has no answer", ex.question)));
    }
    Ok(template)
}

/// Serialize a template to the `.prompt` format. Parsing the result yields
/// the same template.
pub fn write_prompt_file(t: &PromptTemplate) -> String {
    let mut out = String::new();
    out.push_str(&format!("@version {}", t.version));
    if let Some(l) = &t.created_from {
        out.push_str(&format!(" from {}@{}", l.model_tag, l.version));
    }
    out.push('\n');
    for s in &t.sections {
        out.push('\n');
        out.push('@');
        out.push_str(s.kind.marker());
        if s.kind == SectionKind::Examples {
            out.push_str(&format!(" encoding={}", t.example_encoding.as_str()));
        }
        out.push('\n');
        if !s.body.is_empty() {
            out.push_str(&s.body);
            out.push('\n');
        }
        for r in &s.rules {
            out.push_str(&format!("- {r}\n"));
        }
        for ex in &s.examples {
            out.push_str(&format!(">> question: {}\n", ex.question));
            let mut lines = ex.answer.lines();
            out.push_str(&format!(">> answer: {}\n", lines.next().unwrap_or("")));
            for l in lines {
                out.push_str(l);
                out.push('\n');
            }
        }
    }
    out
}
