use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::format::{parse_prompt_file, write_prompt_file};
use super::{is_valid_tag, lint, PromptTemplate, SectionKind, TemplateError};

#[derive(Debug, thiserror::Error)]
pub enum RegistryError {
    #[error("prompt root `{0}` does not exist")]
    MissingRoot(PathBuf),
    #[error("more than one template for ({task}, {model_tag})")]
    DuplicateTemplate { task: String, model_tag: String },
    #[error("{file}:{line}: {message}")]
    TemplateSyntaxError { file: PathBuf, line: usize, message: String },
    #[error("no template for ({task}, {model_tag})")]
    MissingTemplate { task: String, model_tag: String },
    #[error("({task}, {model_tag}) is at version {current}; cannot store version {proposed}")]
    VersionConflict {
        task: String,
        model_tag: String,
        current: u32,
        proposed: u32,
    },
    #[error("cannot diff templates of different tasks `{0}` and `{1}`")]
    TaskMismatch(String, String),
    #[error("invalid template: {0}")]
    Invalid(#[from] TemplateError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> RegistryError + '_ {
    move |source| RegistryError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Templates keyed by (task, model tag). When loaded from disk, revisions
/// are written back to `<root>/<task>/<model_tag>.prompt`.
#[derive(Debug, Clone, Default)]
pub struct Registry {
    templates: BTreeMap<(String, String), PromptTemplate>,
    root: Option<PathBuf>,
}

pub fn template_path(root: &Path, task: &str, model_tag: &str) -> PathBuf {
    root.join(task).join(format!("{model_tag}.prompt"))
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>, RegistryError> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(io_err(dir))? {
        out.push(entry.map_err(io_err(dir))?.path());
    }
    out.sort();
    Ok(out)
}

/// Load every `<root>/<task>/<model_tag>.prompt`.
pub fn load_registry(root: &Path) -> Result<Registry, RegistryError> {
    if !root.is_dir() {
        return Err(RegistryError::MissingRoot(root.to_path_buf()));
    }
    let mut registry = Registry {
        templates: BTreeMap::new(),
        root: Some(root.to_path_buf()),
    };
    for task_dir in sorted_entries(root)? {
        if !task_dir.is_dir() {
            continue;
        }
        let Some(task) = task_dir.file_name().and_then(|s| s.to_str()).map(str::to_string) else {
            continue;
        };
        for file in sorted_entries(&task_dir)? {
            let is_prompt = file
                .extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| e.eq_ignore_ascii_case("prompt"));
            if !is_prompt || !file.is_file() {
                continue;
            }
            let Some(tag) = file.file_stem().and_then(|s| s.to_str()).map(str::to_string) else {
                continue;
            };
            let syntax = |line: usize, message: String| RegistryError::TemplateSyntaxError {
                file: file.clone(),
                line,
                message,
            };
            if !is_valid_tag(&task) || !is_valid_tag(&tag) {
                return Err(syntax(0, format!("invalid task or model tag in path ({task}, {tag})")));
            }
            let text = fs::read_to_string(&file).map_err(io_err(&file))?;
            let template = parse_prompt_file(&text, &task, &tag).map_err(|(line, msg)| syntax(line, msg))?;
            template.validate().map_err(|e| syntax(0, e.to_string()))?;
            let key = (task.clone(), tag.clone());
            if registry.templates.contains_key(&key) {
                return Err(RegistryError::DuplicateTemplate { task, model_tag: tag });
            }
            registry.templates.insert(key, template);
        }
    }
    Ok(registry)
}

impl Registry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn root(&self) -> Option<&Path> {
        self.root.as_deref()
    }

    pub fn len(&self) -> usize {
        self.templates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.templates.is_empty()
    }

    pub fn get(&self, task: &str, model_tag: &str) -> Option<&PromptTemplate> {
        self.templates.get(&(task.to_string(), model_tag.to_string()))
    }

    pub fn require(&self, task: &str, model_tag: &str) -> Result<&PromptTemplate, RegistryError> {
        self.get(task, model_tag).ok_or_else(|| RegistryError::MissingTemplate {
            task: task.to_string(),
            model_tag: model_tag.to_string(),
        })
    }

    pub fn templates(&self) -> impl Iterator<Item = &PromptTemplate> {
        self.templates.values()
    }

    pub fn tasks(&self) -> Vec<&str> {
        let mut tasks: Vec<&str> = self.templates.keys().map(|(t, _)| t.as_str()).collect();
        tasks.dedup();
        tasks
    }

    /// Add a template. A template already present for the same key may
    /// only be replaced by its next version.
    pub fn insert(&mut self, template: PromptTemplate) -> Result<(), RegistryError> {
        template.validate()?;
        let key = (template.task.clone(), template.model_tag.clone());
        if let Some(current) = self.templates.get(&key) {
            if template.version != current.version + 1 {
                return Err(RegistryError::VersionConflict {
                    task: key.0,
                    model_tag: key.1,
                    current: current.version,
                    proposed: template.version,
                });
            }
        }
        if let Some(root) = &self.root {
            save_template(root, &template)?;
        }
        self.templates.insert(key, template);
        Ok(())
    }

    /// Copy `(task, from)` to `(task, to)` at version 1 with lineage,
    /// unless `to` already exists. Returns whether a template was created.
    pub fn seed(&mut self, task: &str, from: &str, to: &str) -> Result<bool, RegistryError> {
        if self.get(task, to).is_some() {
            return Ok(false);
        }
        let seeded = self.require(task, from)?.seed_for(to);
        self.insert(seeded)?;
        Ok(true)
    }

    /// Reload one template from disk, e.g. after a manual edit.
    pub fn reload(&mut self, task: &str, model_tag: &str) -> Result<&PromptTemplate, RegistryError> {
        let root = self.root.clone().ok_or_else(|| RegistryError::MissingTemplate {
            task: task.to_string(),
            model_tag: model_tag.to_string(),
        })?;
        let path = template_path(&root, task, model_tag);
        let text = fs::read_to_string(&path).map_err(io_err(&path))?;
        let template = parse_prompt_file(&text, task, model_tag).map_err(|(line, message)| {
            RegistryError::TemplateSyntaxError {
                file: path.clone(),
                line,
                message,
            }
        })?;
        template.validate()?;
        let key = (task.to_string(), model_tag.to_string());
        self.templates.insert(key.clone(), template);
        Ok(&self.templates[&key])
    }

    /// Write every template under `root` and attach the registry to it.
    pub fn store(&mut self, root: &Path) -> Result<(), RegistryError> {
        for t in self.templates.values() {
            save_template(root, t)?;
        }
        self.root = Some(root.to_path_buf());
        Ok(())
    }
}

pub fn save_template(root: &Path, template: &PromptTemplate) -> Result<PathBuf, RegistryError> {
    let path = template_path(root, &template.task, &template.model_tag);
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    fs::write(&path, write_prompt_file(template)).map_err(io_err(&path))?;
    Ok(path)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FeatureValue {
    Flag(bool),
    Count(usize),
}

impl fmt::Display for FeatureValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Flag(b) => write!(f, "{b}"),
            Self::Count(n) => write!(f, "{n}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureDelta {
    pub feature: String,
    pub before: FeatureValue,
    pub after: FeatureValue,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SectionDiff {
    pub task: String,
    pub from: String,
    pub to: String,
    pub added: Vec<SectionKind>,
    pub removed: Vec<SectionKind>,
    pub changed: Vec<SectionKind>,
    pub features: Vec<FeatureDelta>,
}

impl SectionDiff {
    pub fn is_empty(&self) -> bool {
        self.added.is_empty() && self.removed.is_empty() && self.changed.is_empty() && self.features.is_empty()
    }
}

impl fmt::Display for SectionDiff {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{}: {} -> {}", self.task, self.from, self.to)?;
        if self.is_empty() {
            return writeln!(f, "  no differences");
        }
        for (label, kinds) in [("added", &self.added), ("removed", &self.removed), ("changed", &self.changed)] {
            for k in kinds {
                writeln!(f, "  {label} section: {k}")?;
            }
        }
        for d in &self.features {
            writeln!(f, "  feature {}: {} -> {}", d.feature, d.before, d.after)?;
        }
        Ok(())
    }
}

/// Per-section added/removed/changed report plus feature delta.
pub fn diff(a: &PromptTemplate, b: &PromptTemplate) -> Result<SectionDiff, RegistryError> {
    if a.task != b.task {
        return Err(RegistryError::TaskMismatch(a.task.clone(), b.task.clone()));
    }
    let mut out = SectionDiff {
        task: a.task.clone(),
        from: format!("{}@{}", a.model_tag, a.version),
        to: format!("{}@{}", b.model_tag, b.version),
        added: Vec::new(),
        removed: Vec::new(),
        changed: Vec::new(),
        features: Vec::new(),
    };
    for kind in SectionKind::ALL {
        match (a.section(kind), b.section(kind)) {
            (None, Some(_)) => out.added.push(kind),
            (Some(_), None) => out.removed.push(kind),
            (Some(x), Some(y)) => {
                let encoding_changed = kind == SectionKind::Examples && a.example_encoding != b.example_encoding;
                if x != y || encoding_changed {
                    out.changed.push(kind);
                }
            }
            (None, None) => {}
        }
    }
    for ((name, before), (_, after)) in lint(a).entries().into_iter().zip(lint(b).entries()) {
        if before != after {
            out.features.push(FeatureDelta {
                feature: name.to_string(),
                before,
                after,
            });
        }
    }
    Ok(out)
}
