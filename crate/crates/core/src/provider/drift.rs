//! Drift profiles: what a model version demands of a prompt, and how it
//! misbehaves when the prompt falls short.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::operator::{
    is_identifier, underscore_prefixes, ColumnRef, CompareOp, Direction, FilterPredicate, OperatorFragment, OrderKey,
    SchemaContext,
};
use crate::output::serialize;
use crate::prompt::{Feature, FeatureRequirements};
use crate::taxonomy::FailureMode;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DriftProfile {
    pub name: String,
    pub required_features: FeatureRequirements,
    pub failure_modes: Vec<FailureMode>,
    /// Corruptions applied even when every required feature is present.
    pub residual_modes: Vec<FailureMode>,
}

const STRICT_FEATURES: [Feature; 5] = [
    Feature::FormattingRules,
    Feature::UnderscoreRule,
    Feature::NoQuoteRule,
    Feature::ImplicitInferenceRule,
    Feature::Examples,
];

impl DriftProfile {
    pub const BUILTIN: [&'static str; 3] = ["legacy-flexible", "strict-instruction", "creative-verbose"];

    /// Never corrupts.
    pub fn legacy_flexible() -> Self {
        Self {
            name: "legacy-flexible".into(),
            required_features: FeatureRequirements::default(),
            failure_modes: Vec::new(),
            residual_modes: Vec::new(),
        }
    }

    pub fn strict_instruction() -> Self {
        Self {
            name: "strict-instruction".into(),
            required_features: FeatureRequirements::new(STRICT_FEATURES, 3),
            failure_modes: FailureMode::ALL
                .into_iter()
                .filter(|m| m.is_instruction_strict_mode())
                .collect(),
            residual_modes: Vec::new(),
        }
    }

    pub fn creative_verbose() -> Self {
        let features = STRICT_FEATURES
            .into_iter()
            .chain([Feature::ExplicitOutputFormat, Feature::EmptyListRule]);
        Self {
            name: "creative-verbose".into(),
            required_features: FeatureRequirements::new(features, 3),
            failure_modes: FailureMode::ALL.to_vec(),
            residual_modes: Vec::new(),
        }
    }

    pub fn builtin(name: &str) -> Option<Self> {
        match name {
            "legacy-flexible" => Some(Self::legacy_flexible()),
            "strict-instruction" => Some(Self::strict_instruction()),
            "creative-verbose" => Some(Self::creative_verbose()),
            _ => None,
        }
    }

    /// Modes the profile can apply when the prompt is deficient.
    pub fn active_modes(&self) -> impl Iterator<Item = FailureMode> + '_ {
        self.failure_modes.iter().chain(&self.residual_modes).copied()
    }
}

/// On-disk drift description: a profile plus per-case annotations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftFile {
    pub profile: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub required_features: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure_modes: Option<Vec<FailureMode>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub residual_modes: Option<Vec<FailureMode>>,
    #[serde(default)]
    pub annotations: BTreeMap<String, FailureMode>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fallback_rate: Option<f64>,
}

#[derive(Debug, thiserror::Error)]
pub enum DriftError {
    #[error("unknown drift profile `{0}`; known: legacy-flexible, strict-instruction, creative-verbose")]
    UnknownProfile(String),
    #[error("bad required feature: {0}")]
    BadFeature(String),
    #[error("fallback_rate must be within [0, 1], got {0}")]
    BadRate(f64),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Json { path: PathBuf, source: serde_json::Error },
}

impl DriftFile {
    pub fn new(profile: impl Into<String>) -> Self {
        Self {
            profile: profile.into(),
            required_features: None,
            failure_modes: None,
            residual_modes: None,
            annotations: BTreeMap::new(),
            fallback_rate: None,
        }
    }

    /// Resolve against the built-in profile of the same name. Custom names
    /// must spell out what they need; omitted fields default to empty.
    pub fn resolve(&self) -> Result<DriftProfile, DriftError> {
        let base = DriftProfile::builtin(&self.profile).unwrap_or_else(|| DriftProfile {
            name: self.profile.clone(),
            required_features: FeatureRequirements::default(),
            failure_modes: Vec::new(),
            residual_modes: Vec::new(),
        });
        let required_features = match &self.required_features {
            Some(items) => FeatureRequirements::parse(items).map_err(DriftError::BadFeature)?,
            None => base.required_features,
        };
        Ok(DriftProfile {
            name: self.profile.clone(),
            required_features,
            failure_modes: self.failure_modes.clone().unwrap_or(base.failure_modes),
            residual_modes: self.residual_modes.clone().unwrap_or(base.residual_modes),
        })
    }

    pub fn rate(&self) -> Result<f64, DriftError> {
        let r = self.fallback_rate.unwrap_or(0.0);
        if (0.0..=1.0).contains(&r) {
            Ok(r)
        } else {
            Err(DriftError::BadRate(r))
        }
    }
}

pub fn load_drift_file(path: &Path) -> Result<DriftFile, DriftError> {
    let text = fs::read_to_string(path).map_err(|source| DriftError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let file: DriftFile = serde_json::from_str(&text).map_err(|source| DriftError::Json {
        path: path.to_path_buf(),
        source,
    })?;
    file.resolve()?;
    file.rate()?;
    Ok(file)
}

fn proper_prefix_of_expected(name: &str, expected: &OperatorFragment) -> bool {
    expected
        .columns()
        .any(|c| c.as_str().len() > name.len() && c.as_str().starts_with(name))
}

fn value_prefix(name: &str, expected: &OperatorFragment) -> bool {
    expected
        .filters
        .iter()
        .any(|p| underscore_prefixes(&p.value).any(|x| x == name))
}

fn looks_temporal(c: &ColumnRef) -> bool {
    let lower = c.as_str().to_ascii_lowercase();
    ["date", "time", "month", "year", "day"].iter().any(|w| lower.contains(w))
}

fn with_filters_line(text: &str, f: impl FnOnce(&str) -> String) -> String {
    let mut f = Some(f);
    text.lines()
        .map(|l| match l.strip_prefix("filters: ") {
            Some(body) => (f.take().expect("one filters line"))(body),
            None => l.to_string(),
        })
        .collect::<Vec<_>>()
        .join("\n")
}

fn fused_filters(e: &OperatorFragment) -> Option<String> {
    let first = e.filters.first()?;
    let single = serialize(&OperatorFragment {
        filters: vec![first.clone()],
        ..Default::default()
    });
    let pred = single.strip_prefix("filters: [")?.strip_suffix(']')?.to_string();
    let fused = format!("{}>={}", first.column, &pred[first.column.as_str().len()..]);
    Some(with_filters_line(&serialize(e), |body| {
        format!("filters: {}", body.replacen(&pred, &fused, 1))
    }))
}

/// Render `expected` as a model suffering from `mode` would. `None` when
/// the case lacks the trait the mode needs, so the result could not be
/// told apart from a different mode.
pub fn corrupt(mode: FailureMode, expected: &OperatorFragment, schema: &SchemaContext) -> Option<String> {
    if !expected.columns().all(|c| schema.contains(c)) {
        return None;
    }
    let e = expected;
    let mut f = e.clone();
    match mode {
        FailureMode::MissingOrdering => {
            if e.order_by.is_empty() {
                return None;
            }
            f.order_by.clear();
        }
        FailureMode::MissingGrouping => {
            if e.group_by.is_empty() {
                return None;
            }
            f.group_by.clear();
        }
        FailureMode::RedundantOperation => {
            if !e.order_by.is_empty() {
                return None;
            }
            let col = e.select.first().or(e.filters.first().map(|p| &p.column))?;
            f.order_by.push(OrderKey::new(col.clone(), Direction::Asc));
        }
        FailureMode::NonexistentColumn => {
            let first = e.filters.first()?;
            let name = format!("{}_ID", first.column);
            if schema.contains_name(&name) || proper_prefix_of_expected(&name, e) || value_prefix(&name, e) {
                return None;
            }
            f.filters[0].column = ColumnRef::try_from(name).ok()?;
        }
        FailureMode::SemanticMisinterpretation => {
            let first = e.filters.first()?;
            let col = e
                .order_by
                .first()
                .map(|k| &k.column)
                .or_else(|| schema.columns.iter().find(|c| looks_temporal(c)))?;
            let replacement = FilterPredicate::new(col.clone(), CompareOp::Gt, "2020");
            if &replacement == first || value_prefix(col.as_str(), e) {
                return None;
            }
            f.filters[0] = replacement;
        }
        FailureMode::MissingImplicitFilter => {
            f.filters.pop()?;
        }
        FailureMode::ColumnValueConfusion => {
            let i = e.filters.iter().position(|p| p.value.contains('_'))?;
            let (left, right) = e.filters[i].value.split_once('_')?;
            if !is_identifier(left) || right.is_empty() {
                return None;
            }
            if !schema.contains_name(left) && proper_prefix_of_expected(left, e) {
                return None;
            }
            f.filters[i] = FilterPredicate::new(ColumnRef::try_from(left).ok()?, e.filters[i].op, right);
        }
        FailureMode::ColumnSimplification => {
            let mut longest: Option<&ColumnRef> = None;
            for c in e.columns().filter(|c| c.as_str().contains('_')) {
                if longest.is_none_or(|l| c.as_str().len() > l.as_str().len()) {
                    longest = Some(c);
                }
            }
            let target = longest?;
            let (short, _) = target.as_str().rsplit_once('_')?;
            if !is_identifier(short) || schema.contains_name(short) {
                return None;
            }
            let short = ColumnRef::try_from(short).ok()?;
            let swap = |c: &mut ColumnRef| {
                if c == target {
                    *c = short.clone();
                }
            };
            f.select.iter_mut().for_each(swap);
            f.filters.iter_mut().for_each(|p| swap(&mut p.column));
            f.group_by.iter_mut().for_each(swap);
            f.order_by.iter_mut().for_each(|k| swap(&mut k.column));
        }
        FailureMode::FormatViolation => {
            if e.filters.is_empty() && !e.is_empty() {
                return None;
            }
            return Some(with_filters_line(&serialize(e), |body| {
                let inner = &body[1..body.len() - 1];
                format!("filters: ({inner})")
            }));
        }
        FailureMode::InfoMessageLeak => {
            let first = e.columns().next()?;
            return Some(format!("could not find {first}\n{}", serialize(e)));
        }
        FailureMode::OperatorColumnFusion => return fused_filters(e),
    }
    Some(serialize(&f))
}
