use std::collections::{BTreeMap, HashMap};
use std::hash::Hasher;

use fnv::FnvHasher;

use super::drift::{corrupt, DriftFile, DriftError, DriftProfile};
use super::{ChatRequest, ChatResponse, Provider, ProviderError, Role, Usage};
use crate::output::serialize;
use crate::prompt::{lint_rendered, PromptFeatureSet};
use crate::taxonomy::FailureMode;
use crate::testbed::TestCase;

/// Deterministic stand-in for a model version.
///
/// The answer key comes from the request's `case_ref`; prompt features are
/// recovered from the rendered system message, so the mock reacts to the
/// prompt actually sent rather than to registry metadata.
#[derive(Debug, Clone)]
pub struct MockProvider {
    profile: DriftProfile,
    annotations: BTreeMap<String, FailureMode>,
    fallback_rate: f64,
    cases: HashMap<String, TestCase>,
}

const RATE_SCALE: u64 = 1_000_000;

impl MockProvider {
    pub fn new(profile: DriftProfile, cases: impl IntoIterator<Item = TestCase>) -> Self {
        Self {
            profile,
            annotations: BTreeMap::new(),
            fallback_rate: 0.0,
            cases: cases.into_iter().map(|c| (c.id.clone(), c)).collect(),
        }
    }

    pub fn from_drift(file: &DriftFile, cases: impl IntoIterator<Item = TestCase>) -> Result<Self, DriftError> {
        Ok(Self::new(file.resolve()?, cases)
            .with_annotations(file.annotations.clone())
            .with_fallback_rate(file.rate()?))
    }

    pub fn with_annotations(mut self, annotations: BTreeMap<String, FailureMode>) -> Self {
        self.annotations = annotations;
        self
    }

    /// Share of unannotated cases assigned a mode by hashing. Clamped to [0, 1].
    pub fn with_fallback_rate(mut self, rate: f64) -> Self {
        self.fallback_rate = rate.clamp(0.0, 1.0);
        self
    }

    pub fn add_cases(&mut self, cases: impl IntoIterator<Item = TestCase>) {
        self.cases.extend(cases.into_iter().map(|c| (c.id.clone(), c)));
    }

    pub fn profile(&self) -> &DriftProfile {
        &self.profile
    }

    pub fn annotations(&self) -> &BTreeMap<String, FailureMode> {
        &self.annotations
    }

    /// Annotations that name an unknown case or a mode the case cannot
    /// exhibit. Inactive modes are ignored at run time and not reported.
    pub fn check_annotations(&self) -> Vec<ProviderError> {
        let mut problems = Vec::new();
        for (id, mode) in &self.annotations {
            match self.cases.get(id) {
                None => problems.push(ProviderError::UnknownCase(Some(id.clone()))),
                Some(c) if corrupt(*mode, &c.expected, &c.schema).is_none() => {
                    problems.push(ProviderError::InapplicableMode {
                        case: id.clone(),
                        mode: *mode,
                    })
                }
                Some(_) => {}
            }
        }
        problems
    }

    fn hashed_mode(&self, case: &TestCase) -> Option<FailureMode> {
        if self.fallback_rate <= 0.0 {
            return None;
        }
        let mut h = FnvHasher::default();
        h.write(self.profile.name.as_bytes());
        h.write_u8(0);
        h.write(case.id.as_bytes());
        let h = h.finish();
        if h % RATE_SCALE >= (self.fallback_rate * RATE_SCALE as f64) as u64 {
            return None;
        }
        let applicable: Vec<FailureMode> = self
            .profile
            .failure_modes
            .iter()
            .copied()
            .filter(|m| corrupt(*m, &case.expected, &case.schema).is_some())
            .collect();
        if applicable.is_empty() {
            return None;
        }
        Some(applicable[((h >> 32) % applicable.len() as u64) as usize])
    }

    /// Output for a case given the prompt's features.
    pub fn respond(&self, case: &TestCase, features: &PromptFeatureSet) -> Result<String, ProviderError> {
        let satisfied = features.satisfies(&self.profile.required_features);
        let mode = self.annotations.get(&case.id).copied().or_else(|| self.hashed_mode(case));
        let active = match mode {
            Some(m) if self.profile.residual_modes.contains(&m) => Some(m),
            Some(m) if !satisfied && self.profile.failure_modes.contains(&m) => Some(m),
            _ => None,
        };
        match active {
            None => Ok(serialize(&case.expected)),
            Some(mode) => corrupt(mode, &case.expected, &case.schema).ok_or_else(|| ProviderError::InapplicableMode {
                case: case.id.clone(),
                mode,
            }),
        }
    }
}

impl Provider for MockProvider {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, ProviderError> {
        request.validate()?;
        let case = request
            .case_ref
            .as_ref()
            .and_then(|id| self.cases.get(id))
            .ok_or_else(|| ProviderError::UnknownCase(request.case_ref.clone()))?;
        let system: Vec<&str> = request
            .messages
            .iter()
            .filter(|m| m.role == Role::System)
            .map(|m| m.content.as_str())
            .collect();
        let features = lint_rendered(&system.join("\n\n"));
        let content = self.respond(case, &features)?;
        let usage = Usage::approximate(request.messages.iter().map(|m| m.content.as_str()), &content);
        Ok(ChatResponse { content, usage })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operator::{normalize_column, CompareOp, Direction, FilterPredicate, OperatorFragment, OrderKey, SchemaContext};
    use crate::provider::ChatMessage;
    use crate::testbed::Tier;

    fn case(id: &str) -> TestCase {
        let c = |s: &str| normalize_column(s).unwrap();
        TestCase {
            id: id.into(),
            tier: Tier::Easy,
            task: "filter_extract".into(),
            question: "monthly visits in New York".into(),
            schema: SchemaContext::new("visits", vec![c("City"), c("Visit_Month"), c("Visit_Count")]).unwrap(),
            expected: OperatorFragment {
                filters: vec![FilterPredicate::new(c("City"), CompareOp::Eq, "New_York")],
                order_by: vec![OrderKey::new(c("Visit_Month"), Direction::Asc)],
                ..Default::default()
            },
            source_entry: None,
        }
    }

    fn full_features() -> PromptFeatureSet {
        PromptFeatureSet {
            has_explicit_output_format: true,
            has_formatting_rules: true,
            has_underscore_rule: true,
            has_no_quote_rule: true,
            has_empty_list_rule: true,
            has_implicit_inference_rule: true,
            example_count: 3,
            has_reasoning_section: false,
            has_final_step_by_step: false,
        }
    }

    fn annotated(profile: DriftProfile, mode: FailureMode) -> MockProvider {
        MockProvider::new(profile, [case("c1")]).with_annotations([("c1".to_string(), mode)].into())
    }

    #[test]
    fn legacy_never_corrupts() {
        let m = annotated(DriftProfile::legacy_flexible(), FailureMode::MissingOrdering);
        let out = m.respond(&case("c1"), &PromptFeatureSet::default()).unwrap();
        assert_eq!(out, serialize(&case("c1").expected));
    }

    #[test]
    fn strict_corrupts_until_features_present() {
        let m = annotated(DriftProfile::strict_instruction(), FailureMode::MissingOrdering);
        let bad = m.respond(&case("c1"), &PromptFeatureSet::default()).unwrap();
        assert_eq!(bad, "filters: [City='New_York']");
        let good = m.respond(&case("c1"), &full_features()).unwrap();
        assert_eq!(good, serialize(&case("c1").expected));
    }

    #[test]
    fn inactive_mode_is_ignored_and_inapplicable_is_an_error() {
        let m = annotated(DriftProfile::strict_instruction(), FailureMode::InfoMessageLeak);
        assert_eq!(m.respond(&case("c1"), &PromptFeatureSet::default()).unwrap(), serialize(&case("c1").expected));
        let m = annotated(DriftProfile::strict_instruction(), FailureMode::MissingGrouping);
        assert!(matches!(
            m.respond(&case("c1"), &PromptFeatureSet::default()),
            Err(ProviderError::InapplicableMode { .. })
        ));
        assert_eq!(m.check_annotations().len(), 1);
    }

    #[test]
    fn complete_requires_case_ref() {
        let m = MockProvider::new(DriftProfile::legacy_flexible(), [case("c1")]);
        let req = ChatRequest::new("gpt-4.1", vec![ChatMessage::user("hello there")]);
        assert_eq!(m.complete(&req), Err(ProviderError::UnknownCase(None)));
        let resp = m.complete(&req.clone().with_case("c1")).unwrap();
        assert_eq!(resp.usage, Usage { input_tokens: 2, output_tokens: 5 });
        assert!(matches!(m.complete(&req.with_case("nope")), Err(ProviderError::UnknownCase(Some(_)))));
    }

    #[test]
    fn hashed_fallback_is_stable() {
        let cases: Vec<TestCase> = (0..200).map(|i| case(&format!("c{i}"))).collect();
        let m = MockProvider::new(DriftProfile::creative_verbose(), cases.clone()).with_fallback_rate(0.5);
        let first: Vec<_> = cases.iter().map(|c| m.respond(c, &PromptFeatureSet::default()).unwrap()).collect();
        let again: Vec<_> = cases.iter().map(|c| m.respond(c, &PromptFeatureSet::default()).unwrap()).collect();
        assert_eq!(first, again);
        let corrupted = first.iter().filter(|o| **o != serialize(&cases[0].expected)).count();
        assert!((50..150).contains(&corrupted), "{corrupted}");
        assert!(cases.iter().all(|c| m.respond(c, &full_features()).unwrap() == serialize(&c.expected)));
    }
}
