mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;

use proptest::prelude::*;
use proptest::sample::select;

use common::*;
use pmig_core::operator::{canonicalize, compare};
use pmig_core::output::{parse_output, serialize};
use pmig_core::prompt::{load_registry, Registry};
use pmig_core::provider::{corrupt, DriftProfile, MockProvider, Usage};
use pmig_core::runner::{
    evaluate, migrate, pass_rate, run_suite, MigrationConfig, RunOptions, RunReport, ScriptedFixer,
};
use pmig_core::taxonomy::{FailureCategory, FailureMode};
use pmig_core::testbed::{Suite, TestCase};

fn bundled() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../bundled")
}

fn legacy() -> Registry {
    load_registry(&bundled().join("prompts/legacy")).unwrap()
}

fn profile() -> impl Strategy<Value = DriftProfile> {
    prop_oneof![
        Just(DriftProfile::legacy_flexible()),
        Just(DriftProfile::strict_instruction()),
        Just(DriftProfile::creative_verbose()),
    ]
}

/// Cases plus an applicable annotation on some of them.
fn annotated(max: usize) -> impl Strategy<Value = (Vec<TestCase>, BTreeMap<String, FailureMode>)> {
    cases(max).prop_flat_map(|cs| {
        let n = cs.len();
        (
            Just(cs),
            prop::collection::vec(prop::option::weighted(0.5, select(FailureCategory::ALL.to_vec())), n),
        )
            .prop_map(|(cs, picks)| {
                let ann = cs
                    .iter()
                    .zip(picks)
                    .filter_map(|(c, m)| m.filter(|m| corrupt(*m, &c.expected, &c.schema).is_some()).map(|m| (c.id.clone(), m)))
                    .collect();
                (cs, ann)
            })
    })
}

fn suite(name: &str, cs: Vec<TestCase>) -> Suite {
    Suite {
        cases: cs,
        ..Suite::new(name, 0)
    }
}

/// Raw output for a case: exact, noisy, corrupted or unrelated.
fn output_for(case: &TestCase) -> impl Strategy<Value = String> {
    let exact = serialize(&case.expected);
    let noisy = format!("note: answer below\n{exact}");
    let corrupted: Vec<String> = FailureCategory::ALL
        .into_iter()
        .filter_map(|m| corrupt(m, &case.expected, &case.schema))
        .collect();
    let mut pool = vec![exact, noisy, "I could not find any filters.".to_string()];
    pool.extend(corrupted);
    prop_oneof![select(pool), canonical_fragment().prop_map(|f| serialize(&f))]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    /// Checked without floats: r tenths is right when 2rt - 2000p lies in (-t, t].
    #[test]
    fn pass_rate_rounds_half_up(total in 1usize..5000, frac in 0.0f64..=1.0) {
        let passed = ((total as f64) * frac).floor() as usize;
        let r = (pass_rate(passed, total) * 10.0).round() as i64;
        let (t, p) = (total as i64, passed as i64);
        let gap = 2 * r * t - 2000 * p;
        prop_assert!(-t < gap && gap <= t, "{}/{} gave {}", passed, total, r);
    }
}

proptest! {
    #[test]
    fn verdicts_follow_the_comparison(
        (case, raw) in cases(2).prop_flat_map(|cs| {
            let c = cs[0].clone();
            (Just(c.clone()), output_for(&c))
        }),
        lenient in any::<bool>(),
    ) {
        let r = evaluate(&case, raw.clone(), Usage::default(), lenient);
        let want = match parse_output(&raw) {
            Err(_) => false,
            Ok(p) => compare(&case.expected, &canonicalize(&p.fragment), &case.schema).is_empty()
                && (p.diagnostics.is_empty() || lenient),
        };
        prop_assert_eq!(r.passed(), want);
        prop_assert_eq!(r.category.is_none(), want);
        prop_assert_eq!(r.raw_output, raw);
        if want && !lenient {
            prop_assert!(r.warnings.is_empty());
        }
    }

    #[test]
    fn reports_do_not_depend_on_parallelism((cs, ann) in annotated(20), p in profile(), lenient in any::<bool>()) {
        let reg = legacy();
        let s = suite("s", cs.clone());
        let mock = MockProvider::new(p, cs).with_annotations(ann);
        let run = |parallelism| run_suite(&mock, &reg, &s, "gpt-4.1", &RunOptions { parallelism, lenient }).unwrap();
        let one = run(1);
        prop_assert!(one.is_consistent());
        let ids: Vec<&str> = one.results.iter().map(|r| r.case_id.as_str()).collect();
        let want: Vec<&str> = s.cases.iter().map(|c| c.id.as_str()).collect();
        prop_assert_eq!(ids, want);
        prop_assert_eq!(&run(4), &one);
        prop_assert_eq!(&run(16), &one);
    }

    #[test]
    fn report_totals_add_up((cs, ann) in annotated(20), p in profile()) {
        let reg = legacy();
        let s = suite("s", cs.clone());
        let mock = MockProvider::new(p, cs).with_annotations(ann);
        let r = run_suite(&mock, &reg, &s, "gpt-4-32k", &RunOptions::default()).unwrap();
        let failed: usize = r.histogram.values().sum();
        prop_assert_eq!(r.passed() + failed, s.len());
        prop_assert_eq!(r.usage.calls as usize, s.len());
        prop_assert_eq!(r.pass_rate, pass_rate(r.passed(), s.len()));
        prop_assert_eq!(r.all_passed(), failed == 0);
        let text = serde_json::to_string(&r).unwrap();
        let back: RunReport = serde_json::from_str(&text).unwrap();
        prop_assert!(back.is_consistent());
        prop_assert_eq!(back, r);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    /// Fixes only add features, so a case never goes from passing to failing.
    #[test]
    fn migration_never_loses_a_case((cs, ann) in annotated(16), p in profile(), split in any::<prop::sample::Index>()) {
        // Revisions are written back to the registry root, so work on a copy.
        let scratch = tempfile::tempdir().unwrap();
        let mut reg = legacy();
        reg.store(scratch.path()).unwrap();
        let at = split.index(cs.len() + 1);
        let testbed = suite("tb", cs[..at].to_vec());
        let regression = suite("reg", cs[at..].to_vec());
        let mock = MockProvider::new(p, cs.clone()).with_annotations(ann);
        let mut fixer = ScriptedFixer::load(&bundled().join("fixtures")).unwrap();
        let config = MigrationConfig { max_iterations: 30, max_gate_loops: 5, ..MigrationConfig::default() };
        let out = migrate(&mut reg, &testbed, &regression, &mock, &mut fixer, "gpt-4.1", &config).unwrap();
        // A lone failure category may hint at fewer features than the
        // profile needs, so convergence is not guaranteed here.
        if out.converged() {
            prop_assert!(out.iterations.last().unwrap().report.all_passed());
            prop_assert!(out.gates.last().unwrap().result.passed());
        }
        let mut failing: Option<BTreeSet<String>> = None;
        for it in &out.iterations {
            let now: BTreeSet<String> = it.report.failed_ids().into_iter().collect();
            if let Some(before) = &failing {
                let present: BTreeSet<&str> = it.report.results.iter().map(|r| r.case_id.as_str()).collect();
                for id in now.iter().filter(|id| present.contains(id.as_str())) {
                    // Cases added by a gate round start out failing; anything else was failing already.
                    let added = out.gates.iter().any(|g| g.added_cases.contains(id));
                    prop_assert!(before.contains(id) || added, "{} regressed at iteration {}", id, it.iteration);
                }
            }
            failing = Some(now);
        }
        for w in out.iterations.windows(2) {
            for (task, v) in &w[1].prompt_versions {
                prop_assert!(w[0].prompt_versions.get(task).is_none_or(|old| v >= old));
            }
        }
    }
}
