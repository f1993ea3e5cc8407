use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bundled() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../bundled")
}

fn pmig(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pmig"))
        .args(args)
        .env_remove("PMIG_BASE_URL")
        .env_remove("PMIG_API_KEY")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn copy_dir(from: &Path, to: &Path) {
    fs::create_dir_all(to).unwrap();
    for e in fs::read_dir(from).unwrap() {
        let e = e.unwrap();
        let target = to.join(e.file_name());
        if e.file_type().unwrap().is_dir() {
            copy_dir(&e.path(), &target);
        } else {
            fs::copy(e.path(), target).unwrap();
        }
    }
}

fn run_regression(prompts: &str, model: &str, profile: &str, extra: &[&str]) -> Output {
    let suite = bundled().join("suites/regression.json");
    let prompts = bundled().join("prompts").join(prompts);
    let provider = format!("mock:{profile}");
    let mut args = vec![
        "run",
        "--suite",
        path(&suite),
        "--prompts",
        path(&prompts),
        "--model",
        model,
        "--provider",
        &provider,
        "--no-timestamp",
    ];
    args.extend_from_slice(extra);
    pmig(&args)
}

#[test]
fn run_gives_the_legacy_pass_rates() {
    let o = run_regression("legacy", "gpt-4-32k", "legacy-flexible", &[]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).contains("| 100.0"));

    let o = run_regression("legacy", "gpt-4.1", "strict-instruction", &[]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stdout(&o).contains("| 98.0"), "{}", stdout(&o));

    let o = run_regression("legacy", "gpt-4.5-preview", "creative-verbose", &[]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stdout(&o).contains("| 97.3"));
}

#[test]
fn migrated_prompts_pass() {
    for (tag, profile) in [("gpt-4.1", "strict-instruction"), ("gpt-4.5-preview", "creative-verbose")] {
        let o = run_regression("migrated", tag, profile, &[]);
        assert_eq!(o.status.code(), Some(0), "{tag}: {}", stdout(&o));
    }
}

#[test]
fn missing_prompts_dir_is_an_operational_error() {
    let suite = bundled().join("suites/regression.json");
    let o = pmig(&[
        "run", "--suite", path(&suite), "--prompts", "/definitely/not/here", "--model", "gpt-4.1", "--provider",
        "mock:legacy-flexible",
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("does not exist"));
}

#[test]
fn reports_are_deterministic_without_timestamps() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.json");
    let b = dir.path().join("b.json");
    run_regression("legacy", "gpt-4.1", "strict-instruction", &["--report", path(&a), "--parallelism", "1"]);
    run_regression("legacy", "gpt-4.1", "strict-instruction", &["--report", path(&b), "--parallelism", "16"]);
    let text = fs::read_to_string(&a).unwrap();
    assert_eq!(text, fs::read_to_string(&b).unwrap());
    assert!(!text.contains("\"timestamp\""));

    let suite = bundled().join("suites/regression.json");
    let prompts = bundled().join("prompts/legacy");
    let c = dir.path().join("c.json");
    pmig(&[
        "run", "--suite", path(&suite), "--prompts", path(&prompts), "--model", "gpt-4.1", "--provider",
        "mock:strict-instruction", "--report", path(&c),
    ]);
    assert!(fs::read_to_string(&c).unwrap().contains("\"timestamp\""));
}

#[test]
fn markdown_report_has_one_table() {
    let dir = tempfile::tempdir().unwrap();
    let md = dir.path().join("r.md");
    run_regression("legacy", "gpt-4.1", "strict-instruction", &["--report", path(&md), "--format", "markdown"]);
    let text = fs::read_to_string(&md).unwrap();
    assert!(text.starts_with("| Model | Tests Passed (%) |\n|---|---|\n| gpt-4.1 | 98.0 |\n"));
    assert_eq!(text.matches("|---|").count(), 1);
    assert!(text.contains("- MissingOrdering: 1"));
}

fn migrate_in(dir: &Path, profile: &str, fixtures: &Path) -> Output {
    let prompts = dir.join("prompts");
    copy_dir(&bundled().join("prompts/legacy"), &prompts);
    fs::remove_file(prompts.join("filter_extract/gpt-4.1.prompt")).unwrap();
    let fixer = format!("scripted:{}", fixtures.display());
    let provider = format!("mock:{profile}");
    let out = dir.join("outcome.json");
    pmig(&[
        "migrate",
        "--from",
        "gpt-4-32k",
        "--to",
        "gpt-4.1",
        "--prompts",
        path(&prompts),
        "--testbed",
        path(&bundled().join("suites/testbed.json")),
        "--regression",
        path(&bundled().join("suites/regression.json")),
        "--provider",
        &provider,
        "--fixer",
        &fixer,
        "--out",
        path(&out),
    ])
}

#[test]
fn scripted_migration_converges_and_records_lineage() {
    let dir = tempfile::tempdir().unwrap();
    let o = migrate_in(dir.path(), "strict-instruction", &bundled().join("fixtures"));
    assert_eq!(o.status.code(), Some(0), "{}{}", stdout(&o), stderr(&o));
    assert!(stdout(&o).contains("status: converged"));
    let created = fs::read_to_string(dir.path().join("prompts/filter_extract/gpt-4.1.prompt")).unwrap();
    let header = created.lines().next().unwrap();
    assert!(header.starts_with("@version ") && header.contains(" from gpt-4.1@"), "{header}");
    // untouched files keep their own lineage
    let legacy = fs::read_to_string(dir.path().join("prompts/filter_extract/gpt-4-32k.prompt")).unwrap();
    assert!(legacy.starts_with("@version 1\n"));
    let outcome: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("outcome.json")).unwrap()).unwrap();
    assert_eq!(outcome["status"], "converged");
}

#[test]
fn migration_seeds_with_lineage_when_nothing_needs_fixing() {
    let dir = tempfile::tempdir().unwrap();
    let o = migrate_in(dir.path(), "legacy-flexible", &bundled().join("fixtures"));
    assert_eq!(o.status.code(), Some(0));
    let seeded = fs::read_to_string(dir.path().join("prompts/filter_extract/gpt-4.1.prompt")).unwrap();
    assert!(seeded.starts_with("@version 1 from gpt-4-32k@1\n"));
}

#[test]
fn empty_fixture_dir_hits_the_iteration_limit() {
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("fixtures");
    fs::create_dir(&empty).unwrap();
    let o = migrate_in(dir.path(), "strict-instruction", &empty);
    assert_eq!(o.status.code(), Some(1));
    assert!(stdout(&o).contains("status: iteration_limit"));
}

#[test]
fn bad_fixer_spec_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let prompts = dir.path().join("p");
    copy_dir(&bundled().join("prompts/legacy"), &prompts);
    let o = pmig(&[
        "migrate", "--from", "gpt-4-32k", "--to", "gpt-4.1", "--prompts", path(&prompts), "--testbed",
        path(&bundled().join("suites/testbed.json")), "--regression", path(&bundled().join("suites/regression.json")),
        "--provider", "mock:strict-instruction", "--fixer", "telepathy",
    ]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn testbed_generation() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = bundled().join("corpus/corpus.json");
    let a = dir.path().join("a.json");
    let b = dir.path().join("b.json");
    for out in [&a, &b] {
        let o = pmig(&["testbed", "generate", "--corpus", path(&corpus), "--out", path(out)]);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
        assert!(stdout(&o).contains("wrote 110 cases (easy 40, moderate 35, hard 35)"));
    }
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    assert_eq!(fs::read(&a).unwrap(), fs::read(bundled().join("suites/testbed.json")).unwrap());

    let o = pmig(&["testbed", "generate", "--corpus", path(&corpus), "--easy", "1000", "--out", path(&a)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("easy"), "{}", stderr(&o));
}

#[test]
fn prompt_lint_and_diff() {
    let prompts = bundled().join("prompts/migrated");
    let old = pmig(&["prompt", "lint", "filter_extract", "gpt-4-32k", "--prompts", path(&prompts)]);
    assert_eq!(old.status.code(), Some(0));
    let text = stdout(&old);
    assert!(text.contains("example_count: 0\n"));
    assert!(text.contains("has_explicit_output_format: false\n"));

    let new = pmig(&["prompt", "lint", "filter_extract", "gpt-4.1", "--prompts", path(&prompts)]);
    assert!(stdout(&new).contains("example_count: 3\n"));

    let d = pmig(&["prompt", "diff", "filter_extract", "gpt-4-32k", "gpt-4.1", "--prompts", path(&prompts), "--json"]);
    let v: serde_json::Value = serde_json::from_slice(&d.stdout).unwrap();
    assert_eq!(v["added"], serde_json::json!(["rules", "output_format", "examples"]));

    let missing = pmig(&["prompt", "lint", "filter_extract", "gpt-9", "--prompts", path(&prompts)]);
    assert_eq!(missing.status.code(), Some(2));
}

#[test]
fn malformed_inputs_exit_2_without_panicking() {
    let dir = tempfile::tempdir().unwrap();
    let garbage = dir.path().join("garbage.json");
    fs::write(&garbage, "{\"name\": \"x\", \"cases\": [").unwrap();
    let prompts = bundled().join("prompts/legacy");
    let regression = bundled().join("suites/regression.json");

    let cases: Vec<Vec<&str>> = vec![
        vec!["run", "--suite", path(&garbage), "--prompts", path(&prompts), "--model", "gpt-4.1", "--provider", "mock:legacy-flexible"],
        vec!["run", "--suite", path(&regression), "--prompts", path(&prompts), "--model", "gpt-4.1", "--provider", "smoke-signals"],
        vec!["run", "--suite", path(&regression), "--prompts", path(&prompts), "--model", "gpt-4.1", "--provider", "mock:nonesuch"],
        vec!["run", "--suite", path(&regression), "--prompts", path(&prompts), "--model", "gpt-4.1", "--provider", "mock:strict-instruction", "--drift", path(&garbage)],
        vec!["run", "--suite", path(&regression), "--prompts", path(&prompts), "--model", "gpt-4.1", "--provider", "mock:legacy-flexible", "--parallelism", "0"],
        vec!["testbed", "generate", "--corpus", path(&garbage), "--out", "/dev/null"],
    ];
    for args in cases {
        let o = pmig(&args);
        assert_eq!(o.status.code(), Some(2), "{args:?}: {}", stderr(&o));
        assert!(!stderr(&o).contains("panicked"), "{args:?}");
    }

    let bad_prompts = dir.path().join("prompts/filter_extract");
    fs::create_dir_all(&bad_prompts).unwrap();
    fs::write(bad_prompts.join("gpt-4.1.prompt"), "@version one\n@bogus\n").unwrap();
    let o = pmig(&["prompt", "lint", "filter_extract", "gpt-4.1", "--prompts", path(&dir.path().join("prompts"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("gpt-4.1.prompt:1"), "{}", stderr(&o));
}

#[test]
fn drift_profile_mismatch_is_rejected() {
    let drift = bundled().join("drift/creative-verbose.json");
    let o = run_regression("legacy", "gpt-4.1", "strict-instruction", &["--drift", path(&drift)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("creative-verbose"));
}

#[test]
fn config_file_supplies_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("pmig.toml");
    fs::write(
        &cfg,
        format!(
            "prompts_root = \"{}\"\nprovider = \"mock:strict-instruction\"\ndrift_dir = \"{}\"\nparallelism = 2\n\n[suites]\nregression = \"{}\"\n",
            bundled().join("prompts/legacy").display(),
            bundled().join("drift").display(),
            bundled().join("suites/regression.json").display(),
        ),
    )
    .unwrap();
    let o = pmig(&["--config", path(&cfg), "run", "--suite", "regression", "--model", "gpt-4.1", "--no-timestamp"]);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
    assert!(stdout(&o).contains("| 98.0"));
    // a flag still wins over the file
    let o = pmig(&[
        "--config", path(&cfg), "run", "--suite", "regression", "--model", "gpt-4.1", "--provider", "mock:legacy-flexible",
    ]);
    assert_eq!(o.status.code(), Some(0));
}

#[test]
fn http_without_base_url_is_a_config_error() {
    let o = run_regression("legacy", "gpt-4.1", "x", &[]);
    assert_eq!(o.status.code(), Some(2));
    let suite = bundled().join("suites/regression.json");
    let prompts = bundled().join("prompts/legacy");
    let o = pmig(&["run", "--suite", path(&suite), "--prompts", path(&prompts), "--model", "gpt-4.1", "--provider", "http:"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("PMIG_BASE_URL"));
}
