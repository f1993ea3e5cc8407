//! `pmig`: run regression suites, drive prompt migrations, build testbeds
//! and inspect prompt templates.

mod config;

use std::collections::BTreeSet;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use pmig_core::prompt::{diff, lint, load_registry, Registry};
use pmig_core::provider::{load_drift_file, DriftFile, DriftProfile, HttpConfig, HttpProvider, MockProvider, Provider, ProviderError};
use pmig_core::runner::{
    migrate, run_suite, InteractiveFixer, MigrationConfig, MigrationOutcome, PromptFixer, ReportFormat, RunOptions,
    RunReport, ScriptedFixer,
};
use pmig_core::testbed::{generate_testbed, load_corpus, load_suite, save_suite, Suite, TestCase, TestbedConfig};

use config::{Config, ProviderSpec};

#[derive(Parser)]
#[command(name = "pmig", version, about = "Prompt migration harness for NL-to-SQL operator extraction")]
struct Cli {
    /// TOML file with defaults for prompts, suites and provider.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a suite against one model and print the pass rate.
    Run(RunArgs),
    /// Iterate prompts for a new model until its testbed passes.
    Migrate(MigrateArgs),
    /// Build a tiered testbed from a tagged corpus.
    #[command(subcommand)]
    Testbed(TestbedCommand),
    /// Inspect prompt templates.
    #[command(subcommand)]
    Prompt(PromptCommand),
}

#[derive(Args)]
struct ProviderArgs {
    /// `mock:<profile>` or `http:<base_url>`.
    #[arg(long)]
    provider: Option<ProviderSpec>,
    /// Drift file for a mock provider. Defaults to `drift/<profile>.json`
    /// next to the suite directory when present.
    #[arg(long)]
    drift: Option<PathBuf>,
    #[arg(long)]
    parallelism: Option<usize>,
    /// Accept outputs whose only problem is an informational line.
    #[arg(long)]
    lenient: bool,
}

#[derive(Args)]
struct RunArgs {
    /// Suite file, or a suite name from the config.
    #[arg(long)]
    suite: String,
    #[arg(long)]
    prompts: Option<PathBuf>,
    #[arg(long)]
    model: String,
    #[command(flatten)]
    provider: ProviderArgs,
    /// Also write the report to this file.
    #[arg(long)]
    report: Option<PathBuf>,
    /// Format of the --report file: structured, table or markdown.
    #[arg(long)]
    format: Option<ReportFormat>,
    #[arg(long)]
    no_timestamp: bool,
}

#[derive(Args)]
struct MigrateArgs {
    #[arg(long)]
    from: String,
    #[arg(long)]
    to: String,
    #[arg(long)]
    prompts: Option<PathBuf>,
    /// Testbed suite (file or config name).
    #[arg(long, default_value = "testbed")]
    testbed: String,
    /// Regression suite (file or config name).
    #[arg(long, default_value = "regression")]
    regression: String,
    #[command(flatten)]
    provider: ProviderArgs,
    /// `interactive` or `scripted:<fixture dir>`.
    #[arg(long, default_value = "interactive")]
    fixer: String,
    #[arg(long, default_value_t = 10)]
    max_iterations: usize,
    #[arg(long, default_value_t = 100.0)]
    gate_threshold: f64,
    #[arg(long, default_value_t = 3)]
    max_gate_loops: usize,
    /// Write the migration outcome as JSON.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum TestbedCommand {
    /// Build a tiered testbed from a tagged corpus.
    Generate(GenerateArgs),
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long, default_value_t = 40)]
    easy: usize,
    #[arg(long, default_value_t = 35)]
    moderate: usize,
    #[arg(long, default_value_t = 35)]
    hard: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "migration-testbed")]
    name: String,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum PromptCommand {
    /// Print the feature set of one template.
    Lint {
        task: String,
        model_tag: String,
        #[arg(long)]
        prompts: Option<PathBuf>,
        #[arg(long)]
        json: bool,
    },
    /// Compare the templates of two models for one task.
    Diff {
        task: String,
        tag_a: String,
        tag_b: String,
        #[arg(long)]
        prompts: Option<PathBuf>,
        #[arg(long)]
        json: bool,
    },
}

/// Clean outcome of a command; operational errors travel as `Err`.
enum Outcome {
    Pass,
    Fail,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match dispatch(cli) {
        Ok(Outcome::Pass) => ExitCode::SUCCESS,
        Ok(Outcome::Fail) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn dispatch(cli: Cli) -> Result<Outcome> {
    let config = match &cli.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    match cli.command {
        Command::Run(args) => cmd_run(&config, args),
        Command::Migrate(args) => cmd_migrate(&config, args),
        Command::Testbed(TestbedCommand::Generate(args)) => cmd_testbed(args),
        Command::Prompt(cmd) => cmd_prompt(&config, cmd),
    }
}

fn load_prompts(path: &Path) -> Result<Registry> {
    load_registry(path).with_context(|| format!("loading prompts from {}", path.display()))
}

fn load_named_suite(config: &Config, arg: &str) -> Result<(Suite, PathBuf)> {
    let path = config.suite_path(arg);
    let suite = load_suite(&path).with_context(|| format!("loading suite {}", path.display()))?;
    Ok((suite, path))
}

fn run_options(config: &Config, args: &ProviderArgs) -> Result<RunOptions> {
    let parallelism = args.parallelism.or(config.parallelism).unwrap_or(RunOptions::default().parallelism);
    if parallelism == 0 {
        bail!("--parallelism must be at least 1");
    }
    Ok(RunOptions {
        parallelism,
        lenient: args.lenient || config.lenient.unwrap_or(false),
    })
}

/// The drift file for a mock profile: explicit flag, then the config's
/// drift directory, then `<suite dir>/../drift/<profile>.json`.
fn find_drift(config: &Config, args: &ProviderArgs, profile: &str, suite_path: &Path) -> Result<Option<DriftFile>> {
    let candidate = match &args.drift {
        Some(p) => Some(p.clone()),
        None => {
            let file = format!("{profile}.json");
            let mut dirs = Vec::new();
            dirs.extend(config.drift_dir.clone());
            if let Some(parent) = suite_path.parent() {
                let parent = if parent.as_os_str().is_empty() { Path::new(".") } else { parent };
                dirs.push(parent.join("..").join("drift"));
            }
            dirs.into_iter().map(|d| d.join(&file)).find(|p| p.is_file())
        }
    };
    let Some(path) = candidate else { return Ok(None) };
    let drift = load_drift_file(&path).with_context(|| format!("loading drift file {}", path.display()))?;
    if drift.profile != profile {
        bail!(
            "drift file {} describes profile `{}`, not `{profile}`",
            path.display(),
            drift.profile
        );
    }
    log::info!("using drift file {}", path.display());
    Ok(Some(drift))
}

fn build_provider(
    config: &Config,
    args: &ProviderArgs,
    suite_path: &Path,
    cases: Vec<TestCase>,
) -> Result<Box<dyn Provider>> {
    match config.provider(args.provider.clone())? {
        ProviderSpec::Mock { profile } => {
            let mock = match find_drift(config, args, &profile, suite_path)? {
                Some(drift) => MockProvider::from_drift(&drift, cases)?,
                None => {
                    let p = DriftProfile::builtin(&profile).ok_or_else(|| {
                        anyhow!("unknown drift profile `{profile}`; known: legacy-flexible, strict-instruction, creative-verbose (or pass --drift)")
                    })?;
                    MockProvider::new(p, cases)
                }
            };
            for problem in mock.check_annotations() {
                if let ProviderError::InapplicableMode { .. } = problem {
                    log::warn!("{problem}");
                }
            }
            Ok(Box::new(mock))
        }
        ProviderSpec::Http { base_url } => Ok(Box::new(HttpProvider::from_env(
            base_url.as_deref(),
            HttpConfig::default(),
        )?)),
    }
}

fn cmd_run(config: &Config, args: RunArgs) -> Result<Outcome> {
    let registry = load_prompts(&config.prompts(args.prompts.clone())?)?;
    let (suite, suite_path) = load_named_suite(config, &args.suite)?;
    let options = run_options(config, &args.provider)?;
    let provider = build_provider(config, &args.provider, &suite_path, suite.cases.clone())?;
    let mut report = run_suite(provider.as_ref(), &registry, &suite, &args.model, &options)?;
    if !args.no_timestamp {
        report.stamp_now();
    }
    print!("{}", ReportFormat::Table.render(&[&report]));
    if let Some(path) = &args.report {
        let text = config.format(args.format).render(&[&report]);
        std::fs::write(path, text).with_context(|| format!("writing report {}", path.display()))?;
    }
    Ok(if report.pass_rate == 100.0 { Outcome::Pass } else { Outcome::Fail })
}

fn make_fixer(choice: &str, prompts: &Path) -> Result<Box<dyn PromptFixer>> {
    match choice.split_once(':') {
        None if choice == "interactive" => Ok(Box::new(InteractiveFixer::new(
            prompts,
            io::stdin().lock(),
            io::stderr(),
        ))),
        Some(("scripted", dir)) if !dir.is_empty() => Ok(Box::new(
            ScriptedFixer::load(Path::new(dir)).with_context(|| format!("loading fixtures from {dir}"))?,
        )),
        _ => bail!("--fixer must be `interactive` or `scripted:<dir>`, got `{choice}`"),
    }
}

fn print_outcome(outcome: &MigrationOutcome) {
    let rate = |r: &RunReport| format!("{:.1}", r.pass_rate);
    for it in &outcome.iterations {
        let versions: Vec<String> = it.prompt_versions.iter().map(|(t, v)| format!("{t}@{v}")).collect();
        println!("iteration {}: testbed {} ({})", it.iteration, rate(&it.report), versions.join(", "));
    }
    for g in &outcome.gates {
        let verdict = if g.result.passed() { "pass" } else { "fail" };
        println!("gate after iteration {}: regression {} {verdict}", g.after_iteration, rate(&g.report));
        if !g.added_cases.is_empty() {
            println!("  added to testbed: {}", g.added_cases.join(", "));
        }
    }
    let status = serde_json::to_value(outcome.status).ok().and_then(|v| v.as_str().map(str::to_string));
    println!("status: {}", status.unwrap_or_default());
}

fn cmd_migrate(config: &Config, args: MigrateArgs) -> Result<Outcome> {
    let prompts = config.prompts(args.prompts.clone())?;
    let mut registry = load_prompts(&prompts)?;
    let (testbed, testbed_path) = load_named_suite(config, &args.testbed)?;
    let (regression, _) = load_named_suite(config, &args.regression)?;

    let tasks: BTreeSet<&str> = testbed.cases.iter().chain(&regression.cases).map(|c| c.task.as_str()).collect();
    for task in tasks {
        if registry.seed(task, &args.from, &args.to)? {
            log::info!("seeded ({task}, {}) from {}", args.to, args.from);
        }
    }

    let cases: Vec<TestCase> = testbed.cases.iter().chain(&regression.cases).cloned().collect();
    let provider = build_provider(config, &args.provider, &testbed_path, cases)?;
    let mut fixer = make_fixer(&args.fixer, &prompts)?;
    let migration = MigrationConfig {
        max_iterations: args.max_iterations,
        gate_threshold: args.gate_threshold,
        max_gate_loops: args.max_gate_loops,
        run: run_options(config, &args.provider)?,
    };
    let outcome = migrate(
        &mut registry,
        &testbed,
        &regression,
        provider.as_ref(),
        fixer.as_mut(),
        &args.to,
        &migration,
    )?;
    print_outcome(&outcome);
    if let Some(path) = &args.out {
        let mut text = serde_json::to_string_pretty(&outcome)?;
        text.push('\n');
        std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(if outcome.converged() { Outcome::Pass } else { Outcome::Fail })
}

fn cmd_testbed(args: GenerateArgs) -> Result<Outcome> {
    let corpus = load_corpus(&args.corpus).with_context(|| format!("loading corpus {}", args.corpus.display()))?;
    let config = TestbedConfig {
        name: args.name,
        easy_n: args.easy,
        moderate_n: args.moderate,
        hard_n: args.hard,
        seed: args.seed,
    };
    let suite = generate_testbed(&corpus.entries, &config)?;
    save_suite(&args.out, &suite)?;
    let counts: Vec<String> = suite.tier_counts().iter().map(|(t, n)| format!("{t} {n}")).collect();
    println!("wrote {} cases ({}) to {}", suite.len(), counts.join(", "), args.out.display());
    Ok(Outcome::Pass)
}

fn cmd_prompt(config: &Config, cmd: PromptCommand) -> Result<Outcome> {
    let mut out = io::stdout().lock();
    match cmd {
        PromptCommand::Lint {
            task,
            model_tag,
            prompts,
            json,
        } => {
            let registry = load_prompts(&config.prompts(prompts)?)?;
            let features = lint(registry.require(&task, &model_tag)?);
            if json {
                writeln!(out, "{}", serde_json::to_string_pretty(&features)?)?;
            } else {
                write!(out, "{features}")?;
            }
        }
        PromptCommand::Diff {
            task,
            tag_a,
            tag_b,
            prompts,
            json,
        } => {
            let registry = load_prompts(&config.prompts(prompts)?)?;
            let d = diff(registry.require(&task, &tag_a)?, registry.require(&task, &tag_b)?)?;
            if json {
                writeln!(out, "{}", serde_json::to_string_pretty(&d)?)?;
            } else {
                write!(out, "{d}")?;
            }
        }
    }
    Ok(Outcome::Pass)
}
