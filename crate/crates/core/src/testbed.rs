//! Tiered migration testbeds generated from a tagged corpus, plus the suite
//! file format shared with regression suites.
//!
//! Tier selection:
//! * easy: untagged production entries, preferring more of {Filter,
//!   GroupBy, OrderBy, Limit}; within a class, the entry adding the most
//!   unseen column names and literal values wins, then the lower id.
//! * moderate: variations of selected easy entries, then previously failed
//!   entries, then query-cache/unit-test entries.
//! * hard: entries with implicit operations, then word substitutions, then
//!   natural rephrasings.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::operator::{canonicalize, OperatorFragment, SchemaContext};

pub const DEFAULT_TASK: &str = "filter_extract";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tier {
    Easy,
    Moderate,
    Hard,
}

impl Tier {
    pub const ALL: [Tier; 3] = [Self::Easy, Self::Moderate, Self::Hard];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Easy => "easy",
            Self::Moderate => "moderate",
            Self::Hard => "hard",
        }
    }
}

impl fmt::Display for Tier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Operator {
    Filter,
    GroupBy,
    OrderBy,
    Limit,
    Select,
    Aggregate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    #[default]
    Production,
    QueryCache,
    UnitTest,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImplicitMarker {
    ImplicitColumn,
    ImplicitFilter,
    ImplicitAggregation,
    ImplicitOrdering,
}

/// Serde adapter: fragments travel as their canonical text serialization.
pub mod fragment_text {
    use serde::{de, Deserialize, Deserializer, Serializer};

    use crate::operator::{canonicalize, OperatorFragment};
    use crate::output::{parse_output, serialize as to_text};

    pub fn serialize<S: Serializer>(f: &OperatorFragment, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&to_text(f))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<OperatorFragment, D::Error> {
        let text = String::deserialize(d)?;
        let parsed = parse_output(&text).map_err(de::Error::custom)?;
        if let Some(line) = parsed.diagnostics.first() {
            return Err(de::Error::custom(format!("unrecognized line in fragment: {}", line.text)));
        }
        Ok(canonicalize(&parsed.fragment))
    }
}

fn default_task() -> String {
    DEFAULT_TASK.to_string()
}

fn is_default_task(t: &str) -> bool {
    t == DEFAULT_TASK
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusEntry {
    pub id: String,
    pub question: String,
    pub schema: SchemaContext,
    #[serde(with = "fragment_text")]
    pub expected: OperatorFragment,
    pub operators_present: BTreeSet<Operator>,
    #[serde(default)]
    pub source: Source,
    #[serde(default)]
    pub previously_failed: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub variation_of: Option<String>,
    #[serde(default, skip_serializing_if = "BTreeSet::is_empty")]
    pub implicit_markers: BTreeSet<ImplicitMarker>,
    #[serde(default)]
    pub word_substituted: bool,
    #[serde(default)]
    pub natural_phrasing: bool,
    #[serde(default = "default_task", skip_serializing_if = "is_default_task")]
    pub task: String,
}

const CORE_OPERATORS: [Operator; 4] = [Operator::Filter, Operator::GroupBy, Operator::OrderBy, Operator::Limit];

impl CorpusEntry {
    /// How many of Filter, GroupBy, OrderBy, Limit the entry carries.
    pub fn core_operator_count(&self) -> usize {
        CORE_OPERATORS.iter().filter(|o| self.operators_present.contains(o)).count()
    }

    fn is_hard_tagged(&self) -> bool {
        !self.implicit_markers.is_empty() || self.word_substituted || self.natural_phrasing
    }

    fn is_moderate_tagged(&self) -> bool {
        self.variation_of.is_some() || self.previously_failed || self.source != Source::Production
    }

    fn is_easy_eligible(&self) -> bool {
        !self.is_hard_tagged() && !self.is_moderate_tagged() && self.core_operator_count() > 0
    }

    /// Column names and literal values, namespaced so a value never
    /// collides with a column of the same spelling.
    fn coverage_tokens(&self) -> BTreeSet<String> {
        let mut out: BTreeSet<String> = self.expected.columns().map(|c| format!("c:{c}")).collect();
        out.extend(self.expected.filters.iter().map(|p| format!("v:{}", p.value)));
        out
    }

    fn check(&self) -> Result<(), String> {
        let e = &self.expected;
        let has = |o: Operator| self.operators_present.contains(&o);
        let pairs = [
            (Operator::Filter, !e.filters.is_empty()),
            (Operator::GroupBy, !e.group_by.is_empty()),
            (Operator::OrderBy, !e.order_by.is_empty()),
            (Operator::Limit, e.limit.is_some()),
            (Operator::Select, !e.select.is_empty()),
        ];
        for (op, present) in pairs {
            if has(op) != present {
                return Err(format!("entry {}: operators_present disagrees with expected on {op:?}", self.id));
            }
        }
        self.schema.validate().map_err(|e| format!("entry {}: {e}", self.id))?;
        if let Some(c) = e.columns().find(|c| !self.schema.contains(c)) {
            return Err(format!("entry {}: expected column {c} is not in schema {}", self.id, self.schema.table));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Corpus {
    pub name: String,
    pub entries: Vec<CorpusEntry>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TestCase {
    pub id: String,
    pub tier: Tier,
    #[serde(default = "default_task", skip_serializing_if = "is_default_task")]
    pub task: String,
    pub question: String,
    pub schema: SchemaContext,
    #[serde(with = "fragment_text")]
    pub expected: OperatorFragment,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_entry: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Suite {
    pub name: String,
    #[serde(rename = "seed")]
    pub generation_seed: u64,
    pub cases: Vec<TestCase>,
}

#[derive(Debug, thiserror::Error)]
pub enum TestbedError {
    #[error("not enough {tier} candidates: needed {needed}, available {available}")]
    InsufficientCorpus { tier: Tier, needed: usize, available: usize },
    #[error("case `{0}` is already in the suite")]
    DuplicateCase(String),
    #[error("invalid corpus: {0}")]
    InvalidCorpus(String),
    #[error("invalid suite: {0}")]
    InvalidSuite(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Json { path: PathBuf, source: serde_json::Error },
}

impl Suite {
    pub fn new(name: impl Into<String>, generation_seed: u64) -> Self {
        Self {
            name: name.into(),
            generation_seed,
            cases: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.cases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cases.is_empty()
    }

    pub fn tier_counts(&self) -> BTreeMap<Tier, usize> {
        let mut counts: BTreeMap<Tier, usize> = Tier::ALL.iter().map(|t| (*t, 0)).collect();
        for c in &self.cases {
            *counts.entry(c.tier).or_default() += 1;
        }
        counts
    }

    pub fn case(&self, id: &str) -> Option<&TestCase> {
        self.cases.iter().find(|c| c.id == id)
    }

    pub fn validate(&self) -> Result<(), TestbedError> {
        let mut ids = HashSet::new();
        for c in &self.cases {
            if !ids.insert(c.id.as_str()) {
                return Err(TestbedError::DuplicateCase(c.id.clone()));
            }
            c.schema
                .validate()
                .map_err(|e| TestbedError::InvalidSuite(format!("case {}: {e}", c.id)))?;
            if !c.expected.is_canonical() {
                return Err(TestbedError::InvalidSuite(format!("case {}: expected is not canonical", c.id)));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TestbedConfig {
    pub name: String,
    pub easy_n: usize,
    pub moderate_n: usize,
    pub hard_n: usize,
    /// Recorded in the suite for provenance. Selection itself is fully
    /// determined by the corpus and tie-break rules.
    pub seed: u64,
}

impl Default for TestbedConfig {
    fn default() -> Self {
        Self {
            name: "migration-testbed".to_string(),
            easy_n: 40,
            moderate_n: 35,
            hard_n: 35,
            seed: 0,
        }
    }
}

impl Corpus {
    pub fn validate(&self) -> Result<(), TestbedError> {
        let ids: HashSet<&str> = self.entries.iter().map(|e| e.id.as_str()).collect();
        if ids.len() != self.entries.len() {
            return Err(TestbedError::InvalidCorpus("duplicate entry ids".into()));
        }
        for e in &self.entries {
            e.check().map_err(TestbedError::InvalidCorpus)?;
            if let Some(v) = &e.variation_of {
                if !ids.contains(v.as_str()) {
                    return Err(TestbedError::InvalidCorpus(format!(
                        "entry {}: variation_of references unknown id {v}",
                        e.id
                    )));
                }
            }
        }
        Ok(())
    }
}

fn to_case(entry: &CorpusEntry, tier: Tier) -> TestCase {
    TestCase {
        id: entry.id.clone(),
        tier,
        task: entry.task.clone(),
        question: entry.question.clone(),
        schema: entry.schema.clone(),
        expected: canonicalize(&entry.expected),
        source_entry: Some(entry.id.clone()),
    }
}

fn select_easy<'a>(pool: &[&'a CorpusEntry], n: usize) -> Vec<&'a CorpusEntry> {
    let mut remaining: Vec<&CorpusEntry> = pool.to_vec();
    let mut covered: BTreeSet<String> = BTreeSet::new();
    let mut picked = Vec::with_capacity(n);
    while picked.len() < n && !remaining.is_empty() {
        let best_class = remaining.iter().map(|e| e.core_operator_count()).max().unwrap_or(0);
        let (idx, _) = remaining
            .iter()
            .enumerate()
            .filter(|(_, e)| e.core_operator_count() == best_class)
            .map(|(i, e)| (i, e.coverage_tokens().difference(&covered).count()))
            .min_by(|(ia, na), (ib, nb)| nb.cmp(na).then_with(|| remaining[*ia].id.cmp(&remaining[*ib].id)))
            .expect("class is non-empty");
        let chosen = remaining.swap_remove(idx);
        covered.extend(chosen.coverage_tokens());
        picked.push(chosen);
    }
    picked
}

fn select_ranked<'a, F>(pool: &[&'a CorpusEntry], n: usize, rank: F) -> (Vec<&'a CorpusEntry>, usize)
where
    F: Fn(&CorpusEntry) -> Option<u8>,
{
    let mut ranked: Vec<(u8, &CorpusEntry)> = pool.iter().filter_map(|e| rank(e).map(|r| (r, *e))).collect();
    ranked.sort_by(|(ra, a), (rb, b)| ra.cmp(rb).then_with(|| a.id.cmp(&b.id)));
    let available = ranked.len();
    (ranked.into_iter().take(n).map(|(_, e)| e).collect(), available)
}

/// Build a tiered testbed. Pure: identical inputs give identical suites.
pub fn generate_testbed(corpus: &[CorpusEntry], config: &TestbedConfig) -> Result<Suite, TestbedError> {
    let easy_pool: Vec<&CorpusEntry> = corpus.iter().filter(|e| e.is_easy_eligible()).collect();
    let moderate_pool: Vec<&CorpusEntry> = corpus
        .iter()
        .filter(|e| !e.is_hard_tagged() && e.is_moderate_tagged())
        .collect();
    let hard_pool: Vec<&CorpusEntry> = corpus.iter().filter(|e| e.is_hard_tagged()).collect();

    if easy_pool.len() < config.easy_n {
        return Err(TestbedError::InsufficientCorpus {
            tier: Tier::Easy,
            needed: config.easy_n,
            available: easy_pool.len(),
        });
    }
    let easy = select_easy(&easy_pool, config.easy_n);
    let easy_ids: HashSet<&str> = easy.iter().map(|e| e.id.as_str()).collect();

    let (moderate, available) = select_ranked(&moderate_pool, config.moderate_n, |e| {
        if e.variation_of.as_deref().is_some_and(|v| easy_ids.contains(v)) {
            Some(0)
        } else if e.previously_failed {
            Some(1)
        } else if matches!(e.source, Source::QueryCache | Source::UnitTest) {
            Some(2)
        } else {
            None
        }
    });
    if moderate.len() < config.moderate_n {
        return Err(TestbedError::InsufficientCorpus {
            tier: Tier::Moderate,
            needed: config.moderate_n,
            available,
        });
    }

    let (hard, available) = select_ranked(&hard_pool, config.hard_n, |e| {
        if !e.implicit_markers.is_empty() {
            Some(0)
        } else if e.word_substituted {
            Some(1)
        } else if e.natural_phrasing {
            Some(2)
        } else {
            None
        }
    });
    if hard.len() < config.hard_n {
        return Err(TestbedError::InsufficientCorpus {
            tier: Tier::Hard,
            needed: config.hard_n,
            available,
        });
    }

    let mut suite = Suite::new(config.name.clone(), config.seed);
    for (tier, entries) in [(Tier::Easy, easy), (Tier::Moderate, moderate), (Tier::Hard, hard)] {
        suite.cases.extend(entries.into_iter().map(|e| to_case(e, tier)));
    }
    Ok(suite)
}

/// No selected easy entry carries fewer core operators than an unselected
/// easy-eligible entry.
pub fn easy_preference_sound(corpus: &[CorpusEntry], suite: &Suite) -> bool {
    let selected: HashSet<&str> = suite
        .cases
        .iter()
        .filter(|c| c.tier == Tier::Easy)
        .filter_map(|c| c.source_entry.as_deref())
        .collect();
    let (chosen, rest): (Vec<&CorpusEntry>, Vec<&CorpusEntry>) = corpus
        .iter()
        .filter(|e| e.is_easy_eligible())
        .partition(|e| selected.contains(e.id.as_str()));
    let min_chosen = chosen.iter().map(|e| e.core_operator_count()).min();
    let max_rest = rest.iter().map(|e| e.core_operator_count()).max();
    match (min_chosen, max_rest) {
        (Some(lo), Some(hi)) => lo >= hi,
        _ => true,
    }
}

/// Add a case after the last case of its tier (or of an easier tier).
pub fn extend_suite(suite: &Suite, case: TestCase) -> Result<Suite, TestbedError> {
    if suite.case(&case.id).is_some() {
        return Err(TestbedError::DuplicateCase(case.id));
    }
    let mut out = suite.clone();
    let at = out
        .cases
        .iter()
        .rposition(|c| c.tier <= case.tier)
        .map_or(0, |i| i + 1);
    out.cases.insert(at, case);
    Ok(out)
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, TestbedError> {
    let text = fs::read_to_string(path).map_err(|source| TestbedError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|source| TestbedError::Json {
        path: path.to_path_buf(),
        source,
    })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), TestbedError> {
    let mut text = serde_json::to_string_pretty(value).expect("suite types serialize");
    text.push('\n');
    fs::write(path, text).map_err(|source| TestbedError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load_suite(path: &Path) -> Result<Suite, TestbedError> {
    let suite: Suite = read_json(path)?;
    suite.validate()?;
    Ok(suite)
}

pub fn save_suite(path: &Path, suite: &Suite) -> Result<(), TestbedError> {
    write_json(path, suite)
}

pub fn load_corpus(path: &Path) -> Result<Corpus, TestbedError> {
    let corpus: Corpus = read_json(path)?;
    corpus.validate()?;
    Ok(corpus)
}

pub fn save_corpus(path: &Path, corpus: &Corpus) -> Result<(), TestbedError> {
    write_json(path, corpus)
}
