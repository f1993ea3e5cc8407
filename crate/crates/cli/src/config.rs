use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{bail, Context, Result};
use serde::Deserialize;

use pmig_core::runner::ReportFormat;

/// Where completions come from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ProviderSpec {
    Mock { profile: String },
    /// `None` falls back to `PMIG_BASE_URL`.
    Http { base_url: Option<String> },
}

impl FromStr for ProviderSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.split_once(':') {
            Some(("mock", profile)) if !profile.trim().is_empty() => Ok(Self::Mock {
                profile: profile.trim().to_string(),
            }),
            Some(("mock", _)) => Err("`mock:` needs a profile name, e.g. mock:strict-instruction".into()),
            Some(("http", rest)) => Ok(Self::Http {
                base_url: Some(rest.trim()).filter(|r| !r.is_empty()).map(str::to_string),
            }),
            _ if s == "http" => Ok(Self::Http { base_url: None }),
            _ => Err(format!("provider `{s}` is neither mock:<profile> nor http:<base_url>")),
        }
    }
}

impl fmt::Display for ProviderSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Mock { profile } => write!(f, "mock:{profile}"),
            Self::Http { base_url } => write!(f, "http:{}", base_url.as_deref().unwrap_or("")),
        }
    }
}

/// Optional `--config` file. Relative paths are taken from the file's
/// directory; command-line flags win over anything set here.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub prompts_root: Option<PathBuf>,
    #[serde(default)]
    pub suites: BTreeMap<String, PathBuf>,
    pub provider: Option<String>,
    pub drift_dir: Option<PathBuf>,
    pub parallelism: Option<usize>,
    pub lenient: Option<bool>,
    pub report_format: Option<String>,
}

impl Config {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let mut config: Config = toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let rebase = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let Some(p) = config.prompts_root.as_mut() {
            rebase(p);
        }
        if let Some(p) = config.drift_dir.as_mut() {
            rebase(p);
        }
        config.suites.values_mut().for_each(rebase);
        if let Some(p) = &config.provider {
            p.parse::<ProviderSpec>().map_err(anyhow::Error::msg)?;
        }
        if let Some(f) = &config.report_format {
            f.parse::<ReportFormat>().map_err(anyhow::Error::msg)?;
        }
        Ok(config)
    }

    /// A suite argument is either a name from `[suites]` or a path.
    pub fn suite_path(&self, arg: &str) -> PathBuf {
        self.suites.get(arg).cloned().unwrap_or_else(|| PathBuf::from(arg))
    }

    pub fn prompts(&self, flag: Option<PathBuf>) -> Result<PathBuf> {
        match flag.or_else(|| self.prompts_root.clone()) {
            Some(p) => Ok(p),
            None => bail!("no prompt directory: pass --prompts or set prompts_root in the config"),
        }
    }

    pub fn provider(&self, flag: Option<ProviderSpec>) -> Result<ProviderSpec> {
        if let Some(p) = flag {
            return Ok(p);
        }
        match &self.provider {
            Some(p) => p.parse().map_err(anyhow::Error::msg),
            None => bail!("no provider: pass --provider or set provider in the config"),
        }
    }

    pub fn format(&self, flag: Option<ReportFormat>) -> ReportFormat {
        flag.or_else(|| self.report_format.as_deref().and_then(|f| f.parse().ok()))
            .unwrap_or_default()
    }
}
