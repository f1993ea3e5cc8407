use std::fmt::Write;
use std::str::FromStr;

use super::RunReport;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ReportFormat {
    /// Pretty-printed JSON.
    #[default]
    Structured,
    Table,
    Markdown,
}

impl FromStr for ReportFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "structured" | "json" => Ok(Self::Structured),
            "table" => Ok(Self::Table),
            "markdown" | "md" => Ok(Self::Markdown),
            other => Err(format!("unknown report format `{other}` (structured, table, markdown)")),
        }
    }
}

impl ReportFormat {
    pub fn render(self, reports: &[&RunReport]) -> String {
        match self {
            Self::Structured => match reports {
                [one] => render_structured(one),
                many => {
                    let mut s = serde_json::to_string_pretty(many).expect("reports serialize");
                    s.push('\n');
                    s
                }
            },
            Self::Table => render_table(reports),
            Self::Markdown => render_markdown(reports),
        }
    }
}

pub fn render_structured(report: &RunReport) -> String {
    let mut s = serde_json::to_string_pretty(report).expect("reports serialize");
    s.push('\n');
    s
}

const HEADER: [&str; 2] = ["Model", "Tests Passed (%)"];

fn failure_lines(reports: &[&RunReport], out: &mut String, bullet: &str) {
    for r in reports {
        if r.histogram.is_empty() {
            continue;
        }
        let _ = writeln!(out, "\nFailures for {} ({} of {}):", r.model_tag, r.results.len() - r.passed(), r.results.len());
        for (category, n) in &r.histogram {
            let _ = writeln!(out, "{bullet}{category}: {n}");
        }
    }
}

/// Plain-text table, one row per model.
pub fn render_table(reports: &[&RunReport]) -> String {
    let rates: Vec<String> = reports.iter().map(|r| format!("{:.1}", r.pass_rate)).collect();
    let w0 = reports.iter().map(|r| r.model_tag.len()).chain([HEADER[0].len()]).max().unwrap_or(0);
    let w1 = rates.iter().map(String::len).chain([HEADER[1].len()]).max().unwrap_or(0);
    let mut out = String::new();
    let _ = writeln!(out, "{:<w0$} | {:<w1$}", HEADER[0], HEADER[1]);
    let _ = writeln!(out, "{}-+-{}", "-".repeat(w0), "-".repeat(w1));
    for (r, rate) in reports.iter().zip(&rates) {
        let _ = writeln!(out, "{:<w0$} | {:<w1$}", r.model_tag, rate);
    }
    failure_lines(reports, &mut out, "  ");
    out
}

/// Markdown with a single table; failure breakdowns follow as lists.
pub fn render_markdown(reports: &[&RunReport]) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "| {} | {} |", HEADER[0], HEADER[1]);
    let _ = writeln!(out, "|---|---|");
    for r in reports {
        let _ = writeln!(out, "| {} | {:.1} |", r.model_tag, r.pass_rate);
    }
    failure_lines(reports, &mut out, "- ");
    out
}
