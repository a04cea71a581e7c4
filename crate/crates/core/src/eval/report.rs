use std::fmt::Write as _;
use std::str::FromStr;

use super::{EvalError, EvaluationReport};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Text,
    Csv,
    Markdown,
}

impl ReportFormat {
    pub const ALL: [ReportFormat; 3] = [ReportFormat::Text, ReportFormat::Csv, ReportFormat::Markdown];

    pub fn extension(self) -> &'static str {
        match self {
            ReportFormat::Text => "txt",
            ReportFormat::Csv => "csv",
            ReportFormat::Markdown => "md",
        }
    }
}

impl FromStr for ReportFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "text" | "txt" => Ok(ReportFormat::Text),
            "csv" => Ok(ReportFormat::Csv),
            "markdown" | "md" => Ok(ReportFormat::Markdown),
            other => Err(format!("unknown report format `{other}`; expected text, csv or markdown")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ReportOptions {
    pub format: ReportFormat,
    /// Section rows per backend group, e.g. reasoning and non-reasoning.
    pub grouped: bool,
}

impl Default for ReportOptions {
    fn default() -> Self {
        Self { format: ReportFormat::Text, grouped: true }
    }
}

const HEADERS: [&str; 7] = [
    "LLM",
    "Correct Product Composition",
    "Hallucinated Products",
    "Correct Total Cost",
    "Correct Duration",
    "Baseline Achievement",
    "Total Dialogue Time (min)",
];

fn cells(r: &EvaluationReport) -> [String; 7] {
    [
        r.backend_name.clone(),
        format!("{} ({}%)", r.composition_correct, r.composition_percent()),
        r.hallucinated_products.to_string(),
        r.cost_accuracy.to_string(),
        r.duration_accuracy.to_string(),
        r.baseline_achievement.to_string(),
        r.dialogue_time_min.map_or_else(|| "-".to_owned(), |m| m.to_string()),
    ]
}

fn group_title(group: Option<&str>) -> String {
    let Some(g) = group.filter(|g| !g.is_empty()) else {
        return "Other Models".into();
    };
    let spaced = g.replace(['-', '_'], " ");
    let titled: Vec<String> = spaced
        .split(' ')
        .map(|w| {
            let mut c = w.chars();
            c.next().map(|f| f.to_uppercase().chain(c).collect()).unwrap_or_default()
        })
        .collect();
    format!("{} Models", titled.join("-"))
}

/// Rows in input order, split into sections by first appearance of each group.
fn sections(reports: &[EvaluationReport], grouped: bool) -> Vec<(Option<String>, Vec<&EvaluationReport>)> {
    if !grouped || reports.iter().all(|r| r.group.is_none()) {
        return vec![(None, reports.iter().collect())];
    }
    let mut out: Vec<(Option<String>, Vec<&EvaluationReport>)> = Vec::new();
    for r in reports {
        let title = group_title(r.group.as_deref());
        match out.iter_mut().find(|(t, _)| t.as_deref() == Some(title.as_str())) {
            Some((_, rows)) => rows.push(r),
            None => out.push((Some(title), vec![r])),
        }
    }
    out
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_owned()
    }
}

fn text(reports: &[EvaluationReport], grouped: bool) -> String {
    let mut widths: Vec<usize> = HEADERS.iter().map(|h| h.chars().count()).collect();
    let sects = sections(reports, grouped);
    for (title, rows) in &sects {
        if let Some(t) = title {
            widths[0] = widths[0].max(t.chars().count());
        }
        for r in rows {
            for (w, c) in widths.iter_mut().zip(cells(r)) {
                *w = (*w).max(c.chars().count());
            }
        }
    }
    let line = |cols: &[String]| {
        let padded: Vec<String> = cols.iter().zip(&widths).map(|(c, w)| format!("{c:<w$}")).collect();
        padded.join("  ").trim_end().to_owned()
    };
    let mut out = String::new();
    let header: Vec<String> = HEADERS.iter().map(|h| (*h).to_owned()).collect();
    out.push_str(&line(&header));
    out.push('\n');
    out.push_str(&widths.iter().map(|w| "-".repeat(*w)).collect::<Vec<_>>().join("  "));
    out.push('\n');
    for (title, rows) in sects {
        if let Some(t) = title {
            out.push_str(&t);
            out.push('\n');
        }
        for r in rows {
            out.push_str(&line(&cells(r)));
            out.push('\n');
        }
    }
    out
}

fn csv(reports: &[EvaluationReport]) -> String {
    let mut out = String::from(
        "backend,group,compositionCorrect,compositionPercent,hallucinatedProducts,costAccuracy,durationAccuracy,baselineAchievement,dialogueTimeMin,failureCause\n",
    );
    for r in reports {
        let fields = [
            csv_field(&r.backend_name),
            csv_field(r.group.as_deref().unwrap_or_default()),
            r.composition_correct.to_string(),
            r.composition_percent().to_string(),
            r.hallucinated_products.to_string(),
            r.cost_accuracy.to_string(),
            r.duration_accuracy.to_string(),
            r.baseline_achievement.to_string(),
            r.dialogue_time_min.map(|m| m.to_string()).unwrap_or_default(),
            r.failure_cause.map(|c| format!("{c:?}")).unwrap_or_default(),
        ];
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    out
}

fn markdown(reports: &[EvaluationReport], grouped: bool) -> String {
    let esc = |s: &str| s.replace('|', "\\|");
    let mut out = String::new();
    let _ = writeln!(out, "| {} |", HEADERS.join(" | "));
    let _ = writeln!(out, "|{}", "---|".repeat(HEADERS.len()));
    for (title, rows) in sections(reports, grouped) {
        if let Some(t) = title {
            let _ = writeln!(out, "| **{}** |{}", esc(&t), " |".repeat(HEADERS.len() - 1));
        }
        for r in rows {
            let c: Vec<String> = cells(r).iter().map(|c| esc(c)).collect();
            let _ = writeln!(out, "| {} |", c.join(" | "));
        }
    }
    out
}

/// Renders reports as one table. Row order follows the input.
pub fn emit_report(reports: &[EvaluationReport], opts: ReportOptions) -> Result<String, EvalError> {
    if reports.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    Ok(match opts.format {
        ReportFormat::Text => text(reports, opts.grouped),
        ReportFormat::Csv => csv(reports),
        ReportFormat::Markdown => markdown(reports, opts.grouped),
    })
}
