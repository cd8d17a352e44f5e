use std::fmt::Write;
use std::str::FromStr;

use super::{Report, ReportError};
use crate::domain::format_number;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RenderFormat {
    Json,
    Text,
    Html,
}

impl FromStr for RenderFormat {
    type Err = ReportError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "json" => Ok(RenderFormat::Json),
            "text" | "txt" => Ok(RenderFormat::Text),
            "html" => Ok(RenderFormat::Html),
            _ => Err(ReportError::UnknownFormat(s.to_string())),
        }
    }
}

pub fn render(report: &Report, format: RenderFormat) -> Vec<u8> {
    match format {
        RenderFormat::Json => {
            let mut out = serde_json::to_vec_pretty(report).expect("report serializes");
            out.push(b'\n');
            out
        }
        RenderFormat::Text => render_text(report).into_bytes(),
        RenderFormat::Html => render_html(report).into_bytes(),
    }
}

pub fn parse_report(bytes: &[u8]) -> Result<Report, ReportError> {
    serde_json::from_slice(bytes).map_err(|e| ReportError::Parse(e.to_string()))
}

fn metric_cells(report: &Report) -> Vec<[String; 3]> {
    report
        .metrics
        .rows
        .iter()
        .map(|r| {
            let value = match &r.context {
                Some(ctx) => format!("{} ({ctx})", r.value),
                None => r.value.to_string(),
            };
            [r.attribute.clone(), value, r.unit.clone()]
        })
        .collect()
}

fn render_text(r: &Report) -> String {
    let mut s = String::new();
    let p = &r.patient;
    let _ = writeln!(s, "END-OF-STUDY REPORT");
    let _ = writeln!(s, "Patient: {}", p.patient_id);
    let _ = writeln!(s, "Gender: {}", p.gender);
    let _ = writeln!(s, "Age: {} years", p.age_years);
    let _ = writeln!(s, "Monitoring period: {} hours", format_number(p.monitoring_hours));
    let _ = writeln!(s, "State: {}", r.meta.state);

    let _ = writeln!(s, "\nMetrics");
    for [a, v, u] in metric_cells(r) {
        let _ = writeln!(s, "  {a:<28} {v:>10} {u}");
    }

    let _ = writeln!(s, "\nTracings");
    for (i, t) in r.tracings.iter().enumerate() {
        let _ = writeln!(
            s,
            "  Tracing {} [{}] {} ({} s)",
            i + 1,
            t.content_id(),
            t.caption,
            format_number(t.duration_seconds)
        );
    }

    let _ = writeln!(s, "\nFindings");
    for f in &r.findings {
        let _ = writeln!(s, "- [{}] {}", f.id, f.statement);
    }

    let _ = writeln!(s, "\nInterpretation");
    for i in &r.interpretation {
        if i.supports.is_empty() {
            let _ = writeln!(s, "- [{}] {}", i.id, i.statement);
        } else {
            let _ = writeln!(s, "- [{}] {} (supported by {})", i.id, i.statement, i.supports.join(", "));
        }
    }

    if !r.violations.is_empty() {
        let _ = writeln!(s, "\nFact-check notes");
        for v in &r.violations {
            let _ = writeln!(
                s,
                "  {} {:?} {} findings [{}] interpretation [{}]",
                v.rule_id.as_deref().unwrap_or("-"),
                v.kind,
                v.tag,
                v.finding_refs.join(", "),
                v.interpretation_refs.join(", ")
            );
        }
    }

    let _ = writeln!(s, "\nReview");
    let _ = writeln!(s, "  Status: {}", r.review.status);
    let _ = writeln!(s, "  Edits: {}", r.review.edits.len());
    let _ = writeln!(s, "  Reviewer: {}", r.review.reviewer_id.as_deref().unwrap_or("-"));
    let _ = writeln!(s, "  Reviewed at: {}", r.review.reviewed_at.as_deref().unwrap_or("-"));
    s
}

fn esc(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&#39;"),
            c => out.push(c),
        }
    }
    out
}

fn render_html(r: &Report) -> String {
    let mut s = String::new();
    let p = &r.patient;
    let _ = writeln!(s, "<!DOCTYPE html>\n<html lang=\"en\">\n<head><meta charset=\"utf-8\"><title>Report {}</title></head>\n<body>", esc(&p.patient_id));
    let _ = writeln!(s, "<header id=\"section-header\">\n<h1>End-of-study report</h1>\n<dl>");
    for (k, v) in [
        ("Patient", p.patient_id.clone()),
        ("Gender", p.gender.to_string()),
        ("Age", format!("{} years", p.age_years)),
        ("Monitoring period", format!("{} hours", format_number(p.monitoring_hours))),
        ("State", r.meta.state.to_string()),
    ] {
        let _ = writeln!(s, "<dt>{k}</dt><dd>{}</dd>", esc(&v));
    }
    let _ = writeln!(s, "</dl>\n</header>");

    let _ = writeln!(s, "<section id=\"section-metrics\">\n<h2>Metrics</h2>\n<table>\n<tr><th>Attribute</th><th>Value</th><th>Unit</th></tr>");
    for [a, v, u] in metric_cells(r) {
        let _ = writeln!(s, "<tr><td>{}</td><td>{}</td><td>{}</td></tr>", esc(&a), esc(&v), esc(&u));
    }
    let _ = writeln!(s, "</table>\n</section>");

    let _ = writeln!(s, "<section id=\"section-tracings\">\n<h2>Tracings</h2>");
    for (i, t) in r.tracings.iter().enumerate() {
        let hash = t.content_id().trim_start_matches("sha256:");
        let _ = writeln!(
            s,
            "<figure id=\"tracing-{}\"><img src=\"/v1/images/{}\" alt=\"{}\"><figcaption>{} ({} s)</figcaption></figure>",
            i + 1,
            esc(hash),
            esc(&t.caption),
            esc(&t.caption),
            format_number(t.duration_seconds)
        );
    }
    let _ = writeln!(s, "</section>");

    let _ = writeln!(s, "<section id=\"section-findings\">\n<h2>Findings</h2>\n<ul>");
    for f in &r.findings {
        let _ = writeln!(s, "<li id=\"finding-{}\" data-modality=\"{:?}\">{}</li>", esc(&f.id), f.source_modality, esc(&f.statement));
    }
    let _ = writeln!(s, "</ul>\n</section>");

    let _ = writeln!(s, "<section id=\"section-interpretation\">\n<h2>Interpretation</h2>\n<ul>");
    for i in &r.interpretation {
        let supports = i
            .supports
            .iter()
            .map(|f| format!("<a href=\"#finding-{0}\">{0}</a>", esc(f)))
            .collect::<Vec<_>>()
            .join(", ");
        let _ = writeln!(s, "<li id=\"interpretation-{}\">{} <span class=\"supports\">[{}]</span></li>", esc(&i.id), esc(&i.statement), supports);
    }
    let _ = writeln!(s, "</ul>\n</section>");

    if !r.violations.is_empty() {
        let _ = writeln!(s, "<section id=\"section-violations\">\n<h2>Fact-check notes</h2>\n<ul>");
        for v in &r.violations {
            let _ = writeln!(
                s,
                "<li class=\"{:?}\">{} {} [{}]</li>",
                v.severity,
                esc(v.rule_id.as_deref().unwrap_or("-")),
                esc(&v.tag),
                esc(&v.finding_refs.join(", "))
            );
        }
        let _ = writeln!(s, "</ul>\n</section>");
    }

    let _ = writeln!(
        s,
        "<footer id=\"section-signature\">\n<p>Status: <span id=\"review-status\">{}</span></p>\n<p>Reviewer: {}</p>\n<p>Reviewed at: {}</p>\n</footer>\n</body>\n</html>",
        r.review.status,
        esc(r.review.reviewer_id.as_deref().unwrap_or("-")),
        esc(r.review.reviewed_at.as_deref().unwrap_or("-"))
    );
    s
}
