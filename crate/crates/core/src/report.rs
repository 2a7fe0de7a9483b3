//! Evaluation reports and their JSON, CSV and SVG renderings.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::attacks::AttackKind;
use crate::corruption::{Category, Method};
use crate::error::{Error, Result};
use crate::gate::GatePolicy;
use crate::harness::TargetDescriptor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RowNote {
    /// Some items were lost to transport errors; the rate covers the rest.
    Partial,
    /// The gate rejected every generated image.
    GateExhausted,
    /// Every query for the row failed.
    TransportFailed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportMetadata {
    pub tool_version: String,
    pub seed: u64,
    pub policy: GatePolicy,
    pub target: TargetDescriptor,
    /// Oracle queries spent training the shadow model, if any.
    pub shadow_queries: u64,
    pub generated_unix_s: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CleanRow {
    pub n: usize,
    pub evaluated: usize,
    pub accuracy: f64,
    pub queries: u64,
    pub transport_failures: usize,
}

/// `n` counts clean-correct items; rates are over the `evaluated` subset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorruptionRow {
    pub method: Method,
    pub category: Category,
    /// 0 when the cell used an explicit parameter.
    pub severity: u8,
    pub param: f64,
    pub n: usize,
    pub evaluated: usize,
    pub accuracy: Option<f64>,
    pub escape_rate: Option<f64>,
    pub mean_psnr: Option<f64>,
    pub mean_ssim: Option<f64>,
    pub gate_pass_fraction: f64,
    pub queries: u64,
    pub transport_failures: usize,
    pub note: Option<RowNote>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackRow {
    pub kind: AttackKind,
    pub epsilon: f64,
    pub steps: usize,
    pub n: usize,
    pub evaluated: usize,
    pub escape_rate: Option<f64>,
    pub escape_stderr: Option<f64>,
    pub mean_psnr: Option<f64>,
    pub mean_ssim: Option<f64>,
    pub gate_pass_fraction: f64,
    pub queries: u64,
    pub max_queries_per_item: u32,
    pub transport_failures: usize,
    pub note: Option<RowNote>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DefenseRow {
    pub defense: String,
    pub method: Method,
    pub severity: u8,
    pub param: f64,
    pub n: usize,
    pub undefended_rate: f64,
    pub defended_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub metadata: ReportMetadata,
    pub clean: Option<CleanRow>,
    pub corruption_rows: Vec<CorruptionRow>,
    pub attack_rows: Vec<AttackRow>,
    pub defense_rows: Vec<DefenseRow>,
    pub total_queries: u64,
    /// True when any row lost items to transport errors.
    pub partial: bool,
}

fn unit(name: &str, v: f64) -> Result<()> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(Error::InvalidConfig(format!("{name} = {v} outside [0, 1]")))
    }
}

fn unit_opt(name: &str, v: Option<f64>) -> Result<()> {
    v.map_or(Ok(()), |v| unit(name, v))
}

fn positive(name: &str, n: usize) -> Result<()> {
    if n == 0 {
        return Err(Error::InvalidConfig(format!("{name} row with n = 0")));
    }
    Ok(())
}

impl EvaluationReport {
    /// Recomputes `total_queries` and `partial` from the rows.
    pub fn finalize(&mut self) {
        let clean_q = self.clean.as_ref().map_or(0, |c| c.queries);
        self.total_queries = clean_q
            + self.corruption_rows.iter().map(|r| r.queries).sum::<u64>()
            + self.attack_rows.iter().map(|r| r.queries).sum::<u64>();
        self.partial = self
            .clean
            .as_ref()
            .is_some_and(|c| c.transport_failures > 0)
            || self
                .corruption_rows
                .iter()
                .any(|r| r.transport_failures > 0)
            || self.attack_rows.iter().any(|r| r.transport_failures > 0);
    }

    pub fn row_count(&self) -> usize {
        usize::from(self.clean.is_some())
            + self.corruption_rows.len()
            + self.attack_rows.len()
            + self.defense_rows.len()
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(c) = &self.clean {
            positive("clean", c.n)?;
            unit("clean accuracy", c.accuracy)?;
        }
        for r in &self.corruption_rows {
            positive(r.method.name(), r.n)?;
            unit_opt("accuracy", r.accuracy)?;
            unit_opt("escape_rate", r.escape_rate)?;
            unit_opt("mean_ssim", r.mean_ssim.map(|s| s.max(0.0)))?;
            unit("gate_pass_fraction", r.gate_pass_fraction)?;
        }
        for r in &self.attack_rows {
            positive(&r.kind.to_string(), r.n)?;
            unit_opt("escape_rate", r.escape_rate)?;
            unit("gate_pass_fraction", r.gate_pass_fraction)?;
        }
        for r in &self.defense_rows {
            positive(&r.defense, r.n)?;
            unit("undefended_rate", r.undefended_rate)?;
            unit("defended_rate", r.defended_rate)?;
        }
        Ok(())
    }

    /// Copy with the timestamp removed, for reproducibility comparisons.
    pub fn without_timestamp(&self) -> Self {
        let mut r = self.clone();
        r.metadata.generated_unix_s = None;
        r
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let r: Self = serde_json::from_str(s)?;
        r.validate()?;
        Ok(r)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Json,
    Csv,
    Svg,
}

impl ReportFormat {
    pub fn extension(self) -> &'static str {
        match self {
            ReportFormat::Json => "json",
            ReportFormat::Csv => "csv",
            ReportFormat::Svg => "svg",
        }
    }
}

pub const CSV_HEADER: [&str; 18] = [
    "section",
    "name",
    "category",
    "severity",
    "param",
    "steps",
    "n",
    "evaluated",
    "accuracy",
    "escape_rate",
    "mean_psnr",
    "mean_ssim",
    "gate_pass_fraction",
    "queries",
    "transport_failures",
    "undefended_rate",
    "defended_rate",
    "note",
];

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |v| v.to_string())
}

fn note(n: Option<RowNote>) -> String {
    match n {
        None => String::new(),
        Some(n) => serde_json::to_value(n)
            .ok()
            .and_then(|v| v.as_str().map(str::to_string))
            .unwrap_or_default(),
    }
}

pub fn render_csv(report: &EvaluationReport) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| Error::Format(e.to_string());
    w.write_record(CSV_HEADER).map_err(csv_err)?;
    let s = |v: &dyn ToString| v.to_string();
    if let Some(c) = &report.clean {
        w.write_record([
            "clean".into(),
            "clean".into(),
            String::new(),
            String::new(),
            String::new(),
            String::new(),
            s(&c.n),
            s(&c.evaluated),
            s(&c.accuracy),
            String::new(),
            String::new(),
            String::new(),
            String::new(),
            s(&c.queries),
            s(&c.transport_failures),
            String::new(),
            String::new(),
            String::new(),
        ])
        .map_err(csv_err)?;
    }
    for r in &report.corruption_rows {
        let category = serde_json::to_value(r.category)?;
        w.write_record([
            "corruption".into(),
            r.method.name().to_string(),
            category.as_str().unwrap_or_default().to_string(),
            s(&r.severity),
            s(&r.param),
            String::new(),
            s(&r.n),
            s(&r.evaluated),
            opt(r.accuracy),
            opt(r.escape_rate),
            opt(r.mean_psnr),
            opt(r.mean_ssim),
            s(&r.gate_pass_fraction),
            s(&r.queries),
            s(&r.transport_failures),
            String::new(),
            String::new(),
            note(r.note),
        ])
        .map_err(csv_err)?;
    }
    for r in &report.attack_rows {
        w.write_record([
            "attack".into(),
            r.kind.to_string(),
            String::new(),
            String::new(),
            s(&r.epsilon),
            s(&r.steps),
            s(&r.n),
            s(&r.evaluated),
            String::new(),
            opt(r.escape_rate),
            opt(r.mean_psnr),
            opt(r.mean_ssim),
            s(&r.gate_pass_fraction),
            s(&r.queries),
            s(&r.transport_failures),
            String::new(),
            String::new(),
            note(r.note),
        ])
        .map_err(csv_err)?;
    }
    for r in &report.defense_rows {
        w.write_record([
            "defense".into(),
            format!("{}:{}", r.defense, r.method.name()),
            String::new(),
            s(&r.severity),
            s(&r.param),
            String::new(),
            s(&r.n),
            String::new(),
            String::new(),
            String::new(),
            String::new(),
            String::new(),
            String::new(),
            String::new(),
            String::new(),
            s(&r.undefended_rate),
            s(&r.defended_rate),
            String::new(),
        ])
        .map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Format(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Format(e.to_string()))
}

struct BarGroup {
    name: String,
    bars: Vec<(String, Option<f64>)>,
}

fn bar_groups(report: &EvaluationReport) -> Vec<BarGroup> {
    let mut groups: Vec<BarGroup> = Vec::new();
    let mut push = |name: String, label: String, v: Option<f64>| match groups
        .iter_mut()
        .find(|g| g.name == name)
    {
        Some(g) => g.bars.push((label, v)),
        None => groups.push(BarGroup {
            name,
            bars: vec![(label, v)],
        }),
    };
    if let Some(c) = &report.clean {
        push("clean".into(), "clean".into(), Some(c.accuracy));
    }
    for r in &report.corruption_rows {
        push(
            r.method.name().into(),
            format!("s{}", r.severity),
            r.accuracy,
        );
    }
    for r in &report.attack_rows {
        push(
            r.kind.to_string(),
            format!("eps {}", r.epsilon),
            r.escape_rate,
        );
    }
    for r in &report.defense_rows {
        push(
            format!("{}:{}", r.defense, r.method.name()),
            "undefended".into(),
            Some(r.undefended_rate),
        );
        push(
            format!("{}:{}", r.defense, r.method.name()),
            "defended".into(),
            Some(r.defended_rate),
        );
    }
    groups
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// Bar chart with one `<g class="bar-group">` per method (or attack kind).
/// Bars show accuracy for corruption rows and escape rate for attack rows.
pub fn render_svg(report: &EvaluationReport) -> String {
    const BAR_W: f64 = 12.0;
    const GAP: f64 = 18.0;
    const PLOT_H: f64 = 160.0;
    const TOP: f64 = 20.0;
    let groups = bar_groups(report);
    let width = 40.0
        + groups
            .iter()
            .map(|g| g.bars.len() as f64 * BAR_W + GAP)
            .sum::<f64>();
    let height = TOP + PLOT_H + 90.0;
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">"#
    );
    let _ = writeln!(
        out,
        r##"<line x1="30" y1="{y}" x2="{width}" y2="{y}" stroke="#333"/>"##,
        y = TOP + PLOT_H
    );
    let mut x = 40.0;
    for g in &groups {
        let name = xml_escape(&g.name);
        let _ = writeln!(out, r#"<g class="bar-group" data-name="{name}">"#);
        for (label, v) in &g.bars {
            let h = v.unwrap_or(0.0) * PLOT_H;
            let fill = if v.is_some() { "#4a78b5" } else { "#cccccc" };
            let value = v.map_or_else(|| "empty".to_string(), |v| format!("{v:.3}"));
            let _ = writeln!(
                out,
                r#"<rect x="{x}" y="{y}" width="{w}" height="{h}" fill="{fill}"><title>{label}: {value}</title></rect>"#,
                y = TOP + PLOT_H - h,
                w = BAR_W - 2.0,
                label = xml_escape(label),
            );
            x += BAR_W;
        }
        let _ = writeln!(
            out,
            r#"<text x="{tx}" y="{ty}" font-size="9" transform="rotate(60 {tx} {ty})">{name}</text>"#,
            tx = x - BAR_W * g.bars.len() as f64,
            ty = TOP + PLOT_H + 10.0,
        );
        out.push_str("</g>\n");
        x += GAP;
    }
    out.push_str("</svg>\n");
    out
}

pub fn render(report: &EvaluationReport, format: ReportFormat) -> Result<String> {
    match format {
        ReportFormat::Json => report.to_json(),
        ReportFormat::Csv => render_csv(report),
        ReportFormat::Svg => Ok(render_svg(report)),
    }
}

pub fn emit_report(report: &EvaluationReport, format: ReportFormat, path: &Path) -> Result<()> {
    report.validate()?;
    let text = render(report, format)?;
    fs::write(path, text).map_err(|source| Error::Write {
        path: path.to_path_buf(),
        source,
    })
}
