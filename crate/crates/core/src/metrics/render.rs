use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use super::report::MetricReport;
use super::MetricsError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Markdown,
    SvgBars,
}

impl ReportFormat {
    pub fn extension(self) -> &'static str {
        match self {
            ReportFormat::Csv => "csv",
            ReportFormat::Markdown => "md",
            ReportFormat::SvgBars => "svg",
        }
    }
}

impl FromStr for ReportFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(ReportFormat::Csv),
            "markdown" | "md" => Ok(ReportFormat::Markdown),
            "svg" | "svg_bars" => Ok(ReportFormat::SvgBars),
            other => Err(format!("unknown report format '{other}' (csv, markdown, svg_bars)")),
        }
    }
}

fn f4(x: f64) -> String {
    format!("{x:.4}")
}

fn opt4(x: Option<f64>) -> String {
    x.map_or_else(|| "n/a".to_string(), f4)
}

fn column_label(r: &MetricReport) -> String {
    format!("{} / {} / {}", r.model_id, r.dataset, r.condition)
}

const CSV_HEADER: &str = "model,dataset,condition,family,precision,recall,f1,pr_t,pr_f,co_t,co_f,accuracy,kld,ssd_rate,lucky_rate,pure_skill,abstained";

fn csv(reports: &[MetricReport]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in reports {
        for (family, s) in [("answer", &r.answer), ("distractor", &r.distractor)] {
            let c = &r.counts;
            let _ = writeln!(
                out,
                "{},{},{},{family},{},{},{},{},{},{},{},{},{},{},{},{},{}",
                r.model_id,
                r.dataset,
                r.condition,
                f4(s.precision),
                f4(s.recall),
                f4(s.f1),
                c.pr_t,
                c.pr_f,
                c.co_t,
                c.co_f,
                f4(r.accuracy),
                f4(r.kld),
                opt4(r.ssd_rate),
                opt4(r.lucky_rate),
                opt4(r.pure_skill),
                r.abstained,
            );
        }
    }
    out
}

type Row = (&'static str, fn(&MetricReport) -> String);

fn markdown(reports: &[MetricReport]) -> String {
    let mut out = String::from("| Metric |");
    for r in reports {
        let _ = write!(out, " {} |", column_label(r));
    }
    out.push_str("\n|---|");
    out.push_str(&"---:|".repeat(reports.len()));
    out.push('\n');
    let rows: [Row; 16] = [
        ("Pr-T", |r| r.counts.pr_t.to_string()),
        ("Pr-F", |r| r.counts.pr_f.to_string()),
        ("Co-T", |r| r.counts.co_t.to_string()),
        ("Co-F", |r| r.counts.co_f.to_string()),
        ("AP", |r| f4(r.answer.precision)),
        ("AR", |r| f4(r.answer.recall)),
        ("AF1", |r| f4(r.answer.f1)),
        ("DP", |r| f4(r.distractor.precision)),
        ("DR", |r| f4(r.distractor.recall)),
        ("DF1", |r| f4(r.distractor.f1)),
        ("Accuracy", |r| f4(r.accuracy)),
        ("KLD (nats)", |r| f4(r.kld)),
        ("SSD rate", |r| opt4(r.ssd_rate)),
        ("Lucky rate", |r| opt4(r.lucky_rate)),
        ("Pure skill", |r| opt4(r.pure_skill)),
        ("Abstained", |r| r.abstained.to_string()),
    ];
    for (name, cell) in rows {
        let _ = write!(out, "| {name} |");
        for r in reports {
            let _ = write!(out, " {} |", cell(r));
        }
        out.push('\n');
    }
    out
}

const BAR_W: f64 = 24.0;
const BAR_GAP: f64 = 6.0;
const GROUP_GAP: f64 = 30.0;
const PLOT_H: f64 = 160.0;
const MARGIN: f64 = 40.0;

fn svg(reports: &[MetricReport]) -> String {
    let group_w = |r: &MetricReport| r.selection_rates.len() as f64 * (BAR_W + BAR_GAP);
    let width = MARGIN * 2.0
        + reports.iter().map(group_w).sum::<f64>()
        + GROUP_GAP * reports.len().saturating_sub(1) as f64;
    let height = PLOT_H + MARGIN * 2.0 + 20.0;
    let base_y = MARGIN + PLOT_H;
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0}" height="{height:.0}" font-family="sans-serif" font-size="10">"#
    );
    let _ = writeln!(
        out,
        r#"<line x1="{MARGIN}" y1="{base_y}" x2="{:.1}" y2="{base_y}" stroke="black"/>"#,
        width - MARGIN
    );
    let mut x = MARGIN;
    for r in reports {
        let _ = writeln!(out, r#"<g class="condition" data-condition="{}">"#, r.condition);
        for (slot, rate) in r.selection_rates.iter().enumerate() {
            let h = rate * PLOT_H;
            let _ = writeln!(
                out,
                r#"<rect x="{x:.1}" y="{:.3}" width="{BAR_W}" height="{h:.3}" fill="steelblue"><title>slot {} {:.4}</title></rect>"#,
                base_y - h,
                slot + 1,
                rate
            );
            let _ = writeln!(
                out,
                r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
                x + BAR_W / 2.0,
                base_y + 12.0,
                slot + 1
            );
            x += BAR_W + BAR_GAP;
        }
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
            x - group_w(r) / 2.0,
            base_y + 28.0,
            r.condition
        );
        out.push_str("</g>\n");
        x += GROUP_GAP;
    }
    out.push_str("</svg>\n");
    out
}

/// Render reports as CSV (two rows per report, one per metric family),
/// a Markdown table with one column per report, or an SVG bar chart of
/// selection rates.
pub fn render_report(reports: &[MetricReport], format: ReportFormat) -> Result<String, MetricsError> {
    if reports.is_empty() {
        return Err(MetricsError::EmptyRun);
    }
    Ok(match format {
        ReportFormat::Csv => csv(reports),
        ReportFormat::Markdown => markdown(reports),
        ReportFormat::SvgBars => svg(reports),
    })
}

pub fn write_report(reports: &[MetricReport], format: ReportFormat, path: &Path) -> Result<(), MetricsError> {
    let text = render_report(reports, format)?;
    let io = |source| MetricsError::Io {
        path: path.to_path_buf(),
        source,
    };
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(io)?;
    }
    std::fs::write(path, text).map_err(io)
}

/// AF1, lucky rate and pure skill, one row per report.
pub fn render_pure_skill_table(reports: &[MetricReport]) -> String {
    let mut out = String::from("| Condition | AF1 | Lucky rate | Pure skill |\n|---|---:|---:|---:|\n");
    for r in reports {
        let _ = writeln!(
            out,
            "| {} | {} | {} | {} |",
            column_label(r),
            f4(r.answer.f1),
            opt4(r.lucky_rate),
            opt4(r.pure_skill)
        );
    }
    out
}
