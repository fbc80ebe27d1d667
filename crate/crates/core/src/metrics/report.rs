use serde::{Deserialize, Serialize};

/// One line of a results table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub backbone: String,
    pub pretrained: String,
    pub f1: f64,
}

impl ReportRow {
    pub fn new(backbone: &str, pretrained: &str, f1: f64) -> Self {
        ReportRow {
            backbone: backbone.into(),
            pretrained: pretrained.into(),
            f1,
        }
    }
}

/// Published Aff-Wild2 validation macro F1 for the reference backbones.
pub fn published_rows() -> Vec<ReportRow> {
    vec![
        ReportRow::new("IR-50", "Sup. MS1M", 30.78),
        ReportRow::new("APViT", "Sup. MS1M", 35.48),
        ReportRow::new("APViT", "Sup. RAF-DB", 35.63),
        ReportRow::new("Res-18", "ContraWarping", 33.69),
        ReportRow::new("Res-50", "ContraWarping", 37.57),
    ]
}

const HEADERS: [&str; 3] = ["Backbone", "Pre-trained", "F1-score"];

/// Aligned plain-text table, F1 to two decimals, row order preserved.
pub fn make_report(rows: &[ReportRow]) -> String {
    let cells: Vec<[String; 3]> = rows
        .iter()
        .map(|r| [r.backbone.clone(), r.pretrained.clone(), format!("{:.2}", r.f1)])
        .collect();
    let mut widths = HEADERS.map(str::len);
    for row in &cells {
        for (w, c) in widths.iter_mut().zip(row) {
            *w = (*w).max(c.chars().count());
        }
    }
    let mut out = format!(
        "{:<w0$} | {:<w1$} | {:>w2$}\n",
        HEADERS[0],
        HEADERS[1],
        HEADERS[2],
        w0 = widths[0],
        w1 = widths[1],
        w2 = widths[2]
    );
    out.push_str(&format!(
        "{}-+-{}-+-{}\n",
        "-".repeat(widths[0]),
        "-".repeat(widths[1]),
        "-".repeat(widths[2])
    ));
    for [b, p, f] in &cells {
        out.push_str(&format!(
            "{b:<w0$} | {p:<w1$} | {f:>w2$}\n",
            w0 = widths[0],
            w1 = widths[1],
            w2 = widths[2]
        ));
    }
    out
}

pub fn make_report_csv(rows: &[ReportRow]) -> String {
    let quote = |s: &str| {
        if s.contains([',', '"', '\n']) {
            format!("\"{}\"", s.replace('"', "\"\""))
        } else {
            s.to_string()
        }
    };
    let mut out = HEADERS.join(",") + "\n";
    for r in rows {
        out.push_str(&format!("{},{},{:.2}\n", quote(&r.backbone), quote(&r.pretrained), r.f1));
    }
    out
}
