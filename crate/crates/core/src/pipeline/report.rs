use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::eval::MetricsReport;

/// Metrics carried into the comparison, in column order.
pub const REPORT_COLUMNS: [&str; 9] = [
    "accuracy", "acc_tail", "acc_head", "delta", "ai_k1", "ai_k3", "ci", "cs_k1", "cs_k4",
];

/// Percent-scale metrics drawn in the chart.
const CHART_METRICS: [(&str, usize); 3] = [("accuracy", 0), ("tail accuracy", 1), ("CS(1)", 7)];

fn columns(m: &MetricsReport) -> [Option<f64>; 9] {
    [
        Some(m.accuracy),
        m.acc_tail,
        m.acc_head,
        m.delta,
        m.ai.get(&1).copied(),
        m.ai.get(&3).copied(),
        Some(m.ci),
        m.cs.get(&1).copied(),
        m.cs.get(&4).copied(),
    ]
}

/// Mean metrics of every run sharing a label.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub label: String,
    pub runs: usize,
    pub values: [Option<f64>; 9],
}

/// Group runs by label, in first-appearance order, and average each metric
/// over the runs that report it.
pub fn aggregate(runs: &[(String, MetricsReport)]) -> Vec<ReportRow> {
    let mut labels: Vec<&str> = Vec::new();
    for (l, _) in runs {
        if !labels.contains(&l.as_str()) {
            labels.push(l);
        }
    }
    labels
        .into_iter()
        .map(|label| {
            let group: Vec<[Option<f64>; 9]> = runs.iter().filter(|(l, _)| l == label).map(|(_, m)| columns(m)).collect();
            let mut values = [None; 9];
            for (j, v) in values.iter_mut().enumerate() {
                let present: Vec<f64> = group.iter().filter_map(|c| c[j]).collect();
                if !present.is_empty() {
                    *v = Some(present.iter().sum::<f64>() / present.len() as f64);
                }
            }
            ReportRow {
                label: label.to_string(),
                runs: group.len(),
                values,
            }
        })
        .collect()
}

pub fn to_csv(rows: &[ReportRow]) -> String {
    let mut out = format!("label,runs,{}\n", REPORT_COLUMNS.join(","));
    for r in rows {
        let vals: Vec<String> = r.values.iter().map(|v| v.map_or_else(String::new, |x| format!("{x:.4}"))).collect();
        writeln!(out, "{},{},{}", r.label, r.runs, vals.join(",")).expect("writing to a string");
    }
    out
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

const PALETTE: [&str; 6] = ["#4c72b0", "#dd8452", "#55a868", "#c44e52", "#8172b3", "#937860"];

/// Grouped bar chart of the percent-scale metrics, one bar per label.
pub fn to_svg(rows: &[ReportRow]) -> String {
    let (bar, gap, left, top, height) = (28.0, 30.0, 50.0, 30.0, 220.0);
    let group_w = bar * rows.len().max(1) as f64 + gap;
    let width = left + group_w * CHART_METRICS.len() as f64 + 20.0;
    let legend_y = top + height + 45.0;
    let total_h = legend_y + 20.0 * rows.len() as f64 + 10.0;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0}" height="{total_h:.0}" font-family="sans-serif" font-size="11">"#
    );
    for tick in [0, 25, 50, 75, 100] {
        let y = top + height * (1.0 - tick as f64 / 100.0);
        let _ = writeln!(
            s,
            r##"<line x1="{left}" y1="{y:.1}" x2="{:.1}" y2="{y:.1}" stroke="#ddd"/><text x="{:.1}" y="{:.1}" text-anchor="end">{tick}</text>"##,
            width - 10.0,
            left - 6.0,
            y + 4.0
        );
    }
    for (g, (name, col)) in CHART_METRICS.iter().enumerate() {
        let x0 = left + gap / 2.0 + g as f64 * group_w;
        for (i, r) in rows.iter().enumerate() {
            let v = r.values[*col].unwrap_or(0.0).clamp(0.0, 100.0);
            let h = height * v / 100.0;
            let _ = writeln!(
                s,
                r#"<rect x="{:.1}" y="{:.1}" width="{:.1}" height="{h:.1}" fill="{}"><title>{}: {v:.2}</title></rect>"#,
                x0 + i as f64 * bar,
                top + height - h,
                bar - 2.0,
                PALETTE[i % PALETTE.len()],
                escape(&r.label)
            );
        }
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{name}</text>"#,
            x0 + bar * rows.len() as f64 / 2.0,
            top + height + 18.0
        );
    }
    for (i, r) in rows.iter().enumerate() {
        let y = legend_y + 20.0 * i as f64;
        let _ = writeln!(
            s,
            r#"<rect x="{left}" y="{:.1}" width="12" height="12" fill="{}"/><text x="{:.1}" y="{:.1}">{} (n={})</text>"#,
            y - 10.0,
            PALETTE[i % PALETTE.len()],
            left + 18.0,
            y,
            escape(&r.label),
            r.runs
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Read `<dir>/metrics.json` for every `(label, dir)` and write
/// `comparison.csv` and `comparison.svg` into `out`.
pub fn report(runs: &[(String, PathBuf)], out: &Path) -> Result<Vec<ReportRow>> {
    if runs.is_empty() {
        return Err(Error::Invalid("report needs at least one run".into()));
    }
    let loaded = runs
        .iter()
        .map(|(l, d)| MetricsReport::read(&d.join("metrics.json")).map(|m| (l.clone(), m)))
        .collect::<Result<Vec<_>>>()?;
    let rows = aggregate(&loaded);
    std::fs::create_dir_all(out)?;
    std::fs::write(out.join("comparison.csv"), to_csv(&rows))?;
    std::fs::write(out.join("comparison.svg"), to_svg(&rows))?;
    Ok(rows)
}
