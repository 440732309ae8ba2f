use std::collections::BTreeMap;
use std::fmt::Write;

use crate::analyzer::BreakdownRow;

const BAR_WIDTH: f64 = 60.0;
const BAR_GAP: f64 = 40.0;
const CHART_HEIGHT: f64 = 300.0;
const MARGIN: f64 = 40.0;
const LEGEND_WIDTH: f64 = 320.0;
const LEGEND_ROW: f64 = 18.0;

const PALETTE: &[&str] = &[
    "#4e79a7", "#f28e2b", "#e15759", "#76b7b2", "#59a14f", "#edc948", "#b07aa1", "#ff9da7", "#9c755f", "#bab0ac",
    "#1f77b4", "#aec7e8", "#ffbb78", "#98df8a", "#c5b0d5", "#c49c94",
];

pub(crate) fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&#39;"),
            _ => out.push(c),
        }
    }
    out
}

/// Rows drawn for one bar: those on the group's shallowest depth.
fn bar_rows(rows: &[BreakdownRow]) -> Vec<&BreakdownRow> {
    let Some(depth) = rows.iter().map(|r| r.depth).min() else {
        return Vec::new();
    };
    rows.iter().filter(|r| r.depth == depth && r.share > 0.0).collect()
}

/// Stacked-bar chart, one bar per group, one segment per function.
pub fn render_breakdown(groups: &[(String, Vec<BreakdownRow>)]) -> String {
    // legend order: total share across groups, descending, then name
    let mut weight: BTreeMap<&str, f64> = BTreeMap::new();
    for (_, rows) in groups {
        for r in bar_rows(rows) {
            *weight.entry(&r.name).or_insert(0.0) += r.share;
        }
    }
    let mut legend: Vec<(&str, f64)> = weight.into_iter().collect();
    legend.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    let color: BTreeMap<&str, &str> = legend
        .iter()
        .enumerate()
        .map(|(i, (n, _))| (*n, PALETTE[i % PALETTE.len()]))
        .collect();

    let bars_width = groups.len() as f64 * (BAR_WIDTH + BAR_GAP);
    let width = MARGIN * 2.0 + bars_width + LEGEND_WIDTH;
    let height = (MARGIN * 2.0 + CHART_HEIGHT + 40.0).max(MARGIN * 2.0 + legend.len() as f64 * LEGEND_ROW);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0}" height="{height:.0}" viewBox="0 0 {width:.0} {height:.0}" font-family="sans-serif" font-size="11">"#
    );
    let base = MARGIN + CHART_HEIGHT;
    let _ = writeln!(
        s,
        r##"<line x1="{MARGIN}" y1="{base}" x2="{:.2}" y2="{base}" stroke="#333"/>"##,
        MARGIN + bars_width
    );
    for (i, (label, rows)) in groups.iter().enumerate() {
        let x = MARGIN + BAR_GAP / 2.0 + i as f64 * (BAR_WIDTH + BAR_GAP);
        let mut y = base;
        for r in bar_rows(rows) {
            let h = (r.share.min(1.0) * CHART_HEIGHT).min(y - MARGIN);
            y -= h;
            let _ = writeln!(
                s,
                r#"<rect x="{x:.2}" y="{y:.2}" width="{BAR_WIDTH:.2}" height="{h:.2}" fill="{}"><title>{} {:.2}%</title></rect>"#,
                color[r.name.as_str()],
                escape(&r.name),
                r.share * 100.0
            );
        }
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            x + BAR_WIDTH / 2.0,
            base + 16.0,
            escape(label)
        );
    }
    let lx = MARGIN * 1.5 + bars_width;
    for (i, (name, _)) in legend.iter().enumerate() {
        let ly = MARGIN + i as f64 * LEGEND_ROW;
        let _ = writeln!(
            s,
            r#"<rect x="{lx:.2}" y="{ly:.2}" width="12" height="12" fill="{}"/><text x="{:.2}" y="{:.2}">{}</text>"#,
            color[name],
            lx + 18.0,
            ly + 10.0,
            escape(name)
        );
    }
    s.push_str("</svg>\n");
    s
}
