use std::fmt::Write as _;

use ldst_dst_metrics::{EvalReport, SensitivitySummary};

/// Per-turn JGA table: one row per (series, turn, jga, n). The table is the
/// contract; the SVG beside it is best-effort.
pub fn per_turn_table(reports: &[(String, &EvalReport)]) -> String {
    let mut out = String::from("series\tturn\tjga\tn\n");
    for (name, report) in reports {
        for entry in &report.per_turn_jga {
            let _ = writeln!(out, "{name}\t{}\t{}\t{}", entry.turn, entry.jga, entry.n);
        }
    }
    out
}

/// Line chart of JGA over turn position, one polyline per report.
pub fn per_turn_svg(reports: &[(String, &EvalReport)]) -> String {
    const W: f64 = 640.0;
    const H: f64 = 400.0;
    const MARGIN: f64 = 50.0;
    let max_turn = reports
        .iter()
        .flat_map(|(_, r)| r.per_turn_jga.iter().map(|e| e.turn))
        .max()
        .unwrap_or(1)
        .max(1);
    let x = |turn: usize| MARGIN + (turn - 1) as f64 / (max_turn.max(2) - 1) as f64 * (W - 2.0 * MARGIN);
    let y = |jga: f64| H - MARGIN - jga * (H - 2.0 * MARGIN);
    let palette = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b"];

    let mut svg = format!(
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#
    );
    svg.push_str(&format!(
        r#"<rect width="{W}" height="{H}" fill="white"/>
<line x1="{m}" y1="{ybot}" x2="{xr}" y2="{ybot}" stroke="black"/>
<line x1="{m}" y1="{m}" x2="{m}" y2="{ybot}" stroke="black"/>
<text x="{xc}" y="{yl}" text-anchor="middle" font-size="13">turn</text>
<text x="14" y="{yc}" text-anchor="middle" font-size="13" transform="rotate(-90 14 {yc})">joint goal accuracy</text>"#,
        m = MARGIN,
        ybot = H - MARGIN,
        xr = W - MARGIN,
        xc = W / 2.0,
        yl = H - 12.0,
        yc = H / 2.0,
    ));
    for tick in 0..=5 {
        let value = tick as f64 / 5.0;
        svg.push_str(&format!(
            r#"<text x="{}" y="{}" text-anchor="end" font-size="11">{value:.1}</text>"#,
            MARGIN - 6.0,
            y(value) + 4.0
        ));
    }
    for (i, (name, report)) in reports.iter().enumerate() {
        let color = palette[i % palette.len()];
        let points: Vec<String> = report
            .per_turn_jga
            .iter()
            .map(|e| format!("{:.1},{:.1}", x(e.turn), y(e.jga)))
            .collect();
        svg.push_str(&format!(
            r#"<polyline fill="none" stroke="{color}" stroke-width="2" points="{}"/>"#,
            points.join(" ")
        ));
        svg.push_str(&format!(
            r#"<text x="{}" y="{}" font-size="12" fill="{color}">{name}</text>"#,
            W - MARGIN + 4.0 - 120.0,
            MARGIN + 16.0 * i as f64
        ));
    }
    svg.push_str("</svg>");
    svg
}

/// Box-style summary of JGA spread across prompt variants.
pub fn sensitivity_table(
    rows: &[(String, f64)],
    summary: &SensitivitySummary,
) -> String {
    let mut values: Vec<f64> = rows.iter().map(|(_, jga)| *jga).collect();
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let quantile = |q: f64| -> f64 {
        if values.is_empty() {
            return 0.0;
        }
        let position = q * (values.len() - 1) as f64;
        let low = position.floor() as usize;
        let high = position.ceil() as usize;
        let fraction = position - low as f64;
        values[low] * (1.0 - fraction) + values[high] * fraction
    };
    let mut out = String::from("prompt\tjga\n");
    for (name, jga) in rows {
        let _ = writeln!(out, "{name}\t{jga}");
    }
    let _ = writeln!(out, "# n\t{}", summary.n);
    let _ = writeln!(out, "# mean\t{}", summary.mean);
    let _ = writeln!(out, "# variance\t{}", summary.variance);
    let _ = writeln!(out, "# min\t{}", quantile(0.0));
    let _ = writeln!(out, "# q1\t{}", quantile(0.25));
    let _ = writeln!(out, "# median\t{}", quantile(0.5));
    let _ = writeln!(out, "# q3\t{}", quantile(0.75));
    let _ = writeln!(out, "# max\t{}", quantile(1.0));
    out
}

/// Minimal box plot for the sensitivity sweep.
pub fn sensitivity_svg(rows: &[(String, f64)]) -> String {
    const W: f64 = 320.0;
    const H: f64 = 400.0;
    const MARGIN: f64 = 50.0;
    let mut values: Vec<f64> = rows.iter().map(|(_, v)| *v).collect();
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let y = |v: f64| H - MARGIN - v * (H - 2.0 * MARGIN);
    let quantile = |q: f64| -> f64 {
        let position = q * (values.len().saturating_sub(1)) as f64;
        let low = position.floor() as usize;
        let high = position.ceil() as usize;
        values[low] + (values[high] - values[low]) * (position - low as f64)
    };
    let (x0, x1, xm) = (W / 2.0 - 50.0, W / 2.0 + 50.0, W / 2.0);
    let mut svg = format!(
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">
<rect width="{W}" height="{H}" fill="white"/>"#
    );
    if !values.is_empty() {
        let (min, q1, median, q3, max) = (
            quantile(0.0),
            quantile(0.25),
            quantile(0.5),
            quantile(0.75),
            quantile(1.0),
        );
        let fill = "#9ecae1";
        svg.push_str(&format!(
            r#"<line x1="{xm}" y1="{}" x2="{xm}" y2="{}" stroke="black"/>
<rect x="{x0}" y="{}" width="{}" height="{}" fill="{fill}" stroke="black"/>
<line x1="{x0}" y1="{}" x2="{x1}" y2="{}" stroke="black" stroke-width="2"/>
<line x1="{}" y1="{}" x2="{}" y2="{}" stroke="black"/>
<line x1="{}" y1="{}" x2="{}" y2="{}" stroke="black"/>"#,
            y(min),
            y(max),
            y(q3),
            x1 - x0,
            (y(q1) - y(q3)).max(1.0),
            y(median),
            y(median),
            xm - 20.0,
            y(min),
            xm + 20.0,
            y(min),
            xm - 20.0,
            y(max),
            xm + 20.0,
            y(max),
        ));
    }
    for tick in 0..=5 {
        let value = tick as f64 / 5.0;
        svg.push_str(&format!(
            r#"<text x="{}" y="{}" text-anchor="end" font-size="11">{value:.1}</text>"#,
            MARGIN - 6.0,
            y(value) + 4.0
        ));
    }
    svg.push_str("</svg>");
    svg
}
