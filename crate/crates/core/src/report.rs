//! Static SVG charts and Markdown tables for training logs, evaluation
//! reports, ablations, and per-video timelines.

use std::fmt::Write as _;

use crate::evaluation::{EvalReport, GroundTruthSegment};
use crate::localization::Detection;
use crate::trainer::{AblationTable, EpochLog};

const PALETTE: [&str; 10] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf",
];

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 360.0;
const MARGIN_LEFT: f64 = 60.0;
const MARGIN_RIGHT: f64 = 150.0;
const MARGIN_TOP: f64 = 36.0;
const MARGIN_BOTTOM: f64 = 48.0;

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn color(i: usize) -> &'static str {
    PALETTE[i % PALETTE.len()]
}

fn open_svg(out: &mut String, width: f64, height: f64, title: &str) {
    writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="12">"#
    )
    .unwrap();
    writeln!(out, r#"<rect width="{width}" height="{height}" fill="white"/>"#).unwrap();
    writeln!(
        out,
        r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{}</text>"#,
        width / 2.0,
        escape(title)
    )
    .unwrap();
}

/// Round numbers for axis ticks.
fn fmt_tick(v: f64) -> String {
    let s = format!("{v:.3}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" {
        "0".into()
    } else {
        s.into()
    }
}

fn bounds(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if !lo.is_finite() {
        (0.0, 1.0)
    } else if hi - lo < 1e-12 {
        (lo - 0.5, hi + 0.5)
    } else {
        (lo, hi)
    }
}

/// A named series of `(x, y)` points.
pub type Series = (String, Vec<(f64, f64)>);

pub fn line_chart_svg(title: &str, x_label: &str, y_label: &str, series: &[Series]) -> String {
    let (x0, x1) = bounds(series.iter().flat_map(|s| s.1.iter().map(|p| p.0)));
    let (y0, y1) = bounds(series.iter().flat_map(|s| s.1.iter().map(|p| p.1)));
    let pw = WIDTH - MARGIN_LEFT - MARGIN_RIGHT;
    let ph = HEIGHT - MARGIN_TOP - MARGIN_BOTTOM;
    let sx = |x: f64| MARGIN_LEFT + (x - x0) / (x1 - x0) * pw;
    let sy = |y: f64| MARGIN_TOP + ph - (y - y0) / (y1 - y0) * ph;

    let mut out = String::new();
    open_svg(&mut out, WIDTH, HEIGHT, title);
    axes(&mut out, (x0, x1), (y0, y1), &sx, &sy, x_label, y_label);
    for (i, (name, points)) in series.iter().enumerate() {
        let pts: Vec<String> = points
            .iter()
            .filter(|p| p.1.is_finite())
            .map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y)))
            .collect();
        if pts.len() > 1 {
            writeln!(
                out,
                r#"<polyline fill="none" stroke="{}" stroke-width="1.5" points="{}"/>"#,
                color(i),
                pts.join(" ")
            )
            .unwrap();
        }
        for p in &pts {
            let (x, y) = p.split_once(',').unwrap();
            writeln!(out, r#"<circle cx="{x}" cy="{y}" r="2.5" fill="{}"/>"#, color(i)).unwrap();
        }
        legend_entry(&mut out, i, name);
    }
    out.push_str("</svg>\n");
    out
}

fn axes(
    out: &mut String,
    (x0, x1): (f64, f64),
    (y0, y1): (f64, f64),
    sx: &dyn Fn(f64) -> f64,
    sy: &dyn Fn(f64) -> f64,
    x_label: &str,
    y_label: &str,
) {
    let bottom = HEIGHT - MARGIN_BOTTOM;
    let right = WIDTH - MARGIN_RIGHT;
    writeln!(
        out,
        r#"<path d="M{MARGIN_LEFT},{MARGIN_TOP} V{bottom} H{right}" fill="none" stroke="black"/>"#
    )
    .unwrap();
    for i in 0..=4 {
        let fx = x0 + (x1 - x0) * i as f64 / 4.0;
        let fy = y0 + (y1 - y0) * i as f64 / 4.0;
        writeln!(
            out,
            r#"<text x="{:.2}" y="{}" text-anchor="middle">{}</text>"#,
            sx(fx),
            bottom + 16.0,
            fmt_tick(fx)
        )
        .unwrap();
        writeln!(
            out,
            r#"<text x="{}" y="{:.2}" text-anchor="end">{}</text>"#,
            MARGIN_LEFT - 6.0,
            sy(fy) + 4.0,
            fmt_tick(fy)
        )
        .unwrap();
    }
    writeln!(
        out,
        r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
        (MARGIN_LEFT + right) / 2.0,
        HEIGHT - 10.0,
        escape(x_label)
    )
    .unwrap();
    writeln!(
        out,
        r#"<text x="14" y="{0}" text-anchor="middle" transform="rotate(-90 14 {0})">{1}</text>"#,
        (MARGIN_TOP + bottom) / 2.0,
        escape(y_label)
    )
    .unwrap();
}

fn legend_entry(out: &mut String, i: usize, name: &str) {
    let x = WIDTH - MARGIN_RIGHT + 12.0;
    let y = MARGIN_TOP + 16.0 * i as f64;
    writeln!(out, r#"<rect x="{x}" y="{}" width="10" height="10" fill="{}"/>"#, y, color(i)).unwrap();
    writeln!(out, r#"<text x="{}" y="{}">{}</text>"#, x + 16.0, y + 9.0, escape(name)).unwrap();
}

pub fn bar_chart_svg(title: &str, y_label: &str, bars: &[(String, f64)]) -> String {
    let y1 = bars.iter().map(|b| b.1).filter(|v| v.is_finite()).fold(0.0f64, f64::max).max(1e-12);
    let pw = WIDTH - MARGIN_LEFT - MARGIN_RIGHT;
    let ph = HEIGHT - MARGIN_TOP - MARGIN_BOTTOM;
    let sy = |y: f64| MARGIN_TOP + ph - y / y1 * ph;
    let mut out = String::new();
    open_svg(&mut out, WIDTH, HEIGHT, title);
    let bottom = HEIGHT - MARGIN_BOTTOM;
    writeln!(
        out,
        r#"<path d="M{MARGIN_LEFT},{MARGIN_TOP} V{bottom} H{}" fill="none" stroke="black"/>"#,
        WIDTH - MARGIN_RIGHT
    )
    .unwrap();
    for i in 0..=4 {
        let v = y1 * i as f64 / 4.0;
        writeln!(
            out,
            r#"<text x="{}" y="{:.2}" text-anchor="end">{}</text>"#,
            MARGIN_LEFT - 6.0,
            sy(v) + 4.0,
            fmt_tick(v)
        )
        .unwrap();
    }
    writeln!(
        out,
        r#"<text x="14" y="{0}" text-anchor="middle" transform="rotate(-90 14 {0})">{1}</text>"#,
        (MARGIN_TOP + bottom) / 2.0,
        escape(y_label)
    )
    .unwrap();
    let slot = pw / bars.len().max(1) as f64;
    for (i, (label, v)) in bars.iter().enumerate() {
        let v = if v.is_finite() { v.max(0.0) } else { 0.0 };
        let x = MARGIN_LEFT + slot * i as f64 + slot * 0.15;
        writeln!(
            out,
            r#"<rect x="{x:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="{}"/>"#,
            sy(v),
            slot * 0.7,
            bottom - sy(v),
            color(i)
        )
        .unwrap();
        writeln!(
            out,
            r#"<text x="{:.2}" y="{}" text-anchor="middle">{}</text>"#,
            x + slot * 0.35,
            bottom + 16.0,
            escape(label)
        )
        .unwrap();
        writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle" font-size="10">{}</text>"#,
            x + slot * 0.35,
            sy(v) - 3.0,
            fmt_tick(v)
        )
        .unwrap();
    }
    out.push_str("</svg>\n");
    out
}

/// Loss components and total per epoch.
pub fn loss_curves_svg(log: &[EpochLog]) -> String {
    type Column = (&'static str, fn(&EpochLog) -> f64);
    let pick: [Column; 7] = [
        ("bcl", |e| e.bcl),
        ("sal", |e| e.sal),
        ("ssal", |e| e.ssal),
        ("hal", |e| e.hal),
        ("sparsity", |e| e.sparsity),
        ("guide", |e| e.guide),
        ("total", |e| e.total),
    ];
    let series: Vec<Series> = pick
        .iter()
        .map(|(name, f)| (name.to_string(), log.iter().map(|e| (e.epoch as f64, f(e))).collect()))
        .collect();
    line_chart_svg("Training losses", "epoch", "mean loss", &series)
}

pub fn validation_curve_svg(log: &[EpochLog]) -> String {
    let points = log
        .iter()
        .filter_map(|e| e.val_avg_map.map(|m| (e.epoch as f64, m)))
        .collect();
    line_chart_svg("Validation avg mAP", "epoch", "avg mAP", &[("val".into(), points)])
}

/// Rows are classes and mAP; columns are IoU thresholds and their average.
pub fn map_table_markdown(report: &EvalReport) -> String {
    let mut s = String::from("| | ");
    for t in &report.iou_thresholds {
        write!(s, "{t} | ").unwrap();
    }
    s.push_str("AVG |\n|---|");
    for _ in 0..=report.iou_thresholds.len() {
        s.push_str("---|");
    }
    s.push('\n');
    for c in report.per_class_ap.iter().filter(|c| c.has_ground_truth) {
        write!(s, "| class {} | ", c.class_id).unwrap();
        for ap in &c.ap {
            write!(s, "{:.1} | ", 100.0 * ap).unwrap();
        }
        let avg = c.ap.iter().sum::<f64>() / c.ap.len().max(1) as f64;
        writeln!(s, "{:.1} |", 100.0 * avg).unwrap();
    }
    s.push_str("| **mAP** | ");
    for m in &report.map_at {
        write!(s, "{:.1} | ", 100.0 * m).unwrap();
    }
    writeln!(s, "{:.1} |", 100.0 * report.avg_map).unwrap();
    if let Some(c) = report.classification_map {
        writeln!(s, "\nClassification mAP: {:.1}", 100.0 * c).unwrap();
    }
    s
}

/// Three stacked rows for one video: ground truth, predictions (opacity by
/// rank within the video), and a per-snippet score curve.
pub fn timeline_svg(
    video_id: &str,
    num_snippets: usize,
    gt: &[GroundTruthSegment],
    predictions: &[Detection],
    scores: &[f64],
) -> String {
    let width = WIDTH;
    let height = 200.0;
    let left = 90.0;
    let right = width - 20.0;
    let t = num_snippets.max(1) as f64;
    let sx = |i: f64| left + i / t * (right - left);
    let mut out = String::new();
    open_svg(&mut out, width, height, video_id);
    let rows = [("ground truth", 40.0), ("prediction", 80.0), ("score", 120.0)];
    for (label, y) in rows {
        writeln!(out, r#"<text x="8" y="{}">{label}</text>"#, y + 18.0).unwrap();
    }
    for g in gt {
        writeln!(
            out,
            r#"<rect x="{:.2}" y="40" width="{:.2}" height="28" fill="{}"/>"#,
            sx(g.t_start as f64),
            sx(g.t_end as f64) - sx(g.t_start as f64),
            color(g.class_id)
        )
        .unwrap();
    }
    let (lo, hi) = bounds(predictions.iter().map(|p| p.score));
    for p in predictions {
        let opacity = 0.25 + 0.75 * (p.score - lo) / (hi - lo);
        writeln!(
            out,
            r#"<rect x="{:.2}" y="80" width="{:.2}" height="28" fill="{}" fill-opacity="{:.3}"/>"#,
            sx(p.t_start as f64),
            sx(p.t_end as f64) - sx(p.t_start as f64),
            color(p.class_id),
            opacity.clamp(0.0, 1.0)
        )
        .unwrap();
    }
    let (s0, s1) = bounds(scores.iter().copied().chain([0.0, 1.0]));
    let pts: Vec<String> = scores
        .iter()
        .enumerate()
        .map(|(i, &v)| format!("{:.2},{:.2}", sx(i as f64 + 0.5), 160.0 - (v - s0) / (s1 - s0) * 40.0))
        .collect();
    if !pts.is_empty() {
        writeln!(
            out,
            r##"<polyline fill="none" stroke="#333" stroke-width="1.2" points="{}"/>"##,
            pts.join(" ")
        )
        .unwrap();
    }
    writeln!(
        out,
        r##"<path d="M{left},{} H{right}" stroke="#999"/><text x="{right}" y="{}" text-anchor="end" font-size="10">snippet {}</text>"##,
        height - 30.0,
        height - 16.0,
        num_snippets
    )
    .unwrap();
    out.push_str("</svg>\n");
    out
}

/// Line plot over numeric axis values; bars when rows are named variants.
pub fn ablation_svg(table: &AblationTable) -> String {
    let title = format!("Ablation: {}", table.axis);
    if table.axis == "table1" || table.axis.starts_with("use_") {
        let bars: Vec<(String, f64)> = table.rows.iter().map(|r| (r.label.clone(), r.avg_map)).collect();
        bar_chart_svg(&title, "test avg mAP", &bars)
    } else {
        let series = vec![
            ("avg mAP".to_string(), table.rows.iter().map(|r| (r.value, r.avg_map)).collect()),
            ("coverage".to_string(), table.rows.iter().map(|r| (r.value, r.coverage)).collect()),
        ];
        line_chart_svg(&title, &table.axis, "test score", &series)
    }
}
