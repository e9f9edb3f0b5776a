//! Run artifact emission: `metrics.json`, `metrics.csv` and an SVG curve of
//! average accuracy per round, with multi-run overlays for variant sweeps.
//!
//! All three formats are deterministic: identical metrics produce
//! byte-identical files.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::metrics::RunMetrics;

const SVG_PALETTE: [&str; 6] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b",
];

/// Serializes metrics as pretty-printed JSON with stable key order.
pub fn metrics_to_json(metrics: &RunMetrics) -> Result<String> {
    let mut s = serde_json::to_string_pretty(metrics)
        .map_err(|e| Error::Domain(format!("metrics serialization failed: {e}")))?;
    s.push('\n');
    Ok(s)
}

/// Parses metrics emitted by [`metrics_to_json`], refusing other schema
/// versions.
pub fn metrics_from_json(json: &str) -> Result<RunMetrics> {
    let metrics: RunMetrics = serde_json::from_str(json)
        .map_err(|e| Error::Domain(format!("metrics parse failed: {e}")))?;
    if metrics.schema_version != crate::metrics::METRICS_SCHEMA_VERSION {
        return Err(Error::Config(format!(
            "metrics schema version {} is not supported (tool writes version {})",
            metrics.schema_version,
            crate::metrics::METRICS_SCHEMA_VERSION
        )));
    }
    Ok(metrics)
}

/// Reads a `metrics.json` file.
pub fn load_metrics(path: &Path) -> Result<RunMetrics> {
    let content = fs::read_to_string(path).map_err(|e| Error::io(path.display(), e))?;
    metrics_from_json(&content)
}

fn pct(fraction: f64) -> String {
    format!("{:.2}", fraction * 100.0)
}

fn render_csv(metrics: &RunMetrics) -> String {
    let max_tasks = metrics
        .per_round
        .last()
        .map_or(0, |r| r.per_task_accuracy.len());
    let mut out = String::from("round,all_avg_pct,new_task_pct,old_avg_pct");
    for t in 1..=max_tasks {
        write!(out, ",acc_task_{t}_pct").expect("string write");
    }
    out.push('\n');
    for round in &metrics.per_round {
        write!(
            out,
            "{},{},{},{}",
            round.round,
            pct(round.all_tasks_avg),
            pct(round.new_task_acc),
            round.old_tasks_avg.map(pct).unwrap_or_default()
        )
        .expect("string write");
        for t in 0..max_tasks {
            out.push(',');
            if let Some(&a) = round.per_task_accuracy.get(t) {
                out.push_str(&pct(a));
            }
        }
        out.push('\n');
    }
    out
}

fn escape_xml(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

/// Renders average-accuracy-per-round curves as a standalone SVG 1.1 chart.
fn render_svg(series: &[(String, Vec<f64>)]) -> String {
    const WIDTH: f64 = 640.0;
    const HEIGHT: f64 = 400.0;
    const LEFT: f64 = 64.0;
    const RIGHT: f64 = 24.0;
    const TOP: f64 = 48.0;
    const BOTTOM: f64 = 56.0;
    let plot_w = WIDTH - LEFT - RIGHT;
    let plot_h = HEIGHT - TOP - BOTTOM;
    let max_rounds = series.iter().map(|(_, v)| v.len()).max().unwrap_or(0);

    let x_of = |round_idx: usize| {
        if max_rounds <= 1 {
            LEFT + plot_w / 2.0
        } else {
            LEFT + plot_w * round_idx as f64 / (max_rounds - 1) as f64
        }
    };
    let y_of = |fraction: f64| TOP + plot_h * (1.0 - fraction);

    let mut svg = String::new();
    writeln!(
        svg,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" \
         width=\"{WIDTH}\" height=\"{HEIGHT}\" viewBox=\"0 0 {WIDTH} {HEIGHT}\">"
    )
    .expect("string write");
    svg.push_str("  <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");
    writeln!(
        svg,
        "  <text x=\"{:.1}\" y=\"24\" font-family=\"sans-serif\" font-size=\"16\" \
         text-anchor=\"middle\">Average accuracy per round</text>",
        WIDTH / 2.0
    )
    .expect("string write");

    for tick in 0..=5 {
        let fraction = tick as f64 / 5.0;
        let y = y_of(fraction);
        writeln!(
            svg,
            "  <line x1=\"{LEFT:.1}\" y1=\"{y:.1}\" x2=\"{:.1}\" y2=\"{y:.1}\" \
             stroke=\"#dddddd\" stroke-width=\"1\"/>",
            LEFT + plot_w
        )
        .expect("string write");
        writeln!(
            svg,
            "  <text x=\"{:.1}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"12\" \
             text-anchor=\"end\">{}%</text>",
            LEFT - 8.0,
            y + 4.0,
            tick * 20
        )
        .expect("string write");
    }
    for r in 0..max_rounds {
        let x = x_of(r);
        writeln!(
            svg,
            "  <text x=\"{x:.1}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"12\" \
             text-anchor=\"middle\">{}</text>",
            TOP + plot_h + 20.0,
            r + 1
        )
        .expect("string write");
    }
    writeln!(
        svg,
        "  <text x=\"{:.1}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"13\" \
         text-anchor=\"middle\">round</text>",
        LEFT + plot_w / 2.0,
        HEIGHT - 16.0
    )
    .expect("string write");
    writeln!(
        svg,
        "  <line x1=\"{LEFT:.1}\" y1=\"{TOP:.1}\" x2=\"{LEFT:.1}\" y2=\"{:.1}\" \
         stroke=\"black\" stroke-width=\"1\"/>",
        TOP + plot_h
    )
    .expect("string write");
    writeln!(
        svg,
        "  <line x1=\"{LEFT:.1}\" y1=\"{:.1}\" x2=\"{:.1}\" y2=\"{:.1}\" \
         stroke=\"black\" stroke-width=\"1\"/>",
        TOP + plot_h,
        LEFT + plot_w,
        TOP + plot_h
    )
    .expect("string write");

    for (i, (label, values)) in series.iter().enumerate() {
        let color = SVG_PALETTE[i % SVG_PALETTE.len()];
        let points: Vec<String> = values
            .iter()
            .enumerate()
            .map(|(r, &v)| format!("{:.1},{:.1}", x_of(r), y_of(v)))
            .collect();
        writeln!(
            svg,
            "  <polyline class=\"curve\" fill=\"none\" stroke=\"{color}\" stroke-width=\"2\" \
             points=\"{}\"/>",
            points.join(" ")
        )
        .expect("string write");
        for (r, &v) in values.iter().enumerate() {
            writeln!(
                svg,
                "  <circle cx=\"{:.1}\" cy=\"{:.1}\" r=\"3\" fill=\"{color}\"/>",
                x_of(r),
                y_of(v)
            )
            .expect("string write");
        }
        let legend_y = TOP + 8.0 + 18.0 * i as f64;
        writeln!(
            svg,
            "  <line x1=\"{:.1}\" y1=\"{legend_y:.1}\" x2=\"{:.1}\" y2=\"{legend_y:.1}\" \
             stroke=\"{color}\" stroke-width=\"2\"/>",
            LEFT + plot_w - 150.0,
            LEFT + plot_w - 126.0
        )
        .expect("string write");
        writeln!(
            svg,
            "  <text x=\"{:.1}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"12\">{}</text>",
            LEFT + plot_w - 120.0,
            legend_y + 4.0,
            escape_xml(label)
        )
        .expect("string write");
    }
    svg.push_str("</svg>\n");
    svg
}

fn write_file(path: &Path, content: &str) -> Result<()> {
    fs::write(path, content).map_err(|e| Error::io(path.display(), e))
}

fn averages(metrics: &RunMetrics) -> Vec<f64> {
    metrics.per_round.iter().map(|r| r.all_tasks_avg).collect()
}

/// Writes `metrics.json`, `metrics.csv` and `accuracy_curve.svg` for one run.
pub fn emit_report(metrics: &RunMetrics, out_dir: &Path) -> Result<Vec<PathBuf>> {
    metrics.validate()?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir.display(), e))?;
    let json_path = out_dir.join("metrics.json");
    write_file(&json_path, &metrics_to_json(metrics)?)?;
    let csv_path = out_dir.join("metrics.csv");
    write_file(&csv_path, &render_csv(metrics))?;
    let svg_path = out_dir.join("accuracy_curve.svg");
    let series = vec![("run".to_string(), averages(metrics))];
    write_file(&svg_path, &render_svg(&series))?;
    Ok(vec![json_path, csv_path, svg_path])
}

/// Writes a merged comparison of several labeled runs: one overlay SVG with
/// a labeled curve per run, plus `comparison.csv` of their aggregates.
pub fn emit_merged_report(runs: &[(String, RunMetrics)], out_dir: &Path) -> Result<Vec<PathBuf>> {
    if runs.is_empty() {
        return Err(Error::Domain("no runs to merge".into()));
    }
    for (_, metrics) in runs {
        metrics.validate()?;
    }
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir.display(), e))?;

    let mut csv = String::from("variant,round,all_avg_pct,new_task_pct,old_avg_pct\n");
    for (label, metrics) in runs {
        for round in &metrics.per_round {
            writeln!(
                csv,
                "{label},{},{},{},{}",
                round.round,
                pct(round.all_tasks_avg),
                pct(round.new_task_acc),
                round.old_tasks_avg.map(pct).unwrap_or_default()
            )
            .expect("string write");
        }
    }
    let csv_path = out_dir.join("comparison.csv");
    write_file(&csv_path, &csv)?;

    let series: Vec<(String, Vec<f64>)> = runs
        .iter()
        .map(|(label, metrics)| (label.clone(), averages(metrics)))
        .collect();
    let svg_path = out_dir.join("accuracy_curve.svg");
    write_file(&svg_path, &render_svg(&series))?;
    Ok(vec![csv_path, svg_path])
}
