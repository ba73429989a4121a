//! CSV outputs and static SVG figures.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::metrics::IouReport;
use crate::pseudo::SelectionReport;
use crate::train::StepMetrics;

fn csv_err(path: &Path, e: csv::Error) -> Error {
    Error::format(path, e.to_string())
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Writes rows of already-formatted fields under a header.
pub fn write_csv(path: impl AsRef<Path>, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let path = path.as_ref();
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record(header).map_err(|e| csv_err(path, e))?;
    for r in rows {
        w.write_record(r).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Header plus rows of a CSV file.
pub fn read_csv(path: impl AsRef<Path>) -> Result<(Vec<String>, Vec<Vec<String>>)> {
    let path = path.as_ref();
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let header = r.headers().map_err(|e| csv_err(path, e))?.iter().map(String::from).collect();
    let rows = r
        .records()
        .map(|rec| rec.map(|r| r.iter().map(String::from).collect()))
        .collect::<std::result::Result<Vec<Vec<String>>, _>>()
        .map_err(|e| csv_err(path, e))?;
    Ok((header, rows))
}

pub const METRICS_HEADER: [&str; 15] = [
    "global_step",
    "phase",
    "round",
    "step",
    "lr_encoder",
    "lr_decoder",
    "lr_discriminator",
    "seg",
    "adv_seg_g",
    "style_g",
    "ssl",
    "total",
    "adv_seg_d",
    "style_d1",
    "style_d2",
];

pub fn metrics_row(global_step: usize, m: &StepMetrics) -> Vec<String> {
    let mut r = vec![global_step.to_string(), m.phase.to_string(), m.round.to_string(), m.step.to_string()];
    r.extend(
        [
            m.lr_encoder,
            m.lr_decoder,
            m.lr_discriminator,
            m.seg,
            m.adv_seg_g,
            m.style_g,
            m.ssl,
            m.total,
            m.adv_seg_d,
            m.style_d1,
            m.style_d2,
        ]
        .iter()
        .map(f64::to_string),
    );
    r
}

/// `class_id, iou, included`, then a final `mIoU` row.
pub fn write_final_eval(path: impl AsRef<Path>, r: &IouReport) -> Result<()> {
    let mut rows: Vec<Vec<String>> = r
        .iou
        .iter()
        .enumerate()
        .map(|(c, v)| vec![c.to_string(), opt(*v), u8::from(v.is_some()).to_string()])
        .collect();
    let included = r.iou.iter().filter(|v| v.is_some()).count();
    rows.push(vec!["mIoU".into(), r.miou.to_string(), included.to_string()]);
    write_csv(path, &["class_id", "iou", "included"], &rows)
}

/// Parses a `final_eval.csv` back into per-class IoU and mIoU.
pub fn read_final_eval(path: impl AsRef<Path>) -> Result<IouReport> {
    let path = path.as_ref();
    let (_, rows) = read_csv(path)?;
    let bad = || Error::format(path, "malformed final_eval.csv");
    let (last, classes) = rows.split_last().ok_or_else(bad)?;
    let miou = last.get(1).and_then(|v| v.parse().ok()).ok_or_else(bad)?;
    let iou = classes
        .iter()
        .map(|r| match r.get(1).map(String::as_str) {
            Some("") => Ok(None),
            Some(v) => v.parse().map(Some).map_err(|_| bad()),
            None => Err(bad()),
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(IouReport { iou, miou })
}

pub const SELECTION_HEADER: [&str; 6] =
    ["class_id", "support", "centroid_entropy", "selected_count", "coverage_pct", "precision_pct"];

pub fn write_selection_report(path: impl AsRef<Path>, r: &SelectionReport) -> Result<()> {
    let rows: Vec<Vec<String>> = r
        .classes
        .iter()
        .map(|c| {
            vec![
                c.class.to_string(),
                c.support.to_string(),
                opt(c.centroid_entropy),
                c.selected.to_string(),
                c.coverage_pct().to_string(),
                opt(c.precision_pct()),
            ]
        })
        .collect();
    write_csv(path, &SELECTION_HEADER, &rows)
}

// ---- SVG ------------------------------------------------------------------

const W: f64 = 640.0;
const H: f64 = 360.0;
const MARGIN: f64 = 48.0;
const COLORS: [&str; 6] = ["#4c72b0", "#dd8452", "#55a868", "#c44e52", "#8172b3", "#937860"];

fn svg_open(title: &str) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{}</text>"#, W / 2.0, escape(title));
    s
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn axes(s: &mut String, y_max: f64) {
    let (x0, y0, y1) = (MARGIN, H - MARGIN, MARGIN);
    let _ = writeln!(s, r#"<line x1="{x0}" y1="{y0}" x2="{}" y2="{y0}" stroke="black"/>"#, W - MARGIN / 2.0);
    let _ = writeln!(s, r#"<line x1="{x0}" y1="{y0}" x2="{x0}" y2="{y1}" stroke="black"/>"#);
    for k in 0..=4 {
        let v = y_max * k as f64 / 4.0;
        let y = y0 - (y0 - y1) * k as f64 / 4.0;
        let _ = writeln!(s, r#"<text x="{}" y="{:.1}" text-anchor="end">{}</text>"#, x0 - 4.0, y + 4.0, fmt_tick(v));
    }
}

fn fmt_tick(v: f64) -> String {
    if v == 0.0 || (1e-2..1e4).contains(&v.abs()) {
        format!("{v:.3}")
    } else {
        format!("{v:.1e}")
    }
}

/// Vertical bars, one per label.
pub fn bar_chart(title: &str, labels: &[String], values: &[f64]) -> String {
    let mut s = svg_open(title);
    let y_max = values.iter().cloned().filter(|v| v.is_finite()).fold(0.0, f64::max).max(1e-12);
    axes(&mut s, y_max);
    let n = values.len().max(1) as f64;
    let slot = (W - 1.5 * MARGIN) / n;
    for (i, (l, &v)) in labels.iter().zip(values).enumerate() {
        let v = if v.is_finite() { v } else { 0.0 };
        let h = (H - 2.0 * MARGIN) * v / y_max;
        let x = MARGIN + slot * i as f64 + slot * 0.15;
        let _ = writeln!(
            s,
            r#"<rect x="{x:.1}" y="{:.1}" width="{:.1}" height="{h:.1}" fill="{}"/>"#,
            H - MARGIN - h,
            slot * 0.7,
            COLORS[i % COLORS.len()]
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{}" text-anchor="middle">{}</text>"#,
            x + slot * 0.35,
            H - MARGIN + 14.0,
            escape(l)
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Polylines sharing one x axis.
pub fn line_chart(title: &str, series: &[(String, Vec<(f64, f64)>)]) -> String {
    let mut s = svg_open(title);
    let pts = series.iter().flat_map(|(_, p)| p.iter()).filter(|(x, y)| x.is_finite() && y.is_finite());
    let (mut x_max, mut y_max) = (1e-12f64, 1e-12f64);
    for &(x, y) in pts {
        x_max = x_max.max(x);
        y_max = y_max.max(y);
    }
    axes(&mut s, y_max);
    let sx = (W - 1.5 * MARGIN) / x_max;
    let sy = (H - 2.0 * MARGIN) / y_max;
    for (i, (name, p)) in series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let coords: Vec<String> = p
            .iter()
            .filter(|(x, y)| x.is_finite() && y.is_finite())
            .map(|(x, y)| format!("{:.1},{:.1}", MARGIN + x * sx, H - MARGIN - y * sy))
            .collect();
        let _ = writeln!(s, r#"<polyline fill="none" stroke="{color}" stroke-width="1.2" points="{}"/>"#, coords.join(" "));
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" fill="{color}">{}</text>"#,
            W - 1.5 * MARGIN - 60.0,
            MARGIN + 14.0 * i as f64,
            escape(name)
        );
    }
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, W / 2.0, H - 10.0, fmt_tick(x_max));
    s.push_str("</svg>\n");
    s
}

/// Renders every known CSV under `dir` (recursively) into SVG files placed
/// next to it. Returns the written paths.
pub fn render_dir(dir: impl AsRef<Path>) -> Result<Vec<std::path::PathBuf>> {
    let dir = dir.as_ref();
    let mut written = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        let mut entries: Vec<_> = fs::read_dir(&d)
            .map_err(|e| Error::io(&d, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .collect();
        entries.sort();
        for p in entries {
            if p.is_dir() {
                stack.push(p);
                continue;
            }
            let name = p.file_name().and_then(|n| n.to_str()).unwrap_or("");
            let svg = match name {
                "final_eval.csv" => Some(render_final_eval(&p)?),
                "metrics.csv" => Some(render_metrics(&p)?),
                "selection_report.csv" => Some(render_selection(&p)?),
                "ablation_summary.csv" => Some(render_ablation(&p)?),
                "sweep_delta.csv" => Some(render_sweep(&p)?),
                _ => None,
            };
            if let Some(svg) = svg {
                let out = p.with_extension("svg");
                fs::write(&out, svg).map_err(|e| Error::io(&out, e))?;
                written.push(out);
            }
        }
    }
    Ok(written)
}

fn column(header: &[String], name: &str, path: &Path) -> Result<usize> {
    header
        .iter()
        .position(|h| h == name)
        .ok_or_else(|| Error::format(path, format!("missing column {name}")))
}

fn num(s: &str) -> f64 {
    s.parse().unwrap_or(f64::NAN)
}

fn render_final_eval(p: &Path) -> Result<String> {
    let r = read_final_eval(p)?;
    let labels = (0..r.iou.len()).map(|c| format!("class {c}")).chain(["mIoU".to_string()]).collect::<Vec<_>>();
    let values = r.iou.iter().map(|v| v.unwrap_or(0.0)).chain([r.miou]).collect::<Vec<_>>();
    Ok(bar_chart("Per-class IoU on target-eval", &labels, &values))
}

fn render_metrics(p: &Path) -> Result<String> {
    let (h, rows) = read_csv(p)?;
    let gs = column(&h, "global_step", p)?;
    let series = ["seg", "ssl", "adv_seg_d", "total"]
        .iter()
        .map(|name| {
            let c = column(&h, name, p)?;
            Ok((name.to_string(), rows.iter().map(|r| (num(&r[gs]), num(&r[c]))).collect()))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(line_chart("Training losses", &series))
}

fn render_selection(p: &Path) -> Result<String> {
    let (h, rows) = read_csv(p)?;
    let c = column(&h, "coverage_pct", p)?;
    let labels = rows.iter().map(|r| format!("class {}", r[0])).collect::<Vec<_>>();
    let values = rows.iter().map(|r| num(&r[c])).collect::<Vec<_>>();
    Ok(bar_chart("Pseudo-label coverage per class (%)", &labels, &values))
}

fn render_ablation(p: &Path) -> Result<String> {
    let (h, rows) = read_csv(p)?;
    let c = column(&h, "median_miou", p)?;
    let labels = rows.iter().map(|r| r[0].clone()).collect::<Vec<_>>();
    let values = rows.iter().map(|r| num(&r[c])).collect::<Vec<_>>();
    Ok(bar_chart("Median target-eval mIoU per arm", &labels, &values))
}

fn render_sweep(p: &Path) -> Result<String> {
    let (h, rows) = read_csv(p)?;
    let d = column(&h, "delta", p)?;
    let series = ["coverage_pct", "precision_pct"]
        .iter()
        .map(|name| {
            let c = column(&h, name, p)?;
            Ok((name.to_string(), rows.iter().map(|r| (num(&r[d]), num(&r[c]))).collect()))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(line_chart("Selection vs delta", &series))
}
