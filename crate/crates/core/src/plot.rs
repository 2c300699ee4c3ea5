//! Minimal SVG charts for evaluation curves and histograms.

use std::fmt::Write;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::eval::{EvalReport, Histogram};

const W: f64 = 480.0;
const H: f64 = 360.0;
const LEFT: f64 = 60.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 50.0;

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

struct Frame {
    x: (f64, f64),
    y: (f64, f64),
}

impl Frame {
    fn px(&self, x: f64) -> f64 {
        LEFT + (x - self.x.0) / (self.x.1 - self.x.0) * (W - LEFT - RIGHT)
    }

    fn py(&self, y: f64) -> f64 {
        H - BOTTOM - (y - self.y.0) / (self.y.1 - self.y.0) * (H - TOP - BOTTOM)
    }

    fn open(&self, title: &str, xlabel: &str, ylabel: &str) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
        );
        let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
        let _ = writeln!(
            s,
            r#"<text x="{}" y="22" text-anchor="middle" font-size="14">{}</text>"#,
            W / 2.0,
            escape(title)
        );
        let (x0, x1, y0, y1) = (self.px(self.x.0), self.px(self.x.1), self.py(self.y.0), self.py(self.y.1));
        let _ = writeln!(
            s,
            r#"<path d="M{x0:.1},{y1:.1} L{x0:.1},{y0:.1} L{x1:.1},{y0:.1}" fill="none" stroke="black"/>"#
        );
        for k in 0..=4 {
            let t = k as f64 / 4.0;
            let xv = self.x.0 + t * (self.x.1 - self.x.0);
            let yv = self.y.0 + t * (self.y.1 - self.y.0);
            let _ = writeln!(
                s,
                r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
                self.px(xv),
                y0 + 16.0,
                tick(xv)
            );
            let _ = writeln!(
                s,
                r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{}</text>"#,
                x0 - 6.0,
                self.py(yv) + 4.0,
                tick(yv)
            );
        }
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
            (x0 + x1) / 2.0,
            H - 12.0,
            escape(xlabel)
        );
        let _ = writeln!(
            s,
            r#"<text x="16" y="{:.1}" text-anchor="middle" transform="rotate(-90 16 {:.1})">{}</text>"#,
            (y0 + y1) / 2.0,
            (y0 + y1) / 2.0,
            escape(ylabel)
        );
        s
    }
}

fn tick(v: f64) -> String {
    let s = format!("{v:.2}");
    if s == "-0.00" {
        "0.00".into()
    } else {
        s
    }
}

const COLORS: [&str; 4] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"];

/// Line chart of named series on the unit square.
pub fn line_chart(title: &str, xlabel: &str, ylabel: &str, series: &[(&str, Vec<(f64, f64)>)]) -> String {
    let frame = Frame {
        x: (0.0, 1.0),
        y: (0.0, 1.0),
    };
    let mut s = frame.open(title, xlabel, ylabel);
    for (k, (name, pts)) in series.iter().enumerate() {
        let color = COLORS[k % COLORS.len()];
        let d: Vec<String> = pts
            .iter()
            .enumerate()
            .map(|(i, &(x, y))| format!("{}{:.1},{:.1}", if i == 0 { "M" } else { "L" }, frame.px(x), frame.py(y)))
            .collect();
        if !d.is_empty() {
            let _ = writeln!(s, r#"<path d="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#, d.join(" "));
        }
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" fill="{color}">{}</text>"#,
            W - RIGHT - 120.0,
            TOP + 14.0 * (k + 1) as f64,
            escape(name)
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Bar histogram; bars left of zero are drawn hatched.
pub fn histogram_chart(title: &str, xlabel: &str, hist: &Histogram) -> String {
    let top = hist.counts.iter().copied().max().unwrap_or(0).max(1) as f64;
    let frame = Frame {
        x: (hist.lower, hist.upper),
        y: (0.0, top),
    };
    let mut s = frame.open(title, xlabel, "images");
    s.push_str(
        r##"<defs><pattern id="hatch" width="6" height="6" patternUnits="userSpaceOnUse"><path d="M0,6 L6,0" stroke="#d62728"/></pattern></defs>"##,
    );
    s.push('\n');
    for (i, &n) in hist.counts.iter().enumerate() {
        if n == 0 {
            continue;
        }
        let (lo, hi) = hist.bin_edges(i);
        let fill = if hi <= 0.0 { "url(#hatch)" } else { COLORS[0] };
        let (x0, x1) = (frame.px(lo), frame.px(hi));
        let (y0, y1) = (frame.py(0.0), frame.py(n as f64));
        let _ = writeln!(
            s,
            r#"<rect x="{x0:.1}" y="{y1:.1}" width="{:.1}" height="{:.1}" fill="{fill}" stroke="black" stroke-width="0.5"/>"#,
            x1 - x0,
            y0 - y1
        );
    }
    s.push_str("</svg>\n");
    s
}

fn save(path: PathBuf, svg: String, written: &mut Vec<PathBuf>) -> Result<()> {
    std::fs::write(&path, svg).map_err(|e| Error::io(&path, e))?;
    written.push(path);
    Ok(())
}

/// Renders the report's PR curve, score/quality bins and mIoU change
/// histogram into `dir`.
pub fn write_report_plots(report: &EvalReport, dir: &Path) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    if let Some(seg) = &report.segments {
        let pr: Vec<(f64, f64)> = seg.pr_curve.iter().map(|p| (p.recall, p.precision)).collect();
        save(
            dir.join("pr_curve.svg"),
            line_chart("Precision-recall for low-quality segments", "recall", "precision", &[("PR", pr)]),
            &mut written,
        )?;
        let b = &seg.score_quality_bins;
        let col = |f: fn(&crate::eval::QualityBin) -> f64| b.iter().map(|q| (q.center, f(q))).collect::<Vec<_>>();
        save(
            dir.join("score_quality_bins.svg"),
            line_chart(
                "Mean segment quality per score bin",
                "uncertainty score",
                "mean quality",
                &[
                    ("precision p", col(|q| q.mean_precision_p)),
                    ("IoU", col(|q| q.mean_iou)),
                    ("adjusted IoU", col(|q| q.mean_iou_adj)),
                ],
            ),
            &mut written,
        )?;
    }
    if let Some(c) = &report.correction {
        save(
            dir.join("delta_miou_histogram.svg"),
            histogram_chart("Per-image mIoU change", "mIoU after - before", &c.delta_miou.histogram),
            &mut written,
        )?;
    }
    Ok(written)
}
