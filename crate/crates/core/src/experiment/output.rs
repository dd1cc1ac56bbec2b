use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::Result;
use crate::metrics::{MetricReport, PSNR_CAP};

/// Writes a UTF-8 CSV file with a header row and `\n` line endings.
pub fn write_csv(path: &Path, header: &str, rows: &[String]) -> Result<()> {
    let mut text = String::with_capacity(64 * (rows.len() + 1));
    text.push_str(header);
    text.push('\n');
    for row in rows {
        text.push_str(row);
        text.push('\n');
    }
    fs::write(path, text)?;
    Ok(())
}

const WIDTH: f64 = 480.0;
const HEIGHT: f64 = 320.0;
const MARGIN: f64 = 48.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

/// Line plot of region PSNR against M, one line per alpha, with the
/// uncorrected baseline (M = 0 rows of method `none`) as a dashed line.
pub fn sweep_svg(rows: &[MetricReport]) -> String {
    let baseline = rows
        .iter()
        .find(|r| r.method == "none")
        .map(|r| r.psnr_region.min(PSNR_CAP));
    let points: Vec<&MetricReport> = rows.iter().filter(|r| r.method != "none").collect();
    let mut alphas: Vec<f64> = Vec::new();
    for r in &points {
        if !alphas.contains(&r.alpha) {
            alphas.push(r.alpha);
        }
    }
    alphas.sort_by(f64::total_cmp);

    let ys: Vec<f64> = points
        .iter()
        .map(|r| r.psnr_region.min(PSNR_CAP))
        .chain(baseline)
        .filter(|y| y.is_finite())
        .collect();
    let (mut y_lo, mut y_hi) = ys.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &y| {
        (lo.min(y), hi.max(y))
    });
    if !y_lo.is_finite() {
        (y_lo, y_hi) = (0.0, 1.0);
    }
    let pad = ((y_hi - y_lo) * 0.1).max(0.05);
    let (y_lo, y_hi) = (y_lo - pad, y_hi + pad);
    let m_max = points.iter().map(|r| r.m).max().unwrap_or(1).max(1) as f64;
    let px = |m: f64| MARGIN + (WIDTH - 2.0 * MARGIN) * m / m_max;
    let py = |y: f64| HEIGHT - MARGIN - (HEIGHT - 2.0 * MARGIN) * (y - y_lo) / (y_hi - y_lo);

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let (x0, x1, yb, yt) = (MARGIN, WIDTH - MARGIN, HEIGHT - MARGIN, MARGIN);
    let _ = writeln!(
        svg,
        r#"<path d="M{x0} {yt} L{x0} {yb} L{x1} {yb}" fill="none" stroke="black"/>"#
    );
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="{}" text-anchor="middle">M (corrected steps)</text>"#,
        WIDTH / 2.0,
        HEIGHT - 12.0
    );
    let _ = writeln!(
        svg,
        r#"<text x="14" y="{}" text-anchor="middle" transform="rotate(-90 14 {})">region PSNR (dB)</text>"#,
        HEIGHT / 2.0,
        HEIGHT / 2.0
    );
    for k in 0..=4 {
        let y = y_lo + (y_hi - y_lo) * k as f64 / 4.0;
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{:.1}" text-anchor="end">{y:.2}</text>"#,
            x0 - 4.0,
            py(y) + 4.0
        );
    }
    let mut ms: Vec<usize> = points.iter().map(|r| r.m).collect();
    ms.sort_unstable();
    ms.dedup();
    for m in ms {
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{}" text-anchor="middle">{m}</text>"#,
            px(m as f64),
            yb + 14.0
        );
    }
    if let Some(b) = baseline.filter(|b| b.is_finite()) {
        let _ = writeln!(
            svg,
            r#"<line x1="{x0}" y1="{y:.2}" x2="{x1}" y2="{y:.2}" stroke="gray" stroke-dasharray="4 3"/>"#,
            y = py(b)
        );
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{:.2}" text-anchor="end" fill="gray">baseline</text>"#,
            x1,
            py(b) - 4.0
        );
    }
    for (k, &alpha) in alphas.iter().enumerate() {
        let color = COLORS[k % COLORS.len()];
        let mut line: Vec<(f64, f64)> = points
            .iter()
            .filter(|r| r.alpha == alpha)
            .map(|r| (px(r.m as f64), py(r.psnr_region.min(PSNR_CAP))))
            .collect();
        line.sort_by(|a, b| a.0.total_cmp(&b.0));
        if line.len() > 1 {
            let d: Vec<String> = line.iter().map(|(x, y)| format!("{x:.2},{y:.2}")).collect();
            let _ = writeln!(
                svg,
                r#"<polyline points="{}" fill="none" stroke="{color}"/>"#,
                d.join(" ")
            );
        }
        for (x, y) in &line {
            let _ = writeln!(svg, r#"<circle cx="{x:.2}" cy="{y:.2}" r="3" fill="{color}"/>"#);
        }
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}" fill="{color}">alpha = {alpha}</text>"#,
            x1 - 90.0,
            yt + 14.0 * k as f64
        );
    }
    svg.push_str("</svg>\n");
    svg
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(method: &str, m: usize, alpha: f64, p: f64) -> MetricReport {
        MetricReport {
            method: method.into(),
            model: "trained-mlp".into(),
            task: "text-removal".into(),
            m,
            alpha,
            psnr_full: p,
            ssim_full: 0.5,
            psnr_region: p,
            ssim_region: 0.5,
            mmd: Some(0.0),
            n_samples: 4,
            seed: 0,
        }
    }

    #[test]
    fn svg_has_a_line_per_alpha() {
        let rows = vec![
            row("none", 0, 0.0, 10.0),
            row("empty-prompt", 1, 0.01, 11.0),
            row("empty-prompt", 3, 0.01, 12.0),
            row("empty-prompt", 3, 0.1, f64::INFINITY),
        ];
        let svg = sweep_svg(&rows);
        assert!(svg.starts_with("<svg"));
        assert!(svg.trim_end().ends_with("</svg>"));
        assert_eq!(svg.matches("<polyline").count(), 1);
        assert_eq!(svg.matches("<circle").count(), 3);
        assert!(svg.contains("baseline"));
        assert_eq!(svg, sweep_svg(&rows));
    }

    #[test]
    fn csv_layout() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.csv");
        write_csv(&path, "a,b", &["1,2".into(), "3,4".into()]).unwrap();
        assert_eq!(fs::read_to_string(path).unwrap(), "a,b\n1,2\n3,4\n");
    }
}
