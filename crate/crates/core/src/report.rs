//! Plain SVG plots and text tables for evaluation outputs.

use std::fmt::Write;

use crate::uq::{rank_order, CalibrationPoint, MetricsReport, PredictionRow};

const SIZE: f64 = 360.0;
const MARGIN: f64 = 48.0;

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// Unit-square plot frame with ticks at 0, 0.25, …, 1.
struct Frame {
    x0: f64,
    y0: f64,
    w: f64,
    h: f64,
}

impl Frame {
    fn new(x0: f64, y0: f64, w: f64, h: f64) -> Self {
        Self { x0, y0, w, h }
    }

    fn px(&self, x: f64) -> f64 {
        self.x0 + x.clamp(0.0, 1.0) * self.w
    }

    fn py(&self, y: f64) -> f64 {
        self.y0 + self.h - y.clamp(0.0, 1.0) * self.h
    }

    fn axes(&self, out: &mut String, title: &str, xlabel: &str, ylabel: &str) {
        let _ = writeln!(
            out,
            r##"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="none" stroke="#333"/>"##,
            self.x0, self.y0, self.w, self.h
        );
        for i in 0..=4 {
            let v = i as f64 / 4.0;
            let (x, y) = (self.px(v), self.py(v));
            let bottom = self.y0 + self.h;
            let _ = writeln!(
                out,
                r##"<line x1="{x:.2}" y1="{bottom:.2}" x2="{x:.2}" y2="{:.2}" stroke="#333"/><text x="{x:.2}" y="{:.2}" font-size="9" text-anchor="middle">{v}</text>"##,
                bottom + 4.0,
                bottom + 14.0
            );
            let _ = writeln!(
                out,
                r##"<line x1="{:.2}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="#333"/><text x="{:.2}" y="{:.2}" font-size="9" text-anchor="end">{v}</text>"##,
                self.x0 - 4.0,
                self.x0,
                self.x0 - 6.0,
                y + 3.0
            );
        }
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" font-size="12" text-anchor="middle">{}</text>"#,
            self.x0 + self.w / 2.0,
            self.y0 - 10.0,
            escape(title)
        );
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" font-size="10" text-anchor="middle">{}</text>"#,
            self.x0 + self.w / 2.0,
            self.y0 + self.h + 30.0,
            escape(xlabel)
        );
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" font-size="10" text-anchor="middle" transform="rotate(-90 {:.2} {:.2})">{}</text>"#,
            self.x0 - 32.0,
            self.y0 + self.h / 2.0,
            self.x0 - 32.0,
            self.y0 + self.h / 2.0,
            escape(ylabel)
        );
    }

    fn diagonal(&self, out: &mut String) {
        let _ = writeln!(
            out,
            r##"<line class="diagonal" x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="#999" stroke-dasharray="4 3"/>"##,
            self.px(0.0),
            self.py(0.0),
            self.px(1.0),
            self.py(1.0)
        );
    }
}

fn open_svg(width: f64, height: f64) -> String {
    format!(
        "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\" viewBox=\"0 0 {width} {height}\" font-family=\"sans-serif\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
    )
}

/// Nominal against empirical coverage, with the ideal diagonal.
pub fn calibration_svg(parameter: &str, points: &[CalibrationPoint]) -> String {
    let mut out = open_svg(SIZE, SIZE);
    let f = Frame::new(MARGIN, 30.0, SIZE - MARGIN - 16.0, SIZE - 30.0 - MARGIN);
    f.axes(&mut out, &format!("Calibration: {parameter}"), "nominal coverage", "empirical coverage");
    f.diagonal(&mut out);
    let mut pts: Vec<&CalibrationPoint> = points.iter().filter(|p| p.parameter == parameter).collect();
    pts.sort_by(|a, b| a.nominal.total_cmp(&b.nominal));
    let path: Vec<String> = pts
        .iter()
        .map(|p| format!("{:.2},{:.2}", f.px(p.nominal), f.py(p.empirical)))
        .collect();
    let _ = writeln!(
        out,
        r##"<polyline class="curve" points="{}" fill="none" stroke="#1f77b4" stroke-width="1.5"/>"##,
        path.join(" ")
    );
    for p in pts {
        let _ = writeln!(
            out,
            r##"<circle class="level" cx="{:.2}" cy="{:.2}" r="3" fill="#1f77b4"><title>{} → {}</title></circle>"##,
            f.px(p.nominal),
            f.py(p.empirical),
            p.nominal,
            p.empirical
        );
    }
    out.push_str("</svg>\n");
    out
}

/// True against predicted mean, one marker per sample with a ±1σ bar.
pub fn scatter_svg(parameter: &str, rows: &[PredictionRow]) -> String {
    let mut out = open_svg(SIZE, SIZE);
    let f = Frame::new(MARGIN, 30.0, SIZE - MARGIN - 16.0, SIZE - 30.0 - MARGIN);
    f.axes(&mut out, &format!("True vs predicted: {parameter}"), "true (normalised)", "predicted mean ± 1σ");
    f.diagonal(&mut out);
    for r in rows.iter().filter(|r| r.parameter == parameter) {
        let x = f.px(r.truth);
        let _ = writeln!(
            out,
            r##"<line class="errorbar" x1="{x:.2}" y1="{:.2}" x2="{x:.2}" y2="{:.2}" stroke="#d62728" stroke-opacity="0.6"/>"##,
            f.py(r.mean - r.std),
            f.py(r.mean + r.std)
        );
        let _ = writeln!(
            out,
            r##"<circle class="marker" cx="{x:.2}" cy="{:.2}" r="2.5" fill="#d62728"><title>sample {}</title></circle>"##,
            f.py(r.mean),
            r.sample
        );
    }
    out.push_str("</svg>\n");
    out
}

fn histogram(values: impl Iterator<Item = f64>, bins: usize) -> Vec<usize> {
    let mut h = vec![0; bins];
    for v in values {
        let b = ((v.clamp(0.0, 1.0) * bins as f64) as usize).min(bins - 1);
        h[b] += 1;
    }
    h
}

/// Per-parameter histograms of true values and predicted means.
pub fn distribution_svg(parameters: &[String], rows: &[PredictionRow]) -> String {
    const BINS: usize = 10;
    let cols = 4;
    let (pw, ph) = (200.0, 150.0);
    let nrows = parameters.len().div_ceil(cols);
    let mut out = open_svg(cols as f64 * pw, nrows as f64 * ph + 24.0);
    let _ = writeln!(
        out,
        r##"<text x="8" y="16" font-size="11"><tspan fill="#7f7f7f">■ true</tspan> <tspan fill="#1f77b4">■ predicted mean</tspan></text>"##
    );
    for (idx, p) in parameters.iter().enumerate() {
        let (cx, cy) = ((idx % cols) as f64 * pw, (idx / cols) as f64 * ph + 24.0);
        let f = Frame::new(cx + 36.0, cy + 22.0, pw - 48.0, ph - 58.0);
        f.axes(&mut out, p, "", "");
        let sel: Vec<&PredictionRow> = rows.iter().filter(|r| &r.parameter == p).collect();
        let truth = histogram(sel.iter().map(|r| r.truth), BINS);
        let pred = histogram(sel.iter().map(|r| r.mean), BINS);
        let peak = truth.iter().chain(&pred).copied().max().unwrap_or(0).max(1) as f64;
        let bw = f.w / BINS as f64;
        for (b, (&t, &m)) in truth.iter().zip(&pred).enumerate() {
            for (k, count, colour, class) in [(0.0, t, "#7f7f7f", "true"), (0.5, m, "#1f77b4", "predicted")] {
                let height = count as f64 / peak * f.h;
                let _ = writeln!(
                    out,
                    r#"<rect class="{class}" x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="{colour}" fill-opacity="0.8"/>"#,
                    f.x0 + b as f64 * bw + k * bw,
                    f.y0 + f.h - height,
                    bw / 2.0,
                    height
                );
            }
        }
    }
    out.push_str("</svg>\n");
    out
}

/// Results table: |Bias|, RMSE, average std and ±1σ coverage per parameter.
pub fn format_metrics_table(report: &MetricsReport) -> String {
    let mut out = String::from("| Parameter | \\|Bias\\| | RMSE | Avg. STD | Coverage (±1σ) |\n|---|---|---|---|---|\n");
    for p in &report.params {
        let _ = writeln!(
            out,
            "| {} | {:.3} | {:.3} | {:.3} | {:.1}% |",
            p.parameter,
            p.bias,
            p.rmse,
            p.avg_std,
            100.0 * p.coverage_1sigma
        );
    }
    let _ = writeln!(out, "| Overall | | {:.3} | | |", report.overall_rmse);
    out
}

/// Parameters ordered by RMSE / average std.
pub fn format_ranking_table(report: &MetricsReport) -> String {
    let ratios: Vec<f64> = report.params.iter().map(|p| p.ratio).collect();
    let mut out = String::from("| Rank | Parameter | RMSE | Avg. STD | RMSE/Avg. STD |\n|---|---|---|---|---|\n");
    for (r, &k) in rank_order(&ratios).iter().enumerate() {
        let p = &report.params[k];
        let _ = writeln!(
            out,
            "| {} | {} | {:.3} | {:.3} | {:.2} |",
            r + 1,
            p.parameter,
            p.rmse,
            p.avg_std,
            p.ratio
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::uq::ParamMetrics;

    fn rows() -> Vec<PredictionRow> {
        (0..5)
            .map(|i| PredictionRow {
                sample: i,
                parameter: "lambda_1".into(),
                truth: i as f64 / 5.0,
                mean: 0.5,
                std: 0.1,
            })
            .collect()
    }

    #[test]
    fn svgs_parse_and_count() {
        let doc = scatter_svg("lambda_1", &rows());
        let xml = roxmltree::Document::parse(&doc).unwrap();
        let markers = xml.descendants().filter(|n| n.attribute("class") == Some("marker")).count();
        assert_eq!(markers, 5);

        let pts: Vec<CalibrationPoint> = [0.5, 0.9]
            .iter()
            .map(|&q| CalibrationPoint { parameter: "a&b".into(), nominal: q, empirical: q / 2.0 })
            .collect();
        let doc = calibration_svg("a&b", &pts);
        let xml = roxmltree::Document::parse(&doc).unwrap();
        assert_eq!(xml.descendants().filter(|n| n.attribute("class") == Some("diagonal")).count(), 1);

        let doc = distribution_svg(&["lambda_1".to_string()], &rows());
        roxmltree::Document::parse(&doc).unwrap();
    }

    #[test]
    fn table_row_format() {
        let report = MetricsReport {
            params: vec![ParamMetrics {
                parameter: "lambda_1".into(),
                bias: 0.0041,
                rmse: 0.0612,
                avg_std: 0.0529,
                coverage_1sigma: 0.57,
                ratio: 0.0612 / 0.0529,
                rank: 1,
            }],
            overall_rmse: 0.0612,
        };
        let t = format_metrics_table(&report);
        assert!(t.contains("| lambda_1 | 0.004 | 0.061 | 0.053 | 57.0% |"), "{t}");
        assert!(format_ranking_table(&report).contains("| 1 | lambda_1 | 0.061 | 0.053 | 1.16 |"));
    }
}
