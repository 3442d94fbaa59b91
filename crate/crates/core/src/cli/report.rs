//! Training curves as a standalone SVG document.
//!
//! Two panels share the epoch axis: `loss_total` on the left with its own
//! scale, and `val_mdice`, `alpha`, `tau` on a fixed `[0, 1]` scale on the
//! right. Each data point is a `<circle>` whose `<title>` holds the exact
//! value as written in the CSV. Non-finite values are drawn at the top of
//! their panel.

use std::fmt::Write as _;

use crate::teacher_student::EpochRecord;

const PANEL_W: f64 = 360.0;
const PANEL_H: f64 = 240.0;
const MARGIN: f64 = 50.0;
const GAP: f64 = 70.0;

struct Series {
    name: &'static str,
    color: &'static str,
    values: Vec<f64>,
}

struct Panel {
    x0: f64,
    lo: f64,
    hi: f64,
    label: &'static str,
}

impl Panel {
    fn point(&self, i: usize, n: usize, v: f64) -> (f64, f64) {
        let fx = if n > 1 { i as f64 / (n - 1) as f64 } else { 0.5 };
        let fy = if v.is_finite() { ((v - self.lo) / (self.hi - self.lo)).clamp(0.0, 1.0) } else { 1.0 };
        (self.x0 + fx * PANEL_W, MARGIN + (1.0 - fy) * PANEL_H)
    }
}

fn draw_panel(svg: &mut String, panel: &Panel, series: &[Series], epochs: &[usize]) {
    let n = epochs.len();
    let (x0, y0) = (panel.x0, MARGIN);
    let _ = writeln!(
        svg,
        r#"<rect x="{x0}" y="{y0}" width="{PANEL_W}" height="{PANEL_H}" fill="none" stroke="black"/>"#
    );
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="{}" text-anchor="middle" font-size="12">epoch</text>"#,
        x0 + PANEL_W / 2.0,
        y0 + PANEL_H + 32.0
    );
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="{}" text-anchor="middle" font-size="12" transform="rotate(-90 {} {})">{}</text>"#,
        x0 - 36.0,
        y0 + PANEL_H / 2.0,
        x0 - 36.0,
        y0 + PANEL_H / 2.0,
        panel.label
    );
    for (v, y) in [(panel.lo, y0 + PANEL_H), (panel.hi, y0)] {
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}" text-anchor="end" font-size="10">{v:.3}</text>"#,
            x0 - 4.0,
            y + 4.0
        );
    }
    if let (Some(first), Some(last)) = (epochs.first(), epochs.last()) {
        let _ = writeln!(
            svg,
            r#"<text x="{x0}" y="{}" font-size="10">{first}</text><text x="{}" y="{}" text-anchor="end" font-size="10">{last}</text>"#,
            y0 + PANEL_H + 14.0,
            x0 + PANEL_W,
            y0 + PANEL_H + 14.0
        );
    }
    for (k, s) in series.iter().enumerate() {
        let pts: Vec<String> = s
            .values
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                let (x, y) = panel.point(i, n, v);
                format!("{x:.2},{y:.2}")
            })
            .collect();
        let _ = writeln!(svg, r#"<g id="{}">"#, s.name);
        let _ = writeln!(
            svg,
            r#"<polyline fill="none" stroke="{}" stroke-width="1.5" points="{}"/>"#,
            s.color,
            pts.join(" ")
        );
        for (i, &v) in s.values.iter().enumerate() {
            let (x, y) = panel.point(i, n, v);
            let _ = writeln!(
                svg,
                r#"<circle cx="{x:.2}" cy="{y:.2}" r="1.8" fill="{}"><title>{} epoch {}: {v}</title></circle>"#,
                s.color, s.name, epochs[i]
            );
        }
        let _ = writeln!(svg, "</g>");
        let ly = y0 + 14.0 + 14.0 * k as f64;
        let lx = x0 + PANEL_W - 90.0;
        let _ = writeln!(
            svg,
            r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{}" stroke-width="2"/><text x="{}" y="{}" font-size="11">{}</text>"#,
            lx + 16.0,
            s.color,
            lx + 20.0,
            ly + 4.0,
            s.name
        );
    }
}

pub fn render_svg(records: &[EpochRecord]) -> String {
    let epochs: Vec<usize> = records.iter().map(|r| r.epoch).collect();
    let col = |f: fn(&EpochRecord) -> f64| records.iter().map(f).collect::<Vec<_>>();
    let loss = col(|r| r.loss_total);
    let finite = loss.iter().copied().filter(|v| v.is_finite());
    let lo = finite.clone().fold(f64::INFINITY, f64::min).min(0.0);
    let mut hi = finite.fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        hi = lo + 1.0;
    }
    let width = 2.0 * MARGIN + 2.0 * PANEL_W + GAP;
    let height = 2.0 * MARGIN + PANEL_H + 20.0;
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(svg, "<title>training curves</title>");
    draw_panel(
        &mut svg,
        &Panel {
            x0: MARGIN,
            lo,
            hi,
            label: "loss",
        },
        &[Series {
            name: "loss_total",
            color: "#1f77b4",
            values: loss,
        }],
        &epochs,
    );
    draw_panel(
        &mut svg,
        &Panel {
            x0: MARGIN + PANEL_W + GAP,
            lo: 0.0,
            hi: 1.0,
            label: "value",
        },
        &[
            Series {
                name: "val_mdice",
                color: "#2ca02c",
                values: col(|r| r.val_mdice),
            },
            Series {
                name: "alpha",
                color: "#d62728",
                values: col(|r| r.alpha),
            },
            Series {
                name: "tau",
                color: "#9467bd",
                values: col(|r| r.tau),
            },
        ],
        &epochs,
    );
    svg.push_str("</svg>\n");
    svg
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::teacher_student::Phase;

    fn records(n: usize) -> Vec<EpochRecord> {
        (0..n)
            .map(|e| EpochRecord {
                epoch: e,
                phase: if e < 2 { Phase::Warmup } else { Phase::CoTrain },
                alpha: if e < 2 { 1.0 } else { 0.9 - 0.1 * (e - 2) as f64 },
                tau: if e < 2 { f64::INFINITY } else { 0.95 - 0.1 * (e - 2) as f64 },
                lr: 0.01,
                loss_sup: 1.0,
                loss_cons: 0.0,
                loss_total: 2.0 / (e + 1) as f64,
                val_miou: 0.3,
                val_mdice: 0.1 * e as f64,
                pseudo_coverage: 0.0,
            })
            .collect()
    }

    fn polyline_points(svg: &str, id: &str) -> usize {
        let g = svg.split(&format!(r#"<g id="{id}">"#)).nth(1).unwrap();
        let pts = g.split(r#"points=""#).nth(1).unwrap().split('"').next().unwrap();
        pts.split_whitespace().count()
    }

    #[test]
    fn one_point_per_row() {
        let r = records(6);
        let svg = render_svg(&r);
        for id in ["loss_total", "val_mdice", "alpha", "tau"] {
            assert_eq!(polyline_points(&svg, id), 6, "{id}");
        }
        assert!(svg.contains("<title>val_mdice epoch 5: 0.5</title>"));
        assert!(svg.contains("<title>tau epoch 0: inf</title>"));
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
    }

    #[test]
    fn single_row_and_empty_render() {
        assert_eq!(polyline_points(&render_svg(&records(1)), "alpha"), 1);
        assert!(render_svg(&[]).contains("</svg>"));
    }
}
