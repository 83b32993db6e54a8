//! Minimal standalone SVG charts: panels of line series or grouped bars.

use std::fmt::Write as _;

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#17becf",
];
const PANEL_W: f64 = 320.0;
const PANEL_H: f64 = 240.0;
const MARGIN: (f64, f64, f64, f64) = (48.0, 16.0, 28.0, 40.0); // left, right, top, bottom
const COLUMNS: usize = 3;

#[derive(Debug, Clone)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

#[derive(Debug, Clone)]
pub struct LinePanel {
    pub title: String,
    pub series: Vec<Series>,
    /// Horizontal reference line (e.g. the nominal level).
    pub reference: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct BarPanel {
    pub title: String,
    /// Group labels along the x axis.
    pub groups: Vec<String>,
    /// `values[s][g]` for series `s` in group `g`.
    pub values: Vec<Vec<f64>>,
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// About five round tick values covering `[lo, hi]`.
fn ticks(lo: f64, hi: f64) -> Vec<f64> {
    let span = (hi - lo).max(1e-12);
    let raw = span / 5.0;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 2.5, 5.0, 10.0]
        .iter()
        .map(|m| m * mag)
        .find(|s| span / s <= 6.0)
        .unwrap_or(10.0 * mag);
    let mut t = (lo / step).ceil() * step;
    let mut out = Vec::new();
    while t <= hi + 1e-9 * span {
        out.push(if t.abs() < 1e-12 * step { 0.0 } else { t });
        t += step;
    }
    out
}

fn label(v: f64) -> String {
    let s = format!("{v:.4}");
    s.trim_end_matches('0').trim_end_matches('.').to_string()
}

struct Frame {
    x0: f64,
    y0: f64,
    xr: (f64, f64),
    yr: (f64, f64),
}

impl Frame {
    fn px(&self, x: f64) -> f64 {
        let w = PANEL_W - MARGIN.0 - MARGIN.1;
        self.x0 + MARGIN.0 + (x - self.xr.0) / (self.xr.1 - self.xr.0) * w
    }

    fn py(&self, y: f64) -> f64 {
        let h = PANEL_H - MARGIN.2 - MARGIN.3;
        self.y0 + MARGIN.2 + h - (y - self.yr.0) / (self.yr.1 - self.yr.0) * h
    }
}

fn padded(lo: f64, hi: f64) -> (f64, f64) {
    if !(lo.is_finite() && hi.is_finite()) {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-12 {
        let d = if lo.abs() > 0.0 { lo.abs() * 0.1 } else { 1.0 };
        return (lo - d, hi + d);
    }
    let pad = 0.05 * (hi - lo);
    (lo - pad, hi + pad)
}

fn axes(out: &mut String, f: &Frame, title: &str, x_ticks: Option<&[f64]>) {
    let (l, r) = (f.px(f.xr.0), f.px(f.xr.1));
    let (b, t) = (f.py(f.yr.0), f.py(f.yr.1));
    writeln!(out, r##"<rect x="{l:.1}" y="{t:.1}" width="{:.1}" height="{:.1}" fill="none" stroke="#444"/>"##, r - l, b - t).unwrap();
    writeln!(
        out,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle" font-size="12" font-weight="bold">{}</text>"#,
        (l + r) / 2.0,
        f.y0 + 16.0,
        esc(title)
    )
    .unwrap();
    for y in ticks(f.yr.0, f.yr.1) {
        let py = f.py(y);
        writeln!(out, r##"<line x1="{:.1}" y1="{py:.1}" x2="{l:.1}" y2="{py:.1}" stroke="#444"/>"##, l - 4.0).unwrap();
        writeln!(
            out,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end" font-size="9">{}</text>"#,
            l - 6.0,
            py + 3.0,
            label(y)
        )
        .unwrap();
    }
    if let Some(xs) = x_ticks {
        for &x in xs {
            let px = f.px(x);
            writeln!(out, r##"<line x1="{px:.1}" y1="{b:.1}" x2="{px:.1}" y2="{:.1}" stroke="#444"/>"##, b + 4.0).unwrap();
            writeln!(
                out,
                r#"<text x="{px:.1}" y="{:.1}" text-anchor="middle" font-size="9">{}</text>"#,
                b + 14.0,
                label(x)
            )
            .unwrap();
        }
    }
}

fn legend(out: &mut String, labels: &[String], y: f64) {
    for (i, name) in labels.iter().enumerate() {
        let x = 16.0 + 130.0 * i as f64;
        let c = PALETTE[i % PALETTE.len()];
        writeln!(out, r#"<rect x="{x:.1}" y="{:.1}" width="12" height="12" fill="{c}"/>"#, y - 10.0).unwrap();
        writeln!(out, r#"<text x="{:.1}" y="{y:.1}" font-size="11">{}</text>"#, x + 16.0, esc(name)).unwrap();
    }
}

fn canvas(panels: usize, legend_rows: bool) -> (usize, f64, f64) {
    let cols = panels.clamp(1, COLUMNS);
    let rows = panels.div_ceil(cols).max(1);
    let w = cols as f64 * PANEL_W;
    let h = rows as f64 * PANEL_H + 40.0 + if legend_rows { 24.0 } else { 0.0 };
    (cols, w, h)
}

fn header(title: &str, w: f64, h: f64) -> String {
    let mut out = String::new();
    writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w:.0}" height="{h:.0}" viewBox="0 0 {w:.0} {h:.0}" font-family="sans-serif">"#
    )
    .unwrap();
    writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#).unwrap();
    writeln!(out, r#"<text x="{:.1}" y="22" text-anchor="middle" font-size="15">{}</text>"#, w / 2.0, esc(title)).unwrap();
    out
}

/// Panels of line series sharing one legend.
pub fn line_chart(title: &str, x_label: &str, y_label: &str, panels: &[LinePanel]) -> String {
    let (cols, w, h) = canvas(panels.len(), true);
    let mut out = header(title, w, h);
    let mut labels: Vec<String> = Vec::new();
    for p in panels {
        for s in &p.series {
            if !labels.contains(&s.label) {
                labels.push(s.label.clone());
            }
        }
    }
    for (k, p) in panels.iter().enumerate() {
        let pts = p.series.iter().flat_map(|s| s.points.iter());
        let (mut xlo, mut xhi, mut ylo, mut yhi) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
        for &(x, y) in pts {
            xlo = xlo.min(x);
            xhi = xhi.max(x);
            ylo = ylo.min(y);
            yhi = yhi.max(y);
        }
        if let Some(r) = p.reference {
            ylo = ylo.min(r);
            yhi = yhi.max(r);
        }
        let mut xs: Vec<f64> = p.series.iter().flat_map(|s| s.points.iter().map(|q| q.0)).collect();
        xs.sort_by(f64::total_cmp);
        xs.dedup();
        let f = Frame {
            x0: (k % cols) as f64 * PANEL_W,
            y0: 30.0 + (k / cols) as f64 * PANEL_H,
            xr: padded(xlo, xhi),
            yr: padded(ylo, yhi),
        };
        axes(&mut out, &f, &p.title, Some(&xs));
        if let Some(r) = p.reference {
            writeln!(
                out,
                r##"<line x1="{:.1}" y1="{y:.1}" x2="{:.1}" y2="{y:.1}" stroke="#888" stroke-dasharray="4 3"/>"##,
                f.px(f.xr.0),
                f.px(f.xr.1),
                y = f.py(r)
            )
            .unwrap();
        }
        for s in &p.series {
            let c = PALETTE[labels.iter().position(|l| *l == s.label).unwrap_or(0) % PALETTE.len()];
            let path: Vec<String> = s.points.iter().map(|&(x, y)| format!("{:.1},{:.1}", f.px(x), f.py(y))).collect();
            writeln!(out, r#"<polyline points="{}" fill="none" stroke="{c}" stroke-width="1.5"/>"#, path.join(" ")).unwrap();
            for &(x, y) in &s.points {
                writeln!(out, r#"<circle cx="{:.1}" cy="{:.1}" r="2.5" fill="{c}"/>"#, f.px(x), f.py(y)).unwrap();
            }
        }
        let b = f.py(f.yr.0);
        writeln!(out, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle" font-size="10">{}</text>"#, f.x0 + PANEL_W / 2.0 + MARGIN.0 / 2.0, b + 28.0, esc(x_label)).unwrap();
        writeln!(
            out,
            r#"<text transform="translate({:.1},{:.1}) rotate(-90)" text-anchor="middle" font-size="10">{}</text>"#,
            f.x0 + 12.0,
            f.y0 + PANEL_H / 2.0,
            esc(y_label)
        )
        .unwrap();
    }
    legend(&mut out, &labels, h - 10.0);
    out.push_str("</svg>\n");
    out
}

/// Panels of grouped bars; `series` names the bars within each group.
pub fn bar_chart(title: &str, y_label: &str, series: &[String], panels: &[BarPanel]) -> String {
    let (cols, w, h) = canvas(panels.len(), true);
    let mut out = header(title, w, h);
    for (k, p) in panels.iter().enumerate() {
        let top = p.values.iter().flatten().copied().filter(|v| v.is_finite()).fold(0.0, f64::max);
        let f = Frame {
            x0: (k % cols) as f64 * PANEL_W,
            y0: 30.0 + (k / cols) as f64 * PANEL_H,
            xr: (0.0, p.groups.len().max(1) as f64),
            yr: (0.0, if top > 0.0 { top * 1.08 } else { 1.0 }),
        };
        axes(&mut out, &f, &p.title, None);
        let slot = 0.8 / series.len().max(1) as f64;
        for (g, name) in p.groups.iter().enumerate() {
            for (s, vals) in p.values.iter().enumerate() {
                let v = vals.get(g).copied().unwrap_or(0.0);
                if !v.is_finite() {
                    continue;
                }
                let x = g as f64 + 0.1 + s as f64 * slot;
                let (l, r) = (f.px(x), f.px(x + slot));
                let (y, b) = (f.py(v), f.py(0.0));
                writeln!(
                    out,
                    r#"<rect x="{l:.1}" y="{y:.1}" width="{:.1}" height="{:.1}" fill="{}"/>"#,
                    (r - l).max(0.5),
                    (b - y).max(0.0),
                    PALETTE[s % PALETTE.len()]
                )
                .unwrap();
            }
            writeln!(
                out,
                r#"<text x="{:.1}" y="{:.1}" text-anchor="middle" font-size="9">{}</text>"#,
                f.px(g as f64 + 0.5),
                f.py(0.0) + 14.0,
                esc(name)
            )
            .unwrap();
        }
        writeln!(
            out,
            r#"<text transform="translate({:.1},{:.1}) rotate(-90)" text-anchor="middle" font-size="10">{}</text>"#,
            f.x0 + 12.0,
            f.y0 + PANEL_H / 2.0,
            esc(y_label)
        )
        .unwrap();
    }
    legend(&mut out, series, h - 10.0);
    out.push_str("</svg>\n");
    out
}
