use std::fmt::Write as _;
use std::path::Path;

use super::{AnalysisError, EmbeddingSnapshot, Pca};
use crate::corpus::Language;

const WIDTH: f64 = 480.0;
const HEIGHT: f64 = 400.0;
const MARGIN: f64 = 48.0;

/// One plotted token.
#[derive(Debug, Clone, PartialEq)]
pub struct ScatterPoint {
    pub token: String,
    pub language: Language,
    pub pc1: f64,
    pub pc2: f64,
}

/// Projected non-special rows. `pca` must have been fitted on exactly
/// `snap.vocab.lexical_ids()` in order.
fn points(snap: &EmbeddingSnapshot, pca: &Pca) -> Vec<ScatterPoint> {
    snap.vocab
        .lexical_ids()
        .into_iter()
        .enumerate()
        .map(|(i, id)| ScatterPoint {
            token: snap.vocab.surface(id).to_string(),
            language: snap.vocab.language(id).expect("lexical id"),
            pc1: pca.projected.at(i, 0),
            pc2: pca.projected.at(i, 1),
        })
        .collect()
}

pub fn scatter_csv(points: &[ScatterPoint]) -> String {
    let mut out = String::from("token,language,pc1,pc2\n");
    for p in points {
        writeln!(out, "{},{},{},{}", p.token, p.language, p.pc1, p.pc2).expect("string write");
    }
    out
}

pub fn read_scatter_csv(text: &str) -> Result<Vec<ScatterPoint>, AnalysisError> {
    let mut lines = text.lines();
    if lines.next() != Some("token,language,pc1,pc2") {
        return Err(AnalysisError::Parse("missing scatter CSV header".into()));
    }
    lines
        .enumerate()
        .map(|(i, line)| {
            let err = |m: &str| AnalysisError::Parse(format!("line {}: {m}", i + 2));
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 4 {
                return Err(err("expected 4 fields"));
            }
            let language = match f[1] {
                "L1" => Language::L1,
                "L2" => Language::L2,
                _ => return Err(err("unknown language")),
            };
            let num = |s: &str| s.parse::<f64>().map_err(|_| err("bad number"));
            Ok(ScatterPoint { token: f[0].to_string(), language, pc1: num(f[2])?, pc2: num(f[3])? })
        })
        .collect()
}

/// Distance between the two language centroids in PC space divided by the
/// mean within-language spread (average distance of a point to its own
/// centroid). Smaller means the languages overlap more.
pub fn pc_separation(points: &[ScatterPoint]) -> Option<f64> {
    let centroid = |lang| {
        let sel: Vec<_> = points.iter().filter(|p| p.language == lang).collect();
        let n = sel.len() as f64;
        let c = (sel.iter().map(|p| p.pc1).sum::<f64>() / n, sel.iter().map(|p| p.pc2).sum::<f64>() / n);
        let spread = sel.iter().map(|p| (p.pc1 - c.0).hypot(p.pc2 - c.1)).sum::<f64>() / n;
        (!sel.is_empty()).then_some((c, spread))
    };
    let (c1, s1) = centroid(Language::L1)?;
    let (c2, s2) = centroid(Language::L2)?;
    let spread = (s1 + s2) / 2.0;
    (spread > 0.0).then(|| (c1.0 - c2.0).hypot(c1.1 - c2.1) / spread)
}

fn bounds(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), v| (l.min(v), h.max(v)));
    if hi > lo {
        let pad = (hi - lo) * 0.05;
        (lo - pad, hi + pad)
    } else {
        (lo - 1.0, hi + 1.0)
    }
}

fn axis_map((lo, hi): (f64, f64), from: f64, to: f64) -> impl Fn(f64) -> f64 {
    move |v| from + (v - lo) / (hi - lo) * (to - from)
}

fn svg_open(out: &mut String, title: &str) {
    writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    )
    .unwrap();
    writeln!(out, r#"<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#).unwrap();
    writeln!(out, r#"<text x="{}" y="24" text-anchor="middle" font-family="sans-serif" font-size="14">{}</text>"#, WIDTH / 2.0, escape(title)).unwrap();
    writeln!(
        out,
        r#"<rect x="{MARGIN}" y="{MARGIN}" width="{}" height="{}" fill="none" stroke="black"/>"#,
        WIDTH - 2.0 * MARGIN,
        HEIGHT - 2.0 * MARGIN
    )
    .unwrap();
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn lang_color(lang: Language) -> &'static str {
    match lang {
        Language::L1 => "#1f77b4",
        Language::L2 => "#d62728",
    }
}

pub fn scatter_svg(points: &[ScatterPoint], title: &str) -> String {
    let xs = axis_map(bounds(points.iter().map(|p| p.pc1)), MARGIN, WIDTH - MARGIN);
    let ys = axis_map(bounds(points.iter().map(|p| p.pc2)), HEIGHT - MARGIN, MARGIN);
    let mut out = String::new();
    svg_open(&mut out, title);
    for lang in [Language::L1, Language::L2] {
        writeln!(out, r#"<g class="{lang}" fill="{}">"#, lang_color(lang)).unwrap();
        for p in points.iter().filter(|p| p.language == lang) {
            writeln!(out, r#"<circle cx="{:.3}" cy="{:.3}" r="4"><title>{}</title></circle>"#, xs(p.pc1), ys(p.pc2), escape(&p.token)).unwrap();
        }
        out.push_str("</g>\n");
    }
    out.push_str("<g class=\"legend\" font-family=\"sans-serif\" font-size=\"12\">\n");
    for (i, lang) in [Language::L1, Language::L2].into_iter().enumerate() {
        let y = MARGIN + 16.0 + 18.0 * i as f64;
        writeln!(out, r#"<circle cx="{}" cy="{y}" r="4" fill="{}"/>"#, WIDTH - MARGIN - 40.0, lang_color(lang)).unwrap();
        writeln!(out, r#"<text x="{}" y="{}">{lang}</text>"#, WIDTH - MARGIN - 30.0, y + 4.0).unwrap();
    }
    out.push_str("</g>\n");
    writeln!(out, r#"<text x="{}" y="{}" text-anchor="middle" font-family="sans-serif" font-size="12">PC1</text>"#, WIDTH / 2.0, HEIGHT - 16.0).unwrap();
    writeln!(out, r#"<text x="16" y="{}" font-family="sans-serif" font-size="12" transform="rotate(-90 16 {})">PC2</text>"#, HEIGHT / 2.0, HEIGHT / 2.0).unwrap();
    out.push_str("</svg>\n");
    out
}

fn write(path: &Path, text: &str) -> Result<(), AnalysisError> {
    std::fs::write(path, text).map_err(|source| AnalysisError::Io { path: path.display().to_string(), source })
}

/// Writes `<stem>.svg` and `<stem>.csv`; returns the plotted points.
pub fn emit_scatter(snap: &EmbeddingSnapshot, pca: &Pca, stem: &Path, title: &str) -> Result<Vec<ScatterPoint>, AnalysisError> {
    let pts = points(snap, pca);
    write(&stem.with_extension("svg"), &scatter_svg(&pts, title))?;
    write(&stem.with_extension("csv"), &scatter_csv(&pts))?;
    Ok(pts)
}

/// A named polyline for [`line_plot_svg`].
#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

pub fn line_plot_svg(series: &[Series], title: &str, x_label: &str, y_label: &str) -> String {
    let all = || series.iter().flat_map(|s| s.points.iter().copied()).filter(|(x, y)| x.is_finite() && y.is_finite());
    let xs = axis_map(bounds(all().map(|p| p.0)), MARGIN, WIDTH - MARGIN);
    let ys = axis_map(bounds(all().map(|p| p.1)), HEIGHT - MARGIN, MARGIN);
    const COLORS: [&str; 4] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"];
    let mut out = String::new();
    svg_open(&mut out, title);
    for (i, s) in series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let pts: Vec<String> = s
            .points
            .iter()
            .filter(|(x, y)| x.is_finite() && y.is_finite())
            .map(|&(x, y)| format!("{:.3},{:.3}", xs(x), ys(y)))
            .collect();
        writeln!(out, r#"<polyline class="series" fill="none" stroke="{color}" points="{}"/>"#, pts.join(" ")).unwrap();
        let y = MARGIN + 16.0 + 18.0 * i as f64;
        writeln!(out, r#"<text x="{}" y="{y}" fill="{color}" font-family="sans-serif" font-size="12">{}</text>"#, MARGIN + 8.0, escape(&s.name)).unwrap();
    }
    writeln!(out, r#"<text x="{}" y="{}" text-anchor="middle" font-family="sans-serif" font-size="12">{}</text>"#, WIDTH / 2.0, HEIGHT - 16.0, escape(x_label)).unwrap();
    writeln!(out, r#"<text x="16" y="{}" font-family="sans-serif" font-size="12" transform="rotate(-90 16 {})">{}</text>"#, HEIGHT / 2.0, HEIGHT / 2.0, escape(y_label)).unwrap();
    out.push_str("</svg>\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pts() -> Vec<ScatterPoint> {
        let mk = |t: &str, language, pc1, pc2| ScatterPoint { token: t.into(), language, pc1, pc2 };
        vec![
            mk("a", Language::L1, 0.0, 1.0),
            mk("b", Language::L1, 0.0, -1.0),
            mk("x", Language::L2, 4.0, 1.0),
            mk("y", Language::L2, 4.0, -1.0),
        ]
    }

    #[test]
    fn csv_round_trip() {
        let p = pts();
        assert_eq!(read_scatter_csv(&scatter_csv(&p)).unwrap(), p);
        assert!(read_scatter_csv("nope\n").is_err());
    }

    #[test]
    fn separation_ratio() {
        assert!((pc_separation(&pts()).unwrap() - 4.0).abs() < 1e-15);
    }

    #[test]
    fn svg_is_deterministic() {
        assert_eq!(scatter_svg(&pts(), "t"), scatter_svg(&pts(), "t"));
        let s = Series { name: "mono".into(), points: vec![(0.5, 0.2), (1.0, 0.1)] };
        assert!(line_plot_svg(&[s], "t", "w", "MER").contains("polyline"));
    }
}
