//! Plain-text SVG output: spanning-probability curves and configuration
//! snapshots. Every document starts with a comment carrying the run header.

use std::collections::BTreeMap;
use std::fmt::Write;

use crate::analysis::SpanEstimate;
use crate::lattice::CellComplex;
use crate::weights::ClusterDecomposition;

fn header_comment(header: &str) -> String {
    // `--` is not allowed inside an XML comment.
    format!("<!--\n{}\n-->\n", header.replace("--", "- -"))
}

const PALETTE: [&str; 8] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

/// P_span against g, one polyline (with error bars) per size.
pub fn span_plot(estimates: &[SpanEstimate], title: &str, header: &str) -> String {
    let (w, h, m) = (640.0, 420.0, 50.0);
    let mut curves: BTreeMap<usize, Vec<&SpanEstimate>> = BTreeMap::new();
    for e in estimates {
        curves.entry(e.l).or_default().push(e);
    }
    let (mut g_lo, mut g_hi) = estimates
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), e| (a.min(e.g), b.max(e.g)));
    if !g_lo.is_finite() {
        (g_lo, g_hi) = (0.0, 1.0);
    }
    if g_hi - g_lo < 1e-12 {
        g_lo -= 0.5;
        g_hi += 0.5;
    }
    let x = |g: f64| m + (g - g_lo) / (g_hi - g_lo) * (w - 2.0 * m);
    let y = |p: f64| h - m - p * (h - 2.0 * m);

    let mut s = String::new();
    s.push_str(&header_comment(header));
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="20" text-anchor="middle">{}</text>"#, w / 2.0, escape(title));
    let _ = writeln!(
        s,
        r#"<path d="M{m} {m} L{m} {b} L{r} {b}" fill="none" stroke="black"/>"#,
        b = h - m,
        r = w - m
    );
    for i in 0..=4 {
        let p = i as f64 / 4.0;
        let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">{p:.2}</text>"#, m - 5.0, y(p) + 4.0);
        let g = g_lo + (g_hi - g_lo) * p;
        let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{g:.3}</text>"#, x(g), h - m + 16.0);
    }
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">g</text>"#, w / 2.0, h - 10.0);
    let _ = writeln!(s, r#"<text x="14" y="{}" transform="rotate(-90 14 {})" text-anchor="middle">P_span</text>"#, h / 2.0, h / 2.0);

    for (k, (l, pts)) in curves.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let path: Vec<String> = pts.iter().map(|e| format!("{:.2},{:.2}", x(e.g), y(e.p_span))).collect();
        let _ = writeln!(s, r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#, path.join(" "));
        for e in pts {
            let (cx, lo, hi) = (x(e.g), y((e.p_span - e.stderr).max(0.0)), y((e.p_span + e.stderr).min(1.0)));
            let _ = writeln!(
                s,
                r#"<line x1="{cx:.2}" y1="{lo:.2}" x2="{cx:.2}" y2="{hi:.2}" stroke="{color}"/><circle cx="{cx:.2}" cy="{:.2}" r="2.5" fill="{color}"/>"#,
                y(e.p_span)
            );
        }
        let ly = m + 16.0 * k as f64 + 10.0;
        let _ = writeln!(
            s,
            r#"<line x1="{}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/><text x="{}" y="{}">L={l}</text>"#,
            w - m - 70.0,
            w - m - 50.0,
            w - m - 45.0,
            ly + 4.0
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Faces filled by cluster (spanning clusters drawn dark with a thick
/// outline), Keep vertices red, Merge vertices green. `None` without
/// geometry.
pub fn snapshot(
    complex: &CellComplex,
    dec: &ClusterDecomposition,
    spanning: &[usize],
    header: &str,
) -> Option<String> {
    let geo = complex.geometry()?;
    let scale = 600.0 / geo.width.max(geo.height).max(1e-9);
    let pad = 20.0;
    let (w, h) = (geo.width * scale + 2.0 * pad, geo.height * scale + 2.0 * pad);
    let pt = |p: [f64; 2]| (pad + p[0] * scale, h - pad - p[1] * scale);

    let mut s = String::new();
    s.push_str(&header_comment(header));
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w:.0}" height="{h:.0}" viewBox="0 0 {w:.1} {h:.1}">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let labels = dec.canonical_labels();
    for (f, &label) in labels.iter().enumerate().take(complex.n_faces()) {
        let id = dec.cluster_of(f);
        let span = spanning.contains(&id);
        let fill = if span {
            "#303030".to_string()
        } else {
            // Golden-angle hues keep neighbouring labels distinguishable.
            format!("hsl({:.0},55%,78%)", (label as f64 * 137.508) % 360.0)
        };
        let poly: Vec<String> = geo.face_polygon[f]
            .iter()
            .map(|&p| {
                let (x, y) = pt(p);
                format!("{x:.2},{y:.2}")
            })
            .collect();
        let _ = writeln!(
            s,
            r#"<polygon points="{}" fill="{fill}" stroke="{}" stroke-width="{}"/>"#,
            poly.join(" "),
            if span { "#000000" } else { "#999999" },
            if span { 1.5 } else { 0.5 }
        );
    }
    let config = dec.config();
    let r = (0.08 * scale).clamp(1.5, 6.0);
    for v in 0..complex.n_vertices() {
        let (x, y) = pt(geo.vertex_pos[v]);
        let color = if config.is_merge(v) { "#2ca02c" } else { "#d62728" };
        let _ = writeln!(s, r#"<circle cx="{x:.2}" cy="{y:.2}" r="{r:.2}" fill="{color}"/>"#);
    }
    s.push_str("</svg>\n");
    Some(s)
}

fn escape(t: &str) -> String {
    t.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
