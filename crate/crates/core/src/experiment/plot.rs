//! Grouped bar charts of result rows as standalone SVG.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use crate::net::Version;

use super::reference::NOTE;
use super::run::ResultRow;

const COLOURS: [&str; 6] = ["#4e79a7", "#f28e2b", "#59a14f", "#e15759", "#76b7b2", "#b07aa1"];

/// Which column a row belongs to: the first of structure, loss and
/// normalization that differs across rows.
fn variant_of(rows: &[ResultRow]) -> impl Fn(&ResultRow) -> String {
    let distinct = |f: fn(&ResultRow) -> String| rows.iter().map(f).collect::<BTreeSet<_>>().len() > 1;
    let axes: [fn(&ResultRow) -> String; 3] =
        [|r| r.structure.to_string(), |r| r.loss.to_string(), |r| r.normalization.to_string()];
    let pick = axes.into_iter().find(|&f| distinct(f)).unwrap_or(axes[0]);
    move |r: &ResultRow| pick(r)
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// One group per version, one bar per variant, heights in Top-1 percent.
/// Reference values, where present, are drawn as black ticks.
pub fn bar_chart_svg(rows: &[ResultRow], title: &str) -> String {
    let variant = variant_of(rows);
    let versions: Vec<Version> = Version::ALL.into_iter().filter(|v| rows.iter().any(|r| r.version == *v)).collect();
    let mut variants: Vec<String> = Vec::new();
    for r in rows {
        let v = variant(r);
        if !variants.contains(&v) {
            variants.push(v);
        }
    }
    let (bar, gap, left, top, plot_h) = (24.0, 24.0, 56.0, 40.0, 240.0);
    let group_w = bar * variants.len().max(1) as f64 + gap;
    let width = left + group_w * versions.len().max(1) as f64 + 180.0;
    let height = top + plot_h + 60.0;
    let y = |pct: f64| top + plot_h * (1.0 - pct.clamp(0.0, 100.0) / 100.0);

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<text x="{left}" y="20" font-size="14">{}</text>"#, escape(title));
    for tick in (0..=100).step_by(20) {
        let ty = y(tick as f64);
        let _ = writeln!(
            s,
            r##"<line x1="{left}" y1="{ty}" x2="{}" y2="{ty}" stroke="#ddd"/><text x="{}" y="{}" text-anchor="end">{tick}</text>"##,
            width - 180.0,
            left - 6.0,
            ty + 4.0
        );
    }
    for (g, version) in versions.iter().enumerate() {
        let gx = left + gap / 2.0 + g as f64 * group_w;
        for (k, name) in variants.iter().enumerate() {
            let Some(r) = rows.iter().rev().find(|r| r.version == *version && variant(r) == *name) else {
                continue;
            };
            let x = gx + k as f64 * bar;
            let _ = writeln!(
                s,
                r#"<rect x="{x}" y="{}" width="{}" height="{}" fill="{}"><title>{version} {} {:.1}</title></rect>"#,
                y(r.top1),
                bar - 2.0,
                top + plot_h - y(r.top1),
                COLOURS[k % COLOURS.len()],
                escape(name),
                r.top1
            );
            if let Some(p) = r.paper_ref_top1 {
                let _ = writeln!(
                    s,
                    r#"<line x1="{x}" y1="{0}" x2="{1}" y2="{0}" stroke="black" stroke-width="2"/>"#,
                    y(p),
                    x + bar - 2.0
                );
            }
        }
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="middle">{version}</text>"#,
            gx + bar * variants.len() as f64 / 2.0,
            top + plot_h + 18.0
        );
    }
    let lx = width - 170.0;
    for (k, name) in variants.iter().enumerate() {
        let ly = top + 16.0 * k as f64;
        let _ = writeln!(
            s,
            r#"<rect x="{lx}" y="{ly}" width="10" height="10" fill="{}"/><text x="{}" y="{}">{}</text>"#,
            COLOURS[k % COLOURS.len()],
            lx + 14.0,
            ly + 10.0,
            escape(name)
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{left}" y="{}">Top-1 %; black ticks: {NOTE}</text>"#,
        top + plot_h + 40.0
    );
    s.push_str("</svg>\n");
    s
}
