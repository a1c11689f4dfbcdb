//! Deterministic SVG 1.1 rendering of documents.

use std::fmt::Write;

use crate::doc::{DocSchema, Document};

/// Fill colors by category id, cycled when there are more categories.
pub const CATEGORY_COLORS: [&str; 10] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf",
];

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RenderOptions {
    /// Draw element text clipped to its box.
    pub show_text: bool,
    /// Raw text placed in a `<metadata>` element (escaped).
    pub metadata: Option<String>,
}

pub fn category_color(category: usize) -> &'static str {
    CATEGORY_COLORS[category % CATEGORY_COLORS.len()]
}

pub fn escape_xml(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            // characters not allowed in XML 1.0
            c if (c as u32) < 0x20 && !matches!(c, '\t' | '\n' | '\r') => out.push('\u{FFFD}'),
            c => out.push(c),
        }
    }
    out
}

/// One `rect` per element over a white canvas rect. Coordinates use three
/// decimals; identical input gives identical bytes.
pub fn render_svg(doc: &Document, schema: &DocSchema, opts: &RenderOptions) -> String {
    let (w, h) = (doc.canvas_w, doc.canvas_h);
    let mut s = String::new();
    s.push_str("<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n");
    let _ = writeln!(
        s,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"{w:.3}\" height=\"{h:.3}\" viewBox=\"0 0 {w:.3} {h:.3}\">"
    );
    let _ = writeln!(s, "<title>{}</title>", escape_xml(&doc.id));
    if let Some(m) = &opts.metadata {
        let _ = writeln!(s, "<metadata>{}</metadata>", escape_xml(m));
    }
    if opts.show_text {
        s.push_str("<defs>\n");
        for (i, e) in doc.elements.iter().enumerate() {
            if e.text.is_some() {
                let b = &e.bbox;
                let _ = writeln!(
                    s,
                    "<clipPath id=\"clip{i}\"><rect x=\"{:.3}\" y=\"{:.3}\" width=\"{:.3}\" height=\"{:.3}\"/></clipPath>",
                    b.x, b.y, b.w, b.h
                );
            }
        }
        s.push_str("</defs>\n");
    }
    let _ = writeln!(
        s,
        "<rect class=\"canvas\" x=\"0.000\" y=\"0.000\" width=\"{w:.3}\" height=\"{h:.3}\" fill=\"#ffffff\"/>"
    );
    for (i, e) in doc.elements.iter().enumerate() {
        let b = &e.bbox;
        let color = category_color(e.category);
        let name = schema
            .category(e.category)
            .map_or_else(|| format!("category-{}", e.category), |c| c.name.clone());
        let _ = writeln!(
            s,
            "<rect class=\"element\" data-index=\"{i}\" data-category=\"{}\" x=\"{:.3}\" y=\"{:.3}\" width=\"{:.3}\" height=\"{:.3}\" fill=\"{color}\" fill-opacity=\"0.25\" stroke=\"{color}\" stroke-width=\"1\"/>",
            escape_xml(&name),
            b.x,
            b.y,
            b.w,
            b.h
        );
        if let (true, Some(t)) = (opts.show_text, &e.text) {
            let size = (b.h * 0.8).clamp(1.0, 12.0);
            let _ = writeln!(
                s,
                "<text x=\"{:.3}\" y=\"{:.3}\" font-family=\"sans-serif\" font-size=\"{size:.3}\" fill=\"#000000\" clip-path=\"url(#clip{i})\">{}</text>",
                b.x + 1.0,
                b.y + size,
                escape_xml(t)
            );
        }
    }
    s.push_str("</svg>\n");
    s
}
