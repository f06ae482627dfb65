//! Tolerant HTML extraction: visible text, anchor targets and image sources.

use std::collections::HashSet;

use ego_tree::NodeRef;
use scraper::{Html, Node, Selector};
use url::Url;

/// Elements whose text never reaches the reader.
const HIDDEN: &[&str] = &["script", "style", "noscript", "template", "head"];

/// Elements rendered inline; every other element separates words.
const INLINE: &[&str] = &[
    "a", "abbr", "b", "bdi", "bdo", "cite", "code", "data", "dfn", "em", "font", "i", "kbd", "mark", "q", "s", "samp",
    "small", "span", "strong", "sub", "sup", "time", "u", "var",
];

/// A parsed page.
pub struct Page {
    doc: Html,
}

impl Page {
    pub fn parse(html: &str) -> Self {
        Page {
            doc: Html::parse_document(html),
        }
    }

    /// Visible text with entities decoded and whitespace collapsed. The
    /// `<title>` is kept; the rest of `<head>` is not.
    pub fn text(&self) -> String {
        let mut out = String::new();
        if let Some(title) = self.doc.select(&selector("title")).next() {
            out.extend(title.text());
            out.push(' ');
        }
        let mut stack: Vec<(NodeRef<'_, Node>, bool)> = vec![(self.doc.tree.root(), false)];
        // (node, closing) pairs; a closing marker emits the trailing separator.
        while let Some((node, closing)) = stack.pop() {
            if closing {
                out.push(' ');
                continue;
            }
            match node.value() {
                Node::Text(t) => out.push_str(t),
                Node::Element(el) => {
                    let name = el.name();
                    if HIDDEN.contains(&name) {
                        continue;
                    }
                    let block = !INLINE.contains(&name);
                    if block {
                        out.push(' ');
                        stack.push((node, true));
                    }
                    stack.extend(node.children().rev().map(|c| (c, false)));
                }
                Node::Document | Node::Fragment => {
                    stack.extend(node.children().rev().map(|c| (c, false)));
                }
                _ => {}
            }
        }
        out.split_whitespace().collect::<Vec<_>>().join(" ")
    }

    /// `<base href>` when present and resolvable, otherwise `base`.
    fn effective_base(&self, base: &Url) -> Url {
        self.doc
            .select(&selector("base[href]"))
            .next()
            .and_then(|b| b.value().attr("href"))
            .and_then(|href| base.join(href).ok())
            .unwrap_or_else(|| base.clone())
    }

    fn resolve_attr(&self, css: &str, attr: &str, base: &Url) -> Vec<Url> {
        let base = self.effective_base(base);
        let mut seen = HashSet::new();
        self.doc
            .select(&selector(css))
            .filter_map(|el| el.value().attr(attr))
            .filter_map(|raw| base.join(raw.trim()).ok())
            .filter(|u| matches!(u.scheme(), "http" | "https"))
            .map(|mut u| {
                u.set_fragment(None);
                u
            })
            .filter(|u| seen.insert(u.clone()))
            .collect()
    }

    /// Absolute http(s) anchor targets, fragments removed, first-seen order.
    pub fn links(&self, base: &Url) -> Vec<Url> {
        self.resolve_attr("a[href], area[href]", "href", base)
    }

    /// Absolute http(s) `<img src>` targets, deduplicated in first-seen order.
    pub fn image_refs(&self, base: &Url) -> Vec<Url> {
        self.resolve_attr("img[src]", "src", base)
    }
}

fn selector(css: &str) -> Selector {
    Selector::parse(css).expect("static selector")
}

pub fn extract_text(html: &str) -> String {
    Page::parse(html).text()
}

pub fn extract_links(html: &str, base: &Url) -> Vec<Url> {
    Page::parse(html).links(base)
}

pub fn extract_image_refs(html: &str, base: &Url) -> Vec<Url> {
    Page::parse(html).image_refs(base)
}
