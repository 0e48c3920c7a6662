//! Lenient HTML helpers shared by ingestion and preprocessing. Parsing is
//! best-effort: malformed markup degrades to whatever text the parser can
//! recover, never an error.

use ego_tree::NodeRef;
use scraper::{Html, Node, Selector};

/// Elements whose boundaries must not glue adjacent words together.
const BLOCK_ELEMENTS: &[&str] = &[
    "p", "div", "li", "ul", "ol", "br", "pre", "blockquote", "h1", "h2", "h3", "h4", "h5", "h6",
    "tr", "td", "th", "table", "hr", "section", "article",
];

/// Strip tags from an HTML fragment, dropping the content of `<code>`
/// elements entirely. Block-element boundaries become single spaces.
pub fn strip_tags_dropping_code(fragment: &str) -> String {
    if !fragment.contains('<') && !fragment.contains('&') {
        return fragment.to_string(); // fast path: plain text
    }
    let doc = Html::parse_fragment(fragment);
    let mut out = String::with_capacity(fragment.len());
    collect_text(doc.tree.root(), &mut out);
    out
}

fn collect_text(node: NodeRef<'_, Node>, out: &mut String) {
    for child in node.children() {
        match child.value() {
            Node::Text(text) => out.push_str(text),
            Node::Element(el) => {
                let name = el.name();
                if name == "code" || name == "script" || name == "style" {
                    out.push(' ');
                    continue;
                }
                if BLOCK_ELEMENTS.contains(&name) {
                    out.push(' ');
                }
                collect_text(child, out);
                if BLOCK_ELEMENTS.contains(&name) {
                    out.push(' ');
                }
            }
            _ => {}
        }
    }
}

/// Inner HTML of every paragraph element, in document order. Returning the
/// raw inner markup (not text) lets the cleaning pipeline handle inline
/// `<code>` the same way for posts and documentation.
pub fn paragraph_contents(document: &str) -> Vec<String> {
    let doc = Html::parse_document(document);
    let selector = Selector::parse("p").expect("static selector");
    doc.select(&selector).map(|p| p.inner_html()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn strips_tags_and_code() {
        let text = strip_tags_dropping_code("<p>Use <code>Vec::new()</code> to start.</p>");
        let words: Vec<&str> = text.split_whitespace().collect();
        assert_eq!(words, ["Use", "to", "start."]);
    }

    #[test]
    fn plain_text_passes_through() {
        assert_eq!(strip_tags_dropping_code("no markup here"), "no markup here");
    }

    #[test]
    fn block_boundaries_do_not_glue_words() {
        let text = strip_tags_dropping_code("<p>end</p><p>Start</p>");
        assert!(text.contains("end Start") || text.contains("end  Start"));
    }

    #[test]
    fn inline_elements_do_not_split_words() {
        let text = strip_tags_dropping_code("wo<em>r</em>d");
        assert_eq!(text.trim(), "word");
    }

    #[test]
    fn malformed_html_is_best_effort() {
        let text = strip_tags_dropping_code("<p>unclosed <b>bold and <code>x");
        assert!(text.contains("unclosed"));
        assert!(text.contains("bold and"));
        assert!(!text.contains('x'));
    }

    #[test]
    fn paragraphs_in_document_order() {
        let html = "<html><body><h1>T</h1><p>a b.</p><div><p>c d.</p></div></body></html>";
        assert_eq!(paragraph_contents(html), vec!["a b.", "c d."]);
    }

    #[test]
    fn no_paragraphs_yields_empty() {
        assert!(paragraph_contents("<html><body><h1>x</h1></body></html>").is_empty());
    }
}
