use alloc::borrow::Cow;
use alloc::string::String;

/// Body of the first `<DOCUMENT>` in an SGML submission wrapper, or the whole
/// input when there is no wrapper. Exhibits follow the primary document and
/// repeat item headings, so they are never searched.
pub fn primary_document_text(body: &str) -> &str {
    let Some(doc_start) = find_ascii_ci(body, "<document>") else {
        return body;
    };
    let rest = &body[doc_start..];
    let doc = match find_ascii_ci(rest, "</document>") {
        Some(end) => &rest[..end],
        None => rest,
    };
    match find_ascii_ci(doc, "<text>") {
        Some(t) => {
            let inner = &doc[t + "<text>".len()..];
            match find_ascii_ci(inner, "</text>") {
                Some(end) => &inner[..end],
                None => inner,
            }
        }
        None => doc,
    }
}

/// True when the text contains markup tags that need stripping.
pub fn looks_like_html(text: &str) -> bool {
    let bytes = text.as_bytes();
    bytes.windows(2).any(|w| {
        w[0] == b'<' && (w[1].is_ascii_alphabetic() || w[1] == b'/' || w[1] == b'!')
    })
}

const BLOCK_TAGS: &[&str] = &[
    "p", "div", "br", "tr", "li", "ul", "ol", "table", "h1", "h2", "h3", "h4", "h5", "h6",
    "hr", "pre", "page", "title", "body", "html", "center", "blockquote",
];

const CELL_TAGS: &[&str] = &["td", "th"];

/// Removes markup: tags are dropped (block-level tags become line breaks so
/// headings stay at line starts), `script`/`style` contents are discarded, and
/// character entities are decoded.
pub fn strip_html(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut rest = text;
    while let Some(lt) = rest.find('<') {
        push_decoded(&mut out, &rest[..lt]);
        rest = &rest[lt..];
        if rest.starts_with("<!--") {
            rest = match rest.find("-->") {
                Some(end) => &rest[end + 3..],
                None => "",
            };
            continue;
        }
        let Some(gt) = rest.find('>') else {
            // Unterminated '<' is literal text.
            push_decoded(&mut out, rest);
            rest = "";
            break;
        };
        let tag = &rest[1..gt];
        let name = tag_name(tag);
        rest = &rest[gt + 1..];
        if !tag.starts_with('/') && (name.eq_ignore_ascii_case("script") || name.eq_ignore_ascii_case("style")) {
            let closing = if name.eq_ignore_ascii_case("script") { "</script" } else { "</style" };
            rest = match find_ascii_ci(rest, closing) {
                Some(end) => match rest[end..].find('>') {
                    Some(gt) => &rest[end + gt + 1..],
                    None => "",
                },
                None => "",
            };
            continue;
        }
        if BLOCK_TAGS.iter().any(|b| name.eq_ignore_ascii_case(b)) {
            out.push('\n');
        } else if CELL_TAGS.iter().any(|c| name.eq_ignore_ascii_case(c)) {
            out.push(' ');
        }
    }
    push_decoded(&mut out, rest);
    out
}

fn tag_name(tag: &str) -> &str {
    let t = tag.trim_start_matches('/').trim_start();
    let end = t
        .find(|c: char| c.is_whitespace() || c == '/' || c == '>')
        .unwrap_or(t.len());
    &t[..end]
}

/// Appends `text` with character entities decoded.
fn push_decoded(out: &mut String, text: &str) {
    let mut rest = text;
    while let Some(amp) = rest.find('&') {
        out.push_str(&rest[..amp]);
        rest = &rest[amp..];
        let semi = rest.as_bytes()[..rest.len().min(12)]
            .iter()
            .position(|&b| b == b';');
        match semi.and_then(|s| decode_entity(&rest[1..s]).map(|c| (s, c))) {
            Some((s, c)) => {
                out.push(c);
                rest = &rest[s + 1..];
            }
            None => {
                out.push('&');
                rest = &rest[1..];
            }
        }
    }
    out.push_str(rest);
}

fn decode_entity(name: &str) -> Option<char> {
    if let Some(num) = name.strip_prefix('#') {
        let code = match num.strip_prefix(['x', 'X']) {
            Some(hex) => u32::from_str_radix(hex, 16).ok()?,
            None => num.parse().ok()?,
        };
        return char::from_u32(code);
    }
    Some(match name {
        "amp" => '&',
        "lt" => '<',
        "gt" => '>',
        "quot" => '"',
        "apos" => '\'',
        "nbsp" => ' ',
        "ndash" => '\u{2013}',
        "mdash" => '\u{2014}',
        "lsquo" => '\u{2018}',
        "rsquo" => '\u{2019}',
        "ldquo" => '\u{201C}',
        "rdquo" => '\u{201D}',
        "bull" => '\u{2022}',
        "sect" => '\u{00A7}',
        "reg" => '\u{00AE}',
        "copy" => '\u{00A9}',
        "trade" => '\u{2122}',
        _ => return None,
    })
}

/// ASCII case-insensitive substring search.
pub(crate) fn find_ascii_ci(haystack: &str, needle: &str) -> Option<usize> {
    let h = haystack.as_bytes();
    let n = needle.as_bytes();
    if n.is_empty() {
        return Some(0);
    }
    h.windows(n.len()).position(|w| w.eq_ignore_ascii_case(n))
}

pub(crate) fn text_for_sectioning(body: &str) -> Cow<'_, str> {
    let primary = primary_document_text(body);
    if looks_like_html(primary) {
        Cow::Owned(strip_html(primary))
    } else {
        Cow::Borrowed(primary)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn strips_tags_and_decodes_entities() {
        let html = "<html><body><p>Item&nbsp;1. <b>Business</b></p><p>R&amp;D &#8212; spend</p></body></html>";
        let text = strip_html(html);
        assert!(text.contains("\nItem 1. Business\n"));
        assert!(text.contains("R&D \u{2014} spend"));
    }

    #[test]
    fn drops_script_and_style_blocks() {
        let html = "<style>p { color: red }</style><p>Visible</p><script type=\"x\">var a = '<p>';</script>tail";
        let text = strip_html(html);
        assert!(!text.contains("color"));
        assert!(!text.contains("var a"));
        assert!(text.contains("Visible"));
        assert!(text.ends_with("tail"));
    }

    #[test]
    fn unknown_entities_stay_literal() {
        assert_eq!(strip_html("<i>AT&T &bogus; co</i>"), "AT&T &bogus; co");
    }

    #[test]
    fn picks_first_sgml_document() {
        let body = "<SEC-HEADER>hdr</SEC-HEADER>\n<DOCUMENT>\n<TYPE>10-K\n<TEXT>\nmain body\n</TEXT>\n</DOCUMENT>\n<DOCUMENT>\n<TEXT>exhibit</TEXT></DOCUMENT>";
        assert_eq!(primary_document_text(body), "\nmain body\n");
        assert_eq!(primary_document_text("plain"), "plain");
    }

    #[test]
    fn plain_text_is_not_html() {
        assert!(!looks_like_html("revenue < costs and 3<4"));
        assert!(looks_like_html("a <div>b</div>"));
    }
}
