//! Reads a rendered document back into its annotation content.
//!
//! Works on the display text, where every visual segment is `[IMG]`. Labels
//! and captions must not contain line breaks; bullet labels must not contain
//! `": "`, `" {"` or `", "`, since those delimit the bullet fields.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{TemplateKind, DOC_HEADER, IMG, LOCATION_PREFIX, REGIONS_HEADER, REGION_HEADER};
use crate::regions::GridCell;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("line {line}: {message}")]
pub struct InverseError {
    pub line: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ParsedLabel {
    pub name: String,
    pub description: Option<String>,
}

/// Attribute or relationship bullet: label, its members, and description.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ParsedGroup {
    pub name: String,
    pub members: Vec<String>,
    pub description: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParsedRegion {
    pub location: GridCell,
    pub labels: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParsedDocument {
    pub kind: TemplateKind,
    pub has_header: bool,
    pub with_descriptions: bool,
    pub caption: Option<String>,
    pub localized_narrative: Option<String>,
    pub objects: Vec<ParsedLabel>,
    pub attributes: Vec<ParsedGroup>,
    pub relationships: Vec<ParsedGroup>,
    pub regions: Vec<ParsedRegion>,
}

#[derive(Clone, Copy, PartialEq)]
enum Section {
    None,
    Objects,
    Attributes,
    Relationships,
}

fn err(line: usize, message: impl Into<String>) -> InverseError {
    InverseError { line: line + 1, message: message.into() }
}

fn parse_group(body: &str, line: usize) -> Result<ParsedGroup, InverseError> {
    let open = body.find(" {").ok_or_else(|| err(line, "group bullet without `{`"))?;
    let close = body[open..].find('}').map(|i| open + i).ok_or_else(|| err(line, "unterminated `{`"))?;
    let inner = &body[open + 2..close];
    let rest = &body[close + 1..];
    let description = match rest {
        "" => None,
        r => Some(r.strip_prefix(" : ").ok_or_else(|| err(line, "expected ` : ` before description"))?.to_string()),
    };
    let members = if inner.is_empty() { Vec::new() } else { inner.split(", ").map(str::to_string).collect() };
    Ok(ParsedGroup { name: body[..open].to_string(), members, description })
}

/// Inverse of [`super::render_document`] on the display text.
pub fn parse_document(text: &str) -> Result<ParsedDocument, InverseError> {
    let lines: Vec<&str> = text.strip_suffix('\n').unwrap_or(text).split('\n').collect();
    let mut blocks: Vec<(usize, Vec<&str>)> = Vec::new();
    let mut start = 0;
    for (i, l) in lines.iter().enumerate() {
        if l.is_empty() {
            blocks.push((start, lines[start..i].to_vec()));
            start = i + 1;
        }
    }
    blocks.push((start, lines[start..].to_vec()));

    let image_line = format!("Image: {IMG}");
    let region_line = format!("Region: {IMG}");
    let mut doc = ParsedDocument {
        kind: TemplateKind::ImageFirst,
        has_header: false,
        with_descriptions: false,
        caption: None,
        localized_narrative: None,
        objects: Vec::new(),
        attributes: Vec::new(),
        relationships: Vec::new(),
        regions: Vec::new(),
    };
    let mut seen_image = false;
    let mut iter = blocks.into_iter().peekable();

    if let Some((_, b)) = iter.peek() {
        if b.as_slice() == [DOC_HEADER] {
            doc.has_header = true;
            iter.next();
        }
    }

    let (first, part) = iter.next().ok_or_else(|| err(0, "empty document"))?;
    let mut section = Section::None;
    for (k, l) in part.iter().enumerate() {
        let ln = first + k;
        if *l == image_line {
            if seen_image {
                return Err(err(ln, "second image line"));
            }
            seen_image = true;
            doc.kind = if k == 0 { TemplateKind::ImageFirst } else { TemplateKind::TextFirst };
            if k != 0 && k + 1 != part.len() {
                return Err(err(ln, "image line must open or close the image part"));
            }
        } else if let Some(c) = l.strip_prefix("Caption: ") {
            doc.caption = Some(c.to_string());
        } else if let Some(c) = l.strip_prefix("Localized narrative caption: ") {
            doc.localized_narrative = Some(c.to_string());
        } else if let Some(body) = l.strip_prefix("- ") {
            match section {
                Section::None => return Err(err(ln, "bullet outside a label section")),
                Section::Objects => {
                    let (name, description) = match (doc.with_descriptions, body.split_once(": ")) {
                        (true, Some((n, d))) => (n.to_string(), Some(d.to_string())),
                        _ => (body.to_string(), None),
                    };
                    doc.objects.push(ParsedLabel { name, description });
                }
                Section::Attributes => doc.attributes.push(parse_group(body, ln)?),
                Section::Relationships => doc.relationships.push(parse_group(body, ln)?),
            }
        } else {
            let (heading, described) = match l.strip_suffix(" and their descriptions:") {
                Some(h) => (h, true),
                None => (l.strip_suffix(':').ok_or_else(|| err(ln, format!("unexpected line `{l}`")))?, false),
            };
            section = match heading {
                "Objects" => Section::Objects,
                "Attributes of objects" => Section::Attributes,
                "Relationships between objects" => Section::Relationships,
                _ => return Err(err(ln, format!("unknown heading `{l}`"))),
            };
            doc.with_descriptions |= described;
        }
    }
    if !seen_image {
        return Err(err(first, "image part without an image line"));
    }
    let mut kind_known = part.len() > 1;

    if let Some((ln, b)) = iter.next() {
        if b.as_slice() != [REGIONS_HEADER] {
            return Err(err(ln, "expected the region overview heading"));
        }
        while let Some((ln, b)) = iter.next() {
            if b.as_slice() != [REGION_HEADER] {
                return Err(err(ln, "expected a region heading"));
            }
            let (ln, body) = iter.next().ok_or_else(|| err(ln, "region heading without a body"))?;
            let text: Vec<&str> = body.iter().copied().filter(|l| *l != region_line).collect();
            if body.len() != text.len() + 1 {
                return Err(err(ln, "region body needs exactly one region line"));
            }
            let region_first = body[0] == region_line;
            if !kind_known {
                doc.kind = if region_first { TemplateKind::ImageFirst } else { TemplateKind::TextFirst };
                kind_known = true;
            }
            if region_first != (doc.kind == TemplateKind::ImageFirst) || (!region_first && body.last() != Some(&region_line.as_str())) {
                return Err(err(ln, "region line misplaced for the template"));
            }
            let loc = text
                .first()
                .and_then(|l| l.strip_prefix(LOCATION_PREFIX))
                .ok_or_else(|| err(ln, "missing location line"))?;
            let location = GridCell::from_name(loc).ok_or_else(|| err(ln, format!("unknown location `{loc}`")))?;
            if text.get(1) != Some(&"Objects:") {
                return Err(err(ln, "missing region object list"));
            }
            let labels = text[2..]
                .iter()
                .map(|l| l.strip_prefix("- ").map(str::to_string).ok_or_else(|| err(ln, "bad region bullet")))
                .collect::<Result<_, _>>()?;
            doc.regions.push(ParsedRegion { location, labels });
        }
    }
    Ok(doc)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_malformed_input() {
        assert!(parse_document("").is_err());
        assert!(parse_document("Caption: hi\n").is_err());
        assert!(parse_document("Image: [IMG]\n- stray\n").is_err());
        assert!(parse_document("Image: [IMG]\nImage: [IMG]\n").is_err());
    }

    #[test]
    fn reads_groups() {
        let g = parse_group("red {car, bus} : a colour", 0).unwrap();
        assert_eq!(g.members, vec!["car", "bus"]);
        assert_eq!(g.description.as_deref(), Some("a colour"));
        assert!(parse_group("red {car", 0).is_err());
    }
}
