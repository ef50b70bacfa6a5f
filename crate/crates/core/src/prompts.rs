//! Versioned prompt templates for the four agents.
//!
//! Each prompt opens with a tag line (`[OUTLINE]`, `[SEGMENT]`, `[REVIEW]`,
//! `[COMPLETE]`) and carries its data in `<<<NAME ... NAME>>>` sections so
//! that both models and the offline stub can locate the inputs.

use sha2::{Digest, Sha256};

pub const TEMPLATE_VERSION: &str = "1";

pub const OUTLINE: &str = include_str!("../prompts/outline.txt");
pub const OUTLINE_REMINDER: &str = include_str!("../prompts/outline_reminder.txt");
pub const SEGMENT: &str = include_str!("../prompts/segment.txt");
pub const REVIEW: &str = include_str!("../prompts/review.txt");
pub const COMPLETE: &str = include_str!("../prompts/complete.txt");

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PromptTag {
    Outline,
    Segment,
    Review,
    Complete,
}

impl PromptTag {
    pub fn parse(prompt: &str) -> Option<PromptTag> {
        let first = prompt.trim_start().lines().next()?.trim();
        match first {
            "[OUTLINE]" => Some(PromptTag::Outline),
            "[SEGMENT]" => Some(PromptTag::Segment),
            "[REVIEW]" => Some(PromptTag::Review),
            "[COMPLETE]" => Some(PromptTag::Complete),
            _ => None,
        }
    }
}

/// SHA-256 over the version and every template, hex encoded.
pub fn template_hash() -> String {
    let mut h = Sha256::new();
    for part in [TEMPLATE_VERSION, OUTLINE, OUTLINE_REMINDER, SEGMENT, REVIEW, COMPLETE] {
        h.update(part.as_bytes());
        h.update([0u8]);
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// Substitutes `{key}` placeholders in a single pass, so substituted values
/// are never re-scanned for placeholders.
pub fn render(template: &str, vars: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len() * 2);
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        let hit = after.find('}').and_then(|close| {
            let key = &after[..close];
            vars.iter()
                .find(|(k, _)| *k == key)
                .map(|(_, v)| (close, *v))
        });
        match hit {
            Some((close, value)) => {
                out.push_str(value);
                rest = &after[close + 1..];
            }
            None => {
                out.push('{');
                rest = after;
            }
        }
    }
    out.push_str(rest);
    out
}

/// Body of the `<<<NAME ... NAME>>>` section, without its delimiter lines.
pub fn section<'a>(prompt: &'a str, name: &str) -> Option<&'a str> {
    let open = format!("<<<{name}\n");
    let close = format!("\n{name}>>>");
    let start = prompt.find(&open)? + open.len();
    let len = prompt[start..].find(&close)?;
    Some(&prompt[start..start + len])
}

/// `[i] text` lines; newlines inside a sentence are flattened to spaces.
pub fn numbered_line(index: usize, content: &str) -> String {
    let flat: String = content
        .chars()
        .map(|c| if c == '\n' || c == '\r' { ' ' } else { c })
        .collect();
    format!("[{index}] {flat}")
}

/// Parses `[i] text` lines back into `(i, text)` pairs.
pub fn parse_numbered_lines(body: &str) -> Vec<(usize, &str)> {
    body.lines()
        .filter_map(|line| {
            let line = line.trim_start();
            let rest = line.strip_prefix('[')?;
            let close = rest.find(']')?;
            let idx = rest[..close].trim().parse().ok()?;
            Some((idx, rest[close + 1..].trim()))
        })
        .collect()
}
