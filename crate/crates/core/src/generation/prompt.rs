use serde::{Deserialize, Serialize};

use super::GenerationError;
use crate::corpus::count_tokens;

pub const ANSWER: &str = "answer.v1";
pub const EXTRACT: &str = "extract.v1";
pub const FILTER: &str = "filter.v1";

/// Marker rendered in place of an empty context.
pub const NO_CONTEXT: &str = "(no context provided)";

const TEMPLATES: &[(&str, &str)] = &[
    (ANSWER, include_str!("../../assets/prompts/answer.v1.txt")),
    (EXTRACT, include_str!("../../assets/prompts/extract.v1.txt")),
    (FILTER, include_str!("../../assets/prompts/filter.v1.txt")),
];

/// Template body with the `#` header lines removed.
pub fn template(id: &str) -> Result<String, GenerationError> {
    let raw = TEMPLATES
        .iter()
        .find(|(tid, _)| *tid == id)
        .map(|(_, body)| *body)
        .ok_or_else(|| GenerationError::UnknownTemplate(id.to_string()))?;
    Ok(raw
        .lines()
        .skip_while(|l| l.starts_with('#'))
        .collect::<Vec<_>>()
        .join("\n"))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContextPart {
    pub label: String,
    pub text: String,
}

impl ContextPart {
    pub fn new(label: impl Into<String>, text: impl Into<String>) -> Self {
        Self {
            label: label.into(),
            text: text.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prompt {
    pub template_id: String,
    pub text: String,
    pub chars: usize,
    pub tokens: usize,
}

/// Renders each part as a `[[n]] label` header line followed by its text.
pub fn render_context(parts: &[ContextPart]) -> String {
    if parts.is_empty() {
        return NO_CONTEXT.to_string();
    }
    parts
        .iter()
        .enumerate()
        .map(|(i, p)| format!("[[{}]] {}\n{}", i + 1, p.label, p.text))
        .collect::<Vec<_>>()
        .join("\n")
}

pub fn build_prompt(template_id: &str, query: &str, parts: &[ContextPart]) -> Result<Prompt, GenerationError> {
    let body = template(template_id)?;
    let context = render_context(parts);
    // single pass, so placeholder-looking text inside values stays literal
    let mut text = String::with_capacity(body.len() + query.len() + context.len());
    let mut rest = body.as_str();
    while let Some(open) = rest.find('{') {
        text.push_str(&rest[..open]);
        let tail = &rest[open..];
        if let Some(r) = tail.strip_prefix("{query}") {
            text.push_str(query);
            rest = r;
        } else if let Some(r) = tail.strip_prefix("{context}") {
            text.push_str(&context);
            rest = r;
        } else {
            text.push('{');
            rest = &tail[1..];
        }
    }
    text.push_str(rest);
    Ok(Prompt {
        template_id: template_id.to_string(),
        chars: text.chars().count(),
        tokens: count_tokens(&text),
        text,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_context_gets_marker() {
        let p = build_prompt(ANSWER, "who?", &[]).unwrap();
        assert!(p.text.contains("who?"));
        assert!(p.text.contains(NO_CONTEXT));
    }

    #[test]
    fn deterministic_and_ordered() {
        let parts = vec![ContextPart::new("a", "alpha text"), ContextPart::new("b", "beta text")];
        let p1 = build_prompt(ANSWER, "q", &parts).unwrap();
        let p2 = build_prompt(ANSWER, "q", &parts).unwrap();
        assert_eq!(p1, p2);
        assert!(p1.text.find("alpha text").unwrap() < p1.text.find("beta text").unwrap());
        assert_eq!(p1.chars, p1.text.chars().count());
        assert_eq!(p1.tokens, p1.text.split_whitespace().count());
    }

    #[test]
    fn unknown_template_is_an_error() {
        assert!(matches!(
            build_prompt("nope.v9", "q", &[]),
            Err(GenerationError::UnknownTemplate(id)) if id == "nope.v9"
        ));
    }

    #[test]
    fn header_lines_are_stripped() {
        for id in [ANSWER, EXTRACT, FILTER] {
            assert!(!template(id).unwrap().starts_with('#'));
        }
    }
}
