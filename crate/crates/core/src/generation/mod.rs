//! Post-retrieval answer generation in seven single- and multi-step modes,
//! with exact accounting of every prompt sent to the model.

pub mod prompt;

use serde::{Deserialize, Serialize};

use crate::corpus::count_tokens;
use crate::index::HierIndex;
use crate::retriever::RetrievalResult;
use crate::services::{ChatMessage, ChatModel, ChatRequest, ServiceError};
pub use prompt::{build_prompt, ContextPart, Prompt};

#[derive(Debug, thiserror::Error)]
pub enum GenerationError {
    #[error("unknown prompt template {0:?}")]
    UnknownTemplate(String),
    #[error("document {0} is not in the index")]
    MissingDocument(String),
    #[error("chat call for step {step} failed: {source}")]
    Chat {
        step: &'static str,
        #[source]
        source: ServiceError,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GenerationMode {
    /// Answer from the merged chunks.
    Rb,
    /// Answer from the complete parent documents.
    Rl,
    /// Extract from full documents, answer from chunks + extraction.
    FullExt,
    /// Filter the merged chunks, answer from the kept ones.
    Fil,
    /// Full-document extraction plus chunk filtering.
    FullEf,
    /// Extract from the merged chunks, answer from chunks + extraction.
    RbExt,
    /// Chunk extraction plus chunk filtering.
    RbEf,
}

impl GenerationMode {
    pub const ALL: [GenerationMode; 7] = [
        GenerationMode::Rb,
        GenerationMode::Rl,
        GenerationMode::FullExt,
        GenerationMode::Fil,
        GenerationMode::FullEf,
        GenerationMode::RbExt,
        GenerationMode::RbEf,
    ];

    pub fn name(self) -> &'static str {
        match self {
            GenerationMode::Rb => "rb",
            GenerationMode::Rl => "rl",
            GenerationMode::FullExt => "full_ext",
            GenerationMode::Fil => "fil",
            GenerationMode::FullEf => "full_ef",
            GenerationMode::RbExt => "rb_ext",
            GenerationMode::RbEf => "rb_ef",
        }
    }

    /// Number of model calls the mode makes.
    pub fn call_count(self) -> usize {
        match self {
            GenerationMode::Rb | GenerationMode::Rl => 1,
            GenerationMode::FullExt | GenerationMode::Fil | GenerationMode::RbExt => 2,
            GenerationMode::FullEf | GenerationMode::RbEf => 3,
        }
    }

    fn extracts_from_full_docs(self) -> bool {
        matches!(self, GenerationMode::FullExt | GenerationMode::FullEf)
    }
}

impl std::fmt::Display for GenerationMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for GenerationMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        GenerationMode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| format!("unknown generation mode {s:?}"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerationOptions {
    pub model: String,
    pub max_tokens: u32,
    pub temperature: f64,
}

impl Default for GenerationOptions {
    fn default() -> Self {
        Self {
            model: "mock".into(),
            max_tokens: 256,
            temperature: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepLog {
    pub step: String,
    pub template_id: String,
    pub prompt_chars: usize,
    pub prompt_tokens: usize,
    pub response_chars: usize,
    pub response_tokens: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerationOutcome {
    pub answer: String,
    pub mode: GenerationMode,
    pub step_log: Vec<StepLog>,
    pub cumulative_input_chars: usize,
    pub cumulative_input_tokens: usize,
    /// Set when the filter dropped every chunk and all were kept instead.
    pub filter_fallback: bool,
}

impl GenerationOutcome {
    /// Recomputes the cumulative input from the step log.
    pub fn recount(&self) -> (usize, usize) {
        self.step_log
            .iter()
            .fold((0, 0), |(c, t), s| (c + s.prompt_chars, t + s.prompt_tokens))
    }
}

struct Session<'a> {
    llm: &'a dyn ChatModel,
    opts: &'a GenerationOptions,
    log: Vec<StepLog>,
}

impl Session<'_> {
    fn call(&mut self, step: &'static str, prompt: Prompt) -> Result<String, GenerationError> {
        let req = ChatRequest {
            model: self.opts.model.clone(),
            messages: vec![ChatMessage::user(prompt.text)],
            temperature: self.opts.temperature,
            max_tokens: self.opts.max_tokens,
        };
        let out = self
            .llm
            .complete(&req)
            .map_err(|source| GenerationError::Chat { step, source })?;
        self.log.push(StepLog {
            step: step.to_string(),
            template_id: prompt.template_id,
            prompt_chars: prompt.chars,
            prompt_tokens: prompt.tokens,
            response_chars: out.chars().count(),
            response_tokens: count_tokens(&out),
        });
        Ok(out)
    }
}

/// Result of one filtering call.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FilterOutcome {
    /// Indices into the input, in input order.
    pub kept: Vec<usize>,
    pub fallback: bool,
}

/// Reads `[[n]] keep|drop` lines. Unparseable or missing judgments keep.
pub fn parse_filter_response(response: &str, n: usize) -> FilterOutcome {
    let mut keep = vec![true; n];
    for line in response.lines() {
        let line = line.trim();
        let Some(rest) = line.strip_prefix('[') else { continue };
        let rest = rest.trim_start_matches('[');
        let Some(close) = rest.find(']') else { continue };
        let Ok(i) = rest[..close].trim().parse::<usize>() else { continue };
        let verdict = rest[close..].trim_start_matches(']').trim().to_ascii_lowercase();
        if (1..=n).contains(&i) && verdict.starts_with("drop") {
            keep[i - 1] = false;
        }
    }
    let kept: Vec<usize> = (0..n).filter(|&i| keep[i]).collect();
    if kept.is_empty() && n > 0 {
        return FilterOutcome {
            kept: (0..n).collect(),
            fallback: true,
        };
    }
    FilterOutcome { kept, fallback: false }
}

fn run_filter(
    session: &mut Session<'_>,
    query: &str,
    chunks: &[ContextPart],
) -> Result<FilterOutcome, GenerationError> {
    let prompt = build_prompt(prompt::FILTER, query, chunks)?;
    let out = session.call("filter", prompt)?;
    let res = parse_filter_response(&out, chunks.len());
    if res.fallback {
        tracing::warn!("filter dropped every chunk; keeping all");
    }
    Ok(res)
}

/// Asks the model which chunks are relevant and returns the kept subset in
/// input order. If everything is dropped, everything is kept.
pub fn filter_chunks(
    query: &str,
    chunks: &[ContextPart],
    llm: &dyn ChatModel,
    opts: &GenerationOptions,
) -> Result<(Vec<ContextPart>, bool), GenerationError> {
    let mut session = Session {
        llm,
        opts,
        log: Vec::new(),
    };
    let res = run_filter(&mut session, query, chunks)?;
    Ok((res.kept.iter().map(|&i| chunks[i].clone()).collect(), res.fallback))
}

/// Merged chunks as labeled context parts.
pub fn merged_parts(result: &RetrievalResult) -> Vec<ContextPart> {
    result
        .merged
        .iter()
        .map(|m| ContextPart::new(m.doc_id.clone(), m.render()))
        .collect()
}

/// Complete parent documents of the merged chunks, in result order.
pub fn document_parts(result: &RetrievalResult, index: &HierIndex) -> Result<Vec<ContextPart>, GenerationError> {
    result
        .merged
        .iter()
        .map(|m| {
            index
                .document(&m.doc_id)
                .map(|d| ContextPart::new(d.doc_id.clone(), d.text.clone()))
                .ok_or_else(|| GenerationError::MissingDocument(m.doc_id.clone()))
        })
        .collect()
}

pub fn generate(
    query: &str,
    result: &RetrievalResult,
    index: &HierIndex,
    mode: GenerationMode,
    llm: &dyn ChatModel,
    opts: &GenerationOptions,
) -> Result<GenerationOutcome, GenerationError> {
    let mut s = Session {
        llm,
        opts,
        log: Vec::new(),
    };
    let chunks = merged_parts(result);
    let mut filter_fallback = false;

    let answer_parts: Vec<ContextPart> = match mode {
        GenerationMode::Rb => chunks,
        GenerationMode::Rl => document_parts(result, index)?,
        GenerationMode::Fil => {
            let f = run_filter(&mut s, query, &chunks)?;
            filter_fallback = f.fallback;
            f.kept.iter().map(|&i| chunks[i].clone()).collect()
        }
        GenerationMode::FullExt | GenerationMode::RbExt | GenerationMode::FullEf | GenerationMode::RbEf => {
            let source = if mode.extracts_from_full_docs() {
                document_parts(result, index)?
            } else {
                chunks.clone()
            };
            let extracted = s.call("extract", build_prompt(prompt::EXTRACT, query, &source)?)?;
            let mut parts = if matches!(mode, GenerationMode::FullEf | GenerationMode::RbEf) {
                let f = run_filter(&mut s, query, &chunks)?;
                filter_fallback = f.fallback;
                f.kept.iter().map(|&i| chunks[i].clone()).collect()
            } else {
                chunks
            };
            parts.push(ContextPart::new("extracted", extracted));
            parts
        }
    };

    let answer = s.call("answer", build_prompt(prompt::ANSWER, query, &answer_parts)?)?;
    let (chars, tokens) = s
        .log
        .iter()
        .fold((0, 0), |(c, t), l| (c + l.prompt_chars, t + l.prompt_tokens));
    Ok(GenerationOutcome {
        answer: answer.trim().to_string(),
        mode,
        step_log: s.log,
        cumulative_input_chars: chars,
        cumulative_input_tokens: tokens,
        filter_fallback,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::services::mock::EchoChat;

    #[test]
    fn mode_names_round_trip() {
        for m in GenerationMode::ALL {
            assert_eq!(m.name().parse::<GenerationMode>(), Ok(m));
            assert_eq!(serde_json::to_string(&m).unwrap(), format!("\"{}\"", m.name()));
        }
    }

    #[test]
    fn filter_parse_defaults_to_keep() {
        let r = parse_filter_response("[[1]] drop\ngarbage\n[[3]] KEEP", 3);
        assert_eq!(r.kept, vec![1, 2]);
        assert!(!r.fallback);
        let all = parse_filter_response("[1] drop\n[2] drop", 2);
        assert_eq!(all.kept, vec![0, 1]);
        assert!(all.fallback);
    }

    #[test]
    fn mock_filter_example() {
        let chunks = vec![ContextPart::new("d1", "the fox"), ContextPart::new("d2", "a dog")];
        let (kept, fallback) = filter_chunks("fox", &chunks, &EchoChat::default(), &GenerationOptions::default()).unwrap();
        assert_eq!(kept, vec![chunks[0].clone()]);
        assert!(!fallback);

        let (kept, fallback) = filter_chunks("cat", &chunks, &EchoChat::default(), &GenerationOptions::default()).unwrap();
        assert_eq!(kept, chunks);
        assert!(fallback);

        let single = vec![ContextPart::new("d1", "the fox")];
        let (kept, _) = filter_chunks("fox", &single, &EchoChat::default(), &GenerationOptions::default()).unwrap();
        assert_eq!(kept, single);
    }
}
