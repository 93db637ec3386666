use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::template::MetaTemplate;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("no answer could be extracted from the response")]
pub struct ExtractionMiss;

/// Task-level extraction rules.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdapterConfig {
    /// Tag node whose section wraps the answer, resolved per template.
    pub answer_tag: Option<String>,
    /// Fall back to the first fenced code block.
    pub fences: bool,
}

/// Extraction rules resolved against one template's current rendering.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Adapter {
    pub header: Option<String>,
    pub footer: Option<String>,
    pub fences: bool,
}

impl Adapter {
    pub fn for_template(cfg: &AdapterConfig, mt: &MetaTemplate) -> Self {
        let tag = cfg.answer_tag.as_deref().and_then(|id| mt.tree.node(id));
        Adapter {
            header: tag.map(|t| mt.tree.format().header_for(&t.content)),
            footer: tag.and_then(|t| mt.tree.format().footer_for(&t.content)),
            fences: cfg.fences,
        }
    }
}

/// Answer region of a response: the tagged section if present, else the
/// first fenced block, else the trimmed text.
pub fn postprocess(raw: &str, adapter: &Adapter) -> Result<String, ExtractionMiss> {
    if let Some(header) = adapter.header.as_deref().filter(|h| !h.trim().is_empty()) {
        if let Some(start) = raw.find(header) {
            let body = &raw[start + header.len()..];
            let end = adapter
                .footer
                .as_deref()
                .and_then(|f| body.find(f))
                .unwrap_or(body.len());
            let inner = body[..end].trim();
            if !inner.is_empty() {
                return Ok(inner.to_string());
            }
        }
    }
    if adapter.fences {
        if let Some(block) = first_fence(raw) {
            let block = block.trim();
            if !block.is_empty() {
                return Ok(block.to_string());
            }
        }
    }
    let text = raw.trim();
    if text.is_empty() {
        Err(ExtractionMiss)
    } else {
        Ok(text.to_string())
    }
}

fn first_fence(raw: &str) -> Option<&str> {
    let open = raw.find("```")?;
    let after = &raw[open + 3..];
    let body_start = after.find('\n')? + 1;
    let body = &after[body_start..];
    Some(&body[..body.find("```").unwrap_or(body.len())])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ans() -> Adapter {
        Adapter {
            header: Some("[ANS]".into()),
            footer: Some("[\\ANS]".into()),
            fences: true,
        }
    }

    #[test]
    fn tagged_section() {
        let raw = "Let me think.\n[ANS]\nassert f(1) == 2\n[\\ANS]\nDone.";
        assert_eq!(postprocess(raw, &ans()).unwrap(), "assert f(1) == 2");
    }

    #[test]
    fn unterminated_section_runs_to_end() {
        assert_eq!(
            postprocess("[ANS] assert f(1) == 2 ", &ans()).unwrap(),
            "assert f(1) == 2"
        );
    }

    #[test]
    fn fence_then_whole_text() {
        let raw = "Here:\n```python\nassert f(3) == 4\n```\n";
        assert_eq!(postprocess(raw, &ans()).unwrap(), "assert f(3) == 4");
        assert_eq!(postprocess("assert f(3) == 4", &ans()).unwrap(), "assert f(3) == 4");
        let plain = Adapter::default();
        assert_eq!(postprocess(raw, &plain).unwrap(), raw.trim());
    }

    #[test]
    fn empty_is_a_miss() {
        assert_eq!(postprocess("", &ans()), Err(ExtractionMiss));
        assert_eq!(postprocess("  \n", &ans()), Err(ExtractionMiss));
    }

    #[test]
    fn adapter_follows_template_format() {
        let path = format!("{}/fixtures/meta/cruxeval_input.json", env!("CARGO_MANIFEST_DIR"));
        let mt = MetaTemplate::parse(&std::fs::read_to_string(path).unwrap()).unwrap();
        let cfg = AdapterConfig {
            answer_tag: Some("ANS".into()),
            fences: true,
        };
        let a = Adapter::for_template(&cfg, &mt);
        assert_eq!(a.header.as_deref(), Some("[ANS]"));
        assert_eq!(a.footer.as_deref(), Some("[\\ANS]"));
    }
}
