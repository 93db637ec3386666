//! Offline mutator that answers requests from small rewrite tables.
//!
//! It inspects the structured request (template, operation, inconsistency)
//! rather than the prompt text, and draws every choice from a seeded RNG so a
//! run is reproducible. A configurable share of responses is deliberately
//! unusable so that rejection paths are exercised.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::client::{ClientError, DecodeParams, MutatorClient, MutatorRequest};
use crate::ops::{CaseStyle, Literal, OpCall};
use crate::template::{slot_markers, ArgRole, ArgType, MetaTemplate, OpKind, OpSpec};

const PHRASES: &[(&str, &[&str])] = &[
    ("You are given", &["You have", "You receive", "Here is"]),
    ("Find", &["Determine", "Identify"]),
    ("executing", &["running", "calling", "invoking"]),
    ("leads to", &["results in", "produces"]),
    ("Express", &["Write", "Give", "Present"]),
    ("enclosed in", &["wrapped in", "placed between"]),
    ("passing", &["succeeding", "valid"]),
    ("Complete", &["Finish", "Fill in"]),
    ("provided", &["supplied", "given"]),
    ("Provide", &["Give", "Write"]),
    ("full", &["complete", "entire"]),
    ("expert", &["experienced", "skilled"]),
    ("Decide", &["Determine", "Judge"]),
    ("contains", &["has", "includes"]),
    ("reply", &["respond", "answer"]),
    ("correct", &["right", "proper"]),
    ("Write", &["Create", "Produce"]),
    ("reproduces", &["triggers", "exposes"]),
    ("described below", &["outlined below", "reported below"]),
    ("should", &["must", "needs to"]),
    ("Please write", &["Write", "Kindly write"]),
    ("following", &["below", "next"]),
    ("only contain", &["contain only", "include only"]),
    ("begin with", &["start with", "open with"]),
    ("hello", &["hi", "greetings"]),
];

const TAGS: &[(&str, &[&str])] = &[
    ("py", &["python", "code", "program", "source"]),
    ("python", &["py", "code", "program", "function"]),
    ("code", &["python", "program", "source"]),
    ("ans", &["answer", "result", "output", "solution"]),
    ("answer", &["ans", "result", "response", "solution"]),
    ("result", &["answer", "ans", "output"]),
    ("issue-id", &["bug-id", "issue", "ticket-id"]),
    ("issue-report", &["bug-report", "issue-description", "report"]),
    ("function description", &["description", "docstring", "specification"]),
    ("program under test", &["code under test", "target program", "source"]),
];

const FALLBACK_TAGS: &[&str] = &["input", "context", "section", "block", "data"];

const FORMATS_WITH_FOOTER: &[&str] = &[
    "[{}]...[/{}]",
    "[{}]...[\\{}]",
    "<{}>...</{}>",
    "¿¡!{}¡¿?...¿¡!/{}¡¿?",
    "**{}**...**/{}**",
    "({})...(/{})",
    "=== {} ===...=== end {} ===",
    "#{}#...#/{}#",
];

const FORMATS: &[&str] = &[
    "{}:",
    "## {}",
    "[{}]",
    "<{}>",
    "¿¡!{}¡¿?",
    "**{}**",
    "### {}",
    "{} -",
    ">> {}",
    "({})",
];

const DELIMITERS: &[&str] = &[
    "\n",
    "\n\n",
    "\n\n\n",
    "\n---\n",
    "\n***\n",
    "\n===\n",
    " \n",
    "\n\n---\n\n",
];

const TAIL: &str = " Be precise.";

const GARBAGE: &[&str] = &[
    "I'm sorry, but I can't help with that request.",
    "The template already looks good; no change is needed.",
];

#[derive(Debug, Clone)]
pub struct SyntheticMutator {
    rng: ChaCha8Rng,
    /// Probability of answering with an unusable response.
    pub noise: f64,
}

impl SyntheticMutator {
    pub fn new(seed: u64) -> Self {
        SyntheticMutator {
            rng: ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_0fa7_0b5e),
            noise: 0.05,
        }
    }

    pub fn with_noise(mut self, noise: f64) -> Self {
        self.noise = noise;
        self
    }

    fn pick<'a>(&mut self, items: &[&'a str]) -> Option<&'a str> {
        items.choose(&mut self.rng).copied()
    }

    fn value_for(&mut self, req: &MutatorRequest<'_>) -> String {
        let mt = req.template;
        let spec = req.spec;
        if let Some(inc) = req.inconsistency {
            let mut text = current(mt, spec);
            for s in &inc.stale_literals {
                text = text.replace(&s.old, &s.new);
            }
            return text;
        }
        match spec.kind {
            OpKind::ParaphraseText => self.paraphrase(mt, spec),
            OpKind::ParaphraseTag => self.retag(mt, spec),
            OpKind::ChangeTagCase => {
                let tag = current(mt, spec);
                let styles: Vec<&str> = CaseStyle::ALL
                    .iter()
                    .filter(|s| s.apply(&tag) != tag)
                    .map(|s| s.name())
                    .collect();
                self.pick(&styles).unwrap_or("upper").to_string()
            }
            OpKind::ChangeFormat => {
                let table = if mt.tree.has_footer() {
                    FORMATS_WITH_FOOTER
                } else {
                    FORMATS
                };
                let now = mt.tree.format().notation();
                let options: Vec<&str> = table.iter().copied().filter(|f| *f != now).collect();
                self.pick(&options).unwrap_or(table[0]).to_string()
            }
            OpKind::ChangeDelimiter => {
                let now = current(mt, spec);
                let options: Vec<&str> = DELIMITERS.iter().copied().filter(|d| *d != now).collect();
                self.pick(&options).unwrap_or("\n").to_string()
            }
        }
    }

    fn paraphrase(&mut self, mt: &MetaTemplate, spec: &OpSpec) -> String {
        let mut text = current(mt, spec);
        let protected: Vec<String> = mt
            .tree
            .node(&spec.target)
            .map(|n| n.mentions.iter().map(|m| m.literal.clone()).collect())
            .unwrap_or_default();
        let mut applicable: Vec<usize> = (0..PHRASES.len())
            .filter(|&i| find_phrase(&text, PHRASES[i].0, &protected).is_some())
            .collect();
        applicable.shuffle(&mut self.rng);
        let edits = self.rng.gen_range(1..=2usize);
        let mut changed = false;
        for &i in applicable.iter().take(edits) {
            let (from, alternatives) = PHRASES[i];
            let Some(at) = find_phrase(&text, from, &protected) else {
                continue;
            };
            let to = self.pick(alternatives).expect("non-empty");
            let to = match_initial_case(&text[at..at + from.len()], to);
            text.replace_range(at..at + from.len(), &to);
            changed = true;
        }
        if !changed {
            match text.strip_suffix(TAIL) {
                Some(stripped) => text = stripped.to_string(),
                None => text.push_str(TAIL),
            }
        }
        text
    }

    fn retag(&mut self, mt: &MetaTemplate, spec: &OpSpec) -> String {
        let tag = current(mt, spec);
        let taken: Vec<String> = mt
            .tree
            .sections()
            .filter_map(|s| mt.tree.node(&s.tag))
            .map(|n| n.content.to_lowercase())
            .collect();
        let lower = tag.to_lowercase();
        let table = TAGS
            .iter()
            .find(|(k, _)| *k == lower)
            .map(|(_, v)| *v)
            .unwrap_or(FALLBACK_TAGS);
        let options: Vec<&str> = table
            .iter()
            .chain(FALLBACK_TAGS)
            .copied()
            .filter(|o| !taken.iter().any(|t| t == o))
            .collect();
        let choice = self.pick(&options).unwrap_or("segment");
        restyle_like(&tag, choice)
    }
}

fn current(mt: &MetaTemplate, spec: &OpSpec) -> String {
    if spec.targets_format() {
        mt.tree.format().notation()
    } else {
        mt.tree
            .node(&spec.target)
            .map(|n| n.content.clone())
            .unwrap_or_default()
    }
}

/// First word-bounded occurrence of `phrase` outside slot markers and
/// protected literals.
fn find_phrase(text: &str, phrase: &str, protected: &[String]) -> Option<usize> {
    let mut blocked: Vec<(usize, usize)> = Vec::new();
    for lit in protected {
        blocked.extend(text.match_indices(lit.as_str()).map(|(i, m)| (i, i + m.len())));
    }
    if slot_markers(text).is_ok() {
        let mut from = 0;
        while let Some(start) = text[from..].find("{{") {
            let s = from + start;
            let e = text[s..].find("}}").map(|e| s + e + 2).unwrap_or(text.len());
            blocked.push((s, e));
            from = e;
        }
    }
    text.match_indices(phrase).map(|(i, _)| i).find(|&i| {
        let end = i + phrase.len();
        let before_ok = text[..i].chars().next_back().is_none_or(|c| !c.is_alphanumeric());
        let after_ok = text[end..].chars().next().is_none_or(|c| !c.is_alphanumeric());
        before_ok && after_ok && blocked.iter().all(|&(s, e)| end <= s || i >= e)
    })
}

fn match_initial_case(original: &str, replacement: &str) -> String {
    let upper = original.chars().next().is_some_and(char::is_uppercase);
    let mut chars = replacement.chars();
    match chars.next() {
        Some(c) if upper => c.to_uppercase().chain(chars).collect(),
        Some(c) => c.to_lowercase().chain(chars).collect(),
        None => String::new(),
    }
}

fn restyle_like(model: &str, word: &str) -> String {
    let letters: Vec<char> = model.chars().filter(|c| c.is_alphabetic()).collect();
    if letters.iter().all(|c| c.is_uppercase()) {
        CaseStyle::Upper.apply(word)
    } else if letters.iter().all(|c| c.is_lowercase()) {
        CaseStyle::Lower.apply(word)
    } else if CaseStyle::Title.apply(model) == model {
        CaseStyle::Title.apply(word)
    } else {
        CaseStyle::Capitalize.apply(word)
    }
}

fn args_for(spec: &OpSpec, current: &str, value: String) -> Vec<Literal> {
    spec.args
        .iter()
        .map(|a| match a.role {
            ArgRole::Value => Literal::Str(value.clone()),
            ArgRole::Target => Literal::Str(current.to_string()),
            ArgRole::Note => match a.ty {
                ArgType::Integer => Literal::Int(a.min.unwrap_or(0)),
                ArgType::Enum => Literal::Str(a.values.first().cloned().unwrap_or_default()),
                ArgType::String => Literal::Str(String::new()),
            },
        })
        .collect()
}

impl MutatorClient for SyntheticMutator {
    fn complete(&mut self, _prompt: &str, _params: &DecodeParams) -> Result<String, ClientError> {
        Err(ClientError::Config(
            "the synthetic mutator needs structured requests".into(),
        ))
    }

    fn complete_request(&mut self, req: &MutatorRequest<'_>) -> Result<String, ClientError> {
        if self.rng.gen_bool(self.noise.clamp(0.0, 1.0)) {
            return Ok(match self.rng.gen_range(0..3) {
                0 => self.pick(GARBAGE).expect("non-empty").to_string(),
                1 => format!("{}()", req.spec.name),
                _ => format!("{}(\"x\", \"y\", \"z\")", req.spec.name),
            });
        }
        let value = self.value_for(req);
        let call = OpCall::new(
            req.spec.name.clone(),
            args_for(req.spec, &current(req.template, req.spec), value),
        );
        Ok(match self.rng.gen_range(0..10) {
            0..=5 => call.to_string(),
            6..=8 => format!("```python\n{call}\n```"),
            _ => format!("Here is the operation:\n{call}"),
        })
    }
}
