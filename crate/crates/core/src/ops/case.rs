use std::fmt;
use std::str::FromStr;

/// Letter-case styles for tag nodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CaseStyle {
    Upper,
    Lower,
    /// First letter of every alphanumeric run upper-cased, the rest lower.
    Title,
    /// First character upper-cased, the rest lower.
    Capitalize,
}

impl CaseStyle {
    pub const ALL: [CaseStyle; 4] = [
        CaseStyle::Upper,
        CaseStyle::Lower,
        CaseStyle::Title,
        CaseStyle::Capitalize,
    ];

    pub fn name(self) -> &'static str {
        match self {
            CaseStyle::Upper => "upper",
            CaseStyle::Lower => "lower",
            CaseStyle::Title => "title",
            CaseStyle::Capitalize => "capitalize",
        }
    }

    pub fn apply(self, s: &str) -> String {
        match self {
            CaseStyle::Upper => s.to_uppercase(),
            CaseStyle::Lower => s.to_lowercase(),
            CaseStyle::Title => {
                let mut out = String::with_capacity(s.len());
                let mut in_word = false;
                for c in s.chars() {
                    if c.is_alphanumeric() {
                        if in_word {
                            out.extend(c.to_lowercase());
                        } else {
                            out.push_str(&upper_first(c));
                        }
                        in_word = true;
                    } else {
                        out.push(c);
                        in_word = false;
                    }
                }
                out
            }
            CaseStyle::Capitalize => {
                let mut chars = s.chars();
                match chars.next() {
                    Some(first) => upper_first(first) + &chars.as_str().to_lowercase(),
                    None => String::new(),
                }
            }
        }
    }
}

/// Upper-cases `c`; when the upper-case form expands to several characters
/// only the first stays upper-case, keeping the styles idempotent.
fn upper_first(c: char) -> String {
    let mut up = c.to_uppercase();
    let first = up.next().unwrap_or(c);
    let rest: String = up.collect();
    let mut out = String::new();
    out.push(first);
    out.push_str(&rest.to_lowercase());
    out
}

impl fmt::Display for CaseStyle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for CaseStyle {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "upper" => Ok(CaseStyle::Upper),
            "lower" => Ok(CaseStyle::Lower),
            "title" => Ok(CaseStyle::Title),
            "capitalize" => Ok(CaseStyle::Capitalize),
            other => Err(format!("unknown case style {other:?}")),
        }
    }
}
