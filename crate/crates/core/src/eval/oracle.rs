use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;
use std::process::{Command, Stdio};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use super::Coordinate;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Judgement {
    pub passed: bool,
    /// In `[0, 1]`; 1.0 or 0.0 for boolean oracles.
    pub score: f64,
    #[serde(default, skip_serializing_if = "Value::is_null")]
    pub meta: Value,
}

impl Judgement {
    pub fn boolean(passed: bool) -> Self {
        Judgement {
            passed,
            score: if passed { 1.0 } else { 0.0 },
            meta: Value::Null,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum OracleError {
    #[error("judge payload lacks an expected answer")]
    MissingExpected,
    #[error("no canned verdict for {0}")]
    NoVerdict(String),
    #[error("judge command failed: {0}")]
    Command(String),
}

/// Everything an oracle may look at for one record.
pub struct JudgeInput<'a> {
    pub coord: &'a Coordinate,
    pub extracted: &'a str,
    pub payload: &'a Value,
}

pub trait Oracle: Send + Sync {
    fn judge(&self, input: &JudgeInput<'_>) -> Result<Judgement, OracleError>;
}

/// Expected answers: `payload.expected` as a string or a list of strings.
fn expected(payload: &Value) -> Result<Vec<&str>, OracleError> {
    match payload.get("expected") {
        Some(Value::String(s)) => Ok(vec![s.as_str()]),
        Some(Value::Array(items)) => {
            let v: Vec<&str> = items.iter().filter_map(Value::as_str).collect();
            if v.is_empty() {
                Err(OracleError::MissingExpected)
            } else {
                Ok(v)
            }
        }
        _ => Err(OracleError::MissingExpected),
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ExactOracle;

impl Oracle for ExactOracle {
    fn judge(&self, input: &JudgeInput<'_>) -> Result<Judgement, OracleError> {
        Ok(Judgement::boolean(expected(input.payload)?.contains(&input.extracted)))
    }
}

/// Compares after trimming, collapsing whitespace runs and (optionally)
/// lower-casing.
#[derive(Debug, Clone, Copy)]
pub struct NormalizedOracle {
    pub case_insensitive: bool,
}

impl Default for NormalizedOracle {
    fn default() -> Self {
        NormalizedOracle { case_insensitive: true }
    }
}

impl NormalizedOracle {
    fn normalize(&self, s: &str) -> String {
        let joined = s.split_whitespace().collect::<Vec<_>>().join(" ");
        if self.case_insensitive {
            joined.to_lowercase()
        } else {
            joined
        }
    }
}

impl Oracle for NormalizedOracle {
    fn judge(&self, input: &JudgeInput<'_>) -> Result<Judgement, OracleError> {
        let got = self.normalize(input.extracted);
        Ok(Judgement::boolean(
            expected(input.payload)?.iter().any(|e| self.normalize(e) == got),
        ))
    }
}

/// Runs a program per record. It receives
/// `{"extracted", "payload", "coordinate"}` as JSON on stdin; exit status 0
/// means pass. A number printed on stdout, if any, is taken as the score.
#[derive(Debug, Clone)]
pub struct CommandOracle {
    pub program: String,
    pub args: Vec<String>,
    pub timeout: Duration,
}

impl CommandOracle {
    pub fn new(program: impl Into<String>, args: Vec<String>) -> Self {
        CommandOracle {
            program: program.into(),
            args,
            timeout: Duration::from_secs(30),
        }
    }
}

impl Oracle for CommandOracle {
    fn judge(&self, input: &JudgeInput<'_>) -> Result<Judgement, OracleError> {
        let err = |e: std::io::Error| OracleError::Command(format!("{}: {e}", self.program));
        let mut child = Command::new(&self.program)
            .args(&self.args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::null())
            .spawn()
            .map_err(err)?;
        let body = json!({
            "extracted": input.extracted,
            "payload": input.payload,
            "coordinate": input.coord,
        });
        if let Some(mut stdin) = child.stdin.take() {
            // A judge may exit without reading its input.
            let _ = stdin.write_all(body.to_string().as_bytes());
        }
        let mut stdout = child.stdout.take().expect("piped");
        let reader = std::thread::spawn(move || {
            let mut s = String::new();
            let _ = stdout.read_to_string(&mut s);
            s
        });
        let started = Instant::now();
        let status = loop {
            if let Some(status) = child.try_wait().map_err(err)? {
                break status;
            }
            if started.elapsed() >= self.timeout {
                let _ = child.kill();
                let _ = child.wait();
                let mut j = Judgement::boolean(false);
                j.meta = json!({ "timeout_s": self.timeout.as_secs_f64() });
                return Ok(j);
            }
            std::thread::sleep(Duration::from_millis(5));
        };
        let out = reader.join().unwrap_or_default();
        let passed = status.success();
        let score = out
            .trim()
            .parse::<f64>()
            .ok()
            .filter(|s| (0.0..=1.0).contains(s))
            .unwrap_or(if passed { 1.0 } else { 0.0 });
        Ok(Judgement {
            passed,
            score,
            meta: json!({ "exit_code": status.code() }),
        })
    }
}

/// Canned verdicts keyed by coordinate. A verdict without a model id applies
/// to every model.
#[derive(Debug, Clone, Default)]
pub struct ReplayOracle {
    verdicts: HashMap<(Option<String>, usize, String, u32), Judgement>,
}

#[derive(Deserialize)]
struct VerdictLine {
    #[serde(default)]
    model_id: Option<String>,
    template_id: usize,
    instance_id: String,
    sample_idx: u32,
    passed: bool,
    #[serde(default)]
    score: Option<f64>,
}

impl ReplayOracle {
    pub fn insert(
        &mut self,
        model_id: Option<&str>,
        template_id: usize,
        instance_id: &str,
        sample_idx: u32,
        j: Judgement,
    ) {
        self.verdicts.insert(
            (
                model_id.map(str::to_string),
                template_id,
                instance_id.to_string(),
                sample_idx,
            ),
            j,
        );
    }

    pub fn parse_jsonl(text: &str) -> Result<Self, String> {
        let mut out = ReplayOracle::default();
        for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let v: VerdictLine = serde_json::from_str(line).map_err(|e| format!("verdict line {}: {e}", i + 1))?;
            let mut j = Judgement::boolean(v.passed);
            if let Some(s) = v.score {
                j.score = s;
            }
            out.insert(v.model_id.as_deref(), v.template_id, &v.instance_id, v.sample_idx, j);
        }
        Ok(out)
    }

    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        Self::parse_jsonl(&text)
    }
}

impl Oracle for ReplayOracle {
    fn judge(&self, input: &JudgeInput<'_>) -> Result<Judgement, OracleError> {
        let c = input.coord;
        let key = |model: Option<String>| (model, c.template_id, c.instance_id.clone(), c.sample_idx);
        self.verdicts
            .get(&key(Some(c.model_id.clone())))
            .or_else(|| self.verdicts.get(&key(None)))
            .cloned()
            .ok_or_else(|| OracleError::NoVerdict(c.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn coord() -> Coordinate {
        Coordinate {
            model_id: "m".into(),
            template_id: 0,
            instance_id: "i".into(),
            sample_idx: 0,
        }
    }

    fn judge(o: &dyn Oracle, extracted: &str, payload: Value) -> Result<Judgement, OracleError> {
        o.judge(&JudgeInput {
            coord: &coord(),
            extracted,
            payload: &payload,
        })
    }

    #[test]
    fn exact_and_normalized() {
        assert!(judge(&ExactOracle, "A", json!({"expected": "A"})).unwrap().passed);
        assert!(!judge(&ExactOracle, "a ", json!({"expected": "A"})).unwrap().passed);
        assert!(
            judge(&ExactOracle, "B", json!({"expected": ["A", "B"]}))
                .unwrap()
                .passed
        );
        assert_eq!(judge(&ExactOracle, "A", json!({})), Err(OracleError::MissingExpected));
        let n = NormalizedOracle::default();
        assert!(
            judge(&n, "  assert  f(1)\n== 2 ", json!({"expected": "ASSERT f(1) == 2"}))
                .unwrap()
                .passed
        );
    }

    #[test]
    fn replay() {
        let o = ReplayOracle::parse_jsonl(
            "{\"template_id\":0,\"instance_id\":\"i\",\"sample_idx\":0,\"passed\":true}\n\
             {\"model_id\":\"m\",\"template_id\":0,\"instance_id\":\"i\",\"sample_idx\":0,\"passed\":false}\n",
        )
        .unwrap();
        assert!(!judge(&o, "", Value::Null).unwrap().passed);
        let mut other = coord();
        other.model_id = "x".into();
        let j = o
            .judge(&JudgeInput {
                coord: &other,
                extracted: "",
                payload: &Value::Null,
            })
            .unwrap();
        assert!(j.passed);
        other.sample_idx = 3;
        assert!(o
            .judge(&JudgeInput {
                coord: &other,
                extracted: "",
                payload: &Value::Null
            })
            .is_err());
    }

    #[cfg(unix)]
    #[test]
    fn command_exit_status_and_timeout() {
        let pass = CommandOracle::new("sh", vec!["-c".into(), "cat >/dev/null; echo 0.25".into()]);
        let j = judge(&pass, "x", Value::Null).unwrap();
        assert!(j.passed);
        assert_eq!(j.score, 0.25);
        let fail = CommandOracle::new("sh", vec!["-c".into(), "exit 3".into()]);
        let j = judge(&fail, "x", Value::Null).unwrap();
        assert!(!j.passed);
        assert_eq!(j.meta["exit_code"], 3);
        let mut slow = CommandOracle::new("sleep", vec!["5".into()]);
        slow.timeout = Duration::from_millis(100);
        let j = judge(&slow, "x", Value::Null).unwrap();
        assert!(!j.passed);
        assert!(j.meta.get("timeout_s").is_some());
        assert!(judge(&CommandOracle::new("/nonexistent/judge", vec![]), "x", Value::Null).is_err());
    }
}
