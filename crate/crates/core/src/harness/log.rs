//! Decision log with a canonical byte-stable serialization.
//!
//! Each record is one JSON line with keys sorted and every float rounded to
//! six decimal places, so two logs are equal iff their bytes are.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::turntaking::{FsttmState, TurnAction, TurnInput};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Decision {
    /// Backchannel probability of a decision frame without a trigger.
    Frame {
        p_bc: f64,
    },
    Backchannel {
        form: String,
        text: String,
        p_bc: f64,
    },
    Trp {
        p_trp: f64,
        p_take_given_trp: f64,
        p_take: f64,
        ipu_start_ms: u64,
        ipu_end_ms: u64,
    },
    Turn {
        input: TurnInput,
        from: FsttmState,
        to: FsttmState,
        action: TurnAction,
        deadline_ms: Option<u64>,
    },
    System {
        speaking: bool,
    },
    Response {
        kind: String,
        text: String,
        template: String,
        focus: Option<String>,
        polarity: Option<f64>,
    },
    Question {
        kind: String,
        text: String,
    },
    InterviewEnd {
        report: Value,
    },
    Engagement {
        score: f64,
        counts: [u32; 4],
    },
    Error {
        code: String,
        msg: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub t_ms: u64,
    pub module: String,
    pub decision: Decision,
    /// Short hash of the inputs the decision was computed from.
    pub inputs: String,
}

/// Hex SHA-256 prefix of the canonical form of `inputs`.
pub fn digest(inputs: &Value) -> String {
    let h = Sha256::digest(canonical_string(inputs).as_bytes());
    h.iter().take(8).map(|b| format!("{b:02x}")).collect()
}

fn round6(x: f64) -> f64 {
    let r = (x * 1e6).round() / 1e6;
    if r == 0.0 {
        0.0
    } else {
        r
    }
}

/// Compact JSON with object keys sorted and floats rounded to 1e-6.
pub fn canonical_string(v: &Value) -> String {
    let mut out = String::new();
    write_canonical(v, &mut out);
    out
}

fn write_canonical(v: &Value, out: &mut String) {
    match v {
        Value::Object(map) => {
            let mut keys: Vec<&String> = map.keys().collect();
            keys.sort();
            out.push('{');
            for (i, k) in keys.into_iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                out.push_str(&Value::String(k.clone()).to_string());
                out.push(':');
                write_canonical(&map[k], out);
            }
            out.push('}');
        }
        Value::Array(items) => {
            out.push('[');
            for (i, item) in items.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                write_canonical(item, out);
            }
            out.push(']');
        }
        Value::Number(n) if n.is_f64() => {
            let x = round6(n.as_f64().unwrap_or(0.0));
            match serde_json::Number::from_f64(x) {
                Some(num) => out.push_str(&num.to_string()),
                None => out.push_str("null"),
            }
        }
        other => out.push_str(&other.to_string()),
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct DecisionLog {
    pub records: Vec<LogRecord>,
}

impl DecisionLog {
    pub fn push(&mut self, t_ms: u64, module: &str, decision: Decision, inputs: &Value) {
        self.records.push(LogRecord {
            t_ms,
            module: module.to_string(),
            decision,
            inputs: digest(inputs),
        });
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn record_line(r: &LogRecord) -> String {
        let v = serde_json::to_value(r).expect("log records serialize");
        canonical_string(&v)
    }

    pub fn to_jsonl(&self) -> String {
        let mut s = String::new();
        for r in &self.records {
            s.push_str(&Self::record_line(r));
            s.push('\n');
        }
        s
    }

    pub fn write_to(&self, path: &Path) -> std::io::Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        f.write_all(self.to_jsonl().as_bytes())?;
        f.flush()
    }

    pub fn parse(text: &str) -> Result<Self, String> {
        let mut records = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            records.push(serde_json::from_str(line).map_err(|e| format!("log line {}: {e}", i + 1))?);
        }
        Ok(Self { records })
    }

    pub fn read(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        Self::parse(&text)
    }

    pub fn backchannel_times(&self) -> Vec<u64> {
        self.records
            .iter()
            .filter(|r| matches!(r.decision, Decision::Backchannel { .. }))
            .map(|r| r.t_ms)
            .collect()
    }

    pub fn take_turn_times(&self) -> Vec<u64> {
        self.records
            .iter()
            .filter(|r| {
                matches!(
                    r.decision,
                    Decision::Turn {
                        action: TurnAction::TakeTurn,
                        ..
                    }
                )
            })
            .map(|r| r.t_ms)
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn keys_sorted_and_floats_rounded() {
        let v = json!({"b": 0.1 + 0.2, "a": [1, 2.0000004], "c": {"z": -0.0000001, "y": "q"}});
        assert_eq!(canonical_string(&v), r#"{"a":[1,2.0],"b":0.3,"c":{"y":"q","z":0.0}}"#);
    }

    #[test]
    fn jsonl_round_trip() {
        let mut log = DecisionLog::default();
        log.push(
            100,
            "backchannel",
            Decision::Backchannel {
                form: "continuer1".into(),
                text: "un".into(),
                p_bc: 0.75,
            },
            &json!([1.0, 2.0]),
        );
        log.push(
            300,
            "turntaking",
            Decision::Turn {
                input: TurnInput::DeadlineExpired,
                from: FsttmState::FreeAfterUser,
                to: FsttmState::SystemTurn,
                action: TurnAction::TakeTurn,
                deadline_ms: None,
            },
            &json!(null),
        );
        let text = log.to_jsonl();
        let back = DecisionLog::parse(&text).unwrap();
        assert_eq!(back, log);
        assert_eq!(back.to_jsonl(), text);
        assert_eq!(log.take_turn_times(), vec![300]);
        assert_eq!(log.backchannel_times(), vec![100]);
    }

    #[test]
    fn digest_is_stable() {
        assert_eq!(digest(&json!({"a":1,"b":2})), digest(&json!({"b":2,"a":1})));
        assert_eq!(digest(&json!(1)).len(), 16);
    }
}
