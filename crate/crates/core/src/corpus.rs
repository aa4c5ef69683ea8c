//! JSON-lines corpus files: one dialogue event per line.

use std::io::{BufRead, Write};
use std::path::Path;

use serde_json::{json, Map, Value};
use thiserror::Error;

use crate::timeline::{BehaviorKind, DialogueEvent, Payload, Word};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CorpusError {
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("{0}")]
    Io(String),
}

impl CorpusError {
    pub fn line(&self) -> Option<usize> {
        match self {
            CorpusError::Parse { line, .. } => Some(*line),
            CorpusError::Io(_) => None,
        }
    }
}

fn field<'a>(obj: &'a Map<String, Value>, key: &str) -> Result<&'a Value, String> {
    obj.get(key).ok_or_else(|| format!("missing key {key:?}"))
}

fn as_u64(obj: &Map<String, Value>, key: &str) -> Result<u64, String> {
    field(obj, key)?
        .as_u64()
        .ok_or_else(|| format!("{key:?} must be a non-negative integer"))
}

fn as_f64(obj: &Map<String, Value>, key: &str) -> Result<f64, String> {
    field(obj, key)?
        .as_f64()
        .ok_or_else(|| format!("{key:?} must be a number"))
}

fn as_str<'a>(obj: &'a Map<String, Value>, key: &str) -> Result<&'a str, String> {
    field(obj, key)?
        .as_str()
        .ok_or_else(|| format!("{key:?} must be a string"))
}

fn as_bool(obj: &Map<String, Value>, key: &str) -> Result<bool, String> {
    field(obj, key)?
        .as_bool()
        .ok_or_else(|| format!("{key:?} must be a boolean"))
}

/// Parses one corpus line. Unknown keys are ignored.
pub fn parse_line(text: &str) -> Result<DialogueEvent, String> {
    let v: Value = serde_json::from_str(text).map_err(|e| e.to_string())?;
    let obj = v.as_object().ok_or("line is not a JSON object")?;
    let t_ms = as_u64(obj, "t")?;
    let payload = match as_str(obj, "type")? {
        "vad_on" => Payload::VadOn,
        "vad_off" => Payload::VadOff,
        "word" => Payload::Word(Word {
            surface: as_str(obj, "surface")?.to_string(),
            pos: as_str(obj, "pos")?.to_string(),
            end_t_ms: as_u64(obj, "t_end")?,
        }),
        "prosody" => Payload::Prosody {
            f0_hz: as_f64(obj, "f0")?,
            power_db: as_f64(obj, "power")?,
        },
        "behavior" => {
            let k = as_str(obj, "kind")?;
            Payload::Behavior(BehaviorKind::parse(k).ok_or_else(|| format!("unknown behavior kind {k:?}"))?)
        }
        "gold_bc" => Payload::GoldBackchannel {
            form: as_str(obj, "form")?.to_string(),
        },
        "gold_turn" => Payload::GoldTurn {
            trp: as_bool(obj, "trp")?,
            taken: as_bool(obj, "taken")?,
        },
        other => return Err(format!("unknown event type {other:?}")),
    };
    let e = DialogueEvent::new(t_ms, payload);
    e.validate().map_err(|err| err.to_string())?;
    Ok(e)
}

/// Parses a whole corpus. Blank lines are skipped; timestamps must not
/// decrease. Line numbers in errors are 1-based.
pub fn parse_corpus(text: &str) -> Result<Vec<DialogueEvent>, CorpusError> {
    let mut out: Vec<DialogueEvent> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let e = parse_line(line).map_err(|reason| CorpusError::Parse { line: i + 1, reason })?;
        if let Some(prev) = out.last() {
            if e.t_ms < prev.t_ms {
                return Err(CorpusError::Parse {
                    line: i + 1,
                    reason: format!("time {} precedes previous event at {}", e.t_ms, prev.t_ms),
                });
            }
        }
        out.push(e);
    }
    Ok(out)
}

pub fn read_corpus(path: &Path) -> Result<Vec<DialogueEvent>, CorpusError> {
    let text = std::fs::read_to_string(path).map_err(|e| CorpusError::Io(format!("{}: {e}", path.display())))?;
    parse_corpus(&text)
}

pub fn event_to_json(e: &DialogueEvent) -> Value {
    let mut v = json!({ "t": e.t_ms, "type": e.payload.kind_name() });
    let obj = v.as_object_mut().expect("object");
    match &e.payload {
        Payload::VadOn | Payload::VadOff => {}
        Payload::Word(w) => {
            obj.insert("surface".into(), json!(w.surface));
            obj.insert("pos".into(), json!(w.pos));
            obj.insert("t_end".into(), json!(w.end_t_ms));
        }
        Payload::Prosody { f0_hz, power_db } => {
            obj.insert("f0".into(), json!(f0_hz));
            obj.insert("power".into(), json!(power_db));
        }
        Payload::Behavior(k) => {
            obj.insert("kind".into(), json!(k.as_str()));
        }
        Payload::GoldBackchannel { form } => {
            obj.insert("form".into(), json!(form));
        }
        Payload::GoldTurn { trp, taken } => {
            obj.insert("trp".into(), json!(trp));
            obj.insert("taken".into(), json!(taken));
        }
    }
    v
}

pub fn event_line(e: &DialogueEvent) -> String {
    event_to_json(e).to_string()
}

pub fn write_corpus<W: Write>(mut w: W, events: &[DialogueEvent]) -> std::io::Result<()> {
    for e in events {
        writeln!(w, "{}", event_line(e))?;
    }
    w.flush()
}

/// Streaming reader for large corpora.
pub fn for_each_event<R: BufRead>(
    reader: R,
    mut f: impl FnMut(DialogueEvent) -> Result<(), CorpusError>,
) -> Result<(), CorpusError> {
    let mut last = 0;
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| CorpusError::Io(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let e = parse_line(&line).map_err(|reason| CorpusError::Parse { line: i + 1, reason })?;
        if e.t_ms < last {
            return Err(CorpusError::Parse {
                line: i + 1,
                reason: format!("time {} precedes previous event at {last}", e.t_ms),
            });
        }
        last = e.t_ms;
        f(e)?;
    }
    Ok(())
}
