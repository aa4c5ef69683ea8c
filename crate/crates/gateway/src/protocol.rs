//! Newline-delimited JSON messages exchanged with live clients.

use serde::{Deserialize, Serialize};

use reflex_core::harness::log::{Decision, LogRecord};
use reflex_core::Task;

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case", deny_unknown_fields)]
pub enum ClientMessage {
    Start {
        #[serde(default, with = "task_name")]
        task: Task,
    },
    Vad {
        on: bool,
        t: u64,
    },
    Word {
        surface: String,
        #[serde(default)]
        pos: Option<String>,
        t: u64,
        t_end: u64,
    },
    Behavior {
        kind: String,
        t: u64,
    },
    /// Optional precomputed prosody for clients that have audio.
    Prosody {
        f0: f64,
        power: f64,
        t: u64,
    },
    End,
}

impl ClientMessage {
    pub fn t(&self) -> Option<u64> {
        match self {
            ClientMessage::Vad { t, .. }
            | ClientMessage::Word { t, .. }
            | ClientMessage::Behavior { t, .. }
            | ClientMessage::Prosody { t, .. } => Some(*t),
            ClientMessage::Start { .. } | ClientMessage::End => None,
        }
    }
}

mod task_name {
    use serde::{Deserialize, Deserializer};

    use reflex_core::Task;

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Task, D::Error> {
        let s = String::deserialize(d)?;
        Task::parse(&s).ok_or_else(|| serde::de::Error::custom(format!("unknown task {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "ev", rename_all = "snake_case")]
pub enum ServerEvent {
    Backchannel { form: String, text: String, t: u64 },
    Response { kind: String, text: String, t: u64 },
    TurnState { state: String, t: u64 },
    Question { text: String, t: u64 },
    Engagement { score: f64, t: u64 },
    Error { code: String, msg: String },
    Warning { code: String, msg: String, t: u64 },
}

impl ServerEvent {
    pub fn error(code: &str, msg: impl Into<String>) -> Self {
        ServerEvent::Error {
            code: code.into(),
            msg: msg.into(),
        }
    }

    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("server events serialize")
    }

    /// Client-facing view of an engine decision, if it has one.
    pub fn from_record(r: &LogRecord) -> Option<Self> {
        let t = r.t_ms;
        Some(match &r.decision {
            Decision::Backchannel { form, text, .. } => ServerEvent::Backchannel {
                form: form.clone(),
                text: text.clone(),
                t,
            },
            Decision::Response { kind, text, .. } => ServerEvent::Response {
                kind: kind.clone(),
                text: text.clone(),
                t,
            },
            Decision::Turn { from, to, .. } if from != to => ServerEvent::TurnState {
                state: to.to_string(),
                t,
            },
            Decision::Question { text, .. } => ServerEvent::Question { text: text.clone(), t },
            Decision::Engagement { score, .. } => ServerEvent::Engagement { score: *score, t },
            Decision::Error { code, msg } => ServerEvent::Error {
                code: code.clone(),
                msg: msg.clone(),
            },
            _ => return None,
        })
    }
}

pub fn parse_client_line(line: &str) -> Result<ClientMessage, String> {
    serde_json::from_str(line).map_err(|e| e.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_every_op() {
        let lines = [
            r#"{"op":"start","task":"interview"}"#,
            r#"{"op":"start"}"#,
            r#"{"op":"vad","on":true,"t":0}"#,
            r#"{"op":"word","surface":"kyoto","pos":"PROPN","t":10,"t_end":300}"#,
            r#"{"op":"word","surface":"kyoto","t":10,"t_end":300}"#,
            r#"{"op":"behavior","kind":"nod","t":20}"#,
            r#"{"op":"prosody","f0":120.0,"power":-20.0,"t":30}"#,
            r#"{"op":"end"}"#,
        ];
        for l in lines {
            parse_client_line(l).unwrap_or_else(|e| panic!("{l}: {e}"));
        }
        assert_eq!(
            parse_client_line(lines[0]).unwrap(),
            ClientMessage::Start { task: Task::Interview }
        );
    }

    #[test]
    fn rejects_bad_lines() {
        for l in [
            "not json",
            r#"{"op":"dance"}"#,
            r#"{"op":"vad","t":5}"#,
            r#"{"op":"start","task":"chat"}"#,
            r#"{"op":"vad","on":true,"t":-1}"#,
        ] {
            assert!(parse_client_line(l).is_err(), "{l}");
        }
    }

    #[test]
    fn server_lines_are_tagged() {
        let l = ServerEvent::Question {
            text: "Why?".into(),
            t: 0,
        }
        .to_line();
        assert_eq!(l, r#"{"ev":"question","text":"Why?","t":0}"#);
    }
}
