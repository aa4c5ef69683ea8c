//! Safety properties checked over a finished decision log.

use std::fmt;

use crate::harness::log::{Decision, DecisionLog};
use crate::listener::ResponseKind;
use crate::timeline::{DialogueEvent, Payload};
use crate::turntaking::TurnAction;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    /// Two backchannels closer than the refractory period.
    Refractory { t_ms: u64, previous_ms: u64 },
    /// Backchannel while the system was speaking.
    DuringSystemSpeech { t_ms: u64 },
    /// TakeTurn while the user's VAD was on.
    TakeDuringSpeech { t_ms: u64 },
    /// Two consecutive responses of the same non-generic kind.
    RepeatedKind { t_ms: u64, kind: String },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::Refractory { t_ms, previous_ms } => {
                write!(
                    f,
                    "backchannel at {t_ms} ms only {} ms after {previous_ms} ms",
                    t_ms - previous_ms
                )
            }
            Violation::DuringSystemSpeech { t_ms } => write!(f, "backchannel at {t_ms} ms during system speech"),
            Violation::TakeDuringSpeech { t_ms } => write!(f, "turn taken at {t_ms} ms while the user was speaking"),
            Violation::RepeatedKind { t_ms, kind } => write!(f, "response at {t_ms} ms repeats kind {kind}"),
        }
    }
}

/// VAD state after all events at or before `t`.
fn vad_on_at(events: &[DialogueEvent], t: u64) -> bool {
    let mut on = false;
    for e in events.iter().take_while(|e| e.t_ms <= t) {
        match e.payload {
            Payload::VadOn => on = true,
            Payload::VadOff => on = false,
            _ => {}
        }
    }
    on
}

pub fn scan(log: &DecisionLog, events: &[DialogueEvent], refractory_ms: u64) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut last_bc: Option<u64> = None;
    let mut speaking = false;
    let mut previous_kind: Option<String> = None;
    for r in &log.records {
        match &r.decision {
            Decision::System { speaking: s } => speaking = *s,
            Decision::Backchannel { .. } => {
                if let Some(p) = last_bc {
                    if r.t_ms < p + refractory_ms {
                        out.push(Violation::Refractory {
                            t_ms: r.t_ms,
                            previous_ms: p,
                        });
                    }
                }
                if speaking {
                    out.push(Violation::DuringSystemSpeech { t_ms: r.t_ms });
                }
                last_bc = Some(r.t_ms);
            }
            Decision::Turn {
                action: TurnAction::TakeTurn,
                ..
            } if vad_on_at(events, r.t_ms) => out.push(Violation::TakeDuringSpeech { t_ms: r.t_ms }),
            Decision::Response { kind, .. } => {
                if previous_kind.as_deref() == Some(kind.as_str()) && kind != ResponseKind::Generic.as_str() {
                    out.push(Violation::RepeatedKind {
                        t_ms: r.t_ms,
                        kind: kind.clone(),
                    });
                }
                previous_kind = Some(kind.clone());
            }
            _ => {}
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::log::LogRecord;

    fn rec(t: u64, d: Decision) -> LogRecord {
        LogRecord {
            t_ms: t,
            module: "test".into(),
            decision: d,
            inputs: String::new(),
        }
    }

    fn bc() -> Decision {
        Decision::Backchannel {
            form: "un".into(),
            text: "un".into(),
            p_bc: 0.9,
        }
    }

    fn response(kind: &str) -> Decision {
        Decision::Response {
            kind: kind.into(),
            text: "x".into(),
            template: "t".into(),
            focus: None,
            polarity: None,
        }
    }

    #[test]
    fn flags_each_kind_of_violation() {
        let log = DecisionLog {
            records: vec![
                rec(1000, bc()),
                rec(1400, bc()),
                rec(3000, Decision::System { speaking: true }),
                rec(3500, bc()),
                rec(4000, response("generic")),
                rec(5000, response("generic")),
                rec(6000, response("assessment")),
                rec(7000, response("assessment")),
            ],
        };
        let v = scan(&log, &[], 1500);
        assert_eq!(
            v,
            vec![
                Violation::Refractory {
                    t_ms: 1400,
                    previous_ms: 1000
                },
                Violation::DuringSystemSpeech { t_ms: 3500 },
                Violation::RepeatedKind {
                    t_ms: 7000,
                    kind: "assessment".into()
                },
            ]
        );
    }

    #[test]
    fn vad_state_includes_events_at_the_same_time() {
        let events = vec![
            DialogueEvent::new(0, Payload::VadOn),
            DialogueEvent::new(500, Payload::VadOff),
            DialogueEvent::new(900, Payload::VadOn),
        ];
        assert!(vad_on_at(&events, 100));
        assert!(!vad_on_at(&events, 500));
        assert!(vad_on_at(&events, 900));
    }
}
