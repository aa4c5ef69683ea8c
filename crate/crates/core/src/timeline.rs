//! Session clock, event validation, and IPU segmentation.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default silence needed to separate two inter-pausal units.
pub const DEFAULT_IPU_GAP_MS: u64 = 200;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TimelineError {
    #[error("event at {t_ms} ms arrived after clock reached {now_ms} ms")]
    OutOfOrderEvent { t_ms: u64, now_ms: u64 },
    #[error("malformed payload at {t_ms} ms: {reason}")]
    MalformedPayload { t_ms: u64, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BehaviorKind {
    Laugh,
    Nod,
    GazeContact,
    UserBackchannel,
}

impl BehaviorKind {
    pub const ALL: [BehaviorKind; 4] = [
        BehaviorKind::Laugh,
        BehaviorKind::Nod,
        BehaviorKind::GazeContact,
        BehaviorKind::UserBackchannel,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            BehaviorKind::Laugh => "laugh",
            BehaviorKind::Nod => "nod",
            BehaviorKind::GazeContact => "gaze_contact",
            BehaviorKind::UserBackchannel => "user_backchannel",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.as_str() == s)
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

/// A recognized word with its upstream part-of-speech tag.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Word {
    pub surface: String,
    pub pos: String,
    pub end_t_ms: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    VadOn,
    VadOff,
    Word(Word),
    /// `f0_hz == 0` marks an unvoiced frame.
    Prosody {
        f0_hz: f64,
        power_db: f64,
    },
    Behavior(BehaviorKind),
    GoldBackchannel {
        form: String,
    },
    GoldTurn {
        trp: bool,
        taken: bool,
    },
}

impl Payload {
    pub fn kind_name(&self) -> &'static str {
        match self {
            Payload::VadOn => "vad_on",
            Payload::VadOff => "vad_off",
            Payload::Word(_) => "word",
            Payload::Prosody { .. } => "prosody",
            Payload::Behavior(_) => "behavior",
            Payload::GoldBackchannel { .. } => "gold_bc",
            Payload::GoldTurn { .. } => "gold_turn",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DialogueEvent {
    pub t_ms: u64,
    pub payload: Payload,
}

impl DialogueEvent {
    pub fn new(t_ms: u64, payload: Payload) -> Self {
        Self { t_ms, payload }
    }

    pub fn word(t_ms: u64, surface: &str, pos: &str, end_t_ms: u64) -> Self {
        Self::new(
            t_ms,
            Payload::Word(Word {
                surface: surface.to_string(),
                pos: pos.to_string(),
                end_t_ms,
            }),
        )
    }

    pub fn validate(&self) -> Result<(), TimelineError> {
        let bad = |reason: &str| {
            Err(TimelineError::MalformedPayload {
                t_ms: self.t_ms,
                reason: reason.to_string(),
            })
        };
        match &self.payload {
            Payload::Word(w) => {
                if w.surface.is_empty() {
                    return bad("empty word surface");
                }
                if w.end_t_ms < self.t_ms {
                    return bad("word ends before it starts");
                }
            }
            Payload::Prosody { f0_hz, power_db } => {
                if !f0_hz.is_finite() || *f0_hz < 0.0 {
                    return bad("f0 must be finite and non-negative");
                }
                if !power_db.is_finite() {
                    return bad("power must be finite");
                }
            }
            Payload::GoldBackchannel { form } if form.is_empty() => {
                return bad("empty backchannel form");
            }
            _ => {}
        }
        Ok(())
    }
}

/// Inter-pausal unit: a stretch of user speech bounded by silences of at
/// least the configured gap.
#[derive(Debug, Clone, PartialEq)]
pub struct Ipu {
    pub start_ms: u64,
    pub end_ms: u64,
    pub tokens: Vec<Word>,
    /// Set once the trailing silence reaches the gap threshold.
    pub closed: bool,
    /// VAD is currently on inside this unit.
    pub in_speech: bool,
}

impl Ipu {
    pub fn duration_ms(&self) -> u64 {
        self.end_ms - self.start_ms
    }
}

/// Append-only event log with incrementally maintained IPUs.
#[derive(Debug, Clone)]
pub struct SessionTimeline {
    events: Vec<DialogueEvent>,
    ipus: Vec<Ipu>,
    now_ms: u64,
    ipu_gap_ms: u64,
    vad_on: bool,
    last_vad_off: Option<u64>,
}

impl Default for SessionTimeline {
    fn default() -> Self {
        Self::new(DEFAULT_IPU_GAP_MS)
    }
}

impl SessionTimeline {
    pub fn new(ipu_gap_ms: u64) -> Self {
        Self {
            events: Vec::new(),
            ipus: Vec::new(),
            now_ms: 0,
            ipu_gap_ms,
            vad_on: false,
            last_vad_off: None,
        }
    }

    pub fn events(&self) -> &[DialogueEvent] {
        &self.events
    }

    pub fn ipus(&self) -> &[Ipu] {
        &self.ipus
    }

    pub fn now_ms(&self) -> u64 {
        self.now_ms
    }

    pub fn ipu_gap_ms(&self) -> u64 {
        self.ipu_gap_ms
    }

    pub fn vad_on(&self) -> bool {
        self.vad_on
    }

    pub fn closed_ipus(&self) -> impl Iterator<Item = &Ipu> {
        self.ipus.iter().filter(|u| u.closed)
    }

    /// The unit currently being spoken or awaiting closure, if any.
    pub fn current_ipu(&self) -> Option<&Ipu> {
        self.ipus.last().filter(|u| !u.closed)
    }

    pub fn ingest_event(&mut self, e: DialogueEvent) -> Result<(), TimelineError> {
        if e.t_ms < self.now_ms {
            return Err(TimelineError::OutOfOrderEvent {
                t_ms: e.t_ms,
                now_ms: self.now_ms,
            });
        }
        e.validate()?;
        self.advance_to(e.t_ms)?;
        let t = e.t_ms;
        match &e.payload {
            Payload::VadOn if !self.vad_on => {
                self.vad_on = true;
                match self.ipus.last_mut() {
                    Some(last) if !last.closed && t < last.end_ms + self.ipu_gap_ms => {
                        last.in_speech = true;
                        last.end_ms = t;
                    }
                    _ => self.ipus.push(Ipu {
                        start_ms: t,
                        end_ms: t,
                        tokens: Vec::new(),
                        closed: false,
                        in_speech: true,
                    }),
                }
            }
            Payload::VadOff if self.vad_on => {
                self.vad_on = false;
                self.last_vad_off = Some(t);
                if let Some(last) = self.ipus.last_mut() {
                    last.in_speech = false;
                    last.end_ms = t;
                    if last.start_ms == t && last.tokens.is_empty() {
                        self.ipus.pop();
                    }
                }
            }
            Payload::Word(w) => {
                if let Some(last) = self.ipus.last_mut() {
                    if !last.closed && t >= last.start_ms && t <= last.end_ms {
                        last.tokens.push(w.clone());
                    }
                }
            }
            _ => {}
        }
        self.events.push(e);
        Ok(())
    }

    /// Moves the clock forward without an event, closing units whose
    /// trailing silence has reached the gap.
    pub fn advance_to(&mut self, t_ms: u64) -> Result<(), TimelineError> {
        if t_ms < self.now_ms {
            return Err(TimelineError::OutOfOrderEvent {
                t_ms,
                now_ms: self.now_ms,
            });
        }
        self.now_ms = t_ms;
        if let Some(last) = self.ipus.last_mut() {
            if last.in_speech {
                last.end_ms = t_ms;
            } else if !last.closed && t_ms >= last.end_ms + self.ipu_gap_ms {
                last.closed = true;
            }
        }
        Ok(())
    }

    /// Milliseconds since the last VadOff; zero while VAD is on. Before any
    /// speech the session start counts as the last silence onset.
    pub fn current_silence_ms(&self, now_ms: u64) -> u64 {
        if self.vad_on {
            return 0;
        }
        now_ms.saturating_sub(self.last_vad_off.unwrap_or(0))
    }

    pub fn last_vad_off(&self) -> Option<u64> {
        self.last_vad_off
    }
}

/// Batch segmentation of a time-ordered event list. Units still open at the
/// last event are reported with `closed == false`.
pub fn segment_ipus(events: &[DialogueEvent], ipu_gap_ms: u64) -> Vec<Ipu> {
    let horizon = events.last().map_or(0, |e| e.t_ms);

    struct Span {
        start: u64,
        end: Option<u64>,
        words: Vec<Word>,
    }

    // Raw voice spans with the words heard while each was open (or at the
    // exact millisecond it ended).
    let mut spans: Vec<Span> = Vec::new();
    let mut open = false;
    for e in events {
        match &e.payload {
            Payload::VadOn if !open => {
                open = true;
                spans.push(Span {
                    start: e.t_ms,
                    end: None,
                    words: Vec::new(),
                });
            }
            Payload::VadOff if open => {
                open = false;
                let n = spans.len();
                let merges =
                    n >= 2 && matches!(spans[n - 2].end, Some(prev_end) if spans[n - 1].start < prev_end + ipu_gap_ms);
                let span = &mut spans[n - 1];
                span.end = Some(e.t_ms);
                if span.start == e.t_ms && span.words.is_empty() && !merges {
                    spans.pop();
                }
            }
            Payload::Word(w) => {
                if let Some(span) = spans.last_mut() {
                    if span.end.is_none() || span.end == Some(e.t_ms) {
                        span.words.push(w.clone());
                    }
                }
            }
            _ => {}
        }
    }

    let mut ipus: Vec<Ipu> = Vec::new();
    for span in spans {
        let end_ms = span.end.unwrap_or(horizon);
        let in_speech = span.end.is_none();
        if let Some(prev) = ipus.last_mut() {
            if span.start < prev.end_ms + ipu_gap_ms {
                prev.end_ms = end_ms;
                prev.in_speech = in_speech;
                prev.tokens.extend(span.words);
                continue;
            }
        }
        ipus.push(Ipu {
            start_ms: span.start,
            end_ms,
            tokens: span.words,
            closed: false,
            in_speech,
        });
    }
    for u in &mut ipus {
        u.closed = !u.in_speech && horizon >= u.end_ms + ipu_gap_ms;
    }
    ipus
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ev(t: u64, p: Payload) -> DialogueEvent {
        DialogueEvent::new(t, p)
    }

    #[test]
    fn first_vad_on_has_no_closed_ipu() {
        let mut tl = SessionTimeline::default();
        tl.ingest_event(ev(0, Payload::VadOn)).unwrap();
        assert_eq!(tl.events().len(), 1);
        assert_eq!(tl.closed_ipus().count(), 0);
    }

    #[test]
    fn hello_closes_after_gap() {
        let mut tl = SessionTimeline::new(200);
        tl.ingest_event(ev(0, Payload::VadOn)).unwrap();
        tl.ingest_event(DialogueEvent::word(0, "hello", "NOUN", 400)).unwrap();
        tl.ingest_event(ev(400, Payload::VadOff)).unwrap();
        assert_eq!(tl.closed_ipus().count(), 0);
        tl.advance_to(700).unwrap();
        let closed: Vec<_> = tl.closed_ipus().collect();
        assert_eq!(closed.len(), 1);
        assert_eq!((closed[0].start_ms, closed[0].end_ms), (0, 400));
        assert_eq!(closed[0].tokens[0].surface, "hello");
    }

    #[test]
    fn late_event_rejected() {
        let mut tl = SessionTimeline::default();
        tl.ingest_event(ev(200, Payload::VadOn)).unwrap();
        let err = tl.ingest_event(ev(100, Payload::VadOff)).unwrap_err();
        assert_eq!(err, TimelineError::OutOfOrderEvent { t_ms: 100, now_ms: 200 });
    }

    #[test]
    fn malformed_payloads_rejected() {
        let mut tl = SessionTimeline::default();
        let bad_word = DialogueEvent::word(100, "x", "NOUN", 50);
        assert!(matches!(
            tl.ingest_event(bad_word),
            Err(TimelineError::MalformedPayload { .. })
        ));
        let bad_f0 = ev(
            100,
            Payload::Prosody {
                f0_hz: -1.0,
                power_db: 0.0,
            },
        );
        assert!(matches!(
            tl.ingest_event(bad_f0),
            Err(TimelineError::MalformedPayload { .. })
        ));
    }

    fn two_bursts() -> Vec<DialogueEvent> {
        vec![
            ev(0, Payload::VadOn),
            ev(400, Payload::VadOff),
            ev(700, Payload::VadOn),
            ev(900, Payload::VadOff),
        ]
    }

    #[test]
    fn segment_empty() {
        assert!(segment_ipus(&[], 200).is_empty());
    }

    #[test]
    fn gap_300_splits_at_200() {
        let ipus = segment_ipus(&two_bursts(), 200);
        assert_eq!(ipus.len(), 2);
        assert_eq!((ipus[0].start_ms, ipus[0].end_ms), (0, 400));
        assert!(ipus[0].closed);
        assert_eq!((ipus[1].start_ms, ipus[1].end_ms), (700, 900));
    }

    #[test]
    fn gap_300_merges_at_500() {
        let ipus = segment_ipus(&two_bursts(), 500);
        assert_eq!(ipus.len(), 1);
        assert_eq!((ipus[0].start_ms, ipus[0].end_ms), (0, 900));
    }

    #[test]
    fn silence_accounting() {
        let mut tl = SessionTimeline::default();
        assert_eq!(tl.current_silence_ms(350), 350);
        tl.ingest_event(ev(500, Payload::VadOn)).unwrap();
        assert_eq!(tl.current_silence_ms(800), 0);
        tl.ingest_event(ev(1000, Payload::VadOff)).unwrap();
        assert_eq!(tl.current_silence_ms(1600), 600);
    }
}
