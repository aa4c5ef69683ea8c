//! Scoring a decision log against the gold annotations of its corpus.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::harness::log::{Decision, DecisionLog};
use crate::timeline::{DialogueEvent, Payload};

pub const DEFAULT_TOLERANCE_MS: u64 = 500;
pub const DEFAULT_CUTIN_WINDOW_MS: u64 = 1000;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchCounts {
    pub matched: usize,
    pub triggers: usize,
    pub gold: usize,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

impl MatchCounts {
    pub fn precision(&self) -> f64 {
        ratio(self.matched, self.triggers)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.matched, self.gold)
    }

    pub fn f1(&self) -> f64 {
        let (p, r) = (self.precision(), self.recall());
        if p + r == 0.0 {
            0.0
        } else {
            2.0 * p * r / (p + r)
        }
    }
}

/// One-to-one matching of triggers to gold times, closest pairs first.
/// Pairs further apart than `tolerance_ms` never match.
pub fn match_backchannels(triggers: &[u64], gold: &[u64], tolerance_ms: u64) -> MatchCounts {
    let mut pairs: Vec<(u64, usize, usize)> = Vec::new();
    for (i, &t) in triggers.iter().enumerate() {
        for (j, &g) in gold.iter().enumerate() {
            let d = t.abs_diff(g);
            if d <= tolerance_ms {
                pairs.push((d, i, j));
            }
        }
    }
    pairs.sort_unstable();
    let mut used_t = vec![false; triggers.len()];
    let mut used_g = vec![false; gold.len()];
    let mut matched = 0;
    for (_, i, j) in pairs {
        if !used_t[i] && !used_g[j] {
            used_t[i] = true;
            used_g[j] = true;
            matched += 1;
        }
    }
    MatchCounts {
        matched,
        triggers: triggers.len(),
        gold: gold.len(),
    }
}

pub fn eval_backchannel(log: &DecisionLog, events: &[DialogueEvent], tolerance_ms: u64) -> MatchCounts {
    let gold: Vec<u64> = events
        .iter()
        .filter(|e| matches!(e.payload, Payload::GoldBackchannel { .. }))
        .map(|e| e.t_ms)
        .collect();
    match_backchannels(&log.backchannel_times(), &gold, tolerance_ms)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct TurnCounts {
    pub taken_points: usize,
    pub taken_hits: usize,
    pub not_taken_points: usize,
    pub cutins: usize,
    pub take_turns: usize,
    pub latency_sum_ms: u64,
}

impl TurnCounts {
    pub fn accuracy(&self) -> f64 {
        ratio(self.taken_hits, self.taken_points)
    }

    pub fn false_cutin_rate(&self) -> f64 {
        ratio(self.cutins, self.not_taken_points)
    }

    pub fn mean_latency_ms(&self) -> f64 {
        if self.take_turns == 0 {
            0.0
        } else {
            self.latency_sum_ms as f64 / self.take_turns as f64
        }
    }

    fn add(&mut self, o: &TurnCounts) {
        self.taken_points += o.taken_points;
        self.taken_hits += o.taken_hits;
        self.not_taken_points += o.not_taken_points;
        self.cutins += o.cutins;
        self.take_turns += o.take_turns;
        self.latency_sum_ms += o.latency_sum_ms;
    }
}

/// Turn-taking scores at gold turn-end points.
///
/// A gold point at time g owns the interval up to the next user VadOn after
/// g. At a taken point the system should take the turn inside it. At a
/// not-taken point a take inside it followed by user speech within
/// `cutin_window_ms` is a false cut-in. Latency is measured from the last
/// user VadOff before each take.
pub fn eval_turn(log: &DecisionLog, events: &[DialogueEvent], cutin_window_ms: u64) -> TurnCounts {
    let takes = log.take_turn_times();
    let vad_on: Vec<u64> = events
        .iter()
        .filter(|e| e.payload == Payload::VadOn)
        .map(|e| e.t_ms)
        .collect();
    let vad_off: Vec<u64> = events
        .iter()
        .filter(|e| e.payload == Payload::VadOff)
        .map(|e| e.t_ms)
        .collect();
    let next_on = |t: u64| vad_on.iter().copied().find(|&v| v > t);

    let mut c = TurnCounts::default();
    for e in events {
        let Payload::GoldTurn { taken, .. } = e.payload else {
            continue;
        };
        let until = next_on(e.t_ms).unwrap_or(u64::MAX);
        let take = takes.iter().copied().find(|&k| k >= e.t_ms && k < until);
        if taken {
            c.taken_points += 1;
            if take.is_some() {
                c.taken_hits += 1;
            }
        } else {
            c.not_taken_points += 1;
            if let Some(k) = take {
                if next_on(k).is_some_and(|v| v - k <= cutin_window_ms) {
                    c.cutins += 1;
                }
            }
        }
    }
    for &k in &takes {
        if let Some(off) = vad_off.iter().copied().rfind(|&o| o <= k) {
            c.take_turns += 1;
            c.latency_sum_ms += k - off;
        }
    }
    c
}

/// Counts accumulated over one or more sessions.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricsTally {
    pub backchannel: MatchCounts,
    pub turn: TurnCounts,
    pub responses: BTreeMap<String, usize>,
    pub questions: usize,
    pub duration_ms: u64,
    pub sessions: usize,
}

impl MetricsTally {
    pub fn add_session(
        &mut self,
        log: &DecisionLog,
        events: &[DialogueEvent],
        tolerance_ms: u64,
        cutin_window_ms: u64,
    ) {
        let bc = eval_backchannel(log, events, tolerance_ms);
        self.backchannel.matched += bc.matched;
        self.backchannel.triggers += bc.triggers;
        self.backchannel.gold += bc.gold;
        self.turn.add(&eval_turn(log, events, cutin_window_ms));
        for r in &log.records {
            match &r.decision {
                Decision::Response { kind, .. } => *self.responses.entry(kind.clone()).or_default() += 1,
                Decision::Question { .. } => self.questions += 1,
                _ => {}
            }
        }
        let last_event = events.last().map_or(0, |e| e.t_ms);
        let last_log = log.records.last().map_or(0, |r| r.t_ms);
        self.duration_ms += last_event.max(last_log);
        self.sessions += 1;
    }

    pub fn report(&self, tolerance_ms: u64, cutin_window_ms: u64) -> MetricsReport {
        MetricsReport {
            backchannel: BackchannelReport {
                precision: self.backchannel.precision(),
                recall: self.backchannel.recall(),
                f1: self.backchannel.f1(),
                tolerance_ms,
                counts: self.backchannel,
            },
            turn: TurnReport {
                accuracy: self.turn.accuracy(),
                false_cutin_rate: self.turn.false_cutin_rate(),
                mean_latency_ms: self.turn.mean_latency_ms(),
                cutin_window_ms,
                counts: self.turn,
            },
            responses: self.responses.clone(),
            questions: self.questions,
            sessions: self.sessions,
            duration_ms: self.duration_ms,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackchannelReport {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub tolerance_ms: u64,
    pub counts: MatchCounts,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TurnReport {
    pub accuracy: f64,
    pub false_cutin_rate: f64,
    pub mean_latency_ms: f64,
    pub cutin_window_ms: u64,
    pub counts: TurnCounts,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub backchannel: BackchannelReport,
    pub turn: TurnReport,
    pub responses: BTreeMap<String, usize>,
    pub questions: usize,
    pub sessions: usize,
    pub duration_ms: u64,
}

impl MetricsReport {
    /// Canonical pretty-free JSON, stable across runs.
    pub fn to_canonical_json(&self) -> String {
        let v = serde_json::to_value(self).expect("report serializes");
        crate::harness::log::canonical_string(&v)
    }
}

pub fn evaluate(log: &DecisionLog, events: &[DialogueEvent]) -> MetricsReport {
    let mut t = MetricsTally::default();
    t.add_session(log, events, DEFAULT_TOLERANCE_MS, DEFAULT_CUTIN_WINDOW_MS);
    t.report(DEFAULT_TOLERANCE_MS, DEFAULT_CUTIN_WINDOW_MS)
}
